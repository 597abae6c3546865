#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace distgate {

using Dims = std::array<int, 3>;
using Index3 = std::array<int, 3>;
using Vec3 = std::array<double, 3>;

/// Geometry of an anisotropic voxel grid. Voxel (x, y, z) sits at the physical
/// position origin + (x*sx, y*sy, z*sz), and the linear layout is x-fastest:
/// i = x + nx*(y + ny*z).
struct VolumeGrid {
  Dims dims{1, 1, 1};
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};

  /// Throws std::invalid_argument on non-positive dims or spacing.
  void validate() const;

  [[nodiscard]] std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
           static_cast<std::size_t>(dims[2]);
  }

  [[nodiscard]] std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(z));
  }
  [[nodiscard]] std::size_t index(const Index3& p) const { return index(p[0], p[1], p[2]); }

  [[nodiscard]] Index3 coords(std::size_t i) const {
    const auto nx = static_cast<std::size_t>(dims[0]);
    const auto ny = static_cast<std::size_t>(dims[1]);
    return {static_cast<int>(i % nx), static_cast<int>((i / nx) % ny), static_cast<int>(i / (nx * ny))};
  }

  [[nodiscard]] bool contains(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < dims[0] && y < dims[1] && z < dims[2];
  }

  [[nodiscard]] double voxel_volume_mm3() const { return spacing[0] * spacing[1] * spacing[2]; }

  [[nodiscard]] Vec3 physical(const Index3& p) const {
    return {origin[0] + p[0] * spacing[0], origin[1] + p[1] * spacing[1], origin[2] + p[2] * spacing[2]};
  }

  friend bool operator==(const VolumeGrid&, const VolumeGrid&) = default;
};

/// Dense voxel array on a VolumeGrid. Value type; operations return new volumes.
template <class T>
class Volume {
 public:
  using value_type = T;

  Volume() = default;
  explicit Volume(VolumeGrid grid, T fill = T{}) : grid_(grid) {
    grid_.validate();
    data_.assign(grid_.voxel_count(), fill);
  }
  Volume(VolumeGrid grid, std::vector<T> data) : grid_(grid), data_(std::move(data)) {
    grid_.validate();
    if (data_.size() != grid_.voxel_count()) {
      throw std::invalid_argument("volume data length " + std::to_string(data_.size()) +
                                  " does not match grid voxel count " + std::to_string(grid_.voxel_count()));
    }
  }

  [[nodiscard]] const VolumeGrid& grid() const { return grid_; }
  [[nodiscard]] const Dims& dims() const { return grid_.dims; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }

  [[nodiscard]] std::span<const T> data() const { return data_; }
  [[nodiscard]] std::span<T> data() { return data_; }
  [[nodiscard]] const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(int x, int y, int z) { return data_[grid_.index(x, y, z)]; }
  const T& at(int x, int y, int z) const { return data_[grid_.index(x, y, z)]; }

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  VolumeGrid grid_;
  std::vector<T> data_;
};

using ScalarVolume = Volume<float>;
using BinaryMask = Volume<std::uint8_t>;
using LabelVolume = Volume<std::uint32_t>;
using AnyVolume = std::variant<ScalarVolume, BinaryMask, LabelVolume>;

enum class DType { f32, u8, u32 };

std::string to_string(DType dtype);
DType parse_dtype(const std::string& name);

/// Number of instances K in a label volume. Throws if ids are not the
/// contiguous set {1..K}.
std::uint32_t validate_labels(const LabelVolume& labels);

/// Renumbers the non-zero ids of `labels` to {1..K} preserving their order.
LabelVolume compact_labels(const LabelVolume& labels);

// --- file I/O --------------------------------------------------------------
//
// A volume on disk is `<name>.json` (dims, spacing_mm, origin_mm, dtype) plus
// `<name>.raw` (little-endian payload, x-fastest). `path` may name either file
// or the shared stem.

AnyVolume load_volume(const std::filesystem::path& path);
ScalarVolume load_scalar_volume(const std::filesystem::path& path);
BinaryMask load_mask(const std::filesystem::path& path);
LabelVolume load_labels(const std::filesystem::path& path);

void save_volume(const ScalarVolume& volume, const std::filesystem::path& path);
void save_volume(const BinaryMask& volume, const std::filesystem::path& path);
void save_volume(const LabelVolume& volume, const std::filesystem::path& path);
void save_volume(const AnyVolume& volume, const std::filesystem::path& path);

/// `<stem>.json` / `<stem>.raw` for a user-supplied path.
std::filesystem::path header_path(const std::filesystem::path& path);
std::filesystem::path payload_path(const std::filesystem::path& path);

// --- geometry ----------------------------------------------------------------

/// Output dims for resampling `grid` to `target_spacing`: ceil(n*s/t) per axis.
Dims resampled_dims(const VolumeGrid& grid, const Vec3& target_spacing);

/// Trilinear resampling at voxel positions of the target grid; samples past
/// the last input voxel clamp to the edge.
ScalarVolume resample_trilinear(const ScalarVolume& volume, const Vec3& target_spacing);

/// Nearest-neighbour resampling for masks and labels.
template <class T>
Volume<T> resample_nearest(const Volume<T>& volume, const Vec3& target_spacing);

/// Window of `size` voxels starting at center - size/2, zero outside the
/// source. The output origin is shifted so physical positions are preserved.
template <class T>
Volume<T> crop_subvolume(const Volume<T>& volume, const Index3& center, const Dims& size);

inline constexpr double kMaxRotationDeg = 45.0;

/// Rotates every z-slice by `angle_deg` about the slice center (physical
/// coordinates), bilinear sampling, zero outside the source slice.
ScalarVolume rotate_xy(const ScalarVolume& volume, double angle_deg);

/// Nearest-neighbour variant of rotate_xy for masks and labels.
template <class T>
Volume<T> rotate_xy_nearest(const Volume<T>& volume, double angle_deg);

}  // namespace distgate
