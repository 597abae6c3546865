#include "distgate/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include <json.hpp>

namespace distgate {

namespace fs = std::filesystem;
using nlohmann::json;

void VolumeGrid::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 1) throw std::invalid_argument("volume dims must be >= 1");
    if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) {
      throw std::invalid_argument("volume spacing must be positive and finite");
    }
    if (!std::isfinite(origin[a])) throw std::invalid_argument("volume origin must be finite");
  }
}

std::string to_string(DType dtype) {
  switch (dtype) {
    case DType::f32: return "f32";
    case DType::u8: return "u8";
    case DType::u32: return "u32";
  }
  return "?";
}

DType parse_dtype(const std::string& name) {
  if (name == "f32") return DType::f32;
  if (name == "u8") return DType::u8;
  if (name == "u32") return DType::u32;
  throw std::invalid_argument("unknown dtype '" + name + "'");
}

std::uint32_t validate_labels(const LabelVolume& labels) {
  std::uint32_t max_id = 0;
  for (auto v : labels.data()) max_id = std::max(max_id, v);
  std::vector<bool> seen(static_cast<std::size_t>(max_id) + 1, false);
  for (auto v : labels.data()) seen[v] = true;
  for (std::uint32_t k = 1; k <= max_id; ++k) {
    if (!seen[k]) throw std::invalid_argument("label ids are not contiguous: id " + std::to_string(k) + " missing");
  }
  return max_id;
}

LabelVolume compact_labels(const LabelVolume& labels) {
  std::uint32_t max_id = 0;
  for (auto v : labels.data()) max_id = std::max(max_id, v);
  std::vector<std::uint32_t> remap(static_cast<std::size_t>(max_id) + 1, 0);
  for (auto v : labels.data()) remap[v] = 1;
  std::uint32_t next = 0;
  for (std::uint32_t k = 1; k <= max_id; ++k) remap[k] = remap[k] ? ++next : 0;
  remap[0] = 0;
  LabelVolume out(labels.grid());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = remap[labels[i]];
  return out;
}

// --- I/O -----------------------------------------------------------------------

namespace {

fs::path stem_of(const fs::path& path) {
  auto ext = path.extension();
  if (ext == ".json" || ext == ".raw") return fs::path(path).replace_extension();
  return path;
}

template <class T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) return DType::f32;
  else if constexpr (std::is_same_v<T, std::uint8_t>) return DType::u8;
  else return DType::u32;
}

std::size_t element_size(DType dtype) {
  switch (dtype) {
    case DType::f32: return 4;
    case DType::u8: return 1;
    case DType::u32: return 4;
  }
  return 0;
}

template <class T>
T from_little_endian(const unsigned char* bytes) {
  if constexpr (sizeof(T) == 1) {
    return static_cast<T>(bytes[0]);
  } else {
    std::uint32_t raw = 0;
    for (int b = 3; b >= 0; --b) raw = (raw << 8) | bytes[b];
    return std::bit_cast<T>(raw);
  }
}

template <class T>
void to_little_endian(T value, unsigned char* bytes) {
  if constexpr (sizeof(T) == 1) {
    bytes[0] = static_cast<unsigned char>(value);
  } else {
    auto raw = std::bit_cast<std::uint32_t>(value);
    for (int b = 0; b < 4; ++b) bytes[b] = static_cast<unsigned char>((raw >> (8 * b)) & 0xffu);
  }
}

template <class T>
Volume<T> decode_payload(const VolumeGrid& grid, const std::vector<unsigned char>& bytes) {
  std::vector<T> data(grid.voxel_count());
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(data.data(), bytes.data(), bytes.size());
  } else {
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = from_little_endian<T>(&bytes[i * sizeof(T)]);
  }
  if constexpr (std::is_same_v<T, float>) {
    for (float v : data) {
      if (!std::isfinite(v)) throw std::runtime_error("volume payload contains non-finite values");
    }
  }
  return Volume<T>(grid, std::move(data));
}

template <class T>
void save_impl(const Volume<T>& volume, const fs::path& path) {
  const auto& g = volume.grid();
  json header = {
      {"dims", {g.dims[0], g.dims[1], g.dims[2]}},
      {"spacing_mm", {g.spacing[0], g.spacing[1], g.spacing[2]}},
      {"origin_mm", {g.origin[0], g.origin[1], g.origin[2]}},
      {"dtype", to_string(dtype_of<T>())},
  };
  const auto stem = stem_of(path);
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());

  std::ofstream hdr(header_path(stem));
  if (!hdr) throw std::runtime_error("cannot write " + header_path(stem).string());
  hdr << header.dump(2) << '\n';
  if (!hdr) throw std::runtime_error("failed writing " + header_path(stem).string());

  std::vector<unsigned char> bytes(volume.size() * sizeof(T));
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(bytes.data(), volume.data().data(), bytes.size());
  } else {
    for (std::size_t i = 0; i < volume.size(); ++i) to_little_endian(volume[i], &bytes[i * sizeof(T)]);
  }
  std::ofstream raw(payload_path(stem), std::ios::binary);
  if (!raw) throw std::runtime_error("cannot write " + payload_path(stem).string());
  raw.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!raw) throw std::runtime_error("failed writing " + payload_path(stem).string());
}

}  // namespace

fs::path header_path(const fs::path& path) { return fs::path(stem_of(path)) += ".json"; }
fs::path payload_path(const fs::path& path) { return fs::path(stem_of(path)) += ".raw"; }

AnyVolume load_volume(const fs::path& path) {
  const auto hdr_path = header_path(path);
  std::ifstream hdr(hdr_path);
  if (!hdr) throw std::runtime_error("volume header not found: " + hdr_path.string());

  json header;
  try {
    hdr >> header;
  } catch (const json::exception& e) {
    throw std::runtime_error("invalid volume header " + hdr_path.string() + ": " + e.what());
  }

  VolumeGrid grid;
  DType dtype{};
  try {
    for (int a = 0; a < 3; ++a) {
      grid.dims[a] = header.at("dims").at(a).get<int>();
      grid.spacing[a] = header.at("spacing_mm").at(a).get<double>();
      grid.origin[a] = header.contains("origin_mm") ? header.at("origin_mm").at(a).get<double>() : 0.0;
    }
    dtype = parse_dtype(header.at("dtype").get<std::string>());
  } catch (const json::exception& e) {
    throw std::runtime_error("invalid volume header " + hdr_path.string() + ": " + e.what());
  }
  grid.validate();

  const auto raw_path = payload_path(path);
  std::ifstream raw(raw_path, std::ios::binary);
  if (!raw) throw std::runtime_error("volume payload not found: " + raw_path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(raw)), std::istreambuf_iterator<char>());
  const std::size_t expected = grid.voxel_count() * element_size(dtype);
  if (bytes.size() != expected) {
    throw std::runtime_error("payload size mismatch for " + raw_path.string() + ": expected " +
                             std::to_string(expected) + " bytes, found " + std::to_string(bytes.size()));
  }

  switch (dtype) {
    case DType::f32: return decode_payload<float>(grid, bytes);
    case DType::u8: return decode_payload<std::uint8_t>(grid, bytes);
    case DType::u32: return decode_payload<std::uint32_t>(grid, bytes);
  }
  throw std::runtime_error("unreachable dtype");
}

namespace {
template <class V>
V load_as(const fs::path& path, const char* what) {
  auto any = load_volume(path);
  if (auto* v = std::get_if<V>(&any)) return std::move(*v);
  throw std::runtime_error(header_path(path).string() + " does not hold a " + what);
}
}  // namespace

ScalarVolume load_scalar_volume(const fs::path& path) { return load_as<ScalarVolume>(path, "f32 volume"); }
BinaryMask load_mask(const fs::path& path) { return load_as<BinaryMask>(path, "u8 mask"); }
LabelVolume load_labels(const fs::path& path) { return load_as<LabelVolume>(path, "u32 label volume"); }

void save_volume(const ScalarVolume& volume, const fs::path& path) { save_impl(volume, path); }
void save_volume(const BinaryMask& volume, const fs::path& path) { save_impl(volume, path); }
void save_volume(const LabelVolume& volume, const fs::path& path) { save_impl(volume, path); }
void save_volume(const AnyVolume& volume, const fs::path& path) {
  std::visit([&](const auto& v) { save_impl(v, path); }, volume);
}

// --- geometry ------------------------------------------------------------------

namespace {

void check_target_spacing(const Vec3& target) {
  for (double t : target) {
    if (!(t > 0.0) || !std::isfinite(t)) throw std::invalid_argument("target spacing must be positive");
  }
}

VolumeGrid resampled_grid(const VolumeGrid& grid, const Vec3& target) {
  VolumeGrid out = grid;
  out.dims = resampled_dims(grid, target);
  out.spacing = target;
  return out;
}

}  // namespace

Dims resampled_dims(const VolumeGrid& grid, const Vec3& target_spacing) {
  check_target_spacing(target_spacing);
  Dims out{};
  for (int a = 0; a < 3; ++a) {
    const double extent = grid.dims[a] * grid.spacing[a] / target_spacing[a];
    // Tolerate representation error so that e.g. 8 * 1.0 / 0.5 stays 16.
    out[a] = std::max(1, static_cast<int>(std::ceil(extent - 1e-9)));
  }
  return out;
}

ScalarVolume resample_trilinear(const ScalarVolume& volume, const Vec3& target_spacing) {
  const auto& in = volume.grid();
  const VolumeGrid out_grid = resampled_grid(in, target_spacing);
  ScalarVolume out(out_grid);

  // Per-axis source index and weight tables.
  std::array<std::vector<int>, 3> lo;
  std::array<std::vector<int>, 3> hi;
  std::array<std::vector<double>, 3> frac;
  for (int a = 0; a < 3; ++a) {
    const int n = out_grid.dims[a];
    lo[a].resize(n);
    hi[a].resize(n);
    frac[a].resize(n);
    for (int j = 0; j < n; ++j) {
      double u = j * target_spacing[a] / in.spacing[a];
      u = std::clamp(u, 0.0, static_cast<double>(in.dims[a] - 1));
      const int i0 = std::min(static_cast<int>(std::floor(u)), in.dims[a] - 1);
      lo[a][j] = i0;
      hi[a][j] = std::min(i0 + 1, in.dims[a] - 1);
      frac[a][j] = u - i0;
    }
  }

  const auto src = volume.data();
  for (int z = 0; z < out_grid.dims[2]; ++z) {
    const double fz = frac[2][z];
    for (int y = 0; y < out_grid.dims[1]; ++y) {
      const double fy = frac[1][y];
      for (int x = 0; x < out_grid.dims[0]; ++x) {
        const double fx = frac[0][x];
        auto v = [&](int xi, int yi, int zi) { return static_cast<double>(src[in.index(xi, yi, zi)]); };
        const int x0 = lo[0][x], x1 = hi[0][x], y0 = lo[1][y], y1 = hi[1][y], z0 = lo[2][z], z1 = hi[2][z];
        const double c00 = v(x0, y0, z0) * (1 - fx) + v(x1, y0, z0) * fx;
        const double c10 = v(x0, y1, z0) * (1 - fx) + v(x1, y1, z0) * fx;
        const double c01 = v(x0, y0, z1) * (1 - fx) + v(x1, y0, z1) * fx;
        const double c11 = v(x0, y1, z1) * (1 - fx) + v(x1, y1, z1) * fx;
        const double c0 = c00 * (1 - fy) + c10 * fy;
        const double c1 = c01 * (1 - fy) + c11 * fy;
        out.at(x, y, z) = static_cast<float>(c0 * (1 - fz) + c1 * fz);
      }
    }
  }
  return out;
}

template <class T>
Volume<T> resample_nearest(const Volume<T>& volume, const Vec3& target_spacing) {
  const auto& in = volume.grid();
  const VolumeGrid out_grid = resampled_grid(in, target_spacing);
  Volume<T> out(out_grid);

  std::array<std::vector<int>, 3> src_index;
  for (int a = 0; a < 3; ++a) {
    src_index[a].resize(out_grid.dims[a]);
    for (int j = 0; j < out_grid.dims[a]; ++j) {
      const double u = j * target_spacing[a] / in.spacing[a];
      src_index[a][j] = std::clamp(static_cast<int>(std::floor(u + 0.5)), 0, in.dims[a] - 1);
    }
  }
  for (int z = 0; z < out_grid.dims[2]; ++z)
    for (int y = 0; y < out_grid.dims[1]; ++y)
      for (int x = 0; x < out_grid.dims[0]; ++x)
        out.at(x, y, z) = volume.at(src_index[0][x], src_index[1][y], src_index[2][z]);
  return out;
}

template <class T>
Volume<T> crop_subvolume(const Volume<T>& volume, const Index3& center, const Dims& size) {
  for (int s : size) {
    if (s < 1) throw std::invalid_argument("crop size must be >= 1");
  }
  const auto& in = volume.grid();
  const Index3 start{center[0] - size[0] / 2, center[1] - size[1] / 2, center[2] - size[2] / 2};

  VolumeGrid out_grid = in;
  out_grid.dims = size;
  for (int a = 0; a < 3; ++a) out_grid.origin[a] = in.origin[a] + start[a] * in.spacing[a];
  Volume<T> out(out_grid);

  // Copy the overlapping x-runs row by row.
  const int x_lo = std::max(0, -start[0]);
  const int x_hi = std::min(size[0], in.dims[0] - start[0]);
  if (x_lo >= x_hi) return out;
  for (int z = 0; z < size[2]; ++z) {
    const int sz = start[2] + z;
    if (sz < 0 || sz >= in.dims[2]) continue;
    for (int y = 0; y < size[1]; ++y) {
      const int sy = start[1] + y;
      if (sy < 0 || sy >= in.dims[1]) continue;
      const T* src = &volume.at(start[0] + x_lo, sy, sz);
      std::copy(src, src + (x_hi - x_lo), &out.at(x_lo, y, z));
    }
  }
  return out;
}

namespace {

void check_angle(double angle_deg) {
  if (!std::isfinite(angle_deg) || std::abs(angle_deg) > kMaxRotationDeg) {
    throw std::invalid_argument("rotation angle must lie within +/-45 degrees");
  }
}

// Source (continuous) index for every in-slice output position.
struct SliceMap {
  std::vector<double> sx;
  std::vector<double> sy;
};

SliceMap rotation_map(const VolumeGrid& g, double angle_deg) {
  const double theta = angle_deg * std::numbers::pi / 180.0;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const double cx = (g.dims[0] - 1) / 2.0;
  const double cy = (g.dims[1] - 1) / 2.0;
  SliceMap map;
  map.sx.resize(static_cast<std::size_t>(g.dims[0]) * g.dims[1]);
  map.sy.resize(map.sx.size());
  for (int y = 0; y < g.dims[1]; ++y) {
    for (int x = 0; x < g.dims[0]; ++x) {
      const double px = (x - cx) * g.spacing[0];
      const double py = (y - cy) * g.spacing[1];
      // Inverse rotation maps the output position back into the source slice.
      const double qx = c * px + s * py;
      const double qy = -s * px + c * py;
      const auto i = static_cast<std::size_t>(x) + static_cast<std::size_t>(g.dims[0]) * y;
      map.sx[i] = cx + qx / g.spacing[0];
      map.sy[i] = cy + qy / g.spacing[1];
    }
  }
  return map;
}

constexpr double kEdgeEps = 1e-9;

}  // namespace

ScalarVolume rotate_xy(const ScalarVolume& volume, double angle_deg) {
  check_angle(angle_deg);
  const auto& g = volume.grid();
  const SliceMap map = rotation_map(g, angle_deg);
  ScalarVolume out(g);
  const int nx = g.dims[0], ny = g.dims[1];
  for (int y = 0; y < ny; ++y) {
    for (int x = 0; x < nx; ++x) {
      const auto i = static_cast<std::size_t>(x) + static_cast<std::size_t>(nx) * y;
      double u = map.sx[i];
      double v = map.sy[i];
      if (u < -kEdgeEps || v < -kEdgeEps || u > nx - 1 + kEdgeEps || v > ny - 1 + kEdgeEps) continue;
      u = std::clamp(u, 0.0, nx - 1.0);
      v = std::clamp(v, 0.0, ny - 1.0);
      const int x0 = std::min(static_cast<int>(u), nx - 1);
      const int y0 = std::min(static_cast<int>(v), ny - 1);
      const int x1 = std::min(x0 + 1, nx - 1);
      const int y1 = std::min(y0 + 1, ny - 1);
      const double fx = u - x0;
      const double fy = v - y0;
      for (int z = 0; z < g.dims[2]; ++z) {
        const double a = volume.at(x0, y0, z) * (1 - fx) + volume.at(x1, y0, z) * fx;
        const double b = volume.at(x0, y1, z) * (1 - fx) + volume.at(x1, y1, z) * fx;
        out.at(x, y, z) = static_cast<float>(a * (1 - fy) + b * fy);
      }
    }
  }
  return out;
}

template <class T>
Volume<T> rotate_xy_nearest(const Volume<T>& volume, double angle_deg) {
  check_angle(angle_deg);
  const auto& g = volume.grid();
  const SliceMap map = rotation_map(g, angle_deg);
  Volume<T> out(g);
  const int nx = g.dims[0], ny = g.dims[1];
  for (int y = 0; y < ny; ++y) {
    for (int x = 0; x < nx; ++x) {
      const auto i = static_cast<std::size_t>(x) + static_cast<std::size_t>(nx) * y;
      const int sx = static_cast<int>(std::floor(map.sx[i] + 0.5));
      const int sy = static_cast<int>(std::floor(map.sy[i] + 0.5));
      if (sx < 0 || sy < 0 || sx >= nx || sy >= ny) continue;
      for (int z = 0; z < g.dims[2]; ++z) out.at(x, y, z) = volume.at(sx, sy, z);
    }
  }
  return out;
}

#define DISTGATE_INSTANTIATE(T)                                                   \
  template Volume<T> resample_nearest<T>(const Volume<T>&, const Vec3&);          \
  template Volume<T> crop_subvolume<T>(const Volume<T>&, const Index3&, const Dims&); \
  template Volume<T> rotate_xy_nearest<T>(const Volume<T>&, double);

DISTGATE_INSTANTIATE(float)
DISTGATE_INSTANTIATE(std::uint8_t)
DISTGATE_INSTANTIATE(std::uint32_t)

#undef DISTGATE_INSTANTIATE

}  // namespace distgate
