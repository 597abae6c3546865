#include "distgate/edt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "distgate/parallel.hpp"

namespace distgate {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool has_foreground(const BinaryMask& mask) {
  return std::any_of(mask.data().begin(), mask.data().end(), [](std::uint8_t v) { return v != 0; });
}

// Lower envelope of parabolas y = (s*(q - p))^2 + f(p) over the finite samples
// of one row. `f` is overwritten with the minimum at every q.
class RowTransform {
 public:
  void run(std::vector<double>& f, double spacing) {
    const int n = static_cast<int>(f.size());
    const double s2 = spacing * spacing;
    sites_.clear();
    bounds_.clear();

    for (int q = 0; q < n; ++q) {
      if (!std::isfinite(f[q])) continue;
      while (!sites_.empty()) {
        const double cut = intersection(f, sites_.back(), q, s2);
        if (cut > bounds_.back()) {
          sites_.push_back(q);
          bounds_.push_back(cut);
          break;
        }
        sites_.pop_back();
        bounds_.pop_back();
      }
      if (sites_.empty()) {
        sites_.push_back(q);
        bounds_.push_back(-kInf);
      }
    }
    if (sites_.empty()) return;  // row has no finite sample; stays infinite

    values_.assign(f.begin(), f.end());
    std::size_t k = 0;
    for (int q = 0; q < n; ++q) {
      while (k + 1 < sites_.size() && bounds_[k + 1] <= q) ++k;
      const int p = sites_[k];
      const double d = static_cast<double>(q - p);
      f[q] = s2 * d * d + values_[p];
    }
  }

 private:
  // Abscissa where the parabola rooted at q starts undercutting the one at p.
  static double intersection(const std::vector<double>& f, int p, int q, double s2) {
    const double dp = static_cast<double>(p);
    const double dq = static_cast<double>(q);
    return ((f[q] + s2 * dq * dq) - (f[p] + s2 * dp * dp)) / (2.0 * s2 * (dq - dp));
  }

  std::vector<int> sites_;
  std::vector<double> bounds_;
  std::vector<double> values_;
};

// One separable pass along `axis` over the squared-distance field.
void transform_axis(std::vector<double>& field, const VolumeGrid& grid, int axis) {
  const auto& d = grid.dims;
  const int a1 = axis == 0 ? 1 : 0;
  const int a2 = axis == 2 ? 1 : 2;
  const std::size_t rows = static_cast<std::size_t>(d[a1]) * d[a2];
  const std::size_t stride = axis == 0 ? 1 : axis == 1 ? static_cast<std::size_t>(d[0])
                                                        : static_cast<std::size_t>(d[0]) * d[1];

  // Rows are independent; fixed chunking keeps the result thread-count invariant.
  constexpr std::size_t kChunk = 256;
  const std::size_t chunks = (rows + kChunk - 1) / kChunk;
  parallel_for(chunks, [&](std::size_t chunk) {
    RowTransform transform;
    std::vector<double> row(static_cast<std::size_t>(d[axis]));
    const std::size_t end = std::min(rows, (chunk + 1) * kChunk);
    for (std::size_t r = chunk * kChunk; r < end; ++r) {
      Index3 p{0, 0, 0};
      p[a1] = static_cast<int>(r % d[a1]);
      p[a2] = static_cast<int>(r / d[a1]);
      const std::size_t base = grid.index(p);
      for (int i = 0; i < d[axis]; ++i) row[i] = field[base + i * stride];
      transform.run(row, grid.spacing[axis]);
      for (int i = 0; i < d[axis]; ++i) field[base + i * stride] = row[i];
    }
  });
}

}  // namespace

DistanceMap edt_exact(const BinaryMask& tumor) {
  const auto& grid = tumor.grid();
  grid.validate();
  if (!has_foreground(tumor)) throw std::invalid_argument("distance transform of an empty tumor mask");

  std::vector<double> field(tumor.size());
  for (std::size_t i = 0; i < field.size(); ++i) field[i] = tumor[i] ? 0.0 : kInf;
  for (int axis = 0; axis < 3; ++axis) transform_axis(field, grid, axis);

  DistanceMap out(grid);
  for (std::size_t i = 0; i < field.size(); ++i) out[i] = static_cast<float>(std::sqrt(field[i]));
  return out;
}

DistanceMap edt_bruteforce(const BinaryMask& tumor) {
  const auto& grid = tumor.grid();
  grid.validate();
  if (tumor.size() > kBruteForceMaxVoxels) {
    throw std::invalid_argument("volume too large for the brute-force distance transform");
  }

  std::vector<double> fx, fy, fz;
  for (std::size_t i = 0; i < tumor.size(); ++i) {
    if (!tumor[i]) continue;
    const auto p = grid.coords(i);
    fx.push_back(p[0] * grid.spacing[0]);
    fy.push_back(p[1] * grid.spacing[1]);
    fz.push_back(p[2] * grid.spacing[2]);
  }
  if (fx.empty()) throw std::invalid_argument("distance transform of an empty tumor mask");

  DistanceMap out(grid);
  for (std::size_t i = 0; i < tumor.size(); ++i) {
    if (tumor[i]) continue;  // 0 inside the mask
    const auto p = grid.coords(i);
    const double x = p[0] * grid.spacing[0];
    const double y = p[1] * grid.spacing[1];
    const double z = p[2] * grid.spacing[2];
    double best = kInf;
    for (std::size_t k = 0; k < fx.size(); ++k) {
      const double dx = x - fx[k], dy = y - fy[k], dz = z - fz[k];
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    out[i] = static_cast<float>(std::sqrt(best));
  }
  return out;
}

std::vector<Index3> boundary_voxels(const BinaryMask& tumor) {
  const auto& g = tumor.grid();
  constexpr int kOffsets[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  std::vector<Index3> out;
  for (int z = 0; z < g.dims[2]; ++z)
    for (int y = 0; y < g.dims[1]; ++y)
      for (int x = 0; x < g.dims[0]; ++x) {
        if (!tumor.at(x, y, z)) continue;
        for (const auto& o : kOffsets) {
          const int nx = x + o[0], ny = y + o[1], nz = z + o[2];
          if (!g.contains(nx, ny, nz) || !tumor.at(nx, ny, nz)) {
            out.push_back({x, y, z});
            break;
          }
        }
      }
  return out;
}

}  // namespace distgate
