#pragma once

#include <cstddef>
#include <vector>

#include "distgate/volume.hpp"

namespace distgate {

/// Per-voxel shortest physical distance (mm) to the tumor mask; 0 inside it.
using DistanceMap = ScalarVolume;

/// Largest volume accepted by edt_bruteforce.
inline constexpr std::size_t kBruteForceMaxVoxels = std::size_t{1} << 18;

/// Exact Euclidean distance transform on an anisotropic grid.
///
/// Three separable passes (x, then y, then z). Each pass replaces every row
/// of squared distances f by min_p (s*(q - p))^2 + f(p), evaluated through the
/// lower envelope of the parabolas rooted at the row's finite samples. The
/// result is the distance from each voxel center to the nearest foreground
/// voxel center. Accumulation is in double; the output is stored as float.
///
/// Throws std::invalid_argument if the mask has no foreground voxel.
DistanceMap edt_exact(const BinaryMask& tumor);

/// O(N * |foreground|) exhaustive minimum. Test oracle for edt_exact.
/// Throws if the mask is empty or larger than kBruteForceMaxVoxels.
DistanceMap edt_bruteforce(const BinaryMask& tumor);

/// Foreground voxels with at least one background 6-neighbour; the volume
/// edge counts as background.
std::vector<Index3> boundary_voxels(const BinaryMask& tumor);

}  // namespace distgate
