#pragma once

#include <cstdint>

#include "distgate/pipeline.hpp"
#include "distgate/rng.hpp"

namespace fixtures {

using namespace distgate;

// Tumor block near the center, three small box nodes, noisy images.
inline RawCase synthetic_raw(const VolumeGrid& g, std::uint64_t seed) {
  RawCase raw;
  raw.case_id = "synthetic";
  raw.ct = ScalarVolume(g);
  raw.pet = ScalarVolume(g);
  raw.tumor = BinaryMask(g);
  raw.gtvln = LabelVolume(g);
  Rng rng(seed);
  for (auto& v : raw.ct.data()) v = static_cast<float>(rng.normal());
  for (auto& v : raw.pet.data()) v = static_cast<float>(rng.uniform());
  const auto& d = g.dims;
  for (int z = d[2] / 2 - 1; z <= d[2] / 2 + 1; ++z)
    for (int y = d[1] / 2 - 3; y <= d[1] / 2 + 3; ++y)
      for (int x = d[0] / 2 - 3; x <= d[0] / 2 + 3; ++x) raw.tumor.at(x, y, z) = 1;
  const Index3 nodes[3] = {{3, 3, 2}, {d[0] - 6, 4, d[2] - 4}, {5, d[1] - 6, d[2] / 2}};
  for (std::uint32_t k = 0; k < 3; ++k) {
    for (int z = 0; z < 2; ++z)
      for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) raw.gtvln.at(nodes[k][0] + x, nodes[k][1] + y, nodes[k][2] + z) = k + 1;
  }
  return raw;
}

}  // namespace fixtures
