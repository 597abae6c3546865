#include "distgate/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include <json.hpp>

#include "distgate/parallel.hpp"
#include "distgate/rng.hpp"

namespace distgate {

namespace fs = std::filesystem;
using nlohmann::json;

void PhantomConfig::validate() const {
  VolumeGrid{dims, spacing, {}}.validate();
  if (n_nodes < 0) throw std::invalid_argument("n_nodes must be >= 0");
  if (proximal_fraction < 0 || distal_fraction < 0 || proximal_fraction + distal_fraction > 1.0 + 1e-12) {
    throw std::invalid_argument("node band fractions must be non-negative and sum to <= 1");
  }
  if (!(proximal_max_mm < distal_min_mm)) throw std::invalid_argument("proximal band must end before the distal band");
  const double min_spacing = *std::min_element(spacing.begin(), spacing.end());
  if (!(node_radius_min_mm >= 2.0 * min_spacing) || node_radius_max_mm < node_radius_min_mm) {
    throw std::invalid_argument("node radii must be >= 2 voxels and min <= max");
  }
  for (double a : tumor_semi_axes_mm) {
    if (!(a > 0)) throw std::invalid_argument("tumor semi-axes must be positive");
  }
  if (n_benign < 0) throw std::invalid_argument("n_benign must be >= 0");
  if (pet_fn_rate < 0 || pet_fn_rate > 1) throw std::invalid_argument("pet_fn_rate must lie in [0, 1]");
  if (pet_hotspots < 0 || !(hotspot_radius_mm > 0)) throw std::invalid_argument("invalid hot spot settings");
  if (max_attempts < 1) throw std::invalid_argument("max_attempts must be >= 1");
}

std::string PhantomConfig::to_json() const {
  json j = {
      {"dims", dims},
      {"spacing_mm", spacing},
      {"tumor_semi_axes_mm", tumor_semi_axes_mm},
      {"tumor_center_jitter_mm", tumor_center_jitter_mm},
      {"n_nodes", n_nodes},
      {"proximal_fraction", proximal_fraction},
      {"distal_fraction", distal_fraction},
      {"proximal_max_mm", proximal_max_mm},
      {"distal_min_mm", distal_min_mm},
      {"node_radius_min_mm", node_radius_min_mm},
      {"node_radius_max_mm", node_radius_max_mm},
      {"node_gap_mm", node_gap_mm},
      {"n_benign", n_benign},
      {"ct_tumor", ct_tumor},
      {"ct_node_min", ct_node_min},
      {"ct_node_max", ct_node_max},
      {"ct_noise", ct_noise},
      {"pet_tumor", pet_tumor},
      {"pet_node", pet_node},
      {"pet_noise", pet_noise},
      {"pet_fn_rate", pet_fn_rate},
      {"pet_hotspots", pet_hotspots},
      {"hotspot_radius_mm", hotspot_radius_mm},
      {"max_attempts", max_attempts},
  };
  return j.dump();
}

PhantomConfig PhantomConfig::from_json(const std::string& text) {
  PhantomConfig c;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("invalid phantom config: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("phantom config must be a JSON object");
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  try {
    get("dims", c.dims);
    get("spacing_mm", c.spacing);
    get("tumor_semi_axes_mm", c.tumor_semi_axes_mm);
    get("tumor_center_jitter_mm", c.tumor_center_jitter_mm);
    get("n_nodes", c.n_nodes);
    get("proximal_fraction", c.proximal_fraction);
    get("distal_fraction", c.distal_fraction);
    get("proximal_max_mm", c.proximal_max_mm);
    get("distal_min_mm", c.distal_min_mm);
    get("node_radius_min_mm", c.node_radius_min_mm);
    get("node_radius_max_mm", c.node_radius_max_mm);
    get("node_gap_mm", c.node_gap_mm);
    get("n_benign", c.n_benign);
    get("ct_tumor", c.ct_tumor);
    get("ct_node_min", c.ct_node_min);
    get("ct_node_max", c.ct_node_max);
    get("ct_noise", c.ct_noise);
    get("pet_tumor", c.pet_tumor);
    get("pet_node", c.pet_node);
    get("pet_noise", c.pet_noise);
    get("pet_fn_rate", c.pet_fn_rate);
    get("pet_hotspots", c.pet_hotspots);
    get("hotspot_radius_mm", c.hotspot_radius_mm);
    get("max_attempts", c.max_attempts);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("invalid phantom config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string to_string(NodeBand band) {
  switch (band) {
    case NodeBand::proximal: return "proximal";
    case NodeBand::mixed: return "mixed";
    case NodeBand::distal: return "distal";
  }
  return "?";
}

namespace {

double physical_distance(const VolumeGrid& g, const Index3& a, const Index3& b) {
  double d = 0;
  for (int k = 0; k < 3; ++k) {
    const double diff = (a[k] - b[k]) * g.spacing[k];
    d += diff * diff;
  }
  return std::sqrt(d);
}

// Calls f(index) for every voxel whose center lies within the ellipsoid
// sum(((p - c) / semi)^2) <= 1.
template <class F>
void for_each_in_ellipsoid(const VolumeGrid& g, const Index3& center, const Vec3& semi, F&& f) {
  Index3 lo{}, hi{};
  for (int a = 0; a < 3; ++a) {
    const int reach = static_cast<int>(std::ceil(semi[a] / g.spacing[a]));
    lo[a] = std::max(0, center[a] - reach);
    hi[a] = std::min(g.dims[a] - 1, center[a] + reach);
  }
  for (int z = lo[2]; z <= hi[2]; ++z)
    for (int y = lo[1]; y <= hi[1]; ++y)
      for (int x = lo[0]; x <= hi[0]; ++x) {
        const Index3 p{x, y, z};
        double s = 0;
        for (int a = 0; a < 3; ++a) {
          const double u = (p[a] - center[a]) * g.spacing[a] / semi[a];
          s += u * u;
        }
        if (s <= 1.0) f(g.index(x, y, z));
      }
}

// Voxel center at which a sphere of radius r fits entirely inside the grid.
Index3 random_center(Rng& rng, const VolumeGrid& g, double radius_mm) {
  Index3 c{};
  for (int a = 0; a < 3; ++a) {
    const int margin = static_cast<int>(std::ceil(radius_mm / g.spacing[a]));
    const int span = g.dims[a] - 2 * margin;
    if (span < 1) throw std::runtime_error("phantom volume too small for a sphere of radius " + std::to_string(radius_mm));
    c[a] = margin + static_cast<int>(rng.below(static_cast<std::uint64_t>(span)));
  }
  return c;
}

bool in_band(double d, NodeBand band, const PhantomConfig& c) {
  switch (band) {
    case NodeBand::proximal: return d <= c.proximal_max_mm;
    case NodeBand::distal: return d >= c.distal_min_mm;
    case NodeBand::mixed: return d > c.proximal_max_mm && d < c.distal_min_mm;
  }
  return false;
}

}  // namespace

PhantomCase generate_case(std::uint64_t seed, const PhantomConfig& config, const std::string& case_id) {
  config.validate();
  const VolumeGrid grid{config.dims, config.spacing, {0.0, 0.0, 0.0}};
  const Rng root(seed);

  PhantomCase out;
  auto& rec = out.record;
  rec.case_id = case_id;

  // Tumor.
  Rng tumor_rng = root.split(1);
  Index3 tumor_center{};
  for (int a = 0; a < 3; ++a) {
    const double mid = (grid.dims[a] - 1) * grid.spacing[a] / 2.0;
    const double pos = mid + tumor_rng.uniform(-config.tumor_center_jitter_mm, config.tumor_center_jitter_mm);
    tumor_center[a] = std::clamp(static_cast<int>(std::lround(pos / grid.spacing[a])), 0, grid.dims[a] - 1);
  }
  rec.tumor = BinaryMask(grid);
  for_each_in_ellipsoid(grid, tumor_center, config.tumor_semi_axes_mm, [&](std::size_t i) { rec.tumor[i] = 1; });
  rec.distance = edt_exact(rec.tumor);

  // Nodes, hardest band first so that rejection sampling fails early.
  const int n_prox = static_cast<int>(std::floor(config.n_nodes * config.proximal_fraction + 1e-9));
  const int n_dist = static_cast<int>(std::floor(config.n_nodes * config.distal_fraction + 1e-9));
  const int n_mixed = config.n_nodes - n_prox - n_dist;
  std::vector<NodeBand> bands;
  bands.insert(bands.end(), n_dist, NodeBand::distal);
  bands.insert(bands.end(), n_mixed, NodeBand::mixed);
  bands.insert(bands.end(), n_prox, NodeBand::proximal);

  Rng node_rng = root.split(2);
  rec.gtvln = LabelVolume(grid);
  std::vector<PhantomNode> placed_all;
  auto place = [&](NodeBand band, bool beyond_proximal) {
    PhantomNode node;
    node.band = band;
    node.radius_mm = node_rng.uniform(config.node_radius_min_mm, config.node_radius_max_mm);
    for (int attempt = 0; attempt < config.max_attempts; ++attempt) {
      const Index3 c = random_center(node_rng, grid, node.radius_mm);
      const double d = rec.distance.at(c[0], c[1], c[2]);
      const bool band_ok = beyond_proximal ? d > config.proximal_max_mm : in_band(d, band, config);
      if (!band_ok || d < node.radius_mm + config.node_gap_mm) continue;
      const bool clear = std::all_of(placed_all.begin(), placed_all.end(), [&](const PhantomNode& other) {
        return physical_distance(grid, c, other.center) >= node.radius_mm + other.radius_mm + config.node_gap_mm;
      });
      if (!clear) continue;
      node.center = c;
      placed_all.push_back(node);
      return node;
    }
    throw std::runtime_error("could not place a " + std::string(beyond_proximal ? "benign" : to_string(band)) +
                             " node after " + std::to_string(config.max_attempts) + " attempts");
  };
  for (NodeBand band : bands) {
    PhantomNode node = place(band, false);
    node.label = static_cast<std::uint32_t>(out.nodes.size() + 1);
    node.pet_visible = node_rng.uniform() >= config.pet_fn_rate;
    const Vec3 r{node.radius_mm, node.radius_mm, node.radius_mm};
    for_each_in_ellipsoid(grid, node.center, r, [&](std::size_t i) { rec.gtvln[i] = node.label; });
    out.nodes.push_back(node);
  }
  for (int b = 0; b < config.n_benign; ++b) {
    PhantomNode node = place(NodeBand::distal, true);
    node.pet_visible = false;
    out.benign.push_back(node);
  }

  // Spurious PET hot spots away from the tumor and the nodes.
  Rng hot_rng = root.split(3);
  for (int h = 0; h < config.pet_hotspots; ++h) {
    bool placed = false;
    for (int attempt = 0; attempt < config.max_attempts && !placed; ++attempt) {
      const Index3 c = random_center(hot_rng, grid, config.hotspot_radius_mm);
      if (rec.distance.at(c[0], c[1], c[2]) < config.hotspot_radius_mm + config.node_gap_mm) continue;
      const bool clear = std::all_of(placed_all.begin(), placed_all.end(), [&](const PhantomNode& n) {
        return physical_distance(grid, c, n.center) >= n.radius_mm + config.hotspot_radius_mm + config.node_gap_mm;
      });
      if (!clear) continue;
      out.hotspots.push_back(c);
      placed = true;
    }
    if (!placed) throw std::runtime_error("could not place a PET hot spot");
  }

  // Intensities.
  Rng ct_rng = root.split(4);
  Rng pet_rng = root.split(5);
  Rng contrast_rng = root.split(6);
  rec.ct = ScalarVolume(grid);
  rec.pet = ScalarVolume(grid);
  std::vector<double> node_contrast;
  for (std::size_t k = 0; k < out.nodes.size(); ++k) {
    node_contrast.push_back(contrast_rng.uniform(config.ct_node_min, config.ct_node_max));
  }
  std::vector<float> benign_ct(grid.voxel_count(), 0.0f);
  for (const auto& b : out.benign) {
    const auto contrast = static_cast<float>(contrast_rng.uniform(config.ct_node_min, config.ct_node_max));
    const Vec3 r{b.radius_mm, b.radius_mm, b.radius_mm};
    for_each_in_ellipsoid(grid, b.center, r, [&](std::size_t i) { benign_ct[i] = contrast; });
  }
  std::vector<std::uint8_t> hot(grid.voxel_count(), 0);
  const Vec3 hot_r{config.hotspot_radius_mm, config.hotspot_radius_mm, config.hotspot_radius_mm};
  for (const auto& c : out.hotspots) for_each_in_ellipsoid(grid, c, hot_r, [&](std::size_t i) { hot[i] = 1; });

  for (std::size_t i = 0; i < grid.voxel_count(); ++i) {
    double ct = config.ct_noise * ct_rng.normal();
    double pet = config.pet_noise * pet_rng.normal();
    if (rec.tumor[i]) {
      ct += config.ct_tumor;
      pet += config.pet_tumor;
    }
    if (const auto id = rec.gtvln[i]; id != 0) {
      ct += node_contrast[id - 1];
      if (out.nodes[id - 1].pet_visible) pet += config.pet_node;
    }
    ct += benign_ct[i];
    if (hot[i]) pet += config.pet_node;
    rec.ct[i] = static_cast<float>(ct);
    rec.pet[i] = static_cast<float>(pet);
  }
  return out;
}

std::string phantom_case_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "case_%03d", index);
  return buf;
}

PhantomCase generate_indexed_case(std::uint64_t seed, int index, const PhantomConfig& config) {
  Rng stream = Rng(seed).split(0x70a5e000ULL + static_cast<std::uint64_t>(index));
  return generate_case(stream(), config, phantom_case_id(index));
}

DatasetManifest plan_dataset(std::uint64_t seed, int n_cases, const SplitFractions& fractions,
                             const PhantomConfig& config) {
  if (n_cases < 3) throw std::invalid_argument("a phantom dataset needs at least 3 cases");
  const auto counts = split_counts(n_cases, fractions);
  std::vector<int> order(static_cast<std::size_t>(n_cases));
  for (int i = 0; i < n_cases; ++i) order[i] = i;
  Rng(seed).split(0x5b117ULL).shuffle(std::span<int>(order));

  DatasetManifest m;
  m.seed = seed;
  m.config_json = config.to_json();
  m.cases.resize(static_cast<std::size_t>(n_cases));
  for (int i = 0; i < n_cases; ++i) {
    m.cases[i].case_id = phantom_case_id(i);
    m.cases[i].dir = phantom_case_id(i);
  }
  for (int r = 0; r < n_cases; ++r) {
    const Split s = r < counts.train ? Split::train : r < counts.train + counts.val ? Split::val : Split::test;
    m.cases[order[r]].split = s;
  }
  return m;
}

DatasetManifest generate_dataset(std::uint64_t seed, int n_cases, const SplitFractions& fractions,
                                 const PhantomConfig& config, const fs::path& out_dir) {
  auto manifest = plan_dataset(seed, n_cases, fractions, config);
  fs::create_directories(out_dir);
  parallel_for(static_cast<std::size_t>(n_cases), [&](std::size_t i) {
    const auto c = generate_indexed_case(seed, static_cast<int>(i), config);
    save_case(c.record, out_dir / manifest.cases[i].dir);
  });
  save_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

}  // namespace distgate
