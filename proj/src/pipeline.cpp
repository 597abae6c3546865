#include "distgate/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "distgate/rng.hpp"

namespace distgate {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint32_t CaseRecord::instance_count() const { return validate_labels(gtvln); }

namespace {

template <class T>
Volume<T> resample_labels_like(const Volume<T>& v, const Vec3& target) {
  if (v.grid().spacing == target) return v;
  return resample_nearest(v, target);
}

ScalarVolume resample_image(const ScalarVolume& v, const Vec3& target) {
  if (v.grid().spacing == target) return v;
  return resample_trilinear(v, target);
}

}  // namespace

CaseRecord prepare_case(RawCase raw, const Vec3& target_spacing) {
  CaseRecord rec;
  rec.case_id = std::move(raw.case_id);
  rec.ct = resample_image(raw.ct, target_spacing);
  rec.pet = resample_image(raw.pet, target_spacing);
  rec.tumor = resample_labels_like(raw.tumor, target_spacing);
  rec.gtvln = compact_labels(resample_labels_like(raw.gtvln, target_spacing));

  const auto& grid = rec.ct.grid();
  if (rec.pet.grid() != grid || rec.tumor.grid() != grid || rec.gtvln.grid() != grid) {
    throw std::invalid_argument("case " + rec.case_id + ": volumes do not share a grid after resampling");
  }
  for (std::size_t i = 0; i < rec.tumor.size(); ++i) {
    if (rec.tumor[i] && rec.gtvln[i]) {
      throw std::invalid_argument("case " + rec.case_id + ": lymph node labels overlap the tumor mask");
    }
  }
  // Throws on an empty tumor.
  rec.distance = edt_exact(rec.tumor);
  return rec;
}

RawCase load_raw_case(const fs::path& dir, const std::string& case_id) {
  return {case_id, load_scalar_volume(dir / "ct"), load_scalar_volume(dir / "pet"), load_mask(dir / "tumor"),
          load_labels(dir / "gtvln")};
}

void save_case(const CaseRecord& record, const fs::path& dir) {
  fs::create_directories(dir);
  save_volume(record.ct, dir / "ct");
  save_volume(record.pet, dir / "pet");
  save_volume(record.tumor, dir / "tumor");
  save_volume(record.gtvln, dir / "gtvln");
  save_volume(record.distance, dir / "distance");
}

Index3 instance_anchor(const LabelVolume& labels, std::uint32_t id) {
  const auto& g = labels.grid();
  double sx = 0, sy = 0, sz = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != id) continue;
    const auto p = g.coords(i);
    sx += p[0];
    sy += p[1];
    sz += p[2];
    ++count;
  }
  if (count == 0) throw std::invalid_argument("instance " + std::to_string(id) + " is empty");
  const Vec3 c{sx / count, sy / count, sz / count};

  Index3 best{};
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != id) continue;
    const auto p = g.coords(i);
    double d = 0;
    for (int a = 0; a < 3; ++a) {
      const double diff = (p[a] - c[a]) * g.spacing[a];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = p;
    }
  }
  return best;
}

FeatureMap<float> network_input(const ScalarVolume& ct, const ScalarVolume& pet, const ScalarVolume& distance) {
  if (ct.grid().dims != pet.grid().dims || ct.grid().dims != distance.grid().dims) {
    throw std::invalid_argument("network input channels differ in shape");
  }
  FeatureMap<float> map(ct.dims(), 3);
  auto zscore = [](std::span<const float> src, std::span<float> dst) {
    double mean = 0.0;
    for (float v : src) mean += v;
    mean /= static_cast<double>(src.size());
    double var = 0.0;
    for (float v : src) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(src.size()));
    const double inv = sd > 1e-6 ? 1.0 / sd : 1.0;
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<float>((src[i] - mean) * inv);
  };
  zscore(ct.data(), map.channel(0));
  zscore(pet.data(), map.channel(1));
  auto d = map.channel(2);
  for (std::size_t i = 0; i < distance.size(); ++i) d[i] = static_cast<float>(distance[i] / kDistanceScaleMm);
  return map;
}

namespace {

// Smallest odd window that still covers a size-`s` crop after any in-plane rotation.
int rotation_window(int s) {
  const int w = static_cast<int>(std::ceil(s * std::sqrt(2.0))) + 2;
  return w % 2 == 0 ? w + 1 : w;
}

template <class T, class Rotate>
Volume<T> rotated_crop(const Volume<T>& src, const Index3& center, const Dims& size, double angle, Rotate rotate) {
  const Dims window{rotation_window(size[0]), rotation_window(size[1]), size[2]};
  auto big = crop_subvolume(src, center, window);
  if (angle != 0.0) big = rotate(big, angle);
  // The window center (w - 1) / 2 is the rotation pivot and maps back onto `center`.
  return crop_subvolume(big, Index3{(window[0] - 1) / 2, (window[1] - 1) / 2, size[2] / 2}, size);
}

}  // namespace

std::vector<TrainingCrop> sample_crops(const CaseRecord& record, std::uint64_t seed, const CropSamplingOptions& options) {
  for (int s : options.crop_size) {
    if (s < 1) throw std::invalid_argument("crop size must be >= 1");
  }
  if (!(options.max_rotation_deg >= 0.0) || options.max_rotation_deg > kMaxRotationDeg) {
    throw std::invalid_argument("max rotation must lie in [0, 45] degrees");
  }
  options.gating.validate();

  const auto& grid = record.grid();
  const auto instances = record.instance_count();
  const int n_background = options.n_background < 0 ? static_cast<int>(instances) : options.n_background;

  BinaryMask foreground(grid);
  for (std::size_t i = 0; i < foreground.size(); ++i) foreground[i] = record.gtvln[i] ? 1 : 0;

  const Rng root(seed);
  std::vector<TrainingCrop> crops;
  crops.reserve(instances + static_cast<std::size_t>(n_background));
  const std::size_t total = instances + static_cast<std::size_t>(n_background);
  for (std::size_t j = 0; j < total; ++j) {
    Rng rng = root.split(j);
    CropProvenance prov;
    prov.case_id = record.case_id;
    if (j < instances) {
      prov.instance = static_cast<int>(j + 1);
      prov.center = instance_anchor(record.gtvln, static_cast<std::uint32_t>(j + 1));
    } else {
      for (int a = 0; a < 3; ++a) prov.center[a] = static_cast<int>(rng.below(static_cast<std::uint64_t>(grid.dims[a])));
    }
    prov.angle_deg = options.max_rotation_deg > 0.0 ? rng.uniform(-options.max_rotation_deg, options.max_rotation_deg)
                                                     : 0.0;

    const auto& size = options.crop_size;
    auto linear = [](const ScalarVolume& v, double a) { return rotate_xy(v, a); };
    auto nearest = [](const BinaryMask& v, double a) { return rotate_xy_nearest(v, a); };
    TrainingCrop crop;
    crop.input[0] = rotated_crop(record.ct, prov.center, size, prov.angle_deg, linear);
    crop.input[1] = rotated_crop(record.pet, prov.center, size, prov.angle_deg, linear);
    crop.input[2] = rotated_crop(record.distance, prov.center, size, prov.angle_deg, linear);
    crop.labels = rotated_crop(foreground, prov.center, size, prov.angle_deg, nearest);
    crop.weights = apply_gate(crop.input[2], options.gating);
    crop.provenance = std::move(prov);
    crops.push_back(std::move(crop));
  }
  return crops;
}

// --- manifest ------------------------------------------------------------------

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + name + "'");
}

SplitCounts split_counts(int n_cases, const SplitFractions& f) {
  if (n_cases < 0) throw std::invalid_argument("negative case count");
  if (f.train < 0 || f.val < 0 || f.test < 0 || f.val + f.test > 1.0 + 1e-12) {
    throw std::invalid_argument("invalid split fractions");
  }
  // The small epsilon keeps e.g. 10 * 0.3 from flooring to 2.
  SplitCounts c;
  c.val = static_cast<int>(std::floor(n_cases * f.val + 1e-9));
  c.test = static_cast<int>(std::floor(n_cases * f.test + 1e-9));
  c.train = n_cases - c.val - c.test;
  return c;
}

std::vector<ManifestEntry> DatasetManifest::select(Split split) const {
  std::vector<ManifestEntry> out;
  std::copy_if(cases.begin(), cases.end(), std::back_inserter(out), [&](const auto& e) { return e.split == split; });
  return out;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  json cases = json::array();
  for (const auto& e : manifest.cases) {
    cases.push_back({{"case_id", e.case_id}, {"dir", e.dir}, {"split", to_string(e.split)}});
  }
  json doc = {{"seed", manifest.seed}, {"cases", cases}};
  if (!manifest.config_json.empty()) doc["config"] = json::parse(manifest.config_json);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  out << doc.dump(2) << '\n';
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("dataset manifest not found: " + path.string());
  DatasetManifest m;
  try {
    json doc;
    in >> doc;
    m.seed = doc.value("seed", std::uint64_t{0});
    for (const auto& e : doc.at("cases")) {
      m.cases.push_back({e.at("case_id").get<std::string>(), e.at("dir").get<std::string>(),
                         parse_split(e.at("split").get<std::string>())});
    }
    if (doc.contains("config")) m.config_json = doc["config"].dump();
  } catch (const json::exception& e) {
    throw std::runtime_error("invalid dataset manifest " + path.string() + ": " + e.what());
  }
  return m;
}

}  // namespace distgate
