// distgate command-line front end.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "distgate/edt.hpp"
#include "distgate/experiment.hpp"
#include "distgate/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace distgate;

namespace {

constexpr std::uint64_t kDefaultSeed = 7;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string config_path;

  [[nodiscard]] std::uint64_t root_seed(std::uint64_t fallback = kDefaultSeed) const { return seed.value_or(fallback); }
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

// The --config file may be a section on its own or a full end-to-end
// configuration holding that section under `key`.
std::optional<json> config_section(const Globals& g, const char* key) {
  if (g.config_path.empty()) return std::nullopt;
  json j;
  try {
    j = json::parse(read_text(g.config_path));
  } catch (const json::exception& e) {
    throw std::invalid_argument("invalid config file: " + std::string(e.what()));
  }
  if (!j.is_object()) throw std::invalid_argument("config file must hold a JSON object");
  if (key && j.contains(key)) return j.at(key);
  return j;
}

EndToEndConfig end_to_end_config(const Globals& g) {
  EndToEndConfig c;
  if (auto j = config_section(g, nullptr)) c = EndToEndConfig::from_json(j->dump());
  if (g.seed) c.seed = *g.seed;
  return c;
}

// Gating thresholds from the command line are given in cm.
struct GateFlags {
  std::optional<double> d0_cm, dprox_cm, ddist_cm;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--d0-cm", d0_cm, "binary gate threshold (cm)");
    cmd->add_option("--dprox-cm", dprox_cm, "soft gate: end of the proximal plateau (cm)");
    cmd->add_option("--ddist-cm", ddist_cm, "soft gate: start of the distal plateau (cm)");
  }
  void apply(GatingParams& p) const {
    if (d0_cm) p.d0_mm = *d0_cm * 10.0;
    if (dprox_cm) p.d_prox_mm = *dprox_cm * 10.0;
    if (ddist_cm) p.d_dist_mm = *ddist_cm * 10.0;
  }
};

json gating_json(const GatingParams& p) {
  return {{"mode", mode_name(p.kind)}, {"d0_mm", p.d0_mm}, {"d_prox_mm", p.d_prox_mm}, {"d_dist_mm", p.d_dist_mm}};
}

void emit(const json& j) { std::cout << j.dump() << std::endl; }

struct PhantomGenArgs {
  int cases = 30;
  std::string out;
};

void run_phantom_gen(const Globals& g, const PhantomGenArgs& a) {
  const auto base = end_to_end_config(g);
  PhantomConfig config = base.phantom;
  if (auto j = config_section(g, "phantom")) {
    json merged = json::parse(config.to_json());
    merged.update(*j);
    config = PhantomConfig::from_json(merged.dump());
  }
  const std::uint64_t seed = g.root_seed(base.seed);
  const auto m = generate_dataset(seed, a.cases, base.fractions, config, a.out);
  emit({{"command", "phantom-gen"},
        {"out", a.out},
        {"seed", seed},
        {"cases", m.cases.size()},
        {"train", m.select(Split::train).size()},
        {"val", m.select(Split::val).size()},
        {"test", m.select(Split::test).size()}});
}

struct EdtArgs {
  std::string tumor, out;
};

void run_edt(const EdtArgs& a) {
  const auto tumor = load_mask(a.tumor);
  const auto d = edt_exact(tumor);
  save_volume(d, a.out);
  const float max_d = d.size() ? *std::max_element(d.data().begin(), d.data().end()) : 0.0f;
  emit({{"command", "edt"}, {"out", a.out}, {"dims", d.dims()}, {"max_distance_mm", max_d}});
}

struct GateArgs {
  std::string dist, mode = "soft", out_prefix;
  GateFlags flags;
};

void run_gate(const GateArgs& a) {
  GatingParams p;
  a.flags.apply(p);
  p = gating_for_mode(a.mode, p);
  const auto w = apply_gate(load_scalar_volume(a.dist), p);
  save_volume(w.prox, a.out_prefix + "_prox");
  save_volume(w.dist, a.out_prefix + "_dist");
  write_text(a.out_prefix + "_gate.json", gating_json(p).dump(2) + "\n");
  emit({{"command", "gate"}, {"gating", gating_json(p)}, {"out_prefix", a.out_prefix}});
}

struct TrainArgs {
  std::string data, mode, out, log, split = "train";
  std::optional<int> steps, batch;
  std::optional<double> lr;
  GateFlags flags;
};

void run_train(const Globals& g, const TrainArgs& a) {
  TrainConfig config;
  if (auto j = config_section(g, "train")) config = TrainConfig::from_json(j->dump());
  // Seeds from a config file stand unless --seed is given.
  if (g.seed || g.config_path.empty()) seed_training(config, g.root_seed());
  if (!a.mode.empty()) config.gating.kind = parse_gate_kind(a.mode);
  a.flags.apply(config.gating);
  if (a.steps) config.steps = *a.steps;
  if (a.batch) config.batch = *a.batch;
  if (a.lr) config.lr = *a.lr;
  config.validate();

  const fs::path data(a.data);
  const auto manifest = load_manifest(data / "manifest.json");
  const auto cases = load_split(data, manifest, parse_split(a.split));
  if (cases.empty()) throw std::invalid_argument("split '" + a.split + "' of " + a.data + " is empty");

  const auto result = train_segmenter(cases, config, [&](int step, double loss) {
    if (step == 1 || step % 100 == 0) std::cerr << "step " << step << " loss " << loss << "\n";
  });
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_checkpoint(result.params, static_cast<std::uint64_t>(config.steps), out);
  const std::string log = a.log.empty() ? a.out + "_loss.csv" : a.log;
  save_loss_log(result.losses, log);
  write_text(a.out + "_train.json", json::parse(config.to_json()).dump(2) + "\n");
  emit({{"command", "train"},
        {"checkpoint", a.out},
        {"log", log},
        {"cases", cases.size()},
        {"initial_loss", result.losses.front()},
        {"final_loss", result.losses.back()},
        {"config", json::parse(config.to_json())}});
}

struct InferArgs {
  std::string checkpoint, case_dir, mode, out;
  std::vector<int> window, stride;
  GateFlags flags;
};

void run_infer(const Globals& g, const InferArgs& a) {
  const auto e2e = end_to_end_config(g);
  const auto ckpt = load_checkpoint(a.checkpoint);

  // Mode and thresholds default to those the checkpoint was trained with.
  GatingParams gating = e2e.train.gating;
  const auto train_json = a.checkpoint + "_train.json";
  if (g.config_path.empty() && fs::exists(train_json)) gating = TrainConfig::from_json(read_text(train_json)).gating;
  if (!a.mode.empty()) gating.kind = parse_gate_kind(a.mode);
  a.flags.apply(gating);
  gating.validate();

  SlidingWindowOptions window = e2e.window;
  if (!a.window.empty()) std::copy(a.window.begin(), a.window.end(), window.window.begin());
  if (!a.stride.empty()) std::copy(a.stride.begin(), a.stride.end(), window.stride.begin());

  const fs::path dir(a.case_dir);
  const auto id = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
  const auto record = prepare_case(load_raw_case(dir, id));
  const auto prob = sliding_window_predict(ckpt.params, record, window, gating);
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_volume(prob, out);
  emit({{"command", "infer"},
        {"case_id", id},
        {"out", a.out},
        {"gating", gating_json(gating)},
        {"window", window.window},
        {"stride", window.stride}});
}

struct EvalArgs {
  std::string pred_dir, gt_dir, out, curve_csv, instances_out;
  std::optional<double> threshold;
  std::optional<std::size_t> min_voxels;
  std::string confidence;
};

void run_eval(const Globals& g, const EvalArgs& a) {
  ExtractionOptions ex = end_to_end_config(g).extraction;
  if (a.threshold) ex.threshold = *a.threshold;
  if (a.min_voxels) ex.min_voxels = *a.min_voxels;
  if (!a.confidence.empty()) ex.confidence = parse_confidence_kind(a.confidence);

  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(a.pred_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") ids.push_back(entry.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw std::invalid_argument("no prediction volumes in " + a.pred_dir);

  std::vector<CaseDetections> detections(ids.size());
  std::vector<json> instances(ids.size());
  parallel_for(ids.size(), [&](std::size_t i) {
    const auto prob = load_scalar_volume(fs::path(a.pred_dir) / ids[i]);
    const auto gt = load_labels(fs::path(a.gt_dir) / ids[i] / "gtvln");
    const auto inst = extract_instances(prob, ex, ids[i]);
    const auto match = match_hits(inst, gt);
    detections[i] = make_case_detections(ids[i], inst, match);
    instances[i] = json::parse(instances_to_json(inst, match));
  });

  const auto report = evaluate(detections);
  json doc = json::parse(report_to_json(report));
  doc["config"] = {{"pred_dir", a.pred_dir},
                   {"gt_dir", a.gt_dir},
                   {"threshold", ex.threshold},
                   {"min_voxels", ex.min_voxels},
                   {"confidence", to_string(ex.confidence)}};
  write_text(a.out, doc.dump(2) + "\n");
  if (!a.curve_csv.empty()) write_text(a.curve_csv, curve_to_csv(report.curve));
  if (!a.instances_out.empty()) {
    json all = json::array();
    for (auto& per_case : instances)
      for (auto& item : per_case) all.push_back(std::move(item));
    write_text(a.instances_out, all.dump(2) + "\n");
  }
  emit({{"command", "eval"},
        {"out", a.out},
        {"cases", report.num_cases},
        {"mRecall", report.recall.mean},
        {"Recall_max", report.recall.max},
        {"mFROC", report.froc.mean}});
}

struct EndToEndArgs {
  std::string data, out_dir;
  bool oracle = false;
  std::optional<int> cases, steps;
  std::vector<std::string> modes;
};

void run_end_to_end_cmd(const Globals& g, const EndToEndArgs& a) {
  auto config = end_to_end_config(g);
  if (a.oracle) config.oracle = true;
  if (a.cases) config.n_cases = *a.cases;
  if (a.steps) config.train.steps = *a.steps;
  if (!a.modes.empty()) config.modes = a.modes;
  config.validate();

  const auto result = run_end_to_end(config, a.data);
  const fs::path out(a.out_dir);
  fs::create_directories(out);
  const auto csv = comparison_csv(result);
  write_text(out / "comparison.csv", csv);
  write_text(out / "comparison.json", comparison_json(result) + "\n");
  for (const auto& m : result.modes) {
    if (!m.losses.empty()) save_loss_log(m.losses, out / ("loss_" + m.mode + ".csv"));
  }
  std::cout << csv;
  std::cout.flush();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"distgate: distance-gated lymph node detection toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "root seed");
  app.add_option("--threads", g.threads, "worker threads (1 = serial)")->check(CLI::PositiveNumber);
  app.add_option("--config", g.config_path, "JSON configuration file")->check(CLI::ExistingFile);

  PhantomGenArgs pg;
  auto* phantom = app.add_subcommand("phantom-gen", "generate a synthetic dataset");
  phantom->add_option("--cases", pg.cases, "number of cases")->check(CLI::Range(3, 100000));
  phantom->add_option("--out", pg.out, "output directory")->required();

  EdtArgs ea;
  auto* edt = app.add_subcommand("edt", "distance map from a tumor mask");
  edt->add_option("--tumor", ea.tumor, "tumor mask volume")->required();
  edt->add_option("--out", ea.out, "output distance volume")->required();

  GateArgs ga;
  auto* gate = app.add_subcommand("gate", "gating weights from a distance map");
  gate->add_option("--dist", ga.dist, "distance volume")->required();
  gate->add_option("--mode", ga.mode, "binary | soft | single");
  ga.flags.add_to(gate);
  gate->add_option("--out-prefix", ga.out_prefix, "writes <prefix>_prox and <prefix>_dist")->required();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train the segmenter on a dataset split");
  train->add_option("--data", ta.data, "dataset directory with manifest.json")->required();
  train->add_option("--mode", ta.mode, "single | bg | sg");
  train->add_option("--out", ta.out, "checkpoint path")->required();
  train->add_option("--log", ta.log, "per-step loss CSV (default <out>_loss.csv)");
  train->add_option("--split", ta.split, "split to train on");
  train->add_option("--steps", ta.steps, "optimizer steps");
  train->add_option("--batch", ta.batch, "crops per step");
  train->add_option("--lr", ta.lr, "learning rate");
  ta.flags.add_to(train);

  InferArgs ia;
  auto* infer = app.add_subcommand("infer", "sliding-window prediction for one case");
  infer->add_option("--checkpoint", ia.checkpoint, "checkpoint path")->required();
  infer->add_option("--case", ia.case_dir, "case directory")->required();
  infer->add_option("--mode", ia.mode, "single | bg | sg");
  ia.flags.add_to(infer);
  infer->add_option("--window", ia.window, "window size x y z")->expected(3);
  infer->add_option("--stride", ia.stride, "window stride x y z")->expected(3);
  infer->add_option("--out", ia.out, "output probability volume")->required();

  EvalArgs va;
  auto* eval = app.add_subcommand("eval", "detection metrics over predicted volumes");
  eval->add_option("--pred-dir", va.pred_dir, "directory of <case_id> probability volumes")->required();
  eval->add_option("--gt-dir", va.gt_dir, "dataset directory with <case_id>/gtvln")->required();
  eval->add_option("--out", va.out, "report JSON")->required();
  eval->add_option("--curve-csv", va.curve_csv, "precision-recall curve CSV");
  eval->add_option("--instances-out", va.instances_out, "per-instance JSON");
  eval->add_option("--threshold", va.threshold, "probability threshold");
  eval->add_option("--min-voxels", va.min_voxels, "smallest kept component");
  eval->add_option("--confidence", va.confidence, "mean | max | p90");

  EndToEndArgs xa;
  auto* e2e = app.add_subcommand("end-to-end", "train and compare single, bg and sg");
  e2e->add_option("--data", xa.data, "dataset directory (default: generate in memory)");
  e2e->add_option("--out-dir", xa.out_dir, "output directory")->required();
  e2e->add_flag("--oracle", xa.oracle, "score the ground truth instead of trained models");
  e2e->add_option("--cases", xa.cases, "number of generated cases");
  e2e->add_option("--steps", xa.steps, "optimizer steps per mode");
  e2e->add_option("--modes", xa.modes, "modes to compare");

  std::string command = "distgate";
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"error", e.what()}, {"kind", "usage"}}.dump() << std::endl;
    return 2;
  }

  try {
    for (const auto* sub : app.get_subcommands()) command = sub->get_name();
    if (g.threads) set_thread_count(*g.threads);
    if (*phantom) run_phantom_gen(g, pg);
    else if (*edt) run_edt(ea);
    else if (*gate) run_gate(ga);
    else if (*train) run_train(g, ta);
    else if (*infer) run_infer(g, ia);
    else if (*eval) run_eval(g, va);
    else if (*e2e) run_end_to_end_cmd(g, xa);
  } catch (const std::exception& e) {
    std::cerr << json{{"error", e.what()}, {"command", command}}.dump() << std::endl;
    return 1;
  }
  return 0;
}
