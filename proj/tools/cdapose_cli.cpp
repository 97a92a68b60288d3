// Command-line front end: dataset ingestion and analysis, synthetic data,
// training (WS-CDA, PPLO, supervised boost), evaluation and reports.
//
// Exit codes: 0 success, 1 user or configuration error, 2 internal error.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "cdapose/checkpoint.hpp"
#include "cdapose/config.hpp"
#include "cdapose/datasets.hpp"
#include "cdapose/eval.hpp"
#include "cdapose/image_io.hpp"
#include "cdapose/manifest.hpp"
#include "cdapose/plot.hpp"
#include "cdapose/pplo.hpp"
#include "cdapose/synth_config.hpp"
#include "cdapose/wscda_trainer.hpp"

namespace fs = std::filesystem;
using namespace cdapose;

namespace {

struct Globals {
  std::string out_root;
  std::vector<std::string> overrides;
  bool quiet = false;
};

fs::path out_root(const Globals& g) {
  if (!g.out_root.empty()) return g.out_root;
  if (const char* env = std::getenv("CDAPOSE_OUT"); env && *env) return env;
  return "runs";
}

void warn(const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw UserError("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

json load_with_overrides(const fs::path& path, const std::vector<std::string>& overrides) {
  json doc = load_config_file(path);
  for (const auto& o : overrides) apply_override(doc, o);
  return doc;
}

fs::path resolve(const fs::path& base_dir, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

struct IngestArgs {
  std::vector<std::string> files;
  bool align = false;
  std::string table;
  double train_fraction = -1.0;
  std::uint64_t seed = 0;
  std::string output;
};

int cmd_ingest(const Globals& g, const IngestArgs& a) {
  const fs::path out_path = a.output.empty() ? out_root(g) / "ingested.json" : fs::path(a.output);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  const fs::path out_dir = fs::absolute(out_path).parent_path();
  AnnotationSet merged;
  bool first = true;
  for (const auto& f : a.files) {
    AnnotationSet set = parse_annotations(f);
    if (a.align || !a.table.empty()) {
      if (!a.table.empty())
        set.schema.alignment = schemas::make_alignment(set.schema, schemas::coco17(), load_alignment_table(a.table));
      if (!set.schema.alignment) throw ConfigError(f + ": schema " + set.schema.name + " has no alignment to coco17");
      set = align_set(set, schemas::by_name("coco17"));
    }
    const fs::path src_dir = fs::absolute(fs::path(f)).parent_path();
    for (auto& inst : set.instances)
      if (!inst.file_name.empty())
        inst.file_name = fs::relative(src_dir / inst.file_name, out_dir).generic_string();
    if (first) {
      merged.schema = set.schema;
      first = false;
    } else if (merged.schema.keypoint_names != set.schema.keypoint_names) {
      throw SchemaError(f + ": keypoint schema differs from the earlier inputs (use --align)");
    }
    for (auto& inst : set.instances) merged.instances.push_back(std::move(inst));
  }
  merged.validate();
  if (a.train_fraction >= 0.0) {
    auto r = split(merged, {a.train_fraction, 1.0 - a.train_fraction}, a.seed);
    for (const auto& w : r.warnings) warn(w);
    merged = std::move(r.set);
  }
  write_annotations(merged, out_path);
  std::cout << "schema " << merged.schema.name << " (" << merged.schema.size() << " keypoints), "
            << merged.size() << " instances\n";
  for (const auto& [name, n] : merged.class_counts()) std::cout << "  " << name << ": " << n << "\n";
  RunManifest m;
  m.command = "ingest";
  m.inputs = a.files;
  m.outputs = {out_path.string()};
  m.config_hash = config_hash({{"files", a.files}, {"align", a.align}, {"table", a.table},
                               {"train_fraction", a.train_fraction}, {"seed", a.seed}});
  if (a.train_fraction >= 0.0) m.seeds["split"] = a.seed;
  m.write(out_path.parent_path() / (out_path.stem().string() + ".manifest.json"));
  return 0;
}

// ---------------------------------------------------------------------------
// analyze-bones
// ---------------------------------------------------------------------------

int cmd_analyze_bones(const Globals& g, const std::string& set_path, std::string out_dir_arg) {
  const fs::path out_dir = out_dir_arg.empty() ? out_root(g) / "bones" : fs::path(out_dir_arg);
  const AnnotationSet set = parse_annotations(set_path);
  if (set.instances.empty()) throw UserError(set_path + ": the set is empty");
  const auto rep = compute_bone_proportions(set, set.schema.bones);
  if (rep.classes.empty()) throw UserError(set_path + ": no class has a measurable bone");
  fs::create_directories(out_dir);
  std::vector<std::string> names;
  if (set.schema.bones == schemas::coco17().bones) names = schemas::coco17_bone_names();
  else
    for (const auto& [a, b] : set.schema.bones) names.push_back(set.schema.keypoint_names[a] + "-" + set.schema.keypoint_names[b]);
  std::vector<std::pair<std::string, std::vector<double>>> series;
  for (const auto& c : rep.classes) series.emplace_back(c, rep.profiles.at(c).proportions);
  write_json(out_dir / "bones.json", rep.to_json(names));
  write_text(out_dir / "bones.svg", plot::bar_chart("bone length proportions", names, series));
  for (const auto& c : rep.absent) warn("class '" + c + "' has no measurable instance");
  std::cout << "bone profiles for " << rep.classes.size() << " classes written to " << out_dir.string() << "\n";
  RunManifest m;
  m.command = "analyze-bones";
  m.inputs = {set_path};
  m.outputs = {(out_dir / "bones.json").string(), (out_dir / "bones.svg").string()};
  m.config_hash = config_hash({{"set", set_path}});
  m.write(out_dir / "manifest.json");
  return 0;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

int cmd_synth(const Globals& g, const std::string& config, std::string out_dir_arg) {
  const json cfg = load_with_overrides(config, g.overrides);
  const fs::path out_dir = out_dir_arg.empty() ? out_root(g) / fs::path(config).stem() : fs::path(out_dir_arg);
  auto data = synth_dataset_from_config(cfg);
  for (const auto& w : data.warnings) warn(w);
  fs::create_directories(out_dir / "images");
  for (const auto* set : {&data.source, &data.target})
    for (const auto& inst : set->instances) write_pnm(inst.image, out_dir / inst.file_name);
  write_annotations(data.source, out_dir / "source.json");
  write_annotations(data.target, out_dir / "target.json");
  write_annotations(truth_as_set(data.target, data.truth), out_dir / "target_truth.json");
  std::cout << "source: " << data.source.size() << " labelled instances; target: " << data.target.size()
            << " pose-free instances\n";
  for (const auto& [name, n] : data.source.class_counts()) std::cout << "  " << name << ": " << n << "\n";
  RunManifest m;
  m.command = "synth";
  m.config_hash = config_hash(cfg);
  m.seeds["synth"] = cfg.value("seed", std::uint64_t{1});
  m.inputs = {config};
  m.outputs = {(out_dir / "source.json").string(), (out_dir / "target.json").string(),
               (out_dir / "target_truth.json").string()};
  m.extra = {{"config", cfg}};
  m.write(out_dir / "manifest.json");
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string name;
  std::string checkpoint;
  int n_gt = -1;
};

struct TrainData {
  AnnotationSet human, animal, unlabeled;
  std::vector<std::string> inputs;
};

TrainData load_train_data(const json& doc, const fs::path& base, const ModelConfig& model) {
  if (!doc.contains("data")) throw ConfigError("train config: missing \"data\" section");
  const auto& d = doc["data"];
  config_detail::check_keys(d, {"source", "target", "truth"}, "data");
  if (!d.contains("source")) throw ConfigError("data: \"source\" is required");
  TrainData out;
  const fs::path src = resolve(base, d["source"].get<std::string>());
  const AnnotationSet source = parse_annotations(src, {true});
  out.inputs.push_back(src.string());
  out.human.schema = out.animal.schema = out.unlabeled.schema = source.schema;
  for (const auto& inst : source.instances) {
    if (inst.split == Split::test) continue;
    if (inst.z == 1) throw ConfigError(src.string() + ": source item " + inst.id + " has no pose");
    (inst.y == 0 ? out.human : out.animal).instances.push_back(inst);
  }
  if (d.contains("target")) {
    const fs::path tgt = resolve(base, d["target"].get<std::string>());
    const AnnotationSet target = parse_annotations(tgt, {true});
    out.inputs.push_back(tgt.string());
    if (target.schema.keypoint_names != source.schema.keypoint_names)
      throw SchemaError(tgt.string() + ": keypoint schema differs from the source set");
    for (const auto& inst : target.instances) {
      if (inst.split == Split::test) continue;
      if (inst.z != 1) throw ConfigError(tgt.string() + ": target item " + inst.id + " is not marked as target");
      out.unlabeled.instances.push_back(inst);
    }
  }
  for (const auto* set : {&out.human, &out.animal, &out.unlabeled})
    for (const auto& inst : set->instances)
      if (inst.image.height != model.input_height || inst.image.width != model.input_width ||
          inst.image.channels != model.input_channels)
        throw ConfigError("image of instance " + inst.id + " is " + std::to_string(inst.image.width) + "x" +
                          std::to_string(inst.image.height) + "; the model expects " +
                          std::to_string(model.input_width) + "x" + std::to_string(model.input_height));
  return out;
}

/// Moves the first `n` unlabelled target items into the labelled animal
/// pool using the evaluator's ground truth.
void add_labeled_targets(TrainData& data, const fs::path& truth_path, int n) {
  if (n == 0) return;
  if (n < 0 || n > static_cast<int>(data.unlabeled.instances.size()))
    throw ConfigError("n_gt = " + std::to_string(n) + " exceeds the " +
                      std::to_string(data.unlabeled.instances.size()) + " unlabelled target items");
  const HiddenTruth truth = truth_from_set(parse_annotations(truth_path));
  data.inputs.push_back(truth_path.string());
  for (int i = 0; i < n; ++i) {
    Instance inst = data.unlabeled.instances[i];
    const auto it = truth.find(inst.id);
    if (it == truth.end()) throw UserError(truth_path.string() + ": no ground truth for " + inst.id);
    inst.z = 0;
    inst.pose = it->second.pose;
    data.animal.instances.push_back(std::move(inst));
  }
  data.unlabeled.instances.erase(data.unlabeled.instances.begin(), data.unlabeled.instances.begin() + n);
}

WscdaConfig wscda_section(const json& doc) {
  return wscda_config_from_json(doc.value("wscda", json::object()));
}

PploConfig pplo_section(const json& doc) { return pplo_config_from_json(doc.value("pplo", json::object())); }

std::string run_name(const json& doc, const TrainArgs& a) {
  if (!a.name.empty()) return a.name;
  return doc.value("name", std::string("run"));
}

struct WscdaOutcome {
  fs::path final_checkpoint;
};

WscdaOutcome run_wscda_stage(const Globals& g, const json& doc, const TrainData& data, const fs::path& dir,
                             const std::string& command) {
  WscdaConfig cfg = wscda_section(doc);
  cfg.out_dir = dir.string();
  auto model = Model<float>::build(cfg.model, cfg.seed);
  auto res = train_wscda(std::move(model), {&data.human, &data.animal, &data.unlabeled}, cfg,
                         [&](const EpochMetrics& m) {
                           if (!g.quiet) std::cout << "wscda " << to_csv_row(m) << "\n";
                         });
  for (const auto& w : res.warnings) warn(w);
  RunManifest m;
  m.command = command;
  m.config_hash = res.config_hash;
  m.seeds["wscda"] = cfg.seed;
  m.inputs = data.inputs;
  m.checkpoints = res.checkpoints;
  m.logs = {(dir / "wscda_metrics.csv").string()};
  m.stage_reached = res.stage_reached;
  m.extra = {{"parameter_checksum", hex64(parameter_checksum(res.model))}, {"config", doc}};
  m.write(dir / "manifest.json");
  std::cout << "wscda finished at stage " << res.stage_reached << "; checkpoint "
            << (dir / "wscda_final.ckpt.json").string() << "\n";
  return {dir / "wscda_final.ckpt.json"};
}

fs::path run_pplo_stage(const Globals& g, const json& doc, const TrainData& data, const fs::path& checkpoint,
                        const fs::path& dir, const std::string& command) {
  if (!fs::exists(checkpoint))
    throw UserError("pplo needs a WS-CDA checkpoint; " + checkpoint.string() + " does not exist (run 'train wscda' first)");
  auto ck = load_checkpoint<float>(checkpoint);
  if (ck.meta.value("kind", std::string()) != "wscda")
    throw UserError(checkpoint.string() + " is not a WS-CDA checkpoint (kind '" + ck.meta.value("kind", std::string()) + "')");
  PploConfig cfg = pplo_section(doc);
  cfg.out_dir = dir.string();
  fs::create_directories(dir);
  auto res = run_pplo(std::move(ck.model), {&data.human, &data.animal, &data.unlabeled}, cfg);
  if (!g.quiet)
    for (const auto& m : res.state.log) std::cout << "pplo " << to_csv_row(m) << "\n";
  write_pplo_log(dir / "pplo_metrics.csv", res.state.log);
  {
    std::ofstream ph(dir / "pplo_phases.csv");
    ph << "epoch,phase,steps,count,mu,note\n";
    for (const auto& e : res.state.phases)
      ph << e.epoch << "," << to_string(e.phase) << "," << e.steps << "," << e.count << "," << e.mu << "," << e.note
         << "\n";
  }
  write_json(dir / "pseudo_labels.json", res.state.store.to_json());
  const fs::path final_ck = dir / "pplo_final.ckpt.json";
  json meta = {{"kind", "pplo"},
               {"epoch", res.state.epoch},
               {"mu", res.state.mu},
               {"config_hash", res.config_hash},
               {"config", ck.meta.value("config", json::object())},
               {"pplo_config", to_json(cfg)},
               {"wscda_checkpoint", checkpoint.string()}};
  save_checkpoint(res.model, meta, final_ck);
  RunManifest m;
  m.command = command;
  m.config_hash = res.config_hash;
  m.seeds["pplo"] = cfg.seed;
  m.inputs = data.inputs;
  m.inputs.push_back(checkpoint.string());
  m.checkpoints = {final_ck.string()};
  m.logs = {(dir / "pplo_metrics.csv").string(), (dir / "pplo_phases.csv").string()};
  m.outputs = {(dir / "pseudo_labels.json").string()};
  m.extra = {{"parameter_checksum", hex64(parameter_checksum(res.model))},
             {"accepted", res.state.store.size()},
             {"final_mu", res.state.mu},
             {"config", doc}};
  m.write(dir / "manifest.json");
  std::cout << "pplo accepted " << res.state.store.size() << " pseudo labels (mu " << res.state.mu
            << "); checkpoint " << final_ck.string() << "\n";
  return final_ck;
}

int cmd_train(const Globals& g, const std::string& mode, const TrainArgs& a) {
  const json doc = load_with_overrides(a.config, g.overrides);
  config_detail::check_keys(doc, {"name", "data", "wscda", "pplo", "n_gt"}, "train config");
  const fs::path base = fs::absolute(fs::path(a.config)).parent_path();
  const fs::path run_dir = out_root(g) / run_name(doc, a);
  const WscdaConfig wcfg = wscda_section(doc);
  TrainData data = load_train_data(doc, base, wcfg.model);

  if (mode == "wscda") {
    run_wscda_stage(g, doc, data, run_dir / "wscda", "train wscda");
    return 0;
  }
  if (mode == "pplo") {
    pplo_section(doc);
    const fs::path ck = a.checkpoint.empty() ? run_dir / "wscda" / "wscda_final.ckpt.json" : fs::path(a.checkpoint);
    run_pplo_stage(g, doc, data, ck, run_dir / "pplo", "train pplo");
    return 0;
  }
  // supervised-boost: WS-CDA then PPLO with n_gt target items labelled.
  const int n_gt = a.n_gt >= 0 ? a.n_gt : doc.value("n_gt", 0);
  pplo_section(doc);
  if (n_gt > 0) {
    if (!doc["data"].contains("truth")) throw ConfigError("supervised-boost with n_gt > 0 needs data.truth");
    add_labeled_targets(data, resolve(base, doc["data"]["truth"].get<std::string>()), n_gt);
  }
  const fs::path dir = run_dir / ("boost_n" + std::to_string(n_gt));
  const auto w = run_wscda_stage(g, doc, data, dir / "wscda", "train supervised-boost");
  run_pplo_stage(g, doc, data, w.final_checkpoint, dir / "pplo", "train supervised-boost");
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string set;
  std::string truth;
  std::string split = "test";
  std::string output;
  double pck_fraction = 0.2;
};

int cmd_eval(const Globals&, const EvalArgs& a) {
  const auto ck = load_checkpoint<float>(a.checkpoint);
  const AnnotationSet set = parse_annotations(a.set, {true});
  const HiddenTruth truth = truth_from_set(parse_annotations(a.truth));
  std::vector<const Instance*> items;
  std::size_t train_items = 0;
  for (const auto& inst : set.instances) {
    const bool take = a.split == "all" || (a.split == "test" && inst.split == Split::test) ||
                      (a.split == "train" && inst.split == Split::train);
    if (!take) continue;
    items.push_back(&inst);
    train_items += inst.split == Split::train;
  }
  if (a.split != "all" && a.split != "test" && a.split != "train")
    throw UserError("--split must be test, train or all");
  if (items.empty()) throw UserError(a.set + ": no instances in split '" + a.split + "'");
  if (train_items > 0)
    warn("evaluating on " + std::to_string(train_items) + " instances tagged as training data");
  auto result = evaluate(ck.model, items, truth, oks_params_for(set.schema), a.pck_fraction);
  result.config_hash = ck.meta.value("config_hash", std::string());
  const fs::path ck_path(a.checkpoint);
  const fs::path out = a.output.empty() ? ck_path.parent_path() / ("eval_" + a.split + ".json") : fs::path(a.output);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::string name = ck_path.parent_path().parent_path().filename().string();
  if (name.empty()) name = ck_path.stem().string();
  name += "/" + ck_path.parent_path().filename().string();
  const fs::path log = ck_path.parent_path() / "wscda_metrics.csv";
  json doc = {{"run", name},
              {"checkpoint", a.checkpoint},
              {"split", a.split},
              {"config", ck.meta.value("config", json::object())},
              {"result", result.to_json()},
              {"metrics_log", fs::exists(log) ? log.string() : std::string()}};
  write_json(out, doc);
  std::cout << "PCK@" << a.pck_fraction << " " << result.pck << "  mAP "
            << (result.map ? std::to_string(*result.map) : std::string("undefined")) << "  (" << result.instances
            << " instances) -> " << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// export-pseudo-labels
// ---------------------------------------------------------------------------

int cmd_export(const Globals&, const std::string& store_path, const std::string& set_path, const std::string& output) {
  const auto store = PseudoLabelStore::from_json(detail::parse_json_text(detail::read_text(store_path), store_path));
  const AnnotationSet target = parse_annotations(set_path);
  AnnotationSet out;
  out.schema = target.schema;
  for (const auto& inst : target.instances) {
    const auto* p = store.find(inst.id);
    if (!p) continue;
    Instance copy = inst;
    copy.z = 0;
    copy.pose = p->pose;
    copy.pose->schema_id = target.schema.name;
    out.instances.push_back(std::move(copy));
  }
  if (out.instances.size() != store.size())
    warn(std::to_string(store.size() - out.instances.size()) + " stored labels have no instance in " + set_path);
  json doc = annotations_to_json(out);
  for (auto& a : doc["annotations"]) {
    const std::string id = a["id"].is_string() ? a["id"].get<std::string>() : a["id"].dump();
    const auto* p = store.find(id);
    a["score"] = p->confidence;
    a["pseudo_label"] = {{"epoch", p->epoch}, {"mu_at_acceptance", p->mu_at_acceptance}};
  }
  const fs::path out_path(output);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  write_text(out_path, doc.dump(1) + "\n");
  std::cout << out.instances.size() << " pseudo-labelled instances written to " << output << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

std::vector<plot::Series> read_curves(const std::string& csv_path) {
  std::vector<plot::Series> out;
  if (csv_path.empty() || !fs::exists(csv_path)) return out;
  std::ifstream in(csv_path);
  std::string line;
  if (!std::getline(in, line)) return out;
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) header.push_back(cell);
  }
  const std::vector<std::string> wanted = {"ddl", "apel", "hpel", "disc_acc_z"};
  std::vector<int> cols;
  for (const auto& w : wanted) {
    const auto it = std::find(header.begin(), header.end(), w);
    cols.push_back(it == header.end() ? -1 : static_cast<int>(it - header.begin()));
    out.push_back({w, {}});
  }
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.empty()) continue;
    const double x = std::stod(cells[0]);
    for (std::size_t c = 0; c < cols.size(); ++c) {
      if (cols[c] < 0 || cols[c] >= static_cast<int>(cells.size())) continue;
      const double v = std::strtod(cells[cols[c]].c_str(), nullptr);
      if (std::isfinite(v)) out[c].points.emplace_back(x, v);
    }
  }
  std::erase_if(out, [](const plot::Series& s) { return s.points.empty(); });
  return out;
}

int cmd_report(const Globals& g, const std::vector<std::string>& results, std::string out_dir_arg) {
  const fs::path out_dir = out_dir_arg.empty() ? out_root(g) / "report" : fs::path(out_dir_arg);
  std::vector<RunRecord> runs;
  for (const auto& path : results) {
    const json doc = detail::parse_json_text(detail::read_text(path), path);
    RunRecord r;
    r.name = doc.value("run", fs::path(path).stem().string());
    r.config = doc.value("config", json::object());
    r.result = EvalResult::from_json(doc.at("result"));
    r.curves = read_curves(doc.value("metrics_log", std::string()));
    runs.push_back(std::move(r));
  }
  const Report rep = make_report(std::move(runs));
  fs::create_directories(out_dir);
  write_json(out_dir / "report.json", rep.table);
  write_text(out_dir / "report.csv", report_csv(rep));
  RunManifest m;
  m.command = "report";
  m.inputs = results;
  m.outputs = {(out_dir / "report.json").string(), (out_dir / "report.csv").string()};
  for (const auto& [file, svg] : rep.plots) {
    write_text(out_dir / file, svg);
    m.outputs.push_back((out_dir / file).string());
  }
  m.config_hash = config_hash(results);
  m.write(out_dir / "manifest.json");
  std::cout << report_csv(rep);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-domain adaptation for animal pose estimation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--out", g.out_root, "Output root (default: $CDAPOSE_OUT or ./runs)");
  app.add_option("--set", g.overrides, "Override a config key, e.g. --set wscda.loss.w2=1")->allow_extra_args(false);
  app.add_flag("-q,--quiet", g.quiet, "Suppress per-epoch progress");

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Parse, align and merge annotation files");
  c_ingest->add_option("files", ingest.files, "Annotation JSON files")->required()->check(CLI::ExistingFile);
  c_ingest->add_flag("--align", ingest.align, "Map keypoints onto the 17-keypoint reference skeleton");
  c_ingest->add_option("--alignment-table", ingest.table, "Name -> name JSON table (implies --align)")
      ->check(CLI::ExistingFile);
  c_ingest->add_option("--split", ingest.train_fraction, "Tag a seeded, stratified train/test split")
      ->check(CLI::Range(0.0, 1.0));
  c_ingest->add_option("--seed", ingest.seed, "Split seed");
  c_ingest->add_option("-o,--output", ingest.output, "Output annotation file");

  std::string bones_set, bones_out;
  auto* c_bones = app.add_subcommand("analyze-bones", "Per-class bone length proportions");
  c_bones->add_option("set", bones_set, "Annotation file")->required();
  c_bones->add_option("-o,--output-dir", bones_out, "Output directory");

  std::string synth_cfg, synth_out;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic multi-domain dataset");
  c_synth->add_option("-c,--config", synth_cfg, "Synthetic dataset config")->required();
  c_synth->add_option("-o,--output-dir", synth_out, "Output directory");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train a model");
  c_train->require_subcommand(1);
  std::string train_mode;
  for (const char* mode : {"wscda", "pplo", "supervised-boost"}) {
    auto* sub = c_train->add_subcommand(mode, std::string("Run ") + mode);
    sub->add_option("-c,--config", train.config, "Training config")->required();
    sub->add_option("--name", train.name, "Run name (default: config 'name')");
    if (std::string(mode) == "pplo") sub->add_option("--checkpoint", train.checkpoint, "WS-CDA checkpoint");
    if (std::string(mode) == "supervised-boost")
      sub->add_option("--n-gt", train.n_gt, "Labelled target instances to add")->check(CLI::NonNegativeNumber);
    sub->callback([&train_mode, mode] { train_mode = mode; });
  }

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a target set");
  c_eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  c_eval->add_option("--set", ev.set, "Annotation file with the images")->required();
  c_eval->add_option("--truth", ev.truth, "Ground-truth sidecar")->required();
  c_eval->add_option("--split", ev.split, "test, train or all")->capture_default_str();
  c_eval->add_option("--pck", ev.pck_fraction, "PCK fraction of the longer bbox side")->capture_default_str();
  c_eval->add_option("-o,--output", ev.output, "Results file");

  std::string store, export_set, export_out;
  auto* c_export = app.add_subcommand("export-pseudo-labels", "Write accepted pseudo labels as annotations");
  c_export->add_option("--store", store, "pseudo_labels.json from a PPLO run")->required();
  c_export->add_option("--set", export_set, "Target annotation file")->required();
  c_export->add_option("-o,--output", export_out, "Output annotation file")->required();

  std::vector<std::string> report_in;
  std::string report_out;
  auto* c_report = app.add_subcommand("report", "Compare evaluated runs");
  c_report->add_option("results", report_in, "Results files written by eval")->required();
  c_report->add_option("-o,--output-dir", report_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*c_ingest) return cmd_ingest(g, ingest);
    if (*c_bones) return cmd_analyze_bones(g, bones_set, bones_out);
    if (*c_synth) return cmd_synth(g, synth_cfg, synth_out);
    if (*c_train) return cmd_train(g, train_mode, train);
    if (*c_eval) return cmd_eval(g, ev);
    if (*c_export) return cmd_export(g, store, export_set, export_out);
    if (*c_report) return cmd_report(g, report_in, report_out);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const json::exception& e) {
    std::cerr << "error: malformed input: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
