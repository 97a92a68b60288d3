#pragma once

// Progressive pseudo-label optimisation: alternating source / target
// training where target items enter through a self-paced confidence
// threshold that relaxes while labels keep being refreshed.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "cdapose/inference.hpp"
#include "cdapose/wscda_trainer.hpp"

namespace cdapose {

struct PseudoLabel {
  Pose pose;
  double confidence = 0.0;
  int epoch = 0;
  double mu_at_acceptance = 0.0;
};

/// Accepted pseudo labels keyed by instance id. Entries are replaced whole
/// and never evicted.
class PseudoLabelStore {
 public:
  void put(const std::string& id, PseudoLabel label) {
    if (!(label.confidence > label.mu_at_acceptance))
      throw ContractViolation("pseudo label for " + id + " does not clear its threshold");
    entries_[id] = std::move(label);
  }

  const PseudoLabel* find(const std::string& id) const {
    const auto it = entries_.find(id);
    return it == entries_.end() ? nullptr : &it->second;
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::map<std::string, PseudoLabel>& entries() const { return entries_; }

  json to_json() const {
    json arr = json::array();
    for (const auto& [id, e] : entries_) {
      std::vector<double> flat;
      for (const auto& k : e.pose.keypoints) {
        flat.push_back(k.x);
        flat.push_back(k.y);
        flat.push_back(k.v);
      }
      arr.push_back({{"id", id},
                     {"keypoints", flat},
                     {"confidence", e.confidence},
                     {"epoch", e.epoch},
                     {"mu_at_acceptance", e.mu_at_acceptance}});
    }
    return {{"pseudo_labels", arr}};
  }

  static PseudoLabelStore from_json(const json& j) {
    PseudoLabelStore s;
    for (const auto& e : j.at("pseudo_labels")) {
      PseudoLabel p;
      const auto flat = e.at("keypoints").get<std::vector<double>>();
      if (flat.size() % 3) throw ParseError("pseudo label keypoints must come in triples", 0);
      p.pose.schema_id = "coco17";
      for (std::size_t k = 0; k < flat.size(); k += 3)
        p.pose.keypoints.push_back({flat[k], flat[k + 1], static_cast<int>(flat[k + 2])});
      p.confidence = e.at("confidence").get<double>();
      p.epoch = e.at("epoch").get<int>();
      p.mu_at_acceptance = e.at("mu_at_acceptance").get<double>();
      s.put(e.at("id").get<std::string>(), std::move(p));
    }
    return s;
  }

 private:
  std::map<std::string, PseudoLabel> entries_;
};

struct PploConfig {
  double mu0 = 0.9;
  double mu_step = 0.01;
  int mu_window = 10;
  int k_source = 0;  // steps per source phase; 0: one pass over the labelled sources
  int k_target = 0;  // steps per target phase; 0: one pass over the accepted items
  int epochs = 30;
  double learning_rate = 1e-5;
  bool disturbance = true;
  bool source_ddl = true;  // keep the domain loss active in the source phase
  LossConfig loss;
  BatchComposition source_batch;
  int target_batch_size = 64;
  DisturbanceParams disturbance_params;
  double sigma = 2.0;
  std::uint64_t seed = 0;
  std::string out_dir;

  void validate() const {
    if (!(mu0 > 0.0 && mu0 <= 1.0)) throw ConfigError("pplo: mu0 must be in (0, 1]");
    if (!(mu_step > 0.0)) throw ConfigError("pplo: mu_step must be positive");
    if (mu_window < 1) throw ConfigError("pplo: mu_window must be >= 1");
    if (k_source < 0 || k_target < 0) throw ConfigError("pplo: step counts must be >= 0 (0 selects a full pass)");
    if (epochs < 0) throw ConfigError("pplo: epochs must be >= 0");
    if (!(learning_rate > 0)) throw ConfigError("pplo: learning rate must be positive");
    if (target_batch_size < 1) throw ConfigError("pplo: target_batch_size must be >= 1");
    if (source_ddl) loss.validate();
    source_batch.validate();
  }
};

inline json to_json(const PploConfig& c) {
  return {{"mu0", c.mu0},
          {"mu_step", c.mu_step},
          {"mu_window", c.mu_window},
          {"k_source", c.k_source},
          {"k_target", c.k_target},
          {"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"disturbance", c.disturbance},
          {"source_ddl", c.source_ddl},
          {"loss", to_json(c.loss)},
          {"source_batch", to_json(c.source_batch)},
          {"target_batch_size", c.target_batch_size},
          {"disturbance_params", to_json(c.disturbance_params)},
          {"sigma", c.sigma},
          {"seed", c.seed}};
}

inline PploConfig pplo_config_from_json(const json& j) {
  using namespace config_detail;
  const std::string w = "pplo";
  check_keys(j, {"mu0", "mu_step", "mu_window", "k_source", "k_target", "epochs", "learning_rate", "disturbance",
                 "source_ddl", "loss", "source_batch", "target_batch_size", "disturbance_params", "sigma", "seed",
                 "out_dir"},
             w);
  PploConfig c;
  read(j, "mu0", c.mu0, w);
  read(j, "mu_step", c.mu_step, w);
  read(j, "mu_window", c.mu_window, w);
  read(j, "k_source", c.k_source, w);
  read(j, "k_target", c.k_target, w);
  read(j, "epochs", c.epochs, w);
  read(j, "learning_rate", c.learning_rate, w);
  read(j, "disturbance", c.disturbance, w);
  read(j, "source_ddl", c.source_ddl, w);
  if (j.contains("loss")) c.loss = loss_config_from_json(j["loss"]);
  if (j.contains("source_batch")) {
    const auto& b = j["source_batch"];
    check_keys(b, {"human", "animal", "unlabeled", "batch_size"}, "pplo.source_batch");
    read(b, "human", c.source_batch.human, w);
    read(b, "animal", c.source_batch.animal, w);
    read(b, "unlabeled", c.source_batch.unlabeled, w);
    read(b, "batch_size", c.source_batch.batch_size, w);
  }
  read(j, "target_batch_size", c.target_batch_size, w);
  if (j.contains("disturbance_params")) c.disturbance_params = disturbance_from_json(j["disturbance_params"]);
  read(j, "sigma", c.sigma, w);
  read(j, "seed", c.seed, w);
  read(j, "out_dir", c.out_dir, w);
  c.validate();
  return c;
}

/// 1 iff confidence strictly exceeds the threshold.
inline int confidence_filter(double confidence, double mu) { return confidence > mu ? 1 : 0; }

/// Threshold after one relaxation window: lowered by one step when any
/// label was written during the window, floored at zero.
inline double relax_mu(double mu, std::size_t updates_in_window, const PploConfig& cfg) {
  if (updates_in_window == 0) return mu;
  return std::max(0.0, mu - cfg.mu_step);
}

/// Ids whose prediction clears `mu`, in input order.
inline std::vector<std::string> accepted_ids(std::span<const Instance* const> items,
                                             std::span<const DecodedPose> predictions, double mu) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < items.size(); ++i)
    if (confidence_filter(predictions[i].confidence, mu)) out.push_back(items[i]->id);
  return out;
}

/// One sweep of the frozen model over the target set. Returns the number of
/// entries written.
template <class T>
std::size_t refresh_pseudo_labels(const Model<T>& model, const AnnotationSet& target, PseudoLabelStore& store,
                                  double mu, int epoch) {
  if (target.instances.empty()) return 0;
  const auto items = pointers(target.instances);
  const auto preds = predict_poses(model, std::span<const Instance* const>(items));
  std::size_t written = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!confidence_filter(preds[i].confidence, mu)) continue;
    PseudoLabel p{preds[i].pose, preds[i].confidence, epoch, mu};
    p.pose.schema_id = target.schema.name;
    store.put(items[i]->id, std::move(p));
    ++written;
  }
  return written;
}

enum class Phase { source, refresh, target, relax };

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::source: return "source";
    case Phase::refresh: return "refresh";
    case Phase::target: return "target";
    case Phase::relax: return "relax";
  }
  return "?";
}

struct PhaseEvent {
  int epoch = 0;
  Phase phase = Phase::source;
  int steps = 0;          // gradient steps taken (source / target)
  std::size_t count = 0;  // labels written (refresh)
  double mu = 0.0;        // threshold in effect after the phase
  std::string note;
};

struct PploMetrics {
  int epoch = 0;
  double mu = 0.0;
  std::size_t accepted_count = 0;
  std::size_t new_or_updated_count = 0;
  double source_loss = 0.0;
  double target_loss = 0.0;
};

inline const char* kPploCsvHeader = "epoch,mu,accepted_count,new_or_updated_count,source_loss,target_loss";

inline std::string to_csv_row(const PploMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.4f,%zu,%zu,%.9g,%.9g", m.epoch, m.mu, m.accepted_count, m.new_or_updated_count,
                m.source_loss, m.target_loss);
  return buf;
}

struct PploState {
  PseudoLabelStore store;
  double mu = 0.9;
  int epoch = 0;
  std::size_t updates_in_window = 0;
  std::vector<double> mu_history;  // threshold used by each epoch's refresh
  std::vector<PhaseEvent> phases;
  std::vector<PploMetrics> log;
  RmsProp<float> optimizer;
  std::uint64_t step = 0;
};

inline PploState make_pplo_state(const PploConfig& cfg) {
  PploState s;
  s.mu = cfg.mu0;
  return s;
}

struct PploSources {
  const AnnotationSet* human = nullptr;
  const AnnotationSet* animal = nullptr;
  const AnnotationSet* target = nullptr;  // pose-unlabelled target items (z = 1)
};

/// One PPLO epoch: source phase, pseudo-label refresh, target phase, and a
/// threshold relaxation at window boundaries.
inline void pplo_epoch(Model<float>& model, const PploSources& src, PploState& state, const PploConfig& cfg) {
  const TargetEncoding enc{model.config.grid_height(), model.config.grid_width(), cfg.sigma,
                           model.config.output_stride};
  const AnnotationSet& human = *src.human;
  const AnnotationSet& animal = *src.animal;
  const AnnotationSet& target = *src.target;
  const std::uint64_t epoch_seed = cfg.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(state.epoch) * 7919;
  auto disturb = [&]() -> std::optional<std::uint64_t> {
    if (!cfg.disturbance) return std::nullopt;
    return epoch_seed + 1000003ULL * ++state.step;
  };
  PploMetrics m;
  m.epoch = state.epoch;
  m.mu = state.mu;

  // Source phase.
  {
    LossConfig loss = cfg.loss;
    if (!cfg.source_ddl) loss.alpha = 0.0;
    const std::array<const AnnotationSet*, 3> sets = {&human, &animal, &target};
    const auto counts =
        cfg.source_batch.counts({!human.instances.empty(), !animal.instances.empty(), cfg.source_ddl && !target.instances.empty()});
    std::vector<SourceCursor> cursors;
    for (int s = 0; s < 3; ++s) cursors.emplace_back(sets[s]->instances.size(), epoch_seed + 31 * (s + 1));
    const std::size_t labelled = human.instances.size() + animal.instances.size();
    const int k_s = cfg.k_source > 0 ? cfg.k_source
                                     : static_cast<int>((labelled + cfg.source_batch.batch_size - 1) /
                                                        cfg.source_batch.batch_size);
    double total = 0.0;
    for (int step = 0; step < k_s; ++step) {
      std::vector<BatchItem> items;
      for (int k = 0; k < 3; ++k)
        for (int c = 0; c < counts[k]; ++c) items.push_back({&sets[k]->instances[cursors[k].next()], nullptr});
      const auto batch = assemble_batch<float>(items, enc, disturb(), cfg.disturbance_params);
      total += adversarial_step(model, batch, loss, state.optimizer, cfg.learning_rate).pose;
    }
    m.source_loss = k_s ? total / k_s : 0.0;
    state.phases.push_back({state.epoch, Phase::source, k_s, 0, state.mu, ""});
  }

  // Refresh with the post-source model.
  state.mu_history.push_back(state.mu);
  const std::size_t written = refresh_pseudo_labels(model, target, state.store, state.mu, state.epoch);
  state.updates_in_window += written;
  m.new_or_updated_count = written;
  m.accepted_count = state.store.size();
  state.phases.push_back({state.epoch, Phase::refresh, 0, written, state.mu, ""});

  // Target phase over stored pseudo labels only.
  {
    std::vector<BatchItem> pool;
    for (const auto& inst : target.instances)
      if (const auto* p = state.store.find(inst.id)) pool.push_back({&inst, &p->pose});
    int k_t = 0;
    double total = 0.0;
    std::string note;
    if (pool.empty()) {
      note = "no pseudo labels; target phase skipped";
    } else {
      k_t = cfg.k_target > 0 ? cfg.k_target
                             : static_cast<int>((pool.size() + cfg.target_batch_size - 1) / cfg.target_batch_size);
      SourceCursor cursor(pool.size(), epoch_seed + 977);
      const int bs = std::min<int>(cfg.target_batch_size, static_cast<int>(pool.size()));
      for (int step = 0; step < k_t; ++step) {
        std::vector<BatchItem> items;
        for (int c = 0; c < bs; ++c) items.push_back(pool[cursor.next()]);
        const auto batch = assemble_batch<float>(items, enc, disturb(), cfg.disturbance_params);
        const auto trace = model.forward(batch.images);
        nn::Tensor<float> d_heat(trace.heatmaps.n, trace.heatmaps.c, trace.heatmaps.h, trace.heatmaps.w);
        const std::vector<int> accept(batch.size(), 1);
        const auto tl = pplo_target_loss<float>(trace.heatmaps, batch.targets, accept, &d_heat,
                                                static_cast<float>(cfg.loss.beta));
        const auto grads = model.backward(trace, &d_heat, {});
        state.optimizer.step(model, grads, cfg.learning_rate);
        total += tl.value;
      }
      m.target_loss = total / k_t;
    }
    state.phases.push_back({state.epoch, Phase::target, k_t, 0, state.mu, note});
  }

  // Threshold relaxation.
  if ((state.epoch + 1) % cfg.mu_window == 0) {
    state.mu = relax_mu(state.mu, state.updates_in_window, cfg);
    state.phases.push_back({state.epoch, Phase::relax, 0, state.updates_in_window, state.mu, ""});
    state.updates_in_window = 0;
  }
  state.log.push_back(m);
  ++state.epoch;
}

struct PploResult {
  Model<float> model;
  PploState state;
  std::string config_hash;
};

inline void write_pplo_log(const std::filesystem::path& path, const std::vector<PploMetrics>& log) {
  std::ofstream out(path);
  if (!out) throw UserError("cannot write " + path.string());
  out << kPploCsvHeader << "\n";
  for (const auto& m : log) out << to_csv_row(m) << "\n";
}

/// Runs `cfg.epochs` PPLO epochs on a WS-CDA-trained model.
inline PploResult run_pplo(Model<float> model, const PploSources& src, const PploConfig& cfg) {
  cfg.validate();
  if (!src.human || !src.animal || !src.target) throw ConfigError("run_pplo: human, animal and target sets are required");
  if (src.animal->instances.empty() && src.human->instances.empty())
    throw ConfigError("run_pplo: no labelled source data");
  for (const auto& inst : src.target->instances)
    if (inst.z != 1) throw ConfigError("run_pplo: target item " + inst.id + " is not marked z = 1");
  PploResult r;
  r.config_hash = config_hash(to_json(cfg));
  r.state = make_pplo_state(cfg);
  for (int e = 0; e < cfg.epochs; ++e) {
    pplo_epoch(model, src, r.state, cfg);
    const auto& last = r.state.log.back();
    if (!std::isfinite(last.source_loss) || !std::isfinite(last.target_loss)) {
      if (!cfg.out_dir.empty())
        save_checkpoint(model, {{"kind", "pplo"}, {"epoch", last.epoch}, {"aborted", true}},
                        std::filesystem::path(cfg.out_dir) / "pplo_nan_abort.ckpt.json");
      throw NumericalError("run_pplo: non-finite loss at epoch " + std::to_string(last.epoch));
    }
  }
  r.model = std::move(model);
  return r;
}

}  // namespace cdapose
