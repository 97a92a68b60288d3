#pragma once

// Weakly- and semi-supervised cross-domain adaptation: mixed human /
// labelled-animal / unlabelled-animal batches trained adversarially through
// a three-stage schedule.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cdapose/checkpoint.hpp"
#include "cdapose/config.hpp"
#include "cdapose/losses.hpp"
#include "cdapose/optim.hpp"

namespace cdapose {

struct StageSpec {
  double learning_rate = 1e-4;
  bool disturbance = false;
};

struct AdvanceRule {
  int window = 3;            // consecutive flat epochs required
  double tolerance = 1e-3;   // relative improvement of the moving average
  int average = 5;           // moving-average length
  int max_epochs = 50;       // per stage
};

struct StageSchedule {
  std::vector<StageSpec> stages = {{1e-4, false}, {1e-4, true}, {1e-5, true}};
  AdvanceRule rule;

  void validate() const {
    if (stages.empty()) throw ConfigError("schedule: at least one stage is required");
    for (const auto& s : stages)
      if (!(s.learning_rate > 0)) throw ConfigError("schedule: learning rates must be positive");
    if (rule.window < 1 || rule.average < 1 || rule.max_epochs < 1 || !(rule.tolerance >= 0))
      throw ConfigError("schedule: invalid advancement rule");
  }
};

/// True once the relative improvement of the trailing moving average has
/// stayed below tolerance for `window` consecutive epochs, or the stage has
/// run `max_epochs` epochs.
inline bool stage_advance(const std::vector<double>& history, const AdvanceRule& rule) {
  if (history.empty()) throw InvalidArgument("stage_advance: empty loss history");
  if (static_cast<int>(history.size()) >= rule.max_epochs) return true;
  auto moving = [&](std::size_t end) {  // mean of history[end - average, end)
    const std::size_t begin = end > static_cast<std::size_t>(rule.average) ? end - rule.average : 0;
    return std::accumulate(history.begin() + begin, history.begin() + end, 0.0) / static_cast<double>(end - begin);
  };
  const std::size_t n = history.size();
  if (n < static_cast<std::size_t>(rule.window) + 1) return false;
  for (int k = 0; k < rule.window; ++k) {
    const double cur = moving(n - k), prev = moving(n - k - 1);
    const double rel = prev != 0.0 ? (prev - cur) / std::abs(prev) : (prev - cur);
    if (!(rel < rule.tolerance)) return false;
  }
  return true;
}

struct BatchComposition {
  double human = 0.5;
  double animal = 0.25;
  double unlabeled = 0.25;
  int batch_size = 64;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch: batch_size must be >= 1");
    if (human < 0 || animal < 0 || unlabeled < 0 || std::abs(human + animal + unlabeled - 1.0) > 1e-9)
      throw ConfigError("batch: fractions must be non-negative and sum to 1");
  }

  /// Items per source. Fractions of empty sources are redistributed over the
  /// others; counts use largest-remainder rounding with ties to the earlier
  /// source, then every non-empty source with a positive fraction is lifted
  /// to at least one item (taken from the largest share).
  std::array<int, 3> counts(std::array<bool, 3> available) const {
    validate();
    std::array<double, 3> f = {human, animal, unlabeled};
    double live = 0.0;
    for (int s = 0; s < 3; ++s) {
      if (!available[s]) f[s] = 0.0;
      live += f[s];
    }
    std::array<int, 3> out{0, 0, 0};
    if (live <= 0.0) return out;
    int assigned = 0;
    std::array<double, 3> rem{};
    for (int s = 0; s < 3; ++s) {
      const double exact = f[s] / live * batch_size;
      out[s] = static_cast<int>(std::floor(exact));
      rem[s] = exact - out[s];
      assigned += out[s];
    }
    while (assigned < batch_size) {
      int best = -1;
      for (int s = 0; s < 3; ++s)
        if (f[s] > 0 && (best < 0 || rem[s] > rem[best] + 1e-12)) best = s;
      ++out[best];
      rem[best] = -1.0;
      ++assigned;
    }
    for (int s = 0; s < 3; ++s) {
      if (f[s] > 0 && out[s] == 0) {
        const int donor = static_cast<int>(std::max_element(out.begin(), out.end()) - out.begin());
        if (out[donor] > 1) {
          --out[donor];
          ++out[s];
        }
      }
    }
    return out;
  }
};

struct WscdaConfig {
  ModelConfig model;
  LossConfig loss;
  StageSchedule schedule;
  BatchComposition batch;
  DisturbanceParams disturbance;
  double sigma = 2.0;          // heatmap target std in grid cells
  std::uint64_t seed = 0;
  int steps_per_epoch = 0;     // 0: one pass over the labelled sources
  std::string optimizer = "rmsprop";
  int checkpoint_every = 0;    // epochs; 0 disables periodic checkpoints
  std::string out_dir;         // empty: no files written

  TargetEncoding encoding() const {
    return {model.grid_height(), model.grid_width(), sigma, model.output_stride};
  }

  void validate() const {
    model.validate();
    if (loss.alpha != 0.0) loss.validate();
    else if (!(loss.w2 >= 1.0) || !(loss.w1 > 0.0) || !(loss.beta > 0.0))
      throw ConfigError("loss: supervised-only mode (alpha = 0) needs w1 > 0, w2 >= 1, beta > 0");
    schedule.validate();
    batch.validate();
    if (!(sigma > 0)) throw ConfigError("sigma must be positive");
    if (steps_per_epoch < 0) throw ConfigError("steps_per_epoch must be >= 0");
    if (optimizer != "rmsprop" && optimizer != "sgd") throw ConfigError("optimizer must be rmsprop or sgd");
  }
};

inline json to_json(const StageSchedule& s) {
  json stages = json::array();
  for (const auto& st : s.stages) stages.push_back({{"learning_rate", st.learning_rate}, {"disturbance", st.disturbance}});
  return {{"stages", stages},
          {"window", s.rule.window},
          {"tolerance", s.rule.tolerance},
          {"average", s.rule.average},
          {"max_epochs", s.rule.max_epochs}};
}

inline json to_json(const BatchComposition& b) {
  return {{"human", b.human}, {"animal", b.animal}, {"unlabeled", b.unlabeled}, {"batch_size", b.batch_size}};
}

inline json to_json(const WscdaConfig& c) {
  return {{"model", to_json(c.model)},
          {"loss", to_json(c.loss)},
          {"schedule", to_json(c.schedule)},
          {"batch", to_json(c.batch)},
          {"disturbance", to_json(c.disturbance)},
          {"sigma", c.sigma},
          {"seed", c.seed},
          {"steps_per_epoch", c.steps_per_epoch},
          {"optimizer", c.optimizer},
          {"checkpoint_every", c.checkpoint_every}};
}

inline WscdaConfig wscda_config_from_json(const json& j) {
  using namespace config_detail;
  check_keys(j, {"model", "loss", "schedule", "batch", "disturbance", "sigma", "seed", "steps_per_epoch", "optimizer",
                 "checkpoint_every", "out_dir"},
             "wscda");
  WscdaConfig c;
  if (j.contains("model")) c.model = model_config_from_json(j["model"]);
  if (j.contains("loss")) c.loss = loss_config_from_json(j["loss"]);
  if (j.contains("schedule")) {
    const auto& s = j["schedule"];
    check_keys(s, {"stages", "window", "tolerance", "average", "max_epochs"}, "schedule");
    if (s.contains("stages")) {
      c.schedule.stages.clear();
      for (const auto& st : s["stages"]) {
        check_keys(st, {"learning_rate", "disturbance"}, "schedule.stages");
        StageSpec spec;
        read(st, "learning_rate", spec.learning_rate, "schedule.stages");
        read(st, "disturbance", spec.disturbance, "schedule.stages");
        c.schedule.stages.push_back(spec);
      }
    }
    read(s, "window", c.schedule.rule.window, "schedule");
    read(s, "tolerance", c.schedule.rule.tolerance, "schedule");
    read(s, "average", c.schedule.rule.average, "schedule");
    read(s, "max_epochs", c.schedule.rule.max_epochs, "schedule");
  }
  if (j.contains("batch")) {
    const auto& b = j["batch"];
    check_keys(b, {"human", "animal", "unlabeled", "batch_size"}, "batch");
    read(b, "human", c.batch.human, "batch");
    read(b, "animal", c.batch.animal, "batch");
    read(b, "unlabeled", c.batch.unlabeled, "batch");
    read(b, "batch_size", c.batch.batch_size, "batch");
  }
  if (j.contains("disturbance")) c.disturbance = disturbance_from_json(j["disturbance"]);
  read(j, "sigma", c.sigma, "wscda");
  read(j, "seed", c.seed, "wscda");
  read(j, "steps_per_epoch", c.steps_per_epoch, "wscda");
  read(j, "optimizer", c.optimizer, "wscda");
  read(j, "checkpoint_every", c.checkpoint_every, "wscda");
  read(j, "out_dir", c.out_dir, "wscda");
  c.validate();
  return c;
}

struct EpochMetrics {
  int epoch = 0;
  int stage = 0;
  double ddl = 0.0;
  double apel = 0.0;
  double hpel = 0.0;
  double disc_acc_y = 0.0;
  double disc_acc_z = 0.0;
  double lr = 0.0;
};

inline const char* kWscdaCsvHeader = "epoch,stage,ddl,apel,hpel,disc_acc_y,disc_acc_z,lr";

inline std::string to_csv_row(const EpochMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%d,%.9g,%.9g,%.9g,%.6f,%.6f,%.3g", m.epoch, m.stage, m.ddl, m.apel, m.hpel,
                m.disc_acc_y, m.disc_acc_z, m.lr);
  return buf;
}

/// Endless reshuffled walk over a source; one derived seed per source.
class SourceCursor {
 public:
  SourceCursor(std::size_t size, std::uint64_t seed) : rng_(seed), order_(size) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
  }

  std::size_t next() {
    if (pos_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

  bool empty() const { return order_.empty(); }

 private:
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

struct TrainResult {
  Model<float> model;
  std::vector<EpochMetrics> log;
  int stage_reached = 0;
  std::string config_hash;
  std::vector<std::string> checkpoints;
  std::vector<std::string> warnings;
};

namespace trainer_detail {

inline void write_log(const std::filesystem::path& path, const std::vector<EpochMetrics>& log) {
  std::ofstream out(path);
  if (!out) throw UserError("cannot write " + path.string());
  out << kWscdaCsvHeader << "\n";
  for (const auto& m : log) out << to_csv_row(m) << "\n";
}

}  // namespace trainer_detail

struct WscdaSources {
  const AnnotationSet* human = nullptr;
  const AnnotationSet* animal = nullptr;
  const AnnotationSet* unlabeled = nullptr;  // may be empty
};

/// Trains `model` in place through every stage of the schedule.
/// `on_epoch` is called after each logged epoch.
inline TrainResult train_wscda(Model<float> model, const WscdaSources& src, const WscdaConfig& cfg,
                               const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  cfg.validate();
  if (!src.human || !src.animal) throw ConfigError("train_wscda: human and animal sources are required");
  if (src.human->instances.empty() && cfg.batch.human > 0)
    throw ConfigError("train_wscda: the human source is empty");
  if (src.animal->instances.empty()) throw ConfigError("train_wscda: the labelled animal source is empty");
  for (const auto* set : {src.human, src.animal})
    for (const auto& inst : set->instances)
      if (!inst.pose || inst.z != 0) throw ConfigError("train_wscda: labelled sources must carry poses (id " + inst.id + ")");
  static const AnnotationSet kEmpty;
  const AnnotationSet& unl = src.unlabeled ? *src.unlabeled : kEmpty;
  for (const auto& inst : unl.instances)
    if (inst.z != 1) throw ConfigError("train_wscda: unlabelled source item " + inst.id + " has z = 0");

  const json cfg_json = to_json(cfg);
  TrainResult res;
  res.config_hash = config_hash(cfg_json);
  const TargetEncoding enc = cfg.encoding();
  const std::array<const AnnotationSet*, 3> sets = {src.human, src.animal, &unl};
  const auto counts = cfg.batch.counts({!src.human->instances.empty(), true, !unl.instances.empty()});
  std::vector<SourceCursor> cursors;
  for (int s = 0; s < 3; ++s) cursors.emplace_back(sets[s]->instances.size(), cfg.seed * 7919 + 101 * (s + 1));
  const std::size_t labelled = src.human->instances.size() + src.animal->instances.size();
  const int steps = cfg.steps_per_epoch > 0
                        ? cfg.steps_per_epoch
                        : static_cast<int>((labelled + cfg.batch.batch_size - 1) / cfg.batch.batch_size);

  RmsProp<float> rms;
  Sgd<float> sgd;
  const std::filesystem::path out_dir = cfg.out_dir;
  if (!cfg.out_dir.empty()) std::filesystem::create_directories(out_dir);
  auto checkpoint = [&](const std::string& tag, int stage, int epoch) {
    if (cfg.out_dir.empty()) return;
    const auto path = out_dir / ("wscda_" + tag + ".ckpt.json");
    save_checkpoint(model, {{"kind", "wscda"}, {"stage", stage}, {"epoch", epoch}, {"config_hash", res.config_hash}, {"config", cfg_json}}, path);
    res.checkpoints.push_back(path.string());
  };

  int epoch = 0;
  std::uint64_t global_step = 0;
  for (std::size_t s = 0; s < cfg.schedule.stages.size(); ++s) {
    const StageSpec& stage = cfg.schedule.stages[s];
    res.stage_reached = static_cast<int>(s);
    std::vector<double> history;
    while (true) {
      EpochMetrics m;
      m.epoch = epoch;
      m.stage = static_cast<int>(s);
      m.lr = stage.learning_rate;
      double pose_sum = 0.0;
      int z_batches = 0;
      for (int step = 0; step < steps; ++step, ++global_step) {
        std::vector<BatchItem> items;
        for (int k = 0; k < 3; ++k)
          for (int c = 0; c < counts[k]; ++c) items.push_back({&sets[k]->instances[cursors[k].next()], nullptr});
        std::optional<std::uint64_t> dseed;
        if (stage.disturbance) dseed = cfg.seed * 1000000007ULL + global_step;
        const auto batch = assemble_batch<float>(items, enc, dseed, cfg.disturbance);
        const StepStats st = cfg.optimizer == "sgd" ? adversarial_step(model, batch, cfg.loss, sgd, stage.learning_rate)
                                                    : adversarial_step(model, batch, cfg.loss, rms, stage.learning_rate);
        if (st.single_domain && res.warnings.empty())
          res.warnings.push_back("single-domain batch; DDL gradient applied anyway");
        m.ddl += st.ddl;
        m.apel += st.apel;
        m.hpel += st.hpel;
        m.disc_acc_y += st.disc_acc_y;
        if (!std::isnan(st.disc_acc_z)) {
          m.disc_acc_z += st.disc_acc_z;
          ++z_batches;
        }
        pose_sum += st.pose;
      }
      m.ddl /= steps;
      m.apel /= steps;
      m.hpel /= steps;
      m.disc_acc_y /= steps;
      m.disc_acc_z = z_batches ? m.disc_acc_z / z_batches : std::nan("");
      res.log.push_back(m);
      if (on_epoch) on_epoch(m);
      if (!std::isfinite(m.ddl) || !std::isfinite(pose_sum)) {
        checkpoint("nan_abort", static_cast<int>(s), epoch);
        if (!cfg.out_dir.empty()) trainer_detail::write_log(out_dir / "wscda_metrics.csv", res.log);
        throw NumericalError("train_wscda: non-finite loss at epoch " + std::to_string(epoch));
      }
      history.push_back(pose_sum / steps);
      ++epoch;
      if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0)
        checkpoint("epoch" + std::to_string(epoch), static_cast<int>(s), epoch);
      if (stage_advance(history, cfg.schedule.rule)) break;
    }
    checkpoint("stage" + std::to_string(s), static_cast<int>(s), epoch);
  }
  if (!cfg.out_dir.empty()) {
    trainer_detail::write_log(out_dir / "wscda_metrics.csv", res.log);
    checkpoint("final", res.stage_reached, epoch);
  }
  res.model = std::move(model);
  return res;
}

}  // namespace cdapose
