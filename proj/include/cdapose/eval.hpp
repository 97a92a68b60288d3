#pragma once

// Keypoint evaluation: OKS, COCO-style mAP, PCK and multi-run reports.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "cdapose/config.hpp"
#include "cdapose/inference.hpp"
#include "cdapose/plot.hpp"
#include "cdapose/synth.hpp"

namespace cdapose {

/// Reference per-keypoint standard deviations for the 17-keypoint layout.
inline const std::vector<double>& coco_sigmas() {
  static const std::vector<double> s = {.026, .025, .025, .035, .035, .079, .079, .072, .072,
                                        .062, .062, .107, .107, .087, .087, .089, .089};
  return s;
}

struct OksParams {
  std::vector<double> k;  // per-keypoint falloff, 2 * sigma
  std::vector<double> thresholds = {0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95};

  void validate(std::size_t d) const {
    if (k.size() != d) throw ShapeError("oks: falloff constants do not match the keypoint count");
    for (double v : k)
      if (!(v > 0)) throw InvalidArgument("oks: falloff constants must be positive");
    for (double t : thresholds)
      if (!(t > 0 && t <= 1)) throw InvalidArgument("oks: thresholds must lie in (0, 1]");
  }
};

/// Falloff constants for a schema. Schemas aligned to the reference layout
/// inherit its constants; unmapped keypoints get the median.
inline OksParams oks_params_for(const SkeletonSchema& schema) {
  OksParams p;
  std::vector<double> ref;
  for (double s : coco_sigmas()) ref.push_back(2 * s);
  std::vector<double> sorted = ref;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[sorted.size() / 2];
  p.k.assign(schema.size(), median);
  if (schema.name == "coco17") {
    p.k = ref;
  } else if (schema.alignment && schema.alignment->target_schema == "coco17") {
    for (int i = 0; i < schema.size(); ++i)
      if (const auto& m = schema.alignment->map[i]) p.k[i] = ref[*m];
  }
  return p;
}

/// Mean over annotated ground-truth keypoints of exp(-d^2 / (2 s^2 k^2)).
/// Empty when the ground truth has no annotated keypoint.
inline std::optional<double> oks(const Pose& pred, const Pose& gt, std::span<const double> k, double scale) {
  if (pred.size() != gt.size() || k.size() != gt.size()) throw ShapeError("oks: poses and constants disagree in length");
  if (!(scale > 0)) throw InvalidArgument("oks: object scale must be positive");
  double sum = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!gt.keypoints[i].annotated()) continue;
    const double dx = pred.keypoints[i].x - gt.keypoints[i].x, dy = pred.keypoints[i].y - gt.keypoints[i].y;
    sum += std::exp(-(dx * dx + dy * dy) / (2 * scale * scale * k[i] * k[i]));
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

inline double object_scale(const BBox& box) { return std::sqrt(std::max(box.area(), 1e-12)); }

struct Detection {
  Pose pose;
  double score = 0.0;
};

struct GroundTruth {
  Pose pose;
  BBox bbox;
};

struct ImageEval {
  std::vector<Detection> detections;
  std::vector<GroundTruth> truths;
};

struct MapResult {
  std::optional<double> map;  // empty when no ground truth has annotated keypoints
  std::vector<double> thresholds;
  std::vector<double> ap;
};

/// Greedy matching of one image at one threshold. Detections are visited by
/// descending score (stable); each takes the unmatched ground truth of highest
/// OKS that reaches the threshold, ties to the lower index. Returns the
/// matched flag per visited detection, in visiting order.
inline std::vector<std::pair<double, bool>> match_image(const ImageEval& img, std::span<const double> k,
                                                        double threshold) {
  std::vector<std::size_t> order(img.detections.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return img.detections[a].score > img.detections[b].score; });
  std::vector<bool> taken(img.truths.size(), false);
  std::vector<std::pair<double, bool>> out;
  for (std::size_t di : order) {
    int best = -1;
    double best_oks = -1.0;
    for (std::size_t g = 0; g < img.truths.size(); ++g) {
      if (taken[g]) continue;
      const auto o = oks(img.detections[di].pose, img.truths[g].pose, k, object_scale(img.truths[g].bbox));
      if (!o || *o < threshold) continue;
      if (*o > best_oks) {
        best_oks = *o;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) taken[best] = true;
    out.emplace_back(img.detections[di].score, best >= 0);
  }
  return out;
}

/// 101-point interpolated average precision from score-ordered match flags.
inline double average_precision(std::vector<std::pair<double, bool>> hits, std::size_t positives) {
  if (positives == 0) return 0.0;
  std::stable_sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<double> recall, precision;
  double tp = 0, fp = 0;
  for (const auto& [_, hit] : hits) {
    (hit ? tp : fp) += 1;
    recall.push_back(tp / static_cast<double>(positives));
    precision.push_back(tp / (tp + fp));
  }
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  for (int r = 0; r <= 100; ++r) {
    const double level = r / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), level - 1e-12);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / 101.0;
}

/// COCO-style keypoint mAP over images. Ground truths without annotated
/// keypoints are ignored.
inline MapResult map_score(std::vector<ImageEval> images, const OksParams& params) {
  MapResult res;
  res.thresholds = params.thresholds;
  std::size_t positives = 0;
  for (auto& img : images) {
    std::erase_if(img.truths, [](const GroundTruth& g) { return g.pose.annotated_count() == 0; });
    positives += img.truths.size();
    for (const auto& g : img.truths) params.validate(g.pose.size());
  }
  if (positives == 0) return res;
  double total = 0.0;
  for (double t : params.thresholds) {
    std::vector<std::pair<double, bool>> hits;
    for (const auto& img : images) {
      const auto m = match_image(img, params.k, t);
      hits.insert(hits.end(), m.begin(), m.end());
    }
    res.ap.push_back(average_precision(std::move(hits), positives));
    total += res.ap.back();
  }
  res.map = total / static_cast<double>(params.thresholds.size());
  return res;
}

/// Share of annotated keypoints within fraction * longer bbox side.
/// Empty when the ground truth has no annotated keypoint.
inline std::optional<double> pck(const Pose& pred, const Pose& gt, const BBox& box, double fraction) {
  if (!(fraction > 0)) throw InvalidArgument("pck: fraction must be positive");
  if (pred.size() != gt.size()) throw ShapeError("pck: poses disagree in length");
  const double bound = fraction * box.max_side();
  int hit = 0, n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!gt.keypoints[i].annotated()) continue;
    ++n;
    hit += std::hypot(pred.keypoints[i].x - gt.keypoints[i].x, pred.keypoints[i].y - gt.keypoints[i].y) <= bound;
  }
  if (n == 0) return std::nullopt;
  return static_cast<double>(hit) / n;
}

struct EvalResult {
  std::optional<double> map;
  std::vector<double> thresholds;
  std::vector<double> ap;
  double pck = 0.0;  // pooled over all annotated keypoints
  double pck_fraction = 0.2;
  std::size_t instances = 0;
  std::string eval_set_hash;
  std::string config_hash;

  json to_json() const {
    json j;
    j["map"] = map ? json(*map) : json(nullptr);
    j["thresholds"] = thresholds;
    j["ap"] = ap;
    j["pck"] = pck;
    j["pck_fraction"] = pck_fraction;
    j["instances"] = instances;
    j["eval_set_hash"] = eval_set_hash;
    j["config_hash"] = config_hash;
    return j;
  }

  static EvalResult from_json(const json& j) {
    EvalResult r;
    if (!j.at("map").is_null()) r.map = j["map"].get<double>();
    r.thresholds = j.at("thresholds").get<std::vector<double>>();
    r.ap = j.at("ap").get<std::vector<double>>();
    r.pck = j.at("pck").get<double>();
    r.pck_fraction = j.value("pck_fraction", 0.2);
    r.instances = j.value("instances", std::size_t{0});
    r.eval_set_hash = j.value("eval_set_hash", std::string());
    r.config_hash = j.value("config_hash", std::string());
    return r;
  }
};

/// Identity of an evaluation set: ids plus ground-truth coordinates.
inline std::string eval_set_hash(const std::vector<const Instance*>& items, const HiddenTruth& truth) {
  std::string bytes;
  for (const auto* inst : items) {
    bytes += inst->id;
    bytes += '|';
    if (const auto it = truth.find(inst->id); it != truth.end())
      for (const auto& k : it->second.pose.keypoints) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.6f,%.6f,%d;", k.x, k.y, k.v);
        bytes += buf;
      }
  }
  return hex64(fnv1a(bytes));
}

/// Predicts every item and scores it against `truth` (one instance per image).
template <class T>
EvalResult evaluate(const Model<T>& model, const std::vector<const Instance*>& items, const HiddenTruth& truth,
                    const OksParams& params, double pck_fraction = 0.2) {
  EvalResult r;
  r.pck_fraction = pck_fraction;
  const auto preds = predict_poses(model, std::span<const Instance* const>(items));
  std::vector<ImageEval> images;
  int hits = 0, total = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto it = truth.find(items[i]->id);
    if (it == truth.end()) throw UserError("evaluate: no ground truth for instance " + items[i]->id);
    const GroundTruth gt{it->second.pose, it->second.bbox};
    images.push_back({{{preds[i].pose, preds[i].confidence}}, {gt}});
    const double bound = pck_fraction * gt.bbox.max_side();
    for (std::size_t k = 0; k < gt.pose.size(); ++k) {
      if (!gt.pose.keypoints[k].annotated()) continue;
      ++total;
      hits += std::hypot(preds[i].pose.keypoints[k].x - gt.pose.keypoints[k].x,
                         preds[i].pose.keypoints[k].y - gt.pose.keypoints[k].y) <= bound;
    }
  }
  const auto m = map_score(std::move(images), params);
  r.map = m.map;
  r.thresholds = m.thresholds;
  r.ap = m.ap;
  r.pck = total ? static_cast<double>(hits) / total : 0.0;
  r.instances = items.size();
  r.eval_set_hash = eval_set_hash(items, truth);
  return r;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct Toggles {
  bool animal_labeled = true;  // N_A
  bool human = false;          // H
  bool dan = false;            // DAN
  bool unlabeled = false;      // UA
  bool rebalanced = false;     // RB

  auto key() const { return std::tuple(animal_labeled, human, dan, unlabeled, rebalanced); }
};

/// Ablation toggles implied by a WS-CDA config document.
inline Toggles toggles_from_config(const json& wscda) {
  Toggles t;
  const auto batch = wscda.value("batch", json::object());
  const auto loss = wscda.value("loss", json::object());
  const auto model = wscda.value("model", json::object());
  t.animal_labeled = batch.value("animal", 0.25) > 0;
  t.human = batch.value("human", 0.5) > 0;
  t.dan = model.value("use_dan", true);
  t.unlabeled = batch.value("unlabeled", 0.25) > 0 && loss.value("alpha", -1.0) != 0.0;
  t.rebalanced = loss.value("w2", 10.0) > 1.0;
  return t;
}

struct RunRecord {
  std::string name;
  json config;  // WS-CDA config of the run
  std::vector<plot::Series> curves;
  EvalResult result;
};

struct Report {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  json table;
  std::vector<std::pair<std::string, std::string>> plots;  // file name, SVG text
};

inline Report make_report(std::vector<RunRecord> runs) {
  if (runs.empty()) throw InvalidArgument("report: no runs given");
  for (const auto& r : runs)
    if (r.result.eval_set_hash != runs.front().result.eval_set_hash)
      throw UserError("report: run '" + r.name + "' was evaluated on a different set (" + r.result.eval_set_hash +
                      " vs " + runs.front().result.eval_set_hash + ")");
  std::stable_sort(runs.begin(), runs.end(), [](const RunRecord& a, const RunRecord& b) {
    return toggles_from_config(a.config).key() < toggles_from_config(b.config).key();
  });
  Report rep;
  rep.columns = {"run", "N_A", "H", "DAN", "UA", "RB", "mAP", "PCK"};
  rep.table = json::array();
  auto mark = [](bool b) { return std::string(b ? "x" : ""); };
  for (const auto& r : runs) {
    const auto t = toggles_from_config(r.config);
    char map_buf[32] = "undefined", pck_buf[32];
    if (r.result.map) std::snprintf(map_buf, sizeof map_buf, "%.4f", *r.result.map);
    std::snprintf(pck_buf, sizeof pck_buf, "%.4f", r.result.pck);
    rep.rows.push_back({r.name, mark(t.animal_labeled), mark(t.human), mark(t.dan), mark(t.unlabeled),
                        mark(t.rebalanced), map_buf, pck_buf});
    rep.table.push_back({{"run", r.name},
                         {"N_A", t.animal_labeled},
                         {"H", t.human},
                         {"DAN", t.dan},
                         {"UA", t.unlabeled},
                         {"RB", t.rebalanced},
                         {"map", r.result.map ? json(*r.result.map) : json(nullptr)},
                         {"pck", r.result.pck},
                         {"eval_set_hash", r.result.eval_set_hash},
                         {"config_hash", r.result.config_hash}});
  }
  std::vector<std::string> metrics;
  for (const auto& r : runs)
    for (const auto& c : r.curves)
      if (std::find(metrics.begin(), metrics.end(), c.name) == metrics.end()) metrics.push_back(c.name);
  for (const auto& metric : metrics) {
    std::vector<plot::Series> series;
    for (const auto& r : runs)
      for (const auto& c : r.curves)
        if (c.name == metric) series.push_back({r.name, c.points});
    rep.plots.emplace_back("curve_" + metric + ".svg", plot::line_chart(metric, series, "epoch", metric));
  }
  return rep;
}

inline std::string report_csv(const Report& rep) {
  std::string out;
  for (std::size_t c = 0; c < rep.columns.size(); ++c) out += (c ? "," : "") + rep.columns[c];
  out += "\n";
  for (const auto& row : rep.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) out += (c ? "," : "") + row[c];
    out += "\n";
  }
  return out;
}

}  // namespace cdapose
