#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cdapose/eval.hpp"
#include "cdapose/wscda_trainer.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace cdapose;
using namespace cdapose::testing;

namespace {

Pose pose_of(std::vector<Keypoint> k) {
  Pose p;
  p.schema_id = "test";
  p.keypoints = std::move(k);
  return p;
}

/// Oracle OKS for one detection against one GT; nullopt without annotated GT keypoints.
std::optional<double> oracle_oks(const Pose& pred, const Pose& gt, const std::vector<double>& k, const BBox& box) {
  const double s = std::sqrt(box.w * box.h);
  double sum = 0;
  int n = 0;
  for (std::size_t i = 0; i < gt.keypoints.size(); ++i) {
    if (gt.keypoints[i].v == 0) continue;
    sum += oracle::oks_single(pred.keypoints[i].x - gt.keypoints[i].x, pred.keypoints[i].y - gt.keypoints[i].y, s, k[i]);
    ++n;
  }
  if (!n) return std::nullopt;
  return sum / n;
}

struct RandomCase {
  std::vector<ImageEval> images;
  OksParams params;
};

RandomCase random_case(std::mt19937_64& rng) {
  const int d = 3;
  std::uniform_int_distribution<int> n_img(1, 3), n_obj(0, 3), coord(0, 6), vis(0, 4);
  std::uniform_int_distribution<int> score_bin(0, 3);  // coarse scores provoke ties
  RandomCase c;
  c.params.k = {0.3, 0.5, 0.8};
  const int images = n_img(rng);
  for (int i = 0; i < images; ++i) {
    ImageEval img;
    const int g = n_obj(rng), p = n_obj(rng);
    for (int j = 0; j < g; ++j) {
      std::vector<Keypoint> k;
      for (int q = 0; q < d; ++q) k.push_back({double(coord(rng)), double(coord(rng)), vis(rng) == 0 ? 0 : 2});
      img.truths.push_back({pose_of(k), BBox{0, 0, 4.0 + coord(rng), 4.0 + coord(rng)}});
    }
    for (int j = 0; j < p; ++j) {
      std::vector<Keypoint> k;
      for (int q = 0; q < d; ++q) k.push_back({double(coord(rng)), double(coord(rng)), 2});
      img.detections.push_back({pose_of(k), 0.25 * score_bin(rng)});
    }
    c.images.push_back(std::move(img));
  }
  return c;
}

std::optional<double> oracle_map(const RandomCase& c) {
  std::vector<oracle::BruteDet> dets;
  std::vector<int> gts;
  for (std::size_t i = 0; i < c.images.size(); ++i) {
    std::vector<const GroundTruth*> kept;
    for (const auto& g : c.images[i].truths)
      if (oracle_oks(g.pose, g.pose, c.params.k, g.bbox)) kept.push_back(&g);
    gts.push_back(static_cast<int>(kept.size()));
    for (const auto& det : c.images[i].detections) {
      oracle::BruteDet b{static_cast<int>(i), det.score, {}};
      for (const auto* g : kept) b.oks.push_back(*oracle_oks(det.pose, g->pose, c.params.k, g->bbox));
      dets.push_back(b);
    }
  }
  int positives = 0;
  for (int g : gts) positives += g;
  if (!positives) return std::nullopt;
  double total = 0;
  for (double t : c.params.thresholds) total += oracle::brute_force_ap(dets, gts, t);
  return total / static_cast<double>(c.params.thresholds.size());
}

}  // namespace

// ---------------------------------------------------------------------------
// OKS and PCK
// ---------------------------------------------------------------------------

TEST(Oks, OneSigmaDisplacementGivesExpMinusHalf) {
  // s = 10, k = 0.1, displacement 1: exp(-1 / (2 * 100 * 0.01)).
  const auto gt = pose_of({{5, 5, 2}});
  const auto pred = pose_of({{6, 5, 2}});
  const std::vector<double> k = {0.1};
  EXPECT_NEAR(*oks(pred, gt, k, object_scale({0, 0, 10, 10})), std::exp(-0.5), 1e-9);
}

TEST(Oks, PerfectPredictionIsOne) {
  const auto gt = pose_of({{1, 2, 2}, {3, 4, 1}});
  const std::vector<double> k = {0.2, 0.2};
  EXPECT_NEAR(*oks(gt, gt, k, 5.0), 1.0, 1e-12);
}

TEST(Oks, UnannotatedKeypointsAreIgnored) {
  const auto gt = pose_of({{5, 5, 2}, {0, 0, 0}});
  const auto pred = pose_of({{5, 5, 2}, {100, 100, 2}});
  const std::vector<double> k = {0.1, 0.1};
  EXPECT_NEAR(*oks(pred, gt, k, 10.0), 1.0, 1e-12);
  EXPECT_FALSE(oks(pred, pose_of({{0, 0, 0}, {0, 0, 0}}), k, 10.0).has_value());
}

TEST(Oks, ReferenceConstantsForAlignedSchemas) {
  const auto p = oks_params_for(schemas::coco17());
  ASSERT_EQ(p.k.size(), 17u);
  EXPECT_DOUBLE_EQ(p.k[0], 0.052);
  EXPECT_DOUBLE_EQ(p.k[16], 0.178);
}

TEST(OksProperty, MatchesOracleOnRandomPoses) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.05, 0.5);
  for (int t = 0; t < 100; ++t) {
    const auto gt = random_pose(rng, 5, 40, 40, 0.3);
    const auto pred = random_pose(rng, 5, 40, 40);
    std::vector<double> k;
    for (int i = 0; i < 5; ++i) k.push_back(u(rng));
    const BBox box{0, 0, 10 + 30 * u(rng), 10 + 30 * u(rng)};
    const auto got = oks(pred, gt, k, object_scale(box));
    const auto want = oracle_oks(pred, gt, k, box);
    ASSERT_EQ(got.has_value(), want.has_value());
    if (got) {
      EXPECT_NEAR(*got, *want, 1e-12);
    }
  }
}

TEST(Pck, CountsKeypointsInsideTheBound) {
  const auto gt = pose_of({{0, 0, 2}, {10, 0, 2}, {0, 10, 0}});
  const auto pred = pose_of({{2, 0, 2}, {10, 3, 2}, {50, 50, 2}});
  const BBox box{0, 0, 10, 5};  // bound 0.2 * 10 = 2
  EXPECT_DOUBLE_EQ(*pck(pred, gt, box, 0.2), 0.5);
  EXPECT_DOUBLE_EQ(*pck(pred, gt, box, 0.3), 1.0);
  EXPECT_THROW(pck(pred, gt, box, 0.0), InvalidArgument);
}

// ---------------------------------------------------------------------------
// mAP
// ---------------------------------------------------------------------------

TEST(Map, PerfectSingleDetectionIsOne) {
  const auto gt = pose_of({{1, 1, 2}, {3, 3, 2}, {5, 1, 2}});
  OksParams p;
  p.k = {0.3, 0.3, 0.3};
  const auto r = map_score({{{{gt, 0.9}}, {{gt, {0, 0, 6, 6}}}}}, p);
  ASSERT_TRUE(r.map.has_value());
  EXPECT_DOUBLE_EQ(*r.map, 1.0);
}

TEST(Map, NoAnnotatedGroundTruthIsUndefined) {
  OksParams p;
  p.k = {0.3};
  const auto r = map_score({{{{pose_of({{1, 1, 2}}), 0.5}}, {{pose_of({{0, 0, 0}}), {0, 0, 4, 4}}}}}, p);
  EXPECT_FALSE(r.map.has_value());
}

TEST(Map, DuplicateDetectionCountsAsFalsePositive) {
  const auto gt = pose_of({{1, 1, 2}});
  OksParams p;
  p.k = {0.3};
  p.thresholds = {0.5};
  // Higher-scored duplicate is wrong, the lower one correct: precision 1/2 at recall 1.
  const auto far = pose_of({{40, 40, 2}});
  const auto r = map_score({{{{far, 0.9}, {gt, 0.8}}, {{gt, {0, 0, 6, 6}}}}}, p);
  EXPECT_DOUBLE_EQ(*r.map, 0.5);
}

TEST(MapProperty, EqualsBruteForceMatching) {
  std::mt19937_64 rng(2024);
  int defined = 0;
  for (int t = 0; t < 300; ++t) {
    const auto c = random_case(rng);
    const auto want = oracle_map(c);
    const auto got = map_score(c.images, c.params);
    ASSERT_EQ(got.map.has_value(), want.has_value()) << "case " << t;
    if (!want) continue;
    ++defined;
    EXPECT_EQ(*got.map, *want) << "case " << t;
  }
  EXPECT_GE(defined, 100);
}

// ---------------------------------------------------------------------------
// Evaluation and reports
// ---------------------------------------------------------------------------

TEST(Evaluate, ScoresModelPredictionsAgainstTruth) {
  std::mt19937_64 rng(5);
  auto cfg = tiny_config();
  const auto model = Model<float>::build(cfg, 5);
  std::vector<Instance> items;
  HiddenTruth truth;
  for (int i = 0; i < 6; ++i) {
    Instance inst;
    inst.id = "t" + std::to_string(i);
    inst.image = random_image(rng, 16, 16);
    inst.y = 1;
    inst.z = 1;
    const auto pose = random_pose(rng, 3, 16, 16);
    truth[inst.id] = {pose, keypoint_extent(pose, 1.0)};
    items.push_back(inst);
  }
  const auto ptrs = pointers(items);
  const auto preds = predict_poses(model, std::span<const Instance* const>(ptrs));
  const auto r = evaluate(model, ptrs, truth, OksParams{{0.2, 0.2, 0.2}});
  int hit = 0, n = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& gt = truth[items[i].id];
    for (std::size_t k = 0; k < 3; ++k) {
      ++n;
      hit += std::hypot(preds[i].pose.keypoints[k].x - gt.pose.keypoints[k].x,
                        preds[i].pose.keypoints[k].y - gt.pose.keypoints[k].y) <= 0.2 * gt.bbox.max_side();
    }
  }
  EXPECT_DOUBLE_EQ(r.pck, static_cast<double>(hit) / n);
  EXPECT_EQ(r.instances, 6u);
  EXPECT_EQ(r.eval_set_hash, eval_set_hash(ptrs, truth));
  items.pop_back();
  EXPECT_NE(r.eval_set_hash, eval_set_hash(pointers(items), truth));
  HiddenTruth missing = truth;
  missing.erase("t0");
  EXPECT_THROW(evaluate(model, ptrs, missing, OksParams{{0.2, 0.2, 0.2}}), UserError);
}

TEST(EvalResult, JsonRoundTrip) {
  EvalResult r;
  r.map = 0.25;
  r.thresholds = {0.5, 0.75};
  r.ap = {0.4, 0.1};
  r.pck = 0.6;
  r.instances = 12;
  r.eval_set_hash = "abc";
  r.config_hash = "def";
  EXPECT_EQ(EvalResult::from_json(r.to_json()).to_json(), r.to_json());
  r.map.reset();
  EXPECT_TRUE(EvalResult::from_json(r.to_json()).to_json()["map"].is_null());
}

TEST(Toggles, DerivedFromConfig) {
  WscdaConfig full;
  auto t = toggles_from_config(to_json(full));
  EXPECT_TRUE(t.animal_labeled && t.human && t.dan && t.unlabeled && t.rebalanced);
  WscdaConfig plain;
  plain.loss.alpha = 0.0;
  plain.loss.w2 = 1.0;
  plain.model.use_dan = false;
  plain.batch = {0.0, 1.0, 0.0, 64};
  t = toggles_from_config(to_json(plain));
  EXPECT_TRUE(t.animal_labeled);
  EXPECT_FALSE(t.human || t.dan || t.unlabeled || t.rebalanced);
}

TEST(Report, RowsOrderedByTogglesWithPlots) {
  WscdaConfig full, plain;
  plain.loss.alpha = 0.0;
  plain.batch = {0.0, 1.0, 0.0, 64};
  EvalResult a, b;
  a.pck = 0.7;
  b.pck = 0.5;
  a.map = b.map = 0.1;
  a.eval_set_hash = b.eval_set_hash = "same";
  const auto rep = make_report({{"full", to_json(full), {{"ddl", {{0, 1.0}, {1, 0.9}}}}, a},
                                {"plain", to_json(plain), {{"ddl", {{0, 1.2}}}}, b}});
  ASSERT_EQ(rep.rows.size(), 2u);
  EXPECT_EQ(rep.rows[0][0], "plain");
  EXPECT_EQ(rep.rows[1][0], "full");
  EXPECT_EQ(rep.rows[1][7], "0.7000");
  ASSERT_EQ(rep.plots.size(), 1u);
  EXPECT_EQ(rep.plots[0].first, "curve_ddl.svg");
  EXPECT_NE(rep.plots[0].second.find("<svg"), std::string::npos);
  EXPECT_EQ(report_csv(rep).substr(0, 26), "run,N_A,H,DAN,UA,RB,mAP,PC");
}

TEST(Report, RefusesDifferentEvaluationSets) {
  EvalResult a, b;
  a.eval_set_hash = "one";
  b.eval_set_hash = "two";
  EXPECT_THROW(make_report({{"a", json::object(), {}, a}, {"b", json::object(), {}, b}}), UserError);
  EXPECT_THROW(make_report({}), InvalidArgument);
}
