#pragma once

// Preset synthetic domains and end-to-end method runners for the
// cross-domain comparison experiments.

#include <string>
#include <vector>

#include "cdapose/eval.hpp"
#include "cdapose/pplo.hpp"
#include "cdapose/synth.hpp"
#include "cdapose/wscda_trainer.hpp"

namespace cdapose {

namespace presets {

// Raw bone lengths in bone order: shin, thigh (left, right pairs), hips,
// flanks, shoulders, upper arms, forearms, nose-eye, eye-ear, ear-shoulder.
inline std::vector<double> proportions(double shin, double thigh, double hips, double flank, double shoulders,
                                       double upper_arm, double forearm, double nose_eye, double eye_ear,
                                       double neck) {
  return normalized({shin, thigh, shin, thigh, hips, flank, flank, shoulders, upper_arm, upper_arm, forearm,
                     forearm, nose_eye, nose_eye, eye_ear, eye_ear, neck, neck});
}

inline PosePrior upright() {
  PosePrior p;
  p.torso = {-100, -80};
  p.head = {-10, 10};
  p.upper_arm = {60, 130};
  p.forearm = {40, 150};
  p.thigh = {75, 105};
  p.shin = {75, 105};
  return p;
}

inline PosePrior quadruped(double head_lo, double head_hi) {
  PosePrior p;
  p.torso = {-12, 12};
  p.head = {head_lo, head_hi};
  p.upper_arm = {65, 115};
  p.forearm = {70, 110};
  p.thigh = {65, 115};
  p.shin = {70, 110};
  return p;
}

inline SynthDomainSpec human(int count, std::uint64_t seed, int image_size) {
  SynthDomainSpec s;
  s.name = "person";
  s.y = 0;
  s.proportions = proportions(0.13, 0.13, 0.06, 0.16, 0.08, 0.08, 0.07, 0.04, 0.03, 0.05);
  s.prior = upright();
  s.texture = {{0.55, 0.65, 0.95}, 0.08, {0.15, 0.15, 0.25}, 0.06, 0.03, 2, 0.5};
  s.count = count;
  s.seed = seed;
  s.image_size = image_size;
  s.id_base = 1000000;
  return s;
}

/// Labelled source species.
inline std::vector<SynthDomainSpec> animals(int count_each, std::uint64_t seed, int image_size) {
  std::vector<SynthDomainSpec> out;
  SynthDomainSpec dog;
  dog.name = "dog";
  dog.proportions = proportions(0.07, 0.07, 0.04, 0.20, 0.04, 0.07, 0.07, 0.035, 0.03, 0.07);
  dog.prior = quadruped(-45, -15);
  dog.texture = {{0.85, 0.8, 0.7}, 0.06, {0.3, 0.3, 0.3}, 0.06, 0.03, 2};
  SynthDomainSpec cat = dog;
  cat.name = "cat";
  cat.proportions = proportions(0.05, 0.05, 0.035, 0.18, 0.035, 0.05, 0.05, 0.03, 0.025, 0.05);
  cat.prior = quadruped(-35, -5);
  cat.texture = {{0.75, 0.75, 0.75}, 0.06, {0.35, 0.3, 0.25}, 0.06, 0.03, 2};
  SynthDomainSpec horse = dog;
  horse.name = "horse";
  horse.proportions = proportions(0.10, 0.09, 0.045, 0.20, 0.045, 0.09, 0.09, 0.04, 0.03, 0.10);
  horse.prior = quadruped(-60, -30);
  horse.texture = {{0.65, 0.5, 0.4}, 0.06, {0.4, 0.45, 0.35}, 0.06, 0.03, 2};
  long long base = 2000000;
  for (auto* s : {&dog, &cat, &horse}) {
    s->count = count_each;
    s->seed = seed * 31 + static_cast<std::uint64_t>(base);
    s->image_size = image_size;
    s->id_base = base;
    base += 1000000;
    out.push_back(*s);
  }
  return out;
}

/// Held-out target species: long low body and a distinct coat.
inline SynthDomainSpec target(int count, std::uint64_t seed, int image_size) {
  SynthDomainSpec s;
  s.name = "cow";
  s.proportions = proportions(0.06, 0.06, 0.06, 0.26, 0.06, 0.06, 0.06, 0.04, 0.03, 0.06);
  s.prior = quadruped(-20, 10);
  s.prior.torso = {-50, 35};
  s.texture = {{0.95, 0.7, 0.35}, 0.06, {0.25, 0.35, 0.2}, 0.06, 0.03, 2, 0.5};
  s.count = count;
  s.seed = seed;
  s.image_size = image_size;
  s.id_base = 9000000;
  return s;
}

}  // namespace presets

struct ExperimentSetup {
  int image_size = 48;
  int human_count = 400;
  int animal_per_species = 10;
  int target_unlabeled = 200;
  int target_test = 150;
};

struct ExperimentData {
  AnnotationSet human;
  AnnotationSet animal;      // labelled source animals
  AnnotationSet unlabeled;   // target species, z = 1
  AnnotationSet test;        // held-out target instances (poses withheld)
  HiddenTruth truth;         // ground truth for unlabeled and test items
};

inline AnnotationSet set_of(std::vector<Instance> items) {
  AnnotationSet s;
  s.schema = schemas::by_name("coco17");
  s.instances = std::move(items);
  return s;
}

inline ExperimentData make_experiment_data(const ExperimentSetup& setup, std::uint64_t seed) {
  ExperimentData d;
  d.human = set_of(render_domain(presets::human(setup.human_count, seed * 1009 + 1, setup.image_size)));
  std::vector<Instance> animals;
  for (const auto& spec : presets::animals(setup.animal_per_species, seed, setup.image_size)) {
    auto part = render_domain(spec);
    animals.insert(animals.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  d.animal = set_of(std::move(animals));
  auto tgt = presets::target(setup.target_unlabeled + setup.target_test, seed * 1009 + 7, setup.image_size);
  auto items = render_domain(tgt, &d.truth);
  for (auto& inst : items) {
    inst.pose.reset();
    inst.z = 1;
  }
  std::vector<Instance> unl(std::make_move_iterator(items.begin()),
                            std::make_move_iterator(items.begin() + setup.target_unlabeled));
  std::vector<Instance> test(std::make_move_iterator(items.begin() + setup.target_unlabeled),
                             std::make_move_iterator(items.end()));
  for (auto& inst : test) inst.split = Split::test;
  d.unlabeled = set_of(std::move(unl));
  d.test = set_of(std::move(test));
  return d;
}

/// Moves the first `n` unlabelled target items into the labelled animal set
/// with their ground-truth poses.
inline ExperimentData with_labeled_targets(ExperimentData d, int n) {
  if (n < 0 || n > static_cast<int>(d.unlabeled.instances.size()))
    throw InvalidArgument("with_labeled_targets: n out of range");
  for (int i = 0; i < n; ++i) {
    Instance inst = d.unlabeled.instances[i];
    inst.z = 0;
    inst.pose = d.truth.at(inst.id).pose;
    d.animal.instances.push_back(std::move(inst));
  }
  d.unlabeled.instances.erase(d.unlabeled.instances.begin(), d.unlabeled.instances.begin() + n);
  return d;
}

inline EvalResult evaluate_target(const Model<float>& model, const ExperimentData& d) {
  return evaluate(model, pointers(d.test.instances), d.truth, oks_params_for(schemas::coco17()), 0.2);
}

/// WS-CDA settings for the comparison runs: a short fixed-length three-stage
/// schedule and a human-heavy batch mix, so the labelled animals are scarce
/// in every batch.
inline WscdaConfig experiment_wscda_config(const ExperimentSetup& setup, std::uint64_t seed) {
  WscdaConfig c;
  c.model.input_height = c.model.input_width = setup.image_size;
  c.seed = seed;
  c.steps_per_epoch = 20;
  const double lr = 1e-3;
  c.schedule.stages = {{lr, false}, {lr, true}, {lr * 0.1, true}};
  c.schedule.rule.max_epochs = 10;
  c.schedule.rule.window = 1000;  // fixed length: never advance early
  c.batch = {0.7, 0.1, 0.2, 32};
  return c;
}

/// Target-free supervised baseline: labelled animals only, no domain loss.
inline WscdaConfig experiment_baseline_config(const ExperimentSetup& setup, std::uint64_t seed) {
  WscdaConfig c = experiment_wscda_config(setup, seed);
  c.loss.alpha = 0.0;
  c.batch = {0.0, 1.0, 0.0, 32};
  return c;
}

inline PploConfig experiment_pplo_config(std::uint64_t seed) {
  PploConfig c;
  c.epochs = 10;
  c.k_source = 10;
  c.learning_rate = 1e-4;
  c.source_batch = {0.7, 0.1, 0.2, 32};
  c.target_batch_size = 32;
  c.seed = seed;
  return c;
}

inline Model<float> train_experiment_wscda(const ExperimentData& d, const WscdaConfig& cfg) {
  return train_wscda(Model<float>::build(cfg.model, cfg.seed), {&d.human, &d.animal, &d.unlabeled}, cfg).model;
}

inline Model<float> train_experiment_baseline(const ExperimentData& d, const WscdaConfig& cfg) {
  const AnnotationSet empty = set_of({});
  return train_wscda(Model<float>::build(cfg.model, cfg.seed), {&empty, &d.animal, &empty}, cfg).model;
}

inline Model<float> boost_experiment_pplo(const ExperimentData& d, Model<float> model, const PploConfig& cfg) {
  return run_pplo(std::move(model), {&d.human, &d.animal, &d.unlabeled}, cfg).model;
}

}  // namespace cdapose
