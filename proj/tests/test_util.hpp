#pragma once

// Shared fixtures for the unit, integration and acceptance tests.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "cardiofuse/autograd.hpp"
#include "cardiofuse/evalcv.hpp"
#include "cardiofuse/modelzoo.hpp"
#include "cardiofuse/rng.hpp"
#include "cardiofuse/synthcohort.hpp"

namespace cftest {

using namespace cardiofuse;

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("cardiofuse_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Model config small enough for finite differences: 2-channel convs, 3-unit
/// LSTM, d_model 16, one layer, one head.
inline model::ModelConfig tiny_config(model::Kind kind, std::size_t ehr_dim) {
  model::ModelConfig c;
  c.kind = kind;
  c.encoder.conv_channels = {2, 2};
  c.encoder.frame_feature_dim = 4;
  c.encoder.lstm_hidden = 3;
  c.encoder.clip_feature_dim = 6;
  c.encoder.attention_dim = 4;
  c.fusion.d_model = 16;
  c.fusion.n_heads = 1;
  c.fusion.n_layers = 1;
  c.fusion.ff_dim = 8;
  c.fusion.ehr_hidden = 5;
  c.fusion.encoder_freeze = false;
  c.head_hidden = 4;
  c.ehr_dim = ehr_dim;
  return c;
}

/// Random frames [steps*batch, 1, hw, hw] in [0,1] plus EHR vectors [batch, ehr_dim].
inline model::BatchInput random_batch(std::size_t batch, std::size_t steps, std::size_t hw, std::size_t ehr_dim,
                                      std::uint64_t seed) {
  Rng rng(seed);
  model::BatchInput in;
  in.batch = batch;
  in.steps = steps;
  for (auto* slot : {&in.plax_frames, &in.a4c_frames}) {
    Tensor t({steps * batch, 1, hw, hw});
    for (double& v : t.vec()) v = rng.uniform();
    *slot = std::move(t);
  }
  Tensor e({batch, ehr_dim});
  for (double& v : e.vec()) v = rng.normal();
  in.ehr = std::move(e);
  return in;
}

/// Randomizes every parameter so no gradient is structurally zero.
inline void randomize(model::Model& m, std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  for (auto& p : m.parameters()) {
    for (double& v : p.value.vec()) v = rng.uniform(-scale, scale);
  }
}

inline double model_loss(model::Model& m, const model::BatchInput& in, const std::vector<int>& labels) {
  ag::Tape tape(false);
  return ag::bce_mean(m.forward(tape, in), labels).value()[0];
}

/// |a - n| / max(|a|, |n|, 1e-6) per element; returns the max per parameter tensor.
inline std::map<std::string, double> gradient_check(model::Model& m, const model::BatchInput& in,
                                                    const std::vector<int>& labels, double eps = 1e-5) {
  for (auto& p : m.parameters()) p.zero_grad();
  {
    ag::Tape tape(true);
    auto loss = ag::bce_mean(m.forward(tape, in), labels);
    tape.backward(loss);
  }
  std::map<std::string, double> worst;
  for (auto& p : m.parameters()) {
    double w = 0.0;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + eps;
      const double up = model_loss(m, in, labels);
      p.value[i] = orig - eps;
      const double down = model_loss(m, in, labels);
      p.value[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = p.grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      w = std::max(w, std::abs(analytic - numeric) / denom);
    }
    worst[p.name] = w;
  }
  return worst;
}

/// Cohort used by the learning-sanity runs: all three modalities carry an
/// independent signal and the EHR signal sits only in the lab block.
inline synth::CohortSpec complementary_cohort(std::uint64_t seed, std::uint32_t n = 200) {
  synth::CohortSpec s;
  s.n_patients = n;
  s.prevalence = 0.4;
  s.seed = seed;
  s.signal_ehr = s.signal_plax = s.signal_a4c = 1.5;
  s.n_lab_codes = 20;
  s.n_signal_labs = 3;
  s.metrics_follow_imaging = false;
  return s;
}

/// Compact encoder and transformer used for desk-scale cross-validation, with
/// lr raised to 1e-3 so the from-scratch video encoders learn within 20 epochs.
inline cv::RunConfig compact_run(const std::string& preset, std::uint64_t seed) {
  cv::RunConfig rc;
  rc.preset = preset;
  rc.seed = seed;
  rc.model.encoder.conv_channels = {4, 8};
  rc.model.encoder.frame_feature_dim = 16;
  rc.model.encoder.lstm_hidden = 16;
  rc.model.encoder.clip_feature_dim = 32;
  rc.model.encoder.attention_dim = 16;
  rc.model.fusion.d_model = 64;
  rc.model.fusion.ff_dim = 128;
  rc.model.fusion.ehr_hidden = 64;
  rc.train.lr = 1e-3;
  rc.fusion_train.lr = 1e-3;
  return rc;
}

/// Brute-force AUROC over all positive/negative pairs, ties credited 0.5.
inline double auroc_pairs(const std::vector<double>& p, const std::vector<int>& y) {
  double credit = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1.0;
      credit += p[i] > p[j] ? 1.0 : (p[i] == p[j] ? 0.5 : 0.0);
    }
  }
  return credit / pairs;
}

}  // namespace cftest
