#pragma once

// Training recipe: mean binary cross-entropy, Adam, seeded mini-batch
// shuffling, and the two-stage schedule for intermediate fusion (single-view
// encoders first, then the fusion model on top of them).

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cardiofuse/ehrprep.hpp"
#include "cardiofuse/modelzoo.hpp"
#include "cardiofuse/records.hpp"

namespace cardiofuse::train {

/// -[y ln p + (1-y) ln(1-p)] with p clamped to [1e-7, 1-1e-7].
double bce_loss(double p, int y);

enum class Stage { Single, Fusion };

struct TrainConfig {
  double lr = 1e-4;
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  bool shuffle = true;
  Stage stage = Stage::Single;

  void validate() const;
};

/// Adam with optional L2 weight decay folded into the gradient. Parameters
/// marked non-trainable are skipped entirely.
class Adam {
 public:
  explicit Adam(const TrainConfig& cfg) : cfg_(cfg) {}
  void step(std::vector<ag::Parameter>& params);
  std::size_t steps_taken() const { return t_; }

 private:
  TrainConfig cfg_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct TrainHistory {
  std::vector<double> epoch_loss;
  double wall_seconds = 0.0;
};

/// Model-ready examples. Views may be given as clips, precomputed clip
/// features [N, F], or both (features win).
struct Examples {
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<const EchoClip*> plax, a4c;
  std::optional<Tensor> plax_features, a4c_features;
  std::optional<Tensor> ehr;  // [N, D]

  std::size_t size() const { return labels.size(); }
};

/// Examples for data[indices]; EHR vectors are built with `schema` when given.
Examples make_examples(const Dataset& data, const std::vector<std::size_t>& indices,
                       const ehr::FeatureSchema* schema);

/// Rows `indices` of `ex`, in that order.
Examples select(const Examples& ex, const std::vector<std::size_t>& indices);

/// Clip features of every example for one view, computed in chunks without gradients.
Tensor encode_all(model::Model& m, View v, const std::vector<const EchoClip*>& clips,
                  std::size_t chunk = 16);

/// Batch input for rows `indices`. Frozen encoders are served from features when present.
model::BatchInput make_batch(const model::Model& m, const Examples& ex, const std::vector<std::size_t>& indices);

/// Called with the ids of every mini-batch used for a parameter update.
using BatchObserver = std::function<void(const std::vector<std::string>& ids)>;

/// Trains in place. Frozen encoder features are computed once up front.
/// Throws TrainingError on a single-class split or a non-finite loss.
TrainHistory fit(model::Model& m, const Examples& ex, const TrainConfig& cfg,
                 const BatchObserver& observer = {});

/// Probabilities for every example, in order (evaluation mode).
std::vector<double> predict(model::Model& m, const Examples& ex, std::size_t chunk = 16);

struct PipelineConfig {
  model::ModelConfig model;  // kind = intermediate_fusion; encoder/fusion dims
  TrainConfig stage_a;
  TrainConfig stage_b;
};

struct PipelineResult {
  model::Model plax, a4c, fusion;
  TrainHistory plax_history, a4c_history, fusion_history;
};

/// Trains one single-view model on `ex`. Provenance names the kind, seed and
/// a hash of the training ids.
model::Model train_single_view(const model::ModelConfig& base, View v, const Examples& ex,
                               const TrainConfig& cfg, TrainHistory* history = nullptr,
                               const BatchObserver& observer = {});

/// Stage A then stage B for any fusion kind (double_view, late_fusion,
/// intermediate_fusion). Fusion encoders are the stage-A encoders, frozen per config.
PipelineResult train_fusion_pipeline(const Examples& ex, const PipelineConfig& cfg,
                                     const BatchObserver& observer = {});

/// train_fusion_pipeline restricted to intermediate_fusion.
PipelineResult train_intermediate_pipeline(const Examples& ex, const PipelineConfig& cfg,
                                           const BatchObserver& observer = {});

/// Fixed-width text log: one "epoch <i> loss <v>" line per epoch plus the wall time.
std::string format_history(const TrainHistory& h);

}  // namespace cardiofuse::train
