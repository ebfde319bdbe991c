#pragma once

// Stratified k-fold cross-validation with accuracy, sensitivity, specificity
// and AUROC, plus the ten named run presets (six modality/fusion rows and four
// EHR-component ablations).

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cardiofuse/ehrprep.hpp"
#include "cardiofuse/modelzoo.hpp"
#include "cardiofuse/records.hpp"
#include "cardiofuse/trainer.hpp"

namespace cardiofuse::cv {

// ---- folds ----------------------------------------------------------------

struct FoldPlan {
  std::size_t k = 5;
  std::uint64_t seed = 0;
  bool stratified = true;
  std::vector<std::string> ids;  // as passed to make_folds
  std::vector<std::size_t> fold;  // fold index of ids[i]

  /// Positions (into ids) of fold f, ascending.
  std::vector<std::size_t> test_indices(std::size_t f) const;
  /// Positions of every other fold, ascending.
  std::vector<std::size_t> train_indices(std::size_t f) const;
};

/// Seeded shuffle within each class followed by round-robin assignment.
/// Patients are first ordered by id so the plan does not depend on input
/// order. Throws ValidationError when k < 2 or k > n; a class with fewer than
/// k members only adds a warning.
FoldPlan make_folds(const std::vector<std::string>& ids, const std::vector<int>& labels, std::size_t k,
                    std::uint64_t seed, bool stratified = true, std::vector<std::string>* warnings = nullptr);

// ---- metrics --------------------------------------------------------------

/// NaN marks an undefined ratio (no positives or no negatives).
struct ConfusionMetrics {
  double accuracy = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

/// A sample is predicted positive iff p >= threshold.
ConfusionMetrics confusion_metrics(const std::vector<double>& probs, const std::vector<int>& labels,
                                   double threshold = 0.5);

/// Mann-Whitney AUROC with ties credited 0.5. Throws on single-class input.
double auroc(const std::vector<double>& probs, const std::vector<int>& labels);

// ---- presets --------------------------------------------------------------

struct Preset {
  std::string name;
  model::Kind kind;
  std::set<ehr::Component> drop;
  std::string modalities;  // human-readable row label
};

const std::vector<Preset>& presets();
const Preset& find_preset(std::string_view name);
/// The four ablation presets, in table order.
std::vector<std::string> ablation_preset_names();

enum class Scope { Train, All };
std::string_view scope_name(Scope s);
Scope parse_scope(std::string_view s);

struct RunConfig {
  std::string preset = "table2-row6";
  std::uint64_t seed = 1;
  std::size_t k = 5;
  bool stratified = true;
  model::ModelConfig model;  // kind, ehr_dim and ehr_keep are filled per fold
  train::TrainConfig train;  // single-view models, stage A and ehr_lr
  train::TrainConfig fusion_train;  // stage B of the fusion models
  std::size_t ehr_lr_epochs = 0;  // 0 = use train.epochs
  ehr::LabWindow window;
  double coverage_threshold = ehr::kDefaultCoverage;
  Scope scope = Scope::Train;
  std::size_t parallel_folds = 1;

  void validate() const;
  /// Canonical key = value text; its hash is the report fingerprint.
  std::string serialize() const;
};

// ---- reports --------------------------------------------------------------

struct FoldMetrics {
  std::size_t fold = 0;
  std::size_t n_train = 0, n_test = 0;
  double accuracy = 0.0, sensitivity = 0.0, specificity = 0.0, auroc = 0.0;
};

struct CVReport {
  std::string preset;
  std::string kind;
  std::uint64_t seed = 0;
  std::size_t k = 0;
  std::string fingerprint;
  std::vector<FoldMetrics> folds;  // ordered by fold index
  FoldMetrics mean;                // NaN fold values are skipped
  std::vector<std::string> warnings;
};

/// Arithmetic means over folds, skipping NaN entries (a warning is appended
/// for each metric that had to skip one).
FoldMetrics mean_metrics(const std::vector<FoldMetrics>& folds, std::vector<std::string>* warnings = nullptr);

/// "Fold,Accuracy,Sensitivity,Specificity,AUROC" rows, one per fold plus "mean",
/// under a "# cardiofuse ..." header line carrying preset and seed.
std::string report_csv(const CVReport& r);
/// key = value text with one [fold N] section per fold and a [mean] section.
std::string report_text(const CVReport& r);

// ---- execution ------------------------------------------------------------

/// Trained single-view models shared across presets. Entries are keyed by
/// everything that determines the trained weights, so a hit is always exact.
class EncoderCache {
 public:
  struct Entry {
    model::Model model;
    Tensor features;  // clip features of every dataset patient, [N, F]
  };

  std::shared_ptr<const Entry> find(const std::string& key) const;
  std::shared_ptr<const Entry> insert(const std::string& key, std::shared_ptr<const Entry> e);
  std::size_t size() const;
  std::size_t hits() const { return hits_; }

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<const Entry>> entries_;
  mutable std::size_t hits_ = 0;
};

/// Instrumentation: called with (fold, stage, patient ids) whenever ids feed a
/// fitted statistic ("schema") or a parameter update ("train").
using AccessObserver = std::function<void(std::size_t fold, std::string_view stage, const std::vector<std::string>& ids)>;

struct CvOptions {
  EncoderCache* cache = nullptr;
  AccessObserver observer;
  std::string checkpoint_dir;  // writes fold<N>_<kind>.ckpt when non-empty
  std::ostream* log = nullptr;
};

/// Runs the preset over k folds. A failing fold aborts the run; the error
/// message starts with "fold N:" and keeps the original exception type.
CVReport cross_validate(const RunConfig& run, const Dataset& data, const CvOptions& opt = {});

/// Content hash of ids, labels, EHR tables and clip payloads.
std::string dataset_fingerprint(const Dataset& data);

}  // namespace cardiofuse::cv
