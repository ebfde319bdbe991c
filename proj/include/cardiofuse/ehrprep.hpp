#pragma once

// EHR feature engineering: windowed lab selection with a coverage filter,
// per-patient aggregation, mean imputation, z-scoring, and early fusion of the
// three EHR components into one vector ordered demo/vitals | metrics | labs.

#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cardiofuse/records.hpp"

namespace cardiofuse::ehr {

enum class Component { DemoVitals, Metrics, Labs };

std::string_view component_name(Component c);
Component parse_component(std::string_view s);

/// Inclusive day offsets relative to the echo: 3 months before to 1 month after.
struct LabWindow {
  int lo = -90;
  int hi = 30;
  bool contains(int day) const { return day >= lo && day <= hi; }
};

inline constexpr double kDefaultCoverage = 0.10;
inline constexpr double kStdFloor = 1e-8;

struct FeatureSchema {
  LabWindow window;
  double coverage_threshold = kDefaultCoverage;
  std::vector<std::string> race_levels;
  std::vector<std::string> selected_lab_codes;
  std::map<std::string, double> imputation_means;
  std::vector<std::string> feature_names;
  std::vector<Component> feature_components;
  std::vector<double> feature_means;
  std::vector<double> feature_stds;

  std::size_t dim() const { return feature_names.size(); }
  std::size_t count(Component c) const;
  /// Half-open index range of one component block.
  std::pair<std::size_t, std::size_t> block(Component c) const;

  std::string serialize() const;
  static FeatureSchema parse(std::string_view text);
  /// Content hash of serialize(), hex.
  std::string id() const;
};

struct FeatureVector {
  std::vector<double> values;
  std::vector<bool> imputed;
  std::string schema_id;
};

/// Codes whose in-window coverage over `fit` is at least `threshold`
/// (inclusive), sorted lexicographically.
std::vector<std::string> select_labs(const std::vector<const PatientRecord*>& fit, LabWindow window,
                                     double threshold);

FeatureSchema fit_schema(const std::vector<const PatientRecord*>& fit,
                         const std::vector<std::string>& selected_codes, LabWindow window,
                         double threshold = kDefaultCoverage);

/// select_labs followed by fit_schema on the same records.
FeatureSchema fit_pipeline(const std::vector<const PatientRecord*>& fit, LabWindow window = {},
                           double threshold = kDefaultCoverage);

FeatureVector vectorize(const PatientRecord& record, const FeatureSchema& schema);

/// true = keep. Entries of dropped components are false.
std::vector<bool> component_mask(const FeatureSchema& schema, const std::set<Component>& drop);

/// Mean of a patient's in-window observations of `code`; false when none.
bool in_window_mean(const PatientRecord& record, const std::string& code, LabWindow window,
                    double& out);

std::vector<const PatientRecord*> pointers(const std::vector<PatientRecord>& records);
std::vector<const PatientRecord*> pointers(const std::vector<PatientRecord>& records,
                                           const std::vector<std::size_t>& indices);

}  // namespace cardiofuse::ehr
