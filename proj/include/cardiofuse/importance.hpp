#pragma once

// Feature importance for intermediate-fusion models.
//
// Modality importance reads the CLS row of the transformer attention: the
// mass CLS puts on the EHR, PLAX and A4C tokens, averaged over heads, with the
// CLS self-attention removed and the remainder renormalized, then averaged
// over samples. EHR entry importance is the L1 norm of each input column of
// the first EHR embedding layer, normalized to sum to one.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cardiofuse/ehrprep.hpp"
#include "cardiofuse/modelzoo.hpp"
#include "cardiofuse/trainer.hpp"

namespace cardiofuse::importance {

using WeightMap = std::vector<std::pair<std::string, double>>;

struct ImportanceReport {
  WeightMap modality_weights;       // EHR, PLAX, A4C
  WeightMap ehr_component_weights;  // demo_vitals, metrics, labs
  WeightMap ehr_entry_weights;      // schema feature order
};

enum class Aggregation { FinalLayer, LayerAverage };

/// Throws KindError unless `m` is an intermediate_fusion model.
WeightMap modality_importance(model::Model& m, const train::Examples& ex,
                              Aggregation agg = Aggregation::FinalLayer);

/// Column L1 norms of W (rows x cols), normalized. Throws when every column is zero.
std::vector<double> column_l1_fractions(const Tensor& w);

/// Entry weights in schema order. Throws KindError unless `m` is intermediate_fusion.
WeightMap ehr_entry_importance(const model::Model& m, const ehr::FeatureSchema& schema);

/// Sums of entry weights per component block.
WeightMap ehr_component_importance(const WeightMap& entries, const ehr::FeatureSchema& schema);

ImportanceReport build_report(model::Model& m, const train::Examples& ex, const ehr::FeatureSchema& schema,
                              Aggregation agg = Aggregation::FinalLayer);

/// Writes modality_importance.csv, ehr_component_importance.csv and
/// ehr_entry_importance.csv (name,weight) into `dir`. Entries are sorted by
/// descending weight, ties by name. `header` becomes a leading "# " line.
std::vector<std::filesystem::path> export_importance(const ImportanceReport& r, const std::filesystem::path& dir,
                                                     const std::string& header);

}  // namespace cardiofuse::importance
