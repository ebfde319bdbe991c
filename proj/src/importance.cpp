#include "cardiofuse/importance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cardiofuse/dataio.hpp"
#include "cardiofuse/error.hpp"

namespace cardiofuse::importance {

using model::Kind;

namespace {

void require_intermediate(const model::Model& m, const char* what) {
  if (m.kind() != Kind::IntermediateFusion) {
    throw KindError(std::string(what) + " needs an intermediate_fusion model, got " +
                    std::string(model::kind_name(m.kind())));
  }
}

}  // namespace

WeightMap modality_importance(model::Model& m, const train::Examples& ex_in, Aggregation agg) {
  require_intermediate(m, "modality_importance");
  if (ex_in.size() == 0) throw ValidationError("modality_importance: empty dataset");
  train::Examples ex = ex_in;
  if (m.encoder_frozen(View::PLAX) && !ex.plax_features) ex.plax_features = train::encode_all(m, View::PLAX, ex.plax);
  if (m.encoder_frozen(View::A4C) && !ex.a4c_features) ex.a4c_features = train::encode_all(m, View::A4C, ex.a4c);

  constexpr std::size_t S = model::kFusionTokens;
  const std::size_t heads = m.config().fusion.n_heads;
  std::vector<double> total(S - 1, 0.0);
  constexpr std::size_t chunk = 16;
  for (std::size_t begin = 0; begin < ex.size(); begin += chunk) {
    std::vector<std::size_t> idx(std::min(chunk, ex.size() - begin));
    std::iota(idx.begin(), idx.end(), begin);
    model::AttentionRecord rec;
    model::ForwardOptions fo;
    fo.attention = &rec;
    ag::Tape tape(false);
    m.forward(tape, train::make_batch(m, ex, idx), fo);
    const std::size_t first = agg == Aggregation::FinalLayer ? rec.layers.size() - 1 : 0;
    const double layers = static_cast<double>(rec.layers.size() - first);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      std::vector<double> row(S - 1, 0.0);
      for (std::size_t l = first; l < rec.layers.size(); ++l) {
        const Tensor& p = rec.layers[l];  // [B, heads, S, S]
        for (std::size_t h = 0; h < heads; ++h) {
          const double* cls = p.data() + ((b * heads + h) * S + 0) * S;
          for (std::size_t j = 1; j < S; ++j) row[j - 1] += cls[j] / (static_cast<double>(heads) * layers);
        }
      }
      const double mass = std::accumulate(row.begin(), row.end(), 0.0);
      for (std::size_t j = 0; j + 1 < S; ++j) total[j] += row[j] / mass;
    }
  }
  const double n = static_cast<double>(ex.size());
  return {{"EHR", total[0] / n}, {"PLAX", total[1] / n}, {"A4C", total[2] / n}};
}

std::vector<double> column_l1_fractions(const Tensor& w) {
  if (w.rank() != 2) throw ShapeError("column_l1_fractions: expected a matrix, got " + shape_string(w.shape()));
  std::vector<double> score(w.cols(), 0.0);
  for (std::size_t i = 0; i < w.rows(); ++i) {
    for (std::size_t j = 0; j < w.cols(); ++j) score[j] += std::abs(w.at(i, j));
  }
  const double sum = std::accumulate(score.begin(), score.end(), 0.0);
  if (!(sum > 0.0)) throw ValidationError("EHR embedding weights are all zero; entry importance is undefined");
  for (double& s : score) s /= sum;
  return score;
}

WeightMap ehr_entry_importance(const model::Model& m, const ehr::FeatureSchema& schema) {
  require_intermediate(m, "ehr_entry_importance");
  const Tensor& w = m.param("ehr.l1.w").value;
  if (w.cols() != schema.dim()) {
    throw ShapeError("EHR embedding has " + std::to_string(w.cols()) + " inputs but the schema has " +
                     std::to_string(schema.dim()) + " features");
  }
  const auto frac = column_l1_fractions(w);
  WeightMap out;
  for (std::size_t j = 0; j < frac.size(); ++j) out.emplace_back(schema.feature_names[j], frac[j]);
  return out;
}

WeightMap ehr_component_importance(const WeightMap& entries, const ehr::FeatureSchema& schema) {
  WeightMap out;
  for (auto c : {ehr::Component::DemoVitals, ehr::Component::Metrics, ehr::Component::Labs}) {
    const auto [lo, hi] = schema.block(c);
    double s = 0.0;
    for (std::size_t j = lo; j < hi; ++j) s += entries.at(j).second;
    out.emplace_back(std::string(ehr::component_name(c)), s);
  }
  return out;
}

ImportanceReport build_report(model::Model& m, const train::Examples& ex, const ehr::FeatureSchema& schema,
                              Aggregation agg) {
  ImportanceReport r;
  r.modality_weights = modality_importance(m, ex, agg);
  r.ehr_entry_weights = ehr_entry_importance(m, schema);
  r.ehr_component_weights = ehr_component_importance(r.ehr_entry_weights, schema);
  return r;
}

std::vector<std::filesystem::path> export_importance(const ImportanceReport& r, const std::filesystem::path& dir,
                                                     const std::string& header) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ValidationError("cannot create output directory " + dir.string() + ": " + ec.message());
  auto write = [&](const std::string& name, const WeightMap& rows) {
    std::ostringstream os;
    if (!header.empty()) os << "# " << header << "\n";
    os << "name,weight\n";
    for (const auto& [k, v] : rows) os << k << "," << dataio::format_double(v) << "\n";
    const auto path = dir / name;
    dataio::write_text_file(path, os.str());
    return path;
  };
  WeightMap entries = r.ehr_entry_weights;
  std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  return {write("modality_importance.csv", r.modality_weights),
          write("ehr_component_importance.csv", r.ehr_component_weights),
          write("ehr_entry_importance.csv", entries)};
}

}  // namespace cardiofuse::importance
