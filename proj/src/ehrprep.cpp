#include "cardiofuse/ehrprep.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cardiofuse/dataio.hpp"
#include "cardiofuse/error.hpp"
#include "cardiofuse/hash.hpp"

namespace cardiofuse::ehr {

namespace {

constexpr std::string_view kSchemaHeader = "cardiofuse-schema 1";

std::vector<const PatientRecord*> sorted_by_id(std::vector<const PatientRecord*> fit) {
  std::sort(fit.begin(), fit.end(),
            [](const PatientRecord* a, const PatientRecord* b) { return a->patient_id < b->patient_id; });
  return fit;
}

// Raw (unstandardized) feature values of one record, plus the imputation flags.
void raw_features(const PatientRecord& r, const FeatureSchema& s, std::vector<double>& values,
                  std::vector<bool>& imputed) {
  values.clear();
  imputed.clear();
  auto push = [&](double v, bool imp = false) {
    values.push_back(v);
    imputed.push_back(imp);
  };
  push(r.age);
  push(r.sex == "F" ? 1.0 : 0.0);
  push(r.sex == "M" ? 1.0 : 0.0);
  for (const auto& level : s.race_levels) push(r.race == level ? 1.0 : 0.0);
  push(r.sbp);
  push(r.dbp);
  push(r.weight_kg);
  push(r.height_m);
  push(r.bmi);
  for (double m : r.cardiac_metrics) push(m);
  for (const auto& code : s.selected_lab_codes) {
    double v = 0.0;
    if (in_window_mean(r, code, s.window, v)) {
      push(v);
    } else {
      push(s.imputation_means.at(code), true);
    }
  }
}

}  // namespace

std::string_view component_name(Component c) {
  switch (c) {
    case Component::DemoVitals: return "demo_vitals";
    case Component::Metrics: return "metrics";
    case Component::Labs: return "labs";
  }
  return "?";
}

Component parse_component(std::string_view s) {
  if (s == "demo_vitals" || s == "demo") return Component::DemoVitals;
  if (s == "metrics") return Component::Metrics;
  if (s == "labs") return Component::Labs;
  throw ValidationError("unknown EHR component '" + std::string(s) + "'");
}

std::size_t FeatureSchema::count(Component c) const {
  return static_cast<std::size_t>(std::count(feature_components.begin(), feature_components.end(), c));
}

std::pair<std::size_t, std::size_t> FeatureSchema::block(Component c) const {
  std::size_t lo = dim(), hi = 0;
  for (std::size_t i = 0; i < dim(); ++i) {
    if (feature_components[i] == c) {
      lo = std::min(lo, i);
      hi = i + 1;
    }
  }
  return lo < hi ? std::pair{lo, hi} : std::pair{std::size_t{0}, std::size_t{0}};
}

bool in_window_mean(const PatientRecord& record, const std::string& code, LabWindow window,
                    double& out) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& obs : record.labs) {
    if (obs.code == code && window.contains(obs.days_from_echo)) {
      sum += obs.value;
      ++n;
    }
  }
  if (n == 0) return false;
  out = sum / static_cast<double>(n);
  return true;
}

std::vector<std::string> select_labs(const std::vector<const PatientRecord*>& fit, LabWindow window,
                                     double threshold) {
  if (fit.empty()) throw ValidationError("select_labs: empty fitting set");
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ValidationError("select_labs: threshold must lie in (0,1]");
  if (window.lo >= window.hi) throw ValidationError("select_labs: window lo must be below hi");
  std::map<std::string, std::size_t> covered;
  for (const PatientRecord* r : fit) {
    std::set<std::string> codes;
    for (const auto& obs : r->labs) {
      if (window.contains(obs.days_from_echo)) codes.insert(obs.code);
    }
    for (const auto& c : codes) ++covered[c];
  }
  std::vector<std::string> out;
  const double needed = threshold * static_cast<double>(fit.size());
  for (const auto& [code, n] : covered) {
    // "at least": inclusive, with slack for the rounding of threshold * n.
    if (static_cast<double>(n) >= needed - 1e-9) out.push_back(code);
  }
  return out;  // std::map iteration is already lexicographic
}

FeatureSchema fit_schema(const std::vector<const PatientRecord*>& fit_in,
                         const std::vector<std::string>& selected_codes, LabWindow window,
                         double threshold) {
  if (fit_in.empty()) throw ValidationError("fit_schema: empty fitting set");
  const auto fit = sorted_by_id(fit_in);

  FeatureSchema s;
  s.window = window;
  s.coverage_threshold = threshold;
  s.selected_lab_codes = selected_codes;
  std::sort(s.selected_lab_codes.begin(), s.selected_lab_codes.end());

  std::set<std::string> races;
  for (const PatientRecord* r : fit) races.insert(r->race);
  s.race_levels.assign(races.begin(), races.end());

  for (const auto& code : s.selected_lab_codes) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const PatientRecord* r : fit) {
      double v = 0.0;
      if (in_window_mean(*r, code, window, v)) {
        sum += v;
        ++n;
      }
    }
    if (n == 0) {
      throw std::logic_error("fit_schema: selected lab " + code +
                             " has no in-window observation in the fitting set");
    }
    s.imputation_means[code] = sum / static_cast<double>(n);
  }

  auto name = [&](std::string n, Component c) {
    s.feature_names.push_back(std::move(n));
    s.feature_components.push_back(c);
  };
  name("age", Component::DemoVitals);
  name("sex_F", Component::DemoVitals);
  name("sex_M", Component::DemoVitals);
  for (const auto& level : s.race_levels) name("race_" + level, Component::DemoVitals);
  for (const char* v : {"sbp", "dbp", "weight_kg", "height_m", "bmi"}) name(v, Component::DemoVitals);
  for (auto m : kMetricNames) name(std::string(m), Component::Metrics);
  for (const auto& code : s.selected_lab_codes) name("lab_" + code, Component::Labs);

  const std::size_t d = s.dim();
  std::vector<std::vector<double>> raw(fit.size());
  std::vector<bool> scratch;
  for (std::size_t i = 0; i < fit.size(); ++i) raw_features(*fit[i], s, raw[i], scratch);
  s.feature_means.assign(d, 0.0);
  s.feature_stds.assign(d, 0.0);
  const double n = static_cast<double>(fit.size());
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (const auto& row : raw) mean += row[j];
    mean /= n;
    double var = 0.0;
    for (const auto& row : raw) var += (row[j] - mean) * (row[j] - mean);
    s.feature_means[j] = mean;
    s.feature_stds[j] = std::max(std::sqrt(var / n), kStdFloor);
  }
  return s;
}

FeatureSchema fit_pipeline(const std::vector<const PatientRecord*>& fit, LabWindow window,
                           double threshold) {
  return fit_schema(fit, select_labs(fit, window, threshold), window, threshold);
}

FeatureVector vectorize(const PatientRecord& record, const FeatureSchema& schema) {
  FeatureVector out;
  raw_features(record, schema, out.values, out.imputed);
  for (std::size_t j = 0; j < out.values.size(); ++j) {
    out.values[j] = (out.values[j] - schema.feature_means[j]) / schema.feature_stds[j];
  }
  out.schema_id = schema.id();
  return out;
}

std::vector<bool> component_mask(const FeatureSchema& schema, const std::set<Component>& drop) {
  std::vector<bool> keep(schema.dim(), true);
  for (std::size_t j = 0; j < schema.dim(); ++j) {
    if (drop.count(schema.feature_components[j])) keep[j] = false;
  }
  return keep;
}

std::string FeatureSchema::serialize() const {
  using dataio::format_double;
  std::ostringstream os;
  os << kSchemaHeader << "\n";
  os << "window_lo = " << window.lo << "\n";
  os << "window_hi = " << window.hi << "\n";
  os << "coverage_threshold = " << format_double(coverage_threshold) << "\n";
  os << "race_levels = ";
  for (std::size_t i = 0; i < race_levels.size(); ++i) os << (i ? "," : "") << race_levels[i];
  os << "\n";
  for (const auto& code : selected_lab_codes) {
    os << "lab = " << code << "," << format_double(imputation_means.at(code)) << "\n";
  }
  for (std::size_t j = 0; j < dim(); ++j) {
    os << "feature = " << feature_names[j] << "," << component_name(feature_components[j]) << ","
       << format_double(feature_means[j]) << "," << format_double(feature_stds[j]) << "\n";
  }
  return os.str();
}

FeatureSchema FeatureSchema::parse(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != kSchemaHeader) {
    throw ValidationError("schema: missing or unsupported version header");
  }
  FeatureSchema s;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw ValidationError("schema: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 3);
    const auto fields = dataio::split_csv_line(value);
    if (key == "window_lo") {
      s.window.lo = static_cast<int>(dataio::parse_long(value, "schema window_lo"));
    } else if (key == "window_hi") {
      s.window.hi = static_cast<int>(dataio::parse_long(value, "schema window_hi"));
    } else if (key == "coverage_threshold") {
      s.coverage_threshold = dataio::parse_double(value, "schema coverage_threshold");
    } else if (key == "race_levels") {
      if (!value.empty()) s.race_levels = fields;
    } else if (key == "lab") {
      if (fields.size() != 2) throw ValidationError("schema: lab line needs code,mean");
      s.selected_lab_codes.push_back(fields[0]);
      s.imputation_means[fields[0]] = dataio::parse_double(fields[1], "schema lab mean");
    } else if (key == "feature") {
      if (fields.size() != 4) throw ValidationError("schema: feature line needs name,component,mean,std");
      s.feature_names.push_back(fields[0]);
      s.feature_components.push_back(parse_component(fields[1]));
      s.feature_means.push_back(dataio::parse_double(fields[2], "schema feature mean"));
      s.feature_stds.push_back(dataio::parse_double(fields[3], "schema feature std"));
    } else {
      throw ValidationError("schema: unknown key '" + key + "'");
    }
  }
  return s;
}

std::string FeatureSchema::id() const { return hex64(fnv1a(serialize())); }

std::vector<const PatientRecord*> pointers(const std::vector<PatientRecord>& records) {
  std::vector<const PatientRecord*> out;
  for (const auto& r : records) out.push_back(&r);
  return out;
}

std::vector<const PatientRecord*> pointers(const std::vector<PatientRecord>& records,
                                           const std::vector<std::size_t>& indices) {
  std::vector<const PatientRecord*> out;
  for (std::size_t i : indices) out.push_back(&records.at(i));
  return out;
}

}  // namespace cardiofuse::ehr
