#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "cardiofuse/ehrprep.hpp"
#include "cardiofuse/error.hpp"
#include "cardiofuse/rng.hpp"
#include "cardiofuse/synthcohort.hpp"

using namespace cardiofuse;
using ehr::Component;

namespace {

PatientRecord patient(const std::string& id, std::vector<LabObservation> labs = {}, const std::string& race = "A") {
  PatientRecord r;
  r.patient_id = id;
  r.age = 60 + static_cast<double>(id.size());
  r.sex = id.back() % 2 ? "F" : "M";
  r.race = race;
  r.sbp = 120;
  r.dbp = 80;
  r.weight_kg = 70;
  r.height_m = 1.7;
  r.bmi = 70 / (1.7 * 1.7);
  r.labs = std::move(labs);
  return r;
}

std::vector<PatientRecord> ten_with_one_covered() {
  std::vector<PatientRecord> v;
  for (int i = 0; i < 10; ++i) v.push_back(patient("P" + std::to_string(i)));
  v[4].labs = {{"X", 1.0, -10}};
  return v;
}

TEST(SelectLabs, CoverageBoundaryIsInclusive) {
  const auto recs = ten_with_one_covered();
  EXPECT_EQ(ehr::select_labs(ehr::pointers(recs), {}, 0.10), (std::vector<std::string>{"X"}));
  EXPECT_TRUE(ehr::select_labs(ehr::pointers(recs), {}, 0.11).empty());
}

TEST(SelectLabs, WindowExcludesOldObservations) {
  auto recs = ten_with_one_covered();
  for (auto& r : recs) r.labs.push_back({"Y", 5.0, -200});
  EXPECT_EQ(ehr::select_labs(ehr::pointers(recs), {-90, 30}, 0.10), (std::vector<std::string>{"X"}));
}

TEST(SelectLabs, WindowEndpointsAreInclusive) {
  std::vector<PatientRecord> recs = {patient("A", {{"LO", 1, -90}, {"HI", 1, 30}, {"OUT1", 1, -91}, {"OUT2", 1, 31}})};
  EXPECT_EQ(ehr::select_labs(ehr::pointers(recs), {-90, 30}, 1.0), (std::vector<std::string>{"HI", "LO"}));
}

TEST(SelectLabs, BruteForceCoverageOracle) {
  // 5 patients; X in-window for 3, Z only out of window.
  std::vector<PatientRecord> recs;
  for (int i = 0; i < 5; ++i) recs.push_back(patient("Q" + std::to_string(i)));
  for (int i : {0, 2, 3}) recs[i].labs.push_back({"X", 1.0 + i, 0});
  recs[1].labs.push_back({"Z", 3.0, 90});
  EXPECT_EQ(ehr::select_labs(ehr::pointers(recs), {}, 0.10), (std::vector<std::string>{"X"}));

  // Against a direct count over every (patient, code) pair on a random cohort.
  synth::CohortSpec s;
  s.n_patients = 60;
  s.n_lab_codes = 25;
  s.lab_missingness = 0.85;
  const Dataset d = synth::synthesize(s);
  for (double thr : {0.05, 0.1, 0.15, 0.2, 0.3}) {
    std::vector<std::string> want;
    for (const auto& code : synth::lab_codes(s.n_lab_codes)) {
      std::size_t covered = 0;
      for (const auto& r : d.records) {
        covered += std::any_of(r.labs.begin(), r.labs.end(), [&](const LabObservation& o) {
          return o.code == code && o.days_from_echo >= -90 && o.days_from_echo <= 30;
        });
      }
      if (covered * 100 >= static_cast<std::size_t>(std::lround(thr * 100)) * d.size()) want.push_back(code);
    }
    std::sort(want.begin(), want.end());
    EXPECT_EQ(ehr::select_labs(ehr::pointers(d.records), {}, thr), want) << thr;
  }
}

TEST(SelectLabs, RejectsBadInputs) {
  const auto recs = ten_with_one_covered();
  EXPECT_THROW(ehr::select_labs({}, {}, 0.1), ValidationError);
  EXPECT_THROW(ehr::select_labs(ehr::pointers(recs), {}, 0.0), ValidationError);
  EXPECT_THROW(ehr::select_labs(ehr::pointers(recs), {}, 1.5), ValidationError);
  EXPECT_THROW(ehr::select_labs(ehr::pointers(recs), {30, -90}, 0.1), ValidationError);
}

TEST(FitSchema, ImputationMeanIsMeanOfPatientMeans) {
  std::vector<PatientRecord> recs = {patient("A", {{"X", 2.0, 0}}), patient("B", {{"X", 4.0, 0}}), patient("C")};
  const auto s = ehr::fit_pipeline(ehr::pointers(recs));
  EXPECT_DOUBLE_EQ(s.imputation_means.at("X"), 3.0);

  // Two in-window observations average to 2.0 before pooling; the out-of-window one is ignored.
  recs = {patient("A", {{"X", 1.0, -5}, {"X", 3.0, 5}, {"X", 100.0, -300}}), patient("B", {{"X", 5.0, 0}})};
  double v = 0;
  ASSERT_TRUE(ehr::in_window_mean(recs[0], "X", {}, v));
  EXPECT_DOUBLE_EQ(v, 2.0);
  EXPECT_DOUBLE_EQ(ehr::fit_pipeline(ehr::pointers(recs)).imputation_means.at("X"), 3.5);
}

TEST(FitSchema, ConstantFeatureStaysFinite) {
  std::vector<PatientRecord> recs = {patient("A", {{"X", 7.0, 0}}), patient("B", {{"X", 7.0, 0}})};
  const auto s = ehr::fit_pipeline(ehr::pointers(recs));
  for (double sd : s.feature_stds) EXPECT_GE(sd, ehr::kStdFloor);
  for (const auto& r : recs) {
    for (double x : ehr::vectorize(r, s).values) EXPECT_TRUE(std::isfinite(x));
  }
}

TEST(FitSchema, SelectedCodeWithoutObservationsIsInconsistent) {
  std::vector<PatientRecord> recs = {patient("A")};
  EXPECT_THROW(ehr::fit_schema(ehr::pointers(recs), {"X"}, {}), std::logic_error);
}

TEST(FitSchema, IndependentOfInputOrder) {
  synth::CohortSpec spec;
  spec.n_patients = 30;
  const Dataset d = synth::synthesize(spec);
  auto ptrs = ehr::pointers(d.records);
  const std::string a = ehr::fit_pipeline(ptrs).serialize();
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    rng.shuffle(std::span(ptrs));
    EXPECT_EQ(ehr::fit_pipeline(ptrs).serialize(), a);
  }
}

TEST(FitSchema, SerializeRoundtrip) {
  synth::CohortSpec spec;
  spec.n_patients = 30;
  const Dataset d = synth::synthesize(spec);
  const auto s = ehr::fit_pipeline(ehr::pointers(d.records));
  const auto back = ehr::FeatureSchema::parse(s.serialize());
  EXPECT_EQ(back.serialize(), s.serialize());
  EXPECT_EQ(back.id(), s.id());
  EXPECT_EQ(ehr::vectorize(d.records[3], back).values, ehr::vectorize(d.records[3], s).values);
  EXPECT_THROW(ehr::FeatureSchema::parse("not a schema"), ValidationError);
}

TEST(Vectorize, LayoutAndLength) {
  std::vector<PatientRecord> recs = {patient("A", {{"X", 2.0, 0}, {"W", 1.0, 0}}, "A"),
                                     patient("B", {{"X", 4.0, 0}}, "B")};
  const auto s = ehr::fit_pipeline(ehr::pointers(recs));
  // age, 2 sex levels, 2 race levels, 5 vitals.
  EXPECT_EQ(s.count(Component::DemoVitals), 10u);
  EXPECT_EQ(s.count(Component::Metrics), kMetricCount);
  EXPECT_EQ(s.count(Component::Labs), 2u);
  EXPECT_EQ(s.dim(), 10u + 8u + 2u);
  EXPECT_EQ(s.block(Component::DemoVitals), (std::pair<std::size_t, std::size_t>{0, 10}));
  EXPECT_EQ(s.block(Component::Metrics), (std::pair<std::size_t, std::size_t>{10, 18}));
  EXPECT_EQ(s.block(Component::Labs), (std::pair<std::size_t, std::size_t>{18, 20}));
  EXPECT_EQ(s.feature_names[18], "lab_W");
  EXPECT_EQ(s.feature_names[19], "lab_X");
  EXPECT_EQ(ehr::vectorize(recs[0], s).values.size(), s.dim());
}

TEST(Vectorize, AllLabsPresentMeansNothingImputed) {
  std::vector<PatientRecord> recs = {patient("A", {{"X", 2.0, 0}}), patient("B", {{"X", 4.0, 0}})};
  const auto s = ehr::fit_pipeline(ehr::pointers(recs));
  const auto f = ehr::vectorize(recs[0], s);
  EXPECT_TRUE(std::none_of(f.imputed.begin(), f.imputed.end(), [](bool b) { return b; }));
  EXPECT_EQ(f.schema_id, s.id());
}

TEST(Vectorize, MissingLabGetsSchemaMeanAndZeroScore) {
  // X observed for A (1.5) and B (3.5): pooled mean 2.5, population std 1.0.
  // C lacks X and is outside the fitting set.
  std::vector<PatientRecord> fit = {patient("A", {{"X", 1.5, 0}}), patient("B", {{"X", 3.5, 0}})};
  const auto s = ehr::fit_pipeline(ehr::pointers(fit));
  const auto [lo, hi] = s.block(Component::Labs);
  ASSERT_EQ(hi - lo, 1u);
  EXPECT_DOUBLE_EQ(s.feature_means[lo], 2.5);
  EXPECT_DOUBLE_EQ(s.feature_stds[lo], 1.0);
  const auto f = ehr::vectorize(patient("C"), s);
  EXPECT_DOUBLE_EQ(f.values[lo], 0.0);
  EXPECT_TRUE(f.imputed[lo]);
  for (std::size_t j = 0; j < lo; ++j) EXPECT_FALSE(f.imputed[j]);
  EXPECT_DOUBLE_EQ(ehr::vectorize(fit[0], s).values[lo], -1.0);
}

TEST(Vectorize, UnknownCategoricalLevelGivesZeroOneHot) {
  std::vector<PatientRecord> fit = {patient("A", {}, "A"), patient("B", {}, "B"), patient("C", {}, "B")};
  const auto s = ehr::fit_pipeline(ehr::pointers(fit));
  const auto f = ehr::vectorize(patient("D", {}, "Z"), s);
  for (std::size_t j = 0; j < s.dim(); ++j) {
    if (s.feature_names[j].rfind("race_", 0) == 0) {
      EXPECT_NEAR(f.values[j] * s.feature_stds[j] + s.feature_means[j], 0.0, 1e-12) << s.feature_names[j];
    }
  }
}

TEST(Vectorize, TotalOverMissingnessPatterns) {
  synth::CohortSpec spec;
  spec.n_patients = 40;
  spec.lab_missingness = 0.7;
  const Dataset d = synth::synthesize(spec);
  const auto s = ehr::fit_pipeline(ehr::pointers(d.records));
  for (const auto& r : d.records) {
    const auto a = ehr::vectorize(r, s), b = ehr::vectorize(r, s);
    EXPECT_EQ(a.values, b.values);
    for (double v : a.values) EXPECT_TRUE(std::isfinite(v));
  }
  auto stripped = d.records[0];
  stripped.labs.clear();
  for (double v : ehr::vectorize(stripped, s).values) EXPECT_TRUE(std::isfinite(v));
}

TEST(ComponentMask, DropsExactBlocks) {
  std::vector<PatientRecord> recs = {patient("A", {{"X", 2.0, 0}}), patient("B", {{"X", 4.0, 0}})};
  const auto s = ehr::fit_pipeline(ehr::pointers(recs));
  const auto labs = ehr::component_mask(s, {Component::Labs});
  const auto [lo, hi] = s.block(Component::Labs);
  for (std::size_t j = 0; j < s.dim(); ++j) EXPECT_EQ(labs[j], j < lo || j >= hi);
  const auto none = ehr::component_mask(s, {});
  EXPECT_TRUE(std::all_of(none.begin(), none.end(), [](bool b) { return b; }));
  const auto all = ehr::component_mask(s, {Component::Labs, Component::Metrics, Component::DemoVitals});
  EXPECT_TRUE(std::none_of(all.begin(), all.end(), [](bool b) { return b; }));
}

TEST(Leakage, HeldOutLabsNeverChangeSchema) {
  synth::CohortSpec spec;
  spec.n_patients = 50;
  const Dataset d = synth::synthesize(spec);
  std::vector<std::size_t> train, held;
  for (std::size_t i = 0; i < d.size(); ++i) (i % 5 == 0 ? held : train).push_back(i);
  const std::string before = ehr::fit_pipeline(ehr::pointers(d.records, train)).serialize();

  auto mutated = d.records;
  Rng rng(1);
  for (std::size_t i : held) {
    for (auto& lab : mutated[i].labs) lab.value = rng.normal(1000, 500);
    mutated[i].labs.push_back({"NEW-1", 1.0, 0});
    mutated[i].race = "never-seen";
  }
  EXPECT_EQ(ehr::fit_pipeline(ehr::pointers(mutated, train)).serialize(), before);
}

TEST(Components, NamesRoundtrip) {
  for (Component c : {Component::DemoVitals, Component::Metrics, Component::Labs}) {
    EXPECT_EQ(ehr::parse_component(ehr::component_name(c)), c);
  }
  EXPECT_THROW(ehr::parse_component("vitals2"), ValidationError);
}

}  // namespace
