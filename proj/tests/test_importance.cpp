#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "cardiofuse/dataio.hpp"
#include "cardiofuse/error.hpp"
#include "cardiofuse/importance.hpp"
#include "test_util.hpp"

using namespace cardiofuse;
using importance::Aggregation;
using model::Kind;

namespace {

double total(const importance::WeightMap& w) {
  double s = 0.0;
  for (const auto& [k, v] : w) s += v;
  return s;
}

TEST(ColumnL1, HandExample) {
  const Tensor w({2, 3}, {1, 0, 2, -1, 0, 0});
  const auto f = importance::column_l1_fractions(w);
  ASSERT_EQ(f.size(), 3u);
  EXPECT_DOUBLE_EQ(f[0], 0.5);
  EXPECT_DOUBLE_EQ(f[1], 0.0);
  EXPECT_DOUBLE_EQ(f[2], 0.5);
}

TEST(ColumnL1, AllZeroRejected) {
  EXPECT_THROW(importance::column_l1_fractions(Tensor({3, 4})), ValidationError);
}

TEST(ColumnL1, NeedsMatrix) { EXPECT_THROW(importance::column_l1_fractions(Tensor({2, 2, 2})), ShapeError); }

TEST(ColumnL1, RandomMatricesLandOnSimplex) {
  Rng rng(21);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t r = 1 + rng.below(6), c = 1 + rng.below(9);
    Tensor w({r, c});
    for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
    const auto f = importance::column_l1_fractions(w);
    EXPECT_NEAR(std::accumulate(f.begin(), f.end(), 0.0), 1.0, 1e-12);
    for (std::size_t j = 0; j < c; ++j) {
      double l1 = 0.0, all = 0.0;
      for (std::size_t i = 0; i < r; ++i) l1 += std::abs(w.at(i, j));
      for (double v : w.vec()) all += std::abs(v);
      EXPECT_NEAR(f[j], l1 / all, 1e-12);
    }
  }
}

class Importance : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data_ = new Dataset(synth::synthesize(cftest::complementary_cohort(4, 20)));
    schema_ = new ehr::FeatureSchema(ehr::fit_pipeline(ehr::pointers(data_->records)));
    std::vector<std::size_t> all(20);
    std::iota(all.begin(), all.end(), 0);
    ex_ = new train::Examples(train::make_examples(*data_, all, schema_));
  }
  static void TearDownTestSuite() {
    delete ex_;
    delete schema_;
    delete data_;
  }

  static model::Model make(Kind kind, std::size_t layers = 1, std::size_t heads = 1) {
    auto cfg = cftest::tiny_config(kind, schema_->dim());
    cfg.fusion.n_layers = layers;
    cfg.fusion.n_heads = heads;
    return model::Model::create(cfg, 17);
  }

  static Dataset* data_;
  static ehr::FeatureSchema* schema_;
  static train::Examples* ex_;
};

Dataset* Importance::data_ = nullptr;
ehr::FeatureSchema* Importance::schema_ = nullptr;
train::Examples* Importance::ex_ = nullptr;

TEST_F(Importance, ModalityWeightsOnSimplex) {
  auto m = make(Kind::IntermediateFusion, 2, 2);
  const auto w = importance::modality_importance(m, *ex_);
  ASSERT_EQ(w.size(), 3u);
  EXPECT_EQ(w[0].first, "EHR");
  EXPECT_EQ(w[1].first, "PLAX");
  EXPECT_EQ(w[2].first, "A4C");
  EXPECT_NEAR(total(w), 1.0, 1e-12);
  for (const auto& [k, v] : w) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST_F(Importance, SingleSampleMatchesRenormalizedClsRow) {
  auto m = make(Kind::IntermediateFusion);
  const train::Examples one = train::select(*ex_, {3});
  const auto w = importance::modality_importance(m, one);

  model::AttentionRecord rec;
  model::ForwardOptions fo;
  fo.attention = &rec;
  ag::Tape tape(false);
  m.forward(tape, train::make_batch(m, one, {0}), fo);
  const Tensor& p = rec.layers.back();
  const double self = p.data()[0];
  for (std::size_t j = 1; j < model::kFusionTokens; ++j) {
    EXPECT_NEAR(w[j - 1].second, p.data()[j] / (1.0 - self), 1e-12);
  }
}

TEST_F(Importance, SampleAverageOfPerSampleWeights) {
  auto m = make(Kind::IntermediateFusion, 1, 2);
  const auto all = importance::modality_importance(m, *ex_);
  std::vector<double> mean(3, 0.0);
  for (std::size_t i = 0; i < ex_->size(); ++i) {
    const auto w = importance::modality_importance(m, train::select(*ex_, {i}));
    for (std::size_t j = 0; j < 3; ++j) mean[j] += w[j].second / static_cast<double>(ex_->size());
  }
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(all[j].second, mean[j], 1e-12);
}

TEST_F(Importance, LayerAggregation) {
  auto one_layer = make(Kind::IntermediateFusion, 1);
  const auto a = importance::modality_importance(one_layer, *ex_, Aggregation::FinalLayer);
  const auto b = importance::modality_importance(one_layer, *ex_, Aggregation::LayerAverage);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(a[j].second, b[j].second);

  auto two = make(Kind::IntermediateFusion, 2);
  const auto c = importance::modality_importance(two, *ex_, Aggregation::FinalLayer);
  const auto d = importance::modality_importance(two, *ex_, Aggregation::LayerAverage);
  EXPECT_NEAR(total(d), 1.0, 1e-12);
  double diff = 0.0;
  for (std::size_t j = 0; j < 3; ++j) diff += std::abs(c[j].second - d[j].second);
  EXPECT_GT(diff, 1e-9);
}

TEST_F(Importance, OtherKindsRejected) {
  for (Kind k : {Kind::EhrLr, Kind::SinglePlax, Kind::DoubleView, Kind::LateFusion}) {
    auto m = make(k);
    EXPECT_THROW(importance::modality_importance(m, *ex_), KindError) << model::kind_name(k);
    EXPECT_THROW(importance::ehr_entry_importance(m, *schema_), KindError) << model::kind_name(k);
  }
}

TEST_F(Importance, EntryAndComponentWeights) {
  auto m = make(Kind::IntermediateFusion);
  const auto entries = importance::ehr_entry_importance(m, *schema_);
  ASSERT_EQ(entries.size(), schema_->dim());
  for (std::size_t j = 0; j < entries.size(); ++j) EXPECT_EQ(entries[j].first, schema_->feature_names[j]);
  EXPECT_NEAR(total(entries), 1.0, 1e-12);

  const auto comps = importance::ehr_component_importance(entries, *schema_);
  ASSERT_EQ(comps.size(), 3u);
  EXPECT_EQ(comps[0].first, "demo_vitals");
  EXPECT_EQ(comps[1].first, "metrics");
  EXPECT_EQ(comps[2].first, "labs");
  EXPECT_NEAR(total(comps), 1.0, 1e-12);
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0.0;
    for (std::size_t j = 0; j < entries.size(); ++j) {
      if (static_cast<std::size_t>(schema_->feature_components[j]) == c) s += entries[j].second;
    }
    EXPECT_NEAR(comps[c].second, s, 1e-12) << comps[c].first;
  }
}

TEST_F(Importance, MaskedEntriesStayAtZeroThroughTraining) {
  auto cfg = cftest::tiny_config(Kind::IntermediateFusion, schema_->dim());
  cfg.ehr_keep = ehr::component_mask(*schema_, {ehr::Component::Labs});
  auto m = model::Model::create(cfg, 5);
  train::TrainConfig tc;
  tc.epochs = 2;
  tc.lr = 1e-2;
  tc.weight_decay = 1e-3;
  train::fit(m, *ex_, tc);
  const auto entries = importance::ehr_entry_importance(m, *schema_);
  const auto [lo, hi] = schema_->block(ehr::Component::Labs);
  ASSERT_LT(lo, hi);
  for (std::size_t j = 0; j < entries.size(); ++j) {
    if (j >= lo && j < hi) {
      EXPECT_EQ(entries[j].second, 0.0) << entries[j].first;
    } else {
      EXPECT_GT(entries[j].second, 0.0) << entries[j].first;
    }
  }
  EXPECT_EQ(importance::ehr_component_importance(entries, *schema_)[2].second, 0.0);
}

TEST_F(Importance, SchemaWidthMismatch) {
  auto cfg = cftest::tiny_config(Kind::IntermediateFusion, schema_->dim() + 1);
  auto m = model::Model::create(cfg, 5);
  EXPECT_THROW(importance::ehr_entry_importance(m, *schema_), ShapeError);
}

TEST_F(Importance, ExportedFiles) {
  auto m = make(Kind::IntermediateFusion);
  const auto report = importance::build_report(m, *ex_, *schema_);
  const auto dir = cftest::temp_dir("importance_export");
  const auto paths = importance::export_importance(report, dir, "model=x");
  ASSERT_EQ(paths.size(), 3u);
  const std::size_t expected_rows[] = {3, 3, schema_->dim()};
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string text = dataio::read_text_file(paths[i]);
    EXPECT_EQ(text.rfind("# model=x\nname,weight\n", 0), 0u) << paths[i];
    const auto rows = dataio::read_csv(paths[i], {"name", "weight"});
    EXPECT_EQ(rows.size(), expected_rows[i]) << paths[i];
  }

  const auto rows = dataio::read_csv(dir / "ehr_entry_importance.csv", {"name", "weight"});
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_GE(dataio::parse_double(rows[i - 1][1], "w"), dataio::parse_double(rows[i][1], "w"));
  }

  std::vector<std::string> before;
  for (const auto& p : paths) before.push_back(dataio::read_text_file(p));
  importance::export_importance(report, dir, "model=x");
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(dataio::read_text_file(paths[i]), before[i]);
}

}  // namespace
