#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "cardiofuse/error.hpp"
#include "cardiofuse/evalcv.hpp"
#include "cardiofuse/rng.hpp"
#include "cardiofuse/synthcohort.hpp"
#include "test_util.hpp"

using namespace cardiofuse;
using cv::ConfusionMetrics;

namespace {

std::vector<std::string> make_ids(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("P" + std::to_string(1000 + i));
  return ids;
}

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

// ---- confusion metrics ----------------------------------------------------

TEST(Confusion, PerfectPair) {
  const ConfusionMetrics m = cv::confusion_metrics({0.9, 0.2}, {1, 0});
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.sensitivity, 1.0);
  EXPECT_EQ(m.specificity, 1.0);
}

TEST(Confusion, HalfRightEverywhere) {
  const ConfusionMetrics m = cv::confusion_metrics({0.6, 0.6, 0.4, 0.2}, {1, 0, 1, 0});
  EXPECT_EQ(m.tp, 1u);
  EXPECT_EQ(m.fp, 1u);
  EXPECT_EQ(m.fn, 1u);
  EXPECT_EQ(m.tn, 1u);
  EXPECT_EQ(m.accuracy, 0.5);
  EXPECT_EQ(m.sensitivity, 0.5);
  EXPECT_EQ(m.specificity, 0.5);
}

TEST(Confusion, ThresholdIsInclusive) {
  const ConfusionMetrics m = cv::confusion_metrics({0.5, 0.4999999}, {1, 0});
  EXPECT_EQ(m.tp, 1u);
  EXPECT_EQ(m.tn, 1u);
}

TEST(Confusion, AllPositiveLeavesSpecificityUndefined) {
  const ConfusionMetrics m = cv::confusion_metrics({0.7, 0.3, 0.8}, {1, 1, 1});
  EXPECT_TRUE(std::isnan(m.specificity));
  EXPECT_NEAR(m.sensitivity, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(m.accuracy, 2.0 / 3.0, 1e-15);
}

TEST(Confusion, RandomCasesMatchCounting) {
  Rng rng(11);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 2 + rng.below(40);
    std::vector<double> p(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = std::round(rng.uniform() * 10.0) / 10.0;
      y[i] = rng.uniform() < 0.5 ? 1 : 0;
    }
    double tp = 0, tn = 0, pos = 0, neg = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool hit = p[i] >= 0.5;
      if (y[i] == 1) {
        ++pos;
        tp += hit;
      } else {
        ++neg;
        tn += !hit;
      }
    }
    const ConfusionMetrics m = cv::confusion_metrics(p, y);
    EXPECT_DOUBLE_EQ(m.accuracy, (tp + tn) / static_cast<double>(n));
    if (pos > 0) EXPECT_DOUBLE_EQ(m.sensitivity, tp / pos);
    if (neg > 0) EXPECT_DOUBLE_EQ(m.specificity, tn / neg);
    EXPECT_EQ(m.tp + m.fp + m.tn + m.fn, n);
  }
}

TEST(Confusion, LengthMismatchThrows) { EXPECT_ANY_THROW(cv::confusion_metrics({0.1, 0.2}, {1})); }

// ---- AUROC ----------------------------------------------------------------

TEST(Auroc, ThreeOfFourPairsOrdered) { EXPECT_DOUBLE_EQ(cv::auroc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}), 0.75); }

TEST(Auroc, AllTiedIsHalf) { EXPECT_DOUBLE_EQ(cv::auroc({0.3, 0.3, 0.3, 0.3}, {1, 0, 0, 1}), 0.5); }

TEST(Auroc, SeparatedIsOne) {
  EXPECT_DOUBLE_EQ(cv::auroc({0.9, 0.8, 0.1, 0.2}, {1, 1, 0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(cv::auroc({0.1, 0.2, 0.9, 0.8}, {1, 1, 0, 0}), 0.0);
}

TEST(Auroc, SingleClassThrows) {
  EXPECT_ANY_THROW(cv::auroc({0.1, 0.2}, {1, 1}));
  EXPECT_ANY_THROW(cv::auroc({0.1, 0.2}, {0, 0}));
}

TEST(Auroc, MatchesPairCountingOracle) {
  Rng rng(5);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 2 + rng.below(60);
    std::vector<double> p(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse grid so ties happen often.
      p[i] = std::floor(rng.uniform() * 8.0) / 8.0;
      y[i] = static_cast<int>(i % 2 == 0 ? 1 : rng.uniform() < 0.4);
    }
    y[1] = 0;
    EXPECT_NEAR(cv::auroc(p, y), cftest::auroc_pairs(p, y), 1e-12);
  }
}

TEST(Auroc, InvariantToMonotoneTransform) {
  Rng rng(8);
  std::vector<double> p(50), q(50);
  std::vector<int> y(50);
  for (std::size_t i = 0; i < 50; ++i) {
    p[i] = rng.uniform();
    q[i] = std::exp(3.0 * p[i]);
    y[i] = i % 3 == 0;
  }
  EXPECT_DOUBLE_EQ(cv::auroc(p, y), cv::auroc(q, y));
}

// ---- folds ----------------------------------------------------------------

TEST(Folds, FortyOnePatientsStratified) {
  std::vector<int> labels(41, 0);
  for (std::size_t i = 0; i < 17; ++i) labels[i * 2] = 1;
  const auto plan = cv::make_folds(make_ids(41), labels, 5, 3);
  for (std::size_t f = 0; f < 5; ++f) {
    std::size_t pos = 0, neg = 0;
    for (std::size_t i : plan.test_indices(f)) (labels[i] == 1 ? pos : neg)++;
    EXPECT_TRUE(pos == 3 || pos == 4) << "fold " << f << " positives " << pos;
    EXPECT_TRUE(neg == 4 || neg == 5) << "fold " << f << " negatives " << neg;
  }
}

TEST(Folds, PartitionAndBalanceOverManyDraws) {
  Rng rng(99);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t k = 2 + rng.below(5);
    const std::size_t n = k + rng.below(60);
    std::vector<int> labels(n);
    for (auto& l : labels) l = rng.uniform() < 0.35 ? 1 : 0;
    const auto ids = make_ids(n);
    const auto plan = cv::make_folds(ids, labels, k, rep);

    std::vector<std::size_t> seen(n, 0);
    std::vector<std::size_t> pos(k, 0), neg(k, 0), size(k, 0);
    for (std::size_t f = 0; f < k; ++f) {
      const auto test = plan.test_indices(f);
      const auto train = plan.train_indices(f);
      EXPECT_EQ(test.size() + train.size(), n);
      std::set<std::size_t> both(test.begin(), test.end());
      for (std::size_t i : train) EXPECT_FALSE(both.count(i));
      for (std::size_t i : test) {
        ++seen[i];
        (labels[i] == 1 ? pos : neg)[f]++;
      }
      size[f] = test.size();
    }
    for (std::size_t c : seen) ASSERT_EQ(c, 1u);
    auto spread = [](const std::vector<std::size_t>& v) {
      return *std::max_element(v.begin(), v.end()) - *std::min_element(v.begin(), v.end());
    };
    EXPECT_LE(spread(pos), 1u);
    EXPECT_LE(spread(neg), 1u);
    EXPECT_LE(spread(size), 1u);
  }
}

TEST(Folds, DeterministicAndOrderIndependent) {
  std::vector<int> labels(30);
  for (std::size_t i = 0; i < 30; ++i) labels[i] = i % 3 == 0;
  const auto ids = make_ids(30);
  const auto a = cv::make_folds(ids, labels, 5, 42);
  const auto b = cv::make_folds(ids, labels, 5, 42);
  EXPECT_EQ(a.fold, b.fold);

  std::vector<std::string> rids(ids.rbegin(), ids.rend());
  std::vector<int> rlabels(labels.rbegin(), labels.rend());
  const auto r = cv::make_folds(rids, rlabels, 5, 42);
  for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(r.fold[29 - i], a.fold[i]);

  const auto c = cv::make_folds(ids, labels, 5, 43);
  EXPECT_NE(a.fold, c.fold);
}

TEST(Folds, InvalidK) {
  const std::vector<int> labels{1, 0, 1};
  EXPECT_THROW(cv::make_folds(make_ids(3), labels, 4, 1), ValidationError);
  EXPECT_THROW(cv::make_folds(make_ids(3), labels, 1, 1), ValidationError);
}

TEST(Folds, SmallClassWarns) {
  std::vector<int> labels(20, 0);
  labels[0] = labels[1] = 1;
  std::vector<std::string> warnings;
  cv::make_folds(make_ids(20), labels, 5, 1, true, &warnings);
  ASSERT_FALSE(warnings.empty());
  EXPECT_NE(warnings[0].find("only 2"), std::string::npos) << warnings[0];
}

// ---- aggregation and reports ----------------------------------------------

std::vector<cv::FoldMetrics> five_folds() {
  const double au[] = {0.9, 0.8, 1.0, 0.7, 0.85};
  std::vector<cv::FoldMetrics> v;
  for (std::size_t f = 0; f < 5; ++f) {
    cv::FoldMetrics m;
    m.fold = f;
    m.auroc = au[f];
    m.accuracy = 0.5 + 0.1 * static_cast<double>(f);
    m.sensitivity = 0.6;
    m.specificity = 0.4;
    v.push_back(m);
  }
  return v;
}

TEST(MeanMetrics, ArithmeticMean) {
  const auto m = cv::mean_metrics(five_folds());
  EXPECT_NEAR(m.auroc, 0.85, 1e-12);
  EXPECT_NEAR(m.accuracy, 0.7, 1e-12);
}

TEST(MeanMetrics, InvariantToFoldOrder) {
  auto folds = five_folds();
  const auto base = cv::mean_metrics(folds);
  std::reverse(folds.begin(), folds.end());
  const auto rev = cv::mean_metrics(folds);
  EXPECT_NEAR(base.auroc, rev.auroc, 1e-15);
  EXPECT_NEAR(base.accuracy, rev.accuracy, 1e-15);
}

TEST(MeanMetrics, NanIsSkippedWithWarning) {
  auto folds = five_folds();
  folds[2].specificity = std::nan("");
  folds[2].auroc = std::nan("");
  std::vector<std::string> warnings;
  const auto m = cv::mean_metrics(folds, &warnings);
  EXPECT_NEAR(m.auroc, (0.9 + 0.8 + 0.7 + 0.85) / 4.0, 1e-12);
  EXPECT_NEAR(m.specificity, 0.4, 1e-12);
  EXPECT_EQ(warnings.size(), 2u);
}

TEST(Reports, CsvHasFoldRowsAndMean) {
  cv::CVReport r;
  r.preset = "table2-row1";
  r.kind = "ehr_lr";
  r.seed = 4;
  r.k = 5;
  r.folds = five_folds();
  r.mean = cv::mean_metrics(r.folds);
  const auto lines = lines_of(cv::report_csv(r));
  ASSERT_EQ(lines.size(), 8u);
  EXPECT_EQ(lines[0].rfind("# cardiofuse preset=table2-row1", 0), 0u) << lines[0];
  EXPECT_NE(lines[0].find("seed=4"), std::string::npos);
  EXPECT_EQ(lines[1], "Fold,Accuracy,Sensitivity,Specificity,AUROC");
  for (std::size_t f = 0; f < 5; ++f) EXPECT_EQ(lines[2 + f].rfind(std::to_string(f + 1) + ",", 0), 0u);
  EXPECT_EQ(lines[7].rfind("mean,", 0), 0u);
}

TEST(Reports, TextHasSections) {
  cv::CVReport r;
  r.preset = "table2-row2";
  r.k = 5;
  r.folds = five_folds();
  r.folds[1].specificity = std::nan("");
  r.mean = cv::mean_metrics(r.folds, &r.warnings);
  const std::string t = cv::report_text(r);
  EXPECT_EQ(t.rfind("cardiofuse-cvreport 1\n", 0), 0u);
  for (int f = 1; f <= 5; ++f) EXPECT_NE(t.find("[fold " + std::to_string(f) + "]"), std::string::npos);
  EXPECT_NE(t.find("[mean]"), std::string::npos);
  EXPECT_NE(t.find("specificity = nan"), std::string::npos);
  EXPECT_NE(t.find("warning = "), std::string::npos);
}

// ---- presets --------------------------------------------------------------

TEST(Presets, TenNamedRows) {
  const auto& all = cv::presets();
  ASSERT_EQ(all.size(), 10u);
  std::set<std::string> names;
  for (const auto& p : all) names.insert(p.name);
  EXPECT_EQ(names.size(), 10u);
  EXPECT_EQ(cv::find_preset("table2-row1").kind, model::Kind::EhrLr);
  EXPECT_EQ(cv::find_preset("table2-row5").kind, model::Kind::LateFusion);
  EXPECT_EQ(cv::find_preset("table2-row6").kind, model::Kind::IntermediateFusion);
  EXPECT_TRUE(cv::find_preset("table3-drop-labs").drop.count(ehr::Component::Labs));
  EXPECT_TRUE(cv::find_preset("table3-full").drop.empty());
  EXPECT_THROW(cv::find_preset("table9-row1"), ConfigError);
}

TEST(Presets, AblationOrder) {
  EXPECT_EQ(cv::ablation_preset_names(),
            (std::vector<std::string>{"table3-drop-demo", "table3-drop-metrics", "table3-drop-labs", "table3-full"}));
}

TEST(RunConfigText, FingerprintTracksSettings) {
  cv::RunConfig a, b;
  EXPECT_EQ(a.serialize(), b.serialize());
  b.seed = 2;
  EXPECT_NE(a.serialize(), b.serialize());
  EXPECT_EQ(cv::parse_scope(cv::scope_name(cv::Scope::All)), cv::Scope::All);
  EXPECT_ANY_THROW(cv::parse_scope("everything"));
}

// ---- end to end on a small cohort -----------------------------------------

class SmallCv : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    synth::CohortSpec s;
    s.n_patients = 30;
    s.prevalence = 0.4;
    s.seed = 3;
    s.n_lab_codes = 8;
    data_ = new Dataset(synth::synthesize(s));
  }
  static void TearDownTestSuite() {
    delete data_;
    data_ = nullptr;
  }

  static cv::RunConfig run(const std::string& preset) {
    cv::RunConfig rc;
    rc.preset = preset;
    rc.seed = 5;
    rc.k = 3;
    rc.model = cftest::tiny_config(model::Kind::EhrLr, 0);
    rc.model.fusion.encoder_freeze = true;
    rc.train.epochs = 1;
    rc.train.lr = 1e-3;
    rc.fusion_train.epochs = 1;
    rc.fusion_train.lr = 1e-3;
    rc.ehr_lr_epochs = 2;
    return rc;
  }

  static Dataset* data_;
};

Dataset* SmallCv::data_ = nullptr;

TEST_F(SmallCv, ReportShape) {
  const auto r = cv::cross_validate(run("table2-row1"), *data_);
  ASSERT_EQ(r.folds.size(), 3u);
  std::size_t tested = 0;
  for (std::size_t f = 0; f < 3; ++f) {
    EXPECT_EQ(r.folds[f].fold, f);
    EXPECT_EQ(r.folds[f].n_train + r.folds[f].n_test, 30u);
    tested += r.folds[f].n_test;
    EXPECT_GE(r.folds[f].auroc, 0.0);
    EXPECT_LE(r.folds[f].auroc, 1.0);
  }
  EXPECT_EQ(tested, 30u);
  EXPECT_EQ(r.kind, "ehr_lr");
  EXPECT_EQ(r.fingerprint.size(), 16u);
}

TEST_F(SmallCv, Repeatable) {
  const auto a = cv::cross_validate(run("table2-row6"), *data_);
  const auto b = cv::cross_validate(run("table2-row6"), *data_);
  EXPECT_EQ(cv::report_csv(a), cv::report_csv(b));
}

TEST_F(SmallCv, ParallelFoldsMatchSerial) {
  auto rc = run("table2-row6");
  const auto serial = cv::cross_validate(rc, *data_);
  rc.parallel_folds = 2;
  const auto par = cv::cross_validate(rc, *data_);
  ASSERT_EQ(serial.folds.size(), par.folds.size());
  for (std::size_t f = 0; f < serial.folds.size(); ++f) {
    EXPECT_EQ(serial.folds[f].auroc, par.folds[f].auroc);
    EXPECT_EQ(serial.folds[f].accuracy, par.folds[f].accuracy);
  }
  EXPECT_EQ(serial.mean.auroc, par.mean.auroc);
}

TEST_F(SmallCv, TestFoldNeverReachesFittingOrTraining) {
  const auto plan = cv::make_folds(data_->ids(), data_->labels(), 3, 5);
  for (const std::string preset : {"table2-row1", "table2-row5", "table2-row6", "table3-drop-labs"}) {
    std::map<std::pair<std::size_t, std::string>, std::size_t> calls;
    cv::CvOptions opt;
    opt.observer = [&](std::size_t fold, std::string_view stage, const std::vector<std::string>& ids) {
      calls[{fold, std::string(stage)}] += 1;
      std::set<std::string> test;
      for (std::size_t i : plan.test_indices(fold)) test.insert(plan.ids[i]);
      for (const auto& id : ids) EXPECT_FALSE(test.count(id)) << preset << " fold " << fold << " " << stage << " " << id;
    };
    cv::cross_validate(run(preset), *data_, opt);
    for (std::size_t f = 0; f < 3; ++f) {
      EXPECT_GT((calls[{f, "schema"}]), 0u) << preset;
      EXPECT_GT((calls[{f, "train"}]), 0u) << preset;
    }
  }
}

TEST_F(SmallCv, ScopeAllUsesEveryPatientForTheSchema) {
  auto rc = run("table2-row1");
  rc.scope = cv::Scope::All;
  std::size_t widest = 0;
  cv::CvOptions opt;
  opt.observer = [&](std::size_t, std::string_view stage, const std::vector<std::string>& ids) {
    if (stage == "schema") widest = std::max(widest, ids.size());
  };
  cv::cross_validate(rc, *data_, opt);
  EXPECT_EQ(widest, 30u);
}

TEST_F(SmallCv, EncoderCacheSharedAcrossPresets) {
  cv::EncoderCache cache;
  cv::CvOptions opt;
  opt.cache = &cache;
  const auto plax_first = cv::cross_validate(run("table2-row2"), *data_, opt);
  const std::size_t after_single = cache.size();
  EXPECT_EQ(after_single, 3u);
  cv::cross_validate(run("table2-row6"), *data_, opt);
  EXPECT_GE(cache.hits(), 3u);
  EXPECT_EQ(cache.size(), 6u);  // A4C encoders added, PLAX reused

  // A cached run gives exactly the uncached numbers.
  const auto fresh = cv::cross_validate(run("table2-row6"), *data_);
  const auto cached = cv::cross_validate(run("table2-row6"), *data_, opt);
  EXPECT_EQ(cv::report_csv(fresh), cv::report_csv(cached));
}

TEST_F(SmallCv, FoldErrorCarriesFoldNumberAndType) {
  cv::CvOptions opt;
  opt.observer = [](std::size_t fold, std::string_view, const std::vector<std::string>&) {
    if (fold == 1) throw TrainingError("boom");
  };
  try {
    cv::cross_validate(run("table2-row1"), *data_, opt);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("fold 2: ", 0), 0u) << e.what();
    EXPECT_NE(std::string(e.what()).find("boom"), std::string::npos);
  }
}

TEST_F(SmallCv, CheckpointsWritten) {
  const auto dir = cftest::temp_dir("cv_ckpt");
  cv::CvOptions opt;
  opt.checkpoint_dir = dir.string();
  cv::cross_validate(run("table2-row1"), *data_, opt);
  for (int f = 1; f <= 3; ++f) EXPECT_TRUE(std::filesystem::exists(dir / ("fold" + std::to_string(f) + "_ehr_lr.ckpt")));
}

TEST_F(SmallCv, KLargerThanCohortRejected) {
  auto rc = run("table2-row1");
  rc.k = 31;
  EXPECT_THROW(cv::cross_validate(rc, *data_), ValidationError);
}

}  // namespace
