#include "cardiofuse/evalcv.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include "cardiofuse/dataio.hpp"
#include "cardiofuse/error.hpp"
#include "cardiofuse/hash.hpp"

namespace cardiofuse::cv {

using model::Kind;
using model::Model;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

// ---- folds ----------------------------------------------------------------

std::vector<std::size_t> FoldPlan::test_indices(std::size_t f) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold.size(); ++i) {
    if (fold[i] == f) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FoldPlan::train_indices(std::size_t f) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold.size(); ++i) {
    if (fold[i] != f) out.push_back(i);
  }
  return out;
}

FoldPlan make_folds(const std::vector<std::string>& ids, const std::vector<int>& labels, std::size_t k,
                    std::uint64_t seed, bool stratified, std::vector<std::string>* warnings) {
  if (ids.size() != labels.size()) throw ValidationError("make_folds: ids and labels differ in length");
  if (k < 2) throw ValidationError("make_folds: k must be at least 2");
  if (k > ids.size()) {
    throw ValidationError("make_folds: k=" + std::to_string(k) + " exceeds the " + std::to_string(ids.size()) +
                          " patients");
  }
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.stratified = stratified;
  plan.ids = ids;
  plan.fold.assign(ids.size(), 0);

  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (ids[order[i]] == ids[order[i - 1]]) throw ValidationError("make_folds: duplicate id " + ids[order[i]]);
  }

  if (!stratified) {
    Rng rng(derive_seed(seed, fnv1a("folds.all")));
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t r = 0; r < order.size(); ++r) plan.fold[order[r]] = r % k;
    return plan;
  }

  std::vector<std::size_t> pos, neg;
  for (std::size_t i : order) (labels[i] == 1 ? pos : neg).push_back(i);
  for (auto [group, name] : {std::pair{&pos, "positive"}, std::pair{&neg, "negative"}}) {
    if (group->size() < k && warnings) {
      warnings->push_back("only " + std::to_string(group->size()) + " " + name + " patients for k=" +
                          std::to_string(k) + "; some folds will have none");
    }
  }
  Rng pos_rng(derive_seed(seed, fnv1a("folds.positive")));
  Rng neg_rng(derive_seed(seed, fnv1a("folds.negative")));
  pos_rng.shuffle(std::span<std::size_t>(pos));
  neg_rng.shuffle(std::span<std::size_t>(neg));
  for (std::size_t r = 0; r < pos.size(); ++r) plan.fold[pos[r]] = r % k;
  // Negatives continue the round-robin where positives stopped, which keeps
  // fold sizes within one of each other as well.
  const std::size_t offset = pos.size() % k;
  for (std::size_t r = 0; r < neg.size(); ++r) plan.fold[neg[r]] = (offset + r) % k;
  return plan;
}

// ---- metrics --------------------------------------------------------------

ConfusionMetrics confusion_metrics(const std::vector<double>& probs, const std::vector<int>& labels,
                                   double threshold) {
  if (probs.size() != labels.size()) {
    throw ValidationError("confusion_metrics: " + std::to_string(probs.size()) + " probabilities vs " +
                          std::to_string(labels.size()) + " labels");
  }
  if (probs.empty()) throw ValidationError("confusion_metrics: no samples");
  ConfusionMetrics m;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool predicted = probs[i] >= threshold;
    if (labels[i] == 1) {
      (predicted ? m.tp : m.fn)++;
    } else {
      (predicted ? m.fp : m.tn)++;
    }
  }
  const auto ratio = [](std::size_t a, std::size_t b) {
    return b == 0 ? kNaN : static_cast<double>(a) / static_cast<double>(b);
  };
  m.accuracy = ratio(m.tp + m.tn, probs.size());
  m.sensitivity = ratio(m.tp, m.tp + m.fn);
  m.specificity = ratio(m.tn, m.tn + m.fp);
  return m;
}

double auroc(const std::vector<double>& probs, const std::vector<int>& labels) {
  if (probs.size() != labels.size()) throw ValidationError("auroc: probabilities and labels differ in length");
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] < probs[b]; });
  // Count, for each positive, the negatives strictly below and tied with it.
  // Integer counts keep the result exact up to the final division.
  std::uint64_t below2 = 0;  // twice the credited pair count
  std::uint64_t n_pos = 0, n_neg = 0;
  std::uint64_t neg_before = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t tie_pos = 0, tie_neg = 0;
    while (j < order.size() && probs[order[j]] == probs[order[i]]) {
      (labels[order[j]] == 1 ? tie_pos : tie_neg)++;
      ++j;
    }
    below2 += tie_pos * (2 * neg_before + tie_neg);
    neg_before += tie_neg;
    n_pos += tie_pos;
    n_neg += tie_neg;
    i = j;
  }
  if (n_pos == 0 || n_neg == 0) {
    throw ValidationError("auroc: needs both classes (got " + std::to_string(n_pos) + " positives, " +
                          std::to_string(n_neg) + " negatives)");
  }
  return static_cast<double>(below2) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// ---- presets --------------------------------------------------------------

const std::vector<Preset>& presets() {
  using ehr::Component;
  static const std::vector<Preset> all = {
      {"table2-row1", Kind::EhrLr, {}, "EHR"},
      {"table2-row2", Kind::SinglePlax, {}, "PLAX"},
      {"table2-row3", Kind::SingleA4c, {}, "A4C"},
      {"table2-row4", Kind::DoubleView, {}, "PLAX+A4C"},
      {"table2-row5", Kind::LateFusion, {}, "EHR+PLAX+A4C"},
      {"table2-row6", Kind::IntermediateFusion, {}, "EHR+PLAX+A4C"},
      {"table3-drop-demo", Kind::IntermediateFusion, {Component::DemoVitals}, "metrics+labs"},
      {"table3-drop-metrics", Kind::IntermediateFusion, {Component::Metrics}, "demo_vitals+labs"},
      {"table3-drop-labs", Kind::IntermediateFusion, {Component::Labs}, "demo_vitals+metrics"},
      {"table3-full", Kind::IntermediateFusion, {}, "demo_vitals+metrics+labs"},
  };
  return all;
}

const Preset& find_preset(std::string_view name) {
  for (const auto& p : presets()) {
    if (p.name == name) return p;
  }
  std::string known;
  for (const auto& p : presets()) known += (known.empty() ? "" : ", ") + p.name;
  throw ConfigError("unknown preset '" + std::string(name) + "' (known: " + known + ")");
}

std::vector<std::string> ablation_preset_names() {
  return {"table3-drop-demo", "table3-drop-metrics", "table3-drop-labs", "table3-full"};
}

std::string_view scope_name(Scope s) { return s == Scope::Train ? "train" : "all"; }

Scope parse_scope(std::string_view s) {
  if (s == "train") return Scope::Train;
  if (s == "all") return Scope::All;
  throw ConfigError("schema scope must be 'train' or 'all', got '" + std::string(s) + "'");
}

void RunConfig::validate() const {
  find_preset(preset);
  if (k < 2) throw ConfigError("cv.k must be at least 2");
  if (parallel_folds < 1) throw ConfigError("cv.parallel_folds must be at least 1");
  if (window.lo >= window.hi) throw ConfigError("schema.window_lo must be below schema.window_hi");
  if (!(coverage_threshold > 0.0 && coverage_threshold <= 1.0)) {
    throw ConfigError("schema.coverage must lie in (0,1]");
  }
  train.validate();
  fusion_train.validate();
  model::ModelConfig probe = model;
  probe.kind = Kind::SinglePlax;
  probe.ehr_dim = std::max<std::size_t>(probe.ehr_dim, 1);
  probe.ehr_keep.clear();
  probe.validate();
}

namespace {

void write_train(std::ostream& os, const std::string& section, const train::TrainConfig& t) {
  using dataio::format_double;
  os << section << ".lr = " << format_double(t.lr) << "\n";
  os << section << ".epochs = " << t.epochs << "\n";
  os << section << ".batch_size = " << t.batch_size << "\n";
  os << section << ".beta1 = " << format_double(t.beta1) << "\n";
  os << section << ".beta2 = " << format_double(t.beta2) << "\n";
  os << section << ".eps = " << format_double(t.eps) << "\n";
  os << section << ".weight_decay = " << format_double(t.weight_decay) << "\n";
  os << section << ".shuffle = " << (t.shuffle ? "true" : "false") << "\n";
}

}  // namespace

std::string RunConfig::serialize() const {
  std::ostringstream os;
  os << "preset = " << preset << "\n";
  os << "seed = " << seed << "\n";
  os << "cv.k = " << k << "\n";
  os << "cv.stratified = " << (stratified ? "true" : "false") << "\n";
  os << "schema.window_lo = " << window.lo << "\n";
  os << "schema.window_hi = " << window.hi << "\n";
  os << "schema.coverage = " << dataio::format_double(coverage_threshold) << "\n";
  os << "schema.scope = " << scope_name(scope) << "\n";
  write_train(os, "train", train);
  write_train(os, "fusion_train", fusion_train);
  os << "ehr_lr_epochs = " << ehr_lr_epochs << "\n";
  model::ModelConfig m = model;
  m.kind = find_preset(preset).kind;
  m.ehr_dim = 0;
  m.ehr_keep.clear();
  os << m.serialize();
  return os.str();
}

// ---- reports --------------------------------------------------------------

FoldMetrics mean_metrics(const std::vector<FoldMetrics>& folds, std::vector<std::string>* warnings) {
  FoldMetrics mean;
  auto avg = [&](double FoldMetrics::*field, const char* name) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& f : folds) {
      if (std::isnan(f.*field)) continue;
      sum += f.*field;
      ++n;
    }
    if (n < folds.size() && warnings) {
      warnings->push_back(std::string(name) + " undefined in " + std::to_string(folds.size() - n) +
                          " fold(s); mean taken over the remaining " + std::to_string(n));
    }
    mean.*field = n ? sum / static_cast<double>(n) : kNaN;
  };
  avg(&FoldMetrics::accuracy, "Accuracy");
  avg(&FoldMetrics::sensitivity, "Sensitivity");
  avg(&FoldMetrics::specificity, "Specificity");
  avg(&FoldMetrics::auroc, "AUROC");
  for (const auto& f : folds) {
    mean.n_train += f.n_train;
    mean.n_test += f.n_test;
  }
  return mean;
}

namespace {

std::string metric(double v) { return std::isnan(v) ? "nan" : dataio::format_double(v); }

}  // namespace

std::string report_csv(const CVReport& r) {
  std::ostringstream os;
  os << "# cardiofuse preset=" << r.preset << " kind=" << r.kind << " seed=" << r.seed << " k=" << r.k
     << " fingerprint=" << r.fingerprint << "\n";
  os << "Fold,Accuracy,Sensitivity,Specificity,AUROC\n";
  for (const auto& f : r.folds) {
    os << (f.fold + 1) << "," << metric(f.accuracy) << "," << metric(f.sensitivity) << "," << metric(f.specificity)
       << "," << metric(f.auroc) << "\n";
  }
  os << "mean," << metric(r.mean.accuracy) << "," << metric(r.mean.sensitivity) << "," << metric(r.mean.specificity)
     << "," << metric(r.mean.auroc) << "\n";
  return os.str();
}

std::string report_text(const CVReport& r) {
  std::ostringstream os;
  os << "cardiofuse-cvreport 1\n";
  os << "preset = " << r.preset << "\n";
  os << "kind = " << r.kind << "\n";
  os << "seed = " << r.seed << "\n";
  os << "k = " << r.k << "\n";
  os << "fingerprint = " << r.fingerprint << "\n";
  auto block = [&](const FoldMetrics& f) {
    os << "n_train = " << f.n_train << "\n";
    os << "n_test = " << f.n_test << "\n";
    os << "accuracy = " << metric(f.accuracy) << "\n";
    os << "sensitivity = " << metric(f.sensitivity) << "\n";
    os << "specificity = " << metric(f.specificity) << "\n";
    os << "auroc = " << metric(f.auroc) << "\n";
  };
  for (const auto& f : r.folds) {
    os << "\n[fold " << (f.fold + 1) << "]\n";
    block(f);
  }
  os << "\n[mean]\n";
  block(r.mean);
  for (const auto& w : r.warnings) os << "warning = " << w << "\n";
  return os.str();
}

// ---- cache ----------------------------------------------------------------

std::shared_ptr<const EncoderCache::Entry> EncoderCache::find(const std::string& key) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return nullptr;
  ++hits_;
  return it->second;
}

std::shared_ptr<const EncoderCache::Entry> EncoderCache::insert(const std::string& key,
                                                                std::shared_ptr<const Entry> e) {
  std::lock_guard lock(mu_);
  auto [it, inserted] = entries_.emplace(key, std::move(e));
  return it->second;
}

std::size_t EncoderCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

// ---- execution ------------------------------------------------------------

std::string dataset_fingerprint(const Dataset& data) {
  std::uint64_t h = fnv1a("cardiofuse-dataset");
  for (const auto& r : data.records) {
    std::ostringstream os;
    os << r.patient_id << "," << r.label << "," << dataio::format_double(r.age) << "," << r.sex << "," << r.race
       << "," << dataio::format_double(r.sbp) << "," << dataio::format_double(r.dbp) << ","
       << dataio::format_double(r.weight_kg) << "," << dataio::format_double(r.height_m);
    for (double m : r.cardiac_metrics) os << "," << dataio::format_double(m);
    for (const auto& l : r.labs) os << ";" << l.code << "," << dataio::format_double(l.value) << "," << l.days_from_echo;
    h = fnv1a(os.str(), h);
  }
  for (const auto* clips : {&data.plax, &data.a4c}) {
    for (const auto& c : *clips) {
      h = fnv1a(std::string_view(reinterpret_cast<const char*>(c.pixels.data()), c.pixels.size() * sizeof(float)), h);
    }
  }
  return hex64(h);
}

namespace {

struct FoldContext {
  const RunConfig& run;
  const Dataset& data;
  const CvOptions& opt;
  const FoldPlan& plan;
  const std::string& data_fp;
};

std::uint64_t fold_seed(std::uint64_t root, std::string_view stream, std::size_t fold) {
  return derive_seed(derive_seed(root, fnv1a(stream)), fold);
}

std::shared_ptr<const EncoderCache::Entry> stage_a(const FoldContext& ctx, std::size_t fold, View v,
                                                   const train::Examples& train_ex,
                                                   const train::BatchObserver& observer) {
  train::TrainConfig tc = ctx.run.train;
  tc.stage = train::Stage::Single;
  tc.seed = fold_seed(ctx.run.seed, v == View::PLAX ? "stage_a.plax" : "stage_a.a4c", fold);
  model::ModelConfig mc = ctx.run.model;
  mc.kind = v == View::PLAX ? Kind::SinglePlax : Kind::SingleA4c;
  mc.ehr_dim = 0;
  mc.ehr_keep.clear();

  std::ostringstream key;
  key << ctx.data_fp << "|" << view_name(v) << "|fold=" << fold << "|seed=" << tc.seed << "|";
  write_train(key, "t", tc);
  key << mc.serialize();
  for (const auto& id : train_ex.ids) key << id << ",";
  const std::string k = key.str();

  if (ctx.opt.cache) {
    if (auto hit = ctx.opt.cache->find(k)) {
      // The observer still sees the ids a cached model was trained on.
      if (observer) observer(train_ex.ids);
      return hit;
    }
  }
  auto entry = std::make_shared<EncoderCache::Entry>();
  entry->model = train::train_single_view(mc, v, train_ex, tc, nullptr, observer);
  const auto& clips = v == View::PLAX ? ctx.data.plax : ctx.data.a4c;
  std::vector<const EchoClip*> all;
  for (const auto& c : clips) all.push_back(&c);
  entry->features = train::encode_all(entry->model, v, all);
  if (ctx.opt.cache) return ctx.opt.cache->insert(k, std::move(entry));
  return entry;
}

Tensor rows_of(const Tensor& t, const std::vector<std::size_t>& idx) {
  Tensor out({idx.size(), t.cols()});
  for (std::size_t r = 0; r < idx.size(); ++r) std::copy_n(t.data() + idx[r] * t.cols(), t.cols(), out.data() + r * t.cols());
  return out;
}

FoldMetrics run_fold(const FoldContext& ctx, std::size_t fold) {
  const Preset& preset = find_preset(ctx.run.preset);
  const auto train_idx = ctx.plan.train_indices(fold);
  const auto test_idx = ctx.plan.test_indices(fold);

  auto observe = [&](std::string_view stage, const std::vector<std::string>& ids) {
    if (ctx.opt.observer) ctx.opt.observer(fold, stage, ids);
  };
  const train::BatchObserver batch_observer = [&](const std::vector<std::string>& ids) { observe("train", ids); };

  std::vector<std::size_t> fit_idx = train_idx;
  if (ctx.run.scope == Scope::All) {
    fit_idx.resize(ctx.data.size());
    std::iota(fit_idx.begin(), fit_idx.end(), std::size_t{0});
  }
  std::vector<std::string> fit_ids;
  for (std::size_t i : fit_idx) fit_ids.push_back(ctx.data.records[i].patient_id);
  observe("schema", fit_ids);
  const auto schema =
      ehr::fit_pipeline(ehr::pointers(ctx.data.records, fit_idx), ctx.run.window, ctx.run.coverage_threshold);

  train::Examples train_ex = train::make_examples(ctx.data, train_idx, &schema);
  train::Examples test_ex = train::make_examples(ctx.data, test_idx, &schema);

  model::ModelConfig mc = ctx.run.model;
  mc.kind = preset.kind;
  mc.ehr_dim = schema.dim();
  mc.ehr_keep = preset.drop.empty() ? std::vector<bool>{} : ehr::component_mask(schema, preset.drop);

  Model m;
  std::shared_ptr<const EncoderCache::Entry> plax, a4c;
  if (model::uses_view(preset.kind, View::PLAX)) {
    plax = stage_a(ctx, fold, View::PLAX, train_ex, batch_observer);
  }
  if (model::uses_view(preset.kind, View::A4C)) {
    a4c = stage_a(ctx, fold, View::A4C, train_ex, batch_observer);
  }

  switch (preset.kind) {
    case Kind::EhrLr: {
      train::TrainConfig tc = ctx.run.train;
      if (ctx.run.ehr_lr_epochs) tc.epochs = ctx.run.ehr_lr_epochs;
      tc.seed = fold_seed(ctx.run.seed, "ehr_lr", fold);
      m = Model::create(mc, derive_seed(tc.seed, fnv1a("init")));
      train::fit(m, train_ex, tc, batch_observer);
      break;
    }
    case Kind::SinglePlax:
      m = plax->model;
      break;
    case Kind::SingleA4c:
      m = a4c->model;
      break;
    default: {
      train::TrainConfig tc = ctx.run.fusion_train;
      tc.stage = train::Stage::Fusion;
      tc.seed = fold_seed(ctx.run.seed, std::string("stage_b.") + std::string(model::kind_name(preset.kind)), fold);
      m = model::build_fusion_model(mc, derive_seed(tc.seed, fnv1a("init")), &plax->model, &a4c->model);
      if (m.encoder_frozen(View::PLAX)) {
        train_ex.plax_features = rows_of(plax->features, train_idx);
        test_ex.plax_features = rows_of(plax->features, test_idx);
      }
      if (m.encoder_frozen(View::A4C)) {
        train_ex.a4c_features = rows_of(a4c->features, train_idx);
        test_ex.a4c_features = rows_of(a4c->features, test_idx);
      }
      train::fit(m, train_ex, tc, batch_observer);
      break;
    }
  }
  m.schema_text = schema.serialize();
  if (model::uses_view(preset.kind, View::PLAX) && !model::uses_view(preset.kind, View::A4C)) {
    test_ex.plax_features = rows_of(plax->features, test_idx);
  }
  if (model::uses_view(preset.kind, View::A4C) && !model::uses_view(preset.kind, View::PLAX)) {
    test_ex.a4c_features = rows_of(a4c->features, test_idx);
  }

  std::vector<double> probs;
  {
    // Single-view models are not frozen, so predict() would recompute from
    // frames; the cached features are the same forward pass.
    train::Examples eval = test_ex;
    if (preset.kind == Kind::SinglePlax || preset.kind == Kind::SingleA4c) {
      ag::Tape tape(false);
      model::BatchInput in;
      in.batch = eval.size();
      in.steps = m.config().encoder.sampled_frames;
      if (preset.kind == Kind::SinglePlax) in.plax_features = eval.plax_features;
      else in.a4c_features = eval.a4c_features;
      probs = m.forward(tape, in).value().vec();
    } else {
      probs = train::predict(m, eval);
    }
  }

  if (!ctx.opt.checkpoint_dir.empty()) {
    m.save(ctx.opt.checkpoint_dir + "/fold" + std::to_string(fold + 1) + "_" +
           std::string(model::kind_name(preset.kind)) + ".ckpt");
  }

  const auto cm = confusion_metrics(probs, test_ex.labels);
  FoldMetrics fm;
  fm.fold = fold;
  fm.n_train = train_idx.size();
  fm.n_test = test_idx.size();
  fm.accuracy = cm.accuracy;
  fm.sensitivity = cm.sensitivity;
  fm.specificity = cm.specificity;
  const auto pos = std::count(test_ex.labels.begin(), test_ex.labels.end(), 1);
  fm.auroc = (pos == 0 || pos == static_cast<long>(test_ex.size())) ? kNaN : auroc(probs, test_ex.labels);
  return fm;
}

[[noreturn]] void rethrow_with_fold(std::exception_ptr e, std::size_t fold) {
  const std::string prefix = "fold " + std::to_string(fold + 1) + ": ";
  try {
    std::rethrow_exception(e);
  } catch (const ConfigError& ex) {
    throw ConfigError(prefix + ex.what());
  } catch (const ValidationError& ex) {
    throw ValidationError(prefix + ex.what());
  } catch (const TrainingError& ex) {
    throw TrainingError(prefix + ex.what());
  } catch (const KindError& ex) {
    throw KindError(prefix + ex.what());
  } catch (const ShapeError& ex) {
    throw ShapeError(prefix + ex.what());
  } catch (const LoadError& ex) {
    throw LoadError(prefix + ex.what());
  } catch (const FormatError& ex) {
    throw FormatError(prefix + ex.what());
  } catch (const std::exception& ex) {
    throw std::runtime_error(prefix + ex.what());
  }
}

}  // namespace

CVReport cross_validate(const RunConfig& run, const Dataset& data, const CvOptions& opt) {
  run.validate();
  const Preset& preset = find_preset(run.preset);
  CVReport report;
  report.preset = run.preset;
  report.kind = std::string(model::kind_name(preset.kind));
  report.seed = run.seed;
  report.k = run.k;
  const std::string data_fp = dataset_fingerprint(data);
  report.fingerprint = hex64(fnv1a(run.serialize() + data_fp));

  const FoldPlan plan = make_folds(data.ids(), data.labels(), run.k, run.seed, run.stratified, &report.warnings);
  const FoldContext ctx{run, data, opt, plan, data_fp};

  std::vector<FoldMetrics> results(run.k);
  std::vector<std::exception_ptr> errors(run.k);
  auto work = [&](std::size_t f) {
    try {
      results[f] = run_fold(ctx, f);
      if (opt.log) {
        static std::mutex log_mu;
        std::lock_guard lock(log_mu);
        *opt.log << "fold " << (f + 1) << "/" << run.k << " auroc " << metric(results[f].auroc) << "\n";
      }
    } catch (...) {
      errors[f] = std::current_exception();
    }
  };
  if (run.parallel_folds <= 1) {
    for (std::size_t f = 0; f < run.k; ++f) {
      work(f);
      if (errors[f]) break;
    }
  } else {
    // Folds are independent; each thread takes every n-th fold and writes only
    // its own result slots, so the report does not depend on scheduling.
    const std::size_t n = std::min(run.parallel_folds, run.k);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t f = t; f < run.k; f += n) work(f);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (std::size_t f = 0; f < run.k; ++f) {
    if (errors[f]) rethrow_with_fold(errors[f], f);
  }
  report.folds = std::move(results);
  for (const auto& f : report.folds) {
    if (std::isnan(f.sensitivity) || std::isnan(f.specificity) || std::isnan(f.auroc)) {
      report.warnings.push_back("fold " + std::to_string(f.fold + 1) + " lacks one class; some metrics are undefined");
    }
  }
  report.mean = mean_metrics(report.folds, &report.warnings);
  return report;
}

}  // namespace cardiofuse::cv
