#include "cardiofuse/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cardiofuse/dataio.hpp"
#include "cardiofuse/error.hpp"
#include "cardiofuse/hash.hpp"

namespace cardiofuse::train {

using model::Kind;
using model::Model;

double bce_loss(double p, int y) {
  const double q = std::clamp(p, ag::kProbClamp, 1.0 - ag::kProbClamp);
  return y ? -std::log(q) : -std::log(1.0 - q);
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train.beta1/beta2 must lie in [0,1)");
  }
  if (!(eps > 0.0)) throw ConfigError("train.eps must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
}

void Adam::step(std::vector<ag::Parameter>& params) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(Tensor::zeros_like(p.value));
      v_.push_back(Tensor::zeros_like(p.value));
    }
  }
  if (m_.size() != params.size()) throw std::logic_error("Adam: parameter list changed between steps");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable) continue;
    if (!p.grad.same_shape(p.value)) p.zero_grad();
    double* w = p.value.data();
    const double* g = p.grad.data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double gj = g[j] + cfg_.weight_decay * w[j];
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

Examples make_examples(const Dataset& data, const std::vector<std::size_t>& indices,
                       const ehr::FeatureSchema* schema) {
  Examples ex;
  const bool have_clips = data.plax.size() == data.size() && data.a4c.size() == data.size();
  if (schema) ex.ehr = Tensor({indices.size(), schema->dim()});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t i = indices[r];
    const auto& rec = data.records.at(i);
    ex.ids.push_back(rec.patient_id);
    ex.labels.push_back(rec.label);
    if (have_clips) {
      ex.plax.push_back(&data.plax[i]);
      ex.a4c.push_back(&data.a4c[i]);
    }
    if (schema) {
      const auto fv = ehr::vectorize(rec, *schema);
      std::copy(fv.values.begin(), fv.values.end(), ex.ehr->data() + r * schema->dim());
    }
  }
  return ex;
}

namespace {

Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& indices) {
  std::vector<std::size_t> shape = t.shape();
  shape[0] = indices.size();
  Tensor out(shape);
  const std::size_t c = t.cols();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(t.data() + indices[r] * c, c, out.data() + r * c);
  }
  return out;
}

template <typename T>
std::vector<T> gather(const std::vector<T>& v, const std::vector<std::size_t>& indices) {
  std::vector<T> out;
  if (v.empty()) return out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(v.at(i));
  return out;
}

bool frozen_and_used(const Model& m, View v) { return model::uses_view(m.kind(), v) && m.encoder_frozen(v); }

}  // namespace

Examples select(const Examples& ex, const std::vector<std::size_t>& indices) {
  Examples out;
  out.ids = gather(ex.ids, indices);
  out.labels = gather(ex.labels, indices);
  out.plax = gather(ex.plax, indices);
  out.a4c = gather(ex.a4c, indices);
  if (ex.plax_features) out.plax_features = gather_rows(*ex.plax_features, indices);
  if (ex.a4c_features) out.a4c_features = gather_rows(*ex.a4c_features, indices);
  if (ex.ehr) out.ehr = gather_rows(*ex.ehr, indices);
  return out;
}

Tensor encode_all(Model& m, View v, const std::vector<const EchoClip*>& clips, std::size_t chunk) {
  const std::size_t f = m.config().encoder.clip_feature_dim;
  const std::size_t steps = m.config().encoder.sampled_frames;
  Tensor out({clips.size(), f});
  for (std::size_t begin = 0; begin < clips.size(); begin += chunk) {
    const std::size_t end = std::min(clips.size(), begin + chunk);
    std::vector<const EchoClip*> part(clips.begin() + begin, clips.begin() + end);
    const Tensor feats = m.encode(v, model::stack_clips(part, steps), part.size(), steps);
    std::copy(feats.vec().begin(), feats.vec().end(), out.data() + begin * f);
  }
  return out;
}

model::BatchInput make_batch(const Model& m, const Examples& ex, const std::vector<std::size_t>& indices) {
  model::BatchInput in;
  in.batch = indices.size();
  in.steps = m.config().encoder.sampled_frames;
  const Kind kind = m.kind();
  auto view = [&](View v, const std::optional<Tensor>& feats, const std::vector<const EchoClip*>& clips,
                  std::optional<Tensor>& feat_out, std::optional<Tensor>& frame_out) {
    if (!model::uses_view(kind, v)) return;
    if (feats && m.encoder_frozen(v)) {
      feat_out = gather_rows(*feats, indices);
      return;
    }
    if (clips.empty()) {
      throw ShapeError(std::string(model::kind_name(kind)) + " needs " + std::string(view_name(v)) + " clips");
    }
    frame_out = model::stack_clips(gather(clips, indices), in.steps);
  };
  view(View::PLAX, ex.plax_features, ex.plax, in.plax_features, in.plax_frames);
  view(View::A4C, ex.a4c_features, ex.a4c, in.a4c_features, in.a4c_frames);
  if (model::uses_ehr(kind)) {
    if (!ex.ehr) throw ShapeError(std::string(model::kind_name(kind)) + " needs EHR vectors");
    in.ehr = gather_rows(*ex.ehr, indices);
  }
  return in;
}

TrainHistory fit(Model& m, const Examples& ex_in, const TrainConfig& cfg, const BatchObserver& observer) {
  cfg.validate();
  if (ex_in.size() == 0) throw TrainingError("training split is empty");
  const auto positives = std::count(ex_in.labels.begin(), ex_in.labels.end(), 1);
  if (positives == 0 || positives == static_cast<long>(ex_in.size())) {
    throw TrainingError("training split has a single class (" + std::to_string(positives) + " positives of " +
                        std::to_string(ex_in.size()) + "); BCE training is degenerate");
  }

  // Frozen encoders see no gradient and have no dropout, so their features
  // can be computed once.
  Examples ex = ex_in;
  if (frozen_and_used(m, View::PLAX) && !ex.plax_features) ex.plax_features = encode_all(m, View::PLAX, ex.plax);
  if (frozen_and_used(m, View::A4C) && !ex.a4c_features) ex.a4c_features = encode_all(m, View::A4C, ex.a4c);

  const auto start = std::chrono::steady_clock::now();
  Adam opt(cfg);
  Rng shuffle_rng(derive_seed(cfg.seed, fnv1a("shuffle")));
  Rng dropout_rng(derive_seed(cfg.seed, fnv1a("dropout")));
  TrainHistory hist;
  std::vector<std::size_t> order(ex.size());
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (cfg.shuffle) shuffle_rng.shuffle(std::span<std::size_t>(order));
    double total = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const std::vector<std::size_t> idx(order.begin() + begin, order.begin() + end);
      if (observer) observer(gather(ex.ids, idx));
      for (auto& p : m.parameters()) p.zero_grad();
      ag::Tape tape(true);
      model::ForwardOptions fo;
      fo.train = true;
      fo.dropout_rng = &dropout_rng;
      const auto probs = m.forward(tape, make_batch(m, ex, idx), fo);
      const auto loss = ag::bce_mean(probs, gather(ex.labels, idx));
      const double lv = loss.value()[0];
      if (!std::isfinite(lv)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(e + 1) + ", batch " +
                            std::to_string(begin / cfg.batch_size + 1) + "; aborting");
      }
      tape.backward(loss);
      opt.step(m.parameters());
      total += lv * static_cast<double>(idx.size());
    }
    hist.epoch_loss.push_back(total / static_cast<double>(ex.size()));
  }
  hist.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return hist;
}

std::vector<double> predict(Model& m, const Examples& ex_in, std::size_t chunk) {
  Examples ex = ex_in;
  if (frozen_and_used(m, View::PLAX) && !ex.plax_features) ex.plax_features = encode_all(m, View::PLAX, ex.plax);
  if (frozen_and_used(m, View::A4C) && !ex.a4c_features) ex.a4c_features = encode_all(m, View::A4C, ex.a4c);
  std::vector<double> out;
  out.reserve(ex.size());
  for (std::size_t begin = 0; begin < ex.size(); begin += chunk) {
    std::vector<std::size_t> idx(std::min(chunk, ex.size() - begin));
    std::iota(idx.begin(), idx.end(), begin);
    ag::Tape tape(false);
    const auto probs = m.forward(tape, make_batch(m, ex, idx));
    out.insert(out.end(), probs.value().vec().begin(), probs.value().vec().end());
  }
  return out;
}

namespace {

std::string ids_digest(const std::vector<std::string>& ids) {
  std::vector<std::string> sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  std::uint64_t h = fnv1a("");
  for (const auto& id : sorted) h = fnv1a(id + "\n", h);
  return hex64(h);
}

}  // namespace

Model train_single_view(const model::ModelConfig& base, View v, const Examples& ex, const TrainConfig& cfg,
                        TrainHistory* history, const BatchObserver& observer) {
  model::ModelConfig mc = base;
  mc.kind = v == View::PLAX ? Kind::SinglePlax : Kind::SingleA4c;
  Model m = Model::create(mc, derive_seed(cfg.seed, fnv1a("init")));
  TrainHistory h = fit(m, ex, cfg, observer);
  m.provenance = std::string(model::kind_name(mc.kind)) + " seed=" + std::to_string(cfg.seed) +
                 " n_train=" + std::to_string(ex.size()) + " train_ids=" + ids_digest(ex.ids);
  if (history) *history = std::move(h);
  return m;
}

PipelineResult train_intermediate_pipeline(const Examples& ex, const PipelineConfig& cfg,
                                           const BatchObserver& observer) {
  if (cfg.model.kind != Kind::IntermediateFusion) {
    throw ConfigError("train_intermediate_pipeline needs an intermediate_fusion model config");
  }
  return train_fusion_pipeline(ex, cfg, observer);
}

PipelineResult train_fusion_pipeline(const Examples& ex, const PipelineConfig& cfg, const BatchObserver& observer) {
  TrainConfig a_plax = cfg.stage_a, a_a4c = cfg.stage_a, b = cfg.stage_b;
  a_plax.stage = a_a4c.stage = Stage::Single;
  a_plax.seed = derive_seed(cfg.stage_a.seed, fnv1a("stage_a.plax"));
  a_a4c.seed = derive_seed(cfg.stage_a.seed, fnv1a("stage_a.a4c"));
  b.stage = Stage::Fusion;
  b.seed = derive_seed(cfg.stage_b.seed, fnv1a("stage_b"));

  PipelineResult r{Model{}, Model{}, Model{}, {}, {}, {}};
  r.plax = train_single_view(cfg.model, View::PLAX, ex, a_plax, &r.plax_history, observer);
  r.a4c = train_single_view(cfg.model, View::A4C, ex, a_a4c, &r.a4c_history, observer);
  r.fusion = model::build_fusion_model(cfg.model, derive_seed(b.seed, fnv1a("init")), &r.plax, &r.a4c);
  r.fusion_history = fit(r.fusion, ex, b, observer);
  return r;
}

std::string format_history(const TrainHistory& h) {
  std::ostringstream os;
  for (std::size_t e = 0; e < h.epoch_loss.size(); ++e) {
    os << "epoch " << (e + 1) << " loss " << dataio::format_double(h.epoch_loss[e]) << "\n";
  }
  os << "wall_seconds " << h.wall_seconds << "\n";
  return os.str();
}

}  // namespace cardiofuse::train
