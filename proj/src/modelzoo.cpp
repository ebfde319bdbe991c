#include "cardiofuse/modelzoo.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cardiofuse/dataio.hpp"
#include "cardiofuse/error.hpp"
#include "cardiofuse/hash.hpp"

namespace cardiofuse::model {

using ag::Tape;
using ag::Var;

namespace {

constexpr char kCheckpointMagic[4] = {'C', 'F', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::string view_prefix(View v) { return v == View::PLAX ? "plax" : "a4c"; }

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

std::string_view kind_name(Kind k) {
  switch (k) {
    case Kind::EhrLr: return "ehr_lr";
    case Kind::SinglePlax: return "single_plax";
    case Kind::SingleA4c: return "single_a4c";
    case Kind::DoubleView: return "double_view";
    case Kind::LateFusion: return "late_fusion";
    case Kind::IntermediateFusion: return "intermediate_fusion";
  }
  return "?";
}

Kind parse_kind(std::string_view s) {
  for (Kind k : {Kind::EhrLr, Kind::SinglePlax, Kind::SingleA4c, Kind::DoubleView, Kind::LateFusion,
                 Kind::IntermediateFusion}) {
    if (kind_name(k) == s) return k;
  }
  throw ConfigError("unknown model kind '" + std::string(s) + "'");
}

bool uses_view(Kind k, View v) {
  switch (k) {
    case Kind::EhrLr: return false;
    case Kind::SinglePlax: return v == View::PLAX;
    case Kind::SingleA4c: return v == View::A4C;
    default: return true;
  }
}

bool uses_ehr(Kind k) {
  return k == Kind::EhrLr || k == Kind::LateFusion || k == Kind::IntermediateFusion;
}

void EncoderConfig::validate() const {
  if (sampled_frames < kMinClipFrames) {
    throw ConfigError("encoder.sampled_frames must be at least 30 (clip length contract)");
  }
  if (conv_channels.empty()) throw ConfigError("encoder.conv_channels must not be empty");
  for (std::size_t c : conv_channels) {
    if (c < 1) throw ConfigError("encoder.conv_channels entries must be >= 1");
  }
  if (frame_feature_dim < 1 || lstm_hidden < 1 || attention_dim < 1) {
    throw ConfigError("encoder dimensions must be >= 1");
  }
  if (clip_feature_dim != 2 * lstm_hidden) {
    throw ConfigError("encoder.clip_feature_dim must equal 2 * lstm_hidden (bidirectional states)");
  }
}

void FusionConfig::validate() const {
  if (d_model < 1 || n_heads < 1 || n_layers < 1 || ff_dim < 1 || ehr_hidden < 1) {
    throw ConfigError("fusion dimensions must be >= 1");
  }
  if (d_model % n_heads != 0) throw ConfigError("fusion.d_model must be divisible by fusion.n_heads");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("fusion.dropout must lie in [0,1)");
}

void ModelConfig::validate() const {
  encoder.validate();
  fusion.validate();
  if (head_hidden < 1) throw ConfigError("head_hidden must be >= 1");
  if (uses_ehr(kind) && ehr_dim < 1) throw ConfigError(std::string(kind_name(kind)) + " needs ehr_dim >= 1");
  if (!ehr_keep.empty() && ehr_keep.size() != ehr_dim) throw ConfigError("ehr_keep length must equal ehr_dim");
}

std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os << "kind = " << kind_name(kind) << "\n";
  os << "encoder.sampled_frames = " << encoder.sampled_frames << "\n";
  os << "encoder.conv_channels = " << join_sizes(encoder.conv_channels) << "\n";
  os << "encoder.frame_feature_dim = " << encoder.frame_feature_dim << "\n";
  os << "encoder.lstm_hidden = " << encoder.lstm_hidden << "\n";
  os << "encoder.clip_feature_dim = " << encoder.clip_feature_dim << "\n";
  os << "encoder.attention_dim = " << encoder.attention_dim << "\n";
  os << "fusion.d_model = " << fusion.d_model << "\n";
  os << "fusion.n_heads = " << fusion.n_heads << "\n";
  os << "fusion.n_layers = " << fusion.n_layers << "\n";
  os << "fusion.ff_dim = " << fusion.ff_dim << "\n";
  os << "fusion.dropout = " << dataio::format_double(fusion.dropout) << "\n";
  os << "fusion.ehr_hidden = " << fusion.ehr_hidden << "\n";
  os << "fusion.encoder_freeze = " << (fusion.encoder_freeze ? "true" : "false") << "\n";
  os << "head_hidden = " << head_hidden << "\n";
  os << "ehr_dim = " << ehr_dim << "\n";
  os << "ehr_keep = ";
  for (bool b : ehr_keep) os << (b ? '1' : '0');
  os << "\n";
  return os.str();
}

ModelConfig ModelConfig::parse(std::string_view text) {
  ModelConfig c;
  std::istringstream in{std::string(text)};
  std::string line;
  auto num = [](const std::string& v, const std::string& k) {
    return static_cast<std::size_t>(dataio::parse_long(v, "model config " + k));
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find(" = ");
    const std::string key = eq == std::string::npos ? line : line.substr(0, eq);
    const std::string v = eq == std::string::npos ? "" : line.substr(eq + 3);
    if (key == "kind") c.kind = parse_kind(v);
    else if (key == "encoder.sampled_frames") c.encoder.sampled_frames = num(v, key);
    else if (key == "encoder.conv_channels") {
      c.encoder.conv_channels.clear();
      for (const auto& f : dataio::split_csv_line(v)) c.encoder.conv_channels.push_back(num(f, key));
    } else if (key == "encoder.frame_feature_dim") c.encoder.frame_feature_dim = num(v, key);
    else if (key == "encoder.lstm_hidden") c.encoder.lstm_hidden = num(v, key);
    else if (key == "encoder.clip_feature_dim") c.encoder.clip_feature_dim = num(v, key);
    else if (key == "encoder.attention_dim") c.encoder.attention_dim = num(v, key);
    else if (key == "fusion.d_model") c.fusion.d_model = num(v, key);
    else if (key == "fusion.n_heads") c.fusion.n_heads = num(v, key);
    else if (key == "fusion.n_layers") c.fusion.n_layers = num(v, key);
    else if (key == "fusion.ff_dim") c.fusion.ff_dim = num(v, key);
    else if (key == "fusion.dropout") c.fusion.dropout = dataio::parse_double(v, key);
    else if (key == "fusion.ehr_hidden") c.fusion.ehr_hidden = num(v, key);
    else if (key == "fusion.encoder_freeze") c.fusion.encoder_freeze = v == "true";
    else if (key == "head_hidden") c.head_hidden = num(v, key);
    else if (key == "ehr_dim") c.ehr_dim = num(v, key);
    else if (key == "ehr_keep") {
      c.ehr_keep.clear();
      for (char ch : v) c.ehr_keep.push_back(ch == '1');
    } else {
      throw ConfigError("model config: unknown key '" + key + "'");
    }
  }
  return c;
}

std::vector<std::size_t> subsample_indices(std::size_t total, std::size_t wanted) {
  if (total < wanted) {
    throw ValidationError("clip has " + std::to_string(total) + " frames, fewer than the " +
                          std::to_string(wanted) + " sampled frames");
  }
  std::vector<std::size_t> idx(wanted);
  for (std::size_t k = 0; k < wanted; ++k) idx[k] = k * total / wanted;
  return idx;
}

Tensor stack_clips(const std::vector<const EchoClip*>& clips, std::size_t sampled_frames) {
  if (clips.empty()) throw ShapeError("stack_clips: empty batch");
  const std::size_t h = clips.front()->height, w = clips.front()->width;
  const std::size_t batch = clips.size();
  Tensor out({sampled_frames * batch, 1, h, w});
  for (std::size_t b = 0; b < batch; ++b) {
    const EchoClip& c = *clips[b];
    if (c.height != h || c.width != w || c.channels != 1) {
      throw ShapeError("stack_clips: clips in one batch must share frame size");
    }
    const auto idx = subsample_indices(c.frames, sampled_frames);
    for (std::size_t s = 0; s < sampled_frames; ++s) {
      const float* src = c.pixels.data() + idx[s] * c.frame_size();
      double* dst = out.data() + (s * batch + b) * h * w;
      for (std::size_t i = 0; i < h * w; ++i) dst[i] = src[i];
    }
  }
  return out;
}

ag::Parameter& Model::add_param(std::string name, std::vector<std::size_t> shape) {
  ag::Parameter p;
  p.name = std::move(name);
  p.value = Tensor(std::move(shape));
  params_.push_back(std::move(p));
  return params_.back();
}

ag::Parameter& Model::param(std::string_view name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw ShapeError("model has no parameter '" + std::string(name) + "'");
}

const ag::Parameter& Model::param(std::string_view name) const {
  return const_cast<Model*>(this)->param(name);
}

bool Model::has_param(std::string_view name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const auto& p) { return p.name == name; });
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

Model Model::create(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg_ = cfg;
  const auto& enc = cfg.encoder;

  auto linear = [&](const std::string& name, std::size_t out, std::size_t in, bool bias = true) {
    m.add_param(name + ".w", {out, in});
    if (bias) m.add_param(name + ".b", {out});
  };
  auto encoder = [&](View v) {
    const std::string pre = view_prefix(v);
    std::size_t in = 1;
    for (std::size_t i = 0; i < enc.conv_channels.size(); ++i) {
      const std::string name = pre + ".conv" + std::to_string(i);
      m.add_param(name + ".w", {enc.conv_channels[i], in, 3, 3});
      m.add_param(name + ".b", {enc.conv_channels[i]});
      in = enc.conv_channels[i];
    }
    linear(pre + ".frame", enc.frame_feature_dim, in);
    for (const char* dir : {".lstm_f", ".lstm_b"}) {
      m.add_param(pre + dir + ".w_ih", {4 * enc.lstm_hidden, enc.frame_feature_dim});
      m.add_param(pre + dir + ".w_hh", {4 * enc.lstm_hidden, enc.lstm_hidden});
      m.add_param(pre + dir + ".b", {4 * enc.lstm_hidden});
    }
    linear(pre + ".attn", enc.attention_dim, enc.clip_feature_dim);
    m.add_param(pre + ".attn.v", {1, enc.attention_dim});
  };
  auto head = [&](std::size_t in) {
    linear("head.l1", cfg.head_hidden, in);
    linear("head.l2", 1, cfg.head_hidden);
  };

  const std::size_t f = enc.clip_feature_dim;
  switch (cfg.kind) {
    case Kind::EhrLr:
      linear("lr", 1, cfg.ehr_dim);
      break;
    case Kind::SinglePlax:
      encoder(View::PLAX);
      head(f);
      break;
    case Kind::SingleA4c:
      encoder(View::A4C);
      head(f);
      break;
    case Kind::DoubleView:
      encoder(View::PLAX);
      encoder(View::A4C);
      head(2 * f);
      break;
    case Kind::LateFusion:
      encoder(View::PLAX);
      encoder(View::A4C);
      head(2 * f + cfg.ehr_dim);
      break;
    case Kind::IntermediateFusion: {
      const auto& fu = cfg.fusion;
      encoder(View::PLAX);
      encoder(View::A4C);
      linear("ehr.l1", fu.ehr_hidden, cfg.ehr_dim);
      linear("ehr.l2", fu.d_model, fu.ehr_hidden);
      linear("proj.plax", fu.d_model, f);
      linear("proj.a4c", fu.d_model, f);
      m.add_param("cls", {1, fu.d_model});
      m.add_param("type_emb", {3, fu.d_model});
      for (std::size_t l = 0; l < fu.n_layers; ++l) {
        const std::string pre = "tf" + std::to_string(l);
        for (const char* proj : {".wq", ".wk", ".wv", ".wo"}) linear(pre + proj, fu.d_model, fu.d_model);
        m.add_param(pre + ".ln1.g", {fu.d_model});
        m.add_param(pre + ".ln1.b", {fu.d_model});
        linear(pre + ".ff1", fu.ff_dim, fu.d_model);
        linear(pre + ".ff2", fu.d_model, fu.ff_dim);
        m.add_param(pre + ".ln2.g", {fu.d_model});
        m.add_param(pre + ".ln2.b", {fu.d_model});
      }
      head(fu.d_model);
      break;
    }
  }

  for (auto& p : m.params_) {
    const std::string& n = p.name;
    auto ends_with = [&](std::string_view suffix) {
      return n.size() >= suffix.size() && n.compare(n.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (ends_with(".g")) {
      p.value.fill(1.0);
      continue;
    }
    const bool is_weight = p.value.rank() >= 2;
    if (!is_weight || n == "lr.w") continue;  // biases and the logistic model start at zero
    Rng rng(derive_seed(seed, fnv1a(n)));
    const double bound = 1.0 / std::sqrt(static_cast<double>(p.value.cols()));
    for (double& v : p.value.vec()) v = rng.uniform(-bound, bound);
  }

  // EHR entries removed by an ablation mask get zero input columns; with a
  // zero input they also receive zero gradient and stay exactly zero.
  if (!cfg.ehr_keep.empty()) {
    const char* first = cfg.kind == Kind::EhrLr ? "lr.w"
                        : cfg.kind == Kind::LateFusion ? "head.l1.w"
                        : cfg.kind == Kind::IntermediateFusion ? "ehr.l1.w"
                                                               : nullptr;
    if (first) {
      Tensor& w = m.param(first).value;
      const std::size_t offset = cfg.kind == Kind::LateFusion ? 2 * f : 0;
      for (std::size_t r = 0; r < w.rows(); ++r) {
        for (std::size_t j = 0; j < cfg.ehr_dim; ++j) {
          if (!cfg.ehr_keep[j]) w.at(r, offset + j) = 0.0;
        }
      }
    }
  }
  return m;
}

void Model::adopt_encoder(const Model& single, View view, bool freeze) {
  const std::string pre = view_prefix(view) + ".";
  if (!uses_view(single.kind(), view)) {
    throw KindError("adopt_encoder: " + std::string(kind_name(single.kind())) + " has no " +
                    std::string(view_name(view)) + " encoder");
  }
  for (auto& p : params_) {
    if (p.name.rfind(pre, 0) != 0) continue;
    const auto& src = single.param(p.name);
    if (!src.value.same_shape(p.value)) {
      throw ConfigError("adopt_encoder: shape mismatch for " + p.name + "; encoder configs differ");
    }
    p.value = src.value;
    p.trainable = !freeze;
  }
}

bool Model::encoder_frozen(View v) const {
  const std::string pre = view_prefix(v) + ".";
  bool any = false;
  for (const auto& p : params_) {
    if (p.name.rfind(pre, 0) == 0) {
      any = true;
      if (p.trainable) return false;
    }
  }
  return any;
}

Var Model::p(Tape& tape, std::string_view name) { return tape.param(param(name)); }

Var Model::encode_var(Tape& tape, View v, const Tensor& frames, std::size_t batch, std::size_t steps,
                      Tensor* alpha) {
  const auto& enc = cfg_.encoder;
  const std::string pre = view_prefix(v);
  if (frames.rank() != 4 || frames.dim(0) != batch * steps || frames.dim(1) != 1) {
    throw ShapeError("encode: frames must be [steps*batch, 1, H, W], got " + shape_string(frames.shape()));
  }
  Var x = tape.constant(frames);
  for (std::size_t i = 0; i < enc.conv_channels.size(); ++i) {
    const std::string name = pre + ".conv" + std::to_string(i);
    x = ag::relu(ag::conv2d(x, p(tape, name + ".w"), p(tape, name + ".b")));
    if (x.value().dim(2) >= 2 && x.value().dim(3) >= 2) x = ag::avg_pool2(x);
  }
  x = ag::global_avg_pool(x);
  x = ag::relu(ag::linear(x, p(tape, pre + ".frame.w"), p(tape, pre + ".frame.b")));

  const std::size_t hid = enc.lstm_hidden;
  auto run = [&](const std::string& dir, bool reverse) {
    Var proj = ag::linear(x, p(tape, pre + dir + ".w_ih"), p(tape, pre + dir + ".b"));
    Var w_hh = p(tape, pre + dir + ".w_hh");
    Var h = tape.constant(Tensor({batch, hid}));
    Var c = tape.constant(Tensor({batch, hid}));
    std::vector<Var> states(steps);
    for (std::size_t k = 0; k < steps; ++k) {
      const std::size_t t = reverse ? steps - 1 - k : k;
      Var gates = ag::add(ag::slice_rows(proj, t * batch, (t + 1) * batch), ag::linear(h, w_hh));
      Var hc = ag::lstm_cell(gates, c);
      h = ag::slice_cols(hc, 0, hid);
      c = ag::slice_cols(hc, hid, 2 * hid);
      states[t] = h;
    }
    return ag::concat_rows(states);
  };
  Var states = ag::concat_cols({run(".lstm_f", false), run(".lstm_b", true)});
  Var e = ag::tanh(ag::linear(states, p(tape, pre + ".attn.w"), p(tape, pre + ".attn.b")));
  Var scores = ag::linear(e, p(tape, pre + ".attn.v"));
  return ag::temporal_attention_pool(states, scores, batch, alpha);
}

Tensor Model::encode(View v, const Tensor& frames, std::size_t batch, std::size_t steps, Tensor* alpha) {
  Tape tape(false);
  return encode_var(tape, v, frames, batch, steps, alpha).value();
}

Var Model::view_features(Tape& tape, View v, const BatchInput& in, Tensor* alpha) {
  const auto& feats = v == View::PLAX ? in.plax_features : in.a4c_features;
  if (feats) {
    if (feats->rows() != in.batch || feats->cols() != cfg_.encoder.clip_feature_dim) {
      throw ShapeError("precomputed " + std::string(view_name(v)) + " features have shape " +
                       shape_string(feats->shape()));
    }
    return tape.constant(*feats);
  }
  const auto& frames = v == View::PLAX ? in.plax_frames : in.a4c_frames;
  if (!frames) throw ShapeError(std::string(kind_name(kind())) + " needs " + std::string(view_name(v)) + " input");
  return encode_var(tape, v, *frames, in.batch, in.steps, alpha);
}

Var Model::masked_ehr(Tape& tape, const Tensor& ehr) {
  if (ehr.rank() != 2 || ehr.cols() != cfg_.ehr_dim) {
    throw ShapeError("EHR input has shape " + shape_string(ehr.shape()) + ", model expects " +
                     std::to_string(cfg_.ehr_dim) + " columns");
  }
  Var x = tape.constant(ehr);
  if (cfg_.ehr_keep.empty()) return x;
  Tensor mask(ehr.shape());
  for (std::size_t r = 0; r < ehr.rows(); ++r) {
    for (std::size_t j = 0; j < cfg_.ehr_dim; ++j) mask.at(r, j) = cfg_.ehr_keep[j] ? 1.0 : 0.0;
  }
  return ag::mul(x, tape.constant(std::move(mask)));
}

Var Model::head(Tape& tape, Var x) {
  Var h = ag::relu(ag::linear(x, p(tape, "head.l1.w"), p(tape, "head.l1.b")));
  return ag::sigmoid(ag::linear(h, p(tape, "head.l2.w"), p(tape, "head.l2.b")));
}

Var Model::transformer(Tape& tape, Var x, std::size_t batch, const ForwardOptions& opt) {
  const auto& fu = cfg_.fusion;
  const double rate = opt.train ? fu.dropout : 0.0;
  Rng fallback(0);
  Rng& rng = opt.dropout_rng ? *opt.dropout_rng : fallback;
  if (rate > 0.0 && !opt.dropout_rng) throw std::logic_error("training forward needs a dropout RNG");
  if (opt.attention) opt.attention->layers.clear();
  for (std::size_t l = 0; l < fu.n_layers; ++l) {
    const std::string pre = "tf" + std::to_string(l);
    Var q = ag::linear(x, p(tape, pre + ".wq.w"), p(tape, pre + ".wq.b"));
    Var k = ag::linear(x, p(tape, pre + ".wk.w"), p(tape, pre + ".wk.b"));
    Var v = ag::linear(x, p(tape, pre + ".wv.w"), p(tape, pre + ".wv.b"));
    Tensor probs;
    Var ctx = ag::multi_head_attention(q, k, v, batch, kFusionTokens, fu.n_heads, &probs);
    if (opt.attention) opt.attention->layers.push_back(std::move(probs));
    Var attn = ag::dropout(ag::linear(ctx, p(tape, pre + ".wo.w"), p(tape, pre + ".wo.b")), rate, rng);
    x = ag::layer_norm(ag::add(x, attn), p(tape, pre + ".ln1.g"), p(tape, pre + ".ln1.b"));
    Var ff = ag::relu(ag::linear(x, p(tape, pre + ".ff1.w"), p(tape, pre + ".ff1.b")));
    ff = ag::dropout(ag::linear(ag::dropout(ff, rate, rng), p(tape, pre + ".ff2.w"), p(tape, pre + ".ff2.b")),
                     rate, rng);
    x = ag::layer_norm(ag::add(x, ff), p(tape, pre + ".ln2.g"), p(tape, pre + ".ln2.b"));
  }
  return x;
}

Var Model::forward(Tape& tape, const BatchInput& in, const ForwardOptions& opt) {
  if (in.batch == 0) throw ShapeError("forward: empty batch");
  switch (kind()) {
    case Kind::EhrLr: {
      if (!in.ehr) throw ShapeError("ehr_lr needs EHR input");
      Var x = masked_ehr(tape, *in.ehr);
      return ag::sigmoid(ag::linear(x, p(tape, "lr.w"), p(tape, "lr.b")));
    }
    case Kind::SinglePlax:
      return head(tape, view_features(tape, View::PLAX, in, opt.plax_alpha));
    case Kind::SingleA4c:
      return head(tape, view_features(tape, View::A4C, in, opt.a4c_alpha));
    case Kind::DoubleView:
      return head(tape, ag::concat_cols({view_features(tape, View::PLAX, in, opt.plax_alpha),
                                         view_features(tape, View::A4C, in, opt.a4c_alpha)}));
    case Kind::LateFusion: {
      if (!in.ehr) throw ShapeError("late_fusion needs EHR input");
      return head(tape, ag::concat_cols({view_features(tape, View::PLAX, in, opt.plax_alpha),
                                         view_features(tape, View::A4C, in, opt.a4c_alpha),
                                         masked_ehr(tape, *in.ehr)}));
    }
    case Kind::IntermediateFusion: {
      if (!in.ehr) throw ShapeError("intermediate_fusion needs EHR input");
      Var ehr = masked_ehr(tape, *in.ehr);
      ehr = ag::relu(ag::linear(ehr, p(tape, "ehr.l1.w"), p(tape, "ehr.l1.b")));
      ehr = ag::linear(ehr, p(tape, "ehr.l2.w"), p(tape, "ehr.l2.b"));
      Var plax = ag::linear(view_features(tape, View::PLAX, in, opt.plax_alpha), p(tape, "proj.plax.w"),
                            p(tape, "proj.plax.b"));
      Var a4c = ag::linear(view_features(tape, View::A4C, in, opt.a4c_alpha), p(tape, "proj.a4c.w"),
                           p(tape, "proj.a4c.b"));
      Var types = p(tape, "type_emb");
      ehr = ag::add_row(ehr, ag::slice_rows(types, 0, 1));
      plax = ag::add_row(plax, ag::slice_rows(types, 1, 2));
      a4c = ag::add_row(a4c, ag::slice_rows(types, 2, 3));
      Var tokens = ag::interleave_rows({p(tape, "cls"), ehr, plax, a4c}, in.batch);
      Var out = transformer(tape, tokens, in.batch, opt);
      std::vector<std::size_t> cls_rows(in.batch);
      for (std::size_t b = 0; b < in.batch; ++b) cls_rows[b] = b * kFusionTokens;
      return head(tape, ag::select_rows(out, cls_rows));
    }
  }
  throw std::logic_error("unreachable");
}

Model build_fusion_model(const ModelConfig& cfg, std::uint64_t seed, const Model* plax_pretrained,
                         const Model* a4c_pretrained) {
  if (cfg.kind != Kind::DoubleView && cfg.kind != Kind::LateFusion && cfg.kind != Kind::IntermediateFusion) {
    throw KindError("build_fusion_model: " + std::string(kind_name(cfg.kind)) + " is not a fusion model");
  }
  const bool freeze = cfg.fusion.encoder_freeze;
  if (freeze && (!plax_pretrained || !a4c_pretrained)) {
    throw ConfigError("encoder_freeze is set but a pretrained " +
                      std::string(!plax_pretrained ? "PLAX" : "A4C") + " encoder is missing");
  }
  Model m = Model::create(cfg, seed);
  if (plax_pretrained) m.adopt_encoder(*plax_pretrained, View::PLAX, freeze);
  if (a4c_pretrained) m.adopt_encoder(*a4c_pretrained, View::A4C, freeze);
  if (plax_pretrained && a4c_pretrained) {
    m.provenance = "plax=" + plax_pretrained->provenance + ";a4c=" + a4c_pretrained->provenance;
  }
  return m;
}

// ---- checkpoints ----------------------------------------------------------

namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
void put_str(std::vector<unsigned char>& out, std::string_view s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

struct Reader {
  std::span<const unsigned char> b;
  std::size_t off = 0;
  void need(std::size_t n) const {
    if (off + n > b.size()) throw FormatError("checkpoint truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{b[off + i]} << (8 * i);
    off += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[off + i]} << (8 * i);
    off += 8;
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(b.begin() + off, b.begin() + off + n);
    off += n;
    return s;
  }
};

}  // namespace

std::vector<unsigned char> Model::to_bytes() const {
  std::vector<unsigned char> out(kCheckpointMagic, kCheckpointMagic + 4);
  put_u32(out, kCheckpointVersion);
  put_str(out, cfg_.serialize());
  put_str(out, schema_text);
  put_str(out, provenance);
  put_u32(out, static_cast<std::uint32_t>(params_.size()));
  for (const auto& p : params_) {
    put_str(out, p.name);
    out.push_back(p.trainable ? 1 : 0);
    put_u32(out, static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : p.value.vec()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Model Model::from_bytes(std::span<const unsigned char> bytes) {
  if (bytes.size() < 8 || !std::equal(kCheckpointMagic, kCheckpointMagic + 4, bytes.begin())) {
    throw FormatError("not a cardiofuse checkpoint (bad magic)");
  }
  Reader r{bytes, 4};
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Model m;
  m.cfg_ = ModelConfig::parse(r.str());
  m.schema_text = r.str();
  m.provenance = r.str();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    ag::Parameter p;
    p.name = r.str();
    r.need(1);
    p.trainable = r.b[r.off++] != 0;
    const std::uint32_t rank = r.u32();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = r.u32();
    std::vector<double> data(shape_product(shape));
    for (double& v : data) v = std::bit_cast<double>(r.u64());
    p.value = Tensor(std::move(shape), std::move(data));
    m.params_.push_back(std::move(p));
  }
  // Cross-check against a freshly built layout so a corrupted file cannot
  // produce a model whose forward pass reads missing tensors.
  const Model layout = Model::create(m.cfg_, 0);
  if (layout.params_.size() != m.params_.size()) throw FormatError("checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < m.params_.size(); ++i) {
    if (layout.params_[i].name != m.params_[i].name || !layout.params_[i].value.same_shape(m.params_[i].value)) {
      throw FormatError("checkpoint tensor " + m.params_[i].name + " does not match the config");
    }
  }
  return m;
}

void Model::save(const std::string& path) const {
  const auto bytes = to_bytes();
  dataio::write_text_file(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

Model Model::load(const std::string& path) {
  const std::string text = dataio::read_text_file(path);
  return from_bytes(std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

}  // namespace cardiofuse::model
