#pragma once

// The five architectures:
//   ehr_lr               logistic regression on the fused EHR vector
//   single_plax/_a4c     conv encoder -> BiLSTM -> additive temporal attention -> MLP head
//   double_view          [PLAX feature | A4C feature] -> MLP head
//   late_fusion          [PLAX feature | A4C feature | EHR vector] -> MLP head
//   intermediate_fusion  [CLS, EHR, PLAX, A4C] tokens -> post-norm transformer -> MLP head on CLS
//
// Parameters are named "<block>.<layer>.<tensor>"; encoder tensors start with
// "plax." or "a4c." so fusion models can adopt and freeze them wholesale.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cardiofuse/autograd.hpp"
#include "cardiofuse/records.hpp"

namespace cardiofuse::model {

enum class Kind { EhrLr, SinglePlax, SingleA4c, DoubleView, LateFusion, IntermediateFusion };

std::string_view kind_name(Kind k);
Kind parse_kind(std::string_view s);
bool uses_view(Kind k, View v);
bool uses_ehr(Kind k);

struct EncoderConfig {
  std::size_t sampled_frames = 30;
  std::vector<std::size_t> conv_channels = {16, 32, 64, 128};
  std::size_t frame_feature_dim = 128;
  std::size_t lstm_hidden = 64;  // per direction
  std::size_t clip_feature_dim = 128;
  std::size_t attention_dim = 64;

  void validate() const;
};

struct FusionConfig {
  std::size_t d_model = 512;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t ff_dim = 1024;
  double dropout = 0.1;
  std::size_t ehr_hidden = 128;
  bool encoder_freeze = true;

  void validate() const;
};

inline constexpr std::size_t kFusionTokens = 4;  // CLS, EHR, PLAX, A4C

struct ModelConfig {
  Kind kind = Kind::EhrLr;
  EncoderConfig encoder;
  FusionConfig fusion;
  std::size_t head_hidden = 64;
  std::size_t ehr_dim = 0;
  /// Per EHR entry, true = kept. Empty means keep everything.
  std::vector<bool> ehr_keep;

  void validate() const;
  std::string serialize() const;
  static ModelConfig parse(std::string_view text);
};

/// Attention probabilities of one forward pass: per layer [B, heads, S, S].
struct AttentionRecord {
  std::vector<Tensor> layers;
};

/// Inputs for one batch. A view is given either as raw frames (time-major
/// [S*B, 1, H, W]) or as precomputed clip features [B, F].
struct BatchInput {
  std::size_t batch = 0;
  std::size_t steps = 0;
  std::optional<Tensor> plax_frames, a4c_frames;
  std::optional<Tensor> plax_features, a4c_features;
  std::optional<Tensor> ehr;  // [B, D]
};

/// Uniformly spaced frame indices: floor(k * T / S), k = 0..S-1.
std::vector<std::size_t> subsample_indices(std::size_t total, std::size_t wanted);

/// Stacks clips into a time-major [S*B, 1, H, W] tensor after subsampling.
Tensor stack_clips(const std::vector<const EchoClip*>& clips, std::size_t sampled_frames);

struct ForwardOptions {
  bool train = false;
  Rng* dropout_rng = nullptr;
  AttentionRecord* attention = nullptr;
  Tensor* plax_alpha = nullptr;  // temporal attention weights [B, S]
  Tensor* a4c_alpha = nullptr;
};

class Model {
 public:
  /// Fresh parameters: fan-in scaled uniform weights, zero biases, seeded per tensor.
  static Model create(const ModelConfig& cfg, std::uint64_t seed);

  Kind kind() const { return cfg_.kind; }
  const ModelConfig& config() const { return cfg_; }

  std::vector<ag::Parameter>& parameters() { return params_; }
  const std::vector<ag::Parameter>& parameters() const { return params_; }
  ag::Parameter& param(std::string_view name);
  const ag::Parameter& param(std::string_view name) const;
  bool has_param(std::string_view name) const;
  std::size_t parameter_count() const;

  /// Copies every "<view>." tensor from a trained single-view model. When
  /// `freeze` they are marked non-trainable.
  void adopt_encoder(const Model& single_view, View view, bool freeze);
  bool encoder_frozen(View v) const;

  /// Probabilities [B, 1].
  ag::Var forward(ag::Tape& tape, const BatchInput& in, const ForwardOptions& opt = {});

  /// Clip features [B, F] for one view, computed without gradients.
  Tensor encode(View v, const Tensor& frames, std::size_t batch, std::size_t steps,
                Tensor* alpha = nullptr);
  ag::Var encode_var(ag::Tape& tape, View v, const Tensor& frames, std::size_t batch,
                     std::size_t steps, Tensor* alpha = nullptr);

  /// Opaque metadata carried through checkpoints.
  std::string schema_text;
  std::string provenance;

  void save(const std::string& path) const;
  static Model load(const std::string& path);
  std::vector<unsigned char> to_bytes() const;
  static Model from_bytes(std::span<const unsigned char> bytes);

 private:
  ModelConfig cfg_;
  std::vector<ag::Parameter> params_;

  ag::Parameter& add_param(std::string name, std::vector<std::size_t> shape);
  ag::Var p(ag::Tape& tape, std::string_view name);
  ag::Var head(ag::Tape& tape, ag::Var x);
  ag::Var masked_ehr(ag::Tape& tape, const Tensor& ehr);
  ag::Var view_features(ag::Tape& tape, View v, const BatchInput& in, Tensor* alpha);
  ag::Var transformer(ag::Tape& tape, ag::Var tokens, std::size_t batch, const ForwardOptions& opt);
};

/// Builds a fusion model, adopting pretrained encoders. Throws ConfigError when
/// the config freezes encoders but one is missing.
Model build_fusion_model(const ModelConfig& cfg, std::uint64_t seed, const Model* plax_pretrained,
                         const Model* a4c_pretrained);

}  // namespace cardiofuse::model
