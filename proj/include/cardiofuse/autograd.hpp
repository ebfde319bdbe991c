#pragma once

// Reverse-mode automatic differentiation over a recorded tape.
//
// A Tape owns every intermediate value of one forward pass. Ops append a node
// holding the result and, when gradients are being recorded, a closure that
// pushes the node's gradient back into its inputs. Tape::backward replays the
// closures in reverse creation order.
//
// Parameters live outside the tape; a parameter leaf references the stored
// value and, on backward, accumulates into Parameter::grad.

#include <cstddef>
#include <functional>
#include <deque>
#include <string>
#include <vector>

#include "cardiofuse/rng.hpp"
#include "cardiofuse/tensor.hpp"

namespace cardiofuse::ag {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  void zero_grad();
};

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// With record_grad=false no closures are stored: inference only.
  explicit Tape(bool record_grad = true) : record_(record_grad) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor value);
  Var param(Parameter& p);

  /// Seeds d(loss)/d(loss) = 1 and propagates. `loss` must hold one element.
  void backward(Var loss);

  // Op plumbing.
  const Tensor& value(std::size_t id) const;
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  /// Gradient buffer of a node, zero-allocated on first touch.
  Tensor& grad(std::size_t id);
  Var push(Tensor value, bool needs_grad, std::function<void()> backward);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor grad;
    bool needs_grad = false;
    std::function<void()> backward;
  };
  std::deque<Node> nodes_;
  bool record_;
};

// ---- ops ------------------------------------------------------------------

/// X[m,in] * W[out,in]^T + b[out]. `b` may be an invalid Var for no bias.
Var linear(Var x, Var w, Var b = {});
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// Adds a [1,n] (or [n]) row to every row of X[m,n].
Var add_row(Var x, Var row);
Var scale(Var x, double factor);
Var relu(Var x);
Var tanh(Var x);
Var sigmoid(Var x);
Var sum(Var x);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var x, std::size_t begin, std::size_t end);
Var slice_cols(Var x, std::size_t begin, std::size_t end);
/// Rows `indices` of X, in that order.
Var select_rows(Var x, const std::vector<std::size_t>& indices);
/// Builds [(B*S), d] from S sources. Source s has B rows, or 1 row that is
/// broadcast to every sample; output row b*S+s is row b of source s.
Var interleave_rows(const std::vector<Var>& sources, std::size_t batch);
Var reshape(Var x, std::vector<std::size_t> shape);

/// Same-padded stride-1 convolution. X[N,C,H,W], W[O,C,k,k], b[O].
Var conv2d(Var x, Var w, Var b);
/// 2x2 average pooling, floor on odd sizes. [N,C,H,W] -> [N,C,H/2,W/2].
Var avg_pool2(Var x);
/// [N,C,H,W] -> [N,C] mean over the spatial plane.
Var global_avg_pool(Var x);

/// Fused LSTM cell. `gates` is [B,4H] pre-activation laid out (i, f, g, o);
/// returns [B,2H] = (h | c).
Var lstm_cell(Var gates, Var c_prev);

/// Softmax-over-time pooling. `states` is [(T*B), D] time-major (row t*B+b),
/// `scores` is [(T*B), 1]. Returns [B, D]; weights (B x T) go to *alpha.
Var temporal_attention_pool(Var states, Var scores, std::size_t batch, Tensor* alpha = nullptr);

/// Row-wise layer normalisation with learned gain and shift ([d] each).
Var layer_norm(Var x, Var gain, Var shift, double eps = 1e-5);

/// Scaled dot-product self-attention over B groups of S tokens with `heads`
/// heads. Q, K, V are [(B*S), d]. Attention probabilities (B x heads x S x S)
/// are written to *probs when given.
Var multi_head_attention(Var q, Var k, Var v, std::size_t batch, std::size_t tokens,
                         std::size_t heads, Tensor* probs = nullptr);

/// Inverted dropout; identity when rate == 0.
Var dropout(Var x, double rate, Rng& rng);

inline constexpr double kProbClamp = 1e-7;

/// Mean binary cross-entropy over p[B,1] with labels; p clamped to
/// [1e-7, 1-1e-7] before the log (zero gradient where clamped).
Var bce_mean(Var p, const std::vector<int>& labels);

}  // namespace cardiofuse::ag
