#include "cardiofuse/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "cardiofuse/error.hpp"
#include "cardiofuse/kernels.hpp"

namespace cardiofuse::ag {

namespace kp = kernels::parallel;

void Parameter::zero_grad() {
  if (!grad.same_shape(value)) grad = Tensor::zeros_like(value);
  grad.fill(0.0);
}

const Tensor& Var::value() const { return tape_->value(id_); }

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.owned;
}

Tensor& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor::zeros_like(n.external ? *n.external : n.owned);
  return n.grad;
}

Var Tape::push(Tensor value, bool needs_grad, std::function<void()> backward) {
  Node n;
  n.owned = std::move(value);
  n.needs_grad = record_ && needs_grad;
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Tape::param(Parameter& p) {
  Node n;
  n.external = &p.value;
  n.needs_grad = record_ && p.trainable;
  const std::size_t id = nodes_.size();
  if (n.needs_grad) {
    if (!p.grad.same_shape(p.value)) p.grad = Tensor::zeros_like(p.value);
    n.backward = [this, id, &p] {
      const Tensor& g = nodes_[id].grad;
      for (std::size_t i = 0; i < g.size(); ++i) p.grad[i] += g[i];
    };
  }
  nodes_.push_back(std::move(n));
  return Var(this, id);
}

void Tape::backward(Var loss) {
  if (!record_) throw std::logic_error("backward on a tape that does not record gradients");
  if (loss.value().size() != 1) throw ShapeError("backward expects a scalar loss");
  grad(loss.id())[0] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.needs_grad && n.backward && !n.grad.empty()) n.backward();
  }
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

void same_shape(const Var& a, const Var& b, const char* op) {
  require(a.value().same_shape(b.value()), std::string(op) + ": shape mismatch " +
                                               shape_string(a.value().shape()) + " vs " +
                                               shape_string(b.value().shape()));
}

bool any_grad(std::initializer_list<Var> vs) {
  for (const Var& v : vs) {
    if (v.valid() && v.tape()->needs_grad(v.id())) return true;
  }
  return false;
}

void accumulate(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Var relu(Var x) {
  Tape* t = x.tape();
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  const std::size_t out = t->size();
  return t->push(std::move(y), any_grad({x}), [t, xi = x.id(), out] {
    const Tensor& g = t->grad(out);
    const Tensor& xv = t->value(xi);
    Tensor& gx = t->grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += g[i];
    }
  });
}

Var tanh(Var x) {
  Tape* t = x.tape();
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(xv[i]);
  const std::size_t out = t->size();
  return t->push(std::move(y), any_grad({x}), [t, xi = x.id(), out] {
    const Tensor& g = t->grad(out);
    const Tensor& yv = t->value(out);
    Tensor& gx = t->grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - yv[i] * yv[i]);
  });
}

namespace {
inline double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(Var x) {
  Tape* t = x.tape();
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = stable_sigmoid(xv[i]);
  const std::size_t out = t->size();
  return t->push(std::move(y), any_grad({x}), [t, xi = x.id(), out] {
    const Tensor& g = t->grad(out);
    const Tensor& yv = t->value(out);
    Tensor& gx = t->grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * yv[i] * (1.0 - yv[i]);
  });
}

Var scale(Var x, double factor) {
  Tape* t = x.tape();
  Tensor y = x.value();
  for (double& v : y.vec()) v *= factor;
  const std::size_t out = t->size();
  return t->push(std::move(y), any_grad({x}), [t, xi = x.id(), out, factor] {
    const Tensor& g = t->grad(out);
    Tensor& gx = t->grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
  });
}

Var add(Var a, Var b) {
  same_shape(a, b, "add");
  Tape* t = a.tape();
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  const std::size_t out = t->size();
  return t->push(std::move(y), any_grad({a, b}), [t, ai = a.id(), bi = b.id(), out] {
    const Tensor& g = t->grad(out);
    if (t->needs_grad(ai)) accumulate(t->grad(ai), g);
    if (t->needs_grad(bi)) accumulate(t->grad(bi), g);
  });
}

Var sub(Var a, Var b) {
  same_shape(a, b, "sub");
  Tape* t = a.tape();
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  const std::size_t out = t->size();
  return t->push(std::move(y), any_grad({a, b}), [t, ai = a.id(), bi = b.id(), out] {
    const Tensor& g = t->grad(out);
    if (t->needs_grad(ai)) accumulate(t->grad(ai), g);
    if (t->needs_grad(bi)) {
      Tensor& gb = t->grad(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  same_shape(a, b, "mul");
  Tape* t = a.tape();
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  const std::size_t out = t->size();
  return t->push(std::move(y), any_grad({a, b}), [t, ai = a.id(), bi = b.id(), out] {
    const Tensor& g = t->grad(out);
    const Tensor& av = t->value(ai);
    const Tensor& bv = t->value(bi);
    if (t->needs_grad(ai)) {
      Tensor& ga = t->grad(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t->needs_grad(bi)) {
      Tensor& gb = t->grad(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var add_row(Var x, Var row) {
  const std::size_t n = x.cols();
  require(row.value().size() == n, "add_row: row length " + std::to_string(row.value().size()) +
                                       " does not match " + std::to_string(n) + " columns");
  Tape* t = x.tape();
  Tensor y = x.value();
  const Tensor& rv = row.value();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    for (std::size_t c = 0; c < n; ++c) y[r * n + c] += rv[c];
  }
  const std::size_t out = t->size();
  return t->push(std::move(y), any_grad({x, row}), [t, xi = x.id(), ri = row.id(), out, n] {
    const Tensor& g = t->grad(out);
    if (t->needs_grad(xi)) accumulate(t->grad(xi), g);
    if (t->needs_grad(ri)) {
      Tensor& gr = t->grad(ri);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < n; ++c) gr[c] += g[r * n + c];
      }
    }
  });
}

Var sum(Var x) {
  Tape* t = x.tape();
  double s = 0.0;
  for (double v : x.value().vec()) s += v;
  const std::size_t out = t->size();
  return t->push(Tensor::scalar(s), any_grad({x}), [t, xi = x.id(), out] {
    const double g = t->grad(out)[0];
    Tensor& gx = t->grad(xi);
    for (double& v : gx.vec()) v += g;
  });
}

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0),
          "matmul: " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor y({m, n});
  kp::gemm_nn(m, n, k, av.span(), bv.span(), y.span(), false);
  Tape* t = a.tape();
  const std::size_t out = t->size();
  return t->push(std::move(y), any_grad({a, b}), [t, ai = a.id(), bi = b.id(), out, m, n, k] {
    const Tensor& g = t->grad(out);
    if (t->needs_grad(ai)) kp::gemm_nt(m, k, n, g.span(), t->value(bi).span(), t->grad(ai).span(), true);
    if (t->needs_grad(bi)) kp::gemm_tn(k, n, m, t->value(ai).span(), g.span(), t->grad(bi).span(), true);
  });
}

Var linear(Var x, Var w, Var b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  require(wv.rank() == 2 && xv.cols() == wv.dim(1),
          "linear: input " + shape_string(xv.shape()) + " vs weight " + shape_string(wv.shape()));
  const std::size_t m = xv.rows(), in = wv.dim(1), outd = wv.dim(0);
  Tensor y({m, outd});
  kp::gemm_nt(m, outd, in, xv.span(), wv.span(), y.span(), false);
  if (b.valid()) {
    const Tensor& bv = b.value();
    require(bv.size() == outd, "linear: bias length mismatch");
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < outd; ++c) y[r * outd + c] += bv[c];
    }
  }
  Tape* t = x.tape();
  const std::size_t out = t->size();
  const bool has_b = b.valid();
  const std::size_t bi = has_b ? b.id() : 0;
  return t->push(std::move(y), any_grad({x, w, b}),
                 [t, xi = x.id(), wi = w.id(), bi, has_b, out, m, in, outd] {
                   const Tensor& g = t->grad(out);
                   if (t->needs_grad(xi)) {
                     kp::gemm_nn(m, in, outd, g.span(), t->value(wi).span(), t->grad(xi).span(), true);
                   }
                   if (t->needs_grad(wi)) {
                     kp::gemm_tn(outd, in, m, g.span(), t->value(xi).span(), t->grad(wi).span(), true);
                   }
                   if (has_b && t->needs_grad(bi)) {
                     Tensor& gb = t->grad(bi);
                     for (std::size_t r = 0; r < m; ++r) {
                       for (std::size_t c = 0; c < outd; ++c) gb[c] += g[r * outd + c];
                     }
                   }
                 });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  Tape* t = parts.front().tape();
  const std::size_t m = parts.front().rows();
  std::vector<std::size_t> widths, ids;
  std::size_t total = 0;
  bool grad = false;
  for (const Var& p : parts) {
    require(p.rows() == m, "concat_cols: row count mismatch");
    widths.push_back(p.cols());
    ids.push_back(p.id());
    total += p.cols();
    grad = grad || t->needs_grad(p.id());
  }
  Tensor y({m, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t r = 0; r < m; ++r) {
      std::copy_n(pv.data() + r * widths[k], widths[k], y.data() + r * total + off);
    }
    off += widths[k];
  }
  const std::size_t out = t->size();
  return t->push(std::move(y), grad, [t, ids, widths, out, m, total] {
    const Tensor& g = t->grad(out);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t->needs_grad(ids[k])) {
        Tensor& gp = t->grad(ids[k]);
        for (std::size_t r = 0; r < m; ++r) {
          for (std::size_t c = 0; c < widths[k]; ++c) gp[r * widths[k] + c] += g[r * total + off + c];
        }
      }
      off += widths[k];
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  Tape* t = parts.front().tape();
  const std::size_t n = parts.front().cols();
  std::vector<std::size_t> ids, sizes;
  std::size_t rows = 0;
  bool grad = false;
  for (const Var& p : parts) {
    require(p.cols() == n, "concat_rows: column count mismatch");
    ids.push_back(p.id());
    sizes.push_back(p.value().size());
    rows += p.rows();
    grad = grad || t->needs_grad(p.id());
  }
  Tensor y({rows, n});
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().vec().begin(), p.value().vec().end(), y.data() + off);
    off += p.value().size();
  }
  const std::size_t out = t->size();
  return t->push(std::move(y), grad, [t, ids, sizes, out] {
    const Tensor& g = t->grad(out);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t->needs_grad(ids[k])) {
        Tensor& gp = t->grad(ids[k]);
        for (std::size_t i = 0; i < sizes[k]; ++i) gp[i] += g[off + i];
      }
      off += sizes[k];
    }
  });
}

Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  require(begin < end && end <= x.rows(), "slice_rows: bad range");
  const std::size_t n = x.cols();
  const Tensor& xv = x.value();
  Tensor y({end - begin, n});
  std::copy(xv.data() + begin * n, xv.data() + end * n, y.data());
  Tape* t = x.tape();
  const std::size_t out = t->size();
  return t->push(std::move(y), any_grad({x}), [t, xi = x.id(), out, begin, n] {
    const Tensor& g = t->grad(out);
    Tensor& gx = t->grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * n + i] += g[i];
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  const std::size_t n = x.cols();
  require(begin < end && end <= n, "slice_cols: bad range");
  const std::size_t m = x.rows(), w = end - begin;
  const Tensor& xv = x.value();
  Tensor y({m, w});
  for (std::size_t r = 0; r < m; ++r) std::copy_n(xv.data() + r * n + begin, w, y.data() + r * w);
  Tape* t = x.tape();
  const std::size_t out = t->size();
  return t->push(std::move(y), any_grad({x}), [t, xi = x.id(), out, begin, n, m, w] {
    const Tensor& g = t->grad(out);
    Tensor& gx = t->grad(xi);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < w; ++c) gx[r * n + begin + c] += g[r * w + c];
    }
  });
}

Var select_rows(Var x, const std::vector<std::size_t>& indices) {
  const std::size_t n = x.cols();
  const Tensor& xv = x.value();
  Tensor y({indices.size(), n});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    require(indices[k] < x.rows(), "select_rows: index out of range");
    std::copy_n(xv.data() + indices[k] * n, n, y.data() + k * n);
  }
  Tape* t = x.tape();
  const std::size_t out = t->size();
  return t->push(std::move(y), any_grad({x}), [t, xi = x.id(), out, indices, n] {
    const Tensor& g = t->grad(out);
    Tensor& gx = t->grad(xi);
    for (std::size_t k = 0; k < indices.size(); ++k) {
      for (std::size_t c = 0; c < n; ++c) gx[indices[k] * n + c] += g[k * n + c];
    }
  });
}

Var interleave_rows(const std::vector<Var>& sources, std::size_t batch) {
  require(!sources.empty(), "interleave_rows: no inputs");
  Tape* t = sources.front().tape();
  const std::size_t s_count = sources.size();
  const std::size_t d = sources.front().cols();
  std::vector<std::size_t> ids;
  std::vector<bool> broadcast;
  bool grad = false;
  for (const Var& s : sources) {
    require(s.cols() == d, "interleave_rows: width mismatch");
    require(s.rows() == batch || s.rows() == 1, "interleave_rows: source must have B or 1 rows");
    ids.push_back(s.id());
    broadcast.push_back(s.rows() == 1 && batch != 1);
    grad = grad || t->needs_grad(s.id());
  }
  Tensor y({batch * s_count, d});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t s = 0; s < s_count; ++s) {
      const std::size_t src_row = broadcast[s] ? 0 : b;
      std::copy_n(sources[s].value().data() + src_row * d, d, y.data() + (b * s_count + s) * d);
    }
  }
  const std::size_t out = t->size();
  return t->push(std::move(y), grad, [t, ids, broadcast, out, batch, s_count, d] {
    const Tensor& g = t->grad(out);
    for (std::size_t s = 0; s < s_count; ++s) {
      if (!t->needs_grad(ids[s])) continue;
      Tensor& gs = t->grad(ids[s]);
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t dst_row = broadcast[s] ? 0 : b;
        for (std::size_t c = 0; c < d; ++c) gs[dst_row * d + c] += g[(b * s_count + s) * d + c];
      }
    }
  });
}

Var reshape(Var x, std::vector<std::size_t> shape) {
  Tensor y = x.value();
  y.reshape(std::move(shape));
  Tape* t = x.tape();
  const std::size_t out = t->size();
  return t->push(std::move(y), any_grad({x}), [t, xi = x.id(), out] {
    accumulate(t->grad(xi), t->grad(out));
  });
}

Var conv2d(Var x, Var w, Var b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  require(xv.rank() == 4 && wv.rank() == 4 && wv.dim(1) == xv.dim(1) && wv.dim(2) == wv.dim(3) &&
              wv.dim(2) % 2 == 1,
          "conv2d: input " + shape_string(xv.shape()) + " vs weight " + shape_string(wv.shape()));
  kernels::ConvShape s;
  s.batch = xv.dim(0);
  s.in_channels = xv.dim(1);
  s.height = xv.dim(2);
  s.width = xv.dim(3);
  s.out_channels = wv.dim(0);
  s.kernel = wv.dim(2);
  require(b.value().size() == s.out_channels, "conv2d: bias length mismatch");
  Tensor y({s.batch, s.out_channels, s.height, s.width});
  kp::conv2d_forward(s, xv.span(), wv.span(), b.value().span(), y.span());
  Tape* t = x.tape();
  const std::size_t out = t->size();
  return t->push(std::move(y), any_grad({x, w, b}),
                 [t, xi = x.id(), wi = w.id(), bi = b.id(), out, s] {
                   const Tensor& g = t->grad(out);
                   if (t->needs_grad(xi)) {
                     kp::conv2d_backward_input(s, g.span(), t->value(wi).span(), t->grad(xi).span());
                   }
                   if (t->needs_grad(wi) || t->needs_grad(bi)) {
                     kp::conv2d_backward_weight(s, t->value(xi).span(), g.span(), t->grad(wi).span(),
                                                t->grad(bi).span());
                   }
                 });
}

Var avg_pool2(Var x) {
  const Tensor& xv = x.value();
  require(xv.rank() == 4 && xv.dim(2) >= 2 && xv.dim(3) >= 2, "avg_pool2: needs [N,C,H>=2,W>=2]");
  const std::size_t planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor y({xv.dim(0), xv.dim(1), oh, ow});
  for (std::size_t p = 0; p < planes; ++p) {
    const double* in = xv.data() + p * h * w;
    double* o = y.data() + p * oh * ow;
    for (std::size_t r = 0; r < oh; ++r) {
      for (std::size_t c = 0; c < ow; ++c) {
        const double* a = in + 2 * r * w + 2 * c;
        o[r * ow + c] = 0.25 * (a[0] + a[1] + a[w] + a[w + 1]);
      }
    }
  }
  Tape* t = x.tape();
  const std::size_t out = t->size();
  return t->push(std::move(y), any_grad({x}), [t, xi = x.id(), out, planes, h, w, oh, ow] {
    const Tensor& g = t->grad(out);
    Tensor& gx = t->grad(xi);
    for (std::size_t p = 0; p < planes; ++p) {
      double* gi = gx.data() + p * h * w;
      const double* go = g.data() + p * oh * ow;
      for (std::size_t r = 0; r < oh; ++r) {
        for (std::size_t c = 0; c < ow; ++c) {
          const double v = 0.25 * go[r * ow + c];
          double* a = gi + 2 * r * w + 2 * c;
          a[0] += v;
          a[1] += v;
          a[w] += v;
          a[w + 1] += v;
        }
      }
    }
  });
}

Var global_avg_pool(Var x) {
  const Tensor& xv = x.value();
  require(xv.rank() == 4, "global_avg_pool: needs [N,C,H,W]");
  const std::size_t n = xv.dim(0), c = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  Tensor y({n, c});
  for (std::size_t i = 0; i < n * c; ++i) {
    double s = 0.0;
    const double* p = xv.data() + i * plane;
    for (std::size_t k = 0; k < plane; ++k) s += p[k];
    y[i] = s / static_cast<double>(plane);
  }
  Tape* t = x.tape();
  const std::size_t out = t->size();
  return t->push(std::move(y), any_grad({x}), [t, xi = x.id(), out, n, c, plane] {
    const Tensor& g = t->grad(out);
    Tensor& gx = t->grad(xi);
    const double inv = 1.0 / static_cast<double>(plane);
    for (std::size_t i = 0; i < n * c; ++i) {
      double* p = gx.data() + i * plane;
      for (std::size_t k = 0; k < plane; ++k) p[k] += g[i] * inv;
    }
  });
}

Var lstm_cell(Var gates, Var c_prev) {
  const Tensor& gv = gates.value();
  const Tensor& cv = c_prev.value();
  const std::size_t batch = gv.rows();
  const std::size_t hid = cv.cols();
  require(gv.cols() == 4 * hid && cv.rows() == batch, "lstm_cell: gates must be [B,4H], c [B,H]");
  Tensor act({batch, 4 * hid});
  Tensor y({batch, 2 * hid});
  for (std::size_t b = 0; b < batch; ++b) {
    const double* g = gv.data() + b * 4 * hid;
    double* a = act.data() + b * 4 * hid;
    for (std::size_t j = 0; j < hid; ++j) {
      const double i = stable_sigmoid(g[j]);
      const double f = stable_sigmoid(g[hid + j]);
      const double gg = std::tanh(g[2 * hid + j]);
      const double o = stable_sigmoid(g[3 * hid + j]);
      a[j] = i;
      a[hid + j] = f;
      a[2 * hid + j] = gg;
      a[3 * hid + j] = o;
      const double c = f * cv[b * hid + j] + i * gg;
      y[b * 2 * hid + hid + j] = c;
      y[b * 2 * hid + j] = o * std::tanh(c);
    }
  }
  Tape* t = gates.tape();
  const std::size_t out = t->size();
  const bool grad = any_grad({gates, c_prev});
  return t->push(std::move(y), grad,
                 [t, gi = gates.id(), ci = c_prev.id(), out, batch, hid, act = std::move(act)] {
                   const Tensor& gy = t->grad(out);
                   const Tensor& yv = t->value(out);
                   const Tensor& cp = t->value(ci);
                   const bool want_g = t->needs_grad(gi);
                   const bool want_c = t->needs_grad(ci);
                   for (std::size_t b = 0; b < batch; ++b) {
                     const double* a = act.data() + b * 4 * hid;
                     for (std::size_t j = 0; j < hid; ++j) {
                       const double i = a[j], f = a[hid + j], gg = a[2 * hid + j], o = a[3 * hid + j];
                       const double c = yv[b * 2 * hid + hid + j];
                       const double tc = std::tanh(c);
                       const double dh = gy[b * 2 * hid + j];
                       const double dc = gy[b * 2 * hid + hid + j] + dh * o * (1.0 - tc * tc);
                       if (want_g) {
                         double* dg = t->grad(gi).data() + b * 4 * hid;
                         dg[j] += dc * gg * i * (1.0 - i);
                         dg[hid + j] += dc * cp[b * hid + j] * f * (1.0 - f);
                         dg[2 * hid + j] += dc * i * (1.0 - gg * gg);
                         dg[3 * hid + j] += dh * tc * o * (1.0 - o);
                       }
                       if (want_c) t->grad(ci)[b * hid + j] += dc * f;
                     }
                   }
                 });
}

Var temporal_attention_pool(Var states, Var scores, std::size_t batch, Tensor* alpha_out) {
  const Tensor& hv = states.value();
  const Tensor& sv = scores.value();
  require(batch > 0 && hv.rows() % batch == 0 && sv.size() == hv.rows(),
          "temporal_attention_pool: states must be [(T*B),D] with one score per row");
  const std::size_t steps = hv.rows() / batch;
  const std::size_t d = hv.cols();
  Tensor alpha({batch, steps});
  Tensor y({batch, d});
  for (std::size_t b = 0; b < batch; ++b) {
    double mx = -INFINITY;
    for (std::size_t s = 0; s < steps; ++s) mx = std::max(mx, sv[s * batch + b]);
    double z = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      alpha[b * steps + s] = std::exp(sv[s * batch + b] - mx);
      z += alpha[b * steps + s];
    }
    for (std::size_t s = 0; s < steps; ++s) {
      const double a = alpha[b * steps + s] /= z;
      const double* h = hv.data() + (s * batch + b) * d;
      for (std::size_t c = 0; c < d; ++c) y[b * d + c] += a * h[c];
    }
  }
  if (alpha_out) *alpha_out = alpha;
  Tape* t = states.tape();
  const std::size_t out = t->size();
  return t->push(std::move(y), any_grad({states, scores}),
                 [t, hi = states.id(), si = scores.id(), out, batch, steps, d,
                  alpha = std::move(alpha)] {
                   const Tensor& g = t->grad(out);
                   const Tensor& hv = t->value(hi);
                   const bool want_h = t->needs_grad(hi);
                   const bool want_s = t->needs_grad(si);
                   std::vector<double> da(steps);
                   for (std::size_t b = 0; b < batch; ++b) {
                     const double* gb = g.data() + b * d;
                     double mean = 0.0;
                     for (std::size_t s = 0; s < steps; ++s) {
                       const double a = alpha[b * steps + s];
                       const std::size_t row = s * batch + b;
                       const double* h = hv.data() + row * d;
                       double dot = 0.0;
                       for (std::size_t c = 0; c < d; ++c) dot += gb[c] * h[c];
                       da[s] = dot;
                       mean += a * dot;
                       if (want_h) {
                         double* gh = t->grad(hi).data() + row * d;
                         for (std::size_t c = 0; c < d; ++c) gh[c] += a * gb[c];
                       }
                     }
                     if (want_s) {
                       Tensor& gs = t->grad(si);
                       for (std::size_t s = 0; s < steps; ++s) {
                         gs[s * batch + b] += alpha[b * steps + s] * (da[s] - mean);
                       }
                     }
                   }
                 });
}

Var layer_norm(Var x, Var gain, Var shift, double eps) {
  const Tensor& xv = x.value();
  const std::size_t m = xv.rows(), d = xv.cols();
  require(gain.value().size() == d && shift.value().size() == d, "layer_norm: parameter length");
  Tensor y({m, d});
  Tensor xhat({m, d});
  std::vector<double> inv_std(m);
  const Tensor& gv = gain.value();
  const Tensor& bv = shift.value();
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = xv.data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += row[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (row[c] - mean) * inv_std[r];
      xhat[r * d + c] = h;
      y[r * d + c] = gv[c] * h + bv[c];
    }
  }
  Tape* t = x.tape();
  const std::size_t out = t->size();
  return t->push(std::move(y), any_grad({x, gain, shift}),
                 [t, xi = x.id(), gi = gain.id(), bi = shift.id(), out, m, d, xhat = std::move(xhat),
                  inv_std = std::move(inv_std)] {
                   const Tensor& g = t->grad(out);
                   const Tensor& gv = t->value(gi);
                   if (t->needs_grad(gi) || t->needs_grad(bi)) {
                     Tensor& gg = t->grad(gi);
                     Tensor& gb = t->grad(bi);
                     for (std::size_t r = 0; r < m; ++r) {
                       for (std::size_t c = 0; c < d; ++c) {
                         gg[c] += g[r * d + c] * xhat[r * d + c];
                         gb[c] += g[r * d + c];
                       }
                     }
                   }
                   if (!t->needs_grad(xi)) return;
                   Tensor& gx = t->grad(xi);
                   const double inv_d = 1.0 / static_cast<double>(d);
                   for (std::size_t r = 0; r < m; ++r) {
                     double mean_dh = 0.0, mean_dh_h = 0.0;
                     for (std::size_t c = 0; c < d; ++c) {
                       const double dh = g[r * d + c] * gv[c];
                       mean_dh += dh;
                       mean_dh_h += dh * xhat[r * d + c];
                     }
                     mean_dh *= inv_d;
                     mean_dh_h *= inv_d;
                     for (std::size_t c = 0; c < d; ++c) {
                       const double dh = g[r * d + c] * gv[c];
                       gx[r * d + c] += inv_std[r] * (dh - mean_dh - xhat[r * d + c] * mean_dh_h);
                     }
                   }
                 });
}

Var multi_head_attention(Var q, Var k, Var v, std::size_t batch, std::size_t tokens,
                         std::size_t heads, Tensor* probs_out) {
  same_shape(q, k, "multi_head_attention");
  same_shape(q, v, "multi_head_attention");
  const std::size_t d = q.cols();
  require(q.rows() == batch * tokens, "multi_head_attention: rows must equal batch*tokens");
  require(heads > 0 && d % heads == 0, "multi_head_attention: width not divisible by heads");
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  Tensor probs({batch, heads, tokens, tokens});
  Tensor y({batch * tokens, d});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      double* p = probs.data() + ((b * heads + h) * tokens) * tokens;
      for (std::size_t i = 0; i < tokens; ++i) {
        const double* qi = qv.data() + (b * tokens + i) * d + h * dh;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < tokens; ++j) {
          const double* kj = kv.data() + (b * tokens + j) * d + h * dh;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          p[i * tokens + j] = s * inv_sqrt;
          mx = std::max(mx, p[i * tokens + j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < tokens; ++j) {
          p[i * tokens + j] = std::exp(p[i * tokens + j] - mx);
          z += p[i * tokens + j];
        }
        double* yi = y.data() + (b * tokens + i) * d + h * dh;
        for (std::size_t j = 0; j < tokens; ++j) {
          const double a = p[i * tokens + j] /= z;
          const double* vj = vv.data() + (b * tokens + j) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) yi[c] += a * vj[c];
        }
      }
    }
  }
  if (probs_out) *probs_out = probs;
  Tape* t = q.tape();
  const std::size_t out = t->size();
  return t->push(
      std::move(y), any_grad({q, k, v}),
      [t, qi_ = q.id(), ki_ = k.id(), vi_ = v.id(), out, batch, tokens, heads, d, dh, inv_sqrt,
       probs = std::move(probs)] {
        const Tensor& g = t->grad(out);
        const Tensor& qv = t->value(qi_);
        const Tensor& kv = t->value(ki_);
        const Tensor& vv = t->value(vi_);
        Tensor& gq = t->grad(qi_);
        Tensor& gk = t->grad(ki_);
        Tensor& gv = t->grad(vi_);
        std::vector<double> dp(tokens), ds(tokens);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const double* p = probs.data() + ((b * heads + h) * tokens) * tokens;
            for (std::size_t i = 0; i < tokens; ++i) {
              const double* gi = g.data() + (b * tokens + i) * d + h * dh;
              double mean = 0.0;
              for (std::size_t j = 0; j < tokens; ++j) {
                const double* vj = vv.data() + (b * tokens + j) * d + h * dh;
                double* gvj = gv.data() + (b * tokens + j) * d + h * dh;
                const double a = p[i * tokens + j];
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) {
                  s += gi[c] * vj[c];
                  gvj[c] += a * gi[c];
                }
                dp[j] = s;
                mean += a * s;
              }
              for (std::size_t j = 0; j < tokens; ++j) {
                ds[j] = p[i * tokens + j] * (dp[j] - mean) * inv_sqrt;
              }
              const double* qrow = qv.data() + (b * tokens + i) * d + h * dh;
              double* gqi = gq.data() + (b * tokens + i) * d + h * dh;
              for (std::size_t j = 0; j < tokens; ++j) {
                const double* kj = kv.data() + (b * tokens + j) * d + h * dh;
                double* gkj = gk.data() + (b * tokens + j) * d + h * dh;
                for (std::size_t c = 0; c < dh; ++c) {
                  gqi[c] += ds[j] * kj[c];
                  gkj[c] += ds[j] * qrow[c];
                }
              }
            }
          }
        }
      });
}

Var dropout(Var x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  require(rate < 1.0, "dropout: rate must be < 1");
  const Tensor& xv = x.value();
  Tensor mask(xv.shape());
  const double keep = 1.0 / (1.0 - rate);
  for (double& m : mask.vec()) m = rng.uniform() < rate ? 0.0 : keep;
  Tensor y = xv;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask[i];
  Tape* t = x.tape();
  const std::size_t out = t->size();
  return t->push(std::move(y), any_grad({x}), [t, xi = x.id(), out, mask = std::move(mask)] {
    const Tensor& g = t->grad(out);
    Tensor& gx = t->grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

Var bce_mean(Var p, const std::vector<int>& labels) {
  const Tensor& pv = p.value();
  require(pv.size() == labels.size() && !labels.empty(), "bce_mean: one probability per label");
  const double n = static_cast<double>(labels.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double c = std::clamp(pv[i], kProbClamp, 1.0 - kProbClamp);
    loss -= labels[i] ? std::log(c) : std::log(1.0 - c);
  }
  Tape* t = p.tape();
  const std::size_t out = t->size();
  return t->push(Tensor::scalar(loss / n), any_grad({p}), [t, pi = p.id(), out, labels, n] {
    const double g = t->grad(out)[0];
    const Tensor& pv = t->value(pi);
    Tensor& gp = t->grad(pi);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const double v = pv[i];
      if (v < kProbClamp || v > 1.0 - kProbClamp) continue;
      gp[i] += g * (labels[i] ? -1.0 / v : 1.0 / (1.0 - v)) / n;
    }
  });
}

}  // namespace cardiofuse::ag
