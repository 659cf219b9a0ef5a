// Reverse-mode automatic differentiation on a linear tape.
//
// Tensor nodes hold float32 values (parameters and activations); adjoints are
// accumulated in float64, and every scalar in the loss chain is a float64
// node. Recording order is creation order, which is already topological, so
// the backward sweep is one reverse pass that touches each node exactly once.
#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dtkt/tensor.hpp"

namespace dtkt::num {

/// Handle to a float32 tensor node.
struct Val {
  std::int32_t i = -1;
  bool valid() const { return i >= 0; }
};

/// Handle to a float64 scalar node (loss chain).
struct ScalarVal {
  std::int32_t i = -1;
  bool valid() const { return i >= 0; }
};

class Tape {
  struct Node {
    TensorF val;                       // tensor nodes
    double sval = 0.0;                 // scalar nodes
    TensorD grad;                      // lazily allocated
    double sgrad = 0.0;
    bool is_scalar = false;
    bool needs_grad = true;
    bool grad_live = false;            // some adjoint has been accumulated
    std::function<void(Tape&)> back;   // empty for leaves/constants
  };

 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }

  // ---- leaves -------------------------------------------------------------

  Val leaf(TensorF value) { return push_tensor(std::move(value), true, {}); }

  /// A tensor no gradient should flow into.
  Val constant(TensorF value) { return push_tensor(std::move(value), false, {}); }

  // ---- reads --------------------------------------------------------------

  const TensorF& val(Val v) const { return nodes_[check(v.i)].val; }
  double sval(ScalarVal s) const { return nodes_[check(s.i)].sval; }

  bool has_grad(Val v) const { return nodes_[check(v.i)].grad_live; }
  const TensorD& grad(Val v) const {
    const Node& n = nodes_[check(v.i)];
    if (!n.grad_live)
      throw std::logic_error("tape: gradient requested for a node backward never reached");
    return n.grad;
  }

  /// sink += grad(v); leaves sink untouched when no gradient reached v.
  void add_grad_into(Val v, TensorD& sink) const {
    const Node& n = nodes_[check(v.i)];
    if (!n.grad_live) return;
    for (std::size_t i = 0; i < sink.numel(); ++i) sink[i] += n.grad[i];
  }

  // ---- tensor primitives --------------------------------------------------

  Val row(Val m, std::size_t r) {
    const TensorF& src = val(m);
    require(src.rank() == 2 && r < src.rows(),
            "row: index " + std::to_string(r) + " out of range for " + shape_str(src.shape()));
    const std::size_t n = src.cols();
    TensorF out(Shape{n});
    for (std::size_t j = 0; j < n; ++j) out[j] = src.at(r, j);
    const auto mi = m.i;
    Val o = push_tensor(std::move(out), true, nullptr);
    set_back(o, [o, mi, r](Tape& t) {
      const TensorD& g = t.nodes_[o.i].grad;
      if (TensorD* gm = t.grad_sink(mi)) {
        const std::size_t n2 = g.numel();
        for (std::size_t j = 0; j < n2; ++j) (*gm)[r * n2 + j] += g[j];
      }
    });
    return o;
  }

  Val matvec(Val a, Val x) {
    TensorF out = num::matvec(val(a), val(x));
    const auto ai = a.i, xi = x.i;
    Val o = push_tensor(std::move(out), true, nullptr);
    set_back(o, [o, ai, xi](Tape& t) {
      const TensorD& g = t.nodes_[o.i].grad;
      const TensorF& av = t.nodes_[ai].val;
      const TensorF& xv = t.nodes_[xi].val;
      const std::size_t m = av.rows(), k = av.cols();
      if (TensorD* ga = t.grad_sink(ai)) outer_acc(ga->data(), g.data(), xv.data(), m, k);
      if (TensorD* gx = t.grad_sink(xi)) vecmat_acc(gx->data(), g.data(), av.data(), m, k);
    });
    return o;
  }

  Val vecmat(Val w, Val a) {
    TensorF out = num::vecmat(val(w), val(a));
    const auto wi = w.i, ai = a.i;
    Val o = push_tensor(std::move(out), true, nullptr);
    set_back(o, [o, wi, ai](Tape& t) {
      const TensorD& g = t.nodes_[o.i].grad;
      const TensorF& wv = t.nodes_[wi].val;
      const TensorF& av = t.nodes_[ai].val;
      const std::size_t m = av.rows(), n = av.cols();
      if (TensorD* gw = t.grad_sink(wi)) matvec_acc(gw->data(), av.data(), g.data(), m, n);
      if (TensorD* ga = t.grad_sink(ai)) outer_acc(ga->data(), wv.data(), g.data(), m, n);
    });
    return o;
  }

  Val matmul(Val a, Val b) {
    TensorF out = num::matmul(val(a), val(b));
    const auto ai = a.i, bi = b.i;
    Val o = push_tensor(std::move(out), true, nullptr);
    set_back(o, [o, ai, bi](Tape& t) {
      const TensorD& g = t.nodes_[o.i].grad;
      const TensorF& av = t.nodes_[ai].val;
      const TensorF& bv = t.nodes_[bi].val;
      const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
      if (TensorD* ga = t.grad_sink(ai)) gemm_nt_acc(ga->data(), g.data(), bv.data(), m, n, k);
      if (TensorD* gb = t.grad_sink(bi)) gemm_tn_acc(gb->data(), av.data(), g.data(), k, m, n);
    });
    return o;
  }

  Val matmul_nt(Val a, Val b) {
    TensorF out = num::matmul_nt(val(a), val(b));
    const auto ai = a.i, bi = b.i;
    Val o = push_tensor(std::move(out), true, nullptr);
    set_back(o, [o, ai, bi](Tape& t) {
      const TensorD& g = t.nodes_[o.i].grad;
      const TensorF& av = t.nodes_[ai].val;
      const TensorF& bv = t.nodes_[bi].val;
      const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
      if (TensorD* ga = t.grad_sink(ai)) gemm_nn_acc(ga->data(), g.data(), bv.data(), m, n, k);
      if (TensorD* gb = t.grad_sink(bi)) gemm_tn_acc(gb->data(), g.data(), av.data(), n, m, k);
    });
    return o;
  }

  Val outer(Val x, Val y) {
    TensorF out = num::outer(val(x), val(y));
    const auto xi = x.i, yi = y.i;
    Val o = push_tensor(std::move(out), true, nullptr);
    set_back(o, [o, xi, yi](Tape& t) {
      const TensorD& g = t.nodes_[o.i].grad;
      const TensorF& xv = t.nodes_[xi].val;
      const TensorF& yv = t.nodes_[yi].val;
      const std::size_t m = xv.numel(), n = yv.numel();
      if (TensorD* gx = t.grad_sink(xi)) matvec_acc(gx->data(), g.data(), yv.data(), m, n);
      if (TensorD* gy = t.grad_sink(yi)) vecmat_acc(gy->data(), xv.data(), g.data(), m, n);
    });
    return o;
  }

  Val add(Val a, Val b) {
    const TensorF& av = val(a);
    const TensorF& bv = val(b);
    require(av.same_shape(bv), "add: shape mismatch " + shape_str(av.shape()) + " vs " +
                                   shape_str(bv.shape()));
    TensorF out(av.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
    const auto ai = a.i, bi = b.i;
    Val o = push_tensor(std::move(out), true, nullptr);
    set_back(o, [o, ai, bi](Tape& t) {
      const TensorD& g = t.nodes_[o.i].grad;
      if (TensorD* ga = t.grad_sink(ai))
        for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
      if (TensorD* gb = t.grad_sink(bi))
        for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i] += g[i];
    });
    return o;
  }

  /// a[m x n] + bias[n], bias added to every row.
  Val add_row_broadcast(Val a, Val bias) {
    const TensorF& av = val(a);
    const TensorF& bv = val(bias);
    require(av.rank() == 2 && bv.numel() == av.cols(),
            "add_row_broadcast: shape mismatch " + shape_str(av.shape()) + " vs " +
                shape_str(bv.shape()));
    TensorF out(av.shape());
    for (std::size_t i = 0; i < av.rows(); ++i)
      for (std::size_t j = 0; j < av.cols(); ++j) out.at(i, j) = av.at(i, j) + bv[j];
    const auto ai = a.i, bi = bias.i;
    Val o = push_tensor(std::move(out), true, nullptr);
    set_back(o, [o, ai, bi](Tape& t) {
      const TensorD& g = t.nodes_[o.i].grad;
      const std::size_t m = g.rows(), n = g.cols();
      if (TensorD* ga = t.grad_sink(ai))
        for (std::size_t i = 0; i < m * n; ++i) (*ga)[i] += g[i];
      if (TensorD* gb = t.grad_sink(bi))
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) (*gb)[j] += g.at(i, j);
    });
    return o;
  }

  /// v + s[0] broadcast over every element of v.
  Val add_broadcast_scalar(Val v, Val s) {
    const TensorF& vv = val(v);
    const TensorF& sv = val(s);
    require(sv.numel() == 1, "add_broadcast_scalar: second operand must hold one value, got " +
                                 shape_str(sv.shape()));
    TensorF out(vv.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = vv[i] + sv[0];
    const auto vi = v.i, si = s.i;
    Val o = push_tensor(std::move(out), true, nullptr);
    set_back(o, [o, vi, si](Tape& t) {
      const TensorD& g = t.nodes_[o.i].grad;
      if (TensorD* gv = t.grad_sink(vi))
        for (std::size_t i = 0; i < g.numel(); ++i) (*gv)[i] += g[i];
      if (TensorD* gs = t.grad_sink(si)) {
        double acc = 0.0;
        for (std::size_t i = 0; i < g.numel(); ++i) acc += g[i];
        (*gs)[0] += acc;
      }
    });
    return o;
  }

  Val one_minus(Val a) {
    const TensorF& av = val(a);
    TensorF out(av.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = 1.0f - av[i];
    const auto ai = a.i;
    Val o = push_tensor(std::move(out), true, nullptr);
    set_back(o, [o, ai](Tape& t) {
      const TensorD& g = t.nodes_[o.i].grad;
      if (TensorD* ga = t.grad_sink(ai))
        for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] -= g[i];
    });
    return o;
  }

  Val mul(Val a, Val b) {
    const TensorF& av = val(a);
    const TensorF& bv = val(b);
    require(av.same_shape(bv), "mul: shape mismatch " + shape_str(av.shape()) + " vs " +
                                   shape_str(bv.shape()));
    TensorF out(av.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
    const auto ai = a.i, bi = b.i;
    Val o = push_tensor(std::move(out), true, nullptr);
    set_back(o, [o, ai, bi](Tape& t) {
      const TensorD& g = t.nodes_[o.i].grad;
      const TensorF& av2 = t.nodes_[ai].val;
      const TensorF& bv2 = t.nodes_[bi].val;
      if (TensorD* ga = t.grad_sink(ai))
        for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * bv2[i];
      if (TensorD* gb = t.grad_sink(bi))
        for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i] += g[i] * av2[i];
    });
    return o;
  }

  Val sigmoid(Val a) {
    const TensorF& av = val(a);
    TensorF out(av.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = 1.0f / (1.0f + std::exp(-av[i]));
    const auto ai = a.i;
    Val o = push_tensor(std::move(out), true, nullptr);
    set_back(o, [o, ai](Tape& t) {
      const TensorD& g = t.nodes_[o.i].grad;
      const TensorF& y = t.nodes_[o.i].val;
      if (TensorD* ga = t.grad_sink(ai))
        for (std::size_t i = 0; i < g.numel(); ++i) {
          const double yi = y[i];
          (*ga)[i] += g[i] * yi * (1.0 - yi);
        }
    });
    return o;
  }

  Val tanh(Val a) {
    const TensorF& av = val(a);
    TensorF out(av.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(av[i]);
    const auto ai = a.i;
    Val o = push_tensor(std::move(out), true, nullptr);
    set_back(o, [o, ai](Tape& t) {
      const TensorD& g = t.nodes_[o.i].grad;
      const TensorF& y = t.nodes_[o.i].val;
      if (TensorD* ga = t.grad_sink(ai))
        for (std::size_t i = 0; i < g.numel(); ++i) {
          const double yi = y[i];
          (*ga)[i] += g[i] * (1.0 - yi * yi);
        }
    });
    return o;
  }

  Val softmax_vec(Val a) {
    const TensorF& av = val(a);
    require(av.rank() == 1, "softmax_vec: expects a vector, got " + shape_str(av.shape()));
    TensorF out = av;
    softmax_row_inplace(out.data(), out.numel());
    const auto ai = a.i;
    Val o = push_tensor(std::move(out), true, nullptr);
    set_back(o, [o, ai](Tape& t) { softmax_backward_rows(t, o.i, ai, 1, t.nodes_[o.i].val.numel()); });
    return o;
  }

  Val softmax_rows(Val a) {
    const TensorF& av = val(a);
    require(av.rank() == 2, "softmax_rows: expects a matrix, got " + shape_str(av.shape()));
    TensorF out = av;
    for (std::size_t i = 0; i < out.rows(); ++i)
      softmax_row_inplace(out.data() + i * out.cols(), out.cols());
    const auto ai = a.i;
    Val o = push_tensor(std::move(out), true, nullptr);
    set_back(o, [o, ai](Tape& t) {
      softmax_backward_rows(t, o.i, ai, t.nodes_[o.i].val.rows(), t.nodes_[o.i].val.cols());
    });
    return o;
  }

  Val concat_vec(Val a, Val b) {
    const TensorF& av = val(a);
    const TensorF& bv = val(b);
    require(av.rank() == 1 && bv.rank() == 1, "concat_vec: expects vectors, got " +
                                                  shape_str(av.shape()) + " and " +
                                                  shape_str(bv.shape()));
    TensorF out(Shape{av.numel() + bv.numel()});
    for (std::size_t i = 0; i < av.numel(); ++i) out[i] = av[i];
    for (std::size_t i = 0; i < bv.numel(); ++i) out[av.numel() + i] = bv[i];
    const auto ai = a.i, bi = b.i;
    const std::size_t na = av.numel();
    Val o = push_tensor(std::move(out), true, nullptr);
    set_back(o, [o, ai, bi, na](Tape& t) {
      const TensorD& g = t.nodes_[o.i].grad;
      if (TensorD* ga = t.grad_sink(ai))
        for (std::size_t i = 0; i < na; ++i) (*ga)[i] += g[i];
      if (TensorD* gb = t.grad_sink(bi))
        for (std::size_t i = na; i < g.numel(); ++i) (*gb)[i - na] += g[i];
    });
    return o;
  }

  Val concat_cols(Val a, Val b) {
    const TensorF& av = val(a);
    const TensorF& bv = val(b);
    require(av.rank() == 2 && bv.rank() == 2 && av.rows() == bv.rows(),
            "concat_cols: shape mismatch " + shape_str(av.shape()) + " vs " +
                shape_str(bv.shape()));
    const std::size_t m = av.rows(), na = av.cols(), nb = bv.cols();
    TensorF out(Shape{m, na + nb});
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < na; ++j) out.at(i, j) = av.at(i, j);
      for (std::size_t j = 0; j < nb; ++j) out.at(i, na + j) = bv.at(i, j);
    }
    const auto ai = a.i, bi = b.i;
    Val o = push_tensor(std::move(out), true, nullptr);
    set_back(o, [o, ai, bi, m, na, nb](Tape& t) {
      const TensorD& g = t.nodes_[o.i].grad;
      if (TensorD* ga = t.grad_sink(ai))
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < na; ++j) (*ga)[i * na + j] += g[i * (na + nb) + j];
      if (TensorD* gb = t.grad_sink(bi))
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < nb; ++j) (*gb)[i * nb + j] += g[i * (na + nb) + na + j];
    });
    return o;
  }

  // ---- scalar (loss-chain) primitives --------------------------------------

  /// Sum of all tensor entries, as a float64 scalar node.
  ScalarVal sum(Val a) {
    const TensorF& av = val(a);
    double acc = 0.0;
    for (std::size_t i = 0; i < av.numel(); ++i) acc += static_cast<double>(av[i]);
    const auto ai = a.i;
    ScalarVal o = push_scalar(acc);
    set_back_s(o, [o, ai](Tape& t) {
      const double g = t.nodes_[o.i].sgrad;
      if (TensorD* ga = t.grad_sink(ai))
        for (std::size_t i = 0; i < ga->numel(); ++i) (*ga)[i] += g;
    });
    return o;
  }

  static constexpr double kProbClamp = 1e-7;

  /// Binary cross-entropy of one coordinate of a probability vector against
  /// a {0,1} label, with the probability clamped before the logs.
  ScalarVal bce(Val p, std::size_t index, int label) {
    const TensorF& pv = val(p);
    require(index < pv.numel(), "bce: index " + std::to_string(index) + " out of range for " +
                                    shape_str(pv.shape()));
    require(label == 0 || label == 1, "bce: label must be 0 or 1, got " + std::to_string(label));
    const double raw = static_cast<double>(pv[index]);
    const double pc = raw < kProbClamp ? kProbClamp : (raw > 1.0 - kProbClamp ? 1.0 - kProbClamp : raw);
    const double loss = label == 1 ? -std::log(pc) : -std::log(1.0 - pc);
    const auto pi = p.i;
    ScalarVal o = push_scalar(loss);
    set_back_s(o, [o, pi, index, label, raw, pc](Tape& t) {
      if (raw < kProbClamp || raw > 1.0 - kProbClamp) return;  // clamped: zero slope
      const double g = t.nodes_[o.i].sgrad;
      if (TensorD* gp = t.grad_sink(pi))
        (*gp)[index] += g * (label == 1 ? -1.0 / pc : 1.0 / (1.0 - pc));
    });
    return o;
  }

  /// Sum of squared decreases of p_next below the frozen pseudo-label p_bar.
  /// The mask is fixed from the forward values; gradient reaches p_next only.
  ScalarVal squared_drop_penalty(Val p_next, const TensorF& p_bar, std::size_t* active_terms) {
    const TensorF& pv = val(p_next);
    require(pv.same_shape(p_bar), "squared_drop_penalty: shape mismatch " +
                                      shape_str(pv.shape()) + " vs " + shape_str(p_bar.shape()));
    std::vector<unsigned char> mask(pv.numel(), 0);
    double acc = 0.0;
    std::size_t active = 0;
    for (std::size_t j = 0; j < pv.numel(); ++j) {
      if (static_cast<double>(pv[j]) - static_cast<double>(p_bar[j]) < 0.0) {
        mask[j] = 1;
        ++active;
        const double d = static_cast<double>(p_bar[j]) - static_cast<double>(pv[j]);
        acc += d * d;
      }
    }
    if (active_terms) *active_terms = active;
    const auto pi = p_next.i;
    TensorF bar = p_bar;
    ScalarVal o = push_scalar(acc);
    set_back_s(o, [o, pi, mask = std::move(mask), bar = std::move(bar)](Tape& t) {
      const double g = t.nodes_[o.i].sgrad;
      if (TensorD* gp = t.grad_sink(pi)) {
        const TensorF& pv2 = t.nodes_[pi].val;
        for (std::size_t j = 0; j < pv2.numel(); ++j)
          if (mask[j])
            (*gp)[j] += g * 2.0 * (static_cast<double>(pv2[j]) - static_cast<double>(bar[j]));
      }
    });
    return o;
  }

  /// Ablation variant of squared_drop_penalty where the pseudo-label is a
  /// live tensor node: gradient flows into both vectors. The drop mask is
  /// still frozen from the forward values.
  ScalarVal squared_drop_penalty_pair(Val p_next, Val p_bar, std::size_t* active_terms) {
    const TensorF& pv = val(p_next);
    const TensorF& bv = val(p_bar);
    require(pv.same_shape(bv), "squared_drop_penalty_pair: shape mismatch " +
                                   shape_str(pv.shape()) + " vs " + shape_str(bv.shape()));
    std::vector<unsigned char> mask(pv.numel(), 0);
    double acc = 0.0;
    std::size_t active = 0;
    for (std::size_t j = 0; j < pv.numel(); ++j) {
      if (static_cast<double>(pv[j]) - static_cast<double>(bv[j]) < 0.0) {
        mask[j] = 1;
        ++active;
        const double d = static_cast<double>(bv[j]) - static_cast<double>(pv[j]);
        acc += d * d;
      }
    }
    if (active_terms) *active_terms = active;
    const auto pi = p_next.i, bi = p_bar.i;
    ScalarVal o = push_scalar(acc);
    set_back_s(o, [o, pi, bi, mask = std::move(mask)](Tape& t) {
      const double g = t.nodes_[o.i].sgrad;
      const TensorF& pv2 = t.nodes_[pi].val;
      const TensorF& bv2 = t.nodes_[bi].val;
      TensorD* gp = t.grad_sink(pi);
      TensorD* gb = t.grad_sink(bi);
      for (std::size_t j = 0; j < pv2.numel(); ++j) {
        if (!mask[j]) continue;
        const double d = static_cast<double>(bv2[j]) - static_cast<double>(pv2[j]);
        if (gp) (*gp)[j] += g * -2.0 * d;
        if (gb) (*gb)[j] += g * 2.0 * d;
      }
    });
    return o;
  }

  /// a + coef * b
  ScalarVal scalar_add_scaled(ScalarVal a, ScalarVal b, double coef) {
    const double v = nodes_[check(a.i)].sval + coef * nodes_[check(b.i)].sval;
    const auto ai = a.i, bi = b.i;
    ScalarVal o = push_scalar(v);
    set_back_s(o, [o, ai, bi, coef](Tape& t) {
      const double g = t.nodes_[o.i].sgrad;
      t.acc_scalar(ai, g);
      t.acc_scalar(bi, g * coef);
    });
    return o;
  }

  ScalarVal scalar_mean(const std::vector<ScalarVal>& xs) {
    require(!xs.empty(), "scalar_mean: empty input");
    double acc = 0.0;
    for (ScalarVal s : xs) acc += nodes_[check(s.i)].sval;
    const double inv = 1.0 / static_cast<double>(xs.size());
    std::vector<std::int32_t> idx;
    idx.reserve(xs.size());
    for (ScalarVal s : xs) idx.push_back(s.i);
    ScalarVal o = push_scalar(acc * inv);
    set_back_s(o, [o, idx = std::move(idx), inv](Tape& t) {
      const double g = t.nodes_[o.i].sgrad * inv;
      for (std::int32_t i : idx) t.acc_scalar(i, g);
    });
    return o;
  }

  // ---- backward -------------------------------------------------------------

  /// One reverse sweep from a scalar root. May be called once per tape.
  void backward(ScalarVal root) {
    Node& r = nodes_[check(root.i)];
    if (!r.is_scalar) throw std::logic_error("tape: backward root must be a scalar node");
    if (backward_done_) throw std::logic_error("tape: backward already ran on this tape");
    backward_done_ = true;
    r.sgrad = 1.0;
    r.grad_live = true;
    for (std::int32_t i = root.i; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad_live && n.back) n.back(*this);
    }
  }

 private:
  std::int32_t check(std::int32_t i) const {
    if (i < 0 || static_cast<std::size_t>(i) >= nodes_.size())
      throw std::logic_error("tape: handle does not belong to this tape");
    return i;
  }

  Val push_tensor(TensorF value, bool needs_grad, std::function<void(Tape&)> back) {
    Node n;
    n.val = std::move(value);
    n.needs_grad = needs_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Val{static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  ScalarVal push_scalar(double value) {
    Node n;
    n.sval = value;
    n.is_scalar = true;
    nodes_.push_back(std::move(n));
    return ScalarVal{static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  void set_back(Val v, std::function<void(Tape&)> f) { nodes_[v.i].back = std::move(f); }
  void set_back_s(ScalarVal v, std::function<void(Tape&)> f) { nodes_[v.i].back = std::move(f); }

  /// Adjoint buffer of a tensor node, or nullptr when gradients are not
  /// wanted there (constants).
  TensorD* grad_sink(std::int32_t i) {
    Node& n = nodes_[i];
    if (!n.needs_grad) return nullptr;
    if (!n.grad_live) {
      n.grad = TensorD(n.val.shape());
      n.grad_live = true;
    }
    return &n.grad;
  }

  void acc_scalar(std::int32_t i, double g) {
    Node& n = nodes_[i];
    if (!n.needs_grad) return;
    n.sgrad += g;
    n.grad_live = true;
  }

  static void softmax_backward_rows(Tape& t, std::int32_t out, std::int32_t in,
                                    std::size_t rows, std::size_t cols) {
    const TensorD& g = t.nodes_[out].grad;
    const TensorF& y = t.nodes_[out].val;
    TensorD* ga = t.grad_sink(in);
    if (!ga) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t off = r * cols;
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += g[off + j] * static_cast<double>(y[off + j]);
      for (std::size_t j = 0; j < cols; ++j)
        (*ga)[off + j] += static_cast<double>(y[off + j]) * (g[off + j] - dot);
    }
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace dtkt::num
