// Key-value memory network student model.
//
// A static key memory addresses questions; a per-student value memory holds
// the evolving knowledge state. One step writes the current interaction into
// the value memory through erase/add gates and then reads a correctness
// probability for any candidate question.
//
// The forward math is written once as templates over an "engine": EvalEngine
// computes plain float tensors, TapeEngine records the same operations for
// reverse-mode differentiation. Both run the identical kernel sequence, so
// their outputs agree bit for bit.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

#include "dtkt/data.hpp"
#include "dtkt/optim.hpp"
#include "dtkt/rng.hpp"
#include "dtkt/tape.hpp"
#include "dtkt/tensor.hpp"

namespace dtkt::model {

struct ModelConfig {
  std::size_t num_questions = 0;  // Q
  std::size_t slots = 20;         // N
  std::size_t key_dim = 50;
  std::size_t value_dim = 100;
  std::size_t summary_dim = 50;

  void validate() const {
    if (num_questions == 0 || slots == 0 || key_dim == 0 || value_dim == 0 || summary_dim == 0)
      throw std::invalid_argument("model config: all dimensions must be positive");
  }
  bool operator==(const ModelConfig&) const = default;
};

/// Write-path ablations. Training always runs AddErase; AddOnly and EraseOnly
/// disable the erase (forgetting) or add (learning) gate at inference time.
enum class WriteMode { AddErase, AddOnly, EraseOnly };

inline const char* write_mode_name(WriteMode m) {
  switch (m) {
    case WriteMode::AddErase: return "add_erase";
    case WriteMode::AddOnly: return "add_only";
    case WriteMode::EraseOnly: return "erase_only";
  }
  return "?";
}

inline WriteMode write_mode_from_name(const std::string& s) {
  if (s == "add_erase") return WriteMode::AddErase;
  if (s == "add_only") return WriteMode::AddOnly;
  if (s == "erase_only") return WriteMode::EraseOnly;
  throw std::invalid_argument("unknown write mode: " + s);
}

struct ModelParams {
  ModelConfig config;
  num::TensorF question_key;       // Q x d_k
  num::TensorF interaction_value;  // 2Q x d_v, row q + r*Q
  num::TensorF key_memory;         // N x d_k
  num::TensorF init_value_memory;  // N x d_v, the trained initial state
  num::TensorF erase_weight;       // d_v x d_v
  num::TensorF erase_bias;         // d_v
  num::TensorF add_weight;         // d_v x d_v
  num::TensorF add_bias;           // d_v
  num::TensorF summary_weight;     // d_f x (d_v + d_k)
  num::TensorF summary_bias;       // d_f
  num::TensorF output_weight;      // 1 x d_f
  num::TensorF output_bias;        // 1
};

/// Visits parameters in the fixed manifest order used everywhere (training,
/// checkpoints, gradient maps).
template <class P, class F>
void for_each_param(P& p, F&& f) {
  f("question_key", p.question_key);
  f("interaction_value", p.interaction_value);
  f("key_memory", p.key_memory);
  f("init_value_memory", p.init_value_memory);
  f("erase_weight", p.erase_weight);
  f("erase_bias", p.erase_bias);
  f("add_weight", p.add_weight);
  f("add_bias", p.add_bias);
  f("summary_weight", p.summary_weight);
  f("summary_bias", p.summary_bias);
  f("output_weight", p.output_weight);
  f("output_bias", p.output_bias);
}

/// Glorot-uniform matrices, zero biases.
inline ModelParams init_params(const ModelConfig& cfg, num::Rng& rng) {
  cfg.validate();
  const std::size_t q = cfg.num_questions, n = cfg.slots, dk = cfg.key_dim, dv = cfg.value_dim,
                    df = cfg.summary_dim;
  ModelParams p;
  p.config = cfg;
  auto glorot = [&rng](num::Shape shape) {
    num::TensorF t(shape);
    const double limit = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
    for (std::size_t i = 0; i < t.numel(); ++i)
      t[i] = static_cast<float>(rng.uniform(-limit, limit));
    return t;
  };
  p.question_key = glorot({q, dk});
  p.interaction_value = glorot({2 * q, dv});
  p.key_memory = glorot({n, dk});
  p.init_value_memory = glorot({n, dv});
  p.erase_weight = glorot({dv, dv});
  p.erase_bias = num::TensorF(num::Shape{dv});
  p.add_weight = glorot({dv, dv});
  p.add_bias = num::TensorF(num::Shape{dv});
  p.summary_weight = glorot({df, dv + dk});
  p.summary_bias = num::TensorF(num::Shape{df});
  p.output_weight = glorot({1, df});
  p.output_bias = num::TensorF(num::Shape{1});
  return p;
}

/// The knowledge-state estimate: one value memory per student trajectory.
struct MemoryState {
  num::TensorF value_memory;  // N x d_v
};

// ---------------------------------------------------------------------------
// Engines
// ---------------------------------------------------------------------------

/// Plain float evaluation.
struct EvalEngine {
  using val_t = num::TensorF;

  val_t row(const val_t& m, std::size_t r) const {
    num::require(m.rank() == 2 && r < m.rows(),
                 "row: index " + std::to_string(r) + " out of range for " +
                     num::shape_str(m.shape()));
    val_t out(num::Shape{m.cols()});
    for (std::size_t j = 0; j < m.cols(); ++j) out[j] = m.at(r, j);
    return out;
  }
  val_t matvec(const val_t& a, const val_t& x) const { return num::matvec(a, x); }
  val_t vecmat(const val_t& w, const val_t& a) const { return num::vecmat(w, a); }
  val_t matmul(const val_t& a, const val_t& b) const { return num::matmul(a, b); }
  val_t matmul_nt(const val_t& a, const val_t& b) const { return num::matmul_nt(a, b); }
  val_t outer(const val_t& x, const val_t& y) const { return num::outer(x, y); }
  val_t add(const val_t& a, const val_t& b) const {
    num::require(a.same_shape(b), "add: shape mismatch " + num::shape_str(a.shape()) + " vs " +
                                      num::shape_str(b.shape()));
    val_t out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] + b[i];
    return out;
  }
  val_t add_row_broadcast(const val_t& a, const val_t& bias) const {
    num::require(a.rank() == 2 && bias.numel() == a.cols(),
                 "add_row_broadcast: shape mismatch " + num::shape_str(a.shape()) + " vs " +
                     num::shape_str(bias.shape()));
    val_t out(a.shape());
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(i, j) + bias[j];
    return out;
  }
  val_t add_broadcast_scalar(const val_t& v, const val_t& s) const {
    num::require(s.numel() == 1, "add_broadcast_scalar: second operand must hold one value");
    val_t out(v.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = v[i] + s[0];
    return out;
  }
  val_t one_minus(const val_t& a) const {
    val_t out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = 1.0f - a[i];
    return out;
  }
  val_t mul(const val_t& a, const val_t& b) const {
    num::require(a.same_shape(b), "mul: shape mismatch " + num::shape_str(a.shape()) + " vs " +
                                      num::shape_str(b.shape()));
    val_t out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] * b[i];
    return out;
  }
  val_t sigmoid(const val_t& a) const {
    val_t out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = 1.0f / (1.0f + std::exp(-a[i]));
    return out;
  }
  val_t tanh(const val_t& a) const {
    val_t out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(a[i]);
    return out;
  }
  val_t softmax_vec(const val_t& a) const {
    val_t out = a;
    num::softmax_row_inplace(out.data(), out.numel());
    return out;
  }
  val_t softmax_rows(const val_t& a) const {
    val_t out = a;
    for (std::size_t i = 0; i < out.rows(); ++i)
      num::softmax_row_inplace(out.data() + i * out.cols(), out.cols());
    return out;
  }
  val_t concat_vec(const val_t& a, const val_t& b) const {
    val_t out(num::Shape{a.numel() + b.numel()});
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i];
    for (std::size_t i = 0; i < b.numel(); ++i) out[a.numel() + i] = b[i];
    return out;
  }
  val_t concat_cols(const val_t& a, const val_t& b) const {
    num::require(a.rank() == 2 && b.rank() == 2 && a.rows() == b.rows(),
                 "concat_cols: shape mismatch " + num::shape_str(a.shape()) + " vs " +
                     num::shape_str(b.shape()));
    val_t out(num::Shape{a.rows(), a.cols() + b.cols()});
    for (std::size_t i = 0; i < a.rows(); ++i) {
      for (std::size_t j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(i, j);
      for (std::size_t j = 0; j < b.cols(); ++j) out.at(i, a.cols() + j) = b.at(i, j);
    }
    return out;
  }
};

/// Records the same operations on a tape for backprop.
struct TapeEngine {
  num::Tape& tape;
  using val_t = num::Val;

  val_t row(val_t m, std::size_t r) const { return tape.row(m, r); }
  val_t matvec(val_t a, val_t x) const { return tape.matvec(a, x); }
  val_t vecmat(val_t w, val_t a) const { return tape.vecmat(w, a); }
  val_t matmul(val_t a, val_t b) const { return tape.matmul(a, b); }
  val_t matmul_nt(val_t a, val_t b) const { return tape.matmul_nt(a, b); }
  val_t outer(val_t x, val_t y) const { return tape.outer(x, y); }
  val_t add(val_t a, val_t b) const { return tape.add(a, b); }
  val_t add_row_broadcast(val_t a, val_t bias) const { return tape.add_row_broadcast(a, bias); }
  val_t add_broadcast_scalar(val_t v, val_t s) const { return tape.add_broadcast_scalar(v, s); }
  val_t one_minus(val_t a) const { return tape.one_minus(a); }
  val_t mul(val_t a, val_t b) const { return tape.mul(a, b); }
  val_t sigmoid(val_t a) const { return tape.sigmoid(a); }
  val_t tanh(val_t a) const { return tape.tanh(a); }
  val_t softmax_vec(val_t a) const { return tape.softmax_vec(a); }
  val_t softmax_rows(val_t a) const { return tape.softmax_rows(a); }
  val_t concat_vec(val_t a, val_t b) const { return tape.concat_vec(a, b); }
  val_t concat_cols(val_t a, val_t b) const { return tape.concat_cols(a, b); }
};

/// Parameters lifted into an engine's value domain.
template <class E>
struct Bound {
  std::size_t q = 0;
  typename E::val_t question_key, interaction_value, key_memory, init_value_memory, erase_weight,
      erase_bias, add_weight, add_bias, summary_weight, summary_bias, output_weight, output_bias;
};

inline Bound<EvalEngine> bind(const EvalEngine&, const ModelParams& p) {
  Bound<EvalEngine> b;
  b.q = p.config.num_questions;
  b.question_key = p.question_key;
  b.interaction_value = p.interaction_value;
  b.key_memory = p.key_memory;
  b.init_value_memory = p.init_value_memory;
  b.erase_weight = p.erase_weight;
  b.erase_bias = p.erase_bias;
  b.add_weight = p.add_weight;
  b.add_bias = p.add_bias;
  b.summary_weight = p.summary_weight;
  b.summary_bias = p.summary_bias;
  b.output_weight = p.output_weight;
  b.output_bias = p.output_bias;
  return b;
}

inline Bound<TapeEngine> bind(const TapeEngine& e, const ModelParams& p) {
  Bound<TapeEngine> b;
  b.q = p.config.num_questions;
  b.question_key = e.tape.leaf(p.question_key);
  b.interaction_value = e.tape.leaf(p.interaction_value);
  b.key_memory = e.tape.leaf(p.key_memory);
  b.init_value_memory = e.tape.leaf(p.init_value_memory);
  b.erase_weight = e.tape.leaf(p.erase_weight);
  b.erase_bias = e.tape.leaf(p.erase_bias);
  b.add_weight = e.tape.leaf(p.add_weight);
  b.add_bias = e.tape.leaf(p.add_bias);
  b.summary_weight = e.tape.leaf(p.summary_weight);
  b.summary_bias = e.tape.leaf(p.summary_bias);
  b.output_weight = e.tape.leaf(p.output_weight);
  b.output_bias = e.tape.leaf(p.output_bias);
  return b;
}

/// Plain-value view of tape-bound parameters, for no-gradient side paths.
inline Bound<EvalEngine> bind_values(const num::Tape& tape, const Bound<TapeEngine>& b) {
  Bound<EvalEngine> out;
  out.q = b.q;
  out.question_key = tape.val(b.question_key);
  out.interaction_value = tape.val(b.interaction_value);
  out.key_memory = tape.val(b.key_memory);
  out.init_value_memory = tape.val(b.init_value_memory);
  out.erase_weight = tape.val(b.erase_weight);
  out.erase_bias = tape.val(b.erase_bias);
  out.add_weight = tape.val(b.add_weight);
  out.add_bias = tape.val(b.add_bias);
  out.summary_weight = tape.val(b.summary_weight);
  out.summary_bias = tape.val(b.summary_bias);
  out.output_weight = tape.val(b.output_weight);
  out.output_bias = tape.val(b.output_bias);
  return out;
}

/// Collects leaf gradients after a backward pass into a named map.
inline void accumulate_param_grads(const num::Tape& tape, const Bound<TapeEngine>& b,
                                   num::GradMap& sink) {
  tape.add_grad_into(b.question_key, sink.at("question_key"));
  tape.add_grad_into(b.interaction_value, sink.at("interaction_value"));
  tape.add_grad_into(b.key_memory, sink.at("key_memory"));
  tape.add_grad_into(b.init_value_memory, sink.at("init_value_memory"));
  tape.add_grad_into(b.erase_weight, sink.at("erase_weight"));
  tape.add_grad_into(b.erase_bias, sink.at("erase_bias"));
  tape.add_grad_into(b.add_weight, sink.at("add_weight"));
  tape.add_grad_into(b.add_bias, sink.at("add_bias"));
  tape.add_grad_into(b.summary_weight, sink.at("summary_weight"));
  tape.add_grad_into(b.summary_bias, sink.at("summary_bias"));
  tape.add_grad_into(b.output_weight, sink.at("output_weight"));
  tape.add_grad_into(b.output_bias, sink.at("output_bias"));
}

// ---------------------------------------------------------------------------
// Shared forward math
// ---------------------------------------------------------------------------

/// w(q) = softmax(M_k . A[q]); a distribution over memory slots that depends
/// only on the parameters.
template <class E>
typename E::val_t attention_one(const E& e, const Bound<E>& p, std::size_t q) {
  auto key = e.row(p.question_key, q);
  return e.softmax_vec(e.matvec(p.key_memory, key));
}

/// All Q attention rows at once; row q equals attention_one(q) bit for bit.
template <class E>
typename E::val_t attention_all(const E& e, const Bound<E>& p) {
  return e.softmax_rows(e.matmul_nt(p.question_key, p.key_memory));
}

/// Probability of answering `q` correctly given the current state. Returns a
/// one-element tensor. `w` is the attention row for q.
template <class E>
typename E::val_t predict_one_from_w(const E& e, const Bound<E>& p, const typename E::val_t& state,
                                     const typename E::val_t& w, std::size_t q) {
  auto read = e.vecmat(w, state);
  auto key = e.row(p.question_key, q);
  auto feat = e.concat_vec(read, key);
  auto summary = e.tanh(e.add(e.matvec(p.summary_weight, feat), p.summary_bias));
  auto logit = e.add(e.matvec(p.output_weight, summary), p.output_bias);
  return e.sigmoid(logit);
}

/// Correctness probabilities for every question. `w_all` is attention_all.
template <class E>
typename E::val_t predict_all_from_w(const E& e, const Bound<E>& p, const typename E::val_t& state,
                                     const typename E::val_t& w_all) {
  auto reads = e.matmul(w_all, state);                  // Q x d_v
  auto feats = e.concat_cols(reads, p.question_key);    // Q x (d_v + d_k)
  auto summary = e.tanh(e.add_row_broadcast(e.matmul_nt(feats, p.summary_weight), p.summary_bias));
  auto logits = e.add_broadcast_scalar(e.matvec(summary, p.output_weight), p.output_bias);
  return e.sigmoid(logits);                             // [Q]
}

/// One memory update for interaction x. `w` is the attention row of x.question.
template <class E>
typename E::val_t write_from_w(const E& e, const Bound<E>& p, const typename E::val_t& state,
                               const typename E::val_t& w, const data::Interaction& x,
                               WriteMode mode) {
  auto v = e.row(p.interaction_value, x.question + (x.response ? p.q : 0));
  switch (mode) {
    case WriteMode::AddErase: {
      auto erase = e.sigmoid(e.add(e.matvec(p.erase_weight, v), p.erase_bias));
      auto addv = e.tanh(e.add(e.matvec(p.add_weight, v), p.add_bias));
      auto kept = e.mul(state, e.one_minus(e.outer(w, erase)));
      return e.add(kept, e.outer(w, addv));
    }
    case WriteMode::AddOnly: {
      auto addv = e.tanh(e.add(e.matvec(p.add_weight, v), p.add_bias));
      return e.add(state, e.outer(w, addv));
    }
    case WriteMode::EraseOnly: {
      auto erase = e.sigmoid(e.add(e.matvec(p.erase_weight, v), p.erase_bias));
      return e.mul(state, e.one_minus(e.outer(w, erase)));
    }
  }
  throw std::logic_error("write_from_w: unreachable");
}

// ---------------------------------------------------------------------------
// Plain value-level interface
// ---------------------------------------------------------------------------

inline MemoryState initial_state(const ModelParams& p) { return MemoryState{p.init_value_memory}; }

inline num::TensorF attention_weights(const ModelParams& p, std::size_t question) {
  num::require(question < p.config.num_questions,
               "attention_weights: question " + std::to_string(question) + " out of range");
  EvalEngine e;
  auto b = bind(e, p);
  return attention_one(e, b, question);
}

inline float predict_one(const ModelParams& p, const MemoryState& s, std::size_t question) {
  num::require(question < p.config.num_questions,
               "predict_one: question " + std::to_string(question) + " out of range");
  EvalEngine e;
  auto b = bind(e, p);
  auto w = attention_one(e, b, question);
  return predict_one_from_w(e, b, s.value_memory, w, question)[0];
}

inline num::TensorF predict_all(const ModelParams& p, const MemoryState& s) {
  EvalEngine e;
  auto b = bind(e, p);
  auto w_all = attention_all(e, b);
  return predict_all_from_w(e, b, s.value_memory, w_all);
}

inline MemoryState write(const ModelParams& p, const MemoryState& s, const data::Interaction& x,
                         WriteMode mode) {
  num::require(x.question < p.config.num_questions,
               "write: question " + std::to_string(x.question) + " out of range");
  EvalEngine e;
  auto b = bind(e, p);
  auto w = attention_one(e, b, x.question);
  return MemoryState{write_from_w(e, b, s.value_memory, w, x, mode)};
}

/// f_update then f_pred: the next-response prediction step.
inline std::pair<num::TensorF, MemoryState> step(const ModelParams& p, const MemoryState& s,
                                                 const data::Interaction& x, WriteMode mode) {
  MemoryState next = write(p, s, x, mode);
  return {predict_all(p, next), std::move(next)};
}

}  // namespace dtkt::model
