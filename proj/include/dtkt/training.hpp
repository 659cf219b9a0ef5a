// Mini-batch training over student sequences with validation-based early
// stopping.
//
// One sequence unrolls onto one tape. After consuming interaction x_t the
// model predicts the response to q_{t+1}; the first scored target is r_2 and
// the last consumed interaction is x_{T-1}. When the consumed response was
// correct and alpha > 0, the pre-update prediction vector acts as a frozen
// pseudo-label for the squared-drop penalty. Per-sequence loss is the mean
// over scored steps; batch gradients are means over sequences.
#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dtkt/checkpoint.hpp"
#include "dtkt/data.hpp"
#include "dtkt/metrics.hpp"
#include "dtkt/model.hpp"
#include "dtkt/objective.hpp"
#include "dtkt/optim.hpp"
#include "dtkt/rng.hpp"
#include "dtkt/tape.hpp"

namespace dtkt::training {

struct TrainConfig {
  double alpha = 0.0;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double lr = 0.003;
  double clip_norm = 50.0;
  std::uint64_t seed = 0;
  std::size_t patience = 5;
  model::ModelConfig model;
  bool cpl_enabled = true;  // ablation switch; alpha = 0 with it on is the base model
  // Ablation: when false the pseudo-label is a live node and gradient flows
  // into it, instead of being treated as a constant target.
  bool detach_pseudo_label = true;

  void validate() const {
    if (alpha < 0.0) throw std::invalid_argument("train config: alpha must be >= 0");
    if (epochs == 0 || batch_size == 0) throw std::invalid_argument("train config: epochs and batch size must be positive");
    if (!(lr > 0.0)) throw std::invalid_argument("train config: lr must be > 0");
    if (!(clip_norm > 0.0)) throw std::invalid_argument("train config: clip norm must be > 0");
    model.validate();
  }
};

struct EpochStat {
  double train_loss = 0.0;
  double valid_auroc = 0.0;
};

struct TrainReport {
  std::vector<EpochStat> epochs;
  std::size_t best_epoch = 0;  // 1-based
  double best_valid_auroc = 0.0;
  std::string checkpoint_path;
};

struct UnrollResult {
  num::ScalarVal loss;
  objective::LossBreakdown totals;      // sums over scored steps
  std::size_t scored_steps = 0;
  std::size_t predict_all_calls = 0;    // gradient-tracked full readouts
};

/// Builds the combined sequence loss on the tape and returns its mean node.
inline UnrollResult unroll_sequence(num::Tape& tape, const model::Bound<model::TapeEngine>& bound,
                                    const model::TapeEngine& eng, const data::StudentSequence& seq,
                                    double alpha, model::WriteMode mode = model::WriteMode::AddErase,
                                    bool cpl_enabled = true, bool detach_pseudo_label = true) {
  const auto& xs = seq.interactions;
  if (xs.size() < 2) throw std::invalid_argument("unroll_sequence: need at least two interactions");

  // Plain-value twin used for pseudo-label vectors, which are constants for
  // differentiation and therefore never recorded on the tape.
  const model::EvalEngine ev;
  model::Bound<model::EvalEngine> evb;
  const bool want_cpl = alpha > 0.0 && cpl_enabled;
  const bool live_pbar = want_cpl && !detach_pseudo_label;
  num::TensorF eval_w_all;
  if (want_cpl && detach_pseudo_label) {
    evb = model::bind_values(tape, bound);
    eval_w_all = model::attention_all(ev, evb);
  }

  num::Val w_all;  // tape-side attention matrix, hoisted once per sequence
  const bool need_w_all = want_cpl;
  if (need_w_all) w_all = model::attention_all(eng, bound);

  UnrollResult out;
  num::Val state = bound.init_value_memory;
  num::TensorF p_bar;        // detached pseudo-label values
  bool p_bar_valid = false;
  num::Val p_bar_node;       // live pseudo-label node (ablation path)
  if (live_pbar) {
    p_bar_node = model::predict_all_from_w(eng, bound, state, w_all);
    ++out.predict_all_calls;
  }

  std::vector<num::ScalarVal> step_losses;
  step_losses.reserve(xs.size() - 1);

  for (std::size_t t = 0; t + 1 < xs.size(); ++t) {
    const data::Interaction& x = xs[t];
    const data::Interaction& label = xs[t + 1];
    const bool cpl_here = want_cpl && x.response == 1;

    if (cpl_here && detach_pseudo_label && !p_bar_valid) {
      p_bar = model::predict_all_from_w(ev, evb, tape.val(state), eval_w_all);
      p_bar_valid = true;
    }

    const num::Val w_row = need_w_all ? eng.row(w_all, x.question)
                                      : model::attention_one(eng, bound, x.question);
    state = model::write_from_w(eng, bound, state, w_row, x, mode);

    num::ScalarVal step_loss;
    if (live_pbar) {
      // gradient reaches the pseudo-label too; full readout every step
      const num::Val p_vec = model::predict_all_from_w(eng, bound, state, w_all);
      ++out.predict_all_calls;
      const num::ScalarVal ce = tape.bce(p_vec, label.question, label.response);
      out.totals.ce += tape.sval(ce);
      if (cpl_here) {
        std::size_t active = 0;
        const num::ScalarVal cpl = tape.squared_drop_penalty_pair(p_vec, p_bar_node, &active);
        step_loss = tape.scalar_add_scaled(ce, cpl, alpha);
        out.totals.cpl += tape.sval(cpl);
        out.totals.active_cpl_terms += active;
      } else {
        step_loss = ce;
      }
      p_bar_node = p_vec;
    } else if (cpl_here) {
      const num::Val p_vec = model::predict_all_from_w(eng, bound, state, w_all);
      ++out.predict_all_calls;
      const num::ScalarVal ce = tape.bce(p_vec, label.question, label.response);
      std::size_t active = 0;
      const num::ScalarVal cpl = tape.squared_drop_penalty(p_vec, p_bar, &active);
      step_loss = tape.scalar_add_scaled(ce, cpl, alpha);
      out.totals.ce += tape.sval(ce);
      out.totals.cpl += tape.sval(cpl);
      out.totals.active_cpl_terms += active;
      p_bar = tape.val(p_vec);
      p_bar_valid = true;
    } else {
      const num::Val w_label = need_w_all ? eng.row(w_all, label.question)
                                          : model::attention_one(eng, bound, label.question);
      const num::Val p_one = model::predict_one_from_w(eng, bound, state, w_label, label.question);
      const num::ScalarVal ce = tape.bce(p_one, 0, label.response);
      step_loss = ce;
      out.totals.ce += tape.sval(ce);
      p_bar_valid = false;  // recompute from state values if the next step needs it
    }
    out.totals.combined += tape.sval(step_loss);
    step_losses.push_back(step_loss);
    ++out.scored_steps;
  }

  out.loss = tape.scalar_mean(step_losses);
  return out;
}

/// Convenience overload owning the bind.
inline UnrollResult unroll_sequence(num::Tape& tape, const model::ModelParams& params,
                                    const data::StudentSequence& seq, double alpha,
                                    model::WriteMode mode = model::WriteMode::AddErase,
                                    bool cpl_enabled = true, bool detach_pseudo_label = true) {
  model::TapeEngine eng{tape};
  auto bound = model::bind(eng, params);
  return unroll_sequence(tape, bound, eng, seq, alpha, mode, cpl_enabled, detach_pseudo_label);
}

class divergence_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Trains on the train split with per-epoch validation AUROC (always under
/// the full add+erase write path), keeping the checkpoint of the best epoch.
inline TrainReport train(const data::Dataset& train_ds, const data::Dataset& valid_ds,
                         const TrainConfig& cfg, const std::string& checkpoint_path) {
  cfg.validate();
  if (train_ds.sequences.empty() || valid_ds.sequences.empty())
    throw std::invalid_argument("train: train and valid splits must be non-empty");

  num::Rng rng(cfg.seed);
  model::ModelParams params = model::init_params(cfg.model, rng);

  num::ParamStore store;
  model::for_each_param(params, [&](const char* name, const num::TensorF& t) { store.add(name, t); });
  num::AdamSettings adam;
  adam.lr = cfg.lr;

  TrainReport report;
  report.checkpoint_path = checkpoint_path;
  model::ModelParams best_params = params;
  std::size_t epochs_since_best = 0;

  std::vector<std::size_t> order(train_ds.sequences.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;

    for (std::size_t base = 0; base < order.size(); base += cfg.batch_size) {
      const std::size_t batch_end = std::min(order.size(), base + cfg.batch_size);
      num::GradMap grads = store.make_grad_map();
      double batch_loss = 0.0;

      for (std::size_t s = base; s < batch_end; ++s) {
        const auto& seq = train_ds.sequences[order[s]];
        num::Tape tape;
        model::TapeEngine eng{tape};
        auto bound = model::bind(eng, params);
        UnrollResult u = unroll_sequence(tape, bound, eng, seq, cfg.alpha,
                                         model::WriteMode::AddErase, cfg.cpl_enabled,
                                         cfg.detach_pseudo_label);
        const double seq_loss = tape.sval(u.loss);
        if (!std::isfinite(seq_loss))
          throw divergence_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", sequence " + std::to_string(order[s]));
        batch_loss += seq_loss;
        tape.backward(u.loss);
        model::accumulate_param_grads(tape, bound, grads);
      }

      const double inv = 1.0 / static_cast<double>(batch_end - base);
      for (auto& [name, g] : grads)
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= inv;
      if (!std::isfinite(num::global_norm(grads)))
        throw divergence_error("train: non-finite gradient norm at epoch " +
                               std::to_string(epoch));
      num::clip_global_norm(grads, cfg.clip_norm);
      store.adam_step(grads, adam);
      model::for_each_param(params,
                            [&](const char* name, num::TensorF& t) { t = store.value(name); });

      loss_sum += batch_loss;
      loss_count += batch_end - base;
    }

    EpochStat stat;
    stat.train_loss = loss_sum / static_cast<double>(loss_count);
    const auto preds = metrics::collect_predictions(params, valid_ds, model::WriteMode::AddErase);
    for (const auto& r : preds)
      if (!std::isfinite(r.prob))
        throw divergence_error("train: non-finite validation prediction at epoch " +
                               std::to_string(epoch));
    const auto va = metrics::auroc(preds);
    if (!va)
      throw std::runtime_error("train: validation AUROC undefined (single-class valid split)");
    stat.valid_auroc = *va;
    report.epochs.push_back(stat);

    if (report.best_epoch == 0 || stat.valid_auroc > report.best_valid_auroc) {
      report.best_epoch = epoch;
      report.best_valid_auroc = stat.valid_auroc;
      best_params = params;
      epochs_since_best = 0;
    } else if (++epochs_since_best >= cfg.patience) {
      break;
    }
  }

  model::save_checkpoint(best_params, model::WriteMode::AddErase, checkpoint_path);
  return report;
}

}  // namespace dtkt::training
