// Training losses.
//
// Per step, the cross-entropy of the one labelled coordinate is always paid.
// When the step's consumed response was correct, a squared penalty is added
// for every question whose predicted probability dropped below its value
// before the update ("conditional pseudo-labeled loss"). The pre-update
// probabilities act as pseudo-labels: they and the drop mask are constants
// for differentiation, so the gradient can only push the post-update
// probabilities back up, never drag the pseudo-labels down.
#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>

#include "dtkt/tape.hpp"
#include "dtkt/tensor.hpp"

namespace dtkt::objective {

inline constexpr double kProbClamp = num::Tape::kProbClamp;

struct LossBreakdown {
  double ce = 0.0;
  double cpl = 0.0;
  double combined = 0.0;
  std::size_t active_cpl_terms = 0;
};

inline double clamp_prob(double p) {
  return p < kProbClamp ? kProbClamp : (p > 1.0 - kProbClamp ? 1.0 - kProbClamp : p);
}

/// -r log p(i) - (1-r) log(1 - p(i)) at i = next_question.
inline double ce_loss(const num::TensorF& p_next, std::size_t next_question, int next_response) {
  num::require(next_question < p_next.numel(), "ce_loss: question index out of range");
  num::require(next_response == 0 || next_response == 1, "ce_loss: response must be 0 or 1");
  const double p = clamp_prob(static_cast<double>(p_next[next_question]));
  return next_response == 1 ? -std::log(p) : -std::log(1.0 - p);
}

/// Squared drops of p_next below the pseudo-label p_bar, gated on the
/// consumed response having been correct. current_q names the conditioning
/// interaction; the sum itself runs over every question.
inline double cpl_loss(const num::TensorF& p_bar, const num::TensorF& p_next,
                       [[maybe_unused]] std::size_t current_q, int current_r,
                       std::size_t* active_terms = nullptr) {
  num::require(p_bar.same_shape(p_next), "cpl_loss: probability vectors must have equal shape, got " +
                                             num::shape_str(p_bar.shape()) + " vs " +
                                             num::shape_str(p_next.shape()));
  if (active_terms) *active_terms = 0;
  if (current_r != 1) return 0.0;
  double acc = 0.0;
  std::size_t active = 0;
  for (std::size_t j = 0; j < p_next.numel(); ++j) {
    const double drop = static_cast<double>(p_next[j]) - static_cast<double>(p_bar[j]);
    if (drop < 0.0) {
      acc += drop * drop;
      ++active;
    }
  }
  if (active_terms) *active_terms = active;
  return acc;
}

/// combined = ce + alpha * cpl. alpha = 0 reduces exactly to the base objective.
inline LossBreakdown combined_step_loss(double ce, double cpl, std::size_t active_cpl_terms,
                                        double alpha) {
  if (alpha < 0.0) throw std::invalid_argument("combined_step_loss: alpha must be >= 0");
  LossBreakdown b;
  b.ce = ce;
  b.cpl = cpl;
  b.active_cpl_terms = active_cpl_terms;
  b.combined = ce + alpha * cpl;
  return b;
}

}  // namespace dtkt::objective
