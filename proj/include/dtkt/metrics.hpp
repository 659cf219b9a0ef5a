// Evaluation metrics: rank-based AUROC (global and per question), the
// aggregated probability-difference matrix, update-failure statistics, and
// the mastery-decrease summary md.
//
// Model evaluation over a dataset can fan out across student sequences; work
// is cut into fixed-size chunks folded in chunk order, so results are
// bit-identical for any thread count.
#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "dtkt/data.hpp"
#include "dtkt/model.hpp"
#include "dtkt/tensor.hpp"

namespace dtkt::metrics {

struct PredictionRecord {
  std::size_t question = 0;
  double prob = 0.0;
  int label = 0;
};

// ---------------------------------------------------------------------------
// AUROC
// ---------------------------------------------------------------------------

/// Mann-Whitney AUROC with average-rank tie handling; equals the fraction of
/// positive-negative pairs ranked correctly, ties counted one half. Empty or
/// single-class inputs yield nullopt.
inline std::optional<double> auroc(const std::vector<PredictionRecord>& records) {
  const std::size_t n = records.size();
  std::size_t n_pos = 0;
  for (const auto& r : records) {
    if (!(r.prob >= 0.0 && r.prob <= 1.0))
      throw std::invalid_argument("auroc: probability outside [0,1]");
    n_pos += r.label == 1;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (records[a].prob != records[b].prob) return records[a].prob < records[b].prob;
    return a < b;  // stable under equal scores
  });

  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && records[order[j]].prob == records[order[i]].prob) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k)
      if (records[order[k]].label == 1) rank_sum_pos += avg_rank;
    i = j;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// AUROC per target question; questions whose records lack one of the two
/// classes are absent from the result.
inline std::map<std::size_t, double> per_question_auroc(const std::vector<PredictionRecord>& records) {
  std::map<std::size_t, std::vector<PredictionRecord>> groups;
  for (const auto& r : records) groups[r.question].push_back(r);
  std::map<std::size_t, double> out;
  for (const auto& [q, rs] : groups)
    if (auto a = auroc(rs)) out[q] = *a;
  return out;
}

struct CountGroupSummary {
  std::size_t k = 0;               // effective group size
  bool k_shrunk = false;           // fewer than 2k eligible questions
  double top_mean_auroc = 0.0;     // unweighted over the k most-seen questions
  double bottom_mean_auroc = 0.0;  // unweighted over the k least-seen questions
  double top_share_pct = 0.0;      // group interactions / total interactions
  double bottom_share_pct = 0.0;
  std::vector<std::size_t> top_questions, bottom_questions;
};

/// Mean AUROC of the k most- and least-practised questions (among questions
/// with a defined AUROC), plus each group's share of all interactions.
inline CountGroupSummary count_group_summary(const std::map<std::size_t, double>& per_question,
                                             const data::QuestionStats& stats, std::size_t k = 10) {
  std::vector<std::size_t> eligible;
  for (const auto& [q, a] : per_question) eligible.push_back(q);
  if (eligible.size() < 2)
    throw std::invalid_argument("count_group_summary: need at least two questions with AUROC");

  CountGroupSummary out;
  out.k = k;
  if (eligible.size() < 2 * k) {
    out.k = eligible.size() / 2;
    out.k_shrunk = true;
  }

  auto by_count_desc = [&](std::size_t a, std::size_t b) {
    if (stats.count[a] != stats.count[b]) return stats.count[a] > stats.count[b];
    return a < b;
  };
  std::sort(eligible.begin(), eligible.end(), by_count_desc);

  out.top_questions.assign(eligible.begin(), eligible.begin() + out.k);
  out.bottom_questions.assign(eligible.end() - static_cast<std::ptrdiff_t>(out.k), eligible.end());
  std::sort(out.bottom_questions.begin(), out.bottom_questions.end());

  const double total = static_cast<double>(stats.total());
  auto summarize = [&](const std::vector<std::size_t>& qs, double& mean, double& share) {
    double acc = 0.0;
    std::size_t count_acc = 0;
    for (std::size_t q : qs) {
      acc += per_question.at(q);
      count_acc += stats.count[q];
    }
    mean = acc / static_cast<double>(qs.size());
    share = 100.0 * static_cast<double>(count_acc) / total;
  };
  summarize(out.top_questions, out.top_mean_auroc, out.top_share_pct);
  summarize(out.bottom_questions, out.bottom_mean_auroc, out.bottom_share_pct);
  return out;
}

// ---------------------------------------------------------------------------
// Deterministic chunked parallelism for per-sequence evaluation
// ---------------------------------------------------------------------------

namespace detail {

inline unsigned eval_threads() {
  unsigned hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  if (const char* env = std::getenv("DTKT_THREADS")) {
    const long cap = std::atol(env);
    if (cap >= 1 && static_cast<unsigned>(cap) < hw) hw = static_cast<unsigned>(cap);
  }
  return hw;
}

inline constexpr std::size_t kChunkSequences = 32;

/// Maps [0, n) in fixed chunks and folds the partial results in chunk order.
/// Chunk boundaries do not depend on the thread count, so the folded result
/// is identical no matter how many workers run.
template <class Partial, class MapFn, class FoldFn>
void chunked_fold(std::size_t n, unsigned threads, MapFn&& map_chunk, FoldFn&& fold) {
  const std::size_t chunk = kChunkSequences;
  const std::size_t n_chunks = (n + chunk - 1) / chunk;
  if (threads <= 1 || n_chunks <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c)
      fold(map_chunk(c * chunk, std::min(n, (c + 1) * chunk)));
    return;
  }
  for (std::size_t base = 0; base < n_chunks; base += threads) {
    const std::size_t wave = std::min<std::size_t>(threads, n_chunks - base);
    std::vector<Partial> parts(wave);
    std::vector<std::thread> workers;
    workers.reserve(wave);
    for (std::size_t w = 0; w < wave; ++w)
      workers.emplace_back([&, w] {
        const std::size_t c = base + w;
        parts[w] = map_chunk(c * chunk, std::min(n, (c + 1) * chunk));
      });
    for (auto& t : workers) t.join();
    for (std::size_t w = 0; w < wave; ++w) fold(std::move(parts[w]));
  }
}

}  // namespace detail

/// Next-response predictions over a dataset: after consuming x_t the label
/// coordinate q_{t+1} is read, for t = 1..T-1.
inline std::vector<PredictionRecord> collect_predictions(const model::ModelParams& params,
                                                         const data::Dataset& ds,
                                                         model::WriteMode mode,
                                                         unsigned threads = detail::eval_threads()) {
  const model::EvalEngine e;
  const auto bound = model::bind(e, params);
  const num::TensorF w_all = model::attention_all(e, bound);

  std::vector<PredictionRecord> out;
  out.reserve(ds.total_interactions());
  auto map_chunk = [&](std::size_t lo, std::size_t hi) {
    std::vector<PredictionRecord> part;
    for (std::size_t s = lo; s < hi; ++s) {
      const auto& xs = ds.sequences[s].interactions;
      num::TensorF state = bound.init_value_memory;
      for (std::size_t t = 0; t + 1 < xs.size(); ++t) {
        state = model::write_from_w(e, bound, state, e.row(w_all, xs[t].question), xs[t], mode);
        const std::size_t target = xs[t + 1].question;
        const num::TensorF p =
            model::predict_one_from_w(e, bound, state, e.row(w_all, target), target);
        part.push_back(PredictionRecord{target, static_cast<double>(p[0]), xs[t + 1].response});
      }
    }
    return part;
  };
  detail::chunked_fold<std::vector<PredictionRecord>>(
      ds.sequences.size(), threads, map_chunk,
      [&](std::vector<PredictionRecord>&& part) {
        out.insert(out.end(), part.begin(), part.end());
      });
  return out;
}

// ---------------------------------------------------------------------------
// Probability-difference matrix
// ---------------------------------------------------------------------------

/// Aggregated probability differences. Row i collects, over every event
/// "question i answered correctly", the change of each question's predicted
/// probability across that update. Rows without events are absent, not zero.
/// Per-event diagonal changes are retained for threshold statistics.
struct DeltaPStats {
  std::size_t q = 0;
  num::TensorD sum;                              // Q x Q accumulated differences
  std::vector<std::size_t> row_events;           // events aggregated per row
  std::vector<std::vector<double>> diag_events;  // per question: per-event diagonal change

  bool row_present(std::size_t i) const { return row_events[i] > 0; }
  double mean(std::size_t i, std::size_t j) const {
    return sum.at(i, j) / static_cast<double>(row_events[i]);
  }
  std::size_t populated_rows() const {
    std::size_t n = 0;
    for (auto e : row_events) n += e > 0;
    return n;
  }
};

inline DeltaPStats delta_p_matrix(const model::ModelParams& params, const data::Dataset& ds,
                                  model::WriteMode mode,
                                  unsigned threads = detail::eval_threads()) {
  const std::size_t q = params.config.num_questions;
  const model::EvalEngine e;
  const auto bound = model::bind(e, params);
  const num::TensorF w_all = model::attention_all(e, bound);

  DeltaPStats out;
  out.q = q;
  out.sum = num::TensorD(num::Shape{q, q});
  out.row_events.assign(q, 0);
  out.diag_events.assign(q, {});

  struct Event {
    std::size_t question;
    std::vector<float> before, after;
  };
  auto map_chunk = [&](std::size_t lo, std::size_t hi) {
    std::vector<Event> part;
    for (std::size_t s = lo; s < hi; ++s) {
      const auto& xs = ds.sequences[s].interactions;
      num::TensorF state = bound.init_value_memory;
      num::TensorF p_prev = model::predict_all_from_w(e, bound, state, w_all);
      for (const auto& x : xs) {
        state = model::write_from_w(e, bound, state, e.row(w_all, x.question), x, mode);
        num::TensorF p_cur = model::predict_all_from_w(e, bound, state, w_all);
        if (x.response == 1)
          part.push_back(Event{x.question, p_prev.storage(), p_cur.storage()});
        p_prev = std::move(p_cur);
      }
    }
    return part;
  };
  detail::chunked_fold<std::vector<Event>>(
      ds.sequences.size(), threads, map_chunk, [&](std::vector<Event>&& part) {
        for (const Event& ev : part) {
          const std::size_t i = ev.question;
          for (std::size_t j = 0; j < q; ++j)
            out.sum.at(i, j) +=
                static_cast<double>(ev.after[j]) - static_cast<double>(ev.before[j]);
          ++out.row_events[i];
          out.diag_events[i].push_back(static_cast<double>(ev.after[i]) -
                                       static_cast<double>(ev.before[i]));
        }
      });
  return out;
}

// ---------------------------------------------------------------------------
// Update-failure statistics
// ---------------------------------------------------------------------------

enum class FlagRule { EventMean, AnyEvent };

inline const char* flag_rule_name(FlagRule r) {
  return r == FlagRule::EventMean ? "event_mean" : "any_event";
}
inline FlagRule flag_rule_from_name(const std::string& s) {
  if (s == "event_mean") return FlagRule::EventMean;
  if (s == "any_event") return FlagRule::AnyEvent;
  throw std::invalid_argument("unknown flag rule: " + s);
}

struct UpdateFailureReport {
  double ratio_pct = 0.0;   // flagged questions / total questions
  double avg_abs = 0.0;     // mean |diagonal drop| over events below -th
  double max_abs = 0.0;     // max  |diagonal drop| over events below -th
  double threshold = 0.0;
  FlagRule rule = FlagRule::EventMean;
  std::vector<std::size_t> flagged;
  std::size_t qualifying_events = 0;
};

/// A question fails when answering it correctly still lowered its own
/// predicted probability: event-mean rule flags i when the mean diagonal
/// change is below -th, any-event rule when any single event is.
inline UpdateFailureReport update_failure_stats(const DeltaPStats& dp, double th = 0.001,
                                                FlagRule rule = FlagRule::EventMean) {
  if (dp.populated_rows() == 0)
    throw std::invalid_argument("update_failure_stats: matrix has no populated rows");
  UpdateFailureReport rep;
  rep.threshold = th;
  rep.rule = rule;
  double acc = 0.0;
  for (std::size_t i = 0; i < dp.q; ++i) {
    if (!dp.row_present(i)) continue;
    bool flag = false;
    if (rule == FlagRule::EventMean) {
      flag = dp.mean(i, i) < -th;
    } else {
      for (double d : dp.diag_events[i])
        if (d < -th) {
          flag = true;
          break;
        }
    }
    if (flag) rep.flagged.push_back(i);
    for (double d : dp.diag_events[i])
      if (d < -th) {
        const double a = -d;
        acc += a;
        rep.max_abs = std::max(rep.max_abs, a);
        ++rep.qualifying_events;
      }
  }
  rep.ratio_pct = 100.0 * static_cast<double>(rep.flagged.size()) / static_cast<double>(dp.q);
  rep.avg_abs = rep.qualifying_events ? acc / static_cast<double>(rep.qualifying_events) : 0.0;
  return rep;
}

/// Average magnitude of probability decreases: per populated row, the mean of
/// |negative entries| (0 when a row has none), averaged over populated rows.
inline double md(const DeltaPStats& dp) {
  std::size_t rows = 0;
  double acc = 0.0;
  for (std::size_t i = 0; i < dp.q; ++i) {
    if (!dp.row_present(i)) continue;
    ++rows;
    double row_acc = 0.0;
    std::size_t negatives = 0;
    for (std::size_t j = 0; j < dp.q; ++j) {
      const double v = dp.mean(i, j);
      if (v < 0.0) {
        row_acc += -v;
        ++negatives;
      }
    }
    if (negatives > 0) acc += row_acc / static_cast<double>(negatives);
  }
  if (rows == 0) throw std::invalid_argument("md: matrix has no populated rows");
  return acc / static_cast<double>(rows);
}

}  // namespace dtkt::metrics
