// Post-training diagnostics: write-mode ablation probes, the
// sorted-by-difficulty scenario simulation, concept-vector export, and the
// bundled audit report.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dtkt/checkpoint.hpp"
#include "dtkt/data.hpp"
#include "dtkt/metrics.hpp"
#include "dtkt/model.hpp"

namespace dtkt::analysis {

inline constexpr const char* kAuditSchemaVersion = "dtkt-audit/1";

// ---------------------------------------------------------------------------
// Interpretability probe
// ---------------------------------------------------------------------------

struct ModeProbe {
  double md = 0.0;
  double all_negative_pct = 0.0;  // rows whose every off-diagonal mean is negative
  std::size_t populated_rows = 0;
  std::size_t absent_rows = 0;
};

struct ProbeReport {
  std::map<model::WriteMode, ModeProbe> modes;
  std::optional<double> alpha;  // metadata echo, when known
};

/// Percentage of populated rows i with mean dp(j|i) < 0 for every j != i.
inline double all_negative_row_pct(const metrics::DeltaPStats& dp) {
  std::size_t populated = 0, all_neg = 0;
  for (std::size_t i = 0; i < dp.q; ++i) {
    if (!dp.row_present(i)) continue;
    ++populated;
    bool all = dp.q > 1;
    for (std::size_t j = 0; j < dp.q && all; ++j) {
      if (j == i) continue;
      if (!(dp.mean(i, j) < 0.0)) all = false;
    }
    if (all) ++all_neg;
  }
  if (populated == 0) throw std::invalid_argument("all_negative_row_pct: no populated rows");
  return 100.0 * static_cast<double>(all_neg) / static_cast<double>(populated);
}

inline ProbeReport interpretability_probe(
    const model::ModelParams& params, const data::Dataset& ds,
    const std::vector<model::WriteMode>& modes = {model::WriteMode::AddErase,
                                                  model::WriteMode::AddOnly,
                                                  model::WriteMode::EraseOnly},
    unsigned threads = metrics::detail::eval_threads()) {
  ProbeReport out;
  for (model::WriteMode mode : modes) {
    const metrics::DeltaPStats dp = metrics::delta_p_matrix(params, ds, mode, threads);
    ModeProbe probe;
    probe.md = metrics::md(dp);
    probe.all_negative_pct = all_negative_row_pct(dp);
    probe.populated_rows = dp.populated_rows();
    probe.absent_rows = dp.q - probe.populated_rows;
    out.modes[mode] = probe;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scenario-transfer simulation
// ---------------------------------------------------------------------------

struct ScenarioTrace {
  model::WriteMode mode = model::WriteMode::AddErase;
  std::vector<std::size_t> schedule;   // all Q questions, hardest first
  std::vector<double> avg_mastery;     // length Q + 1, starts at the initial state
};

/// All questions sorted by difficulty descending (ties by ascending id).
inline std::vector<std::size_t> difficulty_schedule(const data::QuestionStats& stats) {
  const std::size_t q = stats.count.size();
  for (std::size_t i = 0; i < q; ++i)
    if (!stats.defined[i])
      throw std::invalid_argument("difficulty_schedule: difficulty undefined for question " +
                                  std::to_string(i) + " (never observed)");
  std::vector<std::size_t> order(q);
  for (std::size_t i = 0; i < q; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (stats.difficulty[a] != stats.difficulty[b]) return stats.difficulty[a] > stats.difficulty[b];
    return a < b;
  });
  return order;
}

/// Simulates a student answering every question correctly, hardest first,
/// recording the average mastery (mean of the full prediction vector) before
/// any answer and after each one.
inline ScenarioTrace scenario_simulation(const model::ModelParams& params,
                                         const data::QuestionStats& stats, model::WriteMode mode) {
  if (stats.count.size() != params.config.num_questions)
    throw std::invalid_argument("scenario_simulation: stats cover " +
                                std::to_string(stats.count.size()) + " questions, model has " +
                                std::to_string(params.config.num_questions));
  const model::EvalEngine e;
  const auto bound = model::bind(e, params);
  const num::TensorF w_all = model::attention_all(e, bound);

  auto avg_mastery = [&](const num::TensorF& state) {
    const num::TensorF p = model::predict_all_from_w(e, bound, state, w_all);
    double acc = 0.0;
    for (std::size_t i = 0; i < p.numel(); ++i) acc += static_cast<double>(p[i]);
    return acc / static_cast<double>(p.numel());
  };

  ScenarioTrace out;
  out.mode = mode;
  out.schedule = difficulty_schedule(stats);
  num::TensorF state = bound.init_value_memory;
  out.avg_mastery.push_back(avg_mastery(state));
  for (std::size_t q : out.schedule) {
    const data::Interaction x{q, 1};
    state = model::write_from_w(e, bound, state, e.row(w_all, q), x, mode);
    out.avg_mastery.push_back(avg_mastery(state));
  }
  return out;
}

inline void write_scenario_csv(const ScenarioTrace& tr, std::ostream& os) {
  os << "step,question_id,avg_mastery\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", tr.avg_mastery[0]);
  os << "0,," << buf << "\n";
  for (std::size_t i = 0; i < tr.schedule.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.9g", tr.avg_mastery[i + 1]);
    os << (i + 1) << "," << (tr.schedule[i] + 1) << "," << buf << "\n";
  }
}

// ---------------------------------------------------------------------------
// Concept vectors
// ---------------------------------------------------------------------------

/// CSV of every question's attention distribution over memory slots
/// (question IDs 1-based on disk, weights printed round-trip exact).
inline void export_concept_vectors(const model::ModelParams& params, std::ostream& os) {
  const model::EvalEngine e;
  const auto bound = model::bind(e, params);
  const num::TensorF w_all = model::attention_all(e, bound);
  os << "question_id";
  for (std::size_t n = 0; n < params.config.slots; ++n) os << ",w" << n;
  os << "\n";
  char buf[64];
  for (std::size_t q = 0; q < params.config.num_questions; ++q) {
    os << (q + 1);
    for (std::size_t n = 0; n < params.config.slots; ++n) {
      std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(w_all.at(q, n)));
      os << "," << buf;
    }
    os << "\n";
  }
}

inline void export_concept_vectors_file(const model::ModelParams& params, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open file for writing: " + path);
  export_concept_vectors(params, os);
}

inline double cosine_similarity(const num::TensorF& m, std::size_t row_a, std::size_t row_b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t j = 0; j < m.cols(); ++j) {
    const double a = m.at(row_a, j), b = m.at(row_b, j);
    dot += a * b;
    na += a * a;
    nb += b * b;
  }
  return dot / (std::sqrt(na) * std::sqrt(nb) + 1e-12);
}

/// For each flagged question, the questions that commonly follow it and how
/// similar their concept vectors are to the flagged question's own, making
/// the concept-mismatch explanation of update failure inspectable.
inline nlohmann::json successor_similarity_report(const model::ModelParams& params,
                                                  const data::Dataset& train_ds,
                                                  const std::vector<std::size_t>& flagged,
                                                  std::size_t min_count = 15) {
  const model::EvalEngine e;
  const auto bound = model::bind(e, params);
  const num::TensorF w_all = model::attention_all(e, bound);

  std::map<std::size_t, std::map<std::size_t, std::size_t>> successors;
  for (const auto& s : train_ds.sequences)
    for (std::size_t t = 0; t + 1 < s.length(); ++t)
      ++successors[s.interactions[t].question][s.interactions[t + 1].question];

  nlohmann::json out = nlohmann::json::array();
  for (std::size_t i : flagged) {
    nlohmann::json entry;
    entry["question"] = i;
    nlohmann::json succ = nlohmann::json::array();
    auto it = successors.find(i);
    if (it != successors.end())
      for (const auto& [j, count] : it->second) {
        if (count < min_count) continue;
        succ.push_back({{"question", j},
                        {"count", count},
                        {"cosine_to_flagged", cosine_similarity(w_all, i, j)}});
      }
    entry["successors"] = std::move(succ);
    out.push_back(std::move(entry));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bundled audit
// ---------------------------------------------------------------------------

inline void write_delta_p_csv(const metrics::DeltaPStats& dp, std::ostream& os) {
  os << "question_id,events";
  for (std::size_t j = 0; j < dp.q; ++j) os << ",dp_" << (j + 1);
  os << "\n";
  char buf[64];
  for (std::size_t i = 0; i < dp.q; ++i) {
    os << (i + 1) << "," << dp.row_events[i];
    for (std::size_t j = 0; j < dp.q; ++j) {
      if (dp.row_present(i)) {
        std::snprintf(buf, sizeof buf, "%.9g", dp.mean(i, j));
        os << "," << buf;
      } else {
        os << ",";  // absent, not zero
      }
    }
    os << "\n";
  }
}

struct AuditOptions {
  double th = 0.001;
  metrics::FlagRule flag_rule = metrics::FlagRule::EventMean;
  std::string split = "test";  // train | valid | test | all
  data::SplitFractions fractions;
  std::uint64_t split_seed = 0;
  std::size_t successor_min_count = 15;
  std::optional<double> alpha;  // echoed into the report when known
  std::string out_dir;          // where CSV side files land
  unsigned threads = metrics::detail::eval_threads();
};

inline nlohmann::json update_failure_to_json(const metrics::UpdateFailureReport& r) {
  return {{"ratio_pct", r.ratio_pct},
          {"avg_abs_dp", r.avg_abs},
          {"max_abs_dp", r.max_abs},
          {"threshold", r.threshold},
          {"flag_rule", metrics::flag_rule_name(r.rule)},
          {"flagged_questions", r.flagged},
          {"qualifying_events", r.qualifying_events}};
}

/// Runs every diagnostic on one checkpoint and bundles them into a single
/// schema-versioned JSON document. A failing section is recorded under
/// "section_errors" without aborting the rest. CSV side files are written
/// under options.out_dir when it is set.
inline nlohmann::json full_audit(const model::Checkpoint& ckpt, const data::Dataset& dataset,
                                 const AuditOptions& opt) {
  const model::ModelParams& params = ckpt.params;
  nlohmann::json report;
  report["schema_version"] = kAuditSchemaVersion;
  report["config"] = {{"num_questions", params.config.num_questions},
                      {"slots", params.config.slots},
                      {"key_dim", params.config.key_dim},
                      {"value_dim", params.config.value_dim},
                      {"summary_dim", params.config.summary_dim},
                      {"split", opt.split},
                      {"split_seed", opt.split_seed},
                      {"threshold", opt.th},
                      {"flag_rule", metrics::flag_rule_name(opt.flag_rule)},
                      {"successor_min_count", opt.successor_min_count}};
  if (opt.alpha) report["config"]["alpha"] = *opt.alpha;
  nlohmann::json errors = nlohmann::json::object();

  auto guarded = [&](const char* section, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& ex) {
      errors[section] = ex.what();
    }
  };

  const data::Splits splits = data::split_dataset(dataset, opt.fractions, opt.split_seed);
  const data::Dataset* eval_ds = nullptr;
  if (opt.split == "train") eval_ds = &splits.train;
  else if (opt.split == "valid") eval_ds = &splits.valid;
  else if (opt.split == "test") eval_ds = &splits.test;
  else if (opt.split == "all") eval_ds = &dataset;
  else throw std::invalid_argument("full_audit: unknown split '" + opt.split + "'");

  auto out_path = [&](const std::string& leaf) { return opt.out_dir + "/" + leaf; };

  // Predictive performance and per-question imbalance.
  guarded("auroc", [&] {
    const auto preds = metrics::collect_predictions(params, *eval_ds, ckpt.mode, opt.threads);
    nlohmann::json sec;
    const auto global = metrics::auroc(preds);
    sec["global"] = global ? nlohmann::json(*global) : nlohmann::json();
    const auto per_q = metrics::per_question_auroc(preds);
    sec["defined_questions"] = per_q.size();
    const auto stats = data::compute_question_stats(*eval_ds);
    const auto groups = metrics::count_group_summary(per_q, stats);
    sec["count_groups"] = {{"k", groups.k},
                           {"k_shrunk", groups.k_shrunk},
                           {"top_mean_auroc", groups.top_mean_auroc},
                           {"bottom_mean_auroc", groups.bottom_mean_auroc},
                           {"top_share_pct", groups.top_share_pct},
                           {"bottom_share_pct", groups.bottom_share_pct},
                           {"top_questions", groups.top_questions},
                           {"bottom_questions", groups.bottom_questions}};
    report["auroc"] = std::move(sec);
  });

  // Probability-difference diagnostics per write mode.
  std::vector<std::size_t> flagged;
  guarded("delta_p", [&] {
    nlohmann::json md_per_mode = nlohmann::json::object();
    nlohmann::json probe = nlohmann::json::object();
    for (model::WriteMode mode : {model::WriteMode::AddErase, model::WriteMode::AddOnly,
                                  model::WriteMode::EraseOnly}) {
      const metrics::DeltaPStats dp = metrics::delta_p_matrix(params, *eval_ds, mode, opt.threads);
      md_per_mode[model::write_mode_name(mode)] = metrics::md(dp);
      probe[model::write_mode_name(mode)] = {{"all_negative_pct", all_negative_row_pct(dp)},
                                             {"populated_rows", dp.populated_rows()},
                                             {"absent_rows", dp.q - dp.populated_rows()}};
      if (mode == model::WriteMode::AddErase) {
        const auto uf = metrics::update_failure_stats(dp, opt.th, opt.flag_rule);
        flagged = uf.flagged;
        report["update_failure"] = update_failure_to_json(uf);
      }
      if (!opt.out_dir.empty()) {
        const std::string leaf = std::string("delta_p_") + model::write_mode_name(mode) + ".csv";
        std::ofstream os(out_path(leaf));
        if (!os) throw std::runtime_error("cannot write " + out_path(leaf));
        write_delta_p_csv(dp, os);
        report["files"][std::string("delta_p_") + model::write_mode_name(mode)] = leaf;
      }
    }
    report["md_per_mode"] = std::move(md_per_mode);
    report["probe"] = std::move(probe);
  });

  // Scenario transfer: forgetting scenario vs forgetting disabled.
  guarded("scenario", [&] {
    const auto stats = data::compute_question_stats(splits.train);
    nlohmann::json sec = nlohmann::json::object();
    for (model::WriteMode mode : {model::WriteMode::AddErase, model::WriteMode::AddOnly}) {
      const ScenarioTrace tr = scenario_simulation(params, stats, mode);
      sec[model::write_mode_name(mode)] = {{"final_avg_mastery", tr.avg_mastery.back()},
                                           {"avg_mastery", tr.avg_mastery}};
      if (!opt.out_dir.empty()) {
        const std::string leaf = std::string("scenario_") + model::write_mode_name(mode) + ".csv";
        std::ofstream os(out_path(leaf));
        if (!os) throw std::runtime_error("cannot write " + out_path(leaf));
        write_scenario_csv(tr, os);
        report["files"][std::string("scenario_") + model::write_mode_name(mode)] = leaf;
      }
    }
    report["scenario"] = std::move(sec);
  });

  // Concept vectors and the successor-similarity companion.
  guarded("concepts", [&] {
    if (!opt.out_dir.empty()) {
      export_concept_vectors_file(params, out_path("concept_vectors.csv"));
      report["files"]["concept_vectors"] = "concept_vectors.csv";
    }
    report["concept_mismatch"] =
        successor_similarity_report(params, splits.train, flagged, opt.successor_min_count);
  });

  report["section_errors"] = std::move(errors);
  return report;
}

}  // namespace dtkt::analysis
