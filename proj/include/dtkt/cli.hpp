// Command-line front end. Kept in a header as a library function so tests can
// drive it in-process; the binary under tools/ is a thin wrapper.
//
// Exit codes: 0 success, 1 usage error (bad flags, missing files), 2 runtime
// failure. Every run echoes its resolved configuration as JSON on stdout, and
// all file outputs land under --out.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dtkt/analysis.hpp"
#include "dtkt/checkpoint.hpp"
#include "dtkt/data.hpp"
#include "dtkt/metrics.hpp"
#include "dtkt/model.hpp"
#include "dtkt/synthetic.hpp"
#include "dtkt/training.hpp"

namespace dtkt::cli {

namespace fs = std::filesystem;

/// Input validation problems map to exit code 1; they always name the flag.
class usage_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require_input_file(const std::string& flag, const std::string& path) {
  if (!fs::exists(path)) throw usage_error(flag + ": file not found: " + path);
}

inline void ensure_out_dir(const std::string& out) {
  if (out.empty()) throw usage_error("--out: output directory required");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw usage_error("--out: cannot create directory " + out + ": " + ec.message());
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << text;
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

struct SplitFlags {
  double train_frac = 0.6, valid_frac = 0.2, test_frac = 0.2;
  std::uint64_t split_seed = 0;

  data::SplitFractions fractions() const { return {train_frac, valid_frac, test_frac}; }

  void attach(CLI::App* cmd) {
    cmd->add_option("--train-frac", train_frac, "Training fraction of students");
    cmd->add_option("--valid-frac", valid_frac, "Validation fraction of students");
    cmd->add_option("--test-frac", test_frac, "Test fraction of students");
    cmd->add_option("--split-seed", split_seed, "Seed for the student split");
  }

  nlohmann::json echo() const {
    return {{"train_frac", train_frac},
            {"valid_frac", valid_frac},
            {"test_frac", test_frac},
            {"split_seed", split_seed}};
  }
};

inline const data::Dataset& pick_split(const data::Splits& s, const data::Dataset& all,
                                       const std::string& split) {
  if (split == "train") return s.train;
  if (split == "valid") return s.valid;
  if (split == "test") return s.test;
  if (split == "all") return all;
  throw usage_error("--split: expected train|valid|test|all, got " + split);
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv) {
  CLI::App app{"dtkt: key-value memory knowledge tracing with drop-regularized training"};
  app.require_subcommand(1);

  // generate ---------------------------------------------------------------
  auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset");
  std::string gen_preset = "synthetic5";
  data::SyntheticConfig gen_cfg;
  std::string gen_out;
  gen->add_option("--preset", gen_preset, "Named preset (synthetic5)");
  gen->add_option("--questions", gen_cfg.num_questions, "Question count");
  gen->add_option("--concepts", gen_cfg.num_concepts, "Concept count");
  gen->add_option("--students", gen_cfg.students, "Student count");
  gen->add_option("--steps", gen_cfg.steps, "Interactions per student");
  gen->add_option("--increment", gen_cfg.ability_increment, "Ability gained per practice");
  gen->add_option("--guess", gen_cfg.guess, "Guess probability");
  gen->add_option("--slip", gen_cfg.slip, "Slip probability");
  gen->add_option("--discrimination", gen_cfg.discrimination, "IRT discrimination");
  std::string gen_order = "fixed";
  gen->add_option("--order", gen_order,
                  "Question order: fixed (shared shuffled pass) or uniform (random draws)");
  gen->add_option("--seed", gen_cfg.seed, "Generator seed");
  gen->add_option("--out", gen_out, "Output directory")->required();

  // train ------------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "Train a model");
  std::string tr_data, tr_out, tr_sweep;
  training::TrainConfig tr_cfg;
  detail::SplitFlags tr_split;
  std::size_t tr_max_len = 200;
  std::optional<std::size_t> tr_questions;
  bool tr_no_cpl = false;
  tr->add_option("--data", tr_data, "Sequence file")->required();
  tr->add_option("--alpha", tr_cfg.alpha, "Drop-penalty weight");
  tr->add_option("--alpha-sweep", tr_sweep, "Comma-separated alphas; one run per value")
      ->excludes("--alpha");
  tr->add_option("--seed", tr_cfg.seed, "Training seed");
  tr->add_option("--epochs", tr_cfg.epochs, "Epoch budget");
  tr->add_option("--batch", tr_cfg.batch_size, "Sequences per optimizer step");
  tr->add_option("--lr", tr_cfg.lr, "Adam learning rate");
  tr->add_option("--clip", tr_cfg.clip_norm, "Global gradient-norm clip");
  tr->add_option("--patience", tr_cfg.patience, "Early-stop patience (epochs)");
  tr->add_option("--slots", tr_cfg.model.slots, "Memory slots");
  tr->add_option("--key-dim", tr_cfg.model.key_dim, "Key dimension");
  tr->add_option("--value-dim", tr_cfg.model.value_dim, "Value dimension");
  tr->add_option("--summary-dim", tr_cfg.model.summary_dim, "Summary dimension");
  tr->add_option("--max-len", tr_max_len, "Segment length cap when parsing");
  tr->add_option("--questions", tr_questions, "Override inferred question count");
  tr->add_flag("--no-cpl", tr_no_cpl, "Disable the drop-penalty code path entirely");
  bool tr_live_pbar = false;
  tr->add_flag("--no-detach-pseudo-label", tr_live_pbar,
               "Ablation: let gradient flow into the pseudo-label");
  tr_split.attach(tr);
  tr->add_option("--out", tr_out, "Output directory")->required();

  // evaluate -----------------------------------------------------------------
  auto* ev = app.add_subcommand("evaluate", "AUROC summary for a checkpoint");
  std::string ev_ckpt, ev_data, ev_split = "test", ev_out;
  std::size_t ev_max_len = 200;
  detail::SplitFlags ev_splitf;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--data", ev_data, "Sequence file")->required();
  ev->add_option("--split", ev_split, "train|valid|test|all");
  ev->add_option("--max-len", ev_max_len, "Segment length cap when parsing");
  ev_splitf.attach(ev);
  ev->add_option("--out", ev_out, "Output directory (JSON printed to stdout when omitted)");

  // audit --------------------------------------------------------------------
  auto* au = app.add_subcommand("audit", "Full diagnostic bundle for a checkpoint");
  std::string au_ckpt, au_data, au_out, au_rule = "event_mean", au_split = "test";
  double au_th = 0.001;
  std::size_t au_min_succ = 15, au_max_len = 200;
  std::optional<double> au_alpha;
  detail::SplitFlags au_splitf;
  au->add_option("--checkpoint", au_ckpt, "Checkpoint file")->required();
  au->add_option("--data", au_data, "Sequence file")->required();
  au->add_option("--th", au_th, "Update-failure threshold");
  au->add_option("--flag-rule", au_rule, "event_mean|any_event");
  au->add_option("--split", au_split, "train|valid|test|all");
  au->add_option("--max-len", au_max_len, "Segment length cap when parsing");
  au->add_option("--min-successor-count", au_min_succ,
                 "Drop successors seen fewer times in the concept-mismatch report");
  au->add_option("--alpha", au_alpha, "Training alpha, echoed into the report");
  au_splitf.attach(au);
  au->add_option("--out", au_out, "Output directory")->required();

  // simulate -------------------------------------------------------------------
  auto* si = app.add_subcommand("simulate", "Scenario traces under add+erase and add-only");
  std::string si_ckpt, si_data, si_out;
  std::size_t si_max_len = 200;
  detail::SplitFlags si_splitf;
  si->add_option("--checkpoint", si_ckpt, "Checkpoint file")->required();
  si->add_option("--data", si_data, "Sequence file (difficulty from its train split)")->required();
  si->add_option("--max-len", si_max_len, "Segment length cap when parsing");
  si_splitf.attach(si);
  si->add_option("--out", si_out, "Output directory")->required();

  // export-concepts -------------------------------------------------------------
  auto* ex = app.add_subcommand("export-concepts", "Concept-vector CSV for a checkpoint");
  std::string ex_ckpt, ex_out;
  ex->add_option("--checkpoint", ex_ckpt, "Checkpoint file")->required();
  ex->add_option("--out", ex_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      if (gen_preset != "synthetic5")
        throw usage_error("--preset: unknown preset " + gen_preset);
      if (gen_order == "fixed")
        gen_cfg.order = data::QuestionOrder::FixedPermutation;
      else if (gen_order == "uniform")
        gen_cfg.order = data::QuestionOrder::UniformRandom;
      else
        throw usage_error("--order: expected fixed|uniform, got " + gen_order);
      try {
        gen_cfg.validate();
      } catch (const std::invalid_argument& e) {
        throw usage_error(std::string("generate flags invalid: ") + e.what());
      }
      detail::ensure_out_dir(gen_out);
      nlohmann::json echo = {{"command", "generate"},
                             {"preset", gen_preset},
                             {"questions", gen_cfg.num_questions},
                             {"concepts", gen_cfg.num_concepts},
                             {"students", gen_cfg.students},
                             {"steps", gen_cfg.steps},
                             {"increment", gen_cfg.ability_increment},
                             {"guess", gen_cfg.guess},
                             {"slip", gen_cfg.slip},
                             {"discrimination", gen_cfg.discrimination},
                             {"order", gen_order},
                             {"seed", gen_cfg.seed},
                             {"out", gen_out}};
      std::cout << echo.dump(2) << "\n";
      const auto result = data::generate_synthetic(gen_cfg);
      data::write_sequence_file(result.dataset, gen_out + "/synthetic.txt");
      data::write_truth_csv_file(result.truth, gen_out + "/synthetic_truth.csv");
      std::cout << "sequences: " << result.dataset.sequences.size()
                << "\ninteractions: " << result.dataset.total_interactions() << "\n";
      return 0;
    }

    if (tr->parsed()) {
      detail::require_input_file("--data", tr_data);
      if (tr_cfg.alpha < 0.0) throw usage_error("--alpha: must be >= 0");
      if (!(tr_cfg.lr > 0.0)) throw usage_error("--lr: must be > 0");
      if (!(tr_cfg.clip_norm > 0.0)) throw usage_error("--clip: must be > 0");
      if (tr_cfg.epochs == 0) throw usage_error("--epochs: must be >= 1");
      if (tr_cfg.batch_size == 0) throw usage_error("--batch: must be >= 1");
      detail::ensure_out_dir(tr_out);
      tr_cfg.cpl_enabled = !tr_no_cpl;
      tr_cfg.detach_pseudo_label = !tr_live_pbar;

      data::ParseOptions popt;
      popt.max_len = tr_max_len;
      popt.num_questions = tr_questions;
      const data::Dataset ds = data::parse_sequence_file(tr_data, popt);
      tr_cfg.model.num_questions = ds.num_questions;
      const data::Splits splits = data::split_dataset(ds, tr_split.fractions(), tr_split.split_seed);

      std::vector<std::string> alpha_tokens;
      if (!tr_sweep.empty()) {
        alpha_tokens = detail::split_list(tr_sweep);
        if (alpha_tokens.empty()) throw usage_error("--alpha-sweep: no values given");
      }

      auto run_one = [&](double alpha, const std::string& dir) {
        training::TrainConfig cfg = tr_cfg;
        cfg.alpha = alpha;
        cfg.validate();
        detail::ensure_out_dir(dir);
        nlohmann::json echo = {{"command", "train"},
                               {"data", tr_data},
                               {"alpha", cfg.alpha},
                               {"cpl_enabled", cfg.cpl_enabled},
                               {"detach_pseudo_label", cfg.detach_pseudo_label},
                               {"seed", cfg.seed},
                               {"epochs", cfg.epochs},
                               {"batch", cfg.batch_size},
                               {"lr", cfg.lr},
                               {"clip", cfg.clip_norm},
                               {"patience", cfg.patience},
                               {"max_len", tr_max_len},
                               {"model",
                                {{"num_questions", cfg.model.num_questions},
                                 {"slots", cfg.model.slots},
                                 {"key_dim", cfg.model.key_dim},
                                 {"value_dim", cfg.model.value_dim},
                                 {"summary_dim", cfg.model.summary_dim}}},
                               {"split", tr_split.echo()}};
        std::cout << echo.dump(2) << "\nout: " << dir << "\n";
        const std::string ckpt_path = dir + "/model.ckpt";
        training::TrainReport rep = training::train(splits.train, splits.valid, cfg, ckpt_path);
        nlohmann::json report = {{"config", echo},
                                 {"best_epoch", rep.best_epoch},
                                 {"best_valid_auroc", rep.best_valid_auroc},
                                 {"checkpoint", "model.ckpt"}};
        report["epochs"] = nlohmann::json::array();
        for (std::size_t i = 0; i < rep.epochs.size(); ++i) {
          report["epochs"].push_back({{"epoch", i + 1},
                                      {"train_loss", rep.epochs[i].train_loss},
                                      {"valid_auroc", rep.epochs[i].valid_auroc}});
          std::cout << "epoch " << (i + 1) << " train_loss " << rep.epochs[i].train_loss
                    << " valid_auroc " << rep.epochs[i].valid_auroc << "\n";
        }
        detail::write_text(dir + "/train_report.json", report.dump(2) + "\n");
        std::cout << "best epoch " << rep.best_epoch << " (valid AUROC " << rep.best_valid_auroc
                  << "), checkpoint " << ckpt_path << "\n";
      };

      if (alpha_tokens.empty()) {
        run_one(tr_cfg.alpha, tr_out);
      } else {
        for (const std::string& tok : alpha_tokens) {
          double alpha = 0.0;
          try {
            alpha = std::stod(tok);
          } catch (const std::exception&) {
            throw usage_error("--alpha-sweep: not a number: " + tok);
          }
          run_one(alpha, tr_out + "/alpha_" + tok);
        }
      }
      return 0;
    }

    if (ev->parsed()) {
      detail::require_input_file("--checkpoint", ev_ckpt);
      detail::require_input_file("--data", ev_data);
      const model::Checkpoint ckpt = model::load_checkpoint(ev_ckpt);
      data::ParseOptions popt;
      popt.max_len = ev_max_len;
      popt.num_questions = ckpt.params.config.num_questions;
      const data::Dataset ds = data::parse_sequence_file(ev_data, popt);
      const data::Splits splits = data::split_dataset(ds, ev_splitf.fractions(), ev_splitf.split_seed);
      const data::Dataset& eval_ds = detail::pick_split(splits, ds, ev_split);

      nlohmann::json echo = {{"command", "evaluate"}, {"checkpoint", ev_ckpt},
                             {"data", ev_data},       {"split", ev_split},
                             {"max_len", ev_max_len}, {"split_params", ev_splitf.echo()}};
      std::cout << echo.dump(2) << "\n";

      const auto preds = metrics::collect_predictions(ckpt.params, eval_ds, ckpt.mode);
      const auto global = metrics::auroc(preds);
      const auto per_q = metrics::per_question_auroc(preds);
      nlohmann::json out = {{"config", echo},
                            {"records", preds.size()},
                            {"global_auroc", global ? nlohmann::json(*global) : nlohmann::json()}};
      nlohmann::json pq = nlohmann::json::object();
      for (const auto& [q, a] : per_q) pq[std::to_string(q)] = a;
      out["per_question_auroc"] = std::move(pq);
      const auto stats = data::compute_question_stats(eval_ds);
      const auto groups = metrics::count_group_summary(per_q, stats);
      out["count_groups"] = {{"k", groups.k},
                             {"k_shrunk", groups.k_shrunk},
                             {"top_mean_auroc", groups.top_mean_auroc},
                             {"bottom_mean_auroc", groups.bottom_mean_auroc},
                             {"top_share_pct", groups.top_share_pct},
                             {"bottom_share_pct", groups.bottom_share_pct}};
      const std::string text = out.dump(2) + "\n";
      if (ev_out.empty()) {
        std::cout << text;
      } else {
        detail::ensure_out_dir(ev_out);
        detail::write_text(ev_out + "/evaluation.json", text);
        std::cout << "wrote " << ev_out << "/evaluation.json\n";
      }
      return 0;
    }

    if (au->parsed()) {
      detail::require_input_file("--checkpoint", au_ckpt);
      detail::require_input_file("--data", au_data);
      if (au_rule != "event_mean" && au_rule != "any_event")
        throw usage_error("--flag-rule: expected event_mean|any_event, got " + au_rule);
      if (au_split != "train" && au_split != "valid" && au_split != "test" && au_split != "all")
        throw usage_error("--split: expected train|valid|test|all, got " + au_split);
      if (au_th < 0.0) throw usage_error("--th: must be >= 0");
      detail::ensure_out_dir(au_out);
      const model::Checkpoint ckpt = model::load_checkpoint(au_ckpt);
      data::ParseOptions popt;
      popt.max_len = au_max_len;
      popt.num_questions = ckpt.params.config.num_questions;
      const data::Dataset ds = data::parse_sequence_file(au_data, popt);

      analysis::AuditOptions opt;
      opt.th = au_th;
      opt.flag_rule = metrics::flag_rule_from_name(au_rule);
      opt.split = au_split;
      opt.fractions = au_splitf.fractions();
      opt.split_seed = au_splitf.split_seed;
      opt.successor_min_count = au_min_succ;
      opt.alpha = au_alpha;
      opt.out_dir = au_out;

      nlohmann::json echo = {{"command", "audit"},
                             {"checkpoint", au_ckpt},
                             {"data", au_data},
                             {"th", au_th},
                             {"flag_rule", au_rule},
                             {"split", au_split},
                             {"max_len", au_max_len},
                             {"min_successor_count", au_min_succ},
                             {"split_params", au_splitf.echo()},
                             {"out", au_out}};
      std::cout << echo.dump(2) << "\n";

      const nlohmann::json report = analysis::full_audit(ckpt, ds, opt);
      detail::write_text(au_out + "/audit.json", report.dump(2) + "\n");
      std::cout << "wrote " << au_out << "/audit.json\n";
      if (!report["section_errors"].empty()) {
        std::cout << "sections with errors: " << report["section_errors"].dump() << "\n";
        return 2;
      }
      return 0;
    }

    if (si->parsed()) {
      detail::require_input_file("--checkpoint", si_ckpt);
      detail::require_input_file("--data", si_data);
      detail::ensure_out_dir(si_out);
      const model::Checkpoint ckpt = model::load_checkpoint(si_ckpt);
      data::ParseOptions popt;
      popt.max_len = si_max_len;
      popt.num_questions = ckpt.params.config.num_questions;
      const data::Dataset ds = data::parse_sequence_file(si_data, popt);
      const data::Splits splits = data::split_dataset(ds, si_splitf.fractions(), si_splitf.split_seed);
      const auto stats = data::compute_question_stats(splits.train);

      nlohmann::json echo = {{"command", "simulate"},
                             {"checkpoint", si_ckpt},
                             {"data", si_data},
                             {"max_len", si_max_len},
                             {"split_params", si_splitf.echo()},
                             {"out", si_out}};
      std::cout << echo.dump(2) << "\n";

      for (model::WriteMode mode : {model::WriteMode::AddErase, model::WriteMode::AddOnly}) {
        const analysis::ScenarioTrace tr2 = analysis::scenario_simulation(ckpt.params, stats, mode);
        const std::string leaf =
            std::string("scenario_") + model::write_mode_name(mode) + ".csv";
        std::ofstream os(si_out + "/" + leaf);
        if (!os) throw std::runtime_error("cannot write " + si_out + "/" + leaf);
        analysis::write_scenario_csv(tr2, os);
        std::cout << "wrote " << si_out << "/" << leaf << " (final avg mastery "
                  << tr2.avg_mastery.back() << ")\n";
      }
      return 0;
    }

    if (ex->parsed()) {
      detail::require_input_file("--checkpoint", ex_ckpt);
      detail::ensure_out_dir(ex_out);
      const model::Checkpoint ckpt = model::load_checkpoint(ex_ckpt);
      nlohmann::json echo = {{"command", "export-concepts"}, {"checkpoint", ex_ckpt}, {"out", ex_out}};
      std::cout << echo.dump(2) << "\n";
      analysis::export_concept_vectors_file(ckpt.params, ex_out + "/concept_vectors.csv");
      std::cout << "wrote " << ex_out << "/concept_vectors.csv\n";
      return 0;
    }

    return 1;  // unreachable with require_subcommand(1)
  } catch (const usage_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace dtkt::cli
