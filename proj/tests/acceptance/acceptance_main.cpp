// Acceptance suite. Each criterion prints one PASS/FAIL line; the binary
// exits nonzero when any criterion fails. The model-quality criteria share
// three checkpoints trained once during setup on the regenerated synthetic
// dataset (4000 students, 50 questions, 200k interactions).
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dtkt/analysis.hpp"
#include "dtkt/cli.hpp"
#include "dtkt/metrics.hpp"
#include "dtkt/synthetic.hpp"
#include "dtkt/training.hpp"
#include "reference_model.hpp"

using namespace dtkt;
namespace fs = std::filesystem;
using clk = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(clk::time_point t0) {
  return std::chrono::duration<double>(clk::now() - t0).count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

double rel_err(double analytic, double numeric, double floor_ = 1e-2) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor_});
  return std::abs(analytic - numeric) / denom;
}

// ---------------------------------------------------------------------------
// Shared fixture: dataset, splits, and one checkpoint per alpha.
// ---------------------------------------------------------------------------

struct Fixture {
  fs::path dir;
  data::Dataset dataset;
  data::Splits splits;
  std::map<double, model::ModelParams> trained;
  std::map<double, double> test_auroc;
  double base_train_seconds = 0.0;
  std::size_t base_epochs_run = 0;

  static training::TrainConfig train_config(double alpha, std::size_t q) {
    training::TrainConfig cfg;
    cfg.model.num_questions = q;
    cfg.model.slots = 10;
    cfg.model.key_dim = 32;
    cfg.model.value_dim = 32;
    cfg.model.summary_dim = 32;
    cfg.alpha = alpha;
    cfg.epochs = 50;
    cfg.batch_size = 32;
    cfg.lr = 0.003;
    cfg.clip_norm = 50.0;
    cfg.seed = 7;
    cfg.patience = 5;
    return cfg;
  }

  void build() {
    dir = fs::temp_directory_path() / "dtkt_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);

    std::printf("[setup] regenerating the synthetic dataset (seed 1)\n");
    data::SyntheticConfig sc;  // defaults: Q=50, 5 concepts, 4000 students, 50 steps
    sc.seed = 1;
    dataset = data::generate_synthetic(sc).dataset;
    splits = data::split_dataset(dataset, {0.6, 0.2, 0.2}, 0);
    std::printf("[setup] %zu sequences, %zu interactions, splits %zu/%zu/%zu\n",
                dataset.sequences.size(), dataset.total_interactions(),
                splits.train.sequences.size(), splits.valid.sequences.size(),
                splits.test.sequences.size());

    for (const double alpha : {0.0, 0.0001, 0.001}) {
      const auto cfg = train_config(alpha, dataset.num_questions);
      const std::string path = (dir / ("model_" + std::to_string(alpha) + ".ckpt")).string();
      std::printf("[setup] training alpha=%g ...\n", alpha);
      std::fflush(stdout);
      const auto t0 = clk::now();
      const auto rep = training::train(splits.train, splits.valid, cfg, path);
      const double secs = seconds_since(t0);
      if (alpha == 0.0) {
        base_train_seconds = secs;
        base_epochs_run = rep.epochs.size();
      }
      trained.emplace(alpha, model::load_checkpoint(path).params);
      const auto preds =
          metrics::collect_predictions(trained.at(alpha), splits.test, model::WriteMode::AddErase);
      test_auroc[alpha] = *metrics::auroc(preds);
      std::printf("[setup] alpha=%g: %zu epochs (best %zu, valid %.4f), %.0fs, test AUROC %.4f\n",
                  alpha, rep.epochs.size(), rep.best_epoch, rep.best_valid_auroc, secs,
                  test_auroc[alpha]);
      std::fflush(stdout);
    }
  }
};

// ---------------------------------------------------------------------------
// Criterion 1: gradient correctness on a tiny model
// ---------------------------------------------------------------------------

Outcome criterion_gradients() {
  const auto t0 = clk::now();
  model::ModelConfig mc;
  mc.num_questions = 5;
  mc.slots = 4;
  mc.key_dim = 8;
  mc.value_dim = 8;
  mc.summary_dim = 8;
  num::Rng rng(13);
  const model::ModelParams params = model::init_params(mc, rng);
  data::StudentSequence seq;
  seq.interactions = {{0, 1}, {2, 1}, {4, 0}, {1, 1}, {3, 0}, {2, 1}};
  const double alpha = 0.001;

  num::Tape tape;
  const model::TapeEngine eng{tape};
  auto bound = model::bind(eng, params);
  const auto u = training::unroll_sequence(tape, bound, eng, seq, alpha);
  tape.backward(u.loss);
  num::GradMap analytic;
  model::for_each_param(params, [&](const char* name, const num::TensorF& t) {
    analytic.emplace(name, num::TensorD(t.shape()));
  });
  model::accumulate_param_grads(tape, bound, analytic);

  const auto frozen =
      testutil::capture_frozen(testutil::ref_params_from<float>(params), seq, alpha);
  auto refd = testutil::ref_params_from<double>(params);
  const double eps = 1e-3;
  double worst = 0.0;
  std::size_t entries = 0;
  std::size_t pi = 0;
  model::for_each_param(params, [&](const char* name, const num::TensorF&) {
    auto& vec = refd.data[pi++];
    const num::TensorD& g = analytic.at(name);
    for (std::size_t i = 0; i < vec.size(); ++i) {
      const double keep = vec[i];
      vec[i] = keep + eps;
      const double up = testutil::ref_sequence_loss(refd, seq, alpha, frozen);
      vec[i] = keep - eps;
      const double dn = testutil::ref_sequence_loss(refd, seq, alpha, frozen);
      vec[i] = keep;
      worst = std::max(worst, rel_err(g[i], (up - dn) / (2 * eps)));
      ++entries;
    }
  });
  const double secs = seconds_since(t0);
  const bool pass = worst <= 1e-4 && secs < 60.0;
  return {pass, fmt("worst relative error %.2e over %zu parameter entries (%.1fs)", worst,
                    entries, secs)};
}

// ---------------------------------------------------------------------------
// Criterion 2: loss oracles
// ---------------------------------------------------------------------------

Outcome criterion_loss_oracles() {
  const double ce = objective::ce_loss(num::TensorF::from_vec({0.5f}), 0, 1);
  const bool ce_ok = std::abs(ce - std::log(2.0)) <= 1e-9;

  const num::TensorF p_bar = num::TensorF::from_vec({0.9f, 0.6f});
  const num::TensorF p_next = num::TensorF::from_vec({0.3446f, 0.7f});
  const double cpl = objective::cpl_loss(p_bar, p_next, 0, 1);
  const bool cpl_ok = std::abs(cpl - 0.5554 * 0.5554) <= 1e-6;

  const bool gate_ok = objective::cpl_loss(p_bar, p_next, 0, 0) == 0.0;
  const num::TensorF raised = num::TensorF::from_vec({0.95f, 0.7f});
  const bool empty_ok = objective::cpl_loss(p_bar, raised, 0, 1) == 0.0;

  const bool pass = ce_ok && cpl_ok && gate_ok && empty_ok;
  return {pass, fmt("ce(0.5)=%.12f (ln2 err %.1e), cpl=%.9f (err vs 0.5554^2 %.1e), gates %s",
                    ce, std::abs(ce - std::log(2.0)), cpl, std::abs(cpl - 0.5554 * 0.5554),
                    gate_ok && empty_ok ? "ok" : "BROKEN")};
}

// ---------------------------------------------------------------------------
// Criterion 3: metric oracles
// ---------------------------------------------------------------------------

Outcome criterion_metric_oracles() {
  // brute-force pairwise AUROC comparison, ties included
  num::Rng rng(91);
  std::size_t sets = 0;
  bool auroc_ok = true;
  while (sets < 100) {
    const std::size_t n = 2 + rng.below(200);
    std::vector<metrics::PredictionRecord> rs;
    bool pos = false, neg = false;
    for (std::size_t i = 0; i < n; ++i) {
      const double p = static_cast<double>(rng.below(17)) / 16.0;
      const int label = rng.bernoulli(0.5) ? 1 : 0;
      pos |= label == 1;
      neg |= label == 0;
      rs.push_back({0, p, label});
    }
    if (!pos || !neg) continue;
    ++sets;
    double num = 0.0;
    std::size_t pairs = 0;
    for (const auto& a : rs) {
      if (a.label != 1) continue;
      for (const auto& b : rs) {
        if (b.label != 0) continue;
        ++pairs;
        num += a.prob > b.prob ? 1.0 : (a.prob == b.prob ? 0.5 : 0.0);
      }
    }
    const double brute = num / static_cast<double>(pairs);
    auroc_ok = auroc_ok && *metrics::auroc(rs) == brute;
  }

  // md on the crafted 2x2 matrix
  metrics::DeltaPStats dp;
  dp.q = 2;
  dp.sum = num::TensorD(num::Shape{2, 2}, {-0.2, 0.1, 0.3, -0.1});
  dp.row_events = {1, 1};
  dp.diag_events = {{-0.2}, {-0.1}};
  const double md = metrics::md(dp);
  const bool md_ok = md == (0.2 + 0.1) / 2.0 && std::abs(md - 0.15) <= 1e-12;

  // update-failure statistics on the crafted diagonal set
  metrics::DeltaPStats dg;
  dg.q = 3;
  dg.sum = num::TensorD(num::Shape{3, 3});
  dg.row_events = {1, 1, 1};
  dg.diag_events = {{-0.2}, {-0.002}, {0.1}};
  dg.sum.at(0, 0) = -0.2;
  dg.sum.at(1, 1) = -0.002;
  dg.sum.at(2, 2) = 0.1;
  const auto uf = metrics::update_failure_stats(dg, 0.001);
  const bool uf_ok = std::abs(uf.ratio_pct - 200.0 / 3.0) <= 1e-9 &&
                     uf.avg_abs == (0.2 + 0.002) / 2.0 && uf.max_abs == 0.2;

  const bool pass = auroc_ok && md_ok && uf_ok;
  return {pass, fmt("auroc brute-force x100 %s, md=%.17g, uf ratio=%.4f%% avg=%.4f max=%.4f",
                    auroc_ok ? "exact" : "MISMATCH", md, uf.ratio_pct, uf.avg_abs, uf.max_abs)};
}

// ---------------------------------------------------------------------------
// Criteria 4-8: trained-model behaviour
// ---------------------------------------------------------------------------

Outcome criterion_base_training(const Fixture& fx) {
  const bool pass = fx.test_auroc.at(0.0) >= 0.70 && fx.base_train_seconds < 1800.0 &&
                    fx.base_epochs_run <= 50;
  return {pass, fmt("test AUROC %.4f (floor 0.70), %zu epochs, %.0fs (cap 1800s)",
                    fx.test_auroc.at(0.0), fx.base_epochs_run, fx.base_train_seconds)};
}

Outcome criterion_auroc_preserved(const Fixture& fx) {
  const double base = fx.test_auroc.at(0.0);
  const double reg = fx.test_auroc.at(0.001);
  return {reg >= base - 0.01,
          fmt("AUROC alpha=0.001: %.4f vs base %.4f (allowed drop 0.01)", reg, base)};
}

Outcome criterion_update_failure(const Fixture& fx) {
  const auto dp0 = metrics::delta_p_matrix(fx.trained.at(0.0), fx.splits.test,
                                           model::WriteMode::AddErase);
  const auto uf0 = metrics::update_failure_stats(dp0, 0.001);
  const auto dp1 = metrics::delta_p_matrix(fx.trained.at(0.0001), fx.splits.test,
                                           model::WriteMode::AddErase);
  const auto uf1 = metrics::update_failure_stats(dp1, 0.001);
  const bool pass = uf0.ratio_pct > 0.0 && uf1.ratio_pct <= 1.0;
  return {pass, fmt("base ratio %.1f%% (avg %.4f, max %.4f) -> alpha=1e-4 ratio %.1f%%",
                    uf0.ratio_pct, uf0.avg_abs, uf0.max_abs, uf1.ratio_pct)};
}

Outcome criterion_md_monotone(const Fixture& fx) {
  std::map<double, double> mds;
  for (const double alpha : {0.0, 0.0001, 0.001}) {
    const auto dp = metrics::delta_p_matrix(fx.trained.at(alpha), fx.splits.test,
                                            model::WriteMode::AddErase);
    mds[alpha] = metrics::md(dp);
  }
  const bool pass = mds[0.0] >= mds[0.0001] && mds[0.0001] >= mds[0.001] &&
                    mds[0.001] < mds[0.0];
  return {pass, fmt("md: %.5f (0) >= %.5f (1e-4) >= %.5f (1e-3), strict drop %s", mds[0.0],
                    mds[0.0001], mds[0.001], mds[0.001] < mds[0.0] ? "yes" : "NO")};
}

Outcome criterion_scenario(const Fixture& fx) {
  const auto stats = data::compute_question_stats(fx.splits.train);
  const auto base = analysis::scenario_simulation(fx.trained.at(0.0), stats,
                                                  model::WriteMode::AddOnly);
  const auto reg = analysis::scenario_simulation(fx.trained.at(0.001), stats,
                                                 model::WriteMode::AddOnly);
  double worst_drop = 0.0;
  for (std::size_t i = 1; i < reg.avg_mastery.size(); ++i)
    worst_drop = std::max(worst_drop, reg.avg_mastery[i - 1] - reg.avg_mastery[i]);
  const bool pass = reg.avg_mastery.back() > base.avg_mastery.back() && worst_drop <= 0.02;
  return {pass, fmt("add-only final mastery: alpha=1e-3 %.4f vs base %.4f; worst step drop %.4f "
                    "(cap 0.02)",
                    reg.avg_mastery.back(), base.avg_mastery.back(), worst_drop)};
}

// ---------------------------------------------------------------------------
// Criterion 9: command determinism
// ---------------------------------------------------------------------------

int quiet_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("dtkt");
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream sink;
  auto* old = std::cout.rdbuf(sink.rdbuf());
  const int rc = cli::run(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old);
  return rc;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) return "<missing:" + p.string() + ">";
  return std::string(std::istreambuf_iterator<char>(is), {});
}

Outcome criterion_determinism(const Fixture& fx) {
  const fs::path dir = fx.dir / "determinism";
  fs::create_directories(dir);

  // a small dataset keeps the doubled train runs quick
  if (quiet_cli({"generate", "--questions", "20", "--concepts", "4", "--students", "300",
                 "--steps", "20", "--seed", "5", "--out", (dir / "gen").string()}) != 0)
    return {false, "generate failed"};
  const std::string dataset = (dir / "gen" / "synthetic.txt").string();

  const std::vector<std::string> train_flags{
      "train", "--data", dataset, "--alpha", "0.001", "--seed", "5", "--epochs", "4",
      "--batch", "32",   "--slots", "6",     "--key-dim", "16", "--value-dim", "16",
      "--summary-dim", "16"};
  for (const char* leaf : {"t1", "t2"}) {
    auto args = train_flags;
    args.push_back("--out");
    args.push_back((dir / leaf).string());
    if (quiet_cli(args) != 0) return {false, "train failed"};
  }
  const bool train_ok =
      slurp(dir / "t1" / "train_report.json") == slurp(dir / "t2" / "train_report.json") &&
      slurp(dir / "t1" / "model.ckpt") == slurp(dir / "t2" / "model.ckpt");

  const std::string ckpt = (dir / "t1" / "model.ckpt").string();
  for (const char* leaf : {"a1", "a2"}) {
    if (quiet_cli({"audit", "--checkpoint", ckpt, "--data", dataset, "--th", "0.001", "--split",
                   "test", "--out", (dir / leaf).string()}) != 0)
      return {false, "audit failed"};
  }
  bool audit_ok = true;
  for (const char* leaf :
       {"audit.json", "delta_p_add_erase.csv", "delta_p_add_only.csv", "delta_p_erase_only.csv",
        "concept_vectors.csv", "scenario_add_erase.csv", "scenario_add_only.csv"})
    audit_ok = audit_ok && slurp(dir / "a1" / leaf) == slurp(dir / "a2" / leaf);

  return {train_ok && audit_ok, fmt("train outputs %s, audit outputs %s",
                                    train_ok ? "bit-identical" : "DIFFER",
                                    audit_ok ? "bit-identical" : "DIFFER")};
}

// ---------------------------------------------------------------------------
// Criterion 10: delta_p straight-line oracle
// ---------------------------------------------------------------------------

Outcome criterion_delta_p_oracle() {
  model::ModelConfig mc;
  mc.num_questions = 4;
  mc.slots = 3;
  mc.key_dim = 6;
  mc.value_dim = 6;
  mc.summary_dim = 5;
  num::Rng rng(29);
  const model::ModelParams params = model::init_params(mc, rng);

  data::Dataset ds;
  ds.num_questions = 4;
  ds.sequences.push_back({{{2, 1}, {0, 1}, {3, 0}}});
  const auto dp = metrics::delta_p_matrix(params, ds, model::WriteMode::AddErase, 1);

  // independent straight-line recomputation (fresh forward passes)
  const auto ref = testutil::ref_params_from<float>(params);
  std::vector<float> state = ref.data[testutil::kInitValueMemory];
  std::vector<float> before = testutil::ref_predict_all(ref, state);
  num::TensorD expect(num::Shape{4, 4});
  std::vector<std::size_t> events(4, 0);
  for (const auto& x : ds.sequences[0].interactions) {
    state = testutil::ref_write(ref, state, x.question, x.response, model::WriteMode::AddErase);
    const std::vector<float> after = testutil::ref_predict_all(ref, state);
    if (x.response == 1) {
      for (std::size_t j = 0; j < 4; ++j)
        expect.at(x.question, j) += static_cast<double>(after[j]) - static_cast<double>(before[j]);
      ++events[x.question];
    }
    before = after;
  }

  bool same = dp.row_events == events;
  for (std::size_t i = 0; i < 4 && same; ++i)
    for (std::size_t j = 0; j < 4; ++j) same = same && dp.sum.at(i, j) == expect.at(i, j);
  return {same, same ? "matrix identical to the straight-line recomputation (float32-exact)"
                     : "MISMATCH against the straight-line recomputation"};
}

}  // namespace

int main() {
  std::vector<std::pair<std::string, std::function<Outcome()>>> criteria;
  Fixture fx;

  criteria.emplace_back("1 gradient correctness (tiny model, alpha=0.001, fd 1e-3, rel 1e-4)",
                        criterion_gradients);
  criteria.emplace_back("2 loss oracles (ln 2, squared-drop example, gates)",
                        criterion_loss_oracles);
  criteria.emplace_back("3 metric oracles (auroc brute force, md 0.15, crafted failure stats)",
                        criterion_metric_oracles);
  criteria.emplace_back("4 base training floor (test AUROC >= 0.70 within 50 epochs, < 30 min)",
                        [&] { return criterion_base_training(fx); });
  criteria.emplace_back("5 predictive performance preserved (alpha=0.001 within 0.01)",
                        [&] { return criterion_auroc_preserved(fx); });
  criteria.emplace_back("6 update-failure regularization (base > 0%, alpha=1e-4 <= 1%)",
                        [&] { return criterion_update_failure(fx); });
  criteria.emplace_back("7 md monotonicity across alphas", [&] { return criterion_md_monotone(fx); });
  criteria.emplace_back("8 add-only scenario ordering and stability",
                        [&] { return criterion_scenario(fx); });
  criteria.emplace_back("9 determinism of repeated train/audit commands",
                        [&] { return criterion_determinism(fx); });
  criteria.emplace_back("10 delta_p straight-line oracle (float32-exact)",
                        criterion_delta_p_oracle);

  fx.build();

  std::size_t passed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    passed += o.pass;
    std::printf("criterion %s: %s — %s\n", name.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("ACCEPTANCE: %zu/%zu criteria passed\n", passed, criteria.size());
  return passed == criteria.size() ? 0 : 1;
}
