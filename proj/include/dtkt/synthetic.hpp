// Item-response-theory student simulator. Each student owns per-concept
// abilities that grow with practice; responses are drawn from a
// guess/slip-wrapped logistic of ability minus difficulty. Ground-truth
// probabilities are recorded next to the sampled responses.
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dtkt/data.hpp"
#include "dtkt/rng.hpp"

namespace dtkt::data {

/// How the simulated curriculum orders questions. FixedPermutation gives
/// every student the same shuffled pass over all questions (cycled when steps
/// exceed the question count), which reproduces the benchmark's equal
/// per-question counts; UniformRandom draws each question independently.
enum class QuestionOrder { FixedPermutation, UniformRandom };

struct SyntheticConfig {
  std::size_t num_questions = 50;
  std::size_t num_concepts = 5;
  std::size_t students = 4000;
  std::size_t steps = 50;
  double ability_increment = 0.1;
  double guess = 0.0;
  double slip = 0.0;
  double discrimination = 1.0;
  QuestionOrder order = QuestionOrder::FixedPermutation;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_questions == 0 || num_concepts == 0 || students == 0 || steps == 0)
      throw std::invalid_argument("synthetic: sizes must be positive");
    if (num_concepts > num_questions)
      throw std::invalid_argument("synthetic: more concepts than questions");
    if (steps < 2) throw std::invalid_argument("synthetic: steps per student must be >= 2");
    if (guess < 0.0 || guess >= 1.0 || slip < 0.0 || slip >= 1.0)
      throw std::invalid_argument("synthetic: guess and slip must lie in [0, 1)");
    if (guess + slip >= 1.0)
      throw std::invalid_argument("synthetic: guess + slip must be < 1");
    if (!(discrimination > 0.0))
      throw std::invalid_argument("synthetic: discrimination must be > 0");
    if (ability_increment < 0.0)
      throw std::invalid_argument("synthetic: ability increment must be >= 0");
  }
};

struct TruthRow {
  std::size_t student;
  std::size_t t;  // 1-based step
  std::size_t question;
  int response;
  double p_correct;
};

struct SyntheticResult {
  Dataset dataset;
  std::vector<TruthRow> truth;
  std::vector<std::size_t> concept_of_question;  // shared across students
  std::vector<double> difficulty;                // beta per question
};

inline double irt_p_correct(double theta, double beta, const SyntheticConfig& c) {
  const double s = 1.0 / (1.0 + std::exp(-c.discrimination * (theta - beta)));
  return c.guess + (1.0 - c.guess - c.slip) * s;
}

inline SyntheticResult generate_synthetic(const SyntheticConfig& c) {
  c.validate();
  num::Rng rng(c.seed);

  SyntheticResult out;
  out.concept_of_question.resize(c.num_questions);
  out.difficulty.resize(c.num_questions);
  for (std::size_t q = 0; q < c.num_questions; ++q)
    out.concept_of_question[q] = static_cast<std::size_t>(rng.below(c.num_concepts));
  for (std::size_t q = 0; q < c.num_questions; ++q) out.difficulty[q] = rng.normal();

  // one curriculum shared by every student
  std::vector<std::size_t> curriculum(c.num_questions);
  for (std::size_t q = 0; q < c.num_questions; ++q) curriculum[q] = q;
  rng.shuffle(curriculum);

  out.dataset.num_questions = c.num_questions;
  out.dataset.name = "synthetic";
  out.dataset.sequences.reserve(c.students);
  out.truth.reserve(c.students * c.steps);

  for (std::size_t st = 0; st < c.students; ++st) {
    std::vector<double> theta(c.num_concepts);
    for (auto& a : theta) a = rng.normal();
    StudentSequence seq;
    seq.interactions.reserve(c.steps);
    for (std::size_t t = 0; t < c.steps; ++t) {
      const std::size_t q = c.order == QuestionOrder::FixedPermutation
                                ? curriculum[t % c.num_questions]
                                : static_cast<std::size_t>(rng.below(c.num_questions));
      const std::size_t cid = out.concept_of_question[q];
      const double p = irt_p_correct(theta[cid], out.difficulty[q], c);
      const int r = rng.bernoulli(p) ? 1 : 0;
      seq.interactions.push_back(Interaction{q, r});
      out.truth.push_back(TruthRow{st, t + 1, q, r, p});
      theta[cid] += c.ability_increment;  // practice helps regardless of outcome
    }
    out.dataset.sequences.push_back(std::move(seq));
  }
  return out;
}

/// CSV: student_id, t, question_id, response, true_p_correct. Question IDs
/// are 1-based on disk, matching the sequence file convention.
inline void write_truth_csv(const std::vector<TruthRow>& rows, std::ostream& os) {
  os << "student_id,t,question_id,response,true_p_correct\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.9g", r.p_correct);
    os << r.student << "," << r.t << "," << (r.question + 1) << "," << r.response << "," << buf
       << "\n";
  }
}

inline void write_truth_csv_file(const std::vector<TruthRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  write_truth_csv(rows, out);
}

}  // namespace dtkt::data
