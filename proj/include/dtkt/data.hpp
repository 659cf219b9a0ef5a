// Interaction sequences: the three-line text format used by the public
// benchmark dumps, whole-student splitting, and per-question statistics.
//
// On-disk question IDs are 1-based; everything in memory is 0-based.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dtkt/rng.hpp"

namespace dtkt::data {

struct Interaction {
  std::size_t question = 0;  // in [0, Q)
  int response = 0;          // {0, 1}
};

inline bool operator==(const Interaction& a, const Interaction& b) {
  return a.question == b.question && a.response == b.response;
}

struct StudentSequence {
  std::vector<Interaction> interactions;
  std::size_t length() const { return interactions.size(); }
};

inline bool operator==(const StudentSequence& a, const StudentSequence& b) {
  return a.interactions == b.interactions;
}

struct Dataset {
  std::size_t num_questions = 0;
  std::vector<StudentSequence> sequences;
  std::string name;

  std::size_t total_interactions() const {
    std::size_t n = 0;
    for (const auto& s : sequences) n += s.length();
    return n;
  }
};

struct ParseOptions {
  std::size_t max_len = 200;                 // longer sequences split into segments
  std::optional<std::size_t> num_questions;  // override inferred Q
};

class parse_error : public std::runtime_error {
 public:
  parse_error(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

namespace detail {

inline std::string strip(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return s.substr(b, e - b);
}

inline std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(strip(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(strip(cur));
  return out;
}

inline long long to_int(const std::string& tok, std::size_t line, const char* what) {
  if (tok.empty()) throw parse_error(line, std::string("empty ") + what + " token");
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(tok, &pos);
  } catch (const std::exception&) {
    throw parse_error(line, std::string("non-integer ") + what + " token '" + tok + "'");
  }
  if (pos != tok.size())
    throw parse_error(line, std::string("non-integer ") + what + " token '" + tok + "'");
  return v;
}

}  // namespace detail

/// Parses the triplet text format: for each student, line 1 holds T, line 2
/// the T comma-separated 1-based question IDs, line 3 the T responses.
/// Sequences shorter than two steps are dropped; longer than max_len are cut
/// into consecutive segments.
inline Dataset parse_sequences(std::istream& in, const ParseOptions& opt = {},
                               const std::string& name = "") {
  Dataset ds;
  ds.name = name;
  std::size_t max_id = 0;  // host largest 1-based id seen
  std::string line;
  std::size_t lineno = 0;

  auto next_content_line = [&](std::string& out) -> bool {
    while (std::getline(in, line)) {
      ++lineno;
      out = detail::strip(line);
      if (!out.empty()) return true;
    }
    return false;
  };

  std::string l1, l2, l3;
  while (next_content_line(l1)) {
    const std::size_t count_line = lineno;
    const long long t = detail::to_int(l1, count_line, "length");
    if (t < 1) throw parse_error(count_line, "sequence length must be >= 1, got " + l1);
    if (!next_content_line(l2)) throw parse_error(lineno + 1, "missing question line");
    const std::size_t q_line = lineno;
    if (!next_content_line(l3)) throw parse_error(lineno + 1, "missing response line");
    const std::size_t r_line = lineno;

    const auto q_toks = detail::split_csv(l2);
    const auto r_toks = detail::split_csv(l3);
    if (q_toks.size() != static_cast<std::size_t>(t))
      throw parse_error(q_line, "expected " + std::to_string(t) + " question IDs, found " +
                                    std::to_string(q_toks.size()));
    if (r_toks.size() != static_cast<std::size_t>(t))
      throw parse_error(r_line, "expected " + std::to_string(t) + " responses, found " +
                                    std::to_string(r_toks.size()));

    std::vector<Interaction> xs;
    xs.reserve(q_toks.size());
    for (std::size_t i = 0; i < q_toks.size(); ++i) {
      const long long qid = detail::to_int(q_toks[i], q_line, "question ID");
      if (qid < 1) throw parse_error(q_line, "question ID must be >= 1, got " + q_toks[i]);
      const long long r = detail::to_int(r_toks[i], r_line, "response");
      if (r != 0 && r != 1) throw parse_error(r_line, "response must be 0 or 1, got " + r_toks[i]);
      max_id = std::max(max_id, static_cast<std::size_t>(qid));
      xs.push_back(Interaction{static_cast<std::size_t>(qid - 1), static_cast<int>(r)});
    }

    // segment long trajectories, drop fragments that cannot yield a target
    for (std::size_t off = 0; off < xs.size(); off += opt.max_len) {
      const std::size_t seg = std::min(opt.max_len, xs.size() - off);
      if (seg < 2) continue;
      StudentSequence s;
      s.interactions.assign(xs.begin() + off, xs.begin() + off + seg);
      ds.sequences.push_back(std::move(s));
    }
  }

  if (ds.sequences.empty()) throw parse_error(lineno, "no usable sequences (all shorter than 2)");
  ds.num_questions = opt.num_questions.value_or(max_id);
  for (const auto& s : ds.sequences)
    for (const auto& x : s.interactions)
      if (x.question >= ds.num_questions)
        throw parse_error(0, "question ID " + std::to_string(x.question + 1) +
                                 " exceeds question count " + std::to_string(ds.num_questions));
  return ds;
}

inline Dataset parse_sequence_file(const std::string& path, const ParseOptions& opt = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open sequence file: " + path);
  return parse_sequences(in, opt, path);
}

inline void write_sequences(const Dataset& ds, std::ostream& out) {
  if (ds.sequences.empty()) throw std::invalid_argument("write_sequences: empty dataset");
  for (const auto& s : ds.sequences) {
    out << s.length() << "\n";
    for (std::size_t i = 0; i < s.length(); ++i)
      out << (i ? "," : "") << (s.interactions[i].question + 1);
    out << "\n";
    for (std::size_t i = 0; i < s.length(); ++i)
      out << (i ? "," : "") << s.interactions[i].response;
    out << "\n";
  }
}

inline void write_sequence_file(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  write_sequences(ds, out);
  if (!out) throw std::runtime_error("write failed: " + path);
}

struct SplitFractions {
  double train = 0.6, valid = 0.2, test = 0.2;
};

struct Splits {
  Dataset train, valid, test;
};

/// Whole-student split, deterministic per seed. Every part receives at least
/// one sequence or the call fails.
inline Splits split_dataset(const Dataset& ds, const SplitFractions& f, std::uint64_t seed) {
  if (!(f.train > 0.0 && f.valid > 0.0 && f.test > 0.0))
    throw std::invalid_argument("split_dataset: fractions must be positive");
  if (std::abs(f.train + f.valid + f.test - 1.0) > 1e-9)
    throw std::invalid_argument("split_dataset: fractions must sum to 1");

  const std::size_t n = ds.sequences.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  num::Rng rng(seed);
  rng.shuffle(order);

  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * f.train));
  const auto n_train_valid =
      static_cast<std::size_t>(std::llround(static_cast<double>(n) * (f.train + f.valid)));
  if (n_train < 1 || n_train_valid <= n_train || n_train_valid >= n)
    throw std::invalid_argument("split_dataset: too few sequences (" + std::to_string(n) +
                                ") to populate train/valid/test");

  Splits out;
  for (Dataset* part : {&out.train, &out.valid, &out.test}) {
    part->num_questions = ds.num_questions;
    part->name = ds.name;
  }
  out.train.name += "/train";
  out.valid.name += "/valid";
  out.test.name += "/test";
  for (std::size_t i = 0; i < n; ++i) {
    const StudentSequence& s = ds.sequences[order[i]];
    if (i < n_train)
      out.train.sequences.push_back(s);
    else if (i < n_train_valid)
      out.valid.sequences.push_back(s);
    else
      out.test.sequences.push_back(s);
  }
  return out;
}

struct QuestionStats {
  std::vector<std::size_t> count;     // occurrences of each question
  std::vector<double> difficulty;     // empirical incorrect rate; NaN when count == 0
  std::vector<bool> defined;          // count > 0

  std::size_t total() const { return std::accumulate(count.begin(), count.end(), std::size_t(0)); }
};

inline QuestionStats compute_question_stats(const Dataset& ds) {
  if (ds.sequences.empty()) throw std::invalid_argument("compute_question_stats: empty dataset");
  QuestionStats st;
  st.count.assign(ds.num_questions, 0);
  std::vector<std::size_t> incorrect(ds.num_questions, 0);
  for (const auto& s : ds.sequences)
    for (const auto& x : s.interactions) {
      ++st.count[x.question];
      if (x.response == 0) ++incorrect[x.question];
    }
  st.difficulty.assign(ds.num_questions, std::numeric_limits<double>::quiet_NaN());
  st.defined.assign(ds.num_questions, false);
  for (std::size_t i = 0; i < ds.num_questions; ++i)
    if (st.count[i] > 0) {
      st.difficulty[i] = static_cast<double>(incorrect[i]) / static_cast<double>(st.count[i]);
      st.defined[i] = true;
    }
  return st;
}

}  // namespace dtkt::data
