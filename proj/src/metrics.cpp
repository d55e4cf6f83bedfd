// SPDX-License-Identifier: Apache-2.0
#include "pei/metrics.hpp"

#include <cctype>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

namespace pei {

std::string normalize_answer(const std::string& s) {
  std::string cleaned;
  for (char c : s) {
    const auto u = static_cast<unsigned char>(c);
    if (std::ispunct(u)) continue;
    cleaned += static_cast<char>(std::tolower(u));
  }
  std::istringstream is(cleaned);
  std::string tok, out;
  while (is >> tok) {
    if (tok == "a" || tok == "an" || tok == "the") continue;
    if (!out.empty()) out += ' ';
    out += tok;
  }
  return out;
}

namespace {

std::vector<std::string> split(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  std::string t;
  while (is >> t) out.push_back(t);
  return out;
}

double harmonic(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

}  // namespace

AnswerScore answer_em_f1(const std::string& predicted, const std::string& gold) {
  const std::string np = normalize_answer(predicted);
  const std::string ng = normalize_answer(gold);
  AnswerScore s;
  s.em = np == ng ? 1.0 : 0.0;
  const bool yes_no = np == "yes" || np == "no" || ng == "yes" || ng == "no";
  if (yes_no && np != ng) return s;
  const auto pt = split(np);
  const auto gt = split(ng);
  std::map<std::string, int> counts;
  for (const auto& t : gt) ++counts[t];
  int common = 0;
  for (const auto& t : pt) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return s;
  s.precision = static_cast<double>(common) / static_cast<double>(pt.size());
  s.recall = static_cast<double>(common) / static_cast<double>(gt.size());
  s.f1 = harmonic(s.precision, s.recall);
  return s;
}

JointScore support_and_joint(const std::set<std::size_t>& predicted,
                             const std::set<std::size_t>& gold, const AnswerScore& answer) {
  JointScore j;
  std::size_t tp = 0;
  for (std::size_t i : predicted) tp += gold.count(i);
  const std::size_t fp = predicted.size() - tp;
  const std::size_t fn = gold.size() - tp;
  j.sup_precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  j.sup_recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  j.sup_f1 = harmonic(j.sup_precision, j.sup_recall);
  j.sup_em = (fp == 0 && fn == 0) ? 1.0 : 0.0;
  const double jp = answer.precision * j.sup_precision;
  const double jr = answer.recall * j.sup_recall;
  j.joint_f1 = harmonic(jp, jr);
  j.joint_em = answer.em * j.sup_em;
  return j;
}

// ---- sub-question table ------------------------------------------------------

const std::array<const char*, 8>& SubQuestionTable::row_names() {
  static const std::array<const char*, 8> names = {"ccc", "ccw", "cwc", "cww",
                                                   "wcc", "wcw", "wwc", "www"};
  return names;
}

double SubQuestionTable::row(const std::string& key) const {
  for (std::size_t i = 0; i < 8; ++i) {
    if (key == row_names()[i]) return rows[i];
  }
  throw std::invalid_argument("unknown sub-question row '" + key + "'");
}

double SubQuestionTable::both_correct_success() const {
  const double den = rows[0] + rows[4];
  return den > 0 ? 100.0 * rows[0] / den : 0.0;
}

double SubQuestionTable::one_correct_parent_rate() const {
  const double den = rows[0] + rows[1] + rows[2] + rows[3];
  return den > 0 ? 100.0 * (rows[1] + rows[2]) / den : 0.0;
}

SubQuestionTable SubQuestionTable::from_rows(const std::array<double, 8>& rows) {
  SubQuestionTable t;
  t.rows = rows;
  return t;
}

SubQuestionTable subquestion_analysis(const std::vector<std::optional<SubQuestionOutcome>>& outcomes) {
  SubQuestionTable t;
  std::array<std::size_t, 8> counts{};
  for (const auto& o : outcomes) {
    if (!o) {
      ++t.excluded;
      continue;
    }
    const std::size_t idx = (o->question ? 0 : 4) + (o->sub1 ? 0 : 2) + (o->sub2 ? 0 : 1);
    ++counts[idx];
    ++t.counted;
  }
  if (t.excluded > 0) {
    std::fprintf(stderr, "warning: %zu example(s) lack sub-question answers and were excluded\n",
                 t.excluded);
  }
  for (std::size_t i = 0; i < 8; ++i) {
    t.rows[i] = t.counted ? 100.0 * static_cast<double>(counts[i]) / static_cast<double>(t.counted) : 0.0;
  }
  return t;
}

std::string subquestion_csv(const SubQuestionTable& table) {
  std::ostringstream os;
  os << "row,percent\n";
  os.precision(4);
  os << std::fixed;
  for (std::size_t i = 0; i < 8; ++i) os << SubQuestionTable::row_names()[i] << ',' << table.rows[i] << '\n';
  return os.str();
}

// ---- report ------------------------------------------------------------------

MetricsReport MetricsReport::aggregate(std::vector<ExampleScore> examples) {
  MetricsReport r;
  r.count = examples.size();
  for (const ExampleScore& e : examples) {
    r.ans_em += e.answer.em;
    r.ans_f1 += e.answer.f1;
    r.sup_em += e.joint.sup_em;
    r.sup_f1 += e.joint.sup_f1;
    r.joint_em += e.joint.joint_em;
    r.joint_f1 += e.joint.joint_f1;
  }
  if (r.count > 0) {
    const double k = 100.0 / static_cast<double>(r.count);
    for (double* v : {&r.ans_em, &r.ans_f1, &r.sup_em, &r.sup_f1, &r.joint_em, &r.joint_f1}) *v *= k;
  }
  r.examples = std::move(examples);
  return r;
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os.precision(4);
  os << std::fixed;
  os << "examples = " << count << '\n'
     << "ans_em = " << ans_em << '\n'
     << "ans_f1 = " << ans_f1 << '\n'
     << "sup_em = " << sup_em << '\n'
     << "sup_f1 = " << sup_f1 << '\n'
     << "joint_em = " << joint_em << '\n'
     << "joint_f1 = " << joint_f1 << '\n';
  if (subquestions) {
    for (std::size_t i = 0; i < 8; ++i) {
      os << "subq." << SubQuestionTable::row_names()[i] << " = " << subquestions->rows[i] << '\n';
    }
    os << "subq.counted = " << subquestions->counted << '\n'
       << "subq.excluded = " << subquestions->excluded << '\n'
       << "subq.both_correct_success = " << subquestions->both_correct_success() << '\n'
       << "subq.one_correct_parent_rate = " << subquestions->one_correct_parent_rate() << '\n';
  }
  return os.str();
}

}  // namespace pei
