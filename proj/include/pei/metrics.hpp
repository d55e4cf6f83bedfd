// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace pei {

/// Lowercase, strip punctuation, drop a/an/the, collapse whitespace.
std::string normalize_answer(const std::string& s);

struct AnswerScore {
  double em = 0;
  double f1 = 0;
  double precision = 0;
  double recall = 0;
};

AnswerScore answer_em_f1(const std::string& predicted, const std::string& gold);

struct JointScore {
  double sup_em = 0;
  double sup_f1 = 0;
  double sup_precision = 0;
  double sup_recall = 0;
  double joint_em = 0;
  double joint_f1 = 0;
};

JointScore support_and_joint(const std::set<std::size_t>& predicted,
                             const std::set<std::size_t>& gold, const AnswerScore& answer);

struct ExampleScore {
  std::string id;
  AnswerScore answer;
  JointScore joint;
};

/// Correctness of (q, q_sub1, q_sub2).
struct SubQuestionOutcome {
  bool question = false;
  bool sub1 = false;
  bool sub2 = false;
};

struct SubQuestionTable {
  /// Row order ccc, ccw, cwc, cww, wcc, wcw, wwc, www; percentages.
  std::array<double, 8> rows{};
  std::size_t counted = 0;
  std::size_t excluded = 0;

  static const std::array<const char*, 8>& row_names();
  double row(const std::string& key) const;
  /// ccc / (ccc + wcc)
  double both_correct_success() const;
  /// (ccw + cwc) / (ccc + ccw + cwc + cww)
  double one_correct_parent_rate() const;
  static SubQuestionTable from_rows(const std::array<double, 8>& rows);
};

/// Outcomes with missing sub-question answers are passed as nullopt and
/// counted in `excluded`.
SubQuestionTable subquestion_analysis(const std::vector<std::optional<SubQuestionOutcome>>& outcomes);

struct MetricsReport {
  double ans_em = 0, ans_f1 = 0, sup_em = 0, sup_f1 = 0, joint_em = 0, joint_f1 = 0;
  std::size_t count = 0;
  std::vector<ExampleScore> examples;
  std::optional<SubQuestionTable> subquestions;

  /// Averages per-example scores; values are percentages in [0, 100].
  static MetricsReport aggregate(std::vector<ExampleScore> examples);
  std::string to_text() const;
};

std::string subquestion_csv(const SubQuestionTable& table);

}  // namespace pei
