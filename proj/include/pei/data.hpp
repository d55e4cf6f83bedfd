// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace pei {

using Tokens = std::vector<std::string>;

enum class QuestionKind { comparison, bridge, singlehop };

std::string_view kind_name(QuestionKind kind);
QuestionKind kind_from_name(std::string_view name);

struct Relation {
  std::string name;
  /// Attribute relations map into a small value pool; link relations map
  /// entities to entities and can therefore be chained.
  bool attribute = false;
  std::vector<std::string> values;
};

struct FactTriple {
  std::size_t subject = 0;
  std::size_t relation = 0;
  std::string object;
};

struct World {
  std::uint64_t seed = 0;
  std::vector<std::string> entities;
  std::vector<Relation> relations;
  std::vector<FactTriple> facts;

  std::optional<std::size_t> find(std::size_t subject, std::size_t relation) const;
  std::optional<std::size_t> entity_index(const std::string& name) const;
  bool is_functional() const;
  Tokens render(const FactTriple& fact) const;
  bool operator==(const World& other) const;

 private:
  friend World generate_world(std::uint64_t, std::size_t, std::size_t);
  void index();
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> lookup_;
  std::unordered_map<std::string, std::size_t> entity_ids_;
};

/// Deterministic fact base; every entity gets at least one fact and every
/// (subject, relation) pair at most one object.
World generate_world(std::uint64_t seed, std::size_t entity_count, std::size_t relation_count);

struct SubQuestion {
  Tokens question;
  std::string answer;
  bool operator==(const SubQuestion&) const = default;
};

struct QAExample {
  std::string id;
  QuestionKind kind = QuestionKind::bridge;
  Tokens question;
  std::vector<Tokens> sentences;
  std::vector<int> support_labels;
  std::string answer;
  std::vector<SubQuestion> subquestions;
  /// Indices into sentences of the supporting facts in reasoning order.
  std::vector<std::size_t> support_order;

  std::vector<std::size_t> support_indices() const;
  bool is_yes_no() const { return answer == "yes" || answer == "no"; }
  bool operator==(const QAExample&) const = default;
};

struct GeneratorOptions {
  std::size_t min_distractors = 2;
  std::size_t max_distractors = 6;
  /// Share of distractors that reuse a question entity with another relation.
  double related_distractor_share = 0.0;
  /// Synonym substitution in question wording.
  bool noise = false;
};

QAExample generate_example(const World& world, QuestionKind kind, std::uint64_t seed,
                           const GeneratorOptions& options = {});

/// Alternates bridge and comparison (or only singlehop when singlehop is true).
std::vector<QAExample> generate_dataset(const World& world, std::size_t count, std::uint64_t seed,
                                        bool singlehop, const GeneratorOptions& options = {});

/// Rule-based solver over the template language; answers from the listed
/// sentences only. nullopt when the facts do not determine an answer.
std::optional<std::string> symbolic_answer(const Tokens& question,
                                           const std::vector<Tokens>& sentences);

/// Token span (sentence, first token, last token) of the gold answer inside
/// a supporting sentence, searching the chain from its last element.
struct SentenceSpan {
  std::size_t sentence = 0;
  std::size_t start = 0;
  std::size_t end = 0;
};
std::optional<SentenceSpan> gold_answer_span(const QAExample& example);

/// Lowercases and splits on whitespace, detaching trailing punctuation.
Tokens tokenize(std::string_view text);
std::string join_tokens(const Tokens& tokens);

// ---- files -------------------------------------------------------------

class DatasetFormatError : public std::runtime_error {
 public:
  DatasetFormatError(std::size_t line, const std::string& field, const std::string& what);
  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

/// Native format: one JSON object per line.
void write_dataset(const std::filesystem::path& path, const std::vector<QAExample>& examples);
std::vector<QAExample> read_dataset(const std::filesystem::path& path);
std::string example_to_line(const QAExample& example);
QAExample example_from_line(std::string_view line, std::size_t line_number);

/// Reads a HotpotQA-style JSON array (_id, question, answer, supporting_facts,
/// context, type).
std::vector<QAExample> read_hotpotqa(const std::filesystem::path& path);
std::vector<QAExample> parse_hotpotqa(std::string_view json_text);

// ---- vocabulary ----------------------------------------------------------

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kCls = 2;
  static constexpr std::size_t kSep = 3;
  static constexpr std::size_t kSent = 4;

  Vocabulary();
  /// Closed vocabulary of everything the generator can emit for this world.
  static Vocabulary for_world(const World& world);
  static Vocabulary from_examples(const std::vector<QAExample>& examples);

  std::size_t add(const std::string& token);
  std::size_t id(const std::string& token) const;
  bool contains(const std::string& token) const { return ids_.count(token) > 0; }
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  std::vector<std::size_t> ids(const Tokens& tokens) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
};

}  // namespace pei
