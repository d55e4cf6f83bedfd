// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pei/checkpoint.hpp"
#include "pei/config.hpp"
#include "pei/data.hpp"
#include "pei/knowledge_prompter.hpp"
#include "pei/optim.hpp"
#include "pei/prompting.hpp"
#include "pei/type_prompter.hpp"

namespace pei {

enum class AnswerType { yes = 0, no = 1, span = 2 };
std::string_view answer_type_name(AnswerType t);
AnswerType answer_type_of(const std::string& answer);

constexpr std::size_t kMaxSpanLength = 16;

/// Encoder input [P_u; P_t; K_n slots; [CLS]; Q; [SEP]; s_1 [SENT] ... s_k [SENT]].
/// Positions below are indices into the encoder output. K_n slots take no
/// position embedding (ctx.unpositioned_rows).
struct UnifiedInput {
  Tensor rows;  // everything after the prompts
  PromptContext ctx;
  std::size_t unified_prompt_rows = 0;
  std::size_t type_prompt_rows = 0;
  std::size_t knowledge_rows = 0;
  std::size_t cls = 0;
  std::size_t question_start = 0;
  std::size_t question_len = 0;
  std::size_t sep = 0;
  std::vector<std::size_t> word_positions;
  std::vector<std::size_t> word_sentence;
  std::vector<std::size_t> word_offset;
  std::vector<std::size_t> marker_positions;
  std::vector<std::string> words;
  /// Token ids after the knowledge rows, in order.
  std::vector<std::size_t> token_ids;

  std::size_t prompt_rows() const { return unified_prompt_rows + type_prompt_rows; }
  std::size_t length() const { return prompt_rows() + rows.rows(); }
  /// First word index of each sentence.
  std::vector<std::size_t> sentence_word_starts() const;
};

struct UnifiedLogits {
  Tensor type;     // (1, 3)
  Tensor start;    // (1, W)
  Tensor end;      // (1, W)
  Tensor support;  // (1, S), from [SENT] state + mean of the sentence's words
};

struct UnifiedGold {
  AnswerType type = AnswerType::span;
  std::size_t start = 0;  // word indices, used when type == span
  std::size_t end = 0;
  std::vector<double> support;
};

struct AnswerPrediction {
  AnswerType type = AnswerType::span;
  std::array<double, 3> type_probs{};
  std::size_t start = 0;
  std::size_t end = 0;
  std::string text;
};

struct SupportPrediction {
  std::vector<double> probs;
  std::vector<bool> decisions;
  std::vector<std::size_t> indices() const;
};

/// CE(type) + [span](CE(start) + CE(end)) + lambda * mean BCE(support).
Tensor unified_loss(const UnifiedLogits& logits, const UnifiedGold& gold, double lambda);

/// Argmax of start[i] + end[j] over i <= j < i + max_len; ties go to the
/// earliest start, then the shortest span.
std::pair<std::size_t, std::size_t> best_span(std::span<const double> start,
                                              std::span<const double> end,
                                              std::size_t max_len = kMaxSpanLength);

/// Gold targets in word coordinates of a built input.
UnifiedGold gold_targets(const QAExample& example, const UnifiedInput& input);

struct UnifiedOptions {
  std::size_t unified_prompt_len = 8;
  std::size_t prefix_len = 4;
  std::size_t knowledge_slots = 4;
  bool use_type_prompts = true;
  bool use_implicit = true;
  KnowledgeMode train_mode = KnowledgeMode::all;
  KnowledgeMode eval_mode = KnowledgeMode::all;
  double support_weight = 1.0;

  static UnifiedOptions from(const TrainConfig& config);
  /// No prompts and no knowledge: the single-hop QA model.
  static UnifiedOptions plain();
};

struct ExamplePrediction {
  std::string id;
  AnswerPrediction answer;
  SupportPrediction support;
  std::vector<std::string> sub_answers;
};

/// QA backbone ("qa."), heads ("head."), P_u ("pu."), optional frozen P_t
/// ("pt."), and, when implicit knowledge is on, the frozen knowledge
/// backbone ("kenc.", "kdec."), prefixes ("pk.") and projection ("kproj.").
class UnifiedPrompter {
 public:
  UnifiedPrompter(const ModelConfig& qa_config, const ModelConfig& knowledge_config,
                  const UnifiedOptions& options, Rng& rng);

  const UnifiedOptions& options() const { return options_; }
  const ModelConfig& config() const { return qa_->config; }
  QABackbone& backbone() { return *qa_; }
  const QABackbone& backbone() const { return *qa_; }
  const ParameterStore& head_params() const { return heads_; }
  ParameterStore& head_params() { return heads_; }
  DeepPromptSet* unified_prompts() { return pu_.get(); }
  const DeepPromptSet* type_prompts() const { return pt_.get(); }
  KnowledgeBackbone* knowledge_backbone() { return kb_.get(); }
  const KnowledgeBackbone* knowledge_backbone() const { return kb_.get(); }
  PrefixPair* prefixes() { return pk_.get(); }
  const ParameterStore& projection_params() const { return kproj_store_; }

  /// Installs exported type prompts; they must be frozen.
  void set_type_prompts(const DeepPromptSet& prompts);
  /// Copies values of "qa." and "head." from a single-hop checkpoint.
  void load_backbone(const Checkpoint& ckpt);
  /// Copies values of "kenc." and "kdec.".
  void load_knowledge_backbone(const Checkpoint& ckpt);

  ParameterStore trainable() const;
  ParameterStore frozen() const;
  ParameterStore registry() const;

  KnowledgePrompter knowledge_prompter() const;
  /// Knowledge chain for a question; empty when implicit knowledge is off.
  KnowledgeSequence recall(const Tokens& question, const std::vector<Tokens>& chain) const;
  /// Sentences fed to the recall chain for an example under a mode.
  static std::vector<Tokens> chain_sentences(const QAExample& example, KnowledgeMode mode);

  UnifiedInput build_input(const Tokens& question, const std::vector<Tokens>& sentences,
                           const KnowledgeSequence& knowledge) const;
  UnifiedLogits forward(const UnifiedInput& input) const;
  std::pair<AnswerPrediction, SupportPrediction> predict(const Tokens& question,
                                                         const std::vector<Tokens>& sentences,
                                                         const KnowledgeSequence& knowledge) const;

  /// Training loss for one example (train-mode knowledge chain).
  Tensor example_loss(const QAExample& example) const;
  /// Eval-mode prediction; sub-questions answered when requested.
  ExamplePrediction predict_example(const QAExample& example, bool with_subquestions) const;

  void save_to(Checkpoint& ckpt) const;
  void load_from(const Checkpoint& ckpt);

 private:
  const Vocabulary* vocab_ = nullptr;
  UnifiedOptions options_;
  std::unique_ptr<QABackbone> qa_;
  ParameterStore heads_;
  Linear type_head_, start_head_, end_head_, support_head_;
  std::unique_ptr<DeepPromptSet> pu_;
  std::unique_ptr<DeepPromptSet> pt_;
  std::unique_ptr<KnowledgeBackbone> kb_;
  std::unique_ptr<PrefixPair> pk_;
  ParameterStore kproj_store_;
  Linear kproj_;

 public:
  /// Token lookup; must outlive the model.
  void set_vocabulary(const Vocabulary& vocab) { vocab_ = &vocab; }
  const Vocabulary& vocabulary() const;
};

struct UnifiedTrainResult {
  std::vector<LossLogEntry> log;
  std::map<std::string, std::string> frozen_digest_before;
  std::map<std::string, std::string> frozen_digest_after;
};

/// Joint training of backbone, heads, P_u, prefixes and projection. P_t and
/// the knowledge backbone stay frozen and are checked by digest.
UnifiedTrainResult train_unified(UnifiedPrompter& model, const std::vector<QAExample>& data,
                                 const LoopOptions& options);

/// Digests of frozen groups: "pt", "kbackbone".
std::map<std::string, std::string> frozen_digests(const UnifiedPrompter& model);

}  // namespace pei
