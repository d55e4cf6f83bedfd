// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pei/checkpoint.hpp"
#include "pei/data.hpp"
#include "pei/optim.hpp"
#include "pei/prompting.hpp"
#include "pei/transformer.hpp"

namespace pei {

/// Class index order; ties resolve toward the lower index (comparison).
enum class QuestionType { comparison = 0, bridge = 1 };
std::string_view type_name(QuestionType t);
std::optional<QuestionType> type_of(QuestionKind kind);

/// QA encoder shared by the single-hop, type and unified stages; parameters
/// live under "qa.".
struct QABackbone {
  QABackbone(const ModelConfig& config, Rng& rng);
  ModelConfig config;
  ParameterStore params;
  EncoderStack encoder;
};

struct TypePrediction {
  QuestionType label = QuestionType::comparison;
  std::array<double, 2> probs{};
};

/// Frozen encoder, trainable P_t ("pt.") and a linear head ("type_head.")
/// over the [CLS] position of {P_t, [CLS], Q}.
class TypePrompterModel {
 public:
  /// backbone values are copied; the model owns its frozen copy.
  TypePrompterModel(const QABackbone& backbone, std::size_t prompt_len, Rng& rng);

  const QABackbone& backbone() const { return *backbone_; }
  const DeepPromptSet& prompts() const { return *prompts_; }
  DeepPromptSet& prompts() { return *prompts_; }
  const ParameterStore& head_params() const { return head_store_; }
  ParameterStore& head_params() { return head_store_; }
  /// P_t and head.
  ParameterStore trainable() const;
  /// Everything, frozen backbone included.
  ParameterStore registry() const;
  ParamPartition partition() const;

  /// (1, 2) logits.
  Tensor logits(std::span<const std::size_t> question_ids) const;
  TypePrediction classify(std::span<const std::size_t> question_ids) const;

  void save_to(Checkpoint& ckpt) const;
  void load_from(const Checkpoint& ckpt);

 private:
  std::unique_ptr<QABackbone> backbone_;
  std::unique_ptr<DeepPromptSet> prompts_;
  ParameterStore head_store_;
  Linear head_;
};

struct TypeTrainOptions {
  std::size_t steps = 200;
  std::size_t batch_size = 8;
  double lr = 1e-2;
  double warmup_ratio = 0.05;
  double weight_decay = 0.0;
  std::uint64_t seed = 1;
};

struct TypeTrainResult {
  std::vector<LossLogEntry> log;
  std::string backbone_digest_before;
  std::string backbone_digest_after;
  std::size_t skipped_examples = 0;
  bool single_class = false;
};

/// Trains P_t and the head; the backbone stays frozen and its digest is
/// checked at the end.
TypeTrainResult train_type_prompter(TypePrompterModel& model, const std::vector<QAExample>& data,
                                    const Vocabulary& vocab, const TypeTrainOptions& options);

/// Independent frozen copy of the trained P_t.
DeepPromptSet export_type_prompts(const TypePrompterModel& model);

double type_accuracy(const TypePrompterModel& model, const std::vector<QAExample>& data,
                     const Vocabulary& vocab);

/// [CLS] followed by the question ids.
std::vector<std::size_t> type_input_ids(const Tokens& question, const Vocabulary& vocab);

}  // namespace pei
