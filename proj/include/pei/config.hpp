// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "pei/transformer.hpp"

namespace pei {

enum class KnowledgeMode { gold, all };
std::string_view knowledge_mode_name(KnowledgeMode mode);

enum class AblationVariant { full, no_type_prompter, no_pretrain, no_implicit };
std::string_view variant_name(AblationVariant v);
AblationVariant variant_from_name(std::string_view name);
const std::vector<AblationVariant>& all_variants();

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything that determines a run. Text form is `key = value` per line,
/// `#` starts a comment.
struct TrainConfig {
  std::uint64_t seed = 1;

  // data
  std::uint64_t world_seed = 7;
  std::size_t entities = 40;
  std::size_t relations = 6;
  std::size_t train_size = 2000;
  std::size_t dev_size = 500;
  std::size_t singlehop_size = 2000;
  std::size_t min_distractors = 2;
  std::size_t max_distractors = 6;
  double related_distractors = 0.0;
  bool noise = false;

  // unified / type backbone
  std::size_t d_model = 48;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn_dim = 96;
  std::size_t max_seq_len = 160;

  // knowledge encoder-decoder
  std::size_t k_d_model = 32;
  std::size_t k_layers = 1;
  std::size_t k_heads = 2;
  std::size_t k_ffn_dim = 64;

  // prompts
  std::size_t type_prompt_len = 8;
  std::size_t unified_prompt_len = 8;
  std::size_t prefix_len = 4;
  std::size_t knowledge_slots = 4;

  // optimisation
  std::size_t batch_size = 8;
  double warmup_ratio = 0.05;
  double weight_decay = 0.01;
  double support_weight = 1.0;
  double pretrain_lr = 3e-3;
  std::size_t pretrain_steps = 2000;
  double type_lr = 1e-2;
  std::size_t type_steps = 200;
  double unified_lr = 5e-3;
  std::size_t unified_steps = 1500;

  KnowledgeMode knowledge_train_mode = KnowledgeMode::all;
  KnowledgeMode knowledge_eval_mode = KnowledgeMode::all;

  // stage toggles (ablation switches)
  bool use_type_prompts = true;
  bool use_pretrain = true;
  bool use_implicit = true;

  bool grid_mode = false;
  bool analyze_subquestions = true;
  std::vector<std::uint64_t> ablation_seeds = {1, 2, 3};

  static TrainConfig parse(std::string_view text);
  static TrainConfig load(const std::filesystem::path& path);
  /// Canonical text: every key in fixed order.
  std::string to_text() const;
  /// SHA-256 of to_text().
  std::string digest() const;
  void validate() const;

  ModelConfig unified_model(std::size_t vocab_size) const;
  ModelConfig knowledge_model(std::size_t vocab_size) const;
  TrainConfig for_variant(AblationVariant v) const;
  AblationVariant variant() const;

  static const std::vector<std::string>& keys();
};

}  // namespace pei
