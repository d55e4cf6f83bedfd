// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pei/prompting.hpp"
#include "pei/transformer.hpp"

namespace pei {

/// Encoder-decoder used for recall. Parameters live under "kenc." and "kdec.".
struct KnowledgeBackbone {
  KnowledgeBackbone(const ModelConfig& config, Rng& rng);

  ModelConfig config;
  ParameterStore params;
  EncoderStack encoder;
  DecoderStack decoder;

  /// Vocabulary logits (1, vocab) from the mean of the decoded slots, read
  /// out through the tied token table. Used for single-hop pre-training.
  Tensor answer_logits(const Tensor& slots) const;
};

using KnowledgeSequence = std::vector<Tensor>;

/// Iterative recall of continuous knowledge k_1..k_n.
class KnowledgePrompter {
 public:
  /// Copies share parameters with the given backbone and prefixes.
  KnowledgePrompter(const KnowledgeBackbone& backbone, const PrefixPair* prefixes,
                    std::size_t slots);

  std::size_t slots() const { return slots_; }
  std::size_t dim() const { return backbone_->config.d_model; }

  /// Encoder input rows [Q; SEP; s_1..s_j; K_prev slots].
  Tensor step_input(std::span<const std::size_t> question,
                    std::span<const std::vector<std::size_t>> sentences,
                    std::span<const Tensor> previous) const;

  /// k_j, shape (slots, d_k). sentences holds s_1..s_j; previous holds k_1..k_{j-1}.
  Tensor recall_step(std::span<const std::size_t> question,
                     std::span<const std::vector<std::size_t>> sentences,
                     std::span<const Tensor> previous) const;

  KnowledgeSequence recall_chain(std::span<const std::size_t> question,
                                 std::span<const std::vector<std::size_t>> sentences) const;

 private:
  const KnowledgeBackbone* backbone_;
  EncoderDecoderContext ctx_;
  std::size_t slots_;
};

/// Writes each example's K_n as tensors "<id>.k<j>" in checkpoint format.
void dump_knowledge(const std::filesystem::path& path,
                    const std::map<std::string, KnowledgeSequence>& knowledge);

}  // namespace pei
