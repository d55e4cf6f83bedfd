// SPDX-License-Identifier: Apache-2.0
#include "pei/knowledge_prompter.hpp"

#include <stdexcept>

#include "pei/checkpoint.hpp"
#include "pei/data.hpp"

namespace pei {

KnowledgeBackbone::KnowledgeBackbone(const ModelConfig& cfg, Rng& rng)
    : config(cfg), encoder(cfg, "kenc", params, rng), decoder(cfg, "kdec", params, rng) {}

Tensor KnowledgeBackbone::answer_logits(const Tensor& slots) const {
  const std::size_t m = slots.rows();
  Tensor pool = Tensor::from({1, m}, std::vector<double>(m, 1.0 / static_cast<double>(m)));
  return matmul(matmul(pool, slots), transpose(encoder.token_table()));
}

KnowledgePrompter::KnowledgePrompter(const KnowledgeBackbone& backbone, const PrefixPair* prefixes,
                                     std::size_t slots)
    : backbone_(&backbone), slots_(slots) {
  if (slots < 1) throw std::invalid_argument("knowledge prompter: need at least one slot");
  if (prefixes != nullptr) ctx_ = inject(*prefixes, backbone.encoder, backbone.decoder);
}

Tensor KnowledgePrompter::step_input(std::span<const std::size_t> question,
                                     std::span<const std::vector<std::size_t>> sentences,
                                     std::span<const Tensor> previous) const {
  std::vector<std::size_t> ids(question.begin(), question.end());
  ids.push_back(Vocabulary::kSep);
  for (const auto& s : sentences) ids.insert(ids.end(), s.begin(), s.end());
  std::vector<Tensor> parts = {backbone_->encoder.embed_tokens(ids)};
  for (const Tensor& k : previous) {
    if (k.rank() != 2 || k.rows() != slots_ || k.cols() != dim()) {
      throw ShapeError("recall: prior knowledge " + shape_str(k.shape()) + " must be (" +
                       std::to_string(slots_) + ", " + std::to_string(dim()) + ")");
    }
    parts.push_back(backbone_->encoder.tag_segment(k, EncoderStack::kKnowledgeSegment));
  }
  return parts.size() == 1 ? parts[0] : concat(parts, 0);
}

Tensor KnowledgePrompter::recall_step(std::span<const std::size_t> question,
                                      std::span<const std::vector<std::size_t>> sentences,
                                      std::span<const Tensor> previous) const {
  if (sentences.empty()) throw std::invalid_argument("recall_step: j must be >= 1");
  if (previous.size() + 1 != sentences.size()) {
    throw std::invalid_argument("recall_step: " + std::to_string(previous.size()) +
                                " prior knowledge entries for step " +
                                std::to_string(sentences.size()) + " (need j - 1)");
  }
  const Tensor states = backbone_->encoder.encode_embeddings(
      step_input(question, sentences, previous), ctx_.encoder);
  return backbone_->decoder.decode(states, slots_, ctx_.decoder);
}

KnowledgeSequence KnowledgePrompter::recall_chain(
    std::span<const std::size_t> question,
    std::span<const std::vector<std::size_t>> sentences) const {
  KnowledgeSequence out;
  for (std::size_t j = 1; j <= sentences.size(); ++j) {
    out.push_back(recall_step(question, sentences.first(j), out));
  }
  return out;
}

void dump_knowledge(const std::filesystem::path& path,
                    const std::map<std::string, KnowledgeSequence>& knowledge) {
  Checkpoint ckpt;
  ckpt.header["kind"] = "knowledge_dump";
  for (const auto& [id, seq] : knowledge) {
    ckpt.header["n." + id] = std::to_string(seq.size());
    for (std::size_t j = 0; j < seq.size(); ++j) {
      ckpt.tensors[id + ".k" + std::to_string(j + 1)] = seq[j].detach();
    }
  }
  save_checkpoint(path, ckpt);
}

}  // namespace pei
