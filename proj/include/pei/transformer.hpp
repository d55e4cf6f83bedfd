// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pei/params.hpp"
#include "pei/tensor.hpp"

namespace pei {

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t vocab_size = 600;
  std::size_t max_seq_len = 256;
  std::size_t prompt_len = 8;
  std::size_t ffn_dim = 128;

  void validate() const;
  void write_header(std::map<std::string, std::string>& header, const std::string& prefix) const;
  static ModelConfig read_header(const std::map<std::string, std::string>& header,
                                 const std::string& prefix);
  bool operator==(const ModelConfig&) const = default;
};

/// Key/value rows prepended to one attention layer, each (p, d).
struct LayerPrefix {
  Tensor keys;
  Tensor values;
};

/// Per-layer prompt material seen by one forward pass of a stack.
struct PromptContext {
  /// Per-layer (l, d) rows; layer 0 is prepended as visible positions and
  /// every later layer overwrites the hidden states of those positions.
  std::vector<Tensor> deep_prompts;
  /// Per-layer self-attention key/value prefixes.
  std::vector<LayerPrefix> prefixes;
  /// Leading content rows that take no position embedding; later rows are
  /// numbered as if they were absent.
  std::size_t unpositioned_rows = 0;

  std::size_t prompt_rows() const { return deep_prompts.empty() ? 0 : deep_prompts[0].rows(); }
};

/// Attention weights, one (queries, keys) matrix per layer and head, in order.
struct AttentionTrace {
  std::vector<Tensor> weights;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  Tensor operator()(const Tensor& x) const;

  Tensor weight;
  Tensor bias;
};

class LayerNormAffine {
 public:
  LayerNormAffine() = default;
  LayerNormAffine(ParameterStore& store, const std::string& name, std::size_t dim);
  Tensor operator()(const Tensor& x) const;

  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore& store, const std::string& name, std::size_t d,
                     std::size_t heads, Rng& rng);

  /// queries (Lq, d) attend over [prefix keys; keys_from (Lk, d)]. mask, when
  /// given, is an additive (Lq, p + Lk) constant.
  Tensor operator()(const Tensor& queries, const Tensor& keys_from, const LayerPrefix* prefix,
                    const Tensor* mask, AttentionTrace* trace) const;

  std::size_t d = 0;
  std::size_t heads = 0;
  Linear q, k, v, o;
};

class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParameterStore& store, const std::string& name, std::size_t d, std::size_t hidden,
              Rng& rng);
  Tensor operator()(const Tensor& x) const;

  Linear in, out;
};

/// Pre-norm encoder: token, position and segment embeddings followed by
/// `layers` self-attention blocks and a final norm.
class EncoderStack {
 public:
  static constexpr std::size_t kTextSegment = 0;
  static constexpr std::size_t kKnowledgeSegment = 1;

  EncoderStack(const ModelConfig& config, const std::string& name, ParameterStore& store, Rng& rng);

  const ModelConfig& config() const { return config_; }
  std::size_t layers() const { return blocks_.size(); }

  /// Token plus text-segment embedding rows (no positions).
  Tensor embed_tokens(std::span<const std::size_t> ids) const;
  /// Adds the segment embedding to continuous rows (n, d).
  Tensor tag_segment(const Tensor& rows, std::size_t segment) const;

  /// rows: (L, d) content rows without positions. Output (prompt_rows + L, d).
  Tensor encode_embeddings(const Tensor& rows, const PromptContext& ctx = {},
                           AttentionTrace* trace = nullptr) const;
  Tensor encode(std::span<const std::size_t> ids, const PromptContext& ctx = {},
                AttentionTrace* trace = nullptr) const;

  Tensor token_table() const { return tok_emb_; }

 private:
  struct Block {
    LayerNormAffine ln_attn, ln_ffn;
    MultiHeadAttention attn;
    FeedForward ffn;
  };

  ModelConfig config_;
  Tensor tok_emb_, pos_emb_, seg_emb_;
  std::vector<Block> blocks_;
  LayerNormAffine ln_final_;
};

/// Pre-norm decoder with causal self-attention and cross-attention over
/// encoder states. Inputs are learned per-position query embeddings.
class DecoderStack {
 public:
  DecoderStack(const ModelConfig& config, const std::string& name, ParameterStore& store, Rng& rng);

  const ModelConfig& config() const { return config_; }
  std::size_t layers() const { return blocks_.size(); }

  /// Runs m query positions. Output (m, d).
  Tensor decode(const Tensor& encoder_states, std::size_t m, const PromptContext& ctx = {},
                AttentionTrace* trace = nullptr) const;
  /// Same with explicit decoder input rows (m, d).
  Tensor decode_embeddings(const Tensor& encoder_states, const Tensor& inputs,
                           const PromptContext& ctx = {}, AttentionTrace* trace = nullptr) const;

  Tensor query_table() const { return query_emb_; }

 private:
  struct Block {
    LayerNormAffine ln_self, ln_cross, ln_ffn;
    MultiHeadAttention self_attn, cross_attn;
    FeedForward ffn;
  };

  ModelConfig config_;
  Tensor query_emb_;
  std::vector<Block> blocks_;
  LayerNormAffine ln_final_;
};

/// Additive mask for m causal queries over p always-visible prefix keys.
Tensor causal_mask(std::size_t m, std::size_t prefix_len);

}  // namespace pei
