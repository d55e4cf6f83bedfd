// SPDX-License-Identifier: Apache-2.0
#include "pei/transformer.hpp"

#include <cmath>
#include <stdexcept>

namespace pei {

namespace {

constexpr double kEmbeddingStd = 0.1;
constexpr double kMasked = -1e30;

std::size_t header_size(const std::map<std::string, std::string>& header, const std::string& key) {
  auto it = header.find(key);
  if (it == header.end()) throw std::runtime_error("model header lacks '" + key + "'");
  return static_cast<std::size_t>(std::stoull(it->second));
}

}  // namespace

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v < 1) throw std::invalid_argument(std::string("ModelConfig: ") + name + " must be >= 1");
  };
  positive(d_model, "d_model");
  positive(layers, "layers");
  positive(heads, "heads");
  positive(vocab_size, "vocab_size");
  positive(max_seq_len, "max_seq_len");
  positive(ffn_dim, "ffn_dim");
  if (d_model % heads != 0) {
    throw std::invalid_argument("ModelConfig: d_model " + std::to_string(d_model) +
                                " not divisible by heads " + std::to_string(heads));
  }
}

void ModelConfig::write_header(std::map<std::string, std::string>& header,
                               const std::string& prefix) const {
  header[prefix + "d_model"] = std::to_string(d_model);
  header[prefix + "layers"] = std::to_string(layers);
  header[prefix + "heads"] = std::to_string(heads);
  header[prefix + "vocab_size"] = std::to_string(vocab_size);
  header[prefix + "max_seq_len"] = std::to_string(max_seq_len);
  header[prefix + "prompt_len"] = std::to_string(prompt_len);
  header[prefix + "ffn_dim"] = std::to_string(ffn_dim);
}

ModelConfig ModelConfig::read_header(const std::map<std::string, std::string>& header,
                                     const std::string& prefix) {
  ModelConfig c;
  c.d_model = header_size(header, prefix + "d_model");
  c.layers = header_size(header, prefix + "layers");
  c.heads = header_size(header, prefix + "heads");
  c.vocab_size = header_size(header, prefix + "vocab_size");
  c.max_seq_len = header_size(header, prefix + "max_seq_len");
  c.prompt_len = header_size(header, prefix + "prompt_len");
  c.ffn_dim = header_size(header, prefix + "ffn_dim");
  c.validate();
  return c;
}

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
               Rng& rng) {
  weight = store.add_uniform(name + ".weight", {in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  bias = store.add_constant(name + ".bias", {out}, 0.0);
}

Tensor Linear::operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }

LayerNormAffine::LayerNormAffine(ParameterStore& store, const std::string& name, std::size_t dim) {
  gamma = store.add_constant(name + ".gamma", {dim}, 1.0);
  beta = store.add_constant(name + ".beta", {dim}, 0.0);
}

Tensor LayerNormAffine::operator()(const Tensor& x) const {
  return add(multiply(layer_norm(x, x.rank() - 1, eps), gamma), beta);
}

MultiHeadAttention::MultiHeadAttention(ParameterStore& store, const std::string& name,
                                       std::size_t d_model, std::size_t n_heads, Rng& rng)
    : d(d_model), heads(n_heads) {
  q = Linear(store, name + ".q", d, d, rng);
  k = Linear(store, name + ".k", d, d, rng);
  v = Linear(store, name + ".v", d, d, rng);
  o = Linear(store, name + ".o", d, d, rng);
}

Tensor MultiHeadAttention::operator()(const Tensor& queries, const Tensor& keys_from,
                                      const LayerPrefix* prefix, const Tensor* mask,
                                      AttentionTrace* trace) const {
  Tensor qs = q(queries);
  Tensor ks = k(keys_from);
  Tensor vs = v(keys_from);
  if (prefix != nullptr && prefix->keys.rows() > 0) {
    if (prefix->keys.rank() != 2 || prefix->keys.cols() != d || prefix->values.cols() != d) {
      throw ShapeError("attention: prefix dimension " + std::to_string(prefix->keys.cols()) +
                       " differs from model dimension " + std::to_string(d));
    }
    if (prefix->keys.shape() != prefix->values.shape()) {
      throw ShapeError("attention: prefix keys " + shape_str(prefix->keys.shape()) +
                       " and values " + shape_str(prefix->values.shape()) + " differ");
    }
    ks = concat({prefix->keys, ks}, 0);
    vs = concat({prefix->values, vs}, 0);
  }
  if (mask != nullptr &&
      (mask->rows() != queries.rows() || mask->cols() != ks.rows())) {
    throw ShapeError("attention: mask " + shape_str(mask->shape()) + " does not cover (" +
                     std::to_string(queries.rows()) + ", " + std::to_string(ks.rows()) + ")");
  }
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = heads == 1 ? qs : slice(qs, 1, h * dh, dh);
    Tensor kh = heads == 1 ? ks : slice(ks, 1, h * dh, dh);
    Tensor vh = heads == 1 ? vs : slice(vs, 1, h * dh, dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    if (mask != nullptr) scores = add(scores, *mask);
    Tensor weights = softmax_rows(scores);
    if (trace != nullptr) trace->weights.push_back(weights);
    outs.push_back(matmul(weights, vh));
  }
  Tensor merged = heads == 1 ? outs[0] : concat(outs, 1);
  return o(merged);
}

FeedForward::FeedForward(ParameterStore& store, const std::string& name, std::size_t d,
                         std::size_t hidden, Rng& rng) {
  in = Linear(store, name + ".in", d, hidden, rng);
  out = Linear(store, name + ".out", hidden, d, rng);
}

Tensor FeedForward::operator()(const Tensor& x) const { return out(gelu(in(x))); }

Tensor causal_mask(std::size_t m, std::size_t prefix_len) {
  std::vector<double> values(m * (prefix_len + m), 0.0);
  for (std::size_t t = 0; t < m; ++t) {
    for (std::size_t s = t + 1; s < m; ++s) values[t * (prefix_len + m) + prefix_len + s] = kMasked;
  }
  return Tensor::from({m, prefix_len + m}, std::move(values));
}

// ---- encoder ---------------------------------------------------------------

EncoderStack::EncoderStack(const ModelConfig& config, const std::string& name,
                           ParameterStore& store, Rng& rng)
    : config_(config) {
  config_.validate();
  const std::size_t d = config_.d_model;
  tok_emb_ = store.add_normal(name + ".tok_emb", {config_.vocab_size, d}, kEmbeddingStd, rng);
  pos_emb_ = store.add_normal(name + ".pos_emb", {config_.max_seq_len, d}, kEmbeddingStd, rng);
  seg_emb_ = store.add_normal(name + ".seg_emb", {2, d}, kEmbeddingStd, rng);
  for (std::size_t i = 0; i < config_.layers; ++i) {
    const std::string p = name + ".layer" + std::to_string(i);
    Block b;
    b.ln_attn = LayerNormAffine(store, p + ".ln_attn", d);
    b.attn = MultiHeadAttention(store, p + ".attn", d, config_.heads, rng);
    b.ln_ffn = LayerNormAffine(store, p + ".ln_ffn", d);
    b.ffn = FeedForward(store, p + ".ffn", d, config_.ffn_dim, rng);
    blocks_.push_back(std::move(b));
  }
  ln_final_ = LayerNormAffine(store, name + ".ln_final", d);
}

Tensor EncoderStack::embed_tokens(std::span<const std::size_t> ids) const {
  for (std::size_t id : ids) {
    if (id >= config_.vocab_size) {
      throw std::out_of_range("encoder: token id " + std::to_string(id) + " >= vocab_size " +
                              std::to_string(config_.vocab_size));
    }
  }
  return tag_segment(embedding_gather(tok_emb_, ids), kTextSegment);
}

Tensor EncoderStack::tag_segment(const Tensor& rows, std::size_t segment) const {
  return add(rows, slice(seg_emb_, 0, segment, 1));
}

Tensor EncoderStack::encode_embeddings(const Tensor& rows, const PromptContext& ctx,
                                       AttentionTrace* trace) const {
  const std::size_t d = config_.d_model;
  if (rows.rank() != 2 || rows.cols() != d) {
    throw ShapeError("encode: input rows " + shape_str(rows.shape()) + " must be (L, " +
                     std::to_string(d) + ")");
  }
  if (!ctx.deep_prompts.empty() && ctx.deep_prompts.size() != blocks_.size()) {
    throw std::invalid_argument("encode: " + std::to_string(ctx.deep_prompts.size()) +
                                " deep prompt layers for a " + std::to_string(blocks_.size()) +
                                "-layer encoder");
  }
  if (!ctx.prefixes.empty() && ctx.prefixes.size() != blocks_.size()) {
    throw std::invalid_argument("encode: " + std::to_string(ctx.prefixes.size()) +
                                " prefix layers for a " + std::to_string(blocks_.size()) +
                                "-layer encoder");
  }
  const std::size_t l = ctx.prompt_rows();
  const std::size_t content = rows.rows();
  const std::size_t total = l + content;
  if (total > config_.max_seq_len) {
    throw std::length_error("encode: sequence length " + std::to_string(total) +
                            " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
  }
  Tensor h = l > 0 ? concat({ctx.deep_prompts[0], rows}, 0) : rows;
  const std::size_t bare = ctx.unpositioned_rows;
  if (bare > content) {
    throw std::invalid_argument("encode: " + std::to_string(bare) + " unpositioned rows exceed " +
                                std::to_string(content) + " content rows");
  }
  if (bare == 0) {
    h = add(h, slice(pos_emb_, 0, 0, total));
  } else {
    std::vector<Tensor> pos;
    if (l > 0) pos.push_back(slice(pos_emb_, 0, 0, l));
    pos.push_back(Tensor::zeros({bare, d}));
    if (content > bare) pos.push_back(slice(pos_emb_, 0, l, content - bare));
    h = add(h, concat(pos, 0));
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (l > 0 && i > 0) h = concat({ctx.deep_prompts[i], slice(h, 0, l, content)}, 0);
    const Block& b = blocks_[i];
    const LayerPrefix* prefix = ctx.prefixes.empty() ? nullptr : &ctx.prefixes[i];
    Tensor x = b.ln_attn(h);
    h = add(h, b.attn(x, x, prefix, nullptr, trace));
    h = add(h, b.ffn(b.ln_ffn(h)));
  }
  return ln_final_(h);
}

Tensor EncoderStack::encode(std::span<const std::size_t> ids, const PromptContext& ctx,
                            AttentionTrace* trace) const {
  return encode_embeddings(embed_tokens(ids), ctx, trace);
}

// ---- decoder ---------------------------------------------------------------

DecoderStack::DecoderStack(const ModelConfig& config, const std::string& name,
                           ParameterStore& store, Rng& rng)
    : config_(config) {
  config_.validate();
  const std::size_t d = config_.d_model;
  query_emb_ = store.add_normal(name + ".query_emb", {config_.max_seq_len, d}, kEmbeddingStd, rng);
  for (std::size_t i = 0; i < config_.layers; ++i) {
    const std::string p = name + ".layer" + std::to_string(i);
    Block b;
    b.ln_self = LayerNormAffine(store, p + ".ln_self", d);
    b.self_attn = MultiHeadAttention(store, p + ".self_attn", d, config_.heads, rng);
    b.ln_cross = LayerNormAffine(store, p + ".ln_cross", d);
    b.cross_attn = MultiHeadAttention(store, p + ".cross_attn", d, config_.heads, rng);
    b.ln_ffn = LayerNormAffine(store, p + ".ln_ffn", d);
    b.ffn = FeedForward(store, p + ".ffn", d, config_.ffn_dim, rng);
    blocks_.push_back(std::move(b));
  }
  ln_final_ = LayerNormAffine(store, name + ".ln_final", d);
}

Tensor DecoderStack::decode(const Tensor& encoder_states, std::size_t m, const PromptContext& ctx,
                            AttentionTrace* trace) const {
  if (m < 1) throw std::invalid_argument("decode: need at least one target position");
  if (m > config_.max_seq_len) {
    throw std::length_error("decode: " + std::to_string(m) + " positions exceed max_seq_len " +
                            std::to_string(config_.max_seq_len));
  }
  return decode_embeddings(encoder_states, slice(query_emb_, 0, 0, m), ctx, trace);
}

Tensor DecoderStack::decode_embeddings(const Tensor& encoder_states, const Tensor& inputs,
                                       const PromptContext& ctx, AttentionTrace* trace) const {
  const std::size_t d = config_.d_model;
  if (inputs.rank() != 2 || inputs.cols() != d) {
    throw ShapeError("decode: inputs " + shape_str(inputs.shape()) + " must be (m, " +
                     std::to_string(d) + ")");
  }
  if (encoder_states.rank() != 2 || encoder_states.cols() != d) {
    throw ShapeError("decode: encoder states " + shape_str(encoder_states.shape()) +
                     " must have width " + std::to_string(d));
  }
  if (!ctx.prefixes.empty() && ctx.prefixes.size() != blocks_.size()) {
    throw std::invalid_argument("decode: " + std::to_string(ctx.prefixes.size()) +
                                " prefix layers for a " + std::to_string(blocks_.size()) +
                                "-layer decoder");
  }
  const std::size_t m = inputs.rows();
  if (m > config_.max_seq_len) {
    throw std::length_error("decode: " + std::to_string(m) + " positions exceed max_seq_len " +
                            std::to_string(config_.max_seq_len));
  }
  Tensor h = inputs;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const Block& b = blocks_[i];
    const LayerPrefix* prefix = ctx.prefixes.empty() ? nullptr : &ctx.prefixes[i];
    const std::size_t p = prefix != nullptr ? prefix->keys.rows() : 0;
    const Tensor mask = causal_mask(m, p);
    Tensor x = b.ln_self(h);
    h = add(h, b.self_attn(x, x, prefix, &mask, trace));
    h = add(h, b.cross_attn(b.ln_cross(h), encoder_states, nullptr, nullptr, trace));
    h = add(h, b.ffn(b.ln_ffn(h)));
  }
  return ln_final_(h);
}

}  // namespace pei
