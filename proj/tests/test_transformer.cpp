// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "pei/transformer.hpp"

using namespace pei;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
  return m;
}

Mat affine(const Mat& x, const ParameterStore& s, const std::string& name) {
  const Tensor& w = s.get(name + ".weight");
  const Tensor& b = s.get(name + ".bias");
  Mat y(x.size(), std::vector<double>(w.cols()));
  for (std::size_t r = 0; r < x.size(); ++r)
    for (std::size_t c = 0; c < w.cols(); ++c) {
      double acc = b[c];
      for (std::size_t k = 0; k < w.rows(); ++k) acc += x[r][k] * w.at(k, c);
      y[r][c] = acc;
    }
  return y;
}

Mat norm(const Mat& x, const ParameterStore& s, const std::string& name) {
  const Tensor& g = s.get(name + ".gamma");
  const Tensor& b = s.get(name + ".beta");
  Mat y = x;
  for (auto& row : y) {
    double mu = 0, var = 0;
    for (double v : row) mu += v / row.size();
    for (double v : row) var += (v - mu) * (v - mu) / row.size();
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = (row[c] - mu) / std::sqrt(var + 1e-5) * g[c] + b[c];
  }
  return y;
}

Mat attention(const Mat& x, const ParameterStore& s, const std::string& name, std::size_t heads,
              const LayerPrefix* prefix) {
  Mat q = affine(x, s, name + ".q"), k = affine(x, s, name + ".k"), v = affine(x, s, name + ".v");
  if (prefix != nullptr && prefix->keys.rows() > 0) {
    Mat pk = to_mat(prefix->keys), pv = to_mat(prefix->values);
    k.insert(k.begin(), pk.begin(), pk.end());
    v.insert(v.begin(), pv.begin(), pv.end());
  }
  const std::size_t d = x[0].size(), dh = d / heads;
  Mat out(x.size(), std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < q.size(); ++i) {
      std::vector<double> sc(k.size());
      double mx = -1e300;
      for (std::size_t j = 0; j < k.size(); ++j) {
        double dot = 0;
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) dot += q[i][c] * k[j][c];
        sc[j] = dot / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, sc[j]);
      }
      double z = 0;
      for (double& e : sc) z += (e = std::exp(e - mx));
      for (std::size_t j = 0; j < k.size(); ++j)
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) out[i][c] += sc[j] / z * v[j][c];
    }
  return affine(out, s, name + ".o");
}

// Straight loops over the stored parameters.
Mat reference_encode(const ModelConfig& cfg, const ParameterStore& s, const std::string& name,
                     const std::vector<std::size_t>& ids, const PromptContext& ctx) {
  const std::size_t l = ctx.prompt_rows();
  Mat h;
  if (l > 0) h = to_mat(ctx.deep_prompts[0]);
  const Tensor& tok = s.get(name + ".tok_emb");
  const Tensor& seg = s.get(name + ".seg_emb");
  for (std::size_t id : ids) {
    std::vector<double> row(cfg.d_model);
    for (std::size_t c = 0; c < cfg.d_model; ++c) row[c] = tok.at(id, c) + seg.at(0, c);
    h.push_back(row);
  }
  const Tensor& pos = s.get(name + ".pos_emb");
  for (std::size_t r = 0; r < h.size(); ++r)
    for (std::size_t c = 0; c < cfg.d_model; ++c) h[r][c] += pos.at(r, c);
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    if (l > 0 && i > 0) {
      Mat p = to_mat(ctx.deep_prompts[i]);
      for (std::size_t r = 0; r < l; ++r) h[r] = p[r];
    }
    const std::string p = name + ".layer" + std::to_string(i);
    const LayerPrefix* pre = ctx.prefixes.empty() ? nullptr : &ctx.prefixes[i];
    Mat a = attention(norm(h, s, p + ".ln_attn"), s, p + ".attn", cfg.heads, pre);
    for (std::size_t r = 0; r < h.size(); ++r)
      for (std::size_t c = 0; c < cfg.d_model; ++c) h[r][c] += a[r][c];
    Mat f = norm(h, s, p + ".ln_ffn");
    f = affine(f, s, p + ".ffn.in");
    for (auto& row : f)
      for (double& v : row) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    f = affine(f, s, p + ".ffn.out");
    for (std::size_t r = 0; r < h.size(); ++r)
      for (std::size_t c = 0; c < cfg.d_model; ++c) h[r][c] += f[r][c];
  }
  return norm(h, s, name + ".ln_final");
}

ModelConfig small() {
  ModelConfig c;
  c.d_model = 8;
  c.layers = 2;
  c.heads = 2;
  c.vocab_size = 20;
  c.max_seq_len = 16;
  c.ffn_dim = 12;
  return c;
}

Tensor randn(Shape shape, Rng& rng) {
  return Tensor::from(shape, normal_values(shape_size(shape), 0.5, rng));
}

double max_diff(const Tensor& a, const Tensor& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Encoder, MatchesLoopReference) {
  Rng rng(1);
  ParameterStore s;
  const ModelConfig cfg = small();
  EncoderStack enc(cfg, "e", s, rng);
  const std::vector<std::size_t> ids = {3, 7, 1, 19, 0, 4};
  const Tensor out = enc.encode(ids);
  const Mat ref = reference_encode(cfg, s, "e", ids, {});
  for (std::size_t r = 0; r < ids.size(); ++r)
    for (std::size_t c = 0; c < cfg.d_model; ++c) EXPECT_NEAR(out.at(r, c), ref[r][c], 1e-12);
}

TEST(Encoder, MatchesLoopReferenceWithPromptsAndPrefixes) {
  Rng rng(2);
  ParameterStore s;
  const ModelConfig cfg = small();
  EncoderStack enc(cfg, "e", s, rng);
  PromptContext ctx;
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    ctx.deep_prompts.push_back(randn({3, cfg.d_model}, rng));
    ctx.prefixes.push_back({randn({2, cfg.d_model}, rng), randn({2, cfg.d_model}, rng)});
  }
  const std::vector<std::size_t> ids = {5, 5, 2, 9};
  const Tensor out = enc.encode(ids, ctx);
  ASSERT_EQ(out.rows(), 7u);
  const Mat ref = reference_encode(cfg, s, "e", ids, ctx);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < cfg.d_model; ++c) EXPECT_NEAR(out.at(r, c), ref[r][c], 1e-12);
}

TEST(Encoder, EmptyPrefixesMatchVanilla) {
  Rng rng(3);
  ParameterStore s;
  const ModelConfig cfg = small();
  EncoderStack enc(cfg, "e", s, rng);
  const std::vector<std::size_t> ids = {1, 2, 3, 4, 5};
  PromptContext ctx;
  for (std::size_t i = 0; i < cfg.layers; ++i)
    ctx.prefixes.push_back({Tensor::zeros({0, cfg.d_model}), Tensor::zeros({0, cfg.d_model})});
  EXPECT_LE(max_diff(enc.encode(ids, ctx), enc.encode(ids)), 1e-12);
}

TEST(Encoder, UnpositionedRowsShiftNothing) {
  Rng rng(31);
  ParameterStore s;
  const ModelConfig cfg = small();
  EncoderStack enc(cfg, "e", s, rng);
  PromptContext ctx;
  for (std::size_t i = 0; i < cfg.layers; ++i) ctx.deep_prompts.push_back(randn({2, cfg.d_model}, rng));
  const std::size_t l = 2, k = 3, t = 4, d = cfg.d_model;
  const Tensor rows = randn({k + t, d}, rng);
  const Tensor& pos = s.get("e.pos_emb");
  // same sum with positions folded in by hand: bare rows lose theirs,
  // text rows take l.. instead of l + k..
  std::vector<double> moved(rows.data().begin(), rows.data().end());
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t c = 0; c < d; ++c) moved[r * d + c] -= pos.at(l + r, c);
  for (std::size_t r = k; r < k + t; ++r)
    for (std::size_t c = 0; c < d; ++c) moved[r * d + c] += pos.at(l + r - k, c) - pos.at(l + r, c);
  const Tensor plain = enc.encode_embeddings(Tensor::from({k + t, d}, moved), ctx);
  ctx.unpositioned_rows = k;
  EXPECT_LE(max_diff(enc.encode_embeddings(rows, ctx), plain), 1e-12);
  ctx.unpositioned_rows = k + t + 1;
  EXPECT_THROW(enc.encode_embeddings(rows, ctx), std::invalid_argument);
}

TEST(Attention, IdenticalKeysGiveUniformWeights) {
  Rng rng(4);
  ParameterStore s;
  MultiHeadAttention attn(s, "a", 8, 2, rng);
  Tensor q = randn({3, 8}, rng);
  std::vector<double> same;
  const Tensor row = randn({1, 8}, rng);
  for (int r = 0; r < 5; ++r) same.insert(same.end(), row.data().begin(), row.data().end());
  AttentionTrace trace;
  attn(q, Tensor::from({5, 8}, same), nullptr, nullptr, &trace);
  ASSERT_EQ(trace.weights.size(), 2u);
  for (const Tensor& w : trace.weights)
    for (double v : w.data()) EXPECT_NEAR(v, 0.2, 1e-12);
}

TEST(Attention, PrefixWidensKeyAxis) {
  Rng rng(5);
  ParameterStore s;
  MultiHeadAttention attn(s, "a", 8, 2, rng);
  Tensor x = randn({5, 8}, rng);
  LayerPrefix p{randn({3, 8}, rng), randn({3, 8}, rng)};
  AttentionTrace trace;
  const Tensor y = attn(x, x, &p, nullptr, &trace);
  EXPECT_EQ(y.shape(), (Shape{5, 8}));
  for (const Tensor& w : trace.weights) {
    ASSERT_EQ(w.shape(), (Shape{5, 8}));
    for (std::size_t r = 0; r < 5; ++r) {
      double total = 0;
      for (std::size_t c = 0; c < 8; ++c) total += w.at(r, c);
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Attention, PrefixDimensionMismatch) {
  Rng rng(6);
  ParameterStore s;
  MultiHeadAttention attn(s, "a", 8, 2, rng);
  Tensor x = randn({2, 8}, rng);
  LayerPrefix p{randn({3, 4}, rng), randn({3, 4}, rng)};
  EXPECT_THROW(attn(x, x, &p, nullptr, nullptr), ShapeError);
}

TEST(Decoder, CausalForEveryPosition) {
  Rng rng(7);
  ParameterStore s;
  const ModelConfig cfg = small();
  DecoderStack dec(cfg, "d", s, rng);
  const Tensor enc = randn({4, cfg.d_model}, rng);
  const Tensor in = randn({6, cfg.d_model}, rng);
  const Tensor base = dec.decode_embeddings(enc, in);
  for (std::size_t t = 0; t + 1 < 6; ++t) {
    Tensor pert = in.clone();
    for (std::size_t c = 0; c < cfg.d_model; ++c) pert.mutable_data()[(t + 1) * cfg.d_model + c] += 1.0;
    const Tensor out = dec.decode_embeddings(enc, pert);
    for (std::size_t r = 0; r <= t; ++r)
      for (std::size_t c = 0; c < cfg.d_model; ++c) EXPECT_EQ(out.at(r, c), base.at(r, c));
    bool moved = false;
    for (std::size_t c = 0; c < cfg.d_model; ++c) moved |= out.at(t + 1, c) != base.at(t + 1, c);
    EXPECT_TRUE(moved);
  }
}

TEST(Decoder, EveryPositionSeesEveryEncoderState) {
  Rng rng(8);
  ParameterStore s;
  const ModelConfig cfg = small();
  DecoderStack dec(cfg, "d", s, rng);
  const Tensor enc = randn({4, cfg.d_model}, rng);
  const Tensor base = dec.decode(enc, 5);
  for (std::size_t e = 0; e < 4; ++e) {
    Tensor pert = enc.clone();
    pert.mutable_data()[e * cfg.d_model] += 0.5;
    const Tensor out = dec.decode(pert, 5);
    for (std::size_t r = 0; r < 5; ++r) {
      double diff = 0;
      for (std::size_t c = 0; c < cfg.d_model; ++c) diff += std::abs(out.at(r, c) - base.at(r, c));
      EXPECT_GT(diff, 0.0) << "encoder row " << e << " decoder row " << r;
    }
  }
}

TEST(Decoder, CausalMaskShape) {
  const Tensor m = causal_mask(3, 2);
  ASSERT_EQ(m.shape(), (Shape{3, 5}));
  EXPECT_EQ(m.at(0, 0), 0.0);
  EXPECT_EQ(m.at(0, 1), 0.0);
  EXPECT_EQ(m.at(0, 2), 0.0);
  EXPECT_LT(m.at(0, 3), -1e20);
  EXPECT_EQ(m.at(2, 4), 0.0);
}

TEST(Prefix, GradientReachesEveryLayer) {
  Rng rng(9);
  ParameterStore s;
  const ModelConfig cfg = small();
  EncoderStack enc(cfg, "e", s, rng);
  s.set_requires_grad(false);
  PromptContext ctx;
  std::vector<Tensor> leaves;
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    LayerPrefix p{randn({2, cfg.d_model}, rng), randn({2, cfg.d_model}, rng)};
    p.keys.set_requires_grad(true);
    p.values.set_requires_grad(true);
    leaves.push_back(p.keys);
    leaves.push_back(p.values);
    ctx.prefixes.push_back(p);
  }
  const std::vector<std::size_t> ids = {1, 2, 3};
  Tensor w = randn({3, cfg.d_model}, rng);
  const Gradients g = backward(sum(multiply(enc.encode(ids, ctx), w)));
  for (const Tensor& leaf : leaves) {
    double norm2 = 0;
    for (double v : g.of(leaf)) norm2 += v * v;
    EXPECT_GT(norm2, 0.0);
  }
}

TEST(Lengths, Errors) {
  Rng rng(10);
  ParameterStore s;
  const ModelConfig cfg = small();
  EncoderStack enc(cfg, "e", s, rng);
  DecoderStack dec(cfg, "d", s, rng);
  std::vector<std::size_t> too_long(17, 1);
  EXPECT_THROW(enc.encode(too_long), std::length_error);
  const std::vector<std::size_t> bad = {25};
  EXPECT_THROW(enc.encode(bad), std::out_of_range);
  EXPECT_THROW(dec.decode(randn({2, 8}, rng), 0), std::invalid_argument);
  EXPECT_THROW(dec.decode(randn({2, 8}, rng), 17), std::length_error);
  EXPECT_THROW(dec.decode(randn({2, 4}, rng), 2), ShapeError);
  PromptContext wrong;
  wrong.prefixes.resize(1);
  const std::vector<std::size_t> ids = {1};
  EXPECT_THROW(enc.encode(ids, wrong), std::invalid_argument);
}

TEST(Config, Validation) {
  ModelConfig c = small();
  c.heads = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small();
  std::map<std::string, std::string> h;
  c.write_header(h, "m.");
  EXPECT_EQ(ModelConfig::read_header(h, "m."), c);
}
