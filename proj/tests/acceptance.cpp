// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion, exit status 1 on any FAIL.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "metric_fixtures.hpp"
#include "pei/knowledge_prompter.hpp"
#include "pei/pipeline.hpp"

using namespace pei;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

double round4(double x) { return std::round(x * 1e4) / 1e4; }

Tensor rand_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(multiply(y, rand_tensor(y.shape(), rng, -1.0, 1.0)));
}

bool same(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

double max_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

ModelConfig small_model(std::size_t vocab) {
  ModelConfig c;
  c.d_model = 8;
  c.layers = 2;
  c.heads = 2;
  c.ffn_dim = 16;
  c.vocab_size = vocab;
  c.max_seq_len = 120;
  return c;
}

// ---- 1 ----------------------------------------------------------------------

void metric_arithmetic(Verdict& v) {
  // the PEI column as 1000 outcomes, row order ccc..www (question, sub1, sub2)
  std::vector<std::optional<SubQuestionOutcome>> outcomes;
  for (std::size_t row = 0; row < 8; ++row) {
    const auto n = static_cast<std::size_t>(std::lround(fixtures::kPeiSubQuestionRows[row] * 10));
    for (std::size_t i = 0; i < n; ++i)
      outcomes.push_back(SubQuestionOutcome{(row & 4) == 0, (row & 2) == 0, (row & 1) == 0});
  }
  const SubQuestionTable t = subquestion_analysis(outcomes);
  const double both = t.both_correct_success(), parent = t.one_correct_parent_rate();
  v.detail << "both-correct " << both << "% one-correct parent " << parent << "%";
  v.require(std::abs(both - 97.62) <= 0.01, "both-correct 97.62 +/- 0.01");
  v.require(std::abs(parent - 36.55) <= 0.01, "one-correct parent 36.55 +/- 0.01");
  for (std::size_t row = 0; row < 8; ++row)
    v.require(std::abs(t.rows[row] - fixtures::kPeiSubQuestionRows[row]) < 1e-9, "row percentages");
}

// ---- 2 ----------------------------------------------------------------------

void parameter_count(Verdict& v) {
  Rng rng(21);
  std::uniform_int_distribution<std::size_t> pick(1, 6);
  int configs = 0;
  for (int trial = 0; trial < 6; ++trial) {
    const std::size_t h = pick(rng), d = 4 * pick(rng), l = pick(rng) + pick(rng);
    ModelConfig c = small_model(40);
    c.d_model = d;
    c.layers = h;
    c.ffn_dim = 2 * d;
    QABackbone bb(c, rng);
    TypePrompterModel m(bb, l, rng);
    const std::string keep[] = {"pt."};
    const std::size_t prompts = count_trainable(ParamPartition::by_prefix(m.registry(), keep), m.registry());
    v.require(prompts == d * h * l, "d*h*l for d=" + std::to_string(d) + " h=" + std::to_string(h) +
                                        " l=" + std::to_string(l));
    v.require(count_trainable(m.partition(), m.registry()) == d * h * l + 2 * d + 2, "prompts plus head");
    ++configs;
  }
  v.detail << configs << " configurations";
}

// ---- 3 ----------------------------------------------------------------------

void gradients(Verdict& v) {
  Rng rng(2024);
  double worst = 0;
  int checked = 0;
  for (int trial = 0; trial < 6; ++trial) {
    const std::size_t r = 2 + trial % 3, c = 2 + (trial + 1) % 3, k = 3;
    Tensor other = rand_tensor({r, c}, rng);
    Tensor rhs = rand_tensor({c, k}, rng);
    std::vector<std::size_t> labels(r), ids(r + 1);
    for (auto& l : labels) l = rng() % c;
    for (auto& i : ids) i = rng() % r;
    std::vector<double> targets(r * c);
    for (auto& t : targets) t = static_cast<double>(rng() % 2);
    const std::uint64_t s = rng();
    const std::vector<std::pair<std::string, ScalarFn>> fns = {
        {"matmul", [&](const Tensor& x) { return weighted_sum(matmul(x, rhs), s); }},
        {"add", [&](const Tensor& x) { return weighted_sum(add(x, other), s); }},
        {"multiply", [&](const Tensor& x) { return weighted_sum(multiply(x, x), s); }},
        {"scale", [&](const Tensor& x) { return weighted_sum(scale(x, -1.7), s); }},
        {"concat", [&](const Tensor& x) { return weighted_sum(concat({x, other}, 0), s); }},
        {"slice", [&](const Tensor& x) { return weighted_sum(slice(x, 1, c - 1, 1), s); }},
        {"transpose", [&](const Tensor& x) { return weighted_sum(transpose(x), s); }},
        {"softmax_rows", [&](const Tensor& x) { return weighted_sum(softmax_rows(x), s); }},
        {"layer_norm", [&](const Tensor& x) { return weighted_sum(layer_norm(x, 1), s); }},
        {"gelu", [&](const Tensor& x) { return weighted_sum(gelu(x), s); }},
        {"embedding_gather", [&](const Tensor& x) { return weighted_sum(embedding_gather(x, ids), s); }},
        {"mean", [&](const Tensor& x) { return mean(multiply(x, other)); }},
        {"sum", [&](const Tensor& x) { return sum(multiply(x, x)); }},
        {"cross_entropy", [&](const Tensor& x) { return cross_entropy_from_logits(x, labels); }},
        {"sigmoid", [&](const Tensor& x) { return weighted_sum(sigmoid(x), s); }},
        {"bce", [&](const Tensor& x) { return binary_cross_entropy(sigmoid(x), targets); }},
        {"bce_with_logits", [&](const Tensor& x) { return bce_with_logits(x, targets); }},
    };
    for (const auto& [name, fn] : fns) {
      const double err = grad_check(fn, rand_tensor({r, c}, rng), 1e-5);
      worst = std::max(worst, err);
      v.require(err <= 1e-4, name);
      ++checked;
    }
  }

  // end-to-end unified loss wrt sampled P_u and prefix parameters
  const World world = generate_world(3, 24, 6);
  const Vocabulary vocab = Vocabulary::for_world(world);
  const std::vector<QAExample> data = generate_dataset(world, 4, 4, false);
  UnifiedOptions o;
  o.unified_prompt_len = 3;
  o.prefix_len = 2;
  o.knowledge_slots = 2;
  o.train_mode = KnowledgeMode::all;
  Rng mrng(1);
  ModelConfig kc = small_model(vocab.size());
  kc.layers = 1;
  UnifiedPrompter m(small_model(vocab.size()), kc, o, mrng);
  m.set_vocabulary(vocab);
  Rng prng(101);
  DeepPromptSet pt("pt", PromptRole::type_prompt, 2, 4, 8, prng);
  m.set_type_prompts(pt.frozen_copy());
  double worst_model = 0;
  const auto param_error = [&](const QAExample& ex, Tensor param) {
    const std::vector<double> saved(param.data().begin(), param.data().end());
    const std::vector<double> analytic = backward(m.example_loss(ex)).of(param);
    auto fn = [&](const Tensor& x) {
      std::copy(x.data().begin(), x.data().end(), param.mutable_data().begin());
      return m.example_loss(ex);
    };
    const double err = gradient_error(analytic, fn, Tensor::from(param.shape(), saved));
    std::copy(saved.begin(), saved.end(), param.mutable_data().begin());
    return err;
  };
  for (const QAExample& ex : data) {
    std::vector<Tensor> params = m.unified_prompts()->layer_prompts();
    for (const auto& p : m.prefixes()->encoder_prefixes()) {
      params.push_back(p.keys);
      params.push_back(p.values);
    }
    for (const auto& p : m.prefixes()->decoder_prefixes()) {
      params.push_back(p.keys);
      params.push_back(p.values);
    }
    for (const Tensor& p : params) {
      const double err = param_error(ex, p);
      worst_model = std::max(worst_model, err);
      v.require(err <= 1e-4, "unified loss");
      ++checked;
    }
  }
  v.detail << checked << " checks, worst op " << worst << ", worst unified " << worst_model;
}

// ---- 4 ----------------------------------------------------------------------

void mechanisms(Verdict& v) {
  Rng rng(4);
  const ModelConfig cfg = small_model(30);
  ParameterStore store;
  EncoderStack enc(cfg, "e", store, rng);
  DecoderStack dec(cfg, "d", store, rng);
  const std::vector<std::size_t> ids = {1, 2, 3, 4, 5, 9};
  PromptContext empty;
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    empty.deep_prompts.push_back(Tensor::zeros({0, cfg.d_model}));
    empty.prefixes.push_back({Tensor::zeros({0, cfg.d_model}), Tensor::zeros({0, cfg.d_model})});
  }
  const Tensor h = enc.encode(ids);
  const double enc_diff = max_diff(enc.encode(ids, empty), h);
  PromptContext dec_empty;
  dec_empty.prefixes = empty.prefixes;
  const double dec_diff = max_diff(dec.decode(h, 4, dec_empty), dec.decode(h, 4));
  v.require(enc_diff <= 1e-12, "zero-length encoder prompts/prefixes");
  v.require(dec_diff <= 1e-12, "zero-length decoder prefixes");

  Rng krng(42);
  KnowledgeBackbone bb(cfg, krng);
  PrefixPair pk("pk", cfg.layers, cfg.layers, 3, cfg.d_model, krng);
  KnowledgePrompter kp(bb, &pk, 4);
  const std::vector<std::size_t> q = {7, 8, 9};
  const std::vector<std::vector<std::size_t>> s = {{10, 11, 12}, {13, 14}, {15, 16, 17, 18}};
  std::vector<std::size_t> first = q;
  first.push_back(Vocabulary::kSep);
  first.insert(first.end(), s[0].begin(), s[0].end());
  const EncoderDecoderContext ctx = inject(pk, bb.encoder, bb.decoder);
  const Tensor direct = bb.decoder.decode(bb.encoder.encode(first, ctx.encoder), 4, ctx.decoder);
  v.require(same(kp.recall_step(q, std::span(s.data(), 1), {}), direct), "recall_step j=1 bitwise");

  const KnowledgeSequence base = kp.recall_chain(q, s);
  for (std::size_t j = 0; j < s.size(); ++j) {
    auto pert = s;
    for (std::size_t later = j + 1; later < pert.size(); ++later) pert[later] = {20, 21, 22, 23, 24};
    const KnowledgeSequence k = kp.recall_chain(q, pert);
    for (std::size_t i = 0; i <= j; ++i) v.require(same(k[i], base[i]), "causality at j=" + std::to_string(j + 1));
  }
  v.detail << "encoder diff " << enc_diff << ", decoder diff " << dec_diff;
}

// ---- 8 ----------------------------------------------------------------------

void metric_fixtures(Verdict& v) {
  for (const auto& fx : fixtures::metric_fixtures()) {
    const AnswerScore a = answer_em_f1(fx.pred, fx.gold);
    const JointScore j = support_and_joint(fx.pred_sup, fx.gold_sup, a);
    const bool ok = round4(a.em) == fx.em && round4(a.f1) == fx.f1 && round4(j.sup_em) == fx.sup_em &&
                    round4(j.sup_f1) == fx.sup_f1 && round4(j.joint_em) == fx.joint_em &&
                    round4(j.joint_f1) == fx.joint_f1;
    v.require(ok, fx.name);
  }
  v.detail << fixtures::metric_fixtures().size() << " fixtures";
}

// ---- 9 ----------------------------------------------------------------------

void determinism(Verdict& v, const TrainConfig& full) {
  TrainConfig c = full;
  c.train_size = 60;
  c.dev_size = 20;
  c.singlehop_size = 60;
  c.pretrain_steps = 20;
  c.type_steps = 20;
  c.unified_steps = 20;
  const auto once = [&] {
    const Dataset d = generate_data(c);
    const Checkpoint pre = pretrain_singlehop(c, d);
    const Checkpoint type = train_type_stage(c, d, pre);
    const Checkpoint uni = train_unified_stage(c, d, pre, &type);
    const LoadedModel m = load_unified(uni);
    return std::vector<std::string>{serialize(pre), serialize(type), serialize(uni),
                                    evaluate(predict_all(*m.model, d.dev, true), d.dev).to_text()};
  };
  const auto a = once(), b = once();
  const char* names[] = {"pretrain checkpoint", "type checkpoint", "unified checkpoint", "report"};
  for (std::size_t i = 0; i < a.size(); ++i) v.require(a[i] == b[i], names[i]);
  v.detail << "3 stages and the report compared byte for byte";
}

// ---- 5, 6, 7 ----------------------------------------------------------------

struct AblationOutcome {
  AblationReport report;
  fs::path dir;
  double seconds = 0;
};

void freezing(Verdict& v, const AblationOutcome& run, const TrainConfig& c) {
  int compared = 0;
  const auto eq = [&](const Checkpoint& ck, const std::string& a, const std::string& b, const std::string& what) {
    v.require(ck.require(a) == ck.require(b), what);
    ++compared;
  };
  for (std::uint64_t seed : c.ablation_seeds) {
    const std::string tag = "seed" + std::to_string(seed);
    for (const char* type_ck : {"-type.ckpt", "-type-no_pretrain.ckpt"}) {
      const Checkpoint t = load_checkpoint(run.dir / (tag + type_ck));
      eq(t, "type.backbone_digest_before", "type.backbone_digest_after", "(a) type backbone " + tag);
    }
    for (AblationVariant var : all_variants()) {
      const Checkpoint u = load_checkpoint(run.dir / (tag + "-" + std::string(variant_name(var)) + ".ckpt"));
      if (u.header.count("frozen.pt.before")) {
        eq(u, "frozen.pt.before", "frozen.pt.after", "(b) P_t " + tag);
        eq(u, "frozen.pt.before", "type.pt_digest", "(b) P_t equals export " + tag);
      }
      if (u.header.count("frozen.kbackbone.before")) {
        eq(u, "frozen.kbackbone.before", "frozen.kbackbone.after", "(c) encoder-decoder " + tag);
        eq(u, "frozen.kbackbone.before", "knowledge.backbone_digest_pretrain", "(c) encoder-decoder vs stage 1 " + tag);
      }
    }
  }
  v.detail << compared << " digest pairs";
}

void ordering(Verdict& v, const AblationOutcome& run, const TrainConfig& c) {
  const std::size_t seeds = c.ablation_seeds.size();
  const std::size_t need = (2 * seeds + 2) / 3;
  const std::size_t wi = run.report.full_wins(AblationVariant::no_implicit);
  const std::size_t wt = run.report.full_wins(AblationVariant::no_type_prompter);
  v.require(seeds >= 3, "three seeds");
  v.require(wi >= need, "full >= no_implicit");
  v.require(wt >= need, "full >= no_type_prompter");
  v.detail << "full >= no_implicit in " << wi << "/" << seeds << ", full >= no_type_prompter in " << wt << "/"
           << seeds << " (dev joint F1 " << run.report.mean(AblationVariant::full).joint_f1 << " vs "
           << run.report.mean(AblationVariant::no_implicit).joint_f1 << " / "
           << run.report.mean(AblationVariant::no_type_prompter).joint_f1 << "), " << run.seconds << " s";
}

void competence(Verdict& v, const AblationOutcome& run) {
  const MetricsReport full = run.report.mean(AblationVariant::full);
  v.require(full.ans_f1 >= 90.0, "answer F1 >= 0.90");
  v.require(full.sup_f1 >= 90.0, "support F1 >= 0.90");
  v.detail << "dev answer F1 " << full.ans_f1 / 100 << ", support F1 " << full.sup_f1 / 100;
}

void report(int n, const char* name, const std::function<void(Verdict&)>& body, bool& all) {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(v);
  } catch (const std::exception& e) {
    v.pass = false;
    v.detail << "[error: " << e.what() << "]";
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("criterion %d %-22s %s  %s (%.1f s)\n", n, name, v.pass ? "PASS" : "FAIL", v.detail.str().c_str(), s);
  std::fflush(stdout);
  all = all && v.pass;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: acceptance <config> [artifact dir]\n");
    return 2;
  }
  const TrainConfig config = TrainConfig::load(argv[1]);
  const fs::path dir = argc > 2 ? fs::path(argv[2]) : artifact_root() / "acceptance";
  bool all = true;

  report(1, "metric arithmetic", metric_arithmetic, all);
  report(2, "parameter count", parameter_count, all);
  report(3, "gradients", gradients, all);
  report(4, "mechanism identities", mechanisms, all);
  report(8, "metrics oracle suite", metric_fixtures, all);
  report(9, "determinism", [&](Verdict& v) { determinism(v, config); }, all);

  AblationOutcome run;
  run.dir = dir;
  std::string failure;
  try {
    fs::create_directories(dir);
    const auto t0 = std::chrono::steady_clock::now();
    const Dataset data = generate_data(config);
    run.report = ablate(config, data, dir);
    run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ofstream(dir / "ablation.txt") << run.report.to_text();
    std::ofstream(dir / "ablation.csv") << run.report.to_csv();
    std::printf("%s\n", run.report.to_text().c_str());
  } catch (const std::exception& e) {
    failure = e.what();
  }
  const auto guarded = [&](const std::function<void(Verdict&)>& body) {
    return [&, body](Verdict& v) {
      if (!failure.empty()) throw std::runtime_error("ablation run failed: " + failure);
      body(v);
    };
  };
  report(5, "freezing contracts", guarded([&](Verdict& v) { freezing(v, run, config); }), all);
  report(6, "ablation ordering", guarded([&](Verdict& v) { ordering(v, run, config); }), all);
  report(7, "toy competence", guarded([&](Verdict& v) { competence(v, run); }), all);

  std::printf("acceptance: %s\n", all ? "PASS" : "FAIL");
  return all ? 0 : 1;
}
