// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "pei/type_prompter.hpp"

using namespace pei;

namespace {

struct Fixture {
  World world = generate_world(5, 30, 6);
  Vocabulary vocab = Vocabulary::for_world(world);
  std::vector<QAExample> train = generate_dataset(world, 200, 1, false);
  std::vector<QAExample> held = generate_dataset(world, 100, 2, false);

  ModelConfig cfg() const {
    ModelConfig c;
    c.d_model = 16;
    c.layers = 2;
    c.heads = 2;
    c.ffn_dim = 32;
    c.vocab_size = vocab.size();
    c.max_seq_len = 40;
    return c;
  }
};

const Fixture& fx() {
  static const Fixture f;
  return f;
}

TypeTrainOptions steps(std::size_t n) {
  TypeTrainOptions o;
  o.steps = n;
  o.lr = 1e-2;
  return o;
}

}  // namespace

TEST(TypePrompter, ProbabilitiesFormASimplex) {
  Rng rng(1);
  QABackbone bb(fx().cfg(), rng);
  TypePrompterModel m(bb, 4, rng);
  for (const QAExample& ex : fx().held) {
    const TypePrediction p = m.classify(type_input_ids(ex.question, fx().vocab));
    EXPECT_NEAR(p.probs[0] + p.probs[1], 1.0, 1e-12);
  }
  const std::vector<std::size_t> bad = {Vocabulary::kCls, 100000};
  EXPECT_THROW(m.classify(bad), std::out_of_range);
}

TEST(TypePrompter, PartitionCountsPromptAndHead) {
  Rng rng(2);
  QABackbone bb(fx().cfg(), rng);
  TypePrompterModel m(bb, 5, rng);
  const ParamPartition p = m.partition();
  const ParameterStore reg = m.registry();
  const std::size_t d = 16, h = 2, l = 5;
  EXPECT_EQ(count_trainable(p, reg), d * h * l + d * 2 + 2);
  for (const auto& [name, t] : bb.params.entries()) EXPECT_TRUE(p.frozen.count(name)) << name;
}

TEST(TypePrompter, BackboneFrozenAfterTenSteps) {
  Rng rng(3);
  QABackbone bb(fx().cfg(), rng);
  TypePrompterModel m(bb, 4, rng);
  const std::string before = content_digest(m.backbone().params);
  const TypeTrainResult r = train_type_prompter(m, fx().train, fx().vocab, steps(10));
  EXPECT_EQ(content_digest(m.backbone().params), before);
  EXPECT_EQ(r.backbone_digest_before, r.backbone_digest_after);
  EXPECT_EQ(r.log.size(), 10u);
}

TEST(TypePrompter, OneStepMovesPrompts) {
  Rng rng(4);
  QABackbone bb(fx().cfg(), rng);
  TypePrompterModel m(bb, 4, rng);
  const std::string before = content_digest(m.prompts().params());
  train_type_prompter(m, fx().train, fx().vocab, steps(1));
  EXPECT_NE(content_digest(m.prompts().params()), before);
}

TEST(TypePrompter, LearnsSeparableTemplates) {
  Rng rng(5);
  QABackbone bb(fx().cfg(), rng);
  TypePrompterModel m(bb, 4, rng);
  const TypeTrainResult r = train_type_prompter(m, fx().train, fx().vocab, steps(200));
  double first = 0, last = 0;
  for (std::size_t i = 0; i < 10; ++i) first += r.log[i].loss;
  for (std::size_t i = r.log.size() - 10; i < r.log.size(); ++i) last += r.log[i].loss;
  EXPECT_LT(last, first);
  EXPECT_GE(type_accuracy(m, fx().held, fx().vocab), 0.95);
  for (const QAExample& ex : fx().held) {
    if (ex.kind != QuestionKind::comparison) continue;
    EXPECT_EQ(m.classify(type_input_ids(ex.question, fx().vocab)).label, QuestionType::comparison);
  }
}

TEST(TypePrompter, SingleClassWarns) {
  Rng rng(6);
  QABackbone bb(fx().cfg(), rng);
  TypePrompterModel m(bb, 4, rng);
  std::vector<QAExample> bridges;
  for (const QAExample& ex : fx().train)
    if (ex.kind == QuestionKind::bridge) bridges.push_back(ex);
  EXPECT_TRUE(train_type_prompter(m, bridges, fx().vocab, steps(2)).single_class);
}

TEST(TypePrompter, ExportIsFrozenCopy) {
  Rng rng(7);
  QABackbone bb(fx().cfg(), rng);
  TypePrompterModel m(bb, 4, rng);
  train_type_prompter(m, fx().train, fx().vocab, steps(3));
  const DeepPromptSet pt = export_type_prompts(m);
  EXPECT_TRUE(pt.frozen());
  EXPECT_EQ(content_digest(pt.params()), content_digest(m.prompts().params()));
  for (const Tensor& t : pt.layer_prompts()) EXPECT_FALSE(t.requires_grad());
}

TEST(TypePrompter, SwappingClassesKeepsLabel) {
  Rng rng(8);
  QABackbone bb(fx().cfg(), rng);
  TypePrompterModel m(bb, 4, rng);
  train_type_prompter(m, fx().train, fx().vocab, steps(20));
  std::vector<QuestionType> before;
  for (const QAExample& ex : fx().held)
    before.push_back(m.classify(type_input_ids(ex.question, fx().vocab)).label);
  Tensor& w = m.head_params().get("type_head.weight");
  Tensor& b = m.head_params().get("type_head.bias");
  auto wd = w.mutable_data();
  for (std::size_t r = 0; r < w.rows(); ++r) std::swap(wd[r * 2], wd[r * 2 + 1]);
  std::swap(b.mutable_data()[0], b.mutable_data()[1]);
  for (std::size_t i = 0; i < fx().held.size(); ++i) {
    const TypePrediction p = m.classify(type_input_ids(fx().held[i].question, fx().vocab));
    if (p.probs[0] == p.probs[1]) continue;
    // index 0 now means bridge
    const QuestionType mapped = p.probs[0] > p.probs[1] ? QuestionType::bridge : QuestionType::comparison;
    EXPECT_EQ(mapped, before[i]);
  }
}

TEST(TypePrompter, CheckpointRoundTrip) {
  Rng rng(9);
  QABackbone bb(fx().cfg(), rng);
  TypePrompterModel a(bb, 4, rng);
  train_type_prompter(a, fx().train, fx().vocab, steps(5));
  Checkpoint ck;
  a.save_to(ck);
  Rng other(10);
  TypePrompterModel b(bb, 4, other);
  b.load_from(deserialize(serialize(ck)));
  const auto ids = type_input_ids(fx().held[0].question, fx().vocab);
  EXPECT_EQ(a.classify(ids).probs, b.classify(ids).probs);
}
