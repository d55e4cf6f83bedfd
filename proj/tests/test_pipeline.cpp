// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <set>

#include "pei/pipeline.hpp"

using namespace pei;

namespace {

TrainConfig tiny() {
  TrainConfig c = TrainConfig::parse(
      "entities = 16\n"
      "train_size = 40\n"
      "dev_size = 12\n"
      "singlehop_size = 40\n"
      "max_distractors = 3\n"
      "d_model = 8\n"
      "layers = 1\n"
      "heads = 2\n"
      "ffn_dim = 16\n"
      "max_seq_len = 96\n"
      "k_d_model = 8\n"
      "k_layers = 1\n"
      "k_heads = 2\n"
      "k_ffn_dim = 16\n"
      "type_prompt_len = 2\n"
      "unified_prompt_len = 2\n"
      "prefix_len = 2\n"
      "knowledge_slots = 2\n"
      "batch_size = 4\n"
      "pretrain_steps = 6\n"
      "type_steps = 6\n"
      "unified_steps = 6\n"
      "ablation_seeds = 1\n");
  return c;
}

const Dataset& data() {
  static const Dataset d = generate_data(tiny());
  return d;
}

struct Stages {
  Checkpoint pre, type, unified;
  MetricsReport report;
};

Stages run_all(const TrainConfig& c) {
  Stages r;
  r.pre = pretrain_singlehop(c, data());
  r.type = train_type_stage(c, data(), r.pre);
  r.unified = train_unified_stage(c, data(), r.pre, &r.type);
  LoadedModel m = load_unified(r.unified);
  r.report = evaluate(predict_all(*m.model, data().dev, true), data().dev);
  return r;
}

}  // namespace

TEST(Pipeline, StagesAreDeterministic) {
  const Stages a = run_all(tiny());
  const Stages b = run_all(tiny());
  EXPECT_EQ(serialize(a.pre), serialize(b.pre));
  EXPECT_EQ(serialize(a.type), serialize(b.type));
  EXPECT_EQ(serialize(a.unified), serialize(b.unified));
  EXPECT_EQ(a.report.to_text(), b.report.to_text());
  TrainConfig other = tiny();
  other.seed = 2;
  EXPECT_NE(serialize(pretrain_singlehop(other, data())), serialize(a.pre));
}

TEST(Pipeline, CheckpointsCarryStageAndDigest) {
  const Stages r = run_all(tiny());
  EXPECT_EQ(r.pre.require("stage"), "pretrain-singlehop");
  EXPECT_EQ(r.type.require("stage"), "train-type-prompter");
  EXPECT_EQ(r.unified.require("stage"), "train-knowledge-unified");
  for (const Checkpoint* c : {&r.pre, &r.type, &r.unified}) {
    EXPECT_EQ(c->require("config.digest"), tiny().digest());
  }
  EXPECT_EQ(r.type.require("type.backbone_digest_before"), r.type.require("type.backbone_digest_after"));
  EXPECT_THROW(require_stage(r.pre, "train-type-prompter"), std::runtime_error);
  EXPECT_THROW(train_unified_stage(tiny(), data(), r.pre, &r.pre), std::runtime_error);
}

TEST(Pipeline, FrozenDigestsSurviveTheFullRun) {
  const Stages r = run_all(tiny());
  for (const auto& [key, value] : r.unified.header) {
    const std::string suffix = ".before";
    if (key.rfind("frozen.", 0) == 0 && key.size() > suffix.size() &&
        key.compare(key.size() - suffix.size(), suffix.size(), suffix) == 0) {
      const std::string after = key.substr(0, key.size() - suffix.size()) + ".after";
      EXPECT_EQ(value, r.unified.require(after)) << key;
    }
  }
  EXPECT_EQ(r.unified.require("frozen.pt.before"), r.type.require("type.pt_digest"));
  EXPECT_EQ(r.unified.require("frozen.kbackbone.before"),
            r.unified.require("knowledge.backbone_digest_pretrain"));
  EXPECT_EQ(r.unified.require("frozen.kbackbone.after"),
            r.unified.require("knowledge.backbone_digest_pretrain"));
}

TEST(Pipeline, DataFilesRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "pei_pipeline_data";
  std::filesystem::remove_all(dir);
  write_data(data(), dir);
  const Dataset back = read_data(dir);
  EXPECT_EQ(back.train, data().train);
  EXPECT_EQ(back.dev, data().dev);
  EXPECT_EQ(back.vocab.tokens(), data().vocab.tokens());
  std::filesystem::remove_all(dir);
  EXPECT_THROW(read_data(dir), MissingStageError);
}

TEST(Pipeline, PredictionsRoundTripAndScore) {
  const Stages r = run_all(tiny());
  LoadedModel m = load_unified(r.unified);
  const auto preds = predict_all(*m.model, data().dev, true);
  const auto path = std::filesystem::temp_directory_path() / "pei_preds.jsonl";
  write_predictions(path, preds);
  const auto back = read_predictions(path);
  ASSERT_EQ(back.size(), preds.size());
  EXPECT_EQ(evaluate(back, data().dev).to_text(), evaluate(preds, data().dev).to_text());
  EXPECT_TRUE(r.report.subquestions.has_value());
  std::filesystem::remove(path);
}

TEST(Pipeline, SupportTracksPermutedSentences) {
  const Stages r = run_all(tiny());
  LoadedModel m = load_unified(r.unified);
  Rng rng(3);
  for (const QAExample& ex : data().dev) {
    std::vector<std::size_t> perm(ex.sentences.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    QAExample p = ex;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      p.sentences[i] = ex.sentences[perm[i]];
      p.support_labels[i] = ex.support_labels[perm[i]];
    }
    for (std::size_t& s : p.support_order) {
      s = static_cast<std::size_t>(std::find(perm.begin(), perm.end(), s) - perm.begin());
    }
    for (std::size_t k = 0; k < p.support_order.size(); ++k) {
      EXPECT_EQ(p.sentences[p.support_order[k]], ex.sentences[ex.support_order[k]]);
    }
    const ExamplePrediction b = m.model->predict_example(p, false);
    ASSERT_EQ(b.support.decisions.size(), p.sentences.size());
    // decisions mapped back to the original order score the same
    const std::vector<std::size_t> picked = b.support.indices();
    std::set<std::size_t> back;
    for (std::size_t i : picked) back.insert(perm[i]);
    const std::set<std::size_t> pred_p(picked.begin(), picked.end());
    const auto gp = p.support_indices();
    const auto go = ex.support_indices();
    AnswerScore ans;
    ans.em = 1.0;
    ans.f1 = 1.0;
    const JointScore sp = support_and_joint(pred_p, {gp.begin(), gp.end()}, ans);
    const JointScore so = support_and_joint(back, {go.begin(), go.end()}, ans);
    EXPECT_DOUBLE_EQ(sp.sup_f1, so.sup_f1);
    EXPECT_DOUBLE_EQ(sp.sup_em, so.sup_em);
    const MetricsReport rp = evaluate({b}, {p});
    EXPECT_DOUBLE_EQ(rp.sup_f1, 100.0 * so.sup_f1);
  }
}

TEST(Ablation, FourRowsPerSeedWithDeltas) {
  const AblationReport rep = ablate(tiny(), data());
  ASSERT_EQ(rep.rows.size(), 4u);
  for (AblationVariant v : all_variants()) {
    EXPECT_EQ(std::count_if(rep.rows.begin(), rep.rows.end(), [&](const AblationRow& r) { return r.variant == v; }), 1);
  }
  const std::string text = rep.to_text();
  for (AblationVariant v : all_variants()) EXPECT_NE(text.find(std::string(variant_name(v))), std::string::npos);
  EXPECT_NE(text.find("d_joint"), std::string::npos);
  const std::string csv = rep.to_csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_EQ(rep.full_wins(AblationVariant::full), 1u);
  for (AblationVariant v : all_variants()) {
    const auto row = std::find_if(rep.rows.begin(), rep.rows.end(), [&](const AblationRow& r) { return r.variant == v; });
    EXPECT_DOUBLE_EQ(rep.mean(v).joint_f1, row->dev.joint_f1);
  }
  EXPECT_EQ(ablate(tiny(), data()).to_csv(), rep.to_csv());
}
