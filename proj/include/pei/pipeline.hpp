// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pei/checkpoint.hpp"
#include "pei/config.hpp"
#include "pei/data.hpp"
#include "pei/metrics.hpp"
#include "pei/optim.hpp"
#include "pei/type_prompter.hpp"
#include "pei/unified_prompter.hpp"

namespace pei {

/// PEI_ARTIFACT_ROOT, or ./artifacts when unset.
std::filesystem::path artifact_root();

class MissingStageError : public std::runtime_error {
 public:
  MissingStageError(const std::string& stage, const std::filesystem::path& path);
};

struct Dataset {
  Vocabulary vocab;
  std::vector<QAExample> train;
  std::vector<QAExample> dev;
  std::vector<QAExample> singlehop;
};

Dataset generate_data(const TrainConfig& config);
/// train.jsonl, dev.jsonl, singlehop.jsonl, vocab.txt
void write_data(const Dataset& data, const std::filesystem::path& dir);
Dataset read_data(const std::filesystem::path& dir);

/// Optional loss-log sink; nullptr disables logging.
using LogSink = std::vector<LossLogEntry>*;

/// Stage 1: QA backbone + heads and the knowledge encoder-decoder, both
/// trained on single-hop questions.
Checkpoint pretrain_singlehop(const TrainConfig& config, const Dataset& data,
                              LogSink qa_log = nullptr, LogSink knowledge_log = nullptr);
/// The stage-1 starting point with no training applied to the QA backbone;
/// the knowledge backbone is copied from `pretrained`.
Checkpoint untrained_backbone(const TrainConfig& config, const Dataset& data,
                              const Checkpoint& pretrained);

/// Stage 2. Uses the QA backbone found in `backbone` (frozen).
Checkpoint train_type_stage(const TrainConfig& config, const Dataset& data,
                            const Checkpoint& backbone, LogSink log = nullptr,
                            double* dev_accuracy = nullptr);

/// Stage 3. type_prompts may be null only when type prompts are switched off.
Checkpoint train_unified_stage(const TrainConfig& config, const Dataset& data,
                               const Checkpoint& backbone, const Checkpoint* type_prompts,
                               LogSink log = nullptr);

/// A unified model with the vocabulary it was trained with.
struct LoadedModel {
  TrainConfig config;
  std::unique_ptr<Vocabulary> vocab;
  std::unique_ptr<UnifiedPrompter> model;
};
LoadedModel load_unified(const Checkpoint& ckpt);

std::vector<ExamplePrediction> predict_all(const UnifiedPrompter& model,
                                           const std::vector<QAExample>& examples,
                                           bool with_subquestions);

void write_predictions(const std::filesystem::path& path,
                       const std::vector<ExamplePrediction>& predictions);
std::vector<ExamplePrediction> read_predictions(const std::filesystem::path& path);

/// Scores predictions against gold by id; the sub-question table is filled
/// when any prediction carries sub-answers.
MetricsReport evaluate(const std::vector<ExamplePrediction>& predictions,
                       const std::vector<QAExample>& gold);

struct AblationRow {
  std::uint64_t seed = 0;
  AblationVariant variant = AblationVariant::full;
  MetricsReport dev;
};

struct AblationReport {
  std::string config_digest;
  std::vector<AblationRow> rows;

  /// Mean over seeds for one variant.
  MetricsReport mean(AblationVariant v) const;
  /// Seeds where full >= variant in dev joint F1.
  std::size_t full_wins(AblationVariant v) const;
  std::string to_text() const;
  std::string to_csv() const;
};

/// Runs all four variants for every seed in config.ablation_seeds.
/// Stage artifacts land under `dir` when given.
AblationReport ablate(const TrainConfig& config, const Dataset& data,
                      const std::optional<std::filesystem::path>& dir = std::nullopt);

/// Header keys shared by every checkpoint of a run.
void stamp(Checkpoint& ckpt, const TrainConfig& config, const std::string& stage,
           const Vocabulary& vocab);
/// Checks the checkpoint came from the named stage.
void require_stage(const Checkpoint& ckpt, const std::string& stage);

}  // namespace pei
