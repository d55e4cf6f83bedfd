// SPDX-License-Identifier: Apache-2.0
#include "pei/type_prompter.hpp"

#include <cstdio>
#include <stdexcept>

namespace pei {

std::string_view type_name(QuestionType t) {
  return t == QuestionType::comparison ? "comparison" : "bridge";
}

std::optional<QuestionType> type_of(QuestionKind kind) {
  switch (kind) {
    case QuestionKind::comparison: return QuestionType::comparison;
    case QuestionKind::bridge: return QuestionType::bridge;
    case QuestionKind::singlehop: return std::nullopt;
  }
  return std::nullopt;
}

QABackbone::QABackbone(const ModelConfig& cfg, Rng& rng)
    : config(cfg), encoder(cfg, "qa", params, rng) {}

TypePrompterModel::TypePrompterModel(const QABackbone& backbone, std::size_t prompt_len, Rng& rng) {
  Rng scratch(0);
  backbone_ = std::make_unique<QABackbone>(backbone.config, scratch);
  for (const auto& [name, t] : backbone.params.entries()) {
    auto dst = backbone_->params.get(name).mutable_data();
    std::copy(t.data().begin(), t.data().end(), dst.begin());
  }
  backbone_->params.set_requires_grad(false);
  prompts_ = std::make_unique<DeepPromptSet>("pt", PromptRole::type_prompt, backbone.config.layers,
                                             prompt_len, backbone.config.d_model, rng);
  head_ = Linear(head_store_, "type_head", backbone.config.d_model, 2, rng);
}

ParameterStore TypePrompterModel::trainable() const {
  ParameterStore s;
  s.merge("", prompts_->params());
  s.merge("", head_store_);
  return s;
}

ParameterStore TypePrompterModel::registry() const {
  ParameterStore s = trainable();
  s.merge("", backbone_->params);
  return s;
}

ParamPartition TypePrompterModel::partition() const {
  ParamPartition p;
  for (const auto& [name, t] : backbone_->params.entries()) p.frozen.insert(name);
  for (const auto& [name, t] : prompts_->params().entries()) p.trainable.insert(name);
  for (const auto& [name, t] : head_store_.entries()) p.trainable.insert(name);
  return p;
}

Tensor TypePrompterModel::logits(std::span<const std::size_t> ids) const {
  if (ids.size() < 2) throw std::invalid_argument("classify: question is empty");
  const PromptContext ctx = inject(*prompts_, backbone_->encoder);
  const Tensor h = backbone_->encoder.encode(ids, ctx);
  return head_(slice(h, 0, ctx.prompt_rows(), 1));
}

TypePrediction TypePrompterModel::classify(std::span<const std::size_t> ids) const {
  const Tensor p = softmax_rows(logits(ids).detach());
  TypePrediction out;
  out.probs = {p[0], p[1]};
  out.label = out.probs[1] > out.probs[0] ? QuestionType::bridge : QuestionType::comparison;
  return out;
}

void TypePrompterModel::save_to(Checkpoint& ckpt) const {
  prompts_->save_to(ckpt);
  ckpt.put("", head_store_);
  ckpt.header["type.backbone_digest"] = content_digest(backbone_->params);
}

void TypePrompterModel::load_from(const Checkpoint& ckpt) {
  DeepPromptSet loaded = DeepPromptSet::load_from(ckpt, "pt");
  if (loaded.layers() != prompts_->layers() || loaded.length() != prompts_->length() ||
      loaded.dim() != prompts_->dim()) {
    throw std::runtime_error("type prompts in checkpoint do not match the model shape");
  }
  ckpt.restore("", prompts_->params());
  ckpt.restore("", head_store_);
}

std::vector<std::size_t> type_input_ids(const Tokens& question, const Vocabulary& vocab) {
  std::vector<std::size_t> ids = {Vocabulary::kCls};
  for (const std::string& t : question) ids.push_back(vocab.id(t));
  return ids;
}

TypeTrainResult train_type_prompter(TypePrompterModel& model, const std::vector<QAExample>& data,
                                    const Vocabulary& vocab, const TypeTrainOptions& options) {
  TypeTrainResult result;
  for (const auto& [name, t] : model.backbone().params.entries()) {
    if (t.requires_grad()) throw std::logic_error("type prompter backbone entry '" + name + "' is not frozen");
  }
  std::vector<std::vector<std::size_t>> inputs;
  std::vector<std::size_t> labels;
  bool seen[2] = {false, false};
  for (const QAExample& ex : data) {
    const auto t = type_of(ex.kind);
    if (!t) {
      ++result.skipped_examples;
      continue;
    }
    inputs.push_back(type_input_ids(ex.question, vocab));
    labels.push_back(static_cast<std::size_t>(*t));
    seen[labels.back()] = true;
  }
  if (inputs.empty()) throw std::invalid_argument("train_type_prompter: no comparison/bridge examples");
  if (!(seen[0] && seen[1])) {
    result.single_class = true;
    std::fprintf(stderr, "warning: type prompter data contains a single class; the classifier is degenerate\n");
  }
  result.backbone_digest_before = content_digest(model.backbone().params);
  LoopOptions loop{options.steps, options.batch_size, options.lr, options.warmup_ratio,
                   options.weight_decay, options.seed};
  result.log = run_training(
      model.trainable(), inputs.size(),
      [&](std::size_t i) {
        const std::size_t label[] = {labels[i]};
        return cross_entropy_from_logits(model.logits(inputs[i]), label);
      },
      loop);
  result.backbone_digest_after = content_digest(model.backbone().params);
  if (result.backbone_digest_after != result.backbone_digest_before) {
    throw std::logic_error("type prompter training modified the frozen backbone");
  }
  return result;
}

DeepPromptSet export_type_prompts(const TypePrompterModel& model) {
  return model.prompts().frozen_copy();
}

double type_accuracy(const TypePrompterModel& model, const std::vector<QAExample>& data,
                     const Vocabulary& vocab) {
  std::size_t n = 0, correct = 0;
  for (const QAExample& ex : data) {
    const auto t = type_of(ex.kind);
    if (!t) continue;
    ++n;
    correct += model.classify(type_input_ids(ex.question, vocab)).label == *t;
  }
  return n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
}

}  // namespace pei
