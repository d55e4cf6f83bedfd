// SPDX-License-Identifier: Apache-2.0
#include "pei/unified_prompter.hpp"

#include <cmath>
#include <stdexcept>

namespace pei {

std::string_view answer_type_name(AnswerType t) {
  switch (t) {
    case AnswerType::yes: return "yes";
    case AnswerType::no: return "no";
    case AnswerType::span: return "span";
  }
  return "span";
}

AnswerType answer_type_of(const std::string& answer) {
  if (answer == "yes") return AnswerType::yes;
  if (answer == "no") return AnswerType::no;
  return AnswerType::span;
}

std::vector<std::size_t> UnifiedInput::sentence_word_starts() const {
  std::vector<std::size_t> starts(marker_positions.size(), word_positions.size());
  for (std::size_t w = word_sentence.size(); w-- > 0;) starts[word_sentence[w]] = w;
  // Empty sentences start where the next one does.
  for (std::size_t s = starts.size(); s-- > 1;) {
    if (starts[s - 1] > starts[s]) starts[s - 1] = starts[s];
  }
  return starts;
}

std::vector<std::size_t> SupportPrediction::indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    if (decisions[i]) out.push_back(i);
  }
  return out;
}

// ---- loss and decoding -----------------------------------------------------

Tensor unified_loss(const UnifiedLogits& logits, const UnifiedGold& gold, double lambda) {
  const std::size_t type_label[] = {static_cast<std::size_t>(gold.type)};
  Tensor loss = cross_entropy_from_logits(logits.type, type_label);
  if (gold.type == AnswerType::span) {
    const std::size_t w = logits.start.cols();
    if (gold.start > gold.end || gold.end >= w) {
      throw std::out_of_range("unified_loss: gold span [" + std::to_string(gold.start) + ", " +
                              std::to_string(gold.end) + "] lies outside the " +
                              std::to_string(w) + "-word context");
    }
    const std::size_t s[] = {gold.start};
    const std::size_t e[] = {gold.end};
    loss = add(loss, add(cross_entropy_from_logits(logits.start, s),
                         cross_entropy_from_logits(logits.end, e)));
  }
  if (gold.support.size() != logits.support.cols()) {
    throw ShapeError("unified_loss: " + std::to_string(gold.support.size()) +
                     " support labels for " + std::to_string(logits.support.cols()) + " sentences");
  }
  if (!gold.support.empty() && lambda != 0.0) {
    loss = add(loss, scale(bce_with_logits(logits.support, gold.support), lambda));
  }
  return loss;
}

std::pair<std::size_t, std::size_t> best_span(std::span<const double> start,
                                              std::span<const double> end, std::size_t max_len) {
  if (start.empty() || start.size() != end.size()) {
    throw std::invalid_argument("best_span: need matching non-empty score vectors");
  }
  std::pair<std::size_t, std::size_t> best{0, 0};
  double best_score = -INFINITY;
  for (std::size_t i = 0; i < start.size(); ++i) {
    for (std::size_t j = i; j < end.size() && j - i < max_len; ++j) {
      const double s = start[i] + end[j];
      if (s > best_score) {
        best_score = s;
        best = {i, j};
      }
    }
  }
  return best;
}

UnifiedGold gold_targets(const QAExample& example, const UnifiedInput& input) {
  UnifiedGold g;
  g.type = answer_type_of(example.answer);
  for (int l : example.support_labels) g.support.push_back(l != 0 ? 1.0 : 0.0);
  if (g.type == AnswerType::span) {
    const auto sp = gold_answer_span(example);
    if (!sp) throw std::out_of_range("gold answer '" + example.answer + "' of " + example.id + " is not in the context");
    const std::size_t base = input.sentence_word_starts().at(sp->sentence);
    g.start = base + sp->start;
    g.end = base + sp->end;
  }
  return g;
}

// ---- options -----------------------------------------------------------------

UnifiedOptions UnifiedOptions::from(const TrainConfig& c) {
  UnifiedOptions o;
  o.unified_prompt_len = c.unified_prompt_len;
  o.prefix_len = c.prefix_len;
  o.knowledge_slots = c.knowledge_slots;
  o.use_type_prompts = c.use_type_prompts;
  o.use_implicit = c.use_implicit;
  o.train_mode = c.knowledge_train_mode;
  o.eval_mode = c.knowledge_eval_mode;
  o.support_weight = c.support_weight;
  return o;
}

UnifiedOptions UnifiedOptions::plain() {
  UnifiedOptions o;
  o.unified_prompt_len = 0;
  o.use_type_prompts = false;
  o.use_implicit = false;
  return o;
}

// ---- model -------------------------------------------------------------------

UnifiedPrompter::UnifiedPrompter(const ModelConfig& qa_config, const ModelConfig& knowledge_config,
                                 const UnifiedOptions& options, Rng& rng)
    : options_(options) {
  qa_ = std::make_unique<QABackbone>(qa_config, rng);
  const std::size_t d = qa_config.d_model;
  type_head_ = Linear(heads_, "head.type", d, 3, rng);
  start_head_ = Linear(heads_, "head.start", d, 1, rng);
  end_head_ = Linear(heads_, "head.end", d, 1, rng);
  support_head_ = Linear(heads_, "head.support", d, 1, rng);
  if (options.unified_prompt_len > 0) {
    pu_ = std::make_unique<DeepPromptSet>("pu", PromptRole::unified_prompt, qa_config.layers,
                                          options.unified_prompt_len, d, rng);
  }
  if (options.use_implicit) {
    kb_ = std::make_unique<KnowledgeBackbone>(knowledge_config, rng);
    kb_->params.set_requires_grad(false);
    if (options.prefix_len > 0) {
      pk_ = std::make_unique<PrefixPair>("pk", knowledge_config.layers, knowledge_config.layers,
                                         options.prefix_len, knowledge_config.d_model, rng);
    }
    kproj_ = Linear(kproj_store_, "kproj", knowledge_config.d_model, d, rng);
    if (knowledge_config.d_model == d) {
      auto w = kproj_.weight.mutable_data();
      std::fill(w.begin(), w.end(), 0.0);
      for (std::size_t i = 0; i < d; ++i) w[i * d + i] = 1.0;
    }
  }
}

const Vocabulary& UnifiedPrompter::vocabulary() const {
  if (vocab_ == nullptr) throw std::logic_error("unified prompter: no vocabulary attached");
  return *vocab_;
}

void UnifiedPrompter::set_type_prompts(const DeepPromptSet& prompts) {
  if (!options_.use_type_prompts) {
    throw std::logic_error("type prompts supplied to a model built without them");
  }
  if (!prompts.frozen()) throw std::invalid_argument("type prompts must be exported frozen");
  if (prompts.layers() != qa_->config.layers || prompts.dim() != qa_->config.d_model) {
    throw std::invalid_argument("type prompts do not match the unified backbone");
  }
  pt_ = std::make_unique<DeepPromptSet>(prompts.frozen_copy());
}

void UnifiedPrompter::load_backbone(const Checkpoint& ckpt) {
  ckpt.restore("", qa_->params);
  ckpt.restore("", heads_);
}

void UnifiedPrompter::load_knowledge_backbone(const Checkpoint& ckpt) {
  if (!kb_) throw std::logic_error("model has no knowledge backbone");
  ckpt.restore("", kb_->params);
  kb_->params.set_requires_grad(false);
}

ParameterStore UnifiedPrompter::trainable() const {
  ParameterStore s;
  s.merge("", qa_->params);
  s.merge("", heads_);
  if (pu_) s.merge("", pu_->params());
  if (pk_) s.merge("", pk_->params());
  s.merge("", kproj_store_);
  return s;
}

ParameterStore UnifiedPrompter::frozen() const {
  ParameterStore s;
  if (pt_) s.merge("", pt_->params());
  if (kb_) s.merge("", kb_->params);
  return s;
}

ParameterStore UnifiedPrompter::registry() const {
  ParameterStore s = trainable();
  s.merge("", frozen());
  return s;
}

KnowledgePrompter UnifiedPrompter::knowledge_prompter() const {
  if (!kb_) throw std::logic_error("implicit knowledge is switched off");
  return KnowledgePrompter(*kb_, pk_.get(), options_.knowledge_slots);
}

KnowledgeSequence UnifiedPrompter::recall(const Tokens& question, const std::vector<Tokens>& chain) const {
  if (!options_.use_implicit) return {};
  const Vocabulary& v = vocabulary();
  std::vector<std::vector<std::size_t>> ids;
  for (const Tokens& s : chain) ids.push_back(v.ids(s));
  return knowledge_prompter().recall_chain(v.ids(question), ids);
}

std::vector<Tokens> UnifiedPrompter::chain_sentences(const QAExample& example, KnowledgeMode mode) {
  if (mode == KnowledgeMode::all) return example.sentences;
  std::vector<Tokens> out;
  for (std::size_t i : example.support_order) out.push_back(example.sentences.at(i));
  return out;
}

UnifiedInput UnifiedPrompter::build_input(const Tokens& question, const std::vector<Tokens>& sentences,
                                          const KnowledgeSequence& knowledge) const {
  const Vocabulary& v = vocabulary();
  const EncoderStack& enc = qa_->encoder;
  const std::size_t max_len = qa_->config.max_seq_len;
  UnifiedInput in;
  in.unified_prompt_rows = pu_ ? pu_->length() : 0;
  in.type_prompt_rows = (options_.use_type_prompts && pt_) ? pt_->length() : 0;
  if (options_.use_type_prompts && !pt_) {
    throw std::logic_error("unified input: type prompts are enabled but none were installed");
  }
  std::size_t pos = 0;
  auto grow = [&](std::size_t n, const std::string& what) {
    pos += n;
    if (pos > max_len) {
      throw std::length_error("unified input overflows max_seq_len " + std::to_string(max_len) +
                              " at " + what + " (length " + std::to_string(pos) + ")");
    }
  };
  grow(in.unified_prompt_rows, "unified prompts P_u");
  grow(in.type_prompt_rows, "type prompts P_t");
  std::vector<Tensor> parts;
  if (!knowledge.empty()) {
    std::vector<Tensor> ks(knowledge.begin(), knowledge.end());
    const Tensor stacked = ks.size() == 1 ? ks[0] : concat(ks, 0);
    in.knowledge_rows = stacked.rows();
    grow(in.knowledge_rows, "knowledge slots K_n");
    parts.push_back(enc.tag_segment(kproj_(stacked), EncoderStack::kKnowledgeSegment));
  }
  in.cls = pos;
  grow(1, "[CLS]");
  in.token_ids.push_back(Vocabulary::kCls);
  in.question_start = pos;
  in.question_len = question.size();
  grow(question.size(), "question");
  for (const std::string& t : question) in.token_ids.push_back(v.id(t));
  in.sep = pos;
  grow(1, "[SEP]");
  in.token_ids.push_back(Vocabulary::kSep);
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    const std::size_t first = pos;
    grow(sentences[s].size() + 1, "context sentence " + std::to_string(s));
    for (std::size_t k = 0; k < sentences[s].size(); ++k) {
      in.word_positions.push_back(first + k);
      in.word_sentence.push_back(s);
      in.word_offset.push_back(k);
      in.words.push_back(sentences[s][k]);
      in.token_ids.push_back(v.id(sentences[s][k]));
    }
    in.marker_positions.push_back(first + sentences[s].size());
    in.token_ids.push_back(Vocabulary::kSent);
  }
  parts.push_back(enc.embed_tokens(in.token_ids));
  in.rows = parts.size() == 1 ? parts[0] : concat(parts, 0);
  std::vector<const DeepPromptSet*> sets;
  if (pu_) sets.push_back(pu_.get());
  if (in.type_prompt_rows > 0) sets.push_back(pt_.get());
  in.ctx = inject(std::span<const DeepPromptSet* const>(sets), enc);
  // knowledge slots carry only their segment; text keeps its positions
  in.ctx.unpositioned_rows = in.knowledge_rows;
  return in;
}

UnifiedLogits UnifiedPrompter::forward(const UnifiedInput& in) const {
  if (in.word_positions.empty()) throw std::invalid_argument("predict: no context tokens");
  const Tensor h = qa_->encoder.encode_embeddings(in.rows, in.ctx);
  UnifiedLogits out;
  out.type = type_head_(slice(h, 0, in.cls, 1));
  const Tensor words = embedding_gather(h, in.word_positions);
  out.start = transpose(start_head_(words));
  out.end = transpose(end_head_(words));
  // boundary state plus the mean of its sentence's word states
  const std::size_t n = in.marker_positions.size();
  std::vector<double> pool(n * h.rows(), 0.0);
  std::vector<std::size_t> len(n, 0);
  for (std::size_t s : in.word_sentence) ++len[s];
  for (std::size_t w = 0; w < in.word_positions.size(); ++w) {
    const std::size_t s = in.word_sentence[w];
    pool[s * h.rows() + in.word_positions[w]] = 1.0 / static_cast<double>(len[s]);
  }
  const Tensor sent = add(embedding_gather(h, in.marker_positions),
                          matmul(Tensor::from({n, h.rows()}, std::move(pool)), h));
  out.support = transpose(support_head_(sent));
  return out;
}

std::pair<AnswerPrediction, SupportPrediction> UnifiedPrompter::predict(
    const Tokens& question, const std::vector<Tokens>& sentences,
    const KnowledgeSequence& knowledge) const {
  const UnifiedInput in = build_input(question, sentences, knowledge);
  const UnifiedLogits lg = forward(in);
  AnswerPrediction a;
  const Tensor probs = softmax_rows(lg.type.detach());
  a.type_probs = {probs[0], probs[1], probs[2]};
  std::size_t arg = 0;
  for (std::size_t i = 1; i < 3; ++i) {
    if (a.type_probs[i] > a.type_probs[arg]) arg = i;
  }
  a.type = static_cast<AnswerType>(arg);
  const auto [s, e] = best_span(lg.start.data(), lg.end.data());
  a.start = s;
  a.end = e;
  if (a.type == AnswerType::span) {
    for (std::size_t w = s; w <= e; ++w) {
      if (w > s) a.text += ' ';
      a.text += in.words[w];
    }
  } else {
    a.text = std::string(answer_type_name(a.type));
  }
  SupportPrediction sp;
  for (double z : lg.support.data()) {
    const double p = 1.0 / (1.0 + std::exp(-z));
    sp.probs.push_back(p);
    sp.decisions.push_back(p > 0.5);
  }
  return {a, sp};
}

Tensor UnifiedPrompter::example_loss(const QAExample& ex) const {
  const KnowledgeSequence k = recall(ex.question, chain_sentences(ex, options_.train_mode));
  const UnifiedInput in = build_input(ex.question, ex.sentences, k);
  return unified_loss(forward(in), gold_targets(ex, in), options_.support_weight);
}

ExamplePrediction UnifiedPrompter::predict_example(const QAExample& ex, bool with_subquestions) const {
  ExamplePrediction out;
  out.id = ex.id;
  const KnowledgeSequence k = recall(ex.question, chain_sentences(ex, options_.eval_mode));
  std::tie(out.answer, out.support) = predict(ex.question, ex.sentences, k);
  if (with_subquestions) {
    for (std::size_t i = 0; i < ex.subquestions.size(); ++i) {
      const Tokens& q = ex.subquestions[i].question;
      std::vector<Tokens> chain;
      if (options_.eval_mode == KnowledgeMode::all) {
        chain = ex.sentences;
      } else if (i < ex.support_order.size()) {
        chain = {ex.sentences.at(ex.support_order[i])};
      }
      out.sub_answers.push_back(predict(q, ex.sentences, recall(q, chain)).first.text);
    }
  }
  return out;
}

void UnifiedPrompter::save_to(Checkpoint& ckpt) const {
  ckpt.put("", qa_->params);
  ckpt.put("", heads_);
  if (pu_) pu_->save_to(ckpt);
  if (pt_) pt_->save_to(ckpt);
  if (kb_) ckpt.put("", kb_->params);
  if (pk_) pk_->save_to(ckpt);
  if (kb_) ckpt.put("", kproj_store_);
  qa_->config.write_header(ckpt.header, "model.qa.");
  if (kb_) kb_->config.write_header(ckpt.header, "model.knowledge.");
}

void UnifiedPrompter::load_from(const Checkpoint& ckpt) {
  ckpt.restore("", qa_->params);
  ckpt.restore("", heads_);
  if (pu_) ckpt.restore("", pu_->params());
  if (options_.use_type_prompts) {
    DeepPromptSet loaded = DeepPromptSet::load_from(ckpt, "pt");
    loaded.set_frozen(true);
    set_type_prompts(loaded);
  }
  if (kb_) {
    ckpt.restore("", kb_->params);
    kb_->params.set_requires_grad(false);
    ckpt.restore("", kproj_store_);
  }
  if (pk_) ckpt.restore("", pk_->params());
}

// ---- training ----------------------------------------------------------------

std::map<std::string, std::string> frozen_digests(const UnifiedPrompter& model) {
  std::map<std::string, std::string> out;
  if (model.type_prompts()) out["pt"] = content_digest(model.type_prompts()->params());
  if (model.knowledge_backbone()) out["kbackbone"] = content_digest(model.knowledge_backbone()->params);
  return out;
}

UnifiedTrainResult train_unified(UnifiedPrompter& model, const std::vector<QAExample>& data,
                                 const LoopOptions& options) {
  if (model.options().use_type_prompts && model.type_prompts() == nullptr) {
    throw std::invalid_argument("train_unified: exported type prompts P_t are missing");
  }
  const ParameterStore frozen = model.frozen();
  for (const auto& [name, t] : frozen.entries()) {
    if (t.requires_grad()) throw std::logic_error("train_unified: '" + name + "' must be frozen");
  }
  model.trainable().set_requires_grad(true);
  UnifiedTrainResult r;
  r.frozen_digest_before = frozen_digests(model);
  r.log = run_training(model.trainable(), data.size(),
                       [&](std::size_t i) { return model.example_loss(data[i]); }, options);
  r.frozen_digest_after = frozen_digests(model);
  if (r.frozen_digest_after != r.frozen_digest_before) {
    throw std::logic_error("train_unified: a frozen parameter group changed");
  }
  return r;
}

}  // namespace pei
