// SPDX-License-Identifier: Apache-2.0
#include "pei/pipeline.hpp"

#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace pei {

using json = nlohmann::json;

namespace {

Rng component_rng(const TrainConfig& c, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(c.seed), static_cast<std::uint32_t>(c.seed >> 32),
                    static_cast<std::uint32_t>(tag)};
  return Rng(seq);
}

enum : std::uint64_t { kQaInit = 1, kKnowledgeInit, kTypeInit, kUnifiedInit, kQaOrder,
                       kKnowledgeOrder, kTypeOrder, kUnifiedOrder };

LoopOptions loop(const TrainConfig& c, std::size_t steps, double lr, std::uint64_t tag) {
  LoopOptions o;
  o.steps = steps;
  o.batch_size = c.batch_size;
  o.lr = lr;
  o.warmup_ratio = c.warmup_ratio;
  o.weight_decay = c.weight_decay;
  o.seed = component_rng(c, tag)();
  return o;
}

void keep(LogSink sink, const std::vector<LossLogEntry>& log) {
  if (sink != nullptr) sink->insert(sink->end(), log.begin(), log.end());
}

std::string join_vocab(const Vocabulary& v) {
  std::string s;
  for (const std::string& t : v.tokens()) s += t + "\n";
  return s;
}

Vocabulary vocab_from_header(const Checkpoint& ckpt) {
  Vocabulary v;
  std::istringstream is(ckpt.require("vocab"));
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    if (n++ < 5) continue;  // reserved tokens are already present
    v.add(line);
  }
  return v;
}

}  // namespace

std::filesystem::path artifact_root() {
  const char* env = std::getenv("PEI_ARTIFACT_ROOT");
  return env != nullptr && *env != '\0' ? std::filesystem::path(env) : std::filesystem::path("artifacts");
}

MissingStageError::MissingStageError(const std::string& stage, const std::filesystem::path& path)
    : std::runtime_error("missing upstream checkpoint of stage '" + stage + "' (expected " +
                         path.string() + ")") {}

void stamp(Checkpoint& ckpt, const TrainConfig& config, const std::string& stage,
           const Vocabulary& vocab) {
  ckpt.header["stage"] = stage;
  ckpt.header["config"] = config.to_text();
  ckpt.header["config.digest"] = config.digest();
  ckpt.header["variant"] = std::string(variant_name(config.variant()));
  ckpt.header["vocab"] = join_vocab(vocab);
}

void require_stage(const Checkpoint& ckpt, const std::string& stage) {
  auto it = ckpt.header.find("stage");
  if (it == ckpt.header.end() || it->second != stage) {
    throw std::runtime_error("checkpoint is not a '" + stage + "' checkpoint (found '" +
                             (it == ckpt.header.end() ? std::string("none") : it->second) + "')");
  }
}

// ---- data --------------------------------------------------------------------

Dataset generate_data(const TrainConfig& c) {
  const World world = generate_world(c.world_seed, c.entities, c.relations);
  GeneratorOptions opts;
  opts.min_distractors = c.min_distractors;
  opts.max_distractors = c.max_distractors;
  opts.related_distractor_share = c.related_distractors;
  opts.noise = c.noise;
  Dataset d;
  d.vocab = Vocabulary::for_world(world);
  d.train = generate_dataset(world, c.train_size, c.world_seed * 3 + 1, false, opts);
  d.dev = generate_dataset(world, c.dev_size, c.world_seed * 3 + 2, false, opts);
  d.singlehop = generate_dataset(world, c.singlehop_size, c.world_seed * 3 + 3, true, opts);
  return d;
}

void write_data(const Dataset& data, const std::filesystem::path& dir) {
  write_dataset(dir / "train.jsonl", data.train);
  write_dataset(dir / "dev.jsonl", data.dev);
  write_dataset(dir / "singlehop.jsonl", data.singlehop);
  data.vocab.save(dir / "vocab.txt");
}

Dataset read_data(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "train.jsonl")) {
    throw MissingStageError("generate-data", dir / "train.jsonl");
  }
  Dataset d;
  d.vocab = Vocabulary::load(dir / "vocab.txt");
  d.train = read_dataset(dir / "train.jsonl");
  d.dev = read_dataset(dir / "dev.jsonl");
  if (std::filesystem::exists(dir / "singlehop.jsonl")) d.singlehop = read_dataset(dir / "singlehop.jsonl");
  return d;
}

// ---- stage 1 -----------------------------------------------------------------

namespace {

std::unique_ptr<UnifiedPrompter> plain_model(const TrainConfig& c, const Vocabulary& vocab) {
  Rng rng = component_rng(c, kQaInit);
  UnifiedOptions plain = UnifiedOptions::plain();
  plain.support_weight = c.support_weight;
  auto m = std::make_unique<UnifiedPrompter>(c.unified_model(vocab.size()),
                                             c.knowledge_model(vocab.size()), plain, rng);
  m->set_vocabulary(vocab);
  return m;
}

}  // namespace

Checkpoint pretrain_singlehop(const TrainConfig& c, const Dataset& data, LogSink qa_log,
                              LogSink knowledge_log) {
  if (data.singlehop.empty()) throw std::invalid_argument("pretrain: no single-hop examples");
  auto qa = plain_model(c, data.vocab);
  {
    const auto log = run_training(
        qa->trainable(), data.singlehop.size(),
        [&](std::size_t i) { return qa->example_loss(data.singlehop[i]); },
        loop(c, c.pretrain_steps, c.pretrain_lr, kQaOrder));
    keep(qa_log, log);
  }

  Rng krng = component_rng(c, kKnowledgeInit);
  KnowledgeBackbone kb(c.knowledge_model(data.vocab.size()), krng);
  const KnowledgePrompter kp(kb, nullptr, c.knowledge_slots);
  {
    const auto log = run_training(
        kb.params, data.singlehop.size(),
        [&](std::size_t i) {
          const QAExample& ex = data.singlehop[i];
          std::vector<std::vector<std::size_t>> sents;
          for (const Tokens& s : ex.sentences) sents.push_back(data.vocab.ids(s));
          const Tensor states = kb.encoder.encode_embeddings(
              kp.step_input(data.vocab.ids(ex.question), sents, {}));
          const Tensor slots = kb.decoder.decode(states, c.knowledge_slots);
          const std::size_t label[] = {data.vocab.id(tokenize(ex.answer).at(0))};
          return cross_entropy_from_logits(kb.answer_logits(slots), label);
        },
        loop(c, c.pretrain_steps, c.pretrain_lr, kKnowledgeOrder));
    keep(knowledge_log, log);
  }

  Checkpoint ckpt;
  ckpt.put("", qa->backbone().params);
  ckpt.put("", qa->head_params());
  ckpt.put("", kb.params);
  stamp(ckpt, c, "pretrain-singlehop", data.vocab);
  ckpt.header["pretrained"] = "1";
  return ckpt;
}

Checkpoint untrained_backbone(const TrainConfig& c, const Dataset& data, const Checkpoint& pretrained) {
  require_stage(pretrained, "pretrain-singlehop");
  auto qa = plain_model(c, data.vocab);
  Checkpoint ckpt;
  ckpt.put("", qa->backbone().params);
  ckpt.put("", qa->head_params());
  for (const auto& [name, t] : pretrained.tensors) {
    if (name.rfind("kenc.", 0) == 0 || name.rfind("kdec.", 0) == 0) ckpt.tensors[name] = t;
  }
  stamp(ckpt, c, "pretrain-singlehop", data.vocab);
  ckpt.header["pretrained"] = "0";
  return ckpt;
}

// ---- stage 2 -----------------------------------------------------------------

Checkpoint train_type_stage(const TrainConfig& c, const Dataset& data, const Checkpoint& backbone,
                            LogSink log, double* dev_accuracy) {
  require_stage(backbone, "pretrain-singlehop");
  Rng scratch(0);
  QABackbone qa(c.unified_model(data.vocab.size()), scratch);
  backbone.restore("", qa.params);
  Rng rng = component_rng(c, kTypeInit);
  TypePrompterModel model(qa, c.type_prompt_len, rng);
  TypeTrainOptions opts;
  const LoopOptions lo = loop(c, c.type_steps, c.type_lr, kTypeOrder);
  opts.steps = lo.steps;
  opts.batch_size = lo.batch_size;
  opts.lr = lo.lr;
  opts.warmup_ratio = lo.warmup_ratio;
  opts.weight_decay = 0.0;
  opts.seed = lo.seed;
  const TypeTrainResult r = train_type_prompter(model, data.train, data.vocab, opts);
  keep(log, r.log);
  if (dev_accuracy != nullptr) *dev_accuracy = type_accuracy(model, data.dev, data.vocab);
  Checkpoint ckpt;
  const DeepPromptSet exported = export_type_prompts(model);
  exported.save_to(ckpt);
  ckpt.put("", model.head_params());
  stamp(ckpt, c, "train-type-prompter", data.vocab);
  ckpt.header["type.backbone_digest_before"] = r.backbone_digest_before;
  ckpt.header["type.backbone_digest_after"] = r.backbone_digest_after;
  ckpt.header["type.pt_digest"] = content_digest(exported.params());
  ckpt.header["type.backbone_pretrained"] = backbone.require("pretrained");
  return ckpt;
}

// ---- stage 3 -----------------------------------------------------------------

namespace {

std::unique_ptr<UnifiedPrompter> unified_model(const TrainConfig& c, const Vocabulary& vocab) {
  Rng rng = component_rng(c, kUnifiedInit);
  auto m = std::make_unique<UnifiedPrompter>(c.unified_model(vocab.size()),
                                             c.knowledge_model(vocab.size()),
                                             UnifiedOptions::from(c), rng);
  m->set_vocabulary(vocab);
  return m;
}

}  // namespace

Checkpoint train_unified_stage(const TrainConfig& c, const Dataset& data, const Checkpoint& backbone,
                               const Checkpoint* type_prompts, LogSink log) {
  require_stage(backbone, "pretrain-singlehop");
  auto model = unified_model(c, data.vocab);
  model->load_backbone(backbone);
  if (c.use_implicit) model->load_knowledge_backbone(backbone);
  if (c.use_type_prompts) {
    if (type_prompts == nullptr) {
      throw MissingStageError("train-type-prompter", "type prompter checkpoint");
    }
    require_stage(*type_prompts, "train-type-prompter");
    model->set_type_prompts(DeepPromptSet::load_from(*type_prompts, "pt"));
    if (content_digest(model->type_prompts()->params()) != type_prompts->require("type.pt_digest")) {
      throw std::runtime_error("type prompts differ from the exported digest");
    }
  }
  const UnifiedTrainResult r = train_unified(*model, data.train, loop(c, c.unified_steps, c.unified_lr, kUnifiedOrder));
  keep(log, r.log);
  Checkpoint ckpt;
  model->save_to(ckpt);
  stamp(ckpt, c, "train-knowledge-unified", data.vocab);
  for (const auto& [k, v] : r.frozen_digest_before) ckpt.header["frozen." + k + ".before"] = v;
  for (const auto& [k, v] : r.frozen_digest_after) ckpt.header["frozen." + k + ".after"] = v;
  if (type_prompts != nullptr && c.use_type_prompts) {
    ckpt.header["type.pt_digest"] = type_prompts->require("type.pt_digest");
    ckpt.header["type.backbone_digest_before"] = type_prompts->require("type.backbone_digest_before");
    ckpt.header["type.backbone_digest_after"] = type_prompts->require("type.backbone_digest_after");
  }
  if (c.use_implicit) ckpt.header["knowledge.backbone_digest_pretrain"] = [&] {
    Rng scratch(0);
    KnowledgeBackbone kb(c.knowledge_model(data.vocab.size()), scratch);
    backbone.restore("", kb.params);
    return content_digest(kb.params);
  }();
  return ckpt;
}

LoadedModel load_unified(const Checkpoint& ckpt) {
  require_stage(ckpt, "train-knowledge-unified");
  LoadedModel out;
  out.config = TrainConfig::parse(ckpt.require("config"));
  out.vocab = std::make_unique<Vocabulary>(vocab_from_header(ckpt));
  out.model = unified_model(out.config, *out.vocab);
  out.model->load_from(ckpt);
  return out;
}

// ---- prediction and evaluation -------------------------------------------------

std::vector<ExamplePrediction> predict_all(const UnifiedPrompter& model,
                                           const std::vector<QAExample>& examples,
                                           bool with_subquestions) {
  std::vector<ExamplePrediction> out;
  out.reserve(examples.size());
  for (const QAExample& ex : examples) out.push_back(model.predict_example(ex, with_subquestions));
  return out;
}

void write_predictions(const std::filesystem::path& path,
                       const std::vector<ExamplePrediction>& preds) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write predictions " + path.string());
  for (const ExamplePrediction& p : preds) {
    json rec;
    rec["id"] = p.id;
    rec["answer"] = p.answer.text;
    rec["support"] = p.support.indices();
    if (!p.sub_answers.empty()) rec["sub_answers"] = p.sub_answers;
    os << rec.dump() << '\n';
  }
}

std::vector<ExamplePrediction> read_predictions(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read predictions " + path.string());
  std::vector<ExamplePrediction> out;
  std::string line;
  for (std::size_t n = 1; std::getline(is, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json rec = json::parse(line);
      ExamplePrediction p;
      p.id = rec.at("id").get<std::string>();
      p.answer.text = rec.at("answer").get<std::string>();
      const auto support = rec.at("support").get<std::vector<std::size_t>>();
      for (std::size_t i : support) {
        if (p.support.decisions.size() <= i) p.support.decisions.resize(i + 1, false);
        p.support.decisions[i] = true;
      }
      if (rec.contains("sub_answers")) p.sub_answers = rec["sub_answers"].get<std::vector<std::string>>();
      out.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw DatasetFormatError(n, "<prediction>", e.what());
    }
  }
  return out;
}

MetricsReport evaluate(const std::vector<ExamplePrediction>& preds, const std::vector<QAExample>& gold) {
  std::map<std::string, const ExamplePrediction*> by_id;
  bool any_sub = false;
  for (const ExamplePrediction& p : preds) {
    by_id[p.id] = &p;
    any_sub = any_sub || !p.sub_answers.empty();
  }
  std::vector<ExampleScore> scores;
  std::vector<std::optional<SubQuestionOutcome>> outcomes;
  static const ExamplePrediction kEmpty;
  for (const QAExample& ex : gold) {
    auto it = by_id.find(ex.id);
    const ExamplePrediction& p = it == by_id.end() ? kEmpty : *it->second;
    ExampleScore s;
    s.id = ex.id;
    s.answer = answer_em_f1(p.answer.text, ex.answer);
    const std::vector<std::size_t> idx = p.support.indices();
    const std::vector<std::size_t> gidx = ex.support_indices();
    s.joint = support_and_joint({idx.begin(), idx.end()}, {gidx.begin(), gidx.end()}, s.answer);
    scores.push_back(s);
    if (any_sub && ex.kind != QuestionKind::singlehop) {
      if (ex.subquestions.size() < 2 || p.sub_answers.size() < 2) {
        outcomes.push_back(std::nullopt);
      } else {
        outcomes.push_back(SubQuestionOutcome{
            s.answer.em > 0,
            answer_em_f1(p.sub_answers[0], ex.subquestions[0].answer).em > 0,
            answer_em_f1(p.sub_answers[1], ex.subquestions[1].answer).em > 0});
      }
    }
  }
  MetricsReport r = MetricsReport::aggregate(std::move(scores));
  if (any_sub) r.subquestions = subquestion_analysis(outcomes);
  return r;
}

// ---- ablation ------------------------------------------------------------------

MetricsReport AblationReport::mean(AblationVariant v) const {
  MetricsReport m;
  std::size_t n = 0;
  for (const AblationRow& r : rows) {
    if (r.variant != v) continue;
    ++n;
    m.ans_em += r.dev.ans_em;
    m.ans_f1 += r.dev.ans_f1;
    m.sup_em += r.dev.sup_em;
    m.sup_f1 += r.dev.sup_f1;
    m.joint_em += r.dev.joint_em;
    m.joint_f1 += r.dev.joint_f1;
    m.count = r.dev.count;
  }
  if (n > 0) {
    for (double* x : {&m.ans_em, &m.ans_f1, &m.sup_em, &m.sup_f1, &m.joint_em, &m.joint_f1}) {
      *x /= static_cast<double>(n);
    }
  }
  return m;
}

std::size_t AblationReport::full_wins(AblationVariant v) const {
  std::map<std::uint64_t, double> full;
  for (const AblationRow& r : rows) {
    if (r.variant == AblationVariant::full) full[r.seed] = r.dev.joint_f1;
  }
  std::size_t wins = 0;
  for (const AblationRow& r : rows) {
    if (r.variant == v && full.count(r.seed) && full[r.seed] >= r.dev.joint_f1) ++wins;
  }
  return wins;
}

std::string AblationReport::to_text() const {
  std::ostringstream os;
  os.precision(2);
  os << std::fixed;
  os << "config_digest = " << config_digest << "\n\n";
  os << "variant            ans_f1   sup_f1   joint_f1   d_ans   d_sup   d_joint\n";
  const MetricsReport full = mean(AblationVariant::full);
  for (AblationVariant v : all_variants()) {
    const MetricsReport m = mean(v);
    os << std::string(variant_name(v)) << std::string(19 - variant_name(v).size(), ' ')
       << m.ans_f1 << "   " << m.sup_f1 << "   " << m.joint_f1 << "      "
       << full.ans_f1 - m.ans_f1 << "   " << full.sup_f1 - m.sup_f1 << "   "
       << full.joint_f1 - m.joint_f1 << '\n';
  }
  os << "\nper seed (dev joint_f1):\n";
  for (const AblationRow& r : rows) {
    os << "seed " << r.seed << ' ' << variant_name(r.variant) << " ans_f1=" << r.dev.ans_f1
       << " sup_f1=" << r.dev.sup_f1 << " joint_f1=" << r.dev.joint_f1 << '\n';
  }
  std::set<std::uint64_t> seeds;
  for (const AblationRow& r : rows) seeds.insert(r.seed);
  os << "\nfull >= variant in joint_f1 (seeds of " << seeds.size() << "):\n";
  for (AblationVariant v : all_variants()) {
    if (v == AblationVariant::full) continue;
    os << variant_name(v) << " = " << full_wins(v) << '\n';
  }
  return os.str();
}

std::string AblationReport::to_csv() const {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << "seed,variant,ans_em,ans_f1,sup_em,sup_f1,joint_em,joint_f1\n";
  for (const AblationRow& r : rows) {
    os << r.seed << ',' << variant_name(r.variant) << ',' << r.dev.ans_em << ',' << r.dev.ans_f1
       << ',' << r.dev.sup_em << ',' << r.dev.sup_f1 << ',' << r.dev.joint_em << ','
       << r.dev.joint_f1 << '\n';
  }
  return os.str();
}

AblationReport ablate(const TrainConfig& config, const Dataset& data,
                      const std::optional<std::filesystem::path>& dir) {
  AblationReport report;
  report.config_digest = config.digest();
  for (std::uint64_t seed : config.ablation_seeds) {
    TrainConfig base = config;
    base.seed = seed;
    const std::string tag = "seed" + std::to_string(seed);
    std::vector<LossLogEntry> qa_log, k_log, t_log, t0_log;
    const Checkpoint pre = pretrain_singlehop(base, data, &qa_log, &k_log);
    const Checkpoint raw = untrained_backbone(base, data, pre);
    const Checkpoint type_pre = train_type_stage(base, data, pre, &t_log);
    const TrainConfig np = base.for_variant(AblationVariant::no_pretrain);
    const Checkpoint type_raw = train_type_stage(np, data, raw, &t0_log);
    if (dir) {
      save_checkpoint(*dir / (tag + "-pretrain.ckpt"), pre);
      save_checkpoint(*dir / (tag + "-type.ckpt"), type_pre);
      save_checkpoint(*dir / (tag + "-type-no_pretrain.ckpt"), type_raw);
      write_loss_csv(*dir / "logs" / (tag + "-pretrain-qa.csv"), qa_log);
      write_loss_csv(*dir / "logs" / (tag + "-pretrain-knowledge.csv"), k_log);
      write_loss_csv(*dir / "logs" / (tag + "-type.csv"), t_log);
      write_loss_csv(*dir / "logs" / (tag + "-type-no_pretrain.csv"), t0_log);
    }
    for (AblationVariant v : all_variants()) {
      const TrainConfig vc = base.for_variant(v);
      const bool raw_backbone = v == AblationVariant::no_pretrain;
      std::vector<LossLogEntry> u_log;
      const Checkpoint unified = train_unified_stage(vc, data, raw_backbone ? raw : pre,
                                                     raw_backbone ? &type_raw : &type_pre, &u_log);
      const LoadedModel loaded = load_unified(unified);
      AblationRow row;
      row.seed = seed;
      row.variant = v;
      row.dev = evaluate(predict_all(*loaded.model, data.dev, false), data.dev);
      row.dev.examples.clear();
      report.rows.push_back(std::move(row));
      if (dir) {
        save_checkpoint(*dir / (tag + "-" + std::string(variant_name(v)) + ".ckpt"), unified);
        write_loss_csv(*dir / "logs" / (tag + "-unified-" + std::string(variant_name(v)) + ".csv"), u_log);
      }
    }
  }
  return report;
}

}  // namespace pei
