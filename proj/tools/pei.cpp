// SPDX-License-Identifier: Apache-2.0
// Command-line front end for the PEI lab.
#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "pei/pipeline.hpp"

namespace fs = std::filesystem;
using namespace pei;

namespace {

TrainConfig config_from(const std::string& path) {
  return path.empty() ? TrainConfig{} : TrainConfig::load(path);
}

Checkpoint need_checkpoint(const fs::path& path, const std::string& stage) {
  if (!fs::exists(path)) throw MissingStageError(stage, path);
  Checkpoint c = load_checkpoint(path);
  require_stage(c, stage);
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

std::vector<QAExample> read_examples(const fs::path& path, const std::string& format) {
  if (format == "hotpotqa") return read_hotpotqa(path);
  if (format != "native") throw std::invalid_argument("unknown --format '" + format + "'");
  return read_dataset(path);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PEI multi-hop QA lab"};
  app.require_subcommand(1);
  const fs::path root = artifact_root();
  std::string config_path;
  fs::path data_dir = root / "data";
  fs::path out;
  fs::path backbone = root / "ckpt" / "pretrain.ckpt";
  fs::path type_ckpt = root / "ckpt" / "type_prompter.ckpt";
  fs::path model = root / "ckpt" / "unified.ckpt";
  fs::path data_file, pred_file, gold_file, log_file;
  std::string format = "native";
  bool subquestions = false;

  auto* gen = app.add_subcommand("generate-data", "write the synthetic train/dev/single-hop sets");
  gen->add_option("--config", config_path, "key = value config file");
  gen->add_option("--out", data_dir, "output directory");

  auto* pre = app.add_subcommand("pretrain-singlehop", "stage 1: single-hop QA and knowledge backbones");
  pre->add_option("--config", config_path);
  pre->add_option("--data", data_dir, "dataset directory");
  pre->add_option("--out", backbone, "checkpoint to write");
  pre->add_option("--log", log_file, "loss CSV");

  auto* typ = app.add_subcommand("train-type-prompter", "stage 2: type prompts over the frozen backbone");
  typ->add_option("--config", config_path);
  typ->add_option("--data", data_dir);
  typ->add_option("--backbone", backbone, "stage 1 checkpoint");
  typ->add_option("--out", type_ckpt);
  typ->add_option("--log", log_file);

  auto* uni = app.add_subcommand("train-knowledge-unified", "stage 3: knowledge prefixes and unified prompter");
  uni->alias("train-unified");
  uni->add_option("--config", config_path);
  uni->add_option("--data", data_dir);
  uni->add_option("--backbone", backbone, "stage 1 checkpoint");
  uni->add_option("--type-prompts", type_ckpt, "stage 2 checkpoint");
  uni->add_option("--out", model);
  uni->add_option("--log", log_file);

  auto* prd = app.add_subcommand("predict", "write predictions for a dataset");
  prd->add_option("--model", model);
  prd->add_option("--data", data_file, "dataset file")->required();
  prd->add_option("--format", format, "native or hotpotqa");
  prd->add_option("--out", pred_file)->required();
  prd->add_flag("--subquestions", subquestions, "also answer sub-questions");

  auto* evl = app.add_subcommand("evaluate", "score predictions");
  evl->add_option("--pred", pred_file)->required();
  evl->add_option("--gold", gold_file)->required();
  evl->add_option("--format", format, "native or hotpotqa");
  evl->add_option("--out", out, "report path; a .csv of the sub-question table is written next to it")->required();

  auto* abl = app.add_subcommand("ablate", "all four variants over every configured seed");
  abl->add_option("--config", config_path);
  abl->add_option("--data", data_dir);
  abl->add_option("--out", out, "report directory");

  CLI11_PARSE(app, argc, argv);

  try {
    const auto t0 = std::chrono::steady_clock::now();
    if (gen->parsed()) {
      const TrainConfig c = config_from(config_path);
      const Dataset d = generate_data(c);
      write_data(d, data_dir);
      std::printf("wrote %zu train, %zu dev, %zu single-hop examples and %zu-token vocabulary to %s\n",
                  d.train.size(), d.dev.size(), d.singlehop.size(), d.vocab.size(), data_dir.c_str());
    } else if (pre->parsed()) {
      const TrainConfig c = config_from(config_path);
      const Dataset d = read_data(data_dir);
      std::vector<LossLogEntry> qa_log, k_log;
      const Checkpoint ckpt = pretrain_singlehop(c, d, &qa_log, &k_log);
      save_checkpoint(backbone, ckpt);
      if (log_file.empty()) log_file = root / "logs" / "pretrain.csv";
      write_loss_csv(log_file, qa_log);
      write_loss_csv(fs::path(log_file).replace_extension(".knowledge.csv"), k_log);
      std::printf("pretrain: final loss qa %.4f knowledge %.4f -> %s\n", qa_log.back().loss,
                  k_log.back().loss, backbone.c_str());
    } else if (typ->parsed()) {
      const TrainConfig c = config_from(config_path);
      const Dataset d = read_data(data_dir);
      std::vector<LossLogEntry> log;
      double acc = 0;
      const Checkpoint ckpt = train_type_stage(c, d, need_checkpoint(backbone, "pretrain-singlehop"), &log, &acc);
      save_checkpoint(type_ckpt, ckpt);
      if (log_file.empty()) log_file = root / "logs" / "type_prompter.csv";
      write_loss_csv(log_file, log);
      std::printf("type prompter: final loss %.4f, dev accuracy %.4f -> %s\n", log.back().loss, acc,
                  type_ckpt.c_str());
    } else if (uni->parsed()) {
      const TrainConfig c = config_from(config_path);
      const Dataset d = read_data(data_dir);
      const Checkpoint pre_ckpt = need_checkpoint(backbone, "pretrain-singlehop");
      std::optional<Checkpoint> tp;
      if (c.use_type_prompts) tp = need_checkpoint(type_ckpt, "train-type-prompter");
      std::vector<LossLogEntry> log;
      const Checkpoint ckpt = train_unified_stage(c, d, pre_ckpt, tp ? &*tp : nullptr, &log);
      save_checkpoint(model, ckpt);
      if (log_file.empty()) log_file = root / "logs" / "unified.csv";
      write_loss_csv(log_file, log);
      std::printf("unified: final loss %.4f -> %s\n", log.back().loss, model.c_str());
    } else if (prd->parsed()) {
      const LoadedModel m = load_unified(need_checkpoint(model, "train-knowledge-unified"));
      const auto examples = read_examples(data_file, format);
      write_predictions(pred_file, predict_all(*m.model, examples, subquestions));
      std::printf("wrote %zu predictions to %s\n", examples.size(), pred_file.c_str());
    } else if (evl->parsed()) {
      const MetricsReport r = evaluate(read_predictions(pred_file), read_examples(gold_file, format));
      write_text(out, r.to_text());
      if (r.subquestions) write_text(fs::path(out).replace_extension(".csv"), subquestion_csv(*r.subquestions));
      std::cout << r.to_text();
    } else if (abl->parsed()) {
      const TrainConfig c = config_from(config_path);
      const Dataset d = read_data(data_dir);
      if (out.empty()) out = root / "ablation";
      const AblationReport r = ablate(c, d, out);
      write_text(out / "report.txt", r.to_text());
      write_text(out / "report.csv", r.to_csv());
      std::cout << r.to_text();
    }
    std::fprintf(stderr, "done in %.1f s\n", seconds_since(t0));
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
