// SPDX-License-Identifier: Apache-2.0
#include "pei/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "pei/params.hpp"

namespace pei {

std::string_view knowledge_mode_name(KnowledgeMode mode) {
  return mode == KnowledgeMode::gold ? "gold" : "all";
}

std::string_view variant_name(AblationVariant v) {
  switch (v) {
    case AblationVariant::full: return "full";
    case AblationVariant::no_type_prompter: return "no_type_prompter";
    case AblationVariant::no_pretrain: return "no_pretrain";
    case AblationVariant::no_implicit: return "no_implicit";
  }
  return "unknown";
}

AblationVariant variant_from_name(std::string_view name) {
  for (AblationVariant v : all_variants()) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown ablation variant '" + std::string(name) + "'");
}

const std::vector<AblationVariant>& all_variants() {
  static const std::vector<AblationVariant> v = {AblationVariant::full,
                                                 AblationVariant::no_type_prompter,
                                                 AblationVariant::no_pretrain,
                                                 AblationVariant::no_implicit};
  return v;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::string fmt_double(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

struct Field {
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

#define PEI_SIZE(name)                                                        \
  {#name,                                                                     \
   {[](const TrainConfig& c) { return std::to_string(c.name); },              \
    [](TrainConfig& c, const std::string& v) { c.name = to_u64(#name, v); }}}
#define PEI_REAL(name)                                                        \
  {#name,                                                                     \
   {[](const TrainConfig& c) { return fmt_double(c.name); },                  \
    [](TrainConfig& c, const std::string& v) { c.name = to_double(#name, v); }}}
#define PEI_BOOL(name)                                                        \
  {#name,                                                                     \
   {[](const TrainConfig& c) { return std::string(c.name ? "true" : "false"); }, \
    [](TrainConfig& c, const std::string& v) { c.name = to_bool(#name, v); }}}
#define PEI_MODE(name)                                                        \
  {#name,                                                                     \
   {[](const TrainConfig& c) { return std::string(knowledge_mode_name(c.name)); }, \
    [](TrainConfig& c, const std::string& v) {                                \
      if (v == "gold") c.name = KnowledgeMode::gold;                          \
      else if (v == "all") c.name = KnowledgeMode::all;                       \
      else throw ConfigError("config key '" #name "': expected gold or all, got '" + v + "'"); \
    }}}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> f = {
      PEI_SIZE(seed),
      PEI_SIZE(world_seed),
      PEI_SIZE(entities),
      PEI_SIZE(relations),
      PEI_SIZE(train_size),
      PEI_SIZE(dev_size),
      PEI_SIZE(singlehop_size),
      PEI_SIZE(min_distractors),
      PEI_SIZE(max_distractors),
      PEI_REAL(related_distractors),
      PEI_BOOL(noise),
      PEI_SIZE(d_model),
      PEI_SIZE(layers),
      PEI_SIZE(heads),
      PEI_SIZE(ffn_dim),
      PEI_SIZE(max_seq_len),
      PEI_SIZE(k_d_model),
      PEI_SIZE(k_layers),
      PEI_SIZE(k_heads),
      PEI_SIZE(k_ffn_dim),
      PEI_SIZE(type_prompt_len),
      PEI_SIZE(unified_prompt_len),
      PEI_SIZE(prefix_len),
      PEI_SIZE(knowledge_slots),
      PEI_SIZE(batch_size),
      PEI_REAL(warmup_ratio),
      PEI_REAL(weight_decay),
      PEI_REAL(support_weight),
      PEI_REAL(pretrain_lr),
      PEI_SIZE(pretrain_steps),
      PEI_REAL(type_lr),
      PEI_SIZE(type_steps),
      PEI_REAL(unified_lr),
      PEI_SIZE(unified_steps),
      PEI_MODE(knowledge_train_mode),
      PEI_MODE(knowledge_eval_mode),
      PEI_BOOL(use_type_prompts),
      PEI_BOOL(use_pretrain),
      PEI_BOOL(use_implicit),
      PEI_BOOL(grid_mode),
      PEI_BOOL(analyze_subquestions),
      {"ablation_seeds",
       {[](const TrainConfig& c) {
          std::string s;
          for (std::size_t i = 0; i < c.ablation_seeds.size(); ++i) {
            if (i) s += ',';
            s += std::to_string(c.ablation_seeds[i]);
          }
          return s;
        },
        [](TrainConfig& c, const std::string& v) {
          c.ablation_seeds.clear();
          std::istringstream is(v);
          std::string part;
          while (std::getline(is, part, ',')) c.ablation_seeds.push_back(to_u64("ablation_seeds", trim(part)));
        }}},
  };
  return f;
}

#undef PEI_SIZE
#undef PEI_REAL
#undef PEI_BOOL
#undef PEI_MODE

}  // namespace

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, f] : fields()) out.push_back(name);
    return out;
  }();
  return k;
}

TrainConfig TrainConfig::parse(std::string_view text) {
  TrainConfig c;
  std::set<std::string> seen;
  std::istringstream is{std::string(text)};
  std::string raw;
  for (std::size_t n = 1; std::getline(is, raw); ++n) {
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(n) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = std::find_if(fields().begin(), fields().end(),
                           [&](const auto& f) { return f.first == key; });
    if (it == fields().end()) {
      throw ConfigError("config line " + std::to_string(n) + ": unknown key '" + key + "'");
    }
    if (!seen.insert(key).second) {
      throw ConfigError("config line " + std::to_string(n) + ": duplicate key '" + key + "'");
    }
    it->second.set(c, value);
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string TrainConfig::to_text() const {
  std::string out;
  for (const auto& [name, f] : fields()) out += name + " = " + f.get(*this) + "\n";
  return out;
}

std::string TrainConfig::digest() const { return sha256_hex(to_text()); }

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) fail("warmup_ratio must lie in [0, 1)");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (d_model % heads != 0 || heads == 0) fail("d_model must be divisible by heads");
  if (k_d_model % k_heads != 0 || k_heads == 0) fail("k_d_model must be divisible by k_heads");
  if (layers < 1 || k_layers < 1) fail("layers must be >= 1");
  if (knowledge_slots < 1) fail("knowledge_slots must be >= 1");
  if (min_distractors > max_distractors) fail("min_distractors exceeds max_distractors");
  if (!(related_distractors >= 0.0 && related_distractors <= 1.0)) fail("related_distractors must lie in [0, 1]");
  if (entities < 2 || relations < 2) fail("entities and relations must be >= 2");
  if (ablation_seeds.empty()) fail("ablation_seeds is empty");
  if (support_weight < 0) fail("support_weight must be >= 0");
  for (double lr : {pretrain_lr, type_lr, unified_lr}) {
    if (!(lr > 0)) fail("learning rates must be positive");
  }
  if (grid_mode) {
    static const std::set<std::size_t> batches = {4, 8, 12, 16, 32};
    static const std::set<std::size_t> lengths = {15, 30, 45, 60, 75, 90, 100};
    if (!batches.count(batch_size)) fail("grid mode: batch_size must be one of 4, 8, 12, 16, 32");
    for (double lr : {pretrain_lr, type_lr, unified_lr}) {
      if (lr < 2e-5 || lr > 8e-2) fail("grid mode: learning rates must lie in [2e-5, 8e-2]");
    }
    for (std::size_t l : {type_prompt_len, unified_prompt_len, prefix_len}) {
      if (!lengths.count(l)) fail("grid mode: prompt lengths must be one of 15, 30, 45, 60, 75, 90, 100");
    }
  }
}

ModelConfig TrainConfig::unified_model(std::size_t vocab_size) const {
  ModelConfig m;
  m.d_model = d_model;
  m.layers = layers;
  m.heads = heads;
  m.ffn_dim = ffn_dim;
  m.vocab_size = vocab_size;
  m.max_seq_len = max_seq_len;
  m.prompt_len = unified_prompt_len;
  return m;
}

ModelConfig TrainConfig::knowledge_model(std::size_t vocab_size) const {
  ModelConfig m;
  m.d_model = k_d_model;
  m.layers = k_layers;
  m.heads = k_heads;
  m.ffn_dim = k_ffn_dim;
  m.vocab_size = vocab_size;
  m.max_seq_len = max_seq_len;
  m.prompt_len = prefix_len;
  return m;
}

TrainConfig TrainConfig::for_variant(AblationVariant v) const {
  TrainConfig c = *this;
  c.use_type_prompts = v != AblationVariant::no_type_prompter;
  c.use_pretrain = v != AblationVariant::no_pretrain;
  c.use_implicit = v != AblationVariant::no_implicit;
  return c;
}

AblationVariant TrainConfig::variant() const {
  const int off = (!use_type_prompts) + (!use_pretrain) + (!use_implicit);
  if (off > 1) throw ConfigError("config: at most one component may be switched off per run");
  if (!use_type_prompts) return AblationVariant::no_type_prompter;
  if (!use_pretrain) return AblationVariant::no_pretrain;
  if (!use_implicit) return AblationVariant::no_implicit;
  return AblationVariant::full;
}

}  // namespace pei
