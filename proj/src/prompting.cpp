// SPDX-License-Identifier: Apache-2.0
#include "pei/prompting.hpp"

#include <stdexcept>

namespace pei {

std::string_view role_tag(PromptRole role) {
  switch (role) {
    case PromptRole::type_prompt: return "type_prompt";
    case PromptRole::unified_prompt: return "unified_prompt";
    case PromptRole::knowledge_prefix: return "knowledge_prefix";
  }
  return "unknown";
}

PromptRole role_from_tag(std::string_view tag) {
  if (tag == "type_prompt") return PromptRole::type_prompt;
  if (tag == "unified_prompt") return PromptRole::unified_prompt;
  if (tag == "knowledge_prefix") return PromptRole::knowledge_prefix;
  throw std::invalid_argument("unknown prompt role tag '" + std::string(tag) + "'");
}

namespace {

std::string layer_key(const std::string& name, std::size_t i) {
  return name + ".layer" + std::to_string(i);
}

std::size_t header_int(const Checkpoint& ckpt, const std::string& key) {
  return static_cast<std::size_t>(std::stoull(ckpt.require(key)));
}

}  // namespace

// ---- DeepPromptSet -------------------------------------------------------

DeepPromptSet::DeepPromptSet(std::string name, PromptRole role, std::size_t layers,
                             std::size_t length, std::size_t dim, Rng& rng, double init_std)
    : name_(std::move(name)), role_(role), length_(length), dim_(dim) {
  if (layers < 1 || dim < 1) throw std::invalid_argument("DeepPromptSet: layers and dim must be >= 1");
  for (std::size_t i = 0; i < layers; ++i) {
    store_.add_normal(layer_key(name_, i), {length, dim}, init_std, rng);
  }
  rebuild_views();
}

void DeepPromptSet::rebuild_views() {
  prompts_.clear();
  for (std::size_t i = 0; store_.contains(layer_key(name_, i)); ++i) {
    prompts_.push_back(store_.get(layer_key(name_, i)));
  }
}

void DeepPromptSet::set_frozen(bool frozen) {
  frozen_ = frozen;
  store_.set_requires_grad(!frozen);
}

DeepPromptSet DeepPromptSet::frozen_copy() const {
  DeepPromptSet copy;
  copy.name_ = name_;
  copy.role_ = role_;
  copy.length_ = length_;
  copy.dim_ = dim_;
  for (const auto& [key, t] : store_.entries()) {
    copy.store_.add(key, t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
  }
  copy.rebuild_views();
  copy.set_frozen(true);
  return copy;
}

void DeepPromptSet::save_to(Checkpoint& ckpt) const {
  ckpt.header["prompt." + name_ + ".role"] = std::string(role_tag(role_));
  ckpt.header["prompt." + name_ + ".layers"] = std::to_string(layers());
  ckpt.header["prompt." + name_ + ".length"] = std::to_string(length_);
  ckpt.header["prompt." + name_ + ".dim"] = std::to_string(dim_);
  ckpt.header["prompt." + name_ + ".frozen"] = frozen_ ? "1" : "0";
  ckpt.put("", store_);
}

DeepPromptSet DeepPromptSet::load_from(const Checkpoint& ckpt, const std::string& name) {
  const std::string h = "prompt." + name + ".";
  DeepPromptSet set;
  set.name_ = name;
  set.role_ = role_from_tag(ckpt.require(h + "role"));
  set.length_ = header_int(ckpt, h + "length");
  set.dim_ = header_int(ckpt, h + "dim");
  const std::size_t layers = header_int(ckpt, h + "layers");
  for (std::size_t i = 0; i < layers; ++i) {
    auto it = ckpt.tensors.find(layer_key(name, i));
    if (it == ckpt.tensors.end()) {
      throw std::runtime_error("checkpoint lacks prompt layer '" + layer_key(name, i) + "'");
    }
    if (it->second.shape() != Shape{set.length_, set.dim_}) {
      throw std::runtime_error("prompt layer '" + it->first + "' has shape " +
                               shape_str(it->second.shape()));
    }
    set.store_.add(it->first, it->second.shape(),
                   std::vector<double>(it->second.data().begin(), it->second.data().end()));
  }
  set.rebuild_views();
  set.set_frozen(ckpt.require(h + "frozen") == "1");
  return set;
}

// ---- PrefixPair ------------------------------------------------------------

PrefixPair::PrefixPair(std::string name, std::size_t encoder_layers, std::size_t decoder_layers,
                       std::size_t length, std::size_t dim, Rng& rng, double init_std)
    : name_(std::move(name)), length_(length), dim_(dim) {
  for (const char* side : {"enc", "dec"}) {
    const std::size_t n = std::string(side) == "enc" ? encoder_layers : decoder_layers;
    for (std::size_t i = 0; i < n; ++i) {
      const std::string base = name_ + "." + side + ".layer" + std::to_string(i);
      store_.add_normal(base + ".key", {length, dim}, init_std, rng);
      store_.add_normal(base + ".value", {length, dim}, init_std, rng);
    }
  }
  rebuild_views(encoder_layers, decoder_layers);
}

void PrefixPair::rebuild_views(std::size_t encoder_layers, std::size_t decoder_layers) {
  encoder_.clear();
  decoder_.clear();
  for (std::size_t i = 0; i < encoder_layers; ++i) {
    const std::string base = name_ + ".enc.layer" + std::to_string(i);
    encoder_.push_back({store_.get(base + ".key"), store_.get(base + ".value")});
  }
  for (std::size_t i = 0; i < decoder_layers; ++i) {
    const std::string base = name_ + ".dec.layer" + std::to_string(i);
    decoder_.push_back({store_.get(base + ".key"), store_.get(base + ".value")});
  }
}

void PrefixPair::set_frozen(bool frozen) {
  frozen_ = frozen;
  store_.set_requires_grad(!frozen);
}

void PrefixPair::save_to(Checkpoint& ckpt) const {
  const std::string h = "prompt." + name_ + ".";
  ckpt.header[h + "role"] = std::string(role_tag(PromptRole::knowledge_prefix));
  ckpt.header[h + "encoder_layers"] = std::to_string(encoder_.size());
  ckpt.header[h + "decoder_layers"] = std::to_string(decoder_.size());
  ckpt.header[h + "length"] = std::to_string(length_);
  ckpt.header[h + "dim"] = std::to_string(dim_);
  ckpt.header[h + "frozen"] = frozen_ ? "1" : "0";
  ckpt.put("", store_);
}

PrefixPair PrefixPair::load_from(const Checkpoint& ckpt, const std::string& name) {
  const std::string h = "prompt." + name + ".";
  if (role_from_tag(ckpt.require(h + "role")) != PromptRole::knowledge_prefix) {
    throw std::runtime_error("checkpoint entry '" + name + "' is not a knowledge prefix");
  }
  PrefixPair pair;
  pair.name_ = name;
  pair.length_ = header_int(ckpt, h + "length");
  pair.dim_ = header_int(ckpt, h + "dim");
  const std::size_t enc = header_int(ckpt, h + "encoder_layers");
  const std::size_t dec = header_int(ckpt, h + "decoder_layers");
  for (const auto& [key, t] : ckpt.tensors) {
    if (key.compare(0, name.size() + 1, name + ".") == 0) {
      pair.store_.add(key, t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
    }
  }
  pair.rebuild_views(enc, dec);
  pair.set_frozen(ckpt.require(h + "frozen") == "1");
  return pair;
}

// ---- partition -----------------------------------------------------------

ParamPartition ParamPartition::by_prefix(const ParameterStore& registry,
                                         std::span<const std::string> trainable_prefixes) {
  ParamPartition p;
  for (const auto& [name, t] : registry.entries()) {
    bool train = false;
    for (const std::string& pre : trainable_prefixes) {
      train = train || name.compare(0, pre.size(), pre) == 0;
    }
    (train ? p.trainable : p.frozen).insert(name);
  }
  return p;
}

void ParamPartition::validate(const ParameterStore& registry) const {
  for (const std::string& n : frozen) {
    if (trainable.count(n)) throw std::invalid_argument("partition: '" + n + "' is both frozen and trainable");
    if (!registry.contains(n)) throw std::invalid_argument("partition: '" + n + "' not in registry");
  }
  for (const std::string& n : trainable) {
    if (!registry.contains(n)) throw std::invalid_argument("partition: '" + n + "' not in registry");
  }
  for (const auto& [name, t] : registry.entries()) {
    if (!frozen.count(name) && !trainable.count(name)) {
      throw std::invalid_argument("partition: registry entry '" + name + "' is unassigned");
    }
  }
}

void ParamPartition::apply(ParameterStore& registry) const {
  validate(registry);
  for (auto& [name, t] : registry.entries()) {
    registry.get(name).set_requires_grad(trainable.count(name) > 0);
  }
}

std::size_t count_trainable(const ParamPartition& partition, const ParameterStore& registry) {
  std::size_t n = 0;
  for (const std::string& name : partition.trainable) {
    if (!registry.contains(name)) {
      throw std::invalid_argument("count_trainable: '" + name + "' not in registry");
    }
    n += registry.get(name).size();
  }
  for (const std::string& name : partition.frozen) {
    if (!registry.contains(name)) {
      throw std::invalid_argument("count_trainable: '" + name + "' not in registry");
    }
  }
  return n;
}

// ---- injection -------------------------------------------------------------

PromptContext inject(std::span<const DeepPromptSet* const> sets, const EncoderStack& stack) {
  PromptContext ctx;
  if (sets.empty()) return ctx;
  for (const DeepPromptSet* s : sets) {
    if (s->layers() != stack.layers()) {
      throw std::invalid_argument("inject: prompt set '" + s->name() + "' has " +
                                  std::to_string(s->layers()) + " layers, stack has " +
                                  std::to_string(stack.layers()));
    }
    if (s->dim() != stack.config().d_model) {
      throw std::invalid_argument("inject: prompt set '" + s->name() + "' has width " +
                                  std::to_string(s->dim()) + ", stack has " +
                                  std::to_string(stack.config().d_model));
    }
  }
  std::size_t total = 0;
  for (const DeepPromptSet* s : sets) total += s->length();
  if (total == 0) return ctx;
  for (std::size_t i = 0; i < stack.layers(); ++i) {
    std::vector<Tensor> parts;
    for (const DeepPromptSet* s : sets) {
      if (s->length() > 0) parts.push_back(s->layer_prompts()[i]);
    }
    ctx.deep_prompts.push_back(parts.size() == 1 ? parts[0] : concat(parts, 0));
  }
  return ctx;
}

PromptContext inject(const DeepPromptSet& set, const EncoderStack& stack) {
  const DeepPromptSet* one[] = {&set};
  return inject(std::span<const DeepPromptSet* const>(one), stack);
}

EncoderDecoderContext inject(const PrefixPair& prefixes, const EncoderStack& encoder,
                             const DecoderStack& decoder) {
  if (prefixes.encoder_prefixes().size() != encoder.layers()) {
    throw std::invalid_argument("inject: prefix pair has " +
                                std::to_string(prefixes.encoder_prefixes().size()) +
                                " encoder layers, encoder has " + std::to_string(encoder.layers()));
  }
  if (prefixes.decoder_prefixes().size() != decoder.layers()) {
    throw std::invalid_argument("inject: prefix pair has " +
                                std::to_string(prefixes.decoder_prefixes().size()) +
                                " decoder layers, decoder has " + std::to_string(decoder.layers()));
  }
  if (prefixes.dim() != encoder.config().d_model || prefixes.dim() != decoder.config().d_model) {
    throw std::invalid_argument("inject: prefix width " + std::to_string(prefixes.dim()) +
                                " differs from backbone width");
  }
  EncoderDecoderContext ctx;
  if (prefixes.length() == 0) return ctx;
  ctx.encoder.prefixes = prefixes.encoder_prefixes();
  ctx.decoder.prefixes = prefixes.decoder_prefixes();
  return ctx;
}

}  // namespace pei
