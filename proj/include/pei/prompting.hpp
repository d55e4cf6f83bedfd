// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <set>
#include <span>
#include <string>
#include <vector>

#include "pei/checkpoint.hpp"
#include "pei/params.hpp"
#include "pei/transformer.hpp"

namespace pei {

enum class PromptRole { type_prompt, unified_prompt, knowledge_prefix };

std::string_view role_tag(PromptRole role);
PromptRole role_from_tag(std::string_view tag);

/// Per-layer soft prompts, one (length, d) matrix per backbone layer,
/// stored directly as parameters (no reparameterisation).
class DeepPromptSet {
 public:
  DeepPromptSet(std::string name, PromptRole role, std::size_t layers, std::size_t length,
                std::size_t dim, Rng& rng, double init_std = 0.1);

  const std::string& name() const { return name_; }
  PromptRole role() const { return role_; }
  std::size_t layers() const { return prompts_.size(); }
  std::size_t length() const { return length_; }
  std::size_t dim() const { return dim_; }
  bool frozen() const { return frozen_; }
  void set_frozen(bool frozen);

  const std::vector<Tensor>& layer_prompts() const { return prompts_; }
  /// Registry keyed "<name>.layer<i>".
  const ParameterStore& params() const { return store_; }
  ParameterStore& params() { return store_; }

  /// Independent copy with identical values and the frozen flag set.
  DeepPromptSet frozen_copy() const;

  void save_to(Checkpoint& ckpt) const;
  static DeepPromptSet load_from(const Checkpoint& ckpt, const std::string& name);

 private:
  DeepPromptSet() = default;
  void rebuild_views();

  std::string name_;
  PromptRole role_ = PromptRole::type_prompt;
  std::size_t length_ = 0;
  std::size_t dim_ = 0;
  bool frozen_ = false;
  ParameterStore store_;
  std::vector<Tensor> prompts_;
};

/// Key/value prefixes for every encoder and decoder self-attention layer.
class PrefixPair {
 public:
  PrefixPair(std::string name, std::size_t encoder_layers, std::size_t decoder_layers,
             std::size_t length, std::size_t dim, Rng& rng, double init_std = 0.1);

  const std::string& name() const { return name_; }
  std::size_t length() const { return length_; }
  std::size_t dim() const { return dim_; }
  bool frozen() const { return frozen_; }
  void set_frozen(bool frozen);

  const std::vector<LayerPrefix>& encoder_prefixes() const { return encoder_; }
  const std::vector<LayerPrefix>& decoder_prefixes() const { return decoder_; }
  const ParameterStore& params() const { return store_; }
  ParameterStore& params() { return store_; }

  void save_to(Checkpoint& ckpt) const;
  static PrefixPair load_from(const Checkpoint& ckpt, const std::string& name);

 private:
  PrefixPair() = default;
  void rebuild_views(std::size_t encoder_layers, std::size_t decoder_layers);

  std::string name_;
  std::size_t length_ = 0;
  std::size_t dim_ = 0;
  bool frozen_ = false;
  ParameterStore store_;
  std::vector<LayerPrefix> encoder_;
  std::vector<LayerPrefix> decoder_;
};

/// Frozen/trainable split of a registry.
struct ParamPartition {
  std::set<std::string> frozen;
  std::set<std::string> trainable;

  /// Every registry entry whose name starts with one of the prefixes is trainable.
  static ParamPartition by_prefix(const ParameterStore& registry,
                                  std::span<const std::string> trainable_prefixes);
  /// Checks disjointness and exact coverage of the registry.
  void validate(const ParameterStore& registry) const;
  /// Sets requires_grad to match the split.
  void apply(ParameterStore& registry) const;
};

/// Exact number of trainable scalars.
std::size_t count_trainable(const ParamPartition& partition, const ParameterStore& registry);

/// Deep prompts for a stack; sets are concatenated row-wise per layer in
/// the order given.
PromptContext inject(std::span<const DeepPromptSet* const> sets, const EncoderStack& stack);
PromptContext inject(const DeepPromptSet& set, const EncoderStack& stack);

struct EncoderDecoderContext {
  PromptContext encoder;
  PromptContext decoder;
};

EncoderDecoderContext inject(const PrefixPair& prefixes, const EncoderStack& encoder,
                             const DecoderStack& decoder);

}  // namespace pei
