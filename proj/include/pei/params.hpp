// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "pei/tensor.hpp"

namespace pei {

using Rng = std::mt19937_64;

std::vector<double> normal_values(std::size_t n, double stddev, Rng& rng);
std::vector<double> uniform_values(std::size_t n, double bound, Rng& rng);

/// Named parameter registry. Iteration order is lexicographic by name, so
/// anything derived from it (digests, archives, optimizer state) is stable.
class ParameterStore {
 public:
  Tensor add(const std::string& name, Shape shape, std::vector<double> values);
  Tensor add_normal(const std::string& name, Shape shape, double stddev, Rng& rng);
  Tensor add_uniform(const std::string& name, Shape shape, double bound, Rng& rng);
  Tensor add_constant(const std::string& name, Shape shape, double value);

  /// Registers an existing handle (shares storage with the source).
  void insert(const std::string& name, const Tensor& tensor);
  /// Shares every parameter of other under prefix + name.
  void merge(const std::string& prefix, const ParameterStore& other);

  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  const std::map<std::string, Tensor>& entries() const& { return params_; }
  // iterating a temporary store would dangle
  const std::map<std::string, Tensor>& entries() const&& = delete;
  std::vector<std::string> names() const;
  std::size_t size() const { return params_.size(); }
  std::size_t total_elements() const;

  void set_requires_grad(bool value);
  void zero_grads();

 private:
  std::map<std::string, Tensor> params_;
};

/// Hex SHA-256 over names, shapes and raw little-endian values.
std::string content_digest(const ParameterStore& store);
std::string content_digest(const Tensor& tensor);
std::string sha256_hex(std::string_view bytes);

}  // namespace pei
