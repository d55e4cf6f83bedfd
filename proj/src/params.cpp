// SPDX-License-Identifier: Apache-2.0
#include "pei/params.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace pei {

std::vector<double> normal_values(std::size_t n, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> out(n);
  for (double& v : out) v = dist(rng);
  return out;
}

std::vector<double> uniform_values(std::size_t n, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> out(n);
  for (double& v : out) v = dist(rng);
  return out;
}

Tensor ParameterStore::add(const std::string& name, Shape shape, std::vector<double> values) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  Tensor t = Tensor::from(std::move(shape), std::move(values), true);
  params_.emplace(name, t);
  return t;
}

Tensor ParameterStore::add_normal(const std::string& name, Shape shape, double stddev, Rng& rng) {
  const std::size_t n = shape_size(shape);
  return add(name, std::move(shape), normal_values(n, stddev, rng));
}

Tensor ParameterStore::add_uniform(const std::string& name, Shape shape, double bound, Rng& rng) {
  const std::size_t n = shape_size(shape);
  return add(name, std::move(shape), uniform_values(n, bound, rng));
}

Tensor ParameterStore::add_constant(const std::string& name, Shape shape, double value) {
  const std::size_t n = shape_size(shape);
  return add(name, std::move(shape), std::vector<double>(n, value));
}

void ParameterStore::insert(const std::string& name, const Tensor& tensor) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  params_.emplace(name, tensor);
}

void ParameterStore::merge(const std::string& prefix, const ParameterStore& other) {
  for (const auto& [name, t] : other.params_) insert(prefix + name, t);
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParameterStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, t] : params_) out.push_back(name);
  return out;
}

std::size_t ParameterStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

void ParameterStore::set_requires_grad(bool value) {
  for (auto& [name, t] : params_) t.set_requires_grad(value);
}

void ParameterStore::zero_grads() {
  for (auto& [name, t] : params_) t.zero_grad();
}

namespace {

struct DigestCtx {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx{EVP_MD_CTX_new(), &EVP_MD_CTX_free};
  DigestCtx() {
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
      throw std::runtime_error("sha256: digest initialisation failed");
    }
  }
  void update(const void* p, std::size_t n) { EVP_DigestUpdate(ctx.get(), p, n); }
  void update_u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    update(b, 8);
  }
  void update_tensor(const Tensor& t) {
    update_u64(t.rank());
    for (std::size_t d : t.shape()) update_u64(d);
    for (double v : t.data()) update_u64(std::bit_cast<std::uint64_t>(v));
  }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md, &len);
    std::string out;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
      std::snprintf(buf, sizeof buf, "%02x", md[i]);
      out += buf;
    }
    return out;
  }
};

}  // namespace

std::string content_digest(const ParameterStore& store) {
  DigestCtx d;
  for (const auto& [name, t] : store.entries()) {
    d.update_u64(name.size());
    d.update(name.data(), name.size());
    d.update_tensor(t);
  }
  return d.hex();
}

std::string content_digest(const Tensor& tensor) {
  DigestCtx d;
  d.update_tensor(tensor);
  return d.hex();
}

std::string sha256_hex(std::string_view bytes) {
  DigestCtx d;
  d.update(bytes.data(), bytes.size());
  return d.hex();
}

}  // namespace pei
