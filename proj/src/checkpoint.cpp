// SPDX-License-Identifier: Apache-2.0
#include "pei/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pei {

namespace {

constexpr char kMagic[8] = {'P', 'E', 'I', 'A', 'R', 'C', 'H', '\0'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint64_t uint(int width, const char* what) {
    need(static_cast<std::size_t>(width), what);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  std::string str(const char* what) {
    const auto n = static_cast<std::size_t>(uint(4, what));
    need(n, what);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  std::string_view raw(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (pos_ + n > bytes_.size()) {
      throw std::runtime_error(std::string("checkpoint truncated while reading ") + what);
    }
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void Checkpoint::put(const std::string& prefix, const ParameterStore& store) {
  for (const auto& [name, t] : store.entries()) tensors[prefix + name] = t.detach();
}

void Checkpoint::restore(const std::string& prefix, ParameterStore& store) const {
  for (auto& [name, t] : store.entries()) {
    auto it = tensors.find(prefix + name);
    if (it == tensors.end()) {
      throw std::runtime_error("checkpoint lacks parameter '" + prefix + name + "'");
    }
    if (it->second.shape() != t.shape()) {
      throw std::runtime_error("checkpoint parameter '" + prefix + name + "' has shape " +
                               shape_str(it->second.shape()) + ", expected " +
                               shape_str(t.shape()));
    }
    Tensor& dst = store.get(name);
    std::copy(it->second.data().begin(), it->second.data().end(), dst.mutable_data().begin());
  }
}

bool Checkpoint::has_prefix(const std::string& prefix) const {
  auto it = tensors.lower_bound(prefix);
  return it != tensors.end() && it->first.compare(0, prefix.size(), prefix) == 0;
}

const std::string& Checkpoint::require(const std::string& key) const {
  auto it = header.find(key);
  if (it == header.end()) throw std::runtime_error("checkpoint header lacks '" + key + "'");
  return it->second;
}

std::string serialize(const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, Checkpoint::kFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(ckpt.header.size()));
  for (const auto& [k, v] : ckpt.header) {
    put_str(out, k);
    put_str(out, v);
  }
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put_str(out, name);
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u64(out, d);
    for (double v : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint deserialize(std::string_view bytes) {
  Reader r(bytes);
  if (r.raw(sizeof kMagic, "magic") != std::string_view(kMagic, sizeof kMagic)) {
    throw std::runtime_error("not a checkpoint archive (bad magic)");
  }
  const auto version = r.uint(4, "version");
  if (version != Checkpoint::kFormatVersion) {
    throw std::runtime_error("unsupported checkpoint format version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto n_header = r.uint(4, "header count");
  for (std::uint64_t i = 0; i < n_header; ++i) {
    std::string k = r.str("header key");
    ckpt.header[k] = r.str("header value");
  }
  const auto n_tensors = r.uint(4, "tensor count");
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    std::string name = r.str("tensor name");
    const auto rank = r.uint(4, "tensor rank");
    Shape shape;
    for (std::uint64_t d = 0; d < rank; ++d) shape.push_back(r.uint(8, "tensor dims"));
    std::vector<double> values(shape_size(shape));
    for (double& v : values) v = std::bit_cast<double>(r.uint(8, "tensor values"));
    ckpt.tensors[name] = Tensor::from(std::move(shape), std::move(values));
  }
  if (!r.done()) throw std::runtime_error("checkpoint has trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  const std::string bytes = serialize(ckpt);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return deserialize(ss.str());
}

}  // namespace pei
