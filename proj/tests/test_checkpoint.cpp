// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "pei/checkpoint.hpp"

using namespace pei;

namespace {

Checkpoint sample() {
  Rng rng(3);
  ParameterStore s;
  s.add_normal("w", {3, 4}, 1.0, rng);
  s.add_normal("b", {4}, 1.0, rng);
  s.add("tiny", {1}, {-0.0});
  Checkpoint ck;
  ck.header["stage"] = "test";
  ck.header["note"] = "multi\nline";
  ck.put("m.", s);
  return ck;
}

}  // namespace

TEST(Checkpoint, SerializeIsStable) {
  const std::string a = serialize(sample());
  const std::string b = serialize(deserialize(a));
  EXPECT_EQ(a, b);
}

TEST(Checkpoint, FileRoundTripIsByteIdentical) {
  const auto dir = std::filesystem::temp_directory_path() / "pei_ckpt_test";
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "a.ckpt", sample());
  save_checkpoint(dir / "b.ckpt", load_checkpoint(dir / "a.ckpt"));
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
  };
  EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, RestoreCopiesValues) {
  Rng rng(9);
  ParameterStore s;
  s.add_normal("w", {3, 4}, 1.0, rng);
  s.add_normal("b", {4}, 1.0, rng);
  s.add("tiny", {1}, {5.0});
  const Checkpoint ck = sample();
  ck.restore("m.", s);
  EXPECT_EQ(s.get("w")[5], ck.tensors.at("m.w")[5]);
  EXPECT_TRUE(std::signbit(s.get("tiny")[0]));
  EXPECT_TRUE(ck.has_prefix("m."));
  EXPECT_FALSE(ck.has_prefix("x."));
}

TEST(Checkpoint, RestoreErrors) {
  ParameterStore missing;
  missing.add("other", {1}, {0.0});
  EXPECT_THROW(sample().restore("m.", missing), std::runtime_error);
  ParameterStore wrong;
  wrong.add("w", {4, 3}, std::vector<double>(12, 0.0));
  EXPECT_THROW(sample().restore("m.", wrong), std::runtime_error);
  EXPECT_THROW(sample().require("absent"), std::runtime_error);
}

TEST(Checkpoint, CorruptInputs) {
  const std::string good = serialize(sample());
  EXPECT_THROW(deserialize("garbage"), std::runtime_error);
  EXPECT_THROW(deserialize(good.substr(0, good.size() - 3)), std::runtime_error);
  EXPECT_THROW(deserialize(good + "x"), std::runtime_error);
  std::string bad_version = good;
  bad_version[8] = 9;
  EXPECT_THROW(deserialize(bad_version), std::runtime_error);
  EXPECT_THROW(load_checkpoint("/nonexistent/x.ckpt"), std::runtime_error);
}

TEST(Digest, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Digest, ChangesWithAnyValue) {
  Rng rng(4);
  ParameterStore s;
  s.add_normal("w", {2, 2}, 1.0, rng);
  const std::string before = content_digest(s);
  s.get("w").mutable_data()[3] += 1e-12;
  EXPECT_NE(content_digest(s), before);
}

TEST(Store, DuplicateAndUnknownNames) {
  ParameterStore s;
  s.add("a", {1}, {1.0});
  EXPECT_THROW(s.add("a", {1}, {1.0}), std::invalid_argument);
  EXPECT_THROW(s.get("b"), std::out_of_range);
}
