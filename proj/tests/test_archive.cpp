#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "h4d/archive.hpp"
#include "oracles/archives.hpp"

using namespace h4d;

using oracle::bit_equal;
using oracle::ByteWriter;
using oracle::random_archive;

TEST(Archive, EmptyRoundTrip) {
  const TensorArchive empty;
  const auto bytes = encode_archive(empty);
  EXPECT_EQ(bytes, (std::vector<std::uint8_t>{'H', 'T', 'A', '1', 0, 0, 0, 0}));
  EXPECT_EQ(decode_archive(bytes).size(), 0u);
}

TEST(Archive, ByteLayoutMatchesHandEncoding) {
  TensorArchive a;
  a.add("w", Tensor::matrix(2, 1, {1.5f, -2.0f}));
  a.add("s", Tensor::scalar(3.0f));
  ByteWriter w;
  w.text("HTA1");
  w.u32(2);
  w.u32(1), w.text("w"), w.out.push_back(2), w.u32(2), w.u32(1), w.f32(1.5f), w.f32(-2.0f);
  w.u32(1), w.text("s"), w.out.push_back(0), w.f32(3.0f);
  EXPECT_EQ(encode_archive(a), w.out);
  EXPECT_EQ(decode_archive(w.out), a);
}

TEST(Archive, ThousandEntriesRoundTripThroughFile) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(-1, 1);
  TensorArchive a;
  for (int i = 0; i < 1000; ++i) {
    Tensor t(Shape{std::size_t(i % 7 + 1), 3});
    for (float& v : t.values()) v = u(rng);
    a.add("entry." + std::to_string(i), std::move(t));
  }
  const auto path = std::filesystem::temp_directory_path() / "h4d_archive_1000.hta";
  write_archive(path, a);
  const TensorArchive b = read_archive(path);
  EXPECT_TRUE(bit_equal(a, b));
  std::ifstream in(path, std::ios::binary);
  const std::vector<std::uint8_t> on_disk((std::istreambuf_iterator<char>(in)), {});
  EXPECT_EQ(on_disk, encode_archive(b));
  std::filesystem::remove(path);
}

TEST(Archive, RandomSetsRoundTripBitExactly) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const TensorArchive a = random_archive(rng);
    const auto bytes = encode_archive(a);
    const TensorArchive b = decode_archive(bytes);
    ASSERT_TRUE(bit_equal(a, b)) << "trial " << trial;
    ASSERT_EQ(encode_archive(b), bytes);
  }
}

TEST(Archive, EveryTruncationFailsCleanly) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    TensorArchive a = random_archive(rng);
    a.put("tail", Tensor::vector({1, 2, 3}));
    const auto bytes = encode_archive(a);
    for (std::size_t cut = 0; cut < bytes.size(); ++cut) {
      try {
        decode_archive(std::span(bytes.data(), cut));
        ADD_FAILURE() << "prefix of " << cut << " bytes parsed";
      } catch (const ParseError& e) {
        EXPECT_LE(e.offset(), cut);
      }
    }
  }
}

TEST(Archive, RejectsCorruption) {
  TensorArchive a;
  a.add("x", Tensor::vector({1}));
  auto bytes = encode_archive(a);
  auto bad_magic = bytes;
  bad_magic[3] = '2';
  EXPECT_THROW(decode_archive(bad_magic), ParseError);
  auto trailing = bytes;
  trailing.push_back(0);
  try {
    decode_archive(trailing);
    ADD_FAILURE();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), bytes.size());
  }
  // Duplicate names on disk.
  ByteWriter w;
  w.text("HTA1"), w.u32(2);
  for (int i = 0; i < 2; ++i) w.u32(1), w.text("x"), w.out.push_back(0), w.f32(1.0f);
  EXPECT_THROW(decode_archive(w.out), ParseError);
  // Absurd dims must not allocate.
  ByteWriter huge;
  huge.text("HTA1"), huge.u32(1), huge.u32(1), huge.text("h"), huge.out.push_back(3);
  for (int i = 0; i < 3; ++i) huge.u32(0xFFFFFFFFu);
  EXPECT_THROW(decode_archive(huge.out), ParseError);
}

TEST(Archive, FileErrorsLeaveNoState) {
  EXPECT_ANY_THROW(read_archive("/nonexistent/dir/a.hta"));
  const auto path = std::filesystem::temp_directory_path() / "h4d_archive_trunc.hta";
  TensorArchive a;
  a.add("x", Tensor::vector({1, 2}));
  auto bytes = encode_archive(a);
  bytes.pop_back();
  std::ofstream(path, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  EXPECT_THROW(read_archive(path), ParseError);
  std::filesystem::remove(path);
}

TEST(Archive, DuplicateAddAndMissingGet) {
  TensorArchive a;
  a.add("x", Tensor::scalar(1));
  EXPECT_THROW(a.add("x", Tensor::scalar(2)), ConfigError);
  a.put("x", Tensor::scalar(2));
  EXPECT_EQ(a.scalar("x"), 2.0f);
  EXPECT_THROW(a.get("y"), ConfigError);
}
