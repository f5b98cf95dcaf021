#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <sstream>

#include "das/dataset_io.hpp"
#include "das/error.hpp"
#include "das/synth.hpp"

using namespace das;

namespace {

// Independent byte-level encoder of the documented layout.
std::string encode_by_hand(const Dataset& ds) {
  std::string b;
  auto u8 = [&](std::uint8_t v) { b.push_back(static_cast<char>(v)); };
  auto u16 = [&](std::uint16_t v) {
    u8(v & 0xff);
    u8(v >> 8);
  };
  auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8((v >> (8 * i)) & 0xff);
  };
  b += "DASG";
  u16(1);
  u16(static_cast<std::uint16_t>(ds.rows));
  u16(static_cast<std::uint16_t>(ds.cols));
  u16(ds.sampling_rate);
  u16(static_cast<std::uint16_t>(ds.node_id.size()));
  b += ds.node_id;
  u32(static_cast<std::uint32_t>(ds.samples.size()));
  for (const auto& s : ds.samples) {
    u8(s.label);
    for (float f : s.window.data) u32(std::bit_cast<std::uint32_t>(f));
  }
  return b;
}

Dataset small(std::size_t rows, std::size_t cols, std::size_t n) {
  Dataset ds;
  ds.node_id = "CA";
  ds.sampling_rate = 750;
  ds.rows = rows;
  ds.cols = cols;
  Rng rng(17);
  for (std::size_t i = 0; i < n; ++i) {
    LabeledSample s;
    s.window = PhaseWindow(rows, cols);
    for (auto& v : s.window.data) v = static_cast<float>(rng.normal());
    s.label = i % 2;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace

TEST(Dasg, MatchesHandEncodedBytes) {
  auto ds = small(3, 5, 4);
  ds.samples[0].window.data[0] = -0.0f;
  ds.samples[1].window.data[1] = std::numeric_limits<float>::denorm_min();
  std::ostringstream out;
  write_dataset(out, ds);
  EXPECT_EQ(out.str(), encode_by_hand(ds));
  EXPECT_EQ(out.str().size(), 4u + 2 * 5 + 2 + 4 + 4 * (1 + 15 * 4));
}

TEST(Dasg, RoundTripIsBitExact) {
  const auto ds = make_dataset("Red", 500.0, synthesize_dataset(reference_profile("Red"), {.n_samples = 6}, 2));
  std::ostringstream out;
  write_dataset(out, ds);
  std::istringstream in(out.str());
  const auto back = read_dataset(in);
  EXPECT_EQ(back.node_id, "Red");
  EXPECT_EQ(back.sampling_rate, 500);
  EXPECT_EQ(back.rows, kWindowRows);
  EXPECT_EQ(back.cols, kWindowCols);
  ASSERT_EQ(back.samples.size(), ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    EXPECT_EQ(back.samples[i].label, ds.samples[i].label);
    ASSERT_EQ(std::memcmp(back.samples[i].window.data.data(), ds.samples[i].window.data.data(),
                          ds.samples[i].window.data.size() * sizeof(float)),
              0);
  }
  std::ostringstream again;
  write_dataset(again, back);
  EXPECT_EQ(again.str(), out.str());
}

TEST(Dasg, FileRoundTrip) {
  const auto ds = small(4, 8, 3);
  const auto path = std::filesystem::temp_directory_path() / "das_roundtrip.dasg";
  save_dataset(path, ds);
  const auto back = load_dataset(path);
  ASSERT_EQ(back.samples.size(), 3u);
  EXPECT_EQ(back.samples[2].window.data, ds.samples[2].window.data);
  std::filesystem::remove(path);
  EXPECT_THROW(load_dataset(path), Error);
}

TEST(Dasg, RejectsCorruptInput) {
  const auto bytes = encode_by_hand(small(2, 2, 2));
  auto code = [](const std::string& b) {
    std::istringstream in(b);
    try {
      read_dataset(in);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_EQ(code(bad_magic), ErrorCode::Format);
  std::string bad_version = bytes;
  bad_version[4] = 2;
  EXPECT_EQ(code(bad_version), ErrorCode::Format);
  EXPECT_EQ(code(bytes.substr(0, bytes.size() - 1)), ErrorCode::Format);
  std::string bad_label = bytes;
  bad_label[4 + 10 + 2 + 4] = 7;
  EXPECT_EQ(code(bad_label), ErrorCode::Format);
}

TEST(Dasg, WriterValidatesShapes) {
  auto ds = small(2, 2, 2);
  ds.samples[1].window = PhaseWindow(2, 3);
  std::ostringstream out;
  EXPECT_THROW(write_dataset(out, ds), Error);
  EXPECT_THROW(make_dataset("x", 500.5, {}), Error);
}
