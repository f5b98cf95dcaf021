#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "das/sample.hpp"

namespace das {

inline constexpr char kDatasetMagic[4] = {'D', 'A', 'S', 'G'};
inline constexpr std::uint16_t kDatasetVersion = 1;

/// In-memory image of a DASG file: all samples share one shape and node.
struct Dataset {
  std::string node_id;
  std::uint16_t sampling_rate = 0;
  std::size_t rows = kWindowRows;
  std::size_t cols = kWindowCols;
  std::vector<LabeledSample> samples;
};

/// Layout (all integers little-endian):
///   "DASG" | u16 version | u16 H | u16 W | u16 sampling_rate |
///   u16 node_id length | node_id bytes (UTF-8) | u32 sample count |
///   per sample: u8 label, H*W binary32 row-major.
void write_dataset(std::ostream& out, const Dataset& ds);
Dataset read_dataset(std::istream& in);

void save_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path);

Dataset make_dataset(std::string node_id, double sampling_rate, std::vector<LabeledSample> samples);

}  // namespace das
