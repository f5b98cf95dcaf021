#include "das/dataset_io.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "das/error.hpp"

namespace das {

namespace {

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T get_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  require(in.good(), ErrorCode::Format, "truncated DASG stream");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

void check_u16(std::size_t v, const char* what) {
  require(v <= std::numeric_limits<std::uint16_t>::max(), ErrorCode::Format,
          std::string("DASG field does not fit in 16 bits: ") + what);
}

}  // namespace

void write_dataset(std::ostream& out, const Dataset& ds) {
  check_u16(ds.rows, "H");
  check_u16(ds.cols, "W");
  check_u16(ds.node_id.size(), "node_id length");
  require(ds.samples.size() <= std::numeric_limits<std::uint32_t>::max(), ErrorCode::Format, "too many samples");

  out.write(kDatasetMagic, 4);
  put_le<std::uint16_t>(out, kDatasetVersion);
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(ds.rows));
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(ds.cols));
  put_le<std::uint16_t>(out, ds.sampling_rate);
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(ds.node_id.size()));
  out.write(ds.node_id.data(), static_cast<std::streamsize>(ds.node_id.size()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.samples.size()));

  for (const auto& s : ds.samples) {
    require(s.window.rows == ds.rows && s.window.cols == ds.cols, ErrorCode::ShapeMismatch,
            "sample shape differs from dataset header");
    require(s.label <= 1, ErrorCode::InvalidArgument, "label must be 0 or 1");
    put_le<std::uint8_t>(out, s.label);
    for (float v : s.window.data) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  require(out.good(), ErrorCode::Io, "failed writing DASG stream");
}

Dataset read_dataset(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 4);
  require(in.good() && std::memcmp(magic, kDatasetMagic, 4) == 0, ErrorCode::Format, "bad DASG magic");
  const auto version = get_le<std::uint16_t>(in);
  require(version == kDatasetVersion, ErrorCode::Format, "unsupported DASG version " + std::to_string(version));

  Dataset ds;
  ds.rows = get_le<std::uint16_t>(in);
  ds.cols = get_le<std::uint16_t>(in);
  ds.sampling_rate = get_le<std::uint16_t>(in);
  const auto id_len = get_le<std::uint16_t>(in);
  ds.node_id.resize(id_len);
  in.read(ds.node_id.data(), id_len);
  require(in.good() || id_len == 0, ErrorCode::Format, "truncated node id");
  const auto count = get_le<std::uint32_t>(in);

  ds.samples.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    LabeledSample s;
    s.label = get_le<std::uint8_t>(in);
    require(s.label <= 1, ErrorCode::Format, "label out of range in sample " + std::to_string(i));
    s.window = PhaseWindow(ds.rows, ds.cols);
    s.window.node_id = ds.node_id;
    for (float& v : s.window.data) v = std::bit_cast<float>(get_le<std::uint32_t>(in));
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  require(out.is_open(), ErrorCode::Io, "cannot open " + path.string() + " for writing");
  write_dataset(out, ds);
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.is_open(), ErrorCode::Io, "cannot open " + path.string());
  return read_dataset(in);
}

Dataset make_dataset(std::string node_id, double sampling_rate, std::vector<LabeledSample> samples) {
  Dataset ds;
  ds.node_id = std::move(node_id);
  require(sampling_rate >= 0 && sampling_rate <= 65535 && std::floor(sampling_rate) == sampling_rate,
          ErrorCode::Format, "sampling rate must be an integer that fits in 16 bits");
  ds.sampling_rate = static_cast<std::uint16_t>(sampling_rate);
  if (!samples.empty()) {
    ds.rows = samples.front().window.rows;
    ds.cols = samples.front().window.cols;
  }
  ds.samples = std::move(samples);
  return ds;
}

}  // namespace das
