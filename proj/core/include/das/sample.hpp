#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace das {

inline constexpr std::size_t kWindowRows = 64;
inline constexpr std::size_t kWindowCols = 512;

/// H x W block of phase-shift samples. Rows are fiber bins, columns are time
/// samples; storage is row-major binary32 so it round-trips through the DASG
/// file format without loss.
struct PhaseWindow {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;
  std::int64_t origin_bin = 0;
  double origin_time = 0.0;
  std::string node_id;

  PhaseWindow() = default;
  PhaseWindow(std::size_t h, std::size_t w) : rows(h), cols(w), data(h * w, 0.0f) {}

  float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::span<float> row(std::size_t r) { return {data.data() + r * cols, cols}; }

  float max_abs() const;
  bool all_finite() const;
};

enum class Activity : std::uint8_t { Walking = 0, Cycling = 1 };

/// A window paired with its activity label (0 = walking, 1 = cycling).
struct LabeledSample {
  PhaseWindow window;
  std::uint8_t label = 0;
};

}  // namespace das
