#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "das/sample.hpp"
#include "das/synth.hpp"

namespace das {

struct AlignedIndex {
  std::size_t column = 0;
  std::size_t bin = 0;
};

/// Nearest recording column and fiber bin for every track point. Ties break
/// toward the lower index. Throws Error(Gap) when a timestamp lies outside the
/// recording and Error(OutOfBounds) when a position lies off the fiber.
std::vector<AlignedIndex> synchronize(std::span<const TrackPoint> track, const Recording& recording);
std::vector<std::vector<AlignedIndex>> synchronize(const std::vector<std::vector<TrackPoint>>& tracks,
                                                   const Recording& recording);

/// Rows [bin, bin + rows), columns [time, time + cols). Pure read.
PhaseWindow window_sample(const Recording& recording, std::size_t bin, std::size_t time, std::size_t rows,
                          std::size_t cols);

enum class Validity { Valid, Invalid };

/// Valid iff max |x| > threshold.
Validity validity(const PhaseWindow& window, double threshold);

/// Six noise standard deviations: the maximum of 64 x 512 noise-only samples
/// stays below it with overwhelming probability.
inline constexpr double kThresholdSigma = 6.0;
double default_threshold(const NodeProfile& profile);

struct CleanResult {
  std::vector<LabeledSample> kept;
  std::size_t rejected = 0;
};

/// Drops invalid windows; the rejection count is kept for the run manifest.
CleanResult clean(std::vector<LabeledSample> samples, double threshold);

struct DatasetSplit {
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> test;
  std::vector<std::size_t> train_indices;  // positions in the source, ascending
  std::vector<std::size_t> test_indices;
  double split_ratio = 0.0;
  std::uint64_t split_seed = 0;
};

/// Number of training samples for a split of `n` at `ratio`: nearest integer,
/// clamped so both sides are non-empty.
std::size_t train_count(std::size_t n, double ratio);

/// Deterministic shuffled split. Stratified by label by default: per-class
/// quotas use largest remainders so the total matches train_count exactly.
DatasetSplit split(const std::vector<LabeledSample>& samples, double ratio, std::uint64_t seed,
                   bool stratified = true);

void write_split_manifest(const std::filesystem::path& path, const DatasetSplit& split, const std::string& node_id);

/// Labels of a set of samples, for stratification checks and summaries.
std::vector<std::uint8_t> labels_of(const std::vector<LabeledSample>& samples);

}  // namespace das
