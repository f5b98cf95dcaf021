#include "das/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "das/error.hpp"
#include "das/random.hpp"

namespace das {

namespace {

/// Nearest integer with halves rounded down.
long long nearest_lower_tie(double x) { return static_cast<long long>(std::ceil(x - 0.5)); }

}  // namespace

std::vector<AlignedIndex> synchronize(std::span<const TrackPoint> track, const Recording& recording) {
  require(recording.samples > 0 && recording.bins > 0, ErrorCode::InvalidArgument, "empty recording");
  constexpr double kSlack = 1e-9;
  std::vector<AlignedIndex> out;
  out.reserve(track.size());
  double previous = -std::numeric_limits<double>::infinity();
  for (const auto& p : track) {
    require(p.time >= previous, ErrorCode::InvalidArgument, "track timestamps must be monotone");
    previous = p.time;
    require(p.time >= recording.start_time - kSlack && p.time <= recording.end_time() + kSlack, ErrorCode::Gap,
            "track timestamp " + std::to_string(p.time) + " outside recording span");
    const long long col = nearest_lower_tie((p.time - recording.start_time) * recording.sampling_rate);
    const long long bin = nearest_lower_tie(p.position / recording.bin_spacing);
    require(bin >= 0 && bin < static_cast<long long>(recording.bins), ErrorCode::OutOfBounds,
            "track position " + std::to_string(p.position) + " m is off the fiber");
    out.push_back({static_cast<std::size_t>(std::clamp<long long>(col, 0, recording.samples - 1)),
                   static_cast<std::size_t>(bin)});
  }
  return out;
}

std::vector<std::vector<AlignedIndex>> synchronize(const std::vector<std::vector<TrackPoint>>& tracks,
                                                   const Recording& recording) {
  std::vector<std::vector<AlignedIndex>> out;
  out.reserve(tracks.size());
  for (const auto& t : tracks) out.push_back(synchronize(t, recording));
  return out;
}

PhaseWindow window_sample(const Recording& recording, std::size_t bin, std::size_t time, std::size_t rows,
                          std::size_t cols) {
  require(rows > 0 && cols > 0, ErrorCode::InvalidArgument, "window must be non-empty");
  require(bin + rows <= recording.bins && time + cols <= recording.samples, ErrorCode::OutOfBounds,
          "window [" + std::to_string(bin) + "+" + std::to_string(rows) + ", " + std::to_string(time) + "+" +
              std::to_string(cols) + ") exceeds recording");
  PhaseWindow w(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* src = recording.data.data() + (bin + r) * recording.samples + time;
    std::copy(src, src + cols, w.data.begin() + static_cast<std::ptrdiff_t>(r * cols));
  }
  w.origin_bin = static_cast<std::int64_t>(bin);
  w.origin_time = recording.start_time + static_cast<double>(time) / recording.sampling_rate;
  w.node_id = recording.node_id;
  return w;
}

Validity validity(const PhaseWindow& window, double threshold) {
  require(threshold >= 0.0, ErrorCode::InvalidArgument, "threshold must be >= 0");
  return static_cast<double>(window.max_abs()) > threshold ? Validity::Valid : Validity::Invalid;
}

double default_threshold(const NodeProfile& profile) { return kThresholdSigma * profile.noise_std; }

CleanResult clean(std::vector<LabeledSample> samples, double threshold) {
  CleanResult out;
  out.kept.reserve(samples.size());
  for (auto& s : samples) {
    if (validity(s.window, threshold) == Validity::Valid)
      out.kept.push_back(std::move(s));
    else
      ++out.rejected;
  }
  return out;
}

std::size_t train_count(std::size_t n, double ratio) {
  require(ratio > 0.0 && ratio < 1.0, ErrorCode::InvalidArgument, "split ratio must be in (0, 1)");
  require(n >= 2, ErrorCode::TooFewSamples, "need at least 2 samples to split, got " + std::to_string(n));
  const auto k = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  return std::clamp<std::size_t>(k, 1, n - 1);
}

DatasetSplit split(const std::vector<LabeledSample>& samples, double ratio, std::uint64_t seed, bool stratified) {
  const std::size_t n = samples.size();
  const std::size_t n_train = train_count(n, ratio);
  Rng rng(mix_seed(seed, 0x5b1175));

  std::vector<std::vector<std::size_t>> groups(stratified ? 2 : 1);
  for (std::size_t i = 0; i < n; ++i) groups[stratified ? samples[i].label : 0].push_back(i);
  for (auto& g : groups) rng.shuffle(std::span<std::size_t>(g));

  // Largest-remainder apportionment of n_train across groups.
  std::vector<std::size_t> quota(groups.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double exact = static_cast<double>(n_train) * static_cast<double>(groups[g].size()) / static_cast<double>(n);
    quota[g] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[g];
    remainders.emplace_back(exact - std::floor(exact), g);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < n_train; ++i, ++assigned) ++quota[remainders[i % remainders.size()].second];

  DatasetSplit out;
  out.split_ratio = ratio;
  out.split_seed = seed;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t j = 0; j < groups[g].size(); ++j)
      (j < quota[g] ? out.train_indices : out.test_indices).push_back(groups[g][j]);
  }
  std::sort(out.train_indices.begin(), out.train_indices.end());
  std::sort(out.test_indices.begin(), out.test_indices.end());
  for (auto i : out.train_indices) out.train.push_back(samples[i]);
  for (auto i : out.test_indices) out.test.push_back(samples[i]);
  return out;
}

void write_split_manifest(const std::filesystem::path& path, const DatasetSplit& split, const std::string& node_id) {
  std::ofstream out(path);
  require(out.is_open(), ErrorCode::Io, "cannot open " + path.string());
  out << "# split manifest\n";
  out << "node " << node_id << "\n";
  out << "ratio " << split.split_ratio << "\n";
  out << "seed " << split.split_seed << "\n";
  auto dump = [&](const char* name, const std::vector<std::size_t>& idx) {
    out << name << " " << idx.size() << "\n";
    for (std::size_t i = 0; i < idx.size(); ++i) out << (i ? " " : "") << idx[i];
    out << "\n";
  };
  dump("train", split.train_indices);
  dump("test", split.test_indices);
}

std::vector<std::uint8_t> labels_of(const std::vector<LabeledSample>& samples) {
  std::vector<std::uint8_t> out(samples.size());
  std::transform(samples.begin(), samples.end(), out.begin(), [](const auto& s) { return s.label; });
  return out;
}

}  // namespace das
