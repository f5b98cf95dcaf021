#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "das/audit.hpp"
#include "das/sample.hpp"

namespace das {

/// A run of SR blocks sharing one channel width.
struct Stage {
  std::size_t channels = 8;
  std::size_t blocks = 1;
  bool operator==(const Stage&) const = default;
};

/// Network topology. Trainable layers are the stem convolution, four
/// convolutions per SR block and the dense head. Input pooling and stage
/// transitions (2x2 average pooling followed by zero channel padding) carry no
/// parameters.
struct ArchitectureConfig {
  std::string name = "desk";
  std::size_t input_rows = kWindowRows;
  std::size_t input_cols = kWindowCols;
  std::size_t pool_rows = 2;
  std::size_t pool_cols = 4;
  std::size_t stem_channels = 8;
  std::size_t stem_stride = 2;
  std::size_t kernel = 3;
  std::vector<Stage> stages{{8, 1}, {16, 1}};

  bool operator==(const ArchitectureConfig&) const = default;

  std::size_t block_count() const;
  std::size_t trainable_layers() const { return 2 + 4 * block_count(); }
  void validate() const;

  /// Versioned plain-text descriptor, one `key value...` pair per line.
  std::string describe() const;
  static ArchitectureConfig parse(const std::string& text);

  /// stem -> SR block (8 ch) -> transition -> SR block (16 ch) -> GAP -> dense.
  static ArchitectureConfig desk();
  /// Six SR blocks over three widths; 26 trainable layers.
  static ArchitectureConfig paper();
};

struct TensorSpec {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// All trainable tensors of one network, stored contiguously in layer order.
class ModelParams {
 public:
  ModelParams() = default;
  /// Zero-valued parameters laid out for `arch`.
  explicit ModelParams(ArchitectureConfig arch);

  const ArchitectureConfig& arch() const { return arch_; }
  const std::vector<TensorSpec>& tensors() const { return tensors_; }
  std::size_t count() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  std::span<double> tensor(std::size_t index);
  std::span<const double> tensor(std::size_t index) const;
  std::span<const double> tensor(const std::string& name) const;

  std::vector<double> flatten() const { return values_; }
  static ModelParams restore(const ArchitectureConfig& arch, std::span<const double> flat);

  /// Same architecture descriptor, hence element-wise combinable.
  bool compatible(const ModelParams& other) const { return arch_ == other.arch_; }

  bool operator==(const ModelParams& other) const { return arch_ == other.arch_ && values_ == other.values_; }

 private:
  ArchitectureConfig arch_;
  std::vector<TensorSpec> tensors_;
  std::vector<double> values_;
};

/// He-normal convolution and dense weights, zero biases.
ModelParams init_params(const ArchitectureConfig& arch, std::uint64_t seed);

// Checkpoints: descriptor text, then u64 count and binary32 values (LE).
void write_checkpoint(std::ostream& out, const ModelParams& params);
ModelParams read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);
/// FNV-1a over the serialized checkpoint.
std::string params_digest(const ModelParams& params);

inline constexpr double kProbClamp = 1e-7;

double logistic(double z);
double clamp_probability(double p);

/// Binary cross-entropy with the probability clamped to [1e-7, 1 - 1e-7].
double bce_loss(double probability, std::uint8_t label);

/// Training objective on the logit. Matches bce_loss(logistic(z), label) as
/// long as the true class has probability >= 1e-7; past that point it keeps
/// growing linearly instead of saturating, so confidently wrong predictions
/// still receive a gradient. Flat once the true class exceeds 1 - 1e-7.
double logit_loss(double z, std::uint8_t label);

double forward_logit(const ModelParams& params, const PhaseWindow& window);
/// Probability of the cycling class.
double forward(const ModelParams& params, const PhaseWindow& window);

/// 1 if p >= 0.5.
std::uint8_t decide(double probability);
std::uint8_t predict(const ModelParams& params, const PhaseWindow& window);

struct GradientResult {
  ModelParams gradient;
  double loss = 0.0;
  double probability = 0.0;
};

/// Exact gradient of logit_loss(forward_logit(params, window), label). Zero
/// when the prediction is correct and saturated.
GradientResult backward(const ModelParams& params, const PhaseWindow& window, std::uint8_t label);

/// Adds the gradient of sample `window` into `accum` and returns the loss.
double accumulate_gradient(const ModelParams& params, const PhaseWindow& window, std::uint8_t label,
                           ModelParams& accum);

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 16;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

class Adam {
 public:
  Adam(const TrainConfig& config, std::size_t count);
  void step(ModelParams& params, const ModelParams& gradient);
  std::size_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

struct Metrics {
  double accuracy = 0.0;
  double loss = 0.0;
};

/// Mean gradient of a batch, summed in ascending index order.
ModelParams batch_gradient(const ModelParams& params, const SampleSet& data, std::span<const std::size_t> batch,
                           double* mean_loss = nullptr);

/// Called after every epoch with the current parameters and training metrics
/// accumulated during that epoch.
using EpochCallback = std::function<void(std::size_t epoch, const ModelParams& params, const Metrics& train)>;

/// Mini-batch Adam on mean BCE. The input is left untouched.
ModelParams train_local(const ModelParams& params, const SampleSet& data, const TrainConfig& config,
                        const EpochCallback& on_epoch = nullptr);

/// Fraction of correct predictions. Throws Error(EmptyDataset) on an empty set.
double accuracy(const ModelParams& params, const SampleSet& data);
Metrics measure(const ModelParams& params, const SampleSet& data);

}  // namespace das
