#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "das/audit.hpp"
#include "das/random.hpp"
#include "das/srnet.hpp"

namespace das {

struct MetaConfig {
  std::size_t inner_steps = 8;   // k
  TrainConfig inner{};           // Adam settings for the inner loop
  double meta_step = 0.1;        // epsilon
  std::size_t iterations = 100;
  std::size_t support_size = 10;
  std::size_t query_size = 10;
  double finetune_rate = 1e-3;   // alpha
  std::size_t shot_budget = 10;
  bool track_query = true;       // evaluate each adapted model on its query set

  void validate() const;
};

struct MetaTask {
  SampleSet support;
  SampleSet query;
};

struct TaskRecord {
  std::uint64_t task_seed = 0;
  double final_inner_loss = 0.0;
  double query_accuracy = -1.0;  // negative when not tracked
};

struct MetaState {
  ModelParams meta;
  std::size_t iteration = 0;
  std::vector<TaskRecord> history;
};

/// Disjoint, label-stratified support and query sets. The support always
/// holds both labels. Throws Error(InsufficientData).
MetaTask sample_task(const SampleSet& source, const MetaConfig& config, Rng& rng);

/// Exactly k full-batch Adam steps on the support BCE, starting from `start`.
ModelParams inner_adapt(const ModelParams& start, const SampleSet& support, const MetaConfig& config,
                        std::uint64_t seed = 0);

/// Element-wise linear interpolation from `meta` toward `adapted` by `step`.
ModelParams meta_update(const ModelParams& meta, const ModelParams& adapted, double step);

using MetaObserver = std::function<void(const MetaState&)>;

/// Serial Reptile: one task per iteration, drawn from the sources in turn.
MetaState meta_train(const std::vector<SampleSet>& sources, const ArchitectureConfig& arch, const MetaConfig& config,
                     std::uint64_t seed, const MetaObserver& observer = nullptr);

/// `shots` plain gradient-descent updates, one per support sample in order.
/// Throws Error(InsufficientData) if shots exceeds the support size.
ModelParams fine_tune(const ModelParams& meta, const SampleSet& support, std::size_t shots, double rate);

/// Stratified, shuffled local support of `size` samples drawn from `pool`.
SampleSet draw_support(const SampleSet& pool, std::size_t size, Rng& rng);

/// Accuracy of `params` on a non-empty test set.
double evaluate(const ModelParams& params, const SampleSet& test);

}  // namespace das
