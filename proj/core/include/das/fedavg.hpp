#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "das/audit.hpp"
#include "das/srnet.hpp"
#include "das/synth.hpp"

namespace das {

inline constexpr std::size_t kMinNodeSamples = 5;

/// One participating node. The orchestrator only ever receives ModelParams
/// back from a node; its data stays behind this struct.
struct FederatedNode {
  std::string node_id;
  SampleSet train;
};

struct FederationSchedule {
  std::size_t local_epochs = 10;  // E
  std::size_t rounds = 3;         // R
  /// participation[round][node]; empty means everyone, every round.
  std::vector<std::vector<bool>> participation;

  bool participates(std::size_t round, std::size_t node) const;
};

struct FederationState {
  std::size_t round = 0;
  ModelParams global;
  std::vector<ModelParams> node_models;
  std::vector<FederatedNode> nodes;
  FederationSchedule schedule;
  TrainConfig train;  // local optimizer settings; epochs is taken from the schedule
  std::uint64_t seed = 0;
};

/// Randomly initialized global model copied to every node. Throws
/// Error(ConstraintViolation) if fewer than two nodes are given or any node
/// holds fewer than five samples.
FederationState init_federation(std::vector<FederatedNode> nodes, const ArchitectureConfig& arch,
                                const TrainConfig& train, const FederationSchedule& schedule, std::uint64_t seed);

/// Trains node `m` for E local epochs starting from the current global model.
/// Other node models are untouched.
void local_round(FederationState& state, std::size_t m,
                 const EpochCallback& on_epoch = nullptr);

/// Element-wise mean, summed in list order. Optional weights must sum to 1;
/// the default is uniform 1/M. Throws Error(DescriptorMismatch).
ModelParams aggregate(std::span<const ModelParams> models, std::span<const double> weights = {});

struct FederationEvent {
  enum class Kind { LocalEpoch, Aggregation } kind;
  std::size_t round = 0;
  std::size_t epoch = 0;  // global epoch counter, 1-based (E * round + local epoch)
  std::size_t node = 0;   // LocalEpoch only
  const ModelParams* model = nullptr;
  Metrics train{};
  /// Full state; on Aggregation, node_models still hold the uploads.
  const FederationState* state = nullptr;
};

using FederationObserver = std::function<void(const FederationEvent&)>;

/// Runs R rounds of (local_round for every participant -> aggregate ->
/// redistribute). The observer sees every local epoch and every aggregation.
FederationState run_federation(FederationState state, std::size_t rounds, const FederationObserver& observer = nullptr);

}  // namespace das
