#include "das/fedavg.hpp"

#include <cmath>

#include "das/error.hpp"
#include "das/random.hpp"

namespace das {

bool FederationSchedule::participates(std::size_t round, std::size_t node) const {
  if (round >= participation.size()) return true;
  const auto& row = participation[round];
  return node >= row.size() || row[node];
}

FederationState init_federation(std::vector<FederatedNode> nodes, const ArchitectureConfig& arch,
                                const TrainConfig& train, const FederationSchedule& schedule, std::uint64_t seed) {
  require(nodes.size() >= 2, ErrorCode::ConstraintViolation, "federation needs at least two nodes");
  for (const auto& n : nodes)
    require(n.train.size() >= kMinNodeSamples, ErrorCode::ConstraintViolation,
            "node " + n.node_id + " has " + std::to_string(n.train.size()) + " samples; at least " +
                std::to_string(kMinNodeSamples) + " required");
  train.validate();
  FederationState s;
  s.global = init_params(arch, seed);
  s.node_models.assign(nodes.size(), s.global);
  s.nodes = std::move(nodes);
  s.schedule = schedule;
  s.train = train;
  s.seed = seed;
  return s;
}

void local_round(FederationState& state, std::size_t m, const EpochCallback& on_epoch) {
  require(m < state.nodes.size(), ErrorCode::OutOfBounds, "no node " + std::to_string(m));
  if (state.schedule.local_epochs == 0) {
    state.node_models[m] = state.global;
    return;
  }
  TrainConfig cfg = state.train;
  cfg.epochs = state.schedule.local_epochs;
  // Every node shares the round seed: identical data gives identical updates.
  cfg.seed = mix_seed(state.seed, state.round);
  state.node_models[m] = train_local(state.global, state.nodes[m].train, cfg, on_epoch);
}

ModelParams aggregate(std::span<const ModelParams> models, std::span<const double> weights) {
  require(!models.empty(), ErrorCode::InvalidArgument, "nothing to aggregate");
  for (const auto& m : models)
    require(m.compatible(models.front()), ErrorCode::DescriptorMismatch, "aggregated models differ in architecture");
  if (!weights.empty()) {
    require(weights.size() == models.size(), ErrorCode::InvalidArgument, "one weight per model required");
    double total = 0.0;
    for (double w : weights) {
      require(w >= 0.0, ErrorCode::InvalidArgument, "aggregation weights must be non-negative");
      total += w;
    }
    require(std::fabs(total - 1.0) < 1e-9, ErrorCode::InvalidArgument, "aggregation weights must sum to 1");
  }
  if (models.size() == 1) return models.front();

  ModelParams out(models.front().arch());
  auto acc = out.values();
  if (weights.empty()) {
    for (const auto& m : models) {
      auto v = m.values();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
    }
    const double M = static_cast<double>(models.size());
    for (double& a : acc) a /= M;
  } else {
    for (std::size_t k = 0; k < models.size(); ++k) {
      auto v = models[k].values();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += weights[k] * v[i];
    }
  }
  return out;
}

FederationState run_federation(FederationState state, std::size_t rounds, const FederationObserver& observer) {
  require(rounds >= 1, ErrorCode::InvalidArgument, "rounds must be >= 1");
  const std::size_t E = state.schedule.local_epochs;
  for (std::size_t r = 0; r < rounds; ++r) {
    std::vector<ModelParams> uploads;
    for (std::size_t m = 0; m < state.nodes.size(); ++m) {
      if (!state.schedule.participates(state.round, m)) continue;
      EpochCallback cb;
      if (observer) {
        cb = [&, m](std::size_t epoch, const ModelParams& params, const Metrics& train) {
          FederationEvent ev{FederationEvent::Kind::LocalEpoch, state.round, state.round * E + epoch + 1, m, &params,
                             train, &state};
          observer(ev);
        };
      }
      local_round(state, m, cb);
      uploads.push_back(state.node_models[m]);
    }
    if (!uploads.empty()) state.global = aggregate(uploads);
    if (observer) {
      FederationEvent ev{FederationEvent::Kind::Aggregation, state.round, (state.round + 1) * E, 0, &state.global, {},
                         &state};
      observer(ev);
    }
    ++state.round;
  }
  return state;
}

}  // namespace das
