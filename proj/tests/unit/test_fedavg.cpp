#include <gtest/gtest.h>

#include <algorithm>
#include <cfloat>

#include "das/error.hpp"
#include "das/fedavg.hpp"
#include "oracles.hpp"

using namespace das;

namespace {

ArchitectureConfig tiny() {
  ArchitectureConfig a;
  a.name = "tiny";
  a.input_rows = 16;
  a.input_cols = 32;
  a.pool_rows = 2;
  a.pool_cols = 2;
  a.stem_channels = 3;
  a.stages = {{3, 1}, {5, 1}};
  return a;
}

ModelParams random_params(std::uint64_t seed, double scale = 1.0) {
  ModelParams p(tiny());
  Rng rng(seed);
  for (auto& v : p.values()) v = scale * rng.normal() * std::exp(rng.uniform(-20.0, 20.0));
  return p;
}

std::vector<LabeledSample> data(std::size_t n, std::uint64_t seed) {
  std::vector<LabeledSample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({oracle::random_window(seed * 1000 + i, 16, 32), std::uint8_t(i % 2)});
  return out;
}

}  // namespace

TEST(Aggregate, SimpleMean) {
  ArchitectureConfig a = tiny();
  ModelParams x(a), y(a);
  x.values()[0] = 1;
  x.values()[1] = 3;
  y.values()[0] = 3;
  y.values()[1] = 5;
  const ModelParams ms[] = {x, y};
  const auto g = aggregate(ms);
  EXPECT_EQ(g.values()[0], 2.0);
  EXPECT_EQ(g.values()[1], 4.0);
}

TEST(Aggregate, MatchesExtendedPrecisionMean) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::vector<ModelParams> ms;
    std::vector<std::vector<double>> flat;
    for (int m = 0; m < 5; ++m) {
      ms.push_back(random_params(seed * 10 + m));
      flat.push_back(ms.back().flatten());
    }
    const auto g = aggregate(ms);
    const auto want = oracle::extended_mean(flat);
    for (std::size_t i = 0; i < want.size(); ++i) {
      double scale = 0.0;
      for (const auto& f : flat) scale = std::max(scale, std::fabs(f[i]));
      ASSERT_LE(std::fabs(g.values()[i] - want[i]), 1e-12 * std::max(1.0, scale)) << i;
    }
  }
}

TEST(Aggregate, SingleModelIsIdentity) {
  const auto p = random_params(3);
  const ModelParams ms[] = {p};
  EXPECT_EQ(aggregate(ms), p);
}

TEST(Aggregate, IdenticalInputsAndConservation) {
  const auto p = random_params(4);
  const std::vector<ModelParams> same(4, p);
  EXPECT_EQ(aggregate(same), p);  // division by 4 is exact
  const std::vector<ModelParams> three(3, p);
  const auto g3 = aggregate(three);
  for (std::size_t i = 0; i < p.count(); ++i) ASSERT_LE(std::fabs(g3.values()[i] - p.values()[i]), std::fabs(p.values()[i]) * DBL_EPSILON);

  std::vector<ModelParams> ms;
  for (int m = 0; m < 6; ++m) ms.push_back(random_params(50 + m));
  const auto g = aggregate(ms);
  for (std::size_t i = 0; i < g.count(); ++i) {
    double lo = ms[0].values()[i], hi = lo;
    for (const auto& m : ms) {
      lo = std::min(lo, m.values()[i]);
      hi = std::max(hi, m.values()[i]);
    }
    ASSERT_GE(g.values()[i], lo);
    ASSERT_LE(g.values()[i], hi);
  }
  EXPECT_EQ(aggregate(ms), g);
}

TEST(Aggregate, PermutationChangesAtMostRounding) {
  std::vector<ModelParams> ms;
  for (int m = 0; m < 5; ++m) ms.push_back(random_params(70 + m, 1e-6));
  const auto g = aggregate(ms);
  std::reverse(ms.begin(), ms.end());
  const auto r = aggregate(ms);
  for (std::size_t i = 0; i < g.count(); ++i) ASSERT_NEAR(g.values()[i], r.values()[i], 1e-12 * std::fabs(g.values()[i]) + 1e-300);
}

TEST(Aggregate, WeightsAndErrors) {
  const auto a = random_params(1), b = random_params(2);
  const ModelParams ms[] = {a, b};
  const double w[] = {0.25, 0.75};
  const auto g = aggregate(ms, w);
  for (std::size_t i = 0; i < g.count(); ++i) ASSERT_NEAR(g.values()[i], 0.25 * a.values()[i] + 0.75 * b.values()[i], 1e-12 * (std::fabs(a.values()[i]) + std::fabs(b.values()[i])));
  const double bad[] = {0.5, 0.6};
  EXPECT_THROW(aggregate(ms, bad), Error);
  const ModelParams mixed[] = {a, ModelParams(ArchitectureConfig::desk())};
  try {
    aggregate(mixed);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DescriptorMismatch);
  }
  EXPECT_THROW(aggregate(std::span<const ModelParams>{}), Error);
}

TEST(Federation, InitCopiesGlobalToEveryNode) {
  const auto d1 = data(6, 1), d2 = data(6, 2), d3 = data(6, 3);
  auto s = init_federation({{"Red", d1}, {"CA", d2}, {"CB", d3}}, tiny(), TrainConfig{}, {}, 5);
  ASSERT_EQ(s.node_models.size(), 3u);
  for (const auto& m : s.node_models) EXPECT_EQ(m, s.global);
  const auto again = init_federation({{"Red", d1}, {"CA", d2}}, tiny(), TrainConfig{}, {}, 5);
  EXPECT_EQ(again.global, s.global);
}

TEST(Federation, MinimumNodeSize) {
  const auto ok = data(5, 1), small = data(4, 2);
  EXPECT_NO_THROW(init_federation({{"a", ok}, {"b", ok}}, tiny(), TrainConfig{}, {}, 1));
  try {
    init_federation({{"a", ok}, {"b", small}}, tiny(), TrainConfig{}, {}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConstraintViolation);
  }
  EXPECT_THROW(init_federation({{"a", ok}}, tiny(), TrainConfig{}, {}, 1), Error);
}

TEST(Federation, LocalRoundTouchesOnlyItsNode) {
  const auto d1 = data(8, 1), d2 = data(8, 2);
  FederationSchedule sch;
  sch.local_epochs = 2;
  auto s = init_federation({{"a", d1}, {"b", d2}}, tiny(), TrainConfig{}, sch, 3);
  local_round(s, 0);
  EXPECT_NE(s.node_models[0], s.global);
  EXPECT_EQ(s.node_models[1], s.global);

  sch.local_epochs = 0;
  auto z = init_federation({{"a", d1}, {"b", d2}}, tiny(), TrainConfig{}, sch, 3);
  z.node_models[0].values()[0] += 1.0;
  local_round(z, 0);
  EXPECT_EQ(z.node_models[0], z.global);
}

TEST(Federation, IdenticalDataGivesIdenticalUpdates) {
  const auto d = data(10, 4);
  FederationSchedule sch;
  sch.local_epochs = 2;
  auto s = init_federation({{"a", d}, {"b", d}}, tiny(), TrainConfig{}, sch, 9);
  local_round(s, 0);
  local_round(s, 1);
  EXPECT_EQ(s.node_models[0], s.node_models[1]);
}

TEST(Federation, SharedDatasetMatchesSingleNodeTraining) {
  const auto d = data(12, 5);
  FederationSchedule sch;
  sch.local_epochs = 3;
  TrainConfig tc;
  tc.batch_size = 4;
  auto s = init_federation({{"a", d}, {"b", d}}, tiny(), tc, sch, 2);  // (x + x) / 2 is exact
  const auto start = s.global;
  s = run_federation(std::move(s), 1);
  TrainConfig single = tc;
  single.epochs = 3;
  single.seed = mix_seed(2, 0);
  EXPECT_EQ(s.global, train_local(start, d, single));
}

TEST(Federation, ObserverSeesEpochsAndAggregations) {
  const auto d1 = data(8, 1), d2 = data(8, 2);
  FederationSchedule sch;
  sch.local_epochs = 2;
  auto s = init_federation({{"a", d1}, {"b", d2}}, tiny(), TrainConfig{}, sch, 3);
  std::size_t epochs = 0, aggs = 0;
  std::vector<std::size_t> agg_epochs;
  s = run_federation(std::move(s), 3, [&](const FederationEvent& ev) {
    if (ev.kind == FederationEvent::Kind::Aggregation) {
      ++aggs;
      agg_epochs.push_back(ev.epoch);
      ASSERT_NE(ev.state, nullptr);
      std::vector<ModelParams> uploads = ev.state->node_models;
      EXPECT_EQ(aggregate(uploads), *ev.model);
    } else {
      ++epochs;
    }
  });
  EXPECT_EQ(epochs, 3u * 2u * 2u);
  EXPECT_EQ(aggs, 3u);
  EXPECT_EQ(agg_epochs, (std::vector<std::size_t>{2, 4, 6}));
  EXPECT_EQ(s.round, 3u);
}

TEST(Federation, ParticipationMaskSkipsNodes) {
  const auto d1 = data(8, 1), d2 = data(8, 2);
  FederationSchedule sch;
  sch.local_epochs = 1;
  sch.participation = {{true, false}};
  auto s = init_federation({{"a", d1}, {"b", d2}}, tiny(), TrainConfig{}, sch, 3);
  s = run_federation(std::move(s), 1);
  EXPECT_EQ(s.global, s.node_models[0]);
}

TEST(Federation, Deterministic) {
  const auto d1 = data(8, 1), d2 = data(8, 2);
  FederationSchedule sch;
  sch.local_epochs = 1;
  auto run = [&] {
    return run_federation(init_federation({{"a", d1}, {"b", d2}}, tiny(), TrainConfig{}, sch, 4), 2).global;
  };
  EXPECT_EQ(run(), run());
}
