#include "das/reptile.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "das/error.hpp"

namespace das {

void MetaConfig::validate() const {
  require(inner_steps >= 1, ErrorCode::InvalidArgument, "inner steps must be >= 1");
  require(meta_step >= 0.0 && meta_step <= 1.0, ErrorCode::InvalidArgument, "meta step must be in [0, 1]");
  require(support_size >= 2, ErrorCode::InvalidArgument, "support must hold at least one sample per label");
  require(shot_budget >= 1, ErrorCode::InvalidArgument, "shot budget must be >= 1");
  require(finetune_rate >= 0.0, ErrorCode::InvalidArgument, "fine-tune rate must be >= 0");
  inner.validate();
}

namespace {

std::array<std::vector<std::size_t>, 2> by_label(const SampleSet& set) {
  std::array<std::vector<std::size_t>, 2> out;
  for (std::size_t i = 0; i < set.size(); ++i) out[set[i].label ? 1 : 0].push_back(i);
  return out;
}

/// Splits `total` across the two labels, as evenly as possible.
std::array<std::size_t, 2> halves(std::size_t total) { return {total - total / 2, total / 2}; }

}  // namespace

MetaTask sample_task(const SampleSet& source, const MetaConfig& config, Rng& rng) {
  auto groups = by_label(source);
  const auto s = halves(config.support_size);
  const auto q = halves(config.query_size);
  for (int c = 0; c < 2; ++c)
    require(s[c] >= 1 && groups[c].size() >= s[c] + q[c], ErrorCode::InsufficientData,
            "source holds " + std::to_string(groups[c].size()) + " samples of label " + std::to_string(c) +
                ", task needs " + std::to_string(s[c] + q[c]));
  std::vector<std::size_t> support, query;
  for (int c = 0; c < 2; ++c) {
    auto& g = groups[c];
    // Partial Fisher-Yates: only the first s + q positions are needed.
    for (std::size_t i = 0; i < s[c] + q[c]; ++i) std::swap(g[i], g[i + rng.below(g.size() - i)]);
    support.insert(support.end(), g.begin(), g.begin() + static_cast<std::ptrdiff_t>(s[c]));
    query.insert(query.end(), g.begin() + static_cast<std::ptrdiff_t>(s[c]),
                 g.begin() + static_cast<std::ptrdiff_t>(s[c] + q[c]));
  }
  rng.shuffle(std::span<std::size_t>(support));
  rng.shuffle(std::span<std::size_t>(query));
  return {source.select(std::move(support)), source.select(std::move(query))};
}

ModelParams inner_adapt(const ModelParams& start, const SampleSet& support, const MetaConfig& config,
                        std::uint64_t seed) {
  require(config.inner_steps >= 1, ErrorCode::InvalidArgument, "inner steps must be >= 1");
  TrainConfig cfg = config.inner;
  cfg.epochs = config.inner_steps;
  cfg.batch_size = std::max<std::size_t>(1, support.size());
  cfg.seed = seed;
  return train_local(start, support, cfg);
}

ModelParams meta_update(const ModelParams& meta, const ModelParams& adapted, double step) {
  require(meta.compatible(adapted), ErrorCode::DescriptorMismatch, "meta and adapted models differ in architecture");
  ModelParams out = meta;
  auto dst = out.values();
  auto target = adapted.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = std::lerp(dst[i], target[i], step);
  return out;
}

MetaState meta_train(const std::vector<SampleSet>& sources, const ArchitectureConfig& arch, const MetaConfig& config,
                     std::uint64_t seed, const MetaObserver& observer) {
  config.validate();
  require(!sources.empty(), ErrorCode::InsufficientData, "meta-training needs at least one source dataset");
  MetaState state;
  state.meta = init_params(arch, seed);
  Rng rng(mix_seed(seed, 0x3e7a));
  for (std::size_t t = 0; t < config.iterations; ++t) {
    const SampleSet& source = sources[t % sources.size()];
    const std::uint64_t task_seed = rng.next_u64();
    Rng task_rng(task_seed);
    const MetaTask task = sample_task(source, config, task_rng);
    const ModelParams adapted = inner_adapt(state.meta, task.support, config, task_seed);

    TaskRecord rec;
    rec.task_seed = task_seed;
    rec.final_inner_loss = measure(adapted, task.support).loss;
    if (config.track_query && !task.query.empty()) rec.query_accuracy = accuracy(adapted, task.query);
    state.history.push_back(rec);

    state.meta = meta_update(state.meta, adapted, config.meta_step);
    state.iteration = t + 1;
    if (observer) observer(state);
  }
  return state;
}

ModelParams fine_tune(const ModelParams& meta, const SampleSet& support, std::size_t shots, double rate) {
  require(shots <= support.size(), ErrorCode::InsufficientData,
          "shot budget " + std::to_string(shots) + " exceeds support size " + std::to_string(support.size()));
  ModelParams out = meta;
  for (std::size_t s = 0; s < shots; ++s) {
    const LabeledSample& sample = support[s];
    const GradientResult g = backward(out, sample.window, sample.label);
    auto p = out.values();
    auto d = g.gradient.values();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= rate * d[i];
  }
  return out;
}

SampleSet draw_support(const SampleSet& pool, std::size_t size, Rng& rng) {
  auto groups = by_label(pool);
  const auto want = halves(size);
  require(pool.size() >= size, ErrorCode::InsufficientData,
          "support of " + std::to_string(size) + " requested from " + std::to_string(pool.size()) + " samples");
  // Fill from the other label when one label runs short.
  std::array<std::size_t, 2> take = {std::min(want[0], groups[0].size()), std::min(want[1], groups[1].size())};
  while (take[0] + take[1] < size) {
    if (take[0] < groups[0].size())
      ++take[0];
    else
      ++take[1];
  }
  std::vector<std::size_t> chosen;
  for (int c = 0; c < 2; ++c) {
    auto& g = groups[c];
    for (std::size_t i = 0; i < take[c]; ++i) std::swap(g[i], g[i + rng.below(g.size() - i)]);
    chosen.insert(chosen.end(), g.begin(), g.begin() + static_cast<std::ptrdiff_t>(take[c]));
  }
  rng.shuffle(std::span<std::size_t>(chosen));
  return pool.select(std::move(chosen));
}

double evaluate(const ModelParams& params, const SampleSet& test) { return accuracy(params, test); }

}  // namespace das
