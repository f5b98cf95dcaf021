#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "das/audit.hpp"
#include "das/fedavg.hpp"
#include "das/pipeline.hpp"
#include "das/reptile.hpp"
#include "das/srnet.hpp"
#include "das/synth.hpp"

namespace das {

enum class Case : std::uint8_t { SD, DA, DR };
enum class Strategy : std::uint8_t { Independent, Universal, FL, Meta };

std::string to_string(Case c);
std::string to_string(Strategy s);
Case parse_case(const std::string& text);
Strategy parse_strategy(const std::string& text);

struct NodeRoles {
  std::vector<std::string> train;
  std::vector<std::string> test;
  bool operator==(const NodeRoles&) const = default;
};

/// Dataset roles of one (strategy, case) cell of the reference protocol.
/// SD is defined for the independent strategy only. Throws Error(Config).
NodeRoles reference_roles(Strategy strategy, Case kase);

/// Row label used in the summary table, e.g. "FL - 3Agents".
std::string approach_label(Strategy strategy, std::size_t train_nodes);

struct NodeSpec {
  NodeProfile profile;
  std::size_t samples = 0;
  double split_ratio = 0.8;
};

struct HarnessConfig {
  std::vector<NodeSpec> nodes;
  /// Validity threshold as a multiple of each node's noise level.
  double threshold_sigma = kThresholdSigma;
  ArchitectureConfig arch = ArchitectureConfig::desk();
  TrainConfig train{};  // Independent and Universal; also the FL local optimizer
  FederationSchedule federation{};
  double federation_learning_rate = 0.0;  // FL local Adam rate; 0 uses train.learning_rate
  MetaConfig meta{};
  std::size_t report_shots = 5;  // shots behind the meta entry of the table
  std::vector<std::uint64_t> seeds{1};
  std::filesystem::path output_dir = "runs/default";

  const NodeSpec& node(const std::string& node_id) const;
  void validate() const;
};

/// Reference profiles with the field-study dataset sizes (1085/122/126) and
/// split ratios (0.94/0.8/0.8), plus the default training settings.
HarnessConfig reference_config();
/// Same, resized to 200/60/60 samples for quick runs.
HarnessConfig quick_config();

/// JSON configuration. Missing keys keep their reference_config() value.
/// Throws Error(Config) on malformed input or unknown keys.
HarnessConfig parse_config(const std::string& json_text);
HarnessConfig load_config(const std::filesystem::path& path);
/// Canonical JSON rendering; parse_config(dump_config(c)) reproduces c.
std::string dump_config(const HarnessConfig& config);
/// FNV-1a (hex) over dump_config.
std::string config_digest(const HarnessConfig& config);

struct ExperimentSpec {
  Strategy strategy = Strategy::Independent;
  Case kase = Case::SD;
  NodeRoles roles;
  HarnessConfig config;
};

/// Spec with the reference roles for (strategy, kase).
ExperimentSpec make_spec(Strategy strategy, Case kase, const HarnessConfig& config);

/// The eight cells behind the summary table's twelve rows, optionally
/// preceded by the independent same-node baseline.
std::vector<ExperimentSpec> reference_matrix(const HarnessConfig& config, bool include_sd = true);

/// Cleaned and split samples of one node for one seed.
struct NodeData {
  std::string node_id;
  DatasetSplit split;
  std::size_t generated = 0;
  std::size_t rejected = 0;
};

/// Cleans and splits already generated samples.
NodeData preprocess_node(std::vector<LabeledSample> raw, const NodeSpec& spec, double threshold_sigma,
                         std::uint64_t seed);
/// Synthesizes, cleans and splits a node's data for `seed`.
NodeData prepare_node(const NodeSpec& spec, double threshold_sigma, std::uint64_t seed);

/// Supplies node data by (node, seed); prepared data is kept for reuse.
class DataCache {
 public:
  using Loader = std::function<NodeData(const std::string& node_id, std::uint64_t seed)>;

  /// Synthesizes on demand from `config`.
  explicit DataCache(const HarnessConfig& config);
  /// Uses `loader`, e.g. to read preprocessed files.
  explicit DataCache(Loader loader);

  const NodeData& get(const std::string& node_id, std::uint64_t seed);
  void clear() { cache_.clear(); }

 private:
  Loader loader_;
  std::map<std::pair<std::string, std::uint64_t>, std::unique_ptr<NodeData>> cache_;
};

/// One point of a learning curve. Node models report split "train" and
/// "val:<node>"; rows with node "global" mark FL aggregation events.
struct MetricRow {
  std::size_t round = 0;
  std::size_t epoch = 0;
  std::string node;
  std::string split;
  double accuracy = 0.0;
  double loss = 0.0;
};

struct ShotPoint {
  std::uint64_t seed = 0;
  std::size_t shots = 0;
  double accuracy = 0.0;
};

struct TestResult {
  std::string test_node;
  double accuracy = 0.0;
  double loss = 0.0;
};

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<MetricRow> curve;
  std::vector<TestResult> tests;  // final model on each test node
  std::vector<ShotPoint> shots;   // Meta only
  /// FL only, one per aggregation: mean over nodes of the global model's
  /// accuracy minus the node model's, both on the other nodes' test splits.
  std::vector<double> aggregation_jumps;
  ModelParams model;  // final (global, or fine-tuned for Meta)
  ModelParams init;   // Meta only: the meta-initialization
  double runtime_s = 0.0;
};

struct ExperimentReport {
  Strategy strategy = Strategy::Independent;
  Case kase = Case::SD;
  NodeRoles roles;
  std::string config_digest;
  std::vector<SeedRun> runs;
  AccessLedger ledger;
  double runtime_s = 0.0;

  std::string name() const;  // e.g. "fl-da"
  /// Mean and sample standard deviation of final accuracy on `node`.
  double mean_accuracy(const std::string& node) const;
  double std_accuracy(const std::string& node) const;
  /// Mean accuracy over seeds after `shots` fine-tuning shots.
  double mean_shot_accuracy(std::size_t shots) const;
  double mean_aggregation_jump() const;
};

using ProgressFn = std::function<void(const std::string& message)>;

/// Runs one cell over every configured seed. Test-split reads are only made
/// under the Evaluation phase of the report's ledger.
ExperimentReport run_case(const ExperimentSpec& spec, DataCache& data, const ProgressFn& progress = nullptr);
ExperimentReport run_case(const ExperimentSpec& spec);

struct TableRow {
  std::string approach;
  std::string kase;
  std::string training;
  std::string test;
  double mean = 0.0;
  double std = 0.0;
  std::size_t seeds = 0;
};

struct MatrixReport {
  std::vector<ExperimentReport> reports;
  std::vector<TableRow> table;
  std::uint64_t leaks() const;
};

std::vector<TableRow> table_rows(const ExperimentReport& report);

/// Runs every spec and gathers one table row per (cell, test node).
MatrixReport run_matrix(const std::vector<ExperimentSpec>& specs, DataCache& data,
                        const ProgressFn& progress = nullptr);

/// Columns: Approach, Case, Training, Test, Test acc (mean), Std, Seeds.
void write_table_csv(std::ostream& out, const std::vector<TableRow>& rows);

/// Writes `<name>_seed<k>_metrics.csv` (round, epoch, node, split, accuracy,
/// loss) per seed and, for every report, `<name>_fewshot.csv` (seed, shots,
/// accuracy). Returns the paths written.
std::vector<std::filesystem::path> emit_curves(const ExperimentReport& report, const std::filesystem::path& dir);

void write_metric_csv(std::ostream& out, const std::vector<MetricRow>& rows);
void write_fewshot_csv(std::ostream& out, const std::vector<ShotPoint>& points);

}  // namespace das
