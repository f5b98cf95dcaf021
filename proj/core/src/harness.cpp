#include "das/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "das/error.hpp"
#include "das/random.hpp"

namespace das {

namespace {

using json = nlohmann::json;

// Independent random streams derived from a run seed.
constexpr std::uint64_t kInitStream = 0x1001;
constexpr std::uint64_t kTrainStream = 0x1002;
constexpr std::uint64_t kFedStream = 0x1003;
constexpr std::uint64_t kMetaStream = 0x1004;
constexpr std::uint64_t kSupportStream = 0x1005;

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

std::string training_label(const NodeRoles& roles) {
  return roles.train.size() >= 3 ? "All" : join(roles.train, "+");
}

std::string fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// JSON <-> config

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorCode::Config, msg); }

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) config_error(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) config_error("unknown key '" + k + "' in " + where);
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    config_error("bad value for '" + std::string(key) + "' in " + where);
  }
}

json band_json(const Band& b) { return json::array({b.lo, b.hi}); }

void read_band(const json& j, const char* key, Band& b, const std::string& where) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    config_error("'" + std::string(key) + "' in " + where + " must be [lo, hi]");
  b = {v[0].get<double>(), v[1].get<double>()};
  if (b.lo > b.hi) config_error("'" + std::string(key) + "' in " + where + " has lo > hi");
}

json profile_json(const NodeProfile& p) {
  const auto& b = p.bands;
  const auto& w = p.waveform;
  return {{"gain", p.gain},
          {"attenuation", p.attenuation},
          {"noise_std", p.noise_std},
          {"lowpass_cutoff", p.lowpass_cutoff},
          {"sampling_rate", p.sampling_rate},
          {"bin_spacing", p.bin_spacing},
          {"clutter_rate", p.clutter_rate},
          {"seed", p.seed},
          {"bands",
           {{"walking_speed", band_json(b.walking_speed)},
            {"cycling_speed", band_json(b.cycling_speed)},
            {"step_cadence", band_json(b.step_cadence)},
            {"wheel_circumference", band_json(b.wheel_circumference)},
            {"walking_amplitude", band_json(b.walking_amplitude)},
            {"cycling_amplitude", band_json(b.cycling_amplitude)}}},
          {"waveform",
           {{"impulse_decay", w.impulse_decay},
            {"impulse_freq", w.impulse_freq},
            {"spatial_sigma", w.spatial_sigma},
            {"cycling_jitter", w.cycling_jitter},
            {"cycling_mod_depth", w.cycling_mod_depth},
            {"cycling_mod_freq", w.cycling_mod_freq},
            {"clutter_amplitude", w.clutter_amplitude}}}};
}

void read_profile(const json& j, NodeProfile& p, const std::string& where) {
  check_keys(j, where,
             {"gain", "attenuation", "noise_std", "lowpass_cutoff", "sampling_rate", "bin_spacing", "clutter_rate",
              "seed", "bands", "waveform"});
  read(j, "gain", p.gain, where);
  read(j, "attenuation", p.attenuation, where);
  read(j, "noise_std", p.noise_std, where);
  read(j, "lowpass_cutoff", p.lowpass_cutoff, where);
  read(j, "sampling_rate", p.sampling_rate, where);
  read(j, "bin_spacing", p.bin_spacing, where);
  read(j, "clutter_rate", p.clutter_rate, where);
  read(j, "seed", p.seed, where);
  if (j.contains("bands")) {
    const json& b = j.at("bands");
    const std::string w = where + ".bands";
    check_keys(b, w,
               {"walking_speed", "cycling_speed", "step_cadence", "wheel_circumference", "walking_amplitude",
                "cycling_amplitude"});
    read_band(b, "walking_speed", p.bands.walking_speed, w);
    read_band(b, "cycling_speed", p.bands.cycling_speed, w);
    read_band(b, "step_cadence", p.bands.step_cadence, w);
    read_band(b, "wheel_circumference", p.bands.wheel_circumference, w);
    read_band(b, "walking_amplitude", p.bands.walking_amplitude, w);
    read_band(b, "cycling_amplitude", p.bands.cycling_amplitude, w);
  }
  if (j.contains("waveform")) {
    const json& f = j.at("waveform");
    const std::string w = where + ".waveform";
    check_keys(f, w,
               {"impulse_decay", "impulse_freq", "spatial_sigma", "cycling_jitter", "cycling_mod_depth",
                "cycling_mod_freq", "clutter_amplitude"});
    read(f, "impulse_decay", p.waveform.impulse_decay, w);
    read(f, "impulse_freq", p.waveform.impulse_freq, w);
    read(f, "spatial_sigma", p.waveform.spatial_sigma, w);
    read(f, "cycling_jitter", p.waveform.cycling_jitter, w);
    read(f, "cycling_mod_depth", p.waveform.cycling_mod_depth, w);
    read(f, "cycling_mod_freq", p.waveform.cycling_mod_freq, w);
    read(f, "clutter_amplitude", p.waveform.clutter_amplitude, w);
  }
}

json train_json(const TrainConfig& t) {
  return {{"learning_rate", t.learning_rate}, {"beta1", t.beta1},           {"beta2", t.beta2},
          {"epsilon", t.epsilon},             {"batch_size", t.batch_size}, {"epochs", t.epochs}};
}

void read_train(const json& j, TrainConfig& t, const std::string& where) {
  check_keys(j, where, {"learning_rate", "beta1", "beta2", "epsilon", "batch_size", "epochs"});
  read(j, "learning_rate", t.learning_rate, where);
  read(j, "beta1", t.beta1, where);
  read(j, "beta2", t.beta2, where);
  read(j, "epsilon", t.epsilon, where);
  read(j, "batch_size", t.batch_size, where);
  read(j, "epochs", t.epochs, where);
}

json arch_json(const ArchitectureConfig& a) {
  json stages = json::array();
  for (const auto& s : a.stages) stages.push_back(json::array({s.channels, s.blocks}));
  return {{"name", a.name},
          {"input_rows", a.input_rows},
          {"input_cols", a.input_cols},
          {"pool_rows", a.pool_rows},
          {"pool_cols", a.pool_cols},
          {"stem_channels", a.stem_channels},
          {"stem_stride", a.stem_stride},
          {"kernel", a.kernel},
          {"stages", stages}};
}

ArchitectureConfig read_arch(const json& j) {
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    if (name == "desk") return ArchitectureConfig::desk();
    if (name == "paper") return ArchitectureConfig::paper();
    config_error("unknown architecture preset '" + name + "'");
  }
  const std::string where = "arch";
  check_keys(j, where,
             {"preset", "name", "input_rows", "input_cols", "pool_rows", "pool_cols", "stem_channels", "stem_stride",
              "kernel", "stages"});
  ArchitectureConfig a = ArchitectureConfig::desk();
  if (j.contains("preset")) a = read_arch(j.at("preset"));
  read(j, "name", a.name, where);
  read(j, "input_rows", a.input_rows, where);
  read(j, "input_cols", a.input_cols, where);
  read(j, "pool_rows", a.pool_rows, where);
  read(j, "pool_cols", a.pool_cols, where);
  read(j, "stem_channels", a.stem_channels, where);
  read(j, "stem_stride", a.stem_stride, where);
  read(j, "kernel", a.kernel, where);
  if (j.contains("stages")) {
    a.stages.clear();
    for (const auto& s : j.at("stages")) {
      if (!s.is_array() || s.size() != 2) config_error("arch.stages entries must be [channels, blocks]");
      a.stages.push_back({s[0].get<std::size_t>(), s[1].get<std::size_t>()});
    }
  }
  try {
    a.validate();
  } catch (const Error& e) {
    config_error(std::string("arch: ") + e.what());
  }
  return a;
}

json to_json(const HarnessConfig& c) {
  json nodes = json::array();
  for (const auto& n : c.nodes)
    nodes.push_back({{"id", n.profile.node_id},
                     {"samples", n.samples},
                     {"split_ratio", n.split_ratio},
                     {"profile", profile_json(n.profile)}});
  const auto& m = c.meta;
  return {{"output_dir", c.output_dir.generic_string()},
          {"seeds", c.seeds},
          {"threshold_sigma", c.threshold_sigma},
          {"report_shots", c.report_shots},
          {"arch", arch_json(c.arch)},
          {"train", train_json(c.train)},
          {"federation",
           {{"local_epochs", c.federation.local_epochs},
            {"rounds", c.federation.rounds},
            {"learning_rate", c.federation_learning_rate}}},
          {"meta",
           {{"inner_steps", m.inner_steps},
            {"inner_learning_rate", m.inner.learning_rate},
            {"meta_step", m.meta_step},
            {"iterations", m.iterations},
            {"support_size", m.support_size},
            {"query_size", m.query_size},
            {"finetune_rate", m.finetune_rate},
            {"shot_budget", m.shot_budget}}},
          {"nodes", nodes}};
}

HarnessConfig from_json(const json& j) {
  check_keys(j, "config",
             {"output_dir", "seeds", "threshold_sigma", "report_shots", "arch", "train", "federation", "meta",
              "nodes"});
  HarnessConfig c = reference_config();
  std::string out = c.output_dir.generic_string();
  read(j, "output_dir", out, "config");
  c.output_dir = out;
  read(j, "seeds", c.seeds, "config");
  read(j, "threshold_sigma", c.threshold_sigma, "config");
  read(j, "report_shots", c.report_shots, "config");
  if (j.contains("arch")) c.arch = read_arch(j.at("arch"));
  if (j.contains("train")) read_train(j.at("train"), c.train, "train");
  if (j.contains("federation")) {
    const json& f = j.at("federation");
    check_keys(f, "federation", {"local_epochs", "rounds", "learning_rate"});
    read(f, "local_epochs", c.federation.local_epochs, "federation");
    read(f, "rounds", c.federation.rounds, "federation");
    read(f, "learning_rate", c.federation_learning_rate, "federation");
  }
  if (j.contains("meta")) {
    const json& m = j.at("meta");
    check_keys(m, "meta",
               {"inner_steps", "inner_learning_rate", "meta_step", "iterations", "support_size", "query_size",
                "finetune_rate", "shot_budget"});
    read(m, "inner_steps", c.meta.inner_steps, "meta");
    read(m, "inner_learning_rate", c.meta.inner.learning_rate, "meta");
    read(m, "meta_step", c.meta.meta_step, "meta");
    read(m, "iterations", c.meta.iterations, "meta");
    read(m, "support_size", c.meta.support_size, "meta");
    read(m, "query_size", c.meta.query_size, "meta");
    read(m, "finetune_rate", c.meta.finetune_rate, "meta");
    read(m, "shot_budget", c.meta.shot_budget, "meta");
  }
  if (j.contains("nodes")) {
    const json& ns = j.at("nodes");
    if (!ns.is_array()) config_error("nodes must be an array");
    std::vector<NodeSpec> nodes;
    for (const auto& n : ns) {
      check_keys(n, "nodes[]", {"id", "samples", "split_ratio", "profile"});
      if (!n.contains("id") || !n.at("id").is_string()) config_error("every node needs a string id");
      const auto id = n.at("id").get<std::string>();
      NodeSpec spec;
      auto it = std::find_if(c.nodes.begin(), c.nodes.end(), [&](const NodeSpec& s) { return s.profile.node_id == id; });
      if (it != c.nodes.end()) spec = *it;
      spec.profile.node_id = id;
      const std::string where = "node " + id;
      read(n, "samples", spec.samples, where);
      read(n, "split_ratio", spec.split_ratio, where);
      if (n.contains("profile")) read_profile(n.at("profile"), spec.profile, where + ".profile");
      nodes.push_back(std::move(spec));
    }
    c.nodes = std::move(nodes);
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Running

Metrics evaluate_on(const ModelParams& params, const SampleSet& set, AccessLedger& ledger) {
  AccessLedger::Scope scope(&ledger, Phase::Evaluation);
  return measure(params, set);
}

struct SeedData {
  std::map<std::string, SampleSet> train;
  std::map<std::string, SampleSet> test;
};

SeedData bind(const ExperimentSpec& spec, DataCache& data, std::uint64_t seed, AccessLedger& ledger) {
  SeedData out;
  std::vector<std::string> ids = spec.roles.train;
  ids.insert(ids.end(), spec.roles.test.begin(), spec.roles.test.end());
  for (const auto& id : ids) {
    const NodeData& nd = data.get(id, seed);
    out.train.emplace(id, SampleSet(nd.split.train, SplitRole::Train, &ledger));
    out.test.emplace(id, SampleSet(nd.split.test, SplitRole::Test, &ledger));
  }
  return out;
}

void run_supervised(const ExperimentSpec& spec, DataCache& data, SeedRun& run, AccessLedger& ledger) {
  const auto& cfg = spec.config;
  SeedData d = bind(spec, data, run.seed, ledger);
  const std::string label = training_label(spec.roles);

  // Universal pools the training splits; each node's data is read once here.
  std::vector<LabeledSample> pooled;
  SampleSet train;
  if (spec.roles.train.size() == 1) {
    train = d.train.at(spec.roles.train.front());
  } else {
    AccessLedger::Scope scope(&ledger, Phase::Training);
    for (const auto& id : spec.roles.train) {
      const SampleSet& s = d.train.at(id);
      for (std::size_t i = 0; i < s.size(); ++i) pooled.push_back(s[i]);
    }
    train = SampleSet(pooled, SplitRole::Train, &ledger);
  }

  TrainConfig tc = cfg.train;
  tc.seed = mix_seed(run.seed, kTrainStream);
  const ModelParams init = init_params(cfg.arch, mix_seed(run.seed, kInitStream));
  AccessLedger::Scope scope(&ledger, Phase::Training);
  run.model = train_local(init, train, tc, [&](std::size_t epoch, const ModelParams& p, const Metrics& m) {
    run.curve.push_back({0, epoch + 1, label, "train", m.accuracy, m.loss});
    for (const auto& id : spec.roles.test) {
      const Metrics v = evaluate_on(p, d.test.at(id), ledger);
      run.curve.push_back({0, epoch + 1, label, "val:" + id, v.accuracy, v.loss});
    }
  });
  for (const auto& id : spec.roles.test) {
    const Metrics v = evaluate_on(run.model, d.test.at(id), ledger);
    run.tests.push_back({id, v.accuracy, v.loss});
  }
}

void run_federated(const ExperimentSpec& spec, DataCache& data, SeedRun& run, AccessLedger& ledger) {
  const auto& cfg = spec.config;
  SeedData d = bind(spec, data, run.seed, ledger);
  std::vector<FederatedNode> nodes;
  for (const auto& id : spec.roles.train) nodes.push_back({id, d.train.at(id)});

  TrainConfig local = cfg.train;
  if (cfg.federation_learning_rate > 0.0) local.learning_rate = cfg.federation_learning_rate;
  AccessLedger::Scope scope(&ledger, Phase::Training);
  FederationState state =
      init_federation(std::move(nodes), cfg.arch, local, cfg.federation, mix_seed(run.seed, kFedStream));
  const auto& ids = spec.roles.train;
  state = run_federation(std::move(state), cfg.federation.rounds, [&](const FederationEvent& ev) {
    const std::size_t round = ev.round + 1;
    if (ev.kind == FederationEvent::Kind::LocalEpoch) {
      const std::string& id = ids[ev.node];
      run.curve.push_back({round, ev.epoch, id, "train", ev.train.accuracy, ev.train.loss});
      if (d.test.count(id)) {
        const Metrics v = evaluate_on(*ev.model, d.test.at(id), ledger);
        run.curve.push_back({round, ev.epoch, id, "val:" + id, v.accuracy, v.loss});
      }
      return;
    }
    std::map<std::string, double> global_acc;
    for (const auto& id : ids) {
      if (!d.test.count(id)) continue;
      const Metrics v = evaluate_on(*ev.model, d.test.at(id), ledger);
      global_acc[id] = v.accuracy;
      run.curve.push_back({round, ev.epoch, "global", "val:" + id, v.accuracy, v.loss});
    }
    // Cross-node view: every node model against the other nodes' test data.
    double jump = 0.0;
    std::size_t terms = 0;
    for (std::size_t m = 0; m < ids.size(); ++m) {
      double delta = 0.0;
      std::size_t others = 0;
      for (std::size_t n = 0; n < ids.size(); ++n) {
        if (n == m || !global_acc.count(ids[n])) continue;
        delta += global_acc[ids[n]] - evaluate_on(ev.state->node_models[m], d.test.at(ids[n]), ledger).accuracy;
        ++others;
      }
      if (others) {
        jump += delta / static_cast<double>(others);
        ++terms;
      }
    }
    if (terms) run.aggregation_jumps.push_back(jump / static_cast<double>(terms));
  });
  run.model = state.global;
  for (const auto& id : spec.roles.test) {
    const Metrics v = evaluate_on(run.model, d.test.at(id), ledger);
    run.tests.push_back({id, v.accuracy, v.loss});
  }
}

void run_meta(const ExperimentSpec& spec, DataCache& data, SeedRun& run, AccessLedger& ledger) {
  const auto& cfg = spec.config;
  require(spec.roles.test.size() == 1, ErrorCode::Config, "meta-learning adapts to exactly one target node");
  SeedData d = bind(spec, data, run.seed, ledger);
  const std::string& target = spec.roles.test.front();
  const std::string label = training_label(spec.roles);

  std::vector<SampleSet> sources;
  for (const auto& id : spec.roles.train) sources.push_back(d.train.at(id));
  {
    AccessLedger::Scope scope(&ledger, Phase::Training);
    MetaState ms = meta_train(sources, cfg.arch, cfg.meta, mix_seed(run.seed, kMetaStream), [&](const MetaState& s) {
      const TaskRecord& t = s.history.back();
      run.curve.push_back({s.iteration, 0, label, "query", std::max(0.0, t.query_accuracy), t.final_inner_loss});
    });
    run.init = std::move(ms.meta);
  }
  const Metrics before = evaluate_on(run.init, d.test.at(target), ledger);
  run.curve.push_back({cfg.meta.iterations, 0, "meta", "val:" + target, before.accuracy, before.loss});

  AccessLedger::Scope scope(&ledger, Phase::FineTuning);
  Rng rng(mix_seed(run.seed, kSupportStream));
  const SampleSet support = draw_support(d.train.at(target), cfg.meta.shot_budget, rng);
  for (std::size_t s = 1; s <= cfg.meta.shot_budget; ++s) {
    ModelParams tuned = fine_tune(run.init, support, s, cfg.meta.finetune_rate);
    const Metrics v = evaluate_on(tuned, d.test.at(target), ledger);
    run.shots.push_back({run.seed, s, v.accuracy});
    if (s == cfg.report_shots) {
      run.tests.push_back({target, v.accuracy, v.loss});
      run.model = std::move(tuned);
    }
  }
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

void write_csv_number(std::ostream& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  out << buf;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string to_string(Case c) {
  switch (c) {
    case Case::SD: return "SD";
    case Case::DA: return "DA";
    case Case::DR: return "DR";
  }
  return "?";
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::Independent: return "Independent";
    case Strategy::Universal: return "Universal";
    case Strategy::FL: return "FL";
    case Strategy::Meta: return "Meta";
  }
  return "?";
}

Case parse_case(const std::string& text) {
  const auto t = lower(text);
  if (t == "sd") return Case::SD;
  if (t == "da") return Case::DA;
  if (t == "dr") return Case::DR;
  throw Error(ErrorCode::Config, "unknown case '" + text + "'");
}

Strategy parse_strategy(const std::string& text) {
  const auto t = lower(text);
  if (t == "independent") return Strategy::Independent;
  if (t == "universal") return Strategy::Universal;
  if (t == "fl" || t == "fedavg") return Strategy::FL;
  if (t == "meta" || t == "reptile") return Strategy::Meta;
  throw Error(ErrorCode::Config, "unknown strategy '" + text + "'");
}

NodeRoles reference_roles(Strategy strategy, Case kase) {
  switch (strategy) {
    case Strategy::Independent:
      if (kase == Case::SD) return {{"Red"}, {"Red"}};
      if (kase == Case::DA) return {{"Red"}, {"CA"}};
      return {{"CB"}, {"CA"}};
    case Strategy::Universal:
      if (kase == Case::DA) return {{"Red", "CA", "CB"}, {"Red", "CA"}};
      if (kase == Case::DR) return {{"CA", "CB"}, {"CA"}};
      break;
    case Strategy::FL:
      if (kase == Case::DA) return {{"Red", "CA", "CB"}, {"Red", "CA", "CB"}};
      if (kase == Case::DR) return {{"CA", "CB"}, {"CA", "CB"}};
      break;
    case Strategy::Meta:
      if (kase == Case::DA) return {{"Red"}, {"CA"}};
      if (kase == Case::DR) return {{"CB"}, {"CA"}};
      break;
  }
  throw Error(ErrorCode::Config, "no reference roles for " + to_string(strategy) + " " + to_string(kase));
}

std::string approach_label(Strategy strategy, std::size_t train_nodes) {
  switch (strategy) {
    case Strategy::Independent: return "Independent";
    case Strategy::Universal: return "Universal";
    case Strategy::FL: return "FL - " + std::to_string(train_nodes) + "Agents";
    case Strategy::Meta: return "Meta-learning";
  }
  return "?";
}

const NodeSpec& HarnessConfig::node(const std::string& node_id) const {
  for (const auto& n : nodes)
    if (n.profile.node_id == node_id) return n;
  throw Error(ErrorCode::Config, "no node '" + node_id + "' in the configuration");
}

void HarnessConfig::validate() const {
  require(!seeds.empty(), ErrorCode::Config, "seed list is empty");
  require(!nodes.empty(), ErrorCode::Config, "no nodes configured");
  require(threshold_sigma >= 0.0, ErrorCode::Config, "threshold_sigma must be >= 0");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& n = nodes[i];
    for (std::size_t j = 0; j < i; ++j)
      require(nodes[j].profile.node_id != n.profile.node_id, ErrorCode::Config,
              "duplicate node '" + n.profile.node_id + "'");
    require(n.samples >= 2, ErrorCode::Config, "node " + n.profile.node_id + " needs at least 2 samples");
    require(n.split_ratio > 0.0 && n.split_ratio < 1.0, ErrorCode::Config,
            "node " + n.profile.node_id + ": split_ratio must be in (0, 1)");
    try {
      n.profile.validate();
    } catch (const Error& e) {
      throw Error(ErrorCode::Config, e.what());
    }
  }
  try {
    arch.validate();
    train.validate();
    meta.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::Config, e.what());
  }
  require(federation.rounds >= 1, ErrorCode::Config, "federation.rounds must be >= 1");
  require(federation_learning_rate >= 0.0, ErrorCode::Config, "federation.learning_rate must be >= 0");
  require(report_shots >= 1 && report_shots <= meta.shot_budget, ErrorCode::Config,
          "report_shots must be within the shot budget");
}

HarnessConfig reference_config() {
  HarnessConfig c;
  const auto profiles = reference_profiles();
  const std::size_t sizes[] = {1085, 122, 126};
  const double ratios[] = {0.94, 0.8, 0.8};
  for (std::size_t i = 0; i < profiles.size(); ++i) c.nodes.push_back({profiles[i], sizes[i], ratios[i]});
  c.threshold_sigma = kThresholdSigma;
  c.train.learning_rate = 3e-3;
  c.federation_learning_rate = 1e-3;
  c.train.epochs = 12;
  c.meta.finetune_rate = 3e-4;
  return c;
}

HarnessConfig quick_config() {
  HarnessConfig c = reference_config();
  c.nodes[0].samples = 200;
  c.nodes[1].samples = 60;
  c.nodes[2].samples = 60;
  return c;
}

HarnessConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Config, std::string("malformed JSON: ") + e.what());
  }
  return from_json(j);
}

HarnessConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const HarnessConfig& config) { return to_json(config).dump(2); }

std::string config_digest(const HarnessConfig& config) { return fnv1a(to_json(config).dump()); }

ExperimentSpec make_spec(Strategy strategy, Case kase, const HarnessConfig& config) {
  return {strategy, kase, reference_roles(strategy, kase), config};
}

std::vector<ExperimentSpec> reference_matrix(const HarnessConfig& config, bool include_sd) {
  std::vector<ExperimentSpec> out;
  if (include_sd) out.push_back(make_spec(Strategy::Independent, Case::SD, config));
  for (Strategy s : {Strategy::Independent, Strategy::Universal, Strategy::FL, Strategy::Meta})
    for (Case c : {Case::DA, Case::DR}) out.push_back(make_spec(s, c, config));
  return out;
}

NodeData preprocess_node(std::vector<LabeledSample> raw, const NodeSpec& spec, double threshold_sigma,
                         std::uint64_t seed) {
  NodeData out;
  out.node_id = spec.profile.node_id;
  out.generated = raw.size();
  CleanResult cleaned = clean(std::move(raw), threshold_sigma * spec.profile.noise_std);
  out.rejected = cleaned.rejected;
  out.split = split(cleaned.kept, spec.split_ratio, seed);
  return out;
}

NodeData prepare_node(const NodeSpec& spec, double threshold_sigma, std::uint64_t seed) {
  DatasetOptions opts;
  opts.n_samples = spec.samples;
  return preprocess_node(synthesize_dataset(spec.profile, opts, seed), spec, threshold_sigma, seed);
}

DataCache::DataCache(const HarnessConfig& config)
    : loader_([config](const std::string& id, std::uint64_t seed) {
        return prepare_node(config.node(id), config.threshold_sigma, seed);
      }) {}

DataCache::DataCache(Loader loader) : loader_(std::move(loader)) {}

const NodeData& DataCache::get(const std::string& node_id, std::uint64_t seed) {
  auto key = std::make_pair(node_id, seed);
  auto it = cache_.find(key);
  if (it == cache_.end()) it = cache_.emplace(key, std::make_unique<NodeData>(loader_(node_id, seed))).first;
  return *it->second;
}

std::string ExperimentReport::name() const { return lower(to_string(strategy)) + "-" + lower(to_string(kase)); }

double ExperimentReport::mean_accuracy(const std::string& node) const {
  std::vector<double> v;
  for (const auto& r : runs)
    for (const auto& t : r.tests)
      if (t.test_node == node) v.push_back(t.accuracy);
  return mean_of(v);
}

double ExperimentReport::std_accuracy(const std::string& node) const {
  std::vector<double> v;
  for (const auto& r : runs)
    for (const auto& t : r.tests)
      if (t.test_node == node) v.push_back(t.accuracy);
  return std_of(v);
}

double ExperimentReport::mean_shot_accuracy(std::size_t shots) const {
  std::vector<double> v;
  for (const auto& r : runs)
    for (const auto& p : r.shots)
      if (p.shots == shots) v.push_back(p.accuracy);
  return mean_of(v);
}

double ExperimentReport::mean_aggregation_jump() const {
  std::vector<double> v;
  for (const auto& r : runs) v.insert(v.end(), r.aggregation_jumps.begin(), r.aggregation_jumps.end());
  return mean_of(v);
}

ExperimentReport run_case(const ExperimentSpec& spec, DataCache& data, const ProgressFn& progress) {
  spec.config.validate();
  require(!spec.roles.train.empty() && !spec.roles.test.empty(), ErrorCode::Config,
          "experiment needs training and test nodes");
  for (const auto& id : spec.roles.train) spec.config.node(id);
  for (const auto& id : spec.roles.test) spec.config.node(id);

  ExperimentReport report;
  report.strategy = spec.strategy;
  report.kase = spec.kase;
  report.roles = spec.roles;
  report.config_digest = config_digest(spec.config);
  const auto t0 = std::chrono::steady_clock::now();
  for (std::uint64_t seed : spec.config.seeds) {
    if (progress) progress(report.name() + " seed " + std::to_string(seed));
    const auto s0 = std::chrono::steady_clock::now();
    SeedRun run;
    run.seed = seed;
    switch (spec.strategy) {
      case Strategy::Independent:
      case Strategy::Universal: run_supervised(spec, data, run, report.ledger); break;
      case Strategy::FL: run_federated(spec, data, run, report.ledger); break;
      case Strategy::Meta: run_meta(spec, data, run, report.ledger); break;
    }
    run.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - s0).count();
    report.runs.push_back(std::move(run));
  }
  report.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

ExperimentReport run_case(const ExperimentSpec& spec) {
  DataCache data(spec.config);
  return run_case(spec, data);
}

std::vector<TableRow> table_rows(const ExperimentReport& report) {
  std::vector<TableRow> rows;
  for (const auto& id : report.roles.test)
    rows.push_back({approach_label(report.strategy, report.roles.train.size()), to_string(report.kase),
                    training_label(report.roles), id, report.mean_accuracy(id), report.std_accuracy(id),
                    report.runs.size()});
  return rows;
}

std::uint64_t MatrixReport::leaks() const {
  std::uint64_t n = 0;
  for (const auto& r : reports) n += r.ledger.leaks();
  return n;
}

MatrixReport run_matrix(const std::vector<ExperimentSpec>& specs, DataCache& data, const ProgressFn& progress) {
  require(!specs.empty(), ErrorCode::Config, "no experiments requested");
  MatrixReport out;
  for (const auto& spec : specs) {
    out.reports.push_back(run_case(spec, data, progress));
    for (auto& row : table_rows(out.reports.back())) out.table.push_back(std::move(row));
  }
  return out;
}

void write_table_csv(std::ostream& out, const std::vector<TableRow>& rows) {
  out << "Approach,Case,Training,Test,Test acc,Std,Seeds\n";
  for (const auto& r : rows) {
    out << r.approach << ',' << r.kase << ',' << r.training << ',' << r.test << ',';
    write_csv_number(out, r.mean);
    out << ',';
    write_csv_number(out, r.std);
    out << ',' << r.seeds << '\n';
  }
}

void write_metric_csv(std::ostream& out, const std::vector<MetricRow>& rows) {
  out << "round,epoch,node,split,accuracy,loss\n";
  for (const auto& r : rows) {
    out << r.round << ',' << r.epoch << ',' << r.node << ',' << r.split << ',';
    write_csv_number(out, r.accuracy);
    out << ',';
    write_csv_number(out, r.loss);
    out << '\n';
  }
}

void write_fewshot_csv(std::ostream& out, const std::vector<ShotPoint>& points) {
  out << "seed,shots,accuracy\n";
  for (const auto& p : points) {
    out << p.seed << ',' << p.shots << ',';
    write_csv_number(out, p.accuracy);
    out << '\n';
  }
}

std::vector<std::filesystem::path> emit_curves(const ExperimentReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  auto open = [&](const std::filesystem::path& p) {
    std::ofstream f(p);
    require(static_cast<bool>(f), ErrorCode::Io, "cannot write " + p.string());
    written.push_back(p);
    return f;
  };
  std::vector<ShotPoint> shots;
  for (const auto& run : report.runs) {
    auto f = open(dir / (report.name() + "_seed" + std::to_string(run.seed) + "_metrics.csv"));
    write_metric_csv(f, run.curve);
    shots.insert(shots.end(), run.shots.begin(), run.shots.end());
  }
  auto f = open(dir / (report.name() + "_fewshot.csv"));
  write_fewshot_csv(f, shots);
  return written;
}

}  // namespace das
