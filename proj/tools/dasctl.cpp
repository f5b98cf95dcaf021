// dasctl: command-line driver for the DAS activity experiments.
//
//   dasctl synth      --config run.json
//   dasctl preprocess --config run.json
//   dasctl train      --config run.json [--case DA ...]
//   dasctl fed        --config run.json [--case DA ...]
//   dasctl meta       --config run.json [--case DA ...]
//   dasctl eval       --config run.json --checkpoint m.ckpt --node CA [--seed 1]
//   dasctl report     --config run.json
//
// Everything lands under the configuration's output_dir. Failures print one
// line `error: code=<code> message="<text>"` on stderr and exit nonzero.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "das/dataset_io.hpp"
#include "das/error.hpp"
#include "das/harness.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Options {
  std::string config_path;
  std::string run_dir;
  std::vector<std::string> cases;
  std::string checkpoint;
  std::string node;
  std::uint64_t seed = 0;
  bool has_seed = false;
  bool quiet = false;
};

struct Context {
  das::HarnessConfig config;
  fs::path run_dir;
  std::string digest;
  bool quiet = false;

  void log(const std::string& msg) const {
    if (!quiet) std::cerr << "[dasctl] " << msg << "\n";
  }
};

fs::path seed_dir(const Context& ctx, std::uint64_t seed) {
  return ctx.run_dir / "data" / ("seed-" + std::to_string(seed));
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  das::require(static_cast<bool>(in), das::ErrorCode::Io, "cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw das::Error(das::ErrorCode::Format, p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  das::require(static_cast<bool>(out), das::ErrorCode::Io, "cannot write " + p.string());
  out << j.dump(2) << "\n";
}

/// Creates or extends run_dir/manifest.json. A run directory is bound to one
/// configuration digest.
void record_step(const Context& ctx, const std::string& command, const std::vector<fs::path>& outputs,
                 double seconds) {
  const fs::path path = ctx.run_dir / "manifest.json";
  json m;
  if (fs::exists(path)) {
    m = read_json(path);
  } else {
    m["config_digest"] = ctx.digest;
    m["config"] = json::parse(das::dump_config(ctx.config));
    m["seeds"] = ctx.config.seeds;
    json node_seeds = json::object();
    for (const auto& n : ctx.config.nodes) node_seeds[n.profile.node_id] = n.profile.seed;
    m["profile_seeds"] = node_seeds;
    m["steps"] = json::array();
  }
  json outs = json::array();
  for (const auto& o : outputs) outs.push_back(fs::relative(o, ctx.run_dir).generic_string());
  m["steps"].push_back({{"command", command}, {"finished", utc_now()}, {"seconds", seconds}, {"outputs", outs}});
  write_json(path, m);
}

Context open_context(const Options& opt) {
  Context ctx;
  ctx.config = das::load_config(opt.config_path);
  if (!opt.run_dir.empty()) ctx.config.output_dir = opt.run_dir;
  ctx.run_dir = ctx.config.output_dir;
  ctx.digest = das::config_digest(ctx.config);
  ctx.quiet = opt.quiet;
  fs::create_directories(ctx.run_dir);
  const fs::path manifest = ctx.run_dir / "manifest.json";
  if (fs::exists(manifest)) {
    const json m = read_json(manifest);
    das::require(m.value("config_digest", "") == ctx.digest, das::ErrorCode::Config,
                 "run directory " + ctx.run_dir.string() + " was created with config digest " +
                     m.value("config_digest", std::string("?")) + ", current config is " + ctx.digest);
  }
  return ctx;
}

// ---------------------------------------------------------------------------

std::vector<fs::path> cmd_synth(const Context& ctx) {
  std::vector<fs::path> out;
  for (auto seed : ctx.config.seeds) {
    fs::create_directories(seed_dir(ctx, seed));
    for (const auto& n : ctx.config.nodes) {
      das::DatasetOptions opts;
      opts.n_samples = n.samples;
      auto samples = das::synthesize_dataset(n.profile, opts, seed);
      const fs::path p = seed_dir(ctx, seed) / (n.profile.node_id + ".dasg");
      das::save_dataset(p, das::make_dataset(n.profile.node_id, n.profile.sampling_rate, std::move(samples)));
      ctx.log("wrote " + p.string());
      out.push_back(p);
    }
  }
  return out;
}

std::vector<fs::path> cmd_preprocess(const Context& ctx) {
  std::vector<fs::path> out;
  for (auto seed : ctx.config.seeds) {
    const fs::path dir = seed_dir(ctx, seed);
    for (const auto& n : ctx.config.nodes) {
      const std::string& id = n.profile.node_id;
      const fs::path raw = dir / (id + ".dasg");
      das::require(fs::exists(raw), das::ErrorCode::Io, "missing " + raw.string() + "; run `dasctl synth` first");
      das::Dataset ds = das::load_dataset(raw);
      das::NodeData nd = das::preprocess_node(std::move(ds.samples), n, ctx.config.threshold_sigma, seed);
      const fs::path tr = dir / (id + ".train.dasg");
      const fs::path te = dir / (id + ".test.dasg");
      const fs::path sm = dir / (id + ".split.txt");
      das::save_dataset(tr, das::make_dataset(id, n.profile.sampling_rate, nd.split.train));
      das::save_dataset(te, das::make_dataset(id, n.profile.sampling_rate, nd.split.test));
      das::write_split_manifest(sm, nd.split, id);
      ctx.log(id + " seed " + std::to_string(seed) + ": " + std::to_string(nd.generated) + " generated, " +
              std::to_string(nd.rejected) + " rejected, " + std::to_string(nd.split.train.size()) + "/" +
              std::to_string(nd.split.test.size()) + " train/test");
      out.insert(out.end(), {tr, te, sm});
    }
  }
  return out;
}

das::DataCache file_cache(const Context& ctx) {
  return das::DataCache([&ctx](const std::string& id, std::uint64_t seed) {
    const fs::path dir = seed_dir(ctx, seed);
    const fs::path tr = dir / (id + ".train.dasg");
    const fs::path te = dir / (id + ".test.dasg");
    das::require(fs::exists(tr) && fs::exists(te), das::ErrorCode::Io,
                 "missing preprocessed data for " + id + " seed " + std::to_string(seed) +
                     "; run `dasctl synth` and `dasctl preprocess` first");
    das::NodeData nd;
    nd.node_id = id;
    nd.split.train = das::load_dataset(tr).samples;
    nd.split.test = das::load_dataset(te).samples;
    nd.split.split_ratio = ctx.config.node(id).split_ratio;
    nd.split.split_seed = seed;
    return nd;
  });
}

json report_json(const das::ExperimentReport& r, const das::HarnessConfig& cfg) {
  json runs = json::array();
  for (const auto& run : r.runs) {
    json tests = json::object();
    for (const auto& t : run.tests) tests[t.test_node] = {{"accuracy", t.accuracy}, {"loss", t.loss}};
    json shots = json::array();
    for (const auto& s : run.shots) shots.push_back({{"shots", s.shots}, {"accuracy", s.accuracy}});
    runs.push_back({{"seed", run.seed},
                    {"tests", tests},
                    {"shots", shots},
                    {"aggregation_jumps", run.aggregation_jumps},
                    {"runtime_s", run.runtime_s},
                    {"checkpoint_digest", das::params_digest(run.model)}});
  }
  json table = json::array();
  for (const auto& row : das::table_rows(r))
    table.push_back({{"approach", row.approach},
                     {"case", row.kase},
                     {"training", row.training},
                     {"test", row.test},
                     {"mean", row.mean},
                     {"std", row.std},
                     {"seeds", row.seeds}});
  return {{"strategy", das::to_string(r.strategy)},
          {"case", das::to_string(r.kase)},
          {"train_nodes", r.roles.train},
          {"test_nodes", r.roles.test},
          {"config_digest", r.config_digest},
          {"seeds", cfg.seeds},
          {"runs", runs},
          {"table", table},
          {"test_reads_while_fitting", r.ledger.leaks()},
          {"runtime_s", r.runtime_s}};
}

std::vector<das::Case> selected_cases(const Options& opt, std::vector<das::Case> defaults) {
  if (opt.cases.empty()) return defaults;
  std::vector<das::Case> out;
  for (const auto& c : opt.cases) out.push_back(das::parse_case(c));
  return out;
}

std::vector<fs::path> run_cells(const Context& ctx, const std::vector<das::Strategy>& strategies,
                                const std::vector<das::Case>& cases) {
  das::DataCache data = file_cache(ctx);
  std::vector<fs::path> out;
  for (auto strategy : strategies) {
    for (auto kase : cases) {
      if (kase == das::Case::SD && strategy != das::Strategy::Independent) continue;
      const das::ExperimentSpec spec = das::make_spec(strategy, kase, ctx.config);
      das::ExperimentReport report = das::run_case(spec, data, [&](const std::string& m) { ctx.log(m); });
      const fs::path dir = ctx.run_dir / report.name();
      fs::create_directories(dir);
      for (const auto& p : das::emit_curves(report, dir)) out.push_back(p);
      for (const auto& run : report.runs) {
        const std::string stem = "seed" + std::to_string(run.seed);
        const fs::path ck = dir / (stem + ".ckpt");
        das::save_checkpoint(ck, run.model);
        out.push_back(ck);
        if (strategy == das::Strategy::Meta) {
          const fs::path init = dir / (stem + ".meta.ckpt");
          das::save_checkpoint(init, run.init);
          const auto& m = ctx.config.meta;
          const fs::path side = dir / (stem + ".meta.json");
          write_json(side, {{"inner_steps", m.inner_steps},
                            {"inner_learning_rate", m.inner.learning_rate},
                            {"meta_step", m.meta_step},
                            {"iterations", m.iterations},
                            {"support_size", m.support_size},
                            {"query_size", m.query_size},
                            {"finetune_rate", m.finetune_rate},
                            {"shot_budget", m.shot_budget},
                            {"report_shots", ctx.config.report_shots},
                            {"seed", run.seed},
                            {"checkpoint", init.filename().string()}});
          out.insert(out.end(), {init, side});
        }
      }
      const fs::path res = dir / "results.json";
      write_json(res, report_json(report, ctx.config));
      out.push_back(res);
      for (const auto& row : das::table_rows(report)) {
        char line[160];
        std::snprintf(line, sizeof line, "%s %s %s->%s acc %.4f +- %.4f", row.approach.c_str(), row.kase.c_str(),
                      row.training.c_str(), row.test.c_str(), row.mean, row.std);
        ctx.log(line);
      }
      das::require(report.ledger.leaks() == 0, das::ErrorCode::ConstraintViolation,
                   report.name() + ": test data was read while fitting");
    }
  }
  return out;
}

std::vector<fs::path> cmd_eval(const Context& ctx, const Options& opt) {
  das::require(!opt.checkpoint.empty() && !opt.node.empty(), das::ErrorCode::Config,
               "eval needs --checkpoint and --node");
  const das::ModelParams params = das::load_checkpoint(opt.checkpoint);
  std::vector<std::uint64_t> seeds = ctx.config.seeds;
  if (opt.has_seed) seeds = {opt.seed};
  das::DataCache data = file_cache(ctx);
  const fs::path csv = ctx.run_dir / "eval.csv";
  const bool fresh = !fs::exists(csv);
  std::ofstream out(csv, std::ios::app);
  das::require(static_cast<bool>(out), das::ErrorCode::Io, "cannot write " + csv.string());
  if (fresh) out << "checkpoint,node,seed,samples,accuracy,loss\n";
  for (auto seed : seeds) {
    const das::NodeData& nd = data.get(opt.node, seed);
    const das::Metrics m = das::measure(params, das::SampleSet(nd.split.test));
    out << opt.checkpoint << ',' << opt.node << ',' << seed << ',' << nd.split.test.size() << ',' << m.accuracy << ','
        << m.loss << '\n';
    std::cout << json{{"checkpoint", opt.checkpoint},
                      {"node", opt.node},
                      {"seed", seed},
                      {"samples", nd.split.test.size()},
                      {"accuracy", m.accuracy},
                      {"loss", m.loss}}
                     .dump()
              << "\n";
  }
  return {csv};
}

std::vector<fs::path> cmd_report(const Context& ctx) {
  std::vector<das::TableRow> rows;
  // Summary order follows the reference matrix.
  for (const auto& spec : das::reference_matrix(ctx.config)) {
    das::ExperimentReport probe;
    probe.strategy = spec.strategy;
    probe.kase = spec.kase;
    const fs::path res = ctx.run_dir / probe.name() / "results.json";
    if (!fs::exists(res)) {
      ctx.log("no results for " + probe.name() + "; skipped");
      continue;
    }
    const json j = read_json(res);
    das::require(j.value("config_digest", "") == ctx.digest, das::ErrorCode::Config,
                 res.string() + " was produced by a different configuration");
    for (const auto& t : j.at("table"))
      rows.push_back({t.at("approach"), t.at("case"), t.at("training"), t.at("test"), t.at("mean"), t.at("std"),
                      t.at("seeds")});
  }
  das::require(!rows.empty(), das::ErrorCode::EmptyDataset, "no results to report; run train, fed or meta first");
  const fs::path table = ctx.run_dir / "table1.csv";
  std::ofstream out(table);
  das::require(static_cast<bool>(out), das::ErrorCode::Io, "cannot write " + table.string());
  das::write_table_csv(out, rows);
  das::write_table_csv(std::cout, rows);
  return {table};
}

int fail(das::ErrorCode code, const std::string& message) {
  std::string escaped;
  for (char c : message) {
    if (c == '"' || c == '\\') escaped += '\\';
    escaped += (c == '\n') ? ' ' : c;
  }
  std::cerr << "error: code=" << das::to_string(code) << " message=\"" << escaped << "\"\n";
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DAS walking/cycling experiments: synthesis, training, federation, meta-learning"};
  app.require_subcommand(1, 1);
  Options opt;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", opt.config_path, "JSON configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--run-dir", opt.run_dir, "override the configured output directory");
    sub->add_flag("-q,--quiet", opt.quiet, "no progress output");
  };
  auto* synth = app.add_subcommand("synth", "write raw DASG datasets for every node and seed");
  auto* prep = app.add_subcommand("preprocess", "validity filtering and train/test split");
  auto* train = app.add_subcommand("train", "independent and universal models");
  auto* fed = app.add_subcommand("fed", "federated averaging");
  auto* meta = app.add_subcommand("meta", "Reptile meta-training and few-shot adaptation");
  auto* eval = app.add_subcommand("eval", "score a checkpoint on a node's test split");
  auto* report = app.add_subcommand("report", "collect results into table1.csv");
  for (auto* s : {synth, prep, train, fed, meta, eval, report}) add_common(s);
  for (auto* s : {train, fed, meta})
    s->add_option("--case", opt.cases, "restrict to cases (SD, DA, DR)");
  eval->add_option("--checkpoint", opt.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--node", opt.node, "node whose test split is scored")->required();
  eval->add_option("--seed", opt.seed, "data seed (default: every configured seed)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string what = e.what();
    fail(das::ErrorCode::Config, what);
    return e.get_exit_code() ? e.get_exit_code() : 2;
  }
  opt.has_seed = eval->count("--seed") > 0;

  try {
    const auto t0 = std::chrono::steady_clock::now();
    Context ctx = open_context(opt);
    std::vector<fs::path> outputs;
    std::string name = app.get_subcommands().front()->get_name();
    using das::Case;
    using das::Strategy;
    if (*synth) {
      outputs = cmd_synth(ctx);
    } else if (*prep) {
      outputs = cmd_preprocess(ctx);
    } else if (*train) {
      outputs = run_cells(ctx, {Strategy::Independent, Strategy::Universal},
                          selected_cases(opt, {Case::SD, Case::DA, Case::DR}));
    } else if (*fed) {
      outputs = run_cells(ctx, {Strategy::FL}, selected_cases(opt, {Case::DA, Case::DR}));
    } else if (*meta) {
      outputs = run_cells(ctx, {Strategy::Meta}, selected_cases(opt, {Case::DA, Case::DR}));
    } else if (*eval) {
      outputs = cmd_eval(ctx, opt);
    } else if (*report) {
      outputs = cmd_report(ctx);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    record_step(ctx, name, outputs, secs);
    return 0;
  } catch (const das::Error& e) {
    return fail(e.code(), e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(das::ErrorCode::Io, e.what());
  } catch (const std::exception& e) {
    return fail(das::ErrorCode::InvalidArgument, e.what());
  }
}
