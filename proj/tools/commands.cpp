#include "commands.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "bbox/container.hpp"
#include "bbox/error.hpp"
#include "bbox/rng.hpp"
#include "bbox/zoo.hpp"

#ifndef BBOX_VERSION
#define BBOX_VERSION "0.0.0"
#endif

namespace bbox::cli {

namespace {

using json = nlohmann::json;

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_checksum(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return hex64(fnv1a(s.str()));
}

std::string net_checksum(const DifferentiableNet& net) {
  std::ostringstream s;
  write_container(s, net_to_container(net));
  return hex64(fnv1a(s.str()));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
}

DifferentiableNet build_model(const ModelSpec& spec, const Workspace& ws, const char* role, std::ostream& log) {
  const Shape shape = ws.dataset.data.images.shape();
  const std::size_t classes = ws.dataset.data.classes;
  if (spec.path) {
    auto net = load_net(*spec.path);
    if (net.input_shape() != shape || net.classes() != classes) {
      throw Error(ErrorCode::ShapeMismatch, std::string(role) + " model " + *spec.path + " does not fit the dataset");
    }
    return net;
  }
  log << "training " << role << " (" << spec.architecture << ", " << spec.train.epochs << " epochs)\n";
  return train(make_architecture(spec.architecture, shape, classes, spec.seed), ws.train, spec.train);
}

json model_entry(const ModelSpec& spec, const DifferentiableNet& net, const Workspace& ws) {
  return {{"spec", to_json(spec)},
          {"label", net.label()},
          {"checksum", net_checksum(net)},
          {"train_accuracy", accuracy(net, ws.train.images, ws.train.labels)},
          {"pool_accuracy", accuracy(net, ws.pool.images, ws.pool.labels)}};
}

bool needs_robust(const RunConfig& c) {
  for (const auto& s : c.settings) {
    if (setting_by_name(s).robust_target) return true;
  }
  return false;
}

std::string describe(const ThreatModel& tm) { return classify_cell(tm); }

void print_rankings(const Report& report, std::ostream& out) {
  auto table = [&](const std::vector<Ranking>& rankings) {
    for (const auto& r : rankings) {
      out << "  [" << r.setting << "] by " << r.indexing;
      if (r.at >= 0.0) out << " at " << r.at;
      out << '\n';
      for (std::size_t i = 0; i < r.entries.size(); ++i) {
        out << "    " << i + 1 << ". " << r.entries[i].attack_id << "  asr=" << std::fixed << std::setprecision(3)
            << r.entries[i].asr << std::defaultfloat << '\n';
      }
    }
  };
  out << "rankings:\n";
  table(report.iteration_rankings);
  table(report.time_rankings);
}

void print_summary(const Report& report, std::ostream& out) {
  for (const auto& s : report.attacks) {
    out << s.attack_id << ": final asr " << std::fixed << std::setprecision(3) << s.final_asr;
    if (s.representative_asr) out << ", * asr@" << *s.representative << " " << *s.representative_asr;
    if (s.mean_queries) out << ", mean queries " << std::setprecision(1) << *s.mean_queries;
    out << std::defaultfloat << '\n';
  }
  for (const auto& w : report.warnings) out << "warning: " << w << '\n';
}

std::vector<std::optional<double>> optional_series(const json& j) {
  std::vector<std::optional<double>> out;
  for (const auto& v : j) out.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
  return out;
}

Ranking ranking_from_json(const json& j) {
  Ranking r{j.at("setting").get<std::string>(), j.at("indexing").get<std::string>(), j.at("at").get<double>(), {}};
  for (const auto& e : j.at("entries")) r.entries.push_back({e.at("attack_id").get<std::string>(), e.at("asr").get<double>()});
  return r;
}

}  // namespace

LoadedDataset load_dataset(const DatasetSpec& spec) {
  switch (spec.source) {
    case DatasetSource::Synthetic: return synth_dataset(spec.generator, spec.params, spec.seed);
    case DatasetSource::IdxFiles: return ingest_idx(spec.images, spec.labels);
    case DatasetSource::RawBinary: return ingest_raw(spec.path, spec.shape, spec.classes);
  }
  throw Error(ErrorCode::Config, "unknown dataset source");
}

Workspace prepare_workspace(const RunConfig& config, std::ostream& log) {
  Workspace ws;
  ws.dataset = load_dataset(config.dataset);
  const std::size_t n = ws.dataset.data.size();
  const auto n_train = static_cast<std::size_t>(config.dataset.train_fraction * static_cast<double>(n));
  if (n_train == 0 || n_train >= n) throw Error(ErrorCode::Config, "dataset too small for the train/pool split");
  std::vector<std::size_t> head(n_train);
  std::vector<std::size_t> tail(n - n_train);
  std::iota(head.begin(), head.end(), std::size_t{0});
  std::iota(tail.begin(), tail.end(), n_train);
  ws.train = ws.dataset.data.subset(head);
  ws.pool = ws.dataset.data.subset(tail);
  ws.dataset.manifest.splits = {{"train", n_train}, {"pool", n - n_train}};

  auto target = std::make_shared<DifferentiableNet>(build_model(config.target, ws, "target", log));
  ws.models["target"] = model_entry(config.target, *target, ws);
  ws.target = target;
  if (needs_robust(config)) {
    if (!config.robust_target) throw Error(ErrorCode::Config, "robust settings need models.robust_target");
    auto robust = std::make_shared<DifferentiableNet>(build_model(*config.robust_target, ws, "robust target", log));
    ws.models["robust_target"] = model_entry(*config.robust_target, *robust, ws);
    ws.robust_target = robust;
  }
  auto surrogates = std::make_shared<std::vector<DifferentiableNet>>();
  ws.models["surrogates"] = json::array();
  for (const auto& s : config.surrogates) {
    surrogates->push_back(build_model(s, ws, "surrogate", log));
    ws.models["surrogates"].push_back(model_entry(s, surrogates->back(), ws));
  }
  ws.surrogates = surrogates;
  return ws;
}

BenchmarkPlan make_plan(const RunConfig& c, const Workspace& ws, std::size_t threads) {
  BenchmarkPlan plan;
  plan.id = c.plan_id;
  plan.attacks = c.attacks;
  if (c.override_threat_model) {
    for (auto& a : plan.attacks) a.override_threat_model = true;
  }
  plan.settings.clear();
  for (const auto& s : c.settings) plan.settings.push_back(setting_by_name(s));
  plan.data = std::make_shared<Dataset>(ws.pool);
  plan.target = ws.target;
  plan.robust_target = ws.robust_target;
  plan.surrogates = ws.surrogates;
  plan.dataset_ref = ws.dataset.manifest.checksum;
  plan.target_ref = ws.models.at("target").at("checksum").get<std::string>();
  if (ws.models.contains("robust_target")) {
    plan.robust_target_ref = ws.models.at("robust_target").at("checksum").get<std::string>();
  }
  for (const auto& s : ws.models.at("surrogates")) plan.surrogate_refs.push_back(s.at("checksum").get<std::string>());
  plan.budget = c.budget;
  plan.seeds_per_run = c.seeds_per_run;
  plan.batch_size = c.batch_size;
  plan.representative_iteration = c.representative_iteration;
  plan.master_seed = c.seed;
  plan.threads = threads;
  return plan;
}

void prepare_outdir(const std::filesystem::path& outdir, bool force) {
  std::error_code ec;
  if (std::filesystem::exists(outdir) && !std::filesystem::is_empty(outdir) && !force) {
    throw Error(ErrorCode::Io, "output directory " + outdir.string() + " exists; pass --force to overwrite");
  }
  std::filesystem::create_directories(outdir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + outdir.string() + ": " + ec.message());
}

void write_results(const BenchmarkResult& result, const RunConfig& config, const Workspace& ws, std::size_t threads,
                   const std::filesystem::path& outdir) {
  const auto report_path = outdir / "report.json";
  const auto timing_path = outdir / "timing.json";
  const auto summary_path = outdir / "summary.csv";
  write_text(report_path, report_json(result.report).dump(2) + "\n");
  write_text(timing_path, timing_json(result.report).dump(2) + "\n");
  write_text(summary_path, summary_csv(result.report));
  const auto plots = emit_plot_data(result.report, outdir / "plots");
  const auto traces = persist_traces(result.traces, config.plan_id, outdir / "traces");

  json outputs = json::object();
  for (const auto& p : {report_path, timing_path, summary_path}) {
    outputs[std::filesystem::relative(p, outdir).string()] = file_checksum(p);
  }
  for (const auto& group : {plots, traces}) {
    for (const auto& p : group) outputs[std::filesystem::relative(p, outdir).string()] = file_checksum(p);
  }
  json seeds = json::object();
  for (const auto& t : result.traces) seeds[t.attack_id] = {{"run_seed", t.run_seed}, {"examples", t.seeds}};
  const json manifest = {{"tool", "bbox"},
                         {"versions",
                          {{"bbox", BBOX_VERSION},
                           {"compiler", __VERSION__},
                           {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                                 std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                                 std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}},
                         {"config", to_json(config)},
                         {"master_seed", config.seed},
                         {"threads", threads},
                         {"concurrency", result.report.concurrency},
                         {"dataset", to_json(ws.dataset.manifest)},
                         {"models", ws.models},
                         {"seeds", seeds},
                         {"outputs", outputs}};
  write_text(outdir / "manifest.json", manifest.dump(2) + "\n");
}

Report read_report(const std::filesystem::path& dir) {
  auto load = [&](const char* name) {
    std::ifstream in(dir / name);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + (dir / name).string());
    try {
      return json::parse(in);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::Config, (dir / name).string() + ": " + e.what());
    }
  };
  const json rj = load("report.json");
  const json tj = load("timing.json");
  try {
    Report r;
    r.plan_id = rj.at("plan_id").get<std::string>();
    r.master_seed = rj.at("master_seed").get<std::uint64_t>();
    r.concurrency = tj.at("concurrency").get<std::string>();
    r.warnings = rj.at("warnings").get<std::vector<std::string>>();
    r.log = rj.at("log").get<std::vector<std::string>>();
    const auto& timing = tj.at("attacks");
    for (std::size_t i = 0; i < rj.at("attacks").size(); ++i) {
      const auto& a = rj.at("attacks")[i];
      const auto& t = timing.at(i);
      AttackSummary s;
      s.attack_id = a.at("attack_id").get<std::string>();
      if (t.at("attack_id").get<std::string>() != s.attack_id) {
        throw Error(ErrorCode::Config, "report.json and timing.json disagree");
      }
      s.attack = a.at("attack").get<std::string>();
      s.setting = a.at("setting").get<std::string>();
      s.cell = a.at("cell").get<std::string>();
      s.kind = a.at("kind").get<std::string>() == "transfer" ? AttackKind::Transfer : AttackKind::Query;
      s.config_hash = a.at("config_hash").get<std::string>();
      s.run_seed = a.at("run_seed").get<std::uint64_t>();
      s.seeds = a.at("seeds").get<std::size_t>();
      s.index = a.at("index").get<std::vector<std::size_t>>();
      s.asr = a.at("asr").get<std::vector<double>>();
      s.asr_best = a.at("asr_best").get<std::vector<double>>();
      s.local_loss = optional_series(a.at("local_loss"));
      s.local_asr = optional_series(a.at("local_asr"));
      s.final_asr = a.at("final_asr").get<double>();
      if (!a.at("mean_queries").is_null()) s.mean_queries = a.at("mean_queries").get<double>();
      if (!a.at("median_queries").is_null()) s.median_queries = a.at("median_queries").get<double>();
      if (!a.at("representative").is_null()) {
        s.representative = a.at("representative").at("index").get<std::size_t>();
        s.representative_asr = a.at("representative").at("asr").get<double>();
      }
      s.override_used = a.at("override").at("used").get<bool>();
      s.violations = a.at("override").at("violations").get<std::vector<std::string>>();
      s.elapsed = t.at("elapsed_s").get<std::vector<double>>();
      const auto& rt = t.at("runtime");
      s.runtime = {rt.at("total_s").get<double>(), rt.at("warmup_s").get<double>(), rt.at("mean_step_s").get<double>(),
                   rt.at("max_step_s").get<double>()};
      r.attacks.push_back(std::move(s));
    }
    for (const auto& x : rj.at("iteration_rankings")) r.iteration_rankings.push_back(ranking_from_json(x));
    for (const auto& x : tj.at("time_rankings")) r.time_rankings.push_back(ranking_from_json(x));
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Config, dir.string() + ": malformed report: " + e.what());
  }
}

std::size_t bench_threads() {
  const char* env = std::getenv("BBOX_BENCH_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw Error(ErrorCode::Config, "BBOX_BENCH_THREADS must be a positive integer");
  return static_cast<std::size_t>(v);
}

int parse_and_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Black-box adversarial attack library and benchmark", "bbox"};
  app.set_version_flag("--version", std::string("bbox ") + BBOX_VERSION);
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string outdir;
  bool force = false;
  bool override_tm = false;
  std::string budget_mode;
  std::optional<double> budget_value;
  std::string attack_id;
  std::string report_input;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Run config (JSON) or a run manifest to replay")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Master seed");
    sub->add_option("--out", outdir, "Output directory");
    sub->add_flag("--force", force, "Overwrite a non-empty output directory");
  };
  auto* train_cmd = app.add_subcommand("train", "Train the configured models and save them as BBNW files");
  common(train_cmd);
  auto* attack_cmd = app.add_subcommand("attack", "Run a single attack");
  common(attack_cmd);
  attack_cmd->add_option("--attack", attack_id, "Attack id (replaces the configured attack list)");
  auto* bench_cmd = app.add_subcommand("bench", "Run a benchmark plan");
  common(bench_cmd);
  for (auto* sub : {attack_cmd, bench_cmd}) {
    sub->add_flag("--override-threat-model", override_tm, "Run attacks whose profile violates the threat model");
    sub->add_option("--budget-mode", budget_mode, "Budget kind")->check(CLI::IsMember({"iters", "seconds", "queries"}));
    sub->add_option("--budget-value", budget_value, "Budget amount")->check(CLI::PositiveNumber);
  }
  auto* report_cmd = app.add_subcommand("report", "Summarize a finished run directory");
  report_cmd->add_option("input", report_input, "Run directory holding report.json")->check(CLI::ExistingDirectory);
  report_cmd->add_option("--config", config_path, "Run config naming report_input")->check(CLI::ExistingFile);
  report_cmd->add_option("--out", outdir, "Where to write summary.csv and plots/");
  report_cmd->add_flag("--force", force, "Overwrite a non-empty output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    RunConfig config = config_path.empty() ? default_config() : load_config(config_path);
    CLI::App* sub = app.get_subcommands().front();
    config.command = sub->get_name();
    if (seed) config.seed = *seed;
    if (!outdir.empty()) config.output = outdir;
    if (override_tm) config.override_threat_model = true;
    if (!budget_mode.empty()) config.budget.kind = budget_kind_from_string(budget_mode);
    if (budget_value) config.budget.value = *budget_value;
    config.budget.validate();

    if (config.command == "report") {
      const std::filesystem::path input = report_input.empty() ? config.report_input : report_input;
      if (input.empty()) throw Error(ErrorCode::Config, "report needs a run directory");
      const Report report = read_report(input);
      std::filesystem::path target = input;
      if (!outdir.empty()) {
        target = outdir;
        prepare_outdir(target, force);
      }
      print_summary(report, out);
      print_rankings(report, out);
      write_text(target / "summary.csv", summary_csv(report));
      emit_plot_data(report, target / "plots");
      return 0;
    }

    if (config.command == "attack") {
      if (!attack_id.empty()) {
        AttackSpec a;
        a.id = attack_id;
        builtin_profile(a.id);
        a.threat_model = config.threat_model;
        config.attacks = {a};
      }
      if (config.attacks.size() != 1) throw Error(ErrorCode::Config, "attack runs exactly one attack; use --attack");
    }
    // threat-model violations surface before any model is trained
    for (const auto& a : config.attacks) {
      const auto v = validate(builtin_profile(a.id), a.threat_model);
      if (v.ok() || a.override_threat_model || config.override_threat_model) continue;
      err << "threat model " << describe(a.threat_model) << " does not permit " << a.name() << ":\n";
      for (const auto& x : v.violations) err << "  " << to_string(x.axis) << ": " << x.reason << '\n';
      throw Error(ErrorCode::ThreatModelViolation, a.name() + " violates its threat model (use --override-threat-model)");
    }

    const std::filesystem::path dir = config.output;
    prepare_outdir(dir, force);
    const std::size_t threads = bench_threads();
    Workspace ws = prepare_workspace(config, err);

    if (config.command == "train") {
      save_net(dir / "target.bbnw", *ws.target);
      if (ws.robust_target) save_net(dir / "robust_target.bbnw", *ws.robust_target);
      for (std::size_t i = 0; i < ws.surrogates->size(); ++i) {
        save_net(dir / ("surrogate-" + std::to_string(i) + ".bbnw"), (*ws.surrogates)[i]);
      }
      const json manifest = {{"tool", "bbox"},
                             {"versions", {{"bbox", BBOX_VERSION}}},
                             {"config", to_json(config)},
                             {"dataset", to_json(ws.dataset.manifest)},
                             {"models", ws.models}};
      write_text(dir / "manifest.json", manifest.dump(2) + "\n");
      out << "target pool accuracy " << ws.models["target"]["pool_accuracy"].get<double>() << '\n';
      out << "models written to " << dir.string() << '\n';
      return 0;
    }

    const BenchmarkPlan plan = make_plan(config, ws, threads);
    const BenchmarkResult result = run_benchmark(plan);
    write_results(result, config, ws, threads, dir);
    print_summary(result.report, out);
    print_rankings(result.report, out);
    out << "results written to " << dir.string() << '\n';
    return 0;
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace bbox::cli
