#include "bbox/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "bbox/error.hpp"
#include "bbox/rng.hpp"

namespace bbox {

namespace {

using json = nlohmann::json;
constexpr double kDefaultMaxQueries = 1000;
constexpr std::size_t kQueryGridPoints = 100;

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void check_params(const json& params, std::initializer_list<const char*> allowed, std::string_view attack) {
  if (!params.is_object()) throw Error(ErrorCode::Config, std::string(attack) + ": params must be an object");
  for (const auto& [key, _] : params.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw Error(ErrorCode::Config, std::string(attack) + ": unknown parameter '" + key + "'");
    }
  }
}

template <class T>
T get_or(const json& params, const char* key, T fallback) {
  if (!params.contains(key)) return fallback;
  try {
    return params.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::Config, std::string("parameter '") + key + "' has the wrong type");
  }
}

template <class T>
std::optional<T> get_opt(const json& params, const char* key) {
  if (!params.contains(key)) return std::nullopt;
  return get_or<T>(params, key, T{});
}

#define BBOX_TRANSFER_KEYS                                                                                     \
  "iterations", "step_size", "momentum", "variance_samples", "variance_beta", "emi_samples", "emi_radius",      \
      "smi_copies", "smi_shift_fraction", "di_probability", "di_scale", "admix_scales", "admix_count",           \
      "admix_eta", "max_iterations"

void apply_transfer_params(TransferConfig& c, const json& p) {
  if (auto v = get_opt<std::size_t>(p, "iterations")) c.iterations = *v;
  if (auto v = get_opt<double>(p, "step_size")) c.step_size = *v;
  auto& t = c.params;
  t.momentum = get_or(p, "momentum", t.momentum);
  t.variance_samples = get_or(p, "variance_samples", t.variance_samples);
  t.variance_beta = get_or(p, "variance_beta", t.variance_beta);
  t.emi_samples = get_or(p, "emi_samples", t.emi_samples);
  t.emi_radius = get_or(p, "emi_radius", t.emi_radius);
  t.smi_copies = get_or(p, "smi_copies", t.smi_copies);
  t.smi_shift_fraction = get_or(p, "smi_shift_fraction", t.smi_shift_fraction);
  t.di_probability = get_or(p, "di_probability", t.di_probability);
  t.di_scale = get_or(p, "di_scale", t.di_scale);
  t.admix_scales = get_or(p, "admix_scales", t.admix_scales);
  t.admix_count = get_or(p, "admix_count", t.admix_count);
  t.admix_eta = get_or(p, "admix_eta", t.admix_eta);
}

/// Ball the attack keeps its iterates in: every iterate (true) or only a
/// successful final image (false).
bool epsilon_constrained(std::string_view id) {
  return id != "square-topk" && id != "nes-topk" && id != "rays" && id != "signflip";
}

bool needs_start_pool(std::string_view id) { return id == "square-topk" || id == "nes-topk" || id == "signflip"; }

struct Context {
  const BenchmarkPlan& plan;
  const AttackSpec& spec;
  const Setting& setting;
  std::shared_ptr<const DifferentiableNet> target;
  const std::vector<std::size_t>& seeds;   // dataset indices
  const std::vector<std::size_t>& labels;  // true (untargeted) or target class
  std::uint64_t run_seed;
  std::string attack_id;
};

ImageBatch gather_seeds(const Context& ctx, std::size_t first, std::size_t len) {
  std::vector<std::size_t> idx(ctx.seeds.begin() + static_cast<std::ptrdiff_t>(first),
                               ctx.seeds.begin() + static_cast<std::ptrdiff_t>(first + len));
  return ctx.plan.data->images.gather(idx);
}

void strictly_increasing(std::vector<TraceRow>& rows) {
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].elapsed_s <= rows[i - 1].elapsed_s) rows[i].elapsed_s = std::nextafter(rows[i - 1].elapsed_s, 1e300);
  }
}

std::span<const DifferentiableNet> surrogate_span(const BenchmarkPlan& plan) {
  if (!plan.surrogates) return {};
  return {plan.surrogates->data(), plan.surrogates->size()};
}

std::size_t representative_for(const BenchmarkPlan& plan, const Setting& s) {
  return plan.representative_iteration.value_or(s.goal == Goal::Targeted ? 40 : 10);
}

void run_transfer(const Context& ctx, AttackTrace& trace) {
  const auto& plan = ctx.plan;
  TransferConfig config = transfer_config(ctx.spec.id, ctx.spec.params, ctx.setting.goal, ctx.setting.epsilon);
  config.seed = ctx.run_seed;
  TransferOptions options;
  if (plan.budget.kind == BudgetKind::Iterations) {
    config.iterations = static_cast<std::size_t>(plan.budget.value);
  } else if (plan.budget.kind == BudgetKind::WallClock) {
    const double limit = plan.budget.value;
    options.keep_going = [limit](std::size_t, double elapsed) { return elapsed < limit; };
    options.max_iterations = get_or<std::size_t>(ctx.spec.params, "max_iterations", 1000);
  }
  const auto surrogates = surrogate_span(plan);
  Oracle evaluation(ctx.target, FeedbackMode::hard_label(), OracleRole::Evaluation);

  struct BatchOutcome {
    std::size_t size = 0;
    std::vector<std::vector<bool>> success;  // [iteration][example]
    std::vector<TransferTraceRow> rows;
  };
  std::vector<BatchOutcome> batches;
  const std::size_t n = ctx.seeds.size();
  for (std::size_t first = 0; first < n; first += plan.batch_size) {
    const std::size_t len = std::min(plan.batch_size, n - first);
    const ImageBatch seeds = gather_seeds(ctx, first, len);
    const std::span<const std::size_t> labels(ctx.labels.data() + first, len);
    options.example_offset = first;
    const TransferRun run = run_transfer_attack(config, surrogates, seeds, labels, options);
    BatchOutcome out;
    out.size = len;
    out.rows = run.trace;
    for (std::size_t t = 0; t < run.candidates.size(); ++t) {
      const auto& cand = run.candidates[t];
      const auto predicted = evaluate_labels(evaluation, cand);
      std::vector<bool> ok(len);
      for (std::size_t i = 0; i < len; ++i) ok[i] = goal_satisfied(predicted[i], labels[i], ctx.setting.goal);
      if (plan.observer) {
        for (std::size_t i = 0; i < len; ++i) {
          plan.observer({ctx.attack_id, ctx.setting.name, ctx.seeds[first + i], seeds.example(i), cand.example(i),
                         ctx.setting.epsilon, true, t + 1 == run.candidates.size(), ok[i]});
        }
      }
      out.success.push_back(std::move(ok));
    }
    batches.push_back(std::move(out));
  }

  std::size_t rows = 0;
  for (const auto& b : batches) rows = std::max(rows, b.rows.size());
  for (std::size_t t = 0; t < rows; ++t) {
    double successes = 0.0;
    double loss = 0.0;
    double local = 0.0;
    double elapsed = 0.0;
    for (const auto& b : batches) {
      const double w = static_cast<double>(b.size);
      if (b.rows.empty()) continue;
      const std::size_t k = std::min(t, b.rows.size() - 1);
      successes += static_cast<double>(std::count(b.success[k].begin(), b.success[k].end(), true));
      loss += w * b.rows[k].local_loss;
      local += w * b.rows[k].local_asr;
      elapsed += b.rows[k].elapsed_s;
    }
    const double total = static_cast<double>(n);
    trace.rows.push_back({t + 1, elapsed / static_cast<double>(batches.size()), loss / total, local / total,
                          successes / total, 0});
  }
  strictly_increasing(trace.rows);
  trace.representative = representative_for(plan, ctx.setting);
}

std::vector<std::vector<double>> start_pool(const Context& ctx, std::size_t example, std::size_t label) {
  const auto& data = *ctx.plan.data;
  const std::set<std::size_t> seeds(ctx.seeds.begin(), ctx.seeds.end());
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_rng(ctx.plan.master_seed, example, "start-pool");
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  std::vector<std::vector<double>> pool;
  for (std::size_t idx : order) {
    if (pool.size() >= 32) break;
    if (seeds.contains(idx)) continue;
    const bool match = ctx.setting.goal == Goal::Targeted ? data.labels[idx] == label : data.labels[idx] != label;
    if (match) pool.emplace_back(data.images.example(idx).begin(), data.images.example(idx).end());
  }
  return pool;
}

QueryBudget query_budget(const BenchmarkPlan& plan, const json& params) {
  QueryBudget q;
  q.max_queries = static_cast<std::uint64_t>(get_or<double>(params, "max_queries", kDefaultMaxQueries));
  if (plan.budget.kind == BudgetKind::Queries) q.max_queries = static_cast<std::uint64_t>(plan.budget.value);
  if (plan.budget.kind == BudgetKind::WallClock) {
    q.max_seconds = plan.budget.value / static_cast<double>(std::max<std::size_t>(1, plan.batch_size));
  }
  return q;
}

void finish_instance(const Context& ctx, Oracle& evaluation, std::size_t position, QueryResult& r,
                     AttackTrace& trace) {
  const std::size_t example = ctx.seeds[position];
  const auto seed = ctx.plan.data->images.example(example);
  const std::size_t label = ctx.labels[position];
  bool success = false;
  if (!r.image.empty()) {
    const bool feasible = linf_distance(r.image, seed) <= ctx.setting.epsilon + 1e-9;
    success = feasible && goal_satisfied(evaluation.query(r.image).label, label, ctx.setting.goal);
  }
  if (ctx.plan.observer) {
    const bool constrained = epsilon_constrained(ctx.spec.id);
    for (const auto& s : r.states) {
      ctx.plan.observer({ctx.attack_id, ctx.setting.name, example, seed, s, ctx.setting.epsilon, constrained, false,
                         false});
    }
    if (!r.image.empty()) {
      ctx.plan.observer({ctx.attack_id, ctx.setting.name, example, seed, r.image, ctx.setting.epsilon, constrained,
                         true, success});
    }
  }
  if (r.success && !success) {
    trace.violations.push_back("example " + std::to_string(example) + ": claimed success not confirmed");
  }
  trace.queries_per_example.push_back(r.queries_used);
  trace.instances.push_back({example, r.queries_used, success, std::move(r.trace)});
}

void run_query(const Context& ctx, AttackTrace& trace) {
  const auto& plan = ctx.plan;
  const FeedbackMode mode = attack_feedback(ctx.spec.id, ctx.spec.threat_model);
  Oracle oracle(ctx.target, mode, OracleRole::Attack);
  Oracle evaluation(ctx.target, FeedbackMode::hard_label(), OracleRole::Evaluation);
  const QueryBudget qbudget = query_budget(plan, ctx.spec.params);
  const std::size_t n = ctx.seeds.size();

  if (ctx.spec.id == "hybrid-square") {
    const auto& p = ctx.spec.params;
    const auto transfer_id = get_or<std::string>(p, "transfer", "i-fgsm");
    json tp = json::object();
    for (const char* key : {"iterations", "step_size", "momentum"}) {
      if (p.contains(key)) tp[key] = p.at(key);
    }
    TransferConfig tc = transfer_config(transfer_id, tp, ctx.setting.goal, ctx.setting.epsilon);
    tc.seed = ctx.run_seed;
    SquareParams sp;
    sp.p_init = get_or(p, "p_init", sp.p_init);
    for (std::size_t first = 0; first < n; first += plan.batch_size) {
      const std::size_t len = std::min(plan.batch_size, n - first);
      const ImageBatch seeds = gather_seeds(ctx, first, len);
      QueryOptions options{ctx.run_seed, first, static_cast<bool>(plan.observer), {}};
      auto results = hybrid_square(oracle, surrogate_span(plan), seeds,
                                   std::span<const std::size_t>(ctx.labels.data() + first, len), ctx.setting.goal, tc,
                                   PerturbationBudget{ctx.setting.epsilon}, qbudget, options, sp);
      for (std::size_t i = 0; i < len; ++i) finish_instance(ctx, evaluation, first + i, results[i], trace);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      QueryOptions options{ctx.run_seed, i, static_cast<bool>(plan.observer), {}};
      if (needs_start_pool(ctx.spec.id)) options.start_pool = start_pool(ctx, ctx.seeds[i], ctx.labels[i]);
      const auto seed = plan.data->images.example(ctx.seeds[i]);
      QueryResult r;
      try {
        r = run_query_attack(ctx.spec.id, ctx.spec.params, oracle, seed, ctx.labels[i], ctx.setting.goal,
                             ctx.setting.epsilon, qbudget, options);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NoAdversarialStart) throw;
        r.queries_used = qbudget.max_queries;
      }
      finish_instance(ctx, evaluation, i, r, trace);
    }
  }

  // aggregate on a grid of query counts
  std::uint64_t top = 0;
  for (auto q : trace.queries_per_example) top = std::max(top, q);
  std::vector<std::uint64_t> grid;
  const std::uint64_t points = std::min<std::uint64_t>(top, kQueryGridPoints);
  for (std::uint64_t i = 1; i <= points; ++i) {
    const std::uint64_t q = (i * top + points - 1) / points;
    if (grid.empty() || grid.back() != q) grid.push_back(q);
  }
  for (auto q : grid) {
    TraceRow row;
    row.index = q;
    double elapsed = 0.0;
    double loss = 0.0;
    std::size_t finite = 0;
    std::size_t local = 0;
    std::size_t reached = 0;
    for (const auto& inst : trace.instances) {
      row.queries += std::min<std::uint64_t>(q, inst.queries_used);
      const QueryTraceRow* last = nullptr;
      for (const auto& r : inst.rows) {
        if (r.query > q) break;
        last = &r;
      }
      if (last == nullptr) continue;
      elapsed += last->elapsed_s;
      if (std::isfinite(last->best_loss)) {
        loss += last->best_loss;
        ++finite;
      }
      if (last->success) ++local;
      if (inst.success && last->success) ++reached;
    }
    const double total = static_cast<double>(std::max<std::size_t>(1, trace.instances.size()));
    row.elapsed_s = elapsed / total;
    if (finite > 0) row.local_loss = loss / static_cast<double>(finite);
    row.local_asr = static_cast<double>(local) / total;
    row.target_asr = static_cast<double>(reached) / total;
    trace.rows.push_back(row);
  }
  strictly_increasing(trace.rows);
}

std::string config_hash(const AttackSpec& spec, const Setting& setting, const Budget& budget) {
  const json j = {{"id", spec.id},
                  {"params", spec.params},
                  {"threat_model", to_json(spec.threat_model)},
                  {"setting", {setting.name, setting.goal == Goal::Targeted, setting.epsilon, setting.robust_target}},
                  {"budget", {to_string(budget.kind), budget.value}}};
  return hex64(fnv1a(j.dump()));
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string csv_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

// ---- budget, settings, plan ------------------------------------------------------

const char* to_string(BudgetKind kind) noexcept {
  switch (kind) {
    case BudgetKind::Iterations: return "iters";
    case BudgetKind::WallClock: return "seconds";
    case BudgetKind::Queries: return "queries";
  }
  return "?";
}

BudgetKind budget_kind_from_string(std::string_view s) {
  if (s == "iters") return BudgetKind::Iterations;
  if (s == "seconds") return BudgetKind::WallClock;
  if (s == "queries") return BudgetKind::Queries;
  throw Error(ErrorCode::Config, "budget mode must be iters, seconds or queries");
}

void Budget::validate() const {
  if (!(value > 0.0) || !std::isfinite(value)) throw Error(ErrorCode::InvalidArgument, "budget must be positive");
  if (kind != BudgetKind::WallClock && value != std::floor(value)) {
    throw Error(ErrorCode::InvalidArgument, "iteration and query budgets must be integers");
  }
}

std::vector<Setting> hard_setting_sweep() {
  return {{"untargeted-16", Goal::Untargeted, 16.0 / 255.0, false},
          {"untargeted-8", Goal::Untargeted, 8.0 / 255.0, false},
          {"targeted-16", Goal::Targeted, 16.0 / 255.0, false},
          {"robust-16", Goal::Untargeted, 16.0 / 255.0, true}};
}

Setting setting_by_name(std::string_view name) {
  for (auto& s : hard_setting_sweep()) {
    if (s.name == name) return s;
  }
  throw Error(ErrorCode::Config, "unknown setting '" + std::string(name) + "'");
}

void BenchmarkPlan::validate() const {
  budget.validate();
  if (!data || !target) throw Error(ErrorCode::Config, "plan needs a dataset and a target model");
  data->validate();
  if (data->images.shape() != target->input_shape()) {
    throw Error(ErrorCode::ShapeMismatch, "dataset images do not match the target input");
  }
  if (attacks.empty() || settings.empty()) throw Error(ErrorCode::Config, "plan needs attacks and settings");
  if (seeds_per_run == 0 || batch_size == 0 || threads == 0) {
    throw Error(ErrorCode::Config, "seeds, batch size and threads must be positive");
  }
  std::set<std::string> names;
  for (const auto& a : attacks) {
    builtin_profile(a.id);
    a.threat_model.validate();
    if (!names.insert(a.name()).second) throw Error(ErrorCode::Config, "duplicate attack label '" + a.name() + "'");
    const auto profile = builtin_profile(a.id);
    if (profile.needs_surrogates && (!surrogates || surrogates->empty())) {
      throw Error(ErrorCode::Config, a.name() + " needs surrogate models");
    }
  }
  std::set<std::string> setting_names;
  for (const auto& s : settings) {
    if (!setting_names.insert(s.name).second) throw Error(ErrorCode::Config, "duplicate setting '" + s.name + "'");
    PerturbationBudget{s.epsilon}.validate();
    if (s.robust_target && !robust_target) throw Error(ErrorCode::Config, s.name + " needs a robust target model");
  }
}

AttackKind attack_kind(std::string_view id) {
  return builtin_profile(id).needs_interaction ? AttackKind::Query : AttackKind::Transfer;
}

FeedbackMode attack_feedback(std::string_view id, const ThreatModel& tm) {
  const auto profile = builtin_profile(id);
  if (!profile.min_feedback) return FeedbackMode::hard_label();
  FeedbackMode mode = *profile.min_feedback;
  if (mode.kind == FeedbackKind::TopK && tm.feedback && tm.feedback->kind == FeedbackKind::TopK) {
    mode.k = std::max(mode.k, tm.feedback->k);
  }
  return mode;
}

// ---- attack construction -----------------------------------------------------------

TransferConfig transfer_config(std::string_view id, const json& params, Goal goal, double epsilon) {
  const auto variant = transfer_variant_from_id(id);
  if (!variant) throw Error(ErrorCode::Config, "unknown transfer attack '" + std::string(id) + "'");
  if (*variant == TransferVariant::OdsAug) {
    throw Error(ErrorCode::Config, "ods-aug only warm-starts query attacks");
  }
  check_params(params, {BBOX_TRANSFER_KEYS}, id);
  TransferConfig c = TransferConfig::defaults(goal, *variant);
  c.budget.epsilon = epsilon;
  apply_transfer_params(c, params);
  c.validate();
  return c;
}

QueryResult run_query_attack(std::string_view id, const json& p, Oracle& oracle, std::span<const double> seed,
                             std::size_t label, Goal goal, double epsilon, const QueryBudget& qbudget,
                             const QueryOptions& options) {
  const PerturbationBudget budget{epsilon};
  if (id == "square") {
    check_params(p, {"max_queries", "p_init"}, id);
    SquareParams sp;
    sp.p_init = get_or(p, "p_init", sp.p_init);
    return square_attack(oracle, seed, label, goal, budget, qbudget, options, sp);
  }
  if (id == "square-topk") {
    check_params(p, {"max_queries", "p_init", "shrink", "patience", "threshold", "factor"}, id);
    if (goal != Goal::Targeted) throw Error(ErrorCode::InvalidArgument, "square-topk is a targeted attack");
    SquareTopKParams sp;
    sp.square.p_init = get_or(p, "p_init", sp.square.p_init);
    sp.shrink = get_or(p, "shrink", sp.shrink);
    ThresholdScheduler sched;
    sched.patience = get_or(p, "patience", sched.patience);
    sched.threshold = get_or(p, "threshold", sched.threshold);
    sched.factor = get_or(p, "factor", sched.factor);
    return square_topk(oracle, seed, label, budget, qbudget, sched, options, sp);
  }
  if (id == "nes" || id == "nes-topk") {
    check_params(p, {"max_queries", "sigma", "samples", "step_size", "shrink", "trigger"}, id);
    NesParams np;
    np.sigma = get_or(p, "sigma", np.sigma);
    np.samples = get_or(p, "samples", np.samples);
    np.step_size = get_opt<double>(p, "step_size");
    np.shrink = get_or(p, "shrink", np.shrink);
    np.trigger = get_or(p, "trigger", np.trigger);
    return nes_attack(oracle, seed, label, goal, id == "nes" ? NesVariant::Full : NesVariant::TopK, budget, qbudget,
                      options, np);
  }
  if (id == "rays") {
    check_params(p, {"max_queries", "tolerance"}, id);
    RaysParams rp;
    rp.tolerance = get_or(p, "tolerance", rp.tolerance);
    return rays_attack(oracle, seed, label, goal, budget, qbudget, options, rp);
  }
  if (id == "signflip") {
    check_params(p, {"max_queries", "shrink", "flip_probability"}, id);
    SignFlipParams sp;
    sp.shrink = get_or(p, "shrink", sp.shrink);
    sp.flip_probability = get_or(p, "flip_probability", sp.flip_probability);
    return signflip_attack(oracle, seed, label, goal, budget, qbudget, options, sp);
  }
  if (id == "random-noise") {
    check_params(p, {"max_queries"}, id);
    return random_noise_attack(oracle, seed, label, goal, budget, qbudget, options);
  }
  throw Error(ErrorCode::Config, "'" + std::string(id) + "' is not a per-seed query attack");
}

// ---- evaluation ----------------------------------------------------------------------

double eval_asr(const ImageBatch& candidates, Oracle& evaluation, std::span<const std::size_t> labels, Goal goal) {
  if (evaluation.role() != OracleRole::Evaluation) {
    throw Error(ErrorCode::InvalidArgument, "ASR must be measured through an evaluation oracle");
  }
  if (candidates.count() != labels.size()) throw Error(ErrorCode::ShapeMismatch, "candidates and labels differ");
  if (labels.empty()) return 0.0;
  const auto predicted = evaluate_labels(evaluation, candidates);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += goal_satisfied(predicted[i], labels[i], goal) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

BenchmarkResult run_benchmark(const BenchmarkPlan& plan) {
  plan.validate();
  std::vector<std::string> log;
  std::vector<std::string> warnings;

  struct Prepared {
    Setting setting;
    std::shared_ptr<const DifferentiableNet> target;
    std::vector<std::size_t> seeds;
    std::vector<std::size_t> labels;
  };
  std::vector<Prepared> prepared;
  for (const auto& setting : plan.settings) {
    Prepared p{setting, setting.robust_target ? plan.robust_target : plan.target, {}, {}};
    Oracle evaluation(p.target, FeedbackMode::hard_label(), OracleRole::Evaluation);
    std::vector<std::size_t> order(plan.data->size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = make_rng(plan.master_seed, 0, "seed-order");
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    std::size_t filtered = 0;
    for (std::size_t idx : order) {
      if (p.seeds.size() >= plan.seeds_per_run) break;
      if (evaluation.query(plan.data->images.example(idx)).label == plan.data->labels[idx]) {
        p.seeds.push_back(idx);
      } else {
        ++filtered;
      }
    }
    log.push_back(setting.name + ": " + std::to_string(p.seeds.size()) + " seeds, " + std::to_string(filtered) +
                  " misclassified candidates filtered");
    if (p.seeds.size() < plan.seeds_per_run) {
      warnings.push_back(setting.name + ": only " + std::to_string(p.seeds.size()) + " correctly classified seeds");
    }
    if (p.seeds.empty()) throw Error(ErrorCode::Config, setting.name + ": no correctly classified seeds");
    const std::size_t classes = p.target->classes();
    for (std::size_t idx : p.seeds) {
      const std::size_t y = plan.data->labels[idx];
      if (setting.goal == Goal::Targeted) {
        auto trng = make_rng(plan.master_seed, idx, "target-class");
        p.labels.push_back((y + 1 + trng.index(classes - 1)) % classes);
      } else {
        p.labels.push_back(y);
      }
    }
    prepared.push_back(std::move(p));
  }

  struct Job {
    const AttackSpec* spec;
    const Prepared* prep;
  };
  std::vector<Job> jobs;
  std::vector<AttackTrace> traces;
  for (const auto& spec : plan.attacks) {
    const auto result = validate(builtin_profile(spec.id), spec.threat_model);
    std::vector<std::string> violations;
    for (const auto& v : result.violations) violations.push_back(std::string(to_string(v.axis)) + ": " + v.reason);
    if (!result.ok()) {
      std::string msg = spec.name() + " violates its threat model";
      for (const auto& v : violations) msg += "; " + v;
      if (!spec.override_threat_model) throw Error(ErrorCode::ThreatModelViolation, msg);
      log.push_back("override: " + msg);
    }
    for (const auto& p : prepared) {
      AttackTrace t;
      t.attack_id = spec.name() + "@" + p.setting.name;
      t.attack = spec.id;
      t.setting = p.setting.name;
      t.cell = classify_cell(spec.threat_model);
      t.kind = attack_kind(spec.id);
      t.config_hash = config_hash(spec, p.setting, plan.budget);
      t.master_seed = plan.master_seed;
      t.run_seed = mix64(plan.master_seed ^ fnv1a(t.attack_id));
      t.seeds = p.seeds;
      t.override_used = !result.ok();
      t.violations = violations;
      traces.push_back(std::move(t));
      jobs.push_back({&spec, &p});
    }
  }

  auto execute = [&](std::size_t j) {
    AttackTrace& trace = traces[j];
    const Context ctx{plan, *jobs[j].spec, jobs[j].prep->setting, jobs[j].prep->target, jobs[j].prep->seeds,
                      jobs[j].prep->labels, trace.run_seed, trace.attack_id};
    if (trace.kind == AttackKind::Transfer) {
      run_transfer(ctx, trace);
    } else {
      run_query(ctx, trace);
    }
  };
  std::string concurrency = "sequential";
  if (plan.threads <= 1 || jobs.size() <= 1) {
    for (std::size_t j = 0; j < jobs.size(); ++j) execute(j);
  } else {
    const std::size_t workers = std::min(plan.threads, jobs.size());
    concurrency = "concurrent-" + std::to_string(workers);
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t j = next++; j < jobs.size(); j = next++) execute(j);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  BenchmarkResult out;
  out.report = summarize(traces);
  out.report.plan_id = plan.id;
  out.report.master_seed = plan.master_seed;
  out.report.concurrency = concurrency;
  log.insert(log.end(), out.report.log.begin(), out.report.log.end());
  out.report.log = std::move(log);
  warnings.insert(warnings.end(), out.report.warnings.begin(), out.report.warnings.end());
  out.report.warnings = std::move(warnings);
  out.traces = std::move(traces);
  return out;
}

// ---- summaries -----------------------------------------------------------------------

Report summarize(std::span<const AttackTrace> traces) {
  if (traces.empty()) throw Error(ErrorCode::InvalidArgument, "summarize needs at least one trace");
  Report report;
  report.master_seed = traces.front().master_seed;
  for (const auto& t : traces) {
    AttackSummary s;
    s.attack_id = t.attack_id;
    s.attack = t.attack;
    s.setting = t.setting;
    s.cell = t.cell;
    s.kind = t.kind;
    s.config_hash = t.config_hash;
    s.run_seed = t.run_seed;
    s.seeds = t.seeds.size();
    s.override_used = t.override_used;
    s.violations = t.violations;
    double best = 0.0;
    double previous = 0.0;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      const auto& r = t.rows[i];
      if (!std::isfinite(r.target_asr) || !std::isfinite(r.elapsed_s) ||
          (r.local_loss && !std::isfinite(*r.local_loss))) {
        throw Error(ErrorCode::NonFinite, t.attack_id + ": non-finite trace row");
      }
      if (i > 0 && r.elapsed_s <= previous) {
        throw Error(ErrorCode::InvalidArgument, t.attack_id + ": elapsed times must strictly increase");
      }
      best = i == 0 ? r.target_asr : std::max(best, r.target_asr);
      s.index.push_back(r.index);
      s.elapsed.push_back(r.elapsed_s);
      s.asr.push_back(r.target_asr);
      s.asr_best.push_back(best);
      s.local_loss.push_back(r.local_loss);
      s.local_asr.push_back(r.local_asr);
      const double step = r.elapsed_s - previous;
      if (i == 0) {
        s.runtime.warmup_s = step;
      } else {
        s.runtime.max_step_s = std::max(s.runtime.max_step_s, step);
      }
      previous = r.elapsed_s;
    }
    if (!t.rows.empty()) {
      s.final_asr = s.asr.back();
      s.runtime.total_s = s.elapsed.back();
      if (t.rows.size() > 1) {
        s.runtime.mean_step_s = (s.elapsed.back() - s.elapsed.front()) / static_cast<double>(t.rows.size() - 1);
      }
    }
    if (t.representative) {
      const auto it = std::find(s.index.begin(), s.index.end(), *t.representative);
      if (it != s.index.end()) {
        s.representative = *t.representative;
        s.representative_asr = s.asr[static_cast<std::size_t>(it - s.index.begin())];
      } else {
        report.warnings.push_back(t.attack_id + ": representative iteration " + std::to_string(*t.representative) +
                                  " not reached; marker omitted");
      }
    }
    if (t.kind == AttackKind::Query && !t.queries_per_example.empty()) {
      std::vector<double> q(t.queries_per_example.begin(), t.queries_per_example.end());
      s.mean_queries = std::accumulate(q.begin(), q.end(), 0.0) / static_cast<double>(q.size());
      s.median_queries = median(q);
    }
    report.attacks.push_back(std::move(s));
  }

  std::vector<std::string> settings;
  for (const auto& s : report.attacks) {
    if (std::find(settings.begin(), settings.end(), s.setting) == settings.end()) settings.push_back(s.setting);
  }
  for (const auto& setting : settings) {
    std::vector<const AttackSummary*> group;
    for (const auto& s : report.attacks) {
      if (s.setting == setting) group.push_back(&s);
    }
    auto rank = [&](std::string indexing, double at, const std::vector<double>& values) {
      Ranking r{setting, std::move(indexing), at, {}};
      std::vector<std::size_t> order(group.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
      for (auto i : order) r.entries.push_back({group[i]->attack_id, values[i]});
      return r;
    };
    std::vector<double> by_iteration;
    std::optional<std::size_t> common_rep = group.front()->representative;
    for (const auto* s : group) {
      by_iteration.push_back(s->representative_asr.value_or(s->asr.empty() ? 0.0 : s->asr.back()));
      if (s->representative != common_rep) common_rep.reset();
    }
    report.iteration_rankings.push_back(
        rank("iteration", common_rep ? static_cast<double>(*common_rep) : -1.0, by_iteration));

    // time axis measured after the warm-up row
    double horizon = std::numeric_limits<double>::infinity();
    for (const auto* s : group) {
      if (s->elapsed.size() > 1) horizon = std::min(horizon, s->elapsed.back() - s->elapsed.front());
    }
    if (!std::isfinite(horizon)) horizon = 0.0;
    std::vector<double> by_time;
    for (const auto* s : group) {
      double v = 0.0;
      for (std::size_t i = 0; i < s->elapsed.size(); ++i) {
        if (s->elapsed[i] - s->elapsed.front() <= horizon) v = s->asr[i];
      }
      by_time.push_back(v);
    }
    report.time_rankings.push_back(rank("time", horizon, by_time));
  }
  return report;
}

// ---- serialization -------------------------------------------------------------------

json to_json(const TraceRow& r) {
  return {{"index", r.index},         {"elapsed_s", r.elapsed_s},   {"local_loss", opt_json(r.local_loss)},
          {"local_asr", opt_json(r.local_asr)}, {"target_asr", r.target_asr}, {"queries", r.queries}};
}

json to_json(const QueryTraceRow& r) {
  json j = {{"index", r.query},
            {"elapsed_s", r.elapsed_s},
            {"best_loss", std::isfinite(r.best_loss) ? json(r.best_loss) : json(nullptr)},
            {"linf_dist", r.linf_dist},
            {"success", r.success}};
  if (r.threshold) j["threshold"] = *r.threshold;
  if (r.failures) j["failures"] = *r.failures;
  return j;
}

namespace {

json ranking_json(const Ranking& r) {
  json entries = json::array();
  for (const auto& e : r.entries) entries.push_back({{"attack_id", e.attack_id}, {"asr", e.asr}});
  return {{"setting", r.setting}, {"indexing", r.indexing}, {"at", r.at}, {"entries", entries}};
}

}  // namespace

json report_json(const Report& report) {
  json attacks = json::array();
  for (const auto& s : report.attacks) {
    json loss = json::array();
    json local = json::array();
    for (const auto& v : s.local_loss) loss.push_back(opt_json(v));
    for (const auto& v : s.local_asr) local.push_back(opt_json(v));
    json a = {{"attack_id", s.attack_id},
              {"attack", s.attack},
              {"setting", s.setting},
              {"cell", s.cell},
              {"kind", s.kind == AttackKind::Transfer ? "transfer" : "query"},
              {"config_hash", s.config_hash},
              {"run_seed", s.run_seed},
              {"seeds", s.seeds},
              {"index", s.index},
              {"asr", s.asr},
              {"asr_best", s.asr_best},
              {"local_loss", loss},
              {"local_asr", local},
              {"final_asr", s.final_asr},
              {"mean_queries", opt_json(s.mean_queries)},
              {"median_queries", opt_json(s.median_queries)},
              {"override", {{"used", s.override_used}, {"violations", s.violations}}}};
    a["representative"] = s.representative
                              ? json{{"index", *s.representative}, {"asr", *s.representative_asr}, {"marker", "*"}}
                              : json(nullptr);
    attacks.push_back(std::move(a));
  }
  json rankings = json::array();
  for (const auto& r : report.iteration_rankings) rankings.push_back(ranking_json(r));
  return {{"plan_id", report.plan_id},   {"master_seed", report.master_seed}, {"attacks", attacks},
          {"iteration_rankings", rankings}, {"warnings", report.warnings},      {"log", report.log}};
}

json timing_json(const Report& report) {
  json attacks = json::array();
  for (const auto& s : report.attacks) {
    attacks.push_back({{"attack_id", s.attack_id},
                       {"elapsed_s", s.elapsed},
                       {"runtime",
                        {{"total_s", s.runtime.total_s},
                         {"warmup_s", s.runtime.warmup_s},
                         {"mean_step_s", s.runtime.mean_step_s},
                         {"max_step_s", s.runtime.max_step_s}}}});
  }
  json rankings = json::array();
  for (const auto& r : report.time_rankings) rankings.push_back(ranking_json(r));
  return {{"plan_id", report.plan_id},
          {"concurrency", report.concurrency},
          {"clock", "steady"},
          {"attacks", attacks},
          {"time_rankings", rankings}};
}

std::string summary_csv(const Report& report) {
  std::ostringstream out;
  out << "attack_id,attack,setting,cell,seeds,final_asr,representative,representative_asr,mean_queries,"
         "median_queries\n";
  for (const auto& s : report.attacks) {
    out << s.attack_id << ',' << s.attack << ',' << s.setting << ',' << s.cell << ',' << s.seeds << ','
        << csv_number(s.final_asr) << ',' << (s.representative ? std::to_string(*s.representative) : "") << ','
        << (s.representative_asr ? csv_number(*s.representative_asr) : "") << ','
        << (s.mean_queries ? csv_number(*s.mean_queries) : "") << ','
        << (s.median_queries ? csv_number(*s.median_queries) : "") << '\n';
  }
  return out.str();
}

std::vector<std::filesystem::path> emit_plot_data(const Report& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
  struct Panel {
    const char* file;
    const char* x;
    std::function<std::vector<std::pair<double, double>>(const AttackSummary&)> points;
  };
  auto series = [](const AttackSummary& s, auto&& x, auto&& y) {
    std::vector<std::pair<double, double>> p;
    for (std::size_t i = 0; i < s.index.size(); ++i) {
      if (auto v = y(i)) p.emplace_back(x(i), *v);
    }
    return p;
  };
  const std::vector<Panel> panels = {
      {"asr_vs_index.csv", "index",
       [&](const AttackSummary& s) {
         return series(s, [&](std::size_t i) { return double(s.index[i]); },
                       [&](std::size_t i) { return std::optional<double>(s.asr[i]); });
       }},
      {"asr_best_vs_index.csv", "index",
       [&](const AttackSummary& s) {
         return series(s, [&](std::size_t i) { return double(s.index[i]); },
                       [&](std::size_t i) { return std::optional<double>(s.asr_best[i]); });
       }},
      {"loss_vs_index.csv", "index",
       [&](const AttackSummary& s) {
         return series(s, [&](std::size_t i) { return double(s.index[i]); },
                       [&](std::size_t i) { return s.local_loss[i]; });
       }},
      {"asr_vs_time.csv", "seconds",
       [&](const AttackSummary& s) {
         return series(s, [&](std::size_t i) { return s.elapsed[i]; },
                       [&](std::size_t i) { return std::optional<double>(s.asr[i]); });
       }},
  };
  std::vector<std::filesystem::path> written;
  for (const auto& panel : panels) {
    std::vector<std::map<double, double>> columns;
    std::set<double> xs;
    for (const auto& s : report.attacks) {
      std::map<double, double> col;
      for (const auto& [x, y] : panel.points(s)) {
        col[x] = y;
        xs.insert(x);
      }
      columns.push_back(std::move(col));
    }
    const auto path = dir / panel.file;
    std::ofstream out(path);
    out << panel.x;
    for (const auto& s : report.attacks) out << ',' << s.attack_id;
    out << '\n';
    for (double x : xs) {
      out << csv_number(x);
      for (const auto& col : columns) {
        out << ',';
        if (auto it = col.find(x); it != col.end()) out << csv_number(it->second);
      }
      out << '\n';
    }
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    written.push_back(path);
  }
  return written;
}

std::map<std::string, std::vector<std::pair<double, double>>> read_plot_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream s(line);
    while (std::getline(s, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
  };
  std::string line;
  std::getline(in, line);
  const auto header = split(line);
  std::map<std::string, std::vector<std::pair<double, double>>> out;
  for (std::size_t c = 1; c < header.size(); ++c) out[header[c]];
  while (std::getline(in, line)) {
    const auto cells = split(line);
    if (cells.empty()) continue;
    const double x = std::stod(cells[0]);
    for (std::size_t c = 1; c < cells.size() && c < header.size(); ++c) {
      if (!cells[c].empty()) out[header[c]].emplace_back(x, std::stod(cells[c]));
    }
  }
  return out;
}

std::vector<std::filesystem::path> persist_traces(std::span<const AttackTrace> traces, const std::string& plan_id,
                                                  const std::filesystem::path& root) {
  std::vector<std::filesystem::path> written;
  for (const auto& t : traces) {
    const auto dir = root / plan_id / t.attack_id;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
    const auto path = dir / (std::to_string(t.run_seed) + ".trace.jsonl");
    std::ofstream out(path);
    for (const auto& r : t.rows) out << to_json(r).dump() << '\n';
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    written.push_back(path);
    if (t.kind == AttackKind::Query) {
      const auto qpath = dir / (std::to_string(t.run_seed) + ".queries.jsonl");
      std::ofstream q(qpath);
      for (const auto& inst : t.instances) {
        for (const auto& r : inst.rows) {
          auto j = to_json(r);
          j["example"] = inst.example;
          q << j.dump() << '\n';
        }
      }
      if (!q) throw Error(ErrorCode::Io, "cannot write " + qpath.string());
      written.push_back(qpath);
    }
  }
  return written;
}

}  // namespace bbox
