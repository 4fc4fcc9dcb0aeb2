// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bbox/dataset.hpp"
#include "bbox/error.hpp"
#include "bbox/harness.hpp"
#include "bbox/oracle.hpp"
#include "bbox/query.hpp"
#include "bbox/transfer.hpp"
#include "bbox/zoo.hpp"
#include "commands.hpp"
#include "support.hpp"

using namespace bbox;
namespace fs = std::filesystem;

namespace {

// ---- pinned tolerances and sizes ----------------------------------------------

constexpr double kFeasibilitySlack = 1e-6;
constexpr std::size_t kMinIterates = 10000;
constexpr double kFeasibilitySeconds = 120.0;

constexpr double kGradRelError = 1e-4;
constexpr std::size_t kGradCoords = 100;
constexpr double kGradSeconds = 60.0;

constexpr std::size_t kIdentitySeeds = 10;
constexpr std::size_t kIdentityIterations = 10;
constexpr double kIdentitySeconds = 60.0;

constexpr std::size_t kOracleTrials = 1000;

constexpr std::size_t kTopKRuns = 50;
constexpr std::uint64_t kTopKQueries = 10000;
constexpr double kTopKSeconds = 15 * 60.0;

constexpr std::size_t kHybridSeeds = 100;
constexpr std::uint64_t kHybridQueries = 2000;
constexpr double kHybridSeconds = 10 * 60.0;

constexpr double kNesLinearTolerance = 1e-12;
constexpr double kNesMinCosine = 0.5;
constexpr std::size_t kNesSamples = 100;
constexpr double kNesSigma = 0.01;
constexpr std::size_t kNesSeeds = 20;

constexpr double kRaysTolerance = 1e-3;
constexpr std::size_t kRaysLinearOracles = 50;

constexpr double kWhiteBoxMinAsr = 0.95;
constexpr double kSanitySeconds = 5 * 60.0;

constexpr double kEps16 = 16.0 / 255.0;

// ---- desk-scale world -----------------------------------------------------------

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct World {
  LoadedDataset loaded;
  Dataset train;
  Dataset pool;
  std::shared_ptr<const DifferentiableNet> target;         // conv
  std::shared_ptr<const DifferentiableNet> robust_target;  // conv, PGD-trained
  std::shared_ptr<const std::vector<DifferentiableNet>> surrogates;  // conv (other seed) + mlp
  std::shared_ptr<const DifferentiableNet> mlp;
  std::shared_ptr<const Dataset> pool_ptr;
};

DifferentiableNet fit(DifferentiableNet net, const Dataset& data, std::uint64_t seed, std::size_t epochs,
                      double lr = 0.05, std::optional<AdversarialTraining> adv = std::nullopt) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.learning_rate = lr;
  cfg.seed = seed;
  cfg.adversarial = adv;
  return train(std::move(net), data, cfg);
}

World build_world() {
  World w;
  w.loaded = synth_dataset("shapes", {{"count", 1500}}, 1);
  const std::size_t n_train = 1050;
  std::vector<std::size_t> a(n_train);
  std::vector<std::size_t> b(w.loaded.data.size() - n_train);
  std::iota(a.begin(), a.end(), std::size_t{0});
  std::iota(b.begin(), b.end(), n_train);
  w.train = w.loaded.data.subset(a);
  w.pool = w.loaded.data.subset(b);
  const Shape s = w.train.images.shape();
  const std::size_t k = w.train.classes;
  w.target = std::make_shared<const DifferentiableNet>(fit(make_convnet(s, k, 11), w.train, 1, 20));
  auto surrogate_conv = fit(make_convnet(s, k, 21), w.train, 3, 20);
  auto surrogate_mlp = fit(make_mlp(s, k, 23), w.train, 5, 20);
  w.mlp = std::make_shared<const DifferentiableNet>(surrogate_mlp);
  w.surrogates = std::make_shared<const std::vector<DifferentiableNet>>(
      std::vector<DifferentiableNet>{std::move(surrogate_conv), std::move(surrogate_mlp)});
  w.robust_target = std::make_shared<const DifferentiableNet>(
      fit(make_convnet(s, k, 12), w.train, 2, 15, 0.01, AdversarialTraining{5, 8.0 / 255.0, std::nullopt}));
  w.pool_ptr = std::make_shared<const Dataset>(w.pool);
  return w;
}

/// Pool indices the net classifies correctly, in pool order.
std::vector<std::size_t> correct_seeds(const World& w, const DifferentiableNet& net, std::size_t n) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < w.pool.size() && out.size() < n; ++i) {
    if (argmax(net.logits(w.pool.images.example(i))) == w.pool.labels[i]) out.push_back(i);
  }
  return out;
}

std::size_t target_class(std::size_t truth, std::size_t classes, std::uint64_t key) {
  auto rng = make_rng(99, key, "acceptance/target-class");
  return (truth + 1 + rng.index(classes - 1)) % classes;
}

std::vector<std::vector<double>> class_pool(const World& w, std::size_t cls, std::size_t skip) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < w.pool.size() && out.size() < 32; ++i) {
    if (i != skip && w.pool.labels[i] == cls) out.emplace_back(w.pool.images.example(i).begin(), w.pool.images.example(i).end());
  }
  return out;
}

ThreatModel open_threat_model() {
  ThreatModel tm;
  tm.access = Access::WithInteractiveAccess;
  tm.feedback = FeedbackMode::full_scores();
  tm.quality = DataQuality::CompleteOverlap;
  tm.quantity = DataQuantity::Sufficient;
  return tm;
}

bool non_increasing(const std::vector<QueryTraceRow>& rows) {
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].best_loss > rows[i - 1].best_loss) return false;
  }
  return true;
}

bool strictly_decreasing_accepted(const std::vector<QueryTraceRow>& rows) {
  double last = std::numeric_limits<double>::infinity();
  for (const auto& r : rows) {
    if (r.best_loss > last) return false;
    last = r.best_loss;
  }
  return true;
}

// ---- reporting ------------------------------------------------------------------

int failures = 0;

void report(int id, const char* name, bool pass, const std::string& detail) {
  std::printf("criterion %2d: %s  %s  (%s)\n", id, pass ? "PASS" : "FAIL", name, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

template <class... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

template <class Fn>
void guarded(int id, const char* name, Fn&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    report(id, name, false, std::string("exception: ") + e.what());
  }
}

// ---- criteria -------------------------------------------------------------------

void feasibility(const World& w) {
  const auto start = Clock::now();
  std::size_t iterates = 0;
  std::size_t constrained = 0;
  std::size_t violations = 0;
  std::size_t pairs = 0;
  std::size_t skipped = 0;
  IterateObserver observe = [&](const IterateEvent& e) {
    ++iterates;
    bool bad = std::any_of(e.iterate.begin(), e.iterate.end(), [](double v) { return !(v >= 0.0 && v <= 1.0); });
    if (e.epsilon_constrained || (e.final && e.success)) {
      ++constrained;
      bad = bad || linf_distance(e.iterate, e.seed) > e.epsilon + kFeasibilitySlack;
    }
    if (bad) ++violations;
  };
  for (const auto& setting : hard_setting_sweep()) {
    BenchmarkPlan plan;
    plan.id = "feasibility";
    plan.data = w.pool_ptr;
    plan.target = w.target;
    plan.robust_target = w.robust_target;
    plan.surrogates = w.surrogates;
    plan.settings = {setting};
    plan.seeds_per_run = 25;
    plan.batch_size = 5;
    plan.budget = Budget::iterations(10);
    plan.master_seed = 17;
    plan.observer = observe;
    for (const auto& id : builtin_attack_ids()) {
      const bool targeted_only = id == "square-topk" || id == "nes-topk";
      const bool untargeted_only = id == "rays";
      if ((targeted_only && setting.goal != Goal::Targeted) || (untargeted_only && setting.goal != Goal::Untargeted)) {
        ++skipped;
        continue;
      }
      AttackSpec spec{id, "", nlohmann::json::object(), open_threat_model(), false};
      if (attack_kind(id) == AttackKind::Query) spec.params = {{"max_queries", 300}};
      plan.attacks.push_back(spec);
      ++pairs;
    }
    run_benchmark(plan);
  }
  const double elapsed = seconds_since(start);
  const bool pass = violations == 0 && iterates >= kMinIterates && elapsed < kFeasibilitySeconds;
  report(1, "feasibility", pass,
         fmt("%zu attack x setting pairs (%zu goal-incompatible skipped), %zu iterates, %zu ball-checked, "
             "%zu violations, %.1fs",
             pairs, skipped, iterates, constrained, violations, elapsed));
}

void gradients(const World& w) {
  const auto start = Clock::now();
  const Shape s = w.train.images.shape();
  const std::size_t k = w.train.classes;
  std::vector<std::pair<std::string, DifferentiableNet>> nets = {
      {"linear", make_linear(s, k, 1)},      {"mlp", make_mlp(s, k, 2)},          {"conv", make_convnet(s, k, 3)},
      {"trained-conv", *w.target},           {"trained-mlp", *w.mlp},             {"robust-conv", *w.robust_target},
      {"conv-3x8x8", make_convnet(Shape{3, 8, 8}, 4, 4)}};
  double worst = 0.0;
  std::string worst_name;
  std::size_t checked = 0;
  for (std::size_t i = 0; i < nets.size(); ++i) {
    const auto in = support::check_input_gradient(nets[i].second, 100 + i, kGradCoords);
    const auto par = support::check_parameter_gradient(nets[i].second, 200 + i, kGradCoords);
    checked += in.checked + par.checked;
    for (double e : {in.max_rel_error, par.max_rel_error}) {
      if (e > worst) {
        worst = e;
        worst_name = nets[i].first;
      }
    }
  }
  const double elapsed = seconds_since(start);
  report(2, "gradient correctness", worst < kGradRelError && elapsed < kGradSeconds,
         fmt("%zu nets, %zu coordinates, max relative error %.2e (%s), %.1fs", nets.size(), checked, worst,
             worst_name.c_str(), elapsed));
}

void identities(const World& w) {
  const auto start = Clock::now();
  const auto seeds_idx = correct_seeds(w, *w.target, kIdentitySeeds);
  const auto seeds = w.pool.subset(seeds_idx);
  std::span<const DifferentiableNet> nets(w.surrogates->data(), w.surrogates->size());
  auto run = [&](TransferVariant v, Goal goal, std::uint64_t seed, auto&& tweak) {
    auto cfg = TransferConfig::defaults(goal, v);
    cfg.iterations = kIdentityIterations;
    cfg.seed = seed;
    tweak(cfg.params);
    std::vector<std::size_t> labels = seeds.labels;
    if (goal == Goal::Targeted) {
      for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = target_class(labels[i], seeds.classes, i);
    }
    return run_transfer_attack(cfg, nets, seeds.images, labels).candidates;
  };
  auto none = [](TransferParams&) {};
  struct Case {
    const char* name;
    TransferVariant reduced;
    TransferVariant base;
    void (*tweak)(TransferParams&);
  };
  const std::vector<Case> cases = {
      {"MI(mu=0)=I", TransferVariant::MI, TransferVariant::I, [](TransferParams& p) { p.momentum = 0.0; }},
      {"VMI(N=0)=MI", TransferVariant::VMI, TransferVariant::MI, [](TransferParams& p) { p.variance_samples = 0; }},
      {"VNI(N=0)=NI", TransferVariant::VNI, TransferVariant::NI, [](TransferParams& p) { p.variance_samples = 0; }},
      {"SMIMI(mu=0)=SMI", TransferVariant::SMIMI, TransferVariant::SMI, [](TransferParams& p) { p.momentum = 0.0; }},
      {"MIDI(p=0)=MI", TransferVariant::MIDI, TransferVariant::MI, [](TransferParams& p) { p.di_probability = 0.0; }},
  };
  std::size_t compared = 0;
  std::vector<std::string> broken;
  for (const auto& c : cases) {
    bool same = true;
    for (std::uint64_t seed = 0; seed < kIdentitySeeds; ++seed) {
      const Goal goal = seed % 2 == 0 ? Goal::Untargeted : Goal::Targeted;
      const auto a = run(c.reduced, goal, seed, c.tweak);
      const auto b = run(c.base, goal, seed, none);
      same = same && a.size() == kIdentityIterations && a == b;
      compared += a.size() * seeds.size();
    }
    if (!same) broken.push_back(c.name);
  }
  const double elapsed = seconds_since(start);
  std::string detail = fmt("5 identities, %zu seeds x %zu iterations on %zu images, %zu iterates compared bit-for-bit, %.1fs",
                           kIdentitySeeds, kIdentityIterations, seeds.size(), compared, elapsed);
  for (const auto& b : broken) detail += "; broken: " + b;
  report(3, "reduction identities", broken.empty() && elapsed < kIdentitySeconds, detail);
}

void oracle_contract(const World& w) {
  std::size_t bad = 0;
  for (std::uint64_t t = 0; t < kOracleTrials; ++t) {
    auto rng = make_rng(t, 0, "acceptance/logits");
    const std::size_t n = 2 + rng.index(15);
    std::vector<double> z(n);
    for (double& v : z) v = 4.0 * rng.normal();
    if (t % 7 == 0) z[rng.index(n)] = *std::max_element(z.begin(), z.end());
    const auto p = softmax(z);
    const auto full = make_feedback(z, FeedbackMode::full_scores());
    const auto hard = make_feedback(z, FeedbackMode::hard_label());
    const std::size_t k = 1 + rng.index(n);
    const auto top = make_feedback(z, FeedbackMode::top_k(k));
    bool ok = hard.label == argmax(full.scores) && full.scores == p && top.top.size() == k;
    auto sorted = p;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    for (std::size_t i = 0; ok && i < k; ++i) {
      ok = top.top[i].probability == sorted[i] && p[top.top[i].label] == sorted[i];
      if (i > 0) ok = ok && top.top[i - 1].probability >= top.top[i].probability;
    }
    if (!ok) ++bad;
  }
  Oracle attack(w.target, FeedbackMode::top_k(2));
  Oracle eval(w.target, FeedbackMode::full_scores(), OracleRole::Evaluation);
  for (std::size_t i = 0; i < 200; ++i) {
    eval.query(w.pool.images.example(i));
    attack.query(w.pool.images.example(i));
  }
  evaluate_labels(eval, w.pool.images);
  eval_asr(w.pool.images, eval, w.pool.labels, Goal::Untargeted);
  const bool counters = eval.query_count() == 0 && attack.query_count() == 200;
  report(4, "oracle contract", bad == 0 && counters,
         fmt("%zu random logit vectors, %zu mismatches; evaluation counter %llu, attack counter %llu", kOracleTrials,
             bad, static_cast<unsigned long long>(eval.query_count()),
             static_cast<unsigned long long>(attack.query_count())));
}

struct TopKRuns {
  std::vector<QueryResult> square;
  std::vector<QueryResult> nes;
  std::vector<std::size_t> seeds;
  std::vector<std::size_t> targets;
  std::vector<bool> square_confirmed;
  std::vector<bool> nes_confirmed;
  double seconds = 0.0;
};

TopKRuns run_topk(const World& w) {
  TopKRuns out;
  const auto start = Clock::now();
  out.seeds = correct_seeds(w, *w.target, kTopKRuns);
  Oracle eval(w.target, FeedbackMode::hard_label(), OracleRole::Evaluation);
  for (std::size_t i = 0; i < out.seeds.size(); ++i) {
    const std::size_t idx = out.seeds[i];
    const auto seed = w.pool.images.example(idx);
    const std::size_t t = target_class(w.pool.labels[idx], w.pool.classes, idx);
    out.targets.push_back(t);
    QueryOptions o;
    o.seed = 5;
    o.example = idx;
    o.record_states = true;
    o.start_pool = class_pool(w, t, idx);
    auto confirm = [&](const QueryResult& r) {
      return r.success && linf_distance(r.image, seed) <= kEps16 + 1e-9 && evaluate_labels(eval, ImageBatch(1, w.pool.images.shape(), r.image))[0] == t;
    };
    {
      Oracle oracle(w.target, FeedbackMode::top_k(1));
      QueryResult r;
      try {
        r = square_topk(oracle, seed, t, PerturbationBudget{kEps16}, QueryBudget{kTopKQueries}, ThresholdScheduler{}, o);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NoAdversarialStart) throw;
      }
      out.square_confirmed.push_back(confirm(r));
      out.square.push_back(std::move(r));
    }
    {
      Oracle oracle(w.target, FeedbackMode::top_k(1));
      QueryResult r;
      try {
        r = nes_attack(oracle, seed, t, Goal::Targeted, NesVariant::TopK, PerturbationBudget{kEps16},
                       QueryBudget{kTopKQueries}, o);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NoAdversarialStart) throw;
      }
      out.nes_confirmed.push_back(confirm(r));
      out.nes.push_back(std::move(r));
    }
  }
  out.seconds = seconds_since(start);
  return out;
}

void square_family(const World& w, const TopKRuns& topk) {
  std::size_t traces = 0;
  std::size_t monotone_breaks = 0;
  std::size_t threshold_breaks = 0;
  std::size_t topk_breaks = 0;
  std::size_t states = 0;
  // plain Square on the same targeted seeds
  for (std::size_t i = 0; i < topk.seeds.size(); ++i) {
    Oracle oracle(w.target, FeedbackMode::full_scores());
    QueryOptions o;
    o.seed = 6;
    o.example = topk.seeds[i];
    const auto r = square_attack(oracle, w.pool.images.example(topk.seeds[i]), topk.targets[i], Goal::Targeted,
                                 PerturbationBudget{kEps16}, QueryBudget{kHybridQueries}, o);
    ++traces;
    if (!strictly_decreasing_accepted(r.trace)) ++monotone_breaks;
  }
  for (std::size_t i = 0; i < topk.square.size(); ++i) {
    const auto& r = topk.square[i];
    if (r.trace.empty()) continue;
    ++traces;
    if (!non_increasing(r.trace)) ++monotone_breaks;
    std::uint64_t halvings = 0;
    std::uint64_t previous = 0;
    for (const auto& row : r.trace) {
      if (!row.threshold || !row.failures) {
        ++threshold_breaks;
        break;
      }
      if (*row.failures == previous + 1 && *row.failures % 10 == 0) ++halvings;
      previous = *row.failures;
      if (*row.threshold != std::ldexp(1.0, -static_cast<int>(halvings))) {
        ++threshold_breaks;
        break;
      }
    }
    for (const auto& s : r.states) {
      ++states;
      if (!make_feedback(w.target->logits(s), FeedbackMode::top_k(1)).reports(topk.targets[i])) ++topk_breaks;
    }
  }
  const bool pass = monotone_breaks == 0 && threshold_breaks == 0 && topk_breaks == 0 && traces >= 2 * kTopKRuns - 5;
  report(5, "square family", pass,
         fmt("%zu traces (%zu targeted top-1 runs), monotonicity breaks %zu, threshold breaks %zu, "
             "%zu accepted states replayed, %zu outside top-k",
             traces, topk.square.size(), monotone_breaks, threshold_breaks, states, topk_breaks));
}

void hybrid_dominance(const World& w) {
  const auto start = Clock::now();
  const auto seeds_idx = correct_seeds(w, *w.target, kHybridSeeds);
  const auto seeds = w.pool.subset(seeds_idx);
  std::span<const DifferentiableNet> nets(w.surrogates->data(), w.surrogates->size());
  Oracle eval(w.target, FeedbackMode::hard_label(), OracleRole::Evaluation);
  double hybrid_queries = 0.0;
  double square_queries = 0.0;
  std::size_t hybrid_wins = 0;
  std::size_t square_wins = 0;
  Oracle hybrid_oracle(w.target, FeedbackMode::full_scores());
  for (std::size_t first = 0; first < seeds.size(); first += 5) {
    const std::size_t len = std::min<std::size_t>(5, seeds.size() - first);
    std::vector<std::size_t> idx(len);
    std::iota(idx.begin(), idx.end(), first);
    const auto batch = seeds.subset(idx);
    QueryOptions o;
    o.seed = 8;
    o.example = first;
    const auto results = hybrid_square(hybrid_oracle, nets, batch.images, batch.labels, Goal::Untargeted,
                                       TransferConfig::defaults(Goal::Untargeted), PerturbationBudget{kEps16},
                                       QueryBudget{kHybridQueries}, o);
    for (std::size_t i = 0; i < len; ++i) {
      hybrid_queries += static_cast<double>(results[i].queries_used);
      const bool ok = linf_distance(results[i].image, batch.images.example(i)) <= kEps16 + 1e-9 &&
                      eval_asr(ImageBatch(1, seeds.images.shape(), results[i].image), eval,
                               std::vector<std::size_t>{batch.labels[i]}, Goal::Untargeted) == 1.0;
      hybrid_wins += ok ? 1 : 0;
    }
  }
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    Oracle oracle(w.target, FeedbackMode::full_scores());
    QueryOptions o;
    o.seed = 8;
    o.example = i;
    const auto r = square_attack(oracle, seeds.images.example(i), seeds.labels[i], Goal::Untargeted,
                                 PerturbationBudget{kEps16}, QueryBudget{kHybridQueries}, o);
    square_queries += static_cast<double>(r.queries_used);
    const bool ok = eval_asr(ImageBatch(1, seeds.images.shape(), r.image), eval,
                             std::vector<std::size_t>{seeds.labels[i]}, Goal::Untargeted) == 1.0;
    square_wins += ok ? 1 : 0;
  }
  const double n = static_cast<double>(seeds.size());
  const double elapsed = seconds_since(start);
  const bool pass = seeds.size() == kHybridSeeds && hybrid_queries / n < square_queries / n &&
                    hybrid_wins >= square_wins && elapsed < kHybridSeconds &&
                    hybrid_oracle.query_count() == static_cast<std::uint64_t>(hybrid_queries);
  report(6, "hybrid dominance", pass,
         fmt("%zu seeds, budget %llu: mean queries hybrid %.1f vs square %.1f, ASR hybrid %.2f vs square %.2f, %.1fs",
             seeds.size(), static_cast<unsigned long long>(kHybridQueries), hybrid_queries / n, square_queries / n,
             hybrid_wins / n, square_wins / n, elapsed));
}

void topk_ordering(const TopKRuns& topk) {
  const double n = static_cast<double>(topk.seeds.size());
  const double sq = static_cast<double>(std::count(topk.square_confirmed.begin(), topk.square_confirmed.end(), true)) / n;
  const double nes = static_cast<double>(std::count(topk.nes_confirmed.begin(), topk.nes_confirmed.end(), true)) / n;
  const bool pass = topk.seeds.size() == kTopKRuns && sq >= nes && topk.seconds < kTopKSeconds;
  report(7, "top-k ordering", pass,
         fmt("%zu targeted seeds, k=1, %llu queries: ASR square-topk %.2f vs nes-topk %.2f, %.1fs", topk.seeds.size(),
             static_cast<unsigned long long>(kTopKQueries), sq, nes, topk.seconds));
}

void time_vs_iteration(const World& w) {
  // fixture: identical per-iteration ASR, the first attack costs twice as much per iteration
  constexpr std::size_t T = 20;
  std::vector<AttackTrace> traces(2);
  const char* names[] = {"costly@fixture", "cheap@fixture"};
  const double cost[] = {2.0, 1.0};
  for (std::size_t a = 0; a < 2; ++a) {
    traces[a].attack_id = names[a];
    traces[a].attack = "i-fgsm";
    traces[a].setting = "fixture";
    for (std::size_t t = 1; t <= T; ++t) {
      traces[a].rows.push_back({t, cost[a] * static_cast<double>(t), std::nullopt, std::nullopt,
                                static_cast<double>(t) / T, 0});
    }
  }
  const auto fixture = summarize(traces);
  const bool swap = fixture.iteration_rankings.size() == 1 && fixture.time_rankings.size() == 1 &&
                    fixture.iteration_rankings[0].entries[0].attack_id == names[0] &&
                    fixture.time_rankings[0].entries[0].attack_id == names[1];

  // wall-clock budget on a real plan
  BenchmarkPlan plan;
  plan.id = "wallclock";
  plan.data = w.pool_ptr;
  plan.target = w.target;
  plan.surrogates = w.surrogates;
  plan.attacks = {AttackSpec{"vmi-fgsm", "", nlohmann::json::object(), open_threat_model(), false},
                  AttackSpec{"mi-fgsm", "", nlohmann::json::object(), open_threat_model(), false}};
  plan.seeds_per_run = 5;
  plan.batch_size = 5;
  const double limit = 0.5;
  plan.budget = Budget::wall_clock(limit);
  const auto result = run_benchmark(plan);
  bool overshoot_ok = true;
  double worst_overshoot = 0.0;
  for (const auto& s : result.report.attacks) {
    const auto& e = s.elapsed;
    if (e.size() < 2) {
      overshoot_ok = false;
      continue;
    }
    const double last_step = e.back() - e[e.size() - 2];
    const double over = e.back() - limit;
    worst_overshoot = std::max(worst_overshoot, over / last_step);
    overshoot_ok = overshoot_ok && e[e.size() - 2] < limit && over <= last_step;
  }
  const auto dir = fs::temp_directory_path() / "bbox_acceptance_plots";
  fs::remove_all(dir);
  emit_plot_data(result.report, dir);
  const bool tables = !result.report.iteration_rankings.empty() && !result.report.time_rankings.empty() &&
                      fs::exists(dir / "asr_vs_index.csv") && fs::exists(dir / "asr_vs_time.csv");
  fs::remove_all(dir);
  report(8, "time vs iteration", swap && overshoot_ok && tables,
         fmt("fixture ranking swap %s; wall-clock %.1fs overshoot %.2f of the last iteration; both tables %s",
             swap ? "yes" : "no", limit, worst_overshoot, tables ? "written" : "missing"));
}

void nes_estimator() {
  // exact closed form on linear losses, for several sigma
  double worst_linear = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::size_t d = 32;
    const auto c = support::random_vector(d, seed, -1.0, 1.0);
    const auto x = support::random_vector(d, seed + 50);
    const ScalarLoss loss = [&](std::span<const double> z) { return support::dot(c, z) - 0.25; };
    std::vector<double> reference;
    for (double sigma : {1e-3, 1e-2, 0.1, 1.0}) {
      auto rng = make_rng(seed, 0, "acceptance/nes");
      const auto g = nes_gradient(loss, x, sigma, 10, rng);
      auto replay = make_rng(seed, 0, "acceptance/nes");
      std::vector<double> expected(d, 0.0);
      for (int pair = 0; pair < 5; ++pair) {
        std::vector<double> u(d);
        for (double& v : u) v = replay.normal();
        const double cu = support::dot(c, u);
        for (std::size_t i = 0; i < d; ++i) expected[i] += cu * u[i] / 5.0;
      }
      for (std::size_t i = 0; i < d; ++i) {
        worst_linear = std::max(worst_linear, std::abs(g[i] - expected[i]) / std::max(1.0, std::abs(expected[i])));
      }
      if (reference.empty()) reference = g;
      for (std::size_t i = 0; i < d; ++i) {
        worst_linear = std::max(worst_linear, std::abs(g[i] - reference[i]) / std::max(1.0, std::abs(reference[i])));
      }
    }
  }
  // cosine to the analytic gradient on a small MLP
  const Shape s{1, 8, 8};
  double cos_sum = 0.0;
  for (std::uint64_t seed = 0; seed < kNesSeeds; ++seed) {
    const auto net = make_mlp(s, 5, 40 + seed, 32);
    const auto x = support::random_vector(s.size(), 300 + seed);
    const std::size_t label = seed % 5;
    const auto analytic = grad_input(net, x, LossKind::CrossEntropy, label, Goal::Untargeted).gradient;
    auto rng = make_rng(seed, 0, "acceptance/nes-cos");
    const auto est = nes_gradient(
        [&](std::span<const double> z) { return cross_entropy(net.logits(z), label).value; }, x, kNesSigma,
        kNesSamples, rng);
    cos_sum += support::cosine(est, analytic);
  }
  const double mean_cos = cos_sum / kNesSeeds;
  report(9, "NES estimator", worst_linear < kNesLinearTolerance && mean_cos > kNesMinCosine,
         fmt("linear closed-form max error %.1e over 4 sigmas; mean cosine %.3f (n=%zu, sigma=%.2f, %zu seeds, d=64)",
             worst_linear, mean_cos, kNesSamples, kNesSigma, kNesSeeds));
}

void rays(const World& w) {
  std::size_t traces = 0;
  std::size_t breaks = 0;
  double worst_gap = 0.0;
  auto rng = make_rng(4, 0, "acceptance/rays");
  for (std::size_t trial = 0; trial < kRaysLinearOracles; ++trial) {
    const std::vector<double> wv = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const std::vector<double> x = {rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75)};
    const double b = support::dot(wv, x) + rng.uniform(0.01, 0.2) * (std::abs(wv[0]) + std::abs(wv[1]));
    const auto net = support::two_class_linear(wv, b);
    Oracle oracle(net, FeedbackMode::hard_label());
    const auto r = rays_attack(oracle, x, 0, Goal::Untargeted, PerturbationBudget{1e-9}, QueryBudget{500}, {});
    ++traces;
    if (!non_increasing(r.trace)) ++breaks;
    double exhaustive = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= 1000000; ++k) {
      const double t = k * 1e-6;
      const std::vector<double> z = {std::clamp(x[0] + t * r.direction[0], 0.0, 1.0),
                                     std::clamp(x[1] + t * r.direction[1], 0.0, 1.0)};
      if (argmax(net->logits(z)) != 0) {
        exhaustive = t;
        break;
      }
    }
    worst_gap = std::max(worst_gap, std::abs(r.radius - exhaustive));
  }
  // desk-scale traces against the target
  const auto seeds = correct_seeds(w, *w.target, 20);
  for (std::size_t idx : seeds) {
    Oracle oracle(w.target, FeedbackMode::hard_label());
    QueryOptions o;
    o.example = idx;
    const auto r = rays_attack(oracle, w.pool.images.example(idx), w.pool.labels[idx], Goal::Untargeted,
                               PerturbationBudget{8.0 / 255.0}, QueryBudget{1000}, o);
    ++traces;
    if (!non_increasing(r.trace)) ++breaks;
  }
  report(10, "RayS radius", breaks == 0 && worst_gap <= kRaysTolerance,
         fmt("%zu traces, %zu increases; 2-D linear oracles: max |radius - exhaustive| %.2e", traces, breaks,
             worst_gap));
}

void sanity(const World& w) {
  const auto start = Clock::now();
  auto transfer_asr = [&](const DifferentiableNet& surrogate, const DifferentiableNet& target) {
    const auto idx = correct_seeds(w, target, 100);
    auto seeds = w.pool.subset(idx);
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      if (argmax(surrogate.logits(seeds.images.example(i))) == seeds.labels[i]) keep.push_back(i);
    }
    seeds = seeds.subset(keep);
    const std::vector<DifferentiableNet> one = {surrogate};
    const auto run = run_transfer_attack(TransferConfig::defaults(Goal::Untargeted), one, seeds.images, seeds.labels);
    Oracle eval(std::make_shared<const DifferentiableNet>(target), FeedbackMode::hard_label(), OracleRole::Evaluation);
    return std::pair{eval_asr(run.candidates.back(), eval, seeds.labels, Goal::Untargeted), seeds.size()};
  };
  const auto [white_conv, n_conv] = transfer_asr(*w.target, *w.target);
  const auto [white_mlp, n_mlp] = transfer_asr(*w.mlp, *w.mlp);
  const auto [transfer, n_transfer] = transfer_asr(*w.mlp, *w.target);

  const auto idx = correct_seeds(w, *w.target, 100);
  Oracle oracle(w.target, FeedbackMode::hard_label());
  double noise_hits = 0.0;
  for (std::size_t i : idx) {
    QueryOptions o;
    o.example = i;
    const auto r = random_noise_attack(oracle, w.pool.images.example(i), w.pool.labels[i], Goal::Untargeted,
                                       PerturbationBudget{kEps16}, QueryBudget{1}, o);
    noise_hits += r.success ? 1.0 : 0.0;
  }
  const double noise = noise_hits / static_cast<double>(idx.size());
  const double elapsed = seconds_since(start);
  const bool pass = white_conv >= kWhiteBoxMinAsr && white_mlp >= kWhiteBoxMinAsr && transfer > noise &&
                    elapsed < kSanitySeconds;
  report(11, "white-box sanity", pass,
         fmt("white-box I-FGSM conv %.2f (%zu seeds), mlp %.2f (%zu); mlp->conv transfer %.2f (%zu) vs random "
             "noise %.2f, %.1fs",
             white_conv, n_conv, white_mlp, n_mlp, transfer, n_transfer, noise, elapsed));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void reproducibility() {
  setenv("BBOX_BENCH_THREADS", "1", 1);
  const auto dir = fs::temp_directory_path() / "bbox_acceptance_replay";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto c = cli::default_config();
  c.dataset.params = {{"count", 400}};
  c.target.train.epochs = 4;
  for (auto& s : c.surrogates) s.train.epochs = 4;
  c.seeds_per_run = 10;
  c.settings = {"untargeted-16", "targeted-16"};
  c.threat_model = open_threat_model();
  c.attacks.clear();
  for (const char* id : {"mi-fgsm", "square", "signflip", "hybrid-square"}) {
    AttackSpec a;
    a.id = id;
    a.threat_model = c.threat_model;
    if (attack_kind(id) == AttackKind::Query) a.params = {{"max_queries", 200}};
    c.attacks.push_back(a);
  }
  std::ofstream(dir / "plan.json") << cli::to_json(c).dump(2);
  auto run = [](std::vector<std::string> args) {
    args.insert(args.begin(), "bbox");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out;
    std::ostringstream err;
    return cli::parse_and_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  };
  const int first = run({"bench", "--config", (dir / "plan.json").string(), "--seed", "7", "--out", (dir / "a").string()});
  const int second = run({"bench", "--config", (dir / "a" / "manifest.json").string(), "--out", (dir / "b").string()});
  const auto a = slurp(dir / "a" / "report.json");
  const auto b = slurp(dir / "b" / "report.json");
  const bool pass = first == 0 && second == 0 && !a.empty() && a == b;
  report(12, "reproducibility", pass,
         fmt("bench exit %d, replay exit %d, report.json %zu bytes, byte-identical %s", first, second, a.size(),
             a == b ? "yes" : "no"));
  fs::remove_all(dir);
}

}  // namespace

int main() {
  const auto start = Clock::now();
  World w;
  try {
    w = build_world();
  } catch (const std::exception& e) {
    std::printf("setup failed: %s\n", e.what());
    return 1;
  }
  std::printf("setup: %zu train / %zu pool images, target pool accuracy %.3f, robust target %.3f, %.1fs\n",
              w.train.size(), w.pool.size(), accuracy(*w.target, w.pool.images, w.pool.labels),
              accuracy(*w.robust_target, w.pool.images, w.pool.labels), seconds_since(start));

  guarded(1, "feasibility", [&] { feasibility(w); });
  guarded(2, "gradient correctness", [&] { gradients(w); });
  guarded(3, "reduction identities", [&] { identities(w); });
  guarded(4, "oracle contract", [&] { oracle_contract(w); });
  std::optional<TopKRuns> topk;
  guarded(5, "square family", [&] {
    topk = run_topk(w);
    square_family(w, *topk);
  });
  guarded(6, "hybrid dominance", [&] { hybrid_dominance(w); });
  guarded(7, "top-k ordering", [&] {
    if (!topk) throw std::runtime_error("top-k runs unavailable");
    topk_ordering(*topk);
  });
  guarded(8, "time vs iteration", [&] { time_vs_iteration(w); });
  guarded(9, "NES estimator", [] { nes_estimator(); });
  guarded(10, "RayS radius", [&] { rays(w); });
  guarded(11, "white-box sanity", [&] { sanity(w); });
  guarded(12, "reproducibility", [] { reproducibility(); });

  std::printf("%d of 12 criteria failed, %.1fs total\n", failures, seconds_since(start));
  return failures == 0 ? 0 : 1;
}
