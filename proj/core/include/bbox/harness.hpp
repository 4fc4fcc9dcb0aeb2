#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bbox/net.hpp"
#include "bbox/oracle.hpp"
#include "bbox/query.hpp"
#include "bbox/taxonomy.hpp"
#include "bbox/train.hpp"
#include "bbox/transfer.hpp"

namespace bbox {

enum class BudgetKind { Iterations, WallClock, Queries };

/// Shared budget of a plan. Iterations bounds transfer attacks, Queries bounds
/// interactive attacks, WallClock (seconds per batch of seeds) bounds both.
struct Budget {
  BudgetKind kind = BudgetKind::Iterations;
  double value = 10.0;

  static Budget iterations(std::size_t t) { return {BudgetKind::Iterations, static_cast<double>(t)}; }
  static Budget wall_clock(double seconds) { return {BudgetKind::WallClock, seconds}; }
  static Budget queries(std::uint64_t q) { return {BudgetKind::Queries, static_cast<double>(q)}; }
  void validate() const;
  friend bool operator==(const Budget&, const Budget&) = default;
};

/// "iters", "seconds" or "queries".
const char* to_string(BudgetKind kind) noexcept;
BudgetKind budget_kind_from_string(std::string_view s);

struct Setting {
  std::string name = "untargeted-16";
  Goal goal = Goal::Untargeted;
  double epsilon = 16.0 / 255.0;
  bool robust_target = false;
  friend bool operator==(const Setting&, const Setting&) = default;
};

/// untargeted eps 16/255, untargeted eps 8/255, targeted eps 16/255, and
/// untargeted eps 16/255 against the adversarially trained target.
std::vector<Setting> hard_setting_sweep();
Setting setting_by_name(std::string_view name);

struct AttackSpec {
  std::string id;
  std::string label;  // unique within a plan; defaults to id
  nlohmann::json params = nlohmann::json::object();
  ThreatModel threat_model{};
  bool override_threat_model = false;

  const std::string& name() const { return label.empty() ? id : label; }
};

/// Every iterate an attack emits, for external feasibility checks.
struct IterateEvent {
  const std::string& attack;
  const std::string& setting;
  std::size_t example;
  std::span<const double> seed;
  std::span<const double> iterate;
  double epsilon;
  /// Whether the attack keeps every iterate inside the epsilon ball; the
  /// distance-shrinking attacks only promise it for a successful final image.
  bool epsilon_constrained;
  bool final;
  bool success;
};
using IterateObserver = std::function<void(const IterateEvent&)>;

struct BenchmarkPlan {
  std::string id = "plan";
  std::vector<AttackSpec> attacks;
  std::vector<Setting> settings{Setting{}};
  /// Seed pool; also supplies target-class start images.
  std::shared_ptr<const Dataset> data;
  std::shared_ptr<const DifferentiableNet> target;
  std::shared_ptr<const DifferentiableNet> robust_target;
  std::shared_ptr<const std::vector<DifferentiableNet>> surrogates;
  std::string dataset_ref;
  std::string target_ref;
  std::string robust_target_ref;
  std::vector<std::string> surrogate_refs;
  Budget budget{};
  std::size_t seeds_per_run = 100;
  std::size_t batch_size = 5;
  /// Defaults to 40 for targeted and 10 for untargeted settings.
  std::optional<std::size_t> representative_iteration;
  std::uint64_t master_seed = 0;
  std::size_t threads = 1;
  IterateObserver observer;

  void validate() const;
};

enum class AttackKind { Transfer, Query };
AttackKind attack_kind(std::string_view attack_id);

struct TraceRow {
  std::size_t index = 0;  // iteration (transfer) or query count (interactive)
  double elapsed_s = 0.0;
  std::optional<double> local_loss;
  std::optional<double> local_asr;
  double target_asr = 0.0;
  std::uint64_t queries = 0;  // cumulative over all seeds
};

struct InstanceTrace {
  std::size_t example = 0;
  std::uint64_t queries_used = 0;
  bool success = false;
  std::vector<QueryTraceRow> rows;
};

struct AttackTrace {
  std::string attack_id;  // "<label>@<setting>"
  std::string attack;     // builtin id
  std::string setting;
  std::string cell;
  AttackKind kind = AttackKind::Transfer;
  std::string config_hash;
  std::uint64_t master_seed = 0;
  std::uint64_t run_seed = 0;
  std::vector<std::size_t> seeds;  // dataset indices
  std::vector<TraceRow> rows;
  std::optional<std::size_t> representative;
  std::vector<std::uint64_t> queries_per_example;  // interactive only
  std::vector<InstanceTrace> instances;             // interactive only
  bool override_used = false;
  std::vector<std::string> violations;
};

struct RuntimeSummary {
  double total_s = 0.0;
  double warmup_s = 0.0;
  double mean_step_s = 0.0;
  double max_step_s = 0.0;
};

struct AttackSummary {
  std::string attack_id;
  std::string attack;
  std::string setting;
  std::string cell;
  AttackKind kind = AttackKind::Transfer;
  std::string config_hash;
  std::uint64_t run_seed = 0;
  std::size_t seeds = 0;
  std::vector<std::size_t> index;
  std::vector<double> elapsed;
  std::vector<double> asr;       // raw per-row target ASR
  std::vector<double> asr_best;  // best-so-far
  std::vector<std::optional<double>> local_loss;
  std::vector<std::optional<double>> local_asr;
  std::optional<std::size_t> representative;
  std::optional<double> representative_asr;
  double final_asr = 0.0;
  std::optional<double> mean_queries;
  std::optional<double> median_queries;
  RuntimeSummary runtime;
  bool override_used = false;
  std::vector<std::string> violations;
};

struct RankingEntry {
  std::string attack_id;
  double asr = 0.0;
};

/// Attacks of one setting ordered by ASR (descending, ties in plan order).
/// Iteration rankings compare at the representative iteration (final row when
/// absent); time rankings compare at the shortest post-warm-up run time.
struct Ranking {
  std::string setting;
  std::string indexing;  // "iteration" or "time"
  double at = 0.0;
  std::vector<RankingEntry> entries;
};

struct Report {
  std::string plan_id;
  std::uint64_t master_seed = 0;
  std::string concurrency = "sequential";
  std::vector<AttackSummary> attacks;
  std::vector<Ranking> iteration_rankings;
  std::vector<Ranking> time_rankings;
  std::vector<std::string> warnings;
  std::vector<std::string> log;
};

struct BenchmarkResult {
  Report report;
  std::vector<AttackTrace> traces;
};

/// Fraction of candidates whose evaluation-oracle prediction satisfies the goal.
double eval_asr(const ImageBatch& candidates, Oracle& evaluation, std::span<const std::size_t> labels, Goal goal);

BenchmarkResult run_benchmark(const BenchmarkPlan& plan);
Report summarize(std::span<const AttackTrace> traces);

/// Transfer configuration of a builtin transfer attack from its parameters.
TransferConfig transfer_config(std::string_view attack_id, const nlohmann::json& params, Goal goal, double epsilon);
/// Runs one builtin interactive attack on one seed.
QueryResult run_query_attack(std::string_view attack_id, const nlohmann::json& params, Oracle& oracle,
                             std::span<const double> seed, std::size_t label, Goal goal, double epsilon,
                             const QueryBudget& qbudget, const QueryOptions& options);
/// Feedback the attack's oracle exposes under a threat model.
FeedbackMode attack_feedback(std::string_view attack_id, const ThreatModel& tm);

/// Deterministic report content (no wall-clock data).
nlohmann::json report_json(const Report& report);
/// Elapsed series, runtime summaries and time rankings.
nlohmann::json timing_json(const Report& report);
/// One row per attack and setting.
std::string summary_csv(const Report& report);

/// CSV panels asr_vs_index, asr_best_vs_index, loss_vs_index and asr_vs_time:
/// an x column plus one column per attack; a cell is empty where the attack
/// has no row at that x.
std::vector<std::filesystem::path> emit_plot_data(const Report& report, const std::filesystem::path& dir);
/// Parses one emitted panel back into column -> (x, y) points.
std::map<std::string, std::vector<std::pair<double, double>>> read_plot_csv(const std::filesystem::path& path);

/// Writes <root>/<plan-id>/<attack-id>/<run-seed>.trace.jsonl (and a
/// .queries.jsonl of per-query rows for interactive attacks).
std::vector<std::filesystem::path> persist_traces(std::span<const AttackTrace> traces, const std::string& plan_id,
                                                  const std::filesystem::path& root);

nlohmann::json to_json(const TraceRow& row);
nlohmann::json to_json(const QueryTraceRow& row);

}  // namespace bbox
