#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "bbox/net.hpp"
#include "bbox/oracle.hpp"
#include "bbox/rng.hpp"
#include "bbox/tensor.hpp"
#include "bbox/transfer.hpp"

namespace bbox {

struct QueryBudget {
  std::uint64_t max_queries = 10000;
  std::optional<double> max_seconds;

  void validate() const;
};

struct QueryTraceRow {
  std::uint64_t query = 0;  // cumulative queries used by this attack instance
  double elapsed_s = 0.0;
  double best_loss = 0.0;   // the attack's acceptance objective (see each attack)
  double linf_dist = 0.0;   // of the current state to the seed
  bool success = false;
  std::optional<double> threshold;  // Square: top-k scheduler threshold
  std::optional<std::uint64_t> failures;
};

struct QueryResult {
  std::vector<double> image;
  bool success = false;
  std::uint64_t queries_used = 0;
  std::vector<QueryTraceRow> trace;
  /// Every accepted state, in order, when QueryOptions::record_states is set.
  std::vector<std::vector<double>> states;
  /// RayS only: final sign direction and certified radius.
  std::vector<double> direction;
  double radius = 0.0;
};

struct QueryOptions {
  std::uint64_t seed = 0;
  std::uint64_t example = 0;  // keys the random stream
  bool record_states = false;
  /// Auxiliary images the attacker may start from (targeted top-k / hard-label).
  std::vector<std::vector<double>> start_pool;
};

/// Score-space margin to be minimized: untargeted p_y - max_{j!=y} p_j,
/// targeted max_{j!=t} p_j - p_t.
double margin_from_scores(std::span<const double> scores, std::size_t label, Goal goal);

// ---- Square attack -------------------------------------------------------------

struct SquareParams {
  double p_init = 0.1;
  /// Budget fractions at which the window fraction halves.
  std::vector<double> halving_points = {0.02, 0.10, 0.25, 0.50, 0.80};
};

/// Window fraction after `used` of `max_queries` queries.
double square_fraction(const SquareParams& params, std::uint64_t used, std::uint64_t max_queries);
/// Window side for an h x w image: max(1, round(sqrt(p h w))), capped at min(h, w).
std::size_t square_side(double fraction, std::size_t h, std::size_t w);

struct WarmStart {
  std::vector<double> image;
  /// Known margin of image; when absent the first query evaluates it.
  std::optional<double> loss;
};

/// Random-search Square attack on a full-score oracle. The best_loss column is
/// the margin; a proposal is accepted iff it strictly lowers it.
QueryResult square_attack(Oracle& oracle, std::span<const double> seed, std::size_t label, Goal goal,
                          const PerturbationBudget& budget, const QueryBudget& qbudget, const QueryOptions& options,
                          const SquareParams& params = {}, const std::optional<WarmStart>& warm = std::nullopt);

// ---- Square: top-k -------------------------------------------------------------

/// Halves the threshold after every `patience` consecutive failures.
struct ThresholdScheduler {
  double threshold = 1.0;
  std::uint64_t consecutive_failures = 0;
  std::uint64_t patience = 10;
  double factor = 0.5;
  std::uint64_t halvings = 0;

  void record(bool accepted);
};

struct SquareTopKParams {
  SquareParams square{};
  double shrink = 0.05;  // convex step toward the seed for distance proposals
};

/// Targeted attack under top-k feedback. Starts from an image that shows the
/// target in the top-k and alternates a score proposal (random square refill
/// at the current radius) with a distance proposal (radius shrunk by
/// `shrink`). The distance proposal is only made while the deficit
/// 1 - p_target is under the scheduler threshold (otherwise the turn goes to
/// another score proposal), and it is accepted iff the target stays in the
/// top-k with its deficit still under the threshold. The best_loss column
/// holds the current radius.
QueryResult square_topk(Oracle& oracle, std::span<const double> seed, std::size_t target,
                        const PerturbationBudget& budget, const QueryBudget& qbudget, ThresholdScheduler scheduler,
                        const QueryOptions& options, const SquareTopKParams& params = {});

// ---- NES -----------------------------------------------------------------------

using ScalarLoss = std::function<double(std::span<const double>)>;
using FeedbackLoss = std::function<double(const Feedback&)>;

/// Antithetic Gaussian estimate (1/(sigma n)) sum_pairs [L(x+sigma u) - L(x-sigma u)] u
/// over n/2 pairs. n must be even and positive.
std::vector<double> nes_gradient(const ScalarLoss& loss, std::span<const double> x, double sigma, std::size_t n,
                                 RngStream& sampler);
/// Same estimate through an oracle; consumes exactly n queries.
std::vector<double> nes_gradient(Oracle& oracle, std::span<const double> x, double sigma, std::size_t n,
                                 const FeedbackLoss& loss, RngStream& sampler);

enum class NesVariant { Full, TopK };

struct NesParams {
  double sigma = 0.01;
  std::size_t samples = 50;
  std::optional<double> step_size;  // defaults to epsilon / 10
  double shrink = 0.005;            // top-k: relative radius shrink per triggered step
  double trigger = 1.0;             // top-k: fixed deficit threshold that triggers a shrink
};

/// Full: sign-PGD on the estimated margin gradient inside the epsilon ball
/// (best_loss = best margin). TopK: targeted, starts from a target-class image
/// and shrinks the radius whenever the deficit is under the fixed trigger
/// (best_loss = current radius).
QueryResult nes_attack(Oracle& oracle, std::span<const double> seed, std::size_t label, Goal goal, NesVariant variant,
                       const PerturbationBudget& budget, const QueryBudget& qbudget, const QueryOptions& options,
                       const NesParams& params = {});

// ---- hard-label ----------------------------------------------------------------

struct RaysParams {
  double tolerance = 1e-3;
};

/// Untargeted L-inf RayS. best_loss is the certified radius (infinite until
/// the first adversarial direction is found).
QueryResult rays_attack(Oracle& oracle, std::span<const double> seed, std::size_t label, Goal goal,
                        const PerturbationBudget& budget, const QueryBudget& qbudget, const QueryOptions& options,
                        const RaysParams& params = {});

/// Smallest r in [0, hi] (to tolerance) with clamp(seed + r s) adversarial,
/// by binary search; hi must be adversarial. Shared by RayS and its tests.
double rays_binary_search(const std::function<bool(double)>& adversarial, double hi, double tolerance);
/// Number of blocks and their size at hierarchy level `level` for d coordinates.
std::pair<std::size_t, std::size_t> rays_blocks(std::size_t d, std::size_t level);

struct SignFlipParams {
  double shrink = 0.05;          // initial relative radius shrink
  double flip_probability = 0.05;
};

/// Hard-label sign-flip attack: keeps an adversarial iterate and alternates
/// radius shrinking with random sign flips of the perturbation. best_loss is
/// the current radius.
QueryResult signflip_attack(Oracle& oracle, std::span<const double> seed, std::size_t label, Goal goal,
                            const PerturbationBudget& budget, const QueryBudget& qbudget,
                            const QueryOptions& options, const SignFlipParams& params = {});

// ---- baselines -----------------------------------------------------------------

/// One fresh random +-epsilon sign pattern per query until success.
QueryResult random_noise_attack(Oracle& oracle, std::span<const double> seed, std::size_t label, Goal goal,
                                const PerturbationBudget& budget, const QueryBudget& qbudget,
                                const QueryOptions& options);

/// Transfer candidates from the surrogates; one query checks each candidate
/// and examples that fail to transfer continue with a warm-started Square
/// attack. queries_used is 1 for direct transfers, 1 + Square's otherwise.
std::vector<QueryResult> hybrid_square(Oracle& oracle, std::span<const DifferentiableNet> surrogates,
                                       const ImageBatch& seeds, std::span<const std::size_t> labels, Goal goal,
                                       const TransferConfig& transfer, const PerturbationBudget& budget,
                                       const QueryBudget& qbudget, const QueryOptions& options,
                                       const SquareParams& params = {});

}  // namespace bbox
