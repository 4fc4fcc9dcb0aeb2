#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bbox/net.hpp"
#include "bbox/rng.hpp"
#include "bbox/tensor.hpp"

namespace bbox {

enum class TransferVariant { I, MI, NI, VMI, VNI, EMI, SMI, SMIMI, MIDI, Admix, OdsAug };

const char* attack_id(TransferVariant v) noexcept;
/// Accepts ids such as "mi-fgsm"; returns nullopt for anything else.
std::optional<TransferVariant> transfer_variant_from_id(std::string_view id) noexcept;

/// Knobs of the gradient-stabilization and input-augmentation variants.
struct TransferParams {
  double momentum = 1.0;              // decay of the momentum accumulator
  std::size_t variance_samples = 20;  // neighbours per variance-tuning step
  double variance_beta = 1.5;         // neighbourhood half-width in units of epsilon
  std::size_t emi_samples = 11;
  double emi_radius = 7.0;            // sampling half-width in units of the step size
  std::size_t smi_copies = 8;         // shifted copies besides the identity
  double smi_shift_fraction = 0.1;    // max shift = ceil(fraction * height)
  double di_probability = 0.5;
  double di_scale = 1.1;              // resize upper bound relative to the input side
  std::size_t admix_scales = 5;
  std::size_t admix_count = 3;
  double admix_eta = 0.2;

  friend bool operator==(const TransferParams&, const TransferParams&) = default;
};

struct TransferConfig {
  PerturbationBudget budget{};
  std::size_t iterations = 10;
  /// Defaults to epsilon / iterations.
  std::optional<double> step_size;
  Goal goal = Goal::Untargeted;
  TransferVariant variant = TransferVariant::I;
  TransferParams params{};
  std::uint64_t seed = 0;

  /// Protocol defaults: epsilon 16/255, 40 iterations targeted, 10 untargeted.
  static TransferConfig defaults(Goal goal, TransferVariant variant = TransferVariant::I);

  double alpha() const;
  /// +1 when ascending the loss (untargeted), -1 when descending (targeted).
  double direction_sign() const noexcept { return goal == Goal::Untargeted ? 1.0 : -1.0; }
  void validate() const;
};

/// Per-example accumulators carried across iterations.
struct TransferState {
  std::vector<double> momentum;           // g
  std::vector<double> variance;           // v
  std::vector<double> previous_gradient;  // averaged gradient of the last iteration (EMI)
  std::size_t iteration = 0;

  explicit TransferState(std::size_t size = 0)
      : momentum(size, 0.0), variance(size, 0.0), previous_gradient(size, 0.0) {}
};

// ---- ensemble gradient --------------------------------------------------------

struct EnsembleGradient {
  std::vector<double> gradient;     // d(mean per-model CE)/dx
  std::vector<double> losses;       // per model
  std::vector<bool> success;        // per model, goal predicate on that model
  double mean_loss = 0.0;
};

EnsembleGradient ensemble_gradient(std::span<const DifferentiableNet> surrogates, std::span<const double> x,
                                   std::size_t label, Goal goal);

struct BatchEnsembleGradient {
  ImageBatch gradient;
  std::vector<std::vector<double>> losses;  // [example][model]
  std::vector<std::vector<bool>> success;   // [example][model]
};

BatchEnsembleGradient ensemble_gradient(std::span<const DifferentiableNet> surrogates, const ImageBatch& x,
                                        std::span<const std::size_t> labels, Goal goal);

// ---- input augmentation -------------------------------------------------------

/// Pixel gather map on an h x w grid, applied identically to every channel:
/// out[p] = in[source[p]], or 0 when source[p] < 0. Empty means identity.
struct SpatialMap {
  std::vector<std::int32_t> source;

  bool identity() const noexcept { return source.empty(); }
  std::vector<double> apply(std::span<const double> x, const Shape& shape) const;
  /// Adjoint of apply: scatters an output gradient back onto the input grid.
  std::vector<double> adjoint(std::span<const double> grad, const Shape& shape) const;

  static SpatialMap shift(const Shape& shape, int dy, int dx);
  /// Resize to a random side in [h, floor(scale h)], zero-pad at a random
  /// offset to floor(scale h), then resize back to h (nearest neighbour).
  static SpatialMap diverse_input(const Shape& shape, double scale, RngStream& rng);
};

/// One transformed copy of x. Its gradient contribution to x is
/// weight * chain * adjoint(map, grad at image).
struct AugmentedInput {
  std::vector<double> image;
  SpatialMap map;
  double chain = 1.0;
  double weight = 1.0;
};

/// Copies on which the variant evaluates surrogate gradients. Variants without
/// augmentation return the identity copy alone. Admix draws from `mix_pool`.
std::vector<AugmentedInput> augment(const TransferConfig& config, std::span<const double> x, const Shape& shape,
                                    std::span<const std::span<const double>> mix_pool, RngStream& sampler);

/// Applies the diverse-input transform alone; with probability 1 - p the input is returned unchanged.
std::vector<double> diverse_input_transform(std::span<const double> x, const Shape& shape, double probability,
                                            double scale, RngStream& rng);

// ---- stabilization ------------------------------------------------------------

using GradientFn = std::function<std::vector<double>(std::span<const double>)>;

/// Raw gradient for this iteration: evaluated at the Nesterov look-ahead for
/// NI/VNI, averaged along the previous gradient's sign for EMI, else at x.
std::vector<double> raw_gradient(const TransferConfig& config, TransferState& state, std::span<const double> x,
                                 const GradientFn& gradient);

/// Folds the raw gradient into the variant's accumulators and returns the
/// direction whose sign the step follows. Advances state by one iteration.
std::vector<double> stabilize(const TransferConfig& config, std::span<const double> raw, TransferState& state,
                              std::span<const double> x, const GradientFn& gradient, RngStream& sampler);

/// x + s * alpha * sign(direction), projected back onto the epsilon ball around origin.
std::vector<double> step(std::span<const double> x, std::span<const double> direction,
                         std::span<const double> origin, const TransferConfig& config);

// ---- output-diversified sampling ----------------------------------------------

/// Sign of d(w . softmax(f(x)))/dx for random w in [-1, 1]^N on a randomly
/// picked surrogate. Used to warm-start query attacks.
std::vector<double> ods_direction(std::span<const DifferentiableNet> surrogates, std::span<const double> x,
                                  RngStream& sampler);

// ---- full attack ----------------------------------------------------------------

struct TransferTraceRow {
  std::size_t iteration = 0;  // 1-based
  double elapsed_s = 0.0;
  double local_loss = 0.0;    // mean CE over examples and surrogates
  double local_asr = 0.0;     // mean goal-success over examples and surrogates
};

struct TransferRun {
  std::vector<ImageBatch> candidates;  // one batch per completed iteration
  std::vector<TransferTraceRow> trace;
};

struct TransferOptions {
  /// Global index of the first example; keys the per-example random streams.
  std::uint64_t example_offset = 0;
  /// Checked before every iteration; returning false stops the run.
  std::function<bool(std::size_t next_iteration, double elapsed_s)> keep_going;
  /// Iteration cap used when keep_going decides; defaults to config.iterations.
  std::optional<std::size_t> max_iterations;
};

/// Runs the configured variant against the surrogate ensemble. labels are
/// true classes (untargeted) or target classes (targeted).
TransferRun run_transfer_attack(const TransferConfig& config, std::span<const DifferentiableNet> surrogates,
                                const ImageBatch& seeds, std::span<const std::size_t> labels,
                                const TransferOptions& options = {});

/// Mean CE and goal-success of a batch on the surrogates (the trace's local metrics).
std::pair<double, double> local_metrics(std::span<const DifferentiableNet> surrogates, const ImageBatch& x,
                                        std::span<const std::size_t> labels, Goal goal);

}  // namespace bbox
