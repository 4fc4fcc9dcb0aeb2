#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "bbox/tensor.hpp"

namespace bbox {

/// Fully connected layer; weight is row-major out x in.
struct Affine {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;
  std::vector<double> bias;
};

/// Square-kernel 2-D convolution; weight is out x in x k x k.
struct Conv2d {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::vector<double> weight;
  std::vector<double> bias;
};

struct ReLU {};
struct MaxPool2 {};
struct Flatten {};

using Layer = std::variant<Affine, Conv2d, ReLU, MaxPool2, Flatten>;

const char* layer_name(const Layer& layer) noexcept;

/// Activations recorded by a forward pass; consumed by the matching backward.
struct ForwardCache {
  // activations[0] is the input, activations[i + 1] the output of layer i.
  std::vector<std::vector<double>> activations;
  // Winning input offset per pooled output, for MaxPool2 layers only.
  std::vector<std::vector<std::uint32_t>> pool_argmax;

  std::span<const double> logits() const { return activations.back(); }
};

/// Small classifier with an analytic backward pass.
class DifferentiableNet {
 public:
  DifferentiableNet() = default;
  DifferentiableNet(std::string label, Shape input, std::vector<Layer> layers);

  const std::string& label() const noexcept { return label_; }
  const Shape& input_shape() const noexcept { return input_; }
  std::size_t classes() const noexcept { return classes_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<Layer>& mutable_layers() noexcept { return layers_; }

  ForwardCache forward(std::span<const double> x) const;
  std::vector<double> logits(std::span<const double> x) const;
  /// Row-major n x classes().
  std::vector<std::vector<double>> logits(const ImageBatch& x) const;

  /// Gradient of a scalar loss w.r.t. the input, given its gradient w.r.t. the logits.
  std::vector<double> backward_input(const ForwardCache& cache, std::span<const double> dlogits) const;

  /// Parameter views in a fixed order (per layer: weight, then bias).
  std::vector<std::span<double>> parameters();
  std::vector<std::span<const double>> parameters() const;
  std::size_t parameter_count() const;

  /// Accumulates d(loss)/d(parameters) into grads (same layout as parameters()).
  void accumulate_parameter_gradients(const ForwardCache& cache, std::span<const double> dlogits,
                                      std::vector<std::vector<double>>& grads) const;
  std::vector<std::vector<double>> zero_gradients() const;

  friend bool operator==(const DifferentiableNet& a, const DifferentiableNet& b);

 private:
  void check_input(std::span<const double> x) const;
  std::vector<double> backward_impl(const ForwardCache& cache, std::span<const double> dlogits,
                                    std::vector<std::vector<double>>* grads) const;

  std::string label_;
  Shape input_{};
  std::size_t classes_ = 0;
  std::vector<Layer> layers_;
  std::vector<Shape> shapes_;  // shapes_[i] is the input shape of layer i; back() is the output
};

// ---- losses -----------------------------------------------------------------

enum class Goal { Untargeted, Targeted };
enum class LossKind { CrossEntropy, Margin };

/// Numerically stable softmax (max logit subtracted).
std::vector<double> softmax(std::span<const double> logits);
/// Index of the largest value; ties go to the lower index.
std::size_t argmax(std::span<const double> values);

struct LossValue {
  double value = 0.0;
  std::vector<double> dlogits;
};

/// Cross-entropy -log softmax(logits)[label] and its logit gradient.
LossValue cross_entropy(std::span<const double> logits, std::size_t label);
/// Logit-space margin to be minimized: untargeted z_y - max_{j!=y} z_j,
/// targeted max_{j!=t} z_j - z_t.
LossValue margin_loss(std::span<const double> logits, std::size_t label, Goal goal);
LossValue evaluate_loss(LossKind kind, std::span<const double> logits, std::size_t label, Goal goal);

/// True when the prediction satisfies the goal for this label
/// (untargeted: prediction != label, targeted: prediction == label).
bool goal_satisfied(std::size_t predicted, std::size_t label, Goal goal) noexcept;

struct InputGradient {
  double loss = 0.0;
  std::vector<double> gradient;
  std::size_t predicted = 0;
};

/// Analytic d(loss)/d(x) for one example. Cross-entropy is taken w.r.t. the
/// given label for both goals; the goal decides only the direction callers move in.
InputGradient grad_input(const DifferentiableNet& net, std::span<const double> x, LossKind loss,
                         std::size_t label, Goal goal);
ImageBatch grad_input(const DifferentiableNet& net, const ImageBatch& x, LossKind loss,
                      std::span<const std::size_t> labels, Goal goal);

}  // namespace bbox
