#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "bbox/net.hpp"
#include "bbox/tensor.hpp"

namespace bbox {

struct Dataset {
  ImageBatch images;
  std::vector<std::size_t> labels;
  std::size_t classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  /// Throws unless images and labels align and every label < classes.
  void validate() const;
  Dataset subset(std::span<const std::size_t> indices) const;
};

enum class Optimizer { Sgd, SgdMomentum };

struct AdversarialTraining {
  std::size_t pgd_steps = 7;
  double pgd_epsilon = 8.0 / 255.0;
  /// Defaults to pgd_epsilon / 4 when unset.
  std::optional<double> pgd_step_size;

  double step_size() const { return pgd_step_size.value_or(pgd_epsilon / 4.0); }
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  Optimizer optimizer = Optimizer::SgdMomentum;
  double momentum = 0.9;
  std::optional<AdversarialTraining> adversarial;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Mini-batch SGD on softmax cross-entropy starting from `initial`. With the
/// adversarial option every mini-batch is replaced by its PGD counterpart.
DifferentiableNet train(DifferentiableNet initial, const Dataset& data, const TrainConfig& config);

std::vector<std::size_t> predict(const DifferentiableNet& net, const ImageBatch& x);
double accuracy(const DifferentiableNet& net, const ImageBatch& x, std::span<const std::size_t> labels);

/// White-box untargeted L-inf PGD on cross-entropy, used by adversarial
/// training and for measuring robust accuracy.
ImageBatch pgd_attack(const DifferentiableNet& net, const ImageBatch& x, std::span<const std::size_t> labels,
                      double epsilon, std::size_t steps, double step_size, std::uint64_t seed,
                      bool random_start = true);

}  // namespace bbox
