#include "bbox/train.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "bbox/error.hpp"
#include "bbox/rng.hpp"

namespace bbox {

void Dataset::validate() const {
  if (images.count() != labels.size()) {
    throw Error(ErrorCode::CountMismatch, "dataset has " + std::to_string(images.count()) + " images but " +
                                              std::to_string(labels.size()) + " labels");
  }
  for (auto y : labels) {
    if (y >= classes) throw Error(ErrorCode::InvalidLabel, "label " + std::to_string(y) + " >= class count");
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out{images.gather(indices), {}, classes};
  out.labels.reserve(indices.size());
  for (auto i : indices) out.labels.push_back(labels[i]);
  return out;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw Error(ErrorCode::InvalidArgument, "batch size must be positive");
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidArgument, "learning rate must be positive");
  if (adversarial && !(adversarial->pgd_epsilon >= 0.0 && adversarial->pgd_epsilon <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "pgd epsilon must lie in [0, 1]");
  }
}

std::vector<std::size_t> predict(const DifferentiableNet& net, const ImageBatch& x) {
  std::vector<std::size_t> out(x.count());
  for (std::size_t i = 0; i < x.count(); ++i) out[i] = argmax(net.logits(x.example(i)));
  return out;
}

double accuracy(const DifferentiableNet& net, const ImageBatch& x, std::span<const std::size_t> labels) {
  if (x.count() == 0) return 0.0;
  const auto pred = predict(net, x);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

ImageBatch pgd_attack(const DifferentiableNet& net, const ImageBatch& x, std::span<const std::size_t> labels,
                      double epsilon, std::size_t steps, double step_size, std::uint64_t seed, bool random_start) {
  ImageBatch adv = x;
  for (std::size_t i = 0; i < x.count(); ++i) {
    auto cur = adv.example(i);
    const auto origin = x.example(i);
    if (random_start) {
      auto rng = make_rng(seed, i, "pgd/start");
      for (double& v : cur) v += rng.uniform(-epsilon, epsilon);
      project_linf_inplace(cur, origin, epsilon);
    }
    for (std::size_t s = 0; s < steps; ++s) {
      const auto g = grad_input(net, cur, LossKind::CrossEntropy, labels[i], Goal::Untargeted);
      for (std::size_t j = 0; j < cur.size(); ++j) cur[j] += step_size * sign(g.gradient[j]);
      project_linf_inplace(cur, origin, epsilon);
    }
  }
  return adv;
}

DifferentiableNet train(DifferentiableNet initial, const Dataset& data, const TrainConfig& config) {
  config.validate();
  data.validate();
  if (data.size() == 0) throw Error(ErrorCode::InvalidArgument, "cannot train on an empty dataset");
  if (!(data.images.shape() == initial.input_shape())) {
    throw Error(ErrorCode::ShapeMismatch, "dataset images do not match the network input shape");
  }
  if (data.classes > initial.classes()) {
    throw Error(ErrorCode::InvalidLabel, "dataset has more classes than the network outputs");
  }
  DifferentiableNet net = std::move(initial);
  auto velocity = net.zero_gradients();
  const double mu = config.optimizer == Optimizer::SgdMomentum ? config.momentum : 0.0;
  std::vector<std::size_t> order(data.size());

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = make_rng(config.seed, epoch, "train/shuffle");
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t len = std::min(config.batch_size, order.size() - start);
      std::span<const std::size_t> idx(order.data() + start, len);
      Dataset batch = data.subset(idx);
      if (config.adversarial) {
        const auto& adv = *config.adversarial;
        const std::uint64_t batch_seed = config.seed ^ (0x9e3779b97f4a7c15ULL * (epoch * 1000003 + start + 1));
        batch.images = pgd_attack(net, batch.images, batch.labels, adv.pgd_epsilon, adv.pgd_steps,
                                  adv.step_size(), batch_seed);
      }
      auto grads = net.zero_gradients();
      double loss_sum = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        const auto cache = net.forward(batch.images.example(i));
        const auto lv = cross_entropy(cache.logits(), batch.labels[i]);
        loss_sum += lv.value;
        net.accumulate_parameter_gradients(cache, lv.dlogits, grads);
      }
      if (!std::isfinite(loss_sum)) {
        throw Error(ErrorCode::NonFinite, "training loss diverged in epoch " + std::to_string(epoch));
      }
      const double scale = config.learning_rate / static_cast<double>(len);
      auto params = net.parameters();
      for (std::size_t p = 0; p < params.size(); ++p) {
        for (std::size_t j = 0; j < params[p].size(); ++j) {
          velocity[p][j] = mu * velocity[p][j] + grads[p][j];
          params[p][j] -= scale * velocity[p][j];
        }
      }
    }
  }
  return net;
}

}  // namespace bbox
