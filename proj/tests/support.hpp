#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "bbox/net.hpp"
#include "bbox/oracle.hpp"
#include "bbox/rng.hpp"
#include "bbox/tensor.hpp"

namespace bbox::support {

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  auto rng = make_rng(seed, 0, "test/vector");
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline ImageBatch random_batch(std::size_t n, Shape shape, std::uint64_t seed) {
  return ImageBatch(n, shape, random_vector(n * shape.size(), seed));
}

/// Affine classifier with explicit weights (row-major classes x d).
inline DifferentiableNet linear_net(Shape shape, std::vector<double> weight, std::vector<double> bias) {
  const std::size_t d = shape.size();
  const std::size_t k = bias.size();
  return DifferentiableNet("linear", shape, {Flatten{}, Affine{d, k, std::move(weight), std::move(bias)}});
}

/// Two-class linear model on d inputs whose decision boundary is w.x = b.
inline std::shared_ptr<DifferentiableNet> two_class_linear(std::span<const double> w, double b) {
  const std::size_t d = w.size();
  std::vector<double> weight(2 * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) weight[d + i] = w[i];
  return std::make_shared<DifferentiableNet>(linear_net(Shape{1, 1, d}, weight, std::vector<double>{0.0, -b}));
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

inline double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

/// Central differences of the scalar c.logits(x) against the analytic input gradient.
inline GradCheck check_input_gradient(const DifferentiableNet& net, std::uint64_t seed, std::size_t coords = 100,
                                      double h = 1e-5) {
  const auto x = random_vector(net.input_shape().size(), seed);
  const auto c = random_vector(net.classes(), seed + 1, -1.0, 1.0);
  const auto g = net.backward_input(net.forward(x), c);
  auto rng = make_rng(seed, 0, "test/gradcheck");
  GradCheck out;
  for (std::size_t n = 0; n < coords; ++n) {
    const auto i = rng.index(x.size());
    auto xp = x;
    auto xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double numeric = (dot(c, net.logits(xp)) - dot(c, net.logits(xm))) / (2.0 * h);
    out.max_rel_error = std::max(out.max_rel_error, rel_error(g[i], numeric));
    ++out.checked;
  }
  return out;
}

inline GradCheck check_parameter_gradient(DifferentiableNet net, std::uint64_t seed, std::size_t coords = 100,
                                          double h = 1e-5) {
  const auto x = random_vector(net.input_shape().size(), seed);
  const auto c = random_vector(net.classes(), seed + 1, -1.0, 1.0);
  auto grads = net.zero_gradients();
  net.accumulate_parameter_gradients(net.forward(x), c, grads);
  auto rng = make_rng(seed, 0, "test/gradcheck-params");
  GradCheck out;
  auto params = net.parameters();
  for (std::size_t n = 0; n < coords; ++n) {
    const auto p = rng.index(params.size());
    const auto i = rng.index(params[p].size());
    const double saved = params[p][i];
    params[p][i] = saved + h;
    const double up = dot(c, net.logits(x));
    params[p][i] = saved - h;
    const double down = dot(c, net.logits(x));
    params[p][i] = saved;
    out.max_rel_error = std::max(out.max_rel_error, rel_error(grads[p][i], (up - down) / (2.0 * h)));
    ++out.checked;
  }
  return out;
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  return dot(a, b) / std::sqrt(dot(a, a) * dot(b, b));
}

}  // namespace bbox::support
