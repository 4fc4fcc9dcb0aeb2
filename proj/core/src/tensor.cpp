#include "bbox/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bbox/error.hpp"

namespace bbox {

namespace {

void require_same(const ImageBatch& a, const ImageBatch& b, const char* what) {
  if (a.count() != b.count() || !(a.shape() == b.shape())) {
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + ": batch shapes differ");
  }
}

}  // namespace

ImageBatch::ImageBatch(std::size_t n, Shape shape, double fill)
    : n_(n), shape_(shape), data_(n * shape.size(), fill) {}

ImageBatch::ImageBatch(std::size_t n, Shape shape, std::vector<double> data)
    : n_(n), shape_(shape), data_(std::move(data)) {
  if (data_.size() != n_ * shape_.size()) {
    throw Error(ErrorCode::ShapeMismatch, "ImageBatch: data length " + std::to_string(data_.size()) +
                                              " != n*c*h*w = " + std::to_string(n_ * shape_.size()));
  }
}

std::span<double> ImageBatch::example(std::size_t i) {
  return {data_.data() + i * shape_.size(), shape_.size()};
}

std::span<const double> ImageBatch::example(std::size_t i) const {
  return {data_.data() + i * shape_.size(), shape_.size()};
}

ImageBatch ImageBatch::slice(std::size_t first, std::size_t len) const {
  if (first + len > n_) throw Error(ErrorCode::InvalidArgument, "ImageBatch::slice out of range");
  const auto d = shape_.size();
  std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(first * d),
                          data_.begin() + static_cast<std::ptrdiff_t>((first + len) * d));
  return ImageBatch(len, shape_, std::move(out));
}

ImageBatch ImageBatch::gather(std::span<const std::size_t> indices) const {
  ImageBatch out(indices.size(), shape_);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= n_) throw Error(ErrorCode::InvalidArgument, "ImageBatch::gather out of range");
    out.set_example(i, example(indices[i]));
  }
  return out;
}

void ImageBatch::set_example(std::size_t i, std::span<const double> values) {
  if (values.size() != shape_.size()) {
    throw Error(ErrorCode::ShapeMismatch, "ImageBatch::set_example: wrong example size");
  }
  std::copy(values.begin(), values.end(), example(i).begin());
}

void PerturbationBudget::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "epsilon must lie in [0, 1], got " + std::to_string(epsilon));
  }
}

void project_linf_inplace(std::span<double> candidate, std::span<const double> origin, double epsilon) {
  if (candidate.size() != origin.size()) {
    throw Error(ErrorCode::ShapeMismatch, "project_linf: sizes differ");
  }
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    const double lo = std::max(0.0, origin[i] - epsilon);
    const double hi = std::min(1.0, origin[i] + epsilon);
    candidate[i] = std::clamp(candidate[i], lo, std::max(lo, hi));
  }
}

ImageBatch project_linf(const ImageBatch& candidate, const ImageBatch& origin,
                        const PerturbationBudget& budget) {
  require_same(candidate, origin, "project_linf");
  budget.validate();
  ImageBatch out = candidate;
  project_linf_inplace(out.data(), origin.data(), budget.epsilon);
  return out;
}

std::vector<double> sign(std::span<const double> v) {
  std::vector<double> out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), [](double x) { return sign(x); });
  return out;
}

std::vector<double> l1_normalize(std::span<const double> v) {
  double norm = 0.0;
  for (double x : v) norm += std::abs(x);
  std::vector<double> out(v.size(), 0.0);
  if (norm > 0.0) {
    std::transform(v.begin(), v.end(), out.begin(), [norm](double x) { return x / norm; });
  }
  return out;
}

double linf_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::ShapeMismatch, "linf_distance: sizes differ");
  double best = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) best = std::max(best, std::abs(a[i] - b[i]));
  return best;
}

std::vector<double> linf_distance(const ImageBatch& a, const ImageBatch& b) {
  require_same(a, b, "linf_distance");
  std::vector<double> out(a.count());
  for (std::size_t i = 0; i < a.count(); ++i) out[i] = linf_distance(a.example(i), b.example(i));
  return out;
}

}  // namespace bbox
