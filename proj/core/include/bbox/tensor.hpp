#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace bbox {

/// Per-example tensor geometry, stored channel-major (c, then h, then w).
struct Shape {
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t size() const noexcept { return c * h * w; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

/// A batch of n images with intensities in [0, 1], laid out n x c x h x w.
class ImageBatch {
 public:
  ImageBatch() = default;
  ImageBatch(std::size_t n, Shape shape, double fill = 0.0);
  ImageBatch(std::size_t n, Shape shape, std::vector<double> data);

  std::size_t count() const noexcept { return n_; }
  const Shape& shape() const noexcept { return shape_; }
  std::size_t example_size() const noexcept { return shape_.size(); }

  std::span<double> example(std::size_t i);
  std::span<const double> example(std::size_t i) const;

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  /// Copies examples [first, first + len) into a new batch.
  ImageBatch slice(std::size_t first, std::size_t len) const;
  /// Copies the listed examples into a new batch, in order.
  ImageBatch gather(std::span<const std::size_t> indices) const;
  void set_example(std::size_t i, std::span<const double> values);

  friend bool operator==(const ImageBatch&, const ImageBatch&) = default;

 private:
  std::size_t n_ = 0;
  Shape shape_{};
  std::vector<double> data_;
};

enum class Norm { Linf };

struct PerturbationBudget {
  double epsilon = 16.0 / 255.0;
  Norm norm = Norm::Linf;

  /// Throws InvalidArgument unless 0 <= epsilon <= 1.
  void validate() const;
};

/// Coordinate-wise clamp of candidate into [origin - eps, origin + eps] and [0, 1].
ImageBatch project_linf(const ImageBatch& candidate, const ImageBatch& origin,
                        const PerturbationBudget& budget);
void project_linf_inplace(std::span<double> candidate, std::span<const double> origin,
                          double epsilon);

std::vector<double> sign(std::span<const double> v);
inline double sign(double x) noexcept { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

/// v / ||v||_1, or the zero vector when ||v||_1 == 0.
std::vector<double> l1_normalize(std::span<const double> v);

std::vector<double> linf_distance(const ImageBatch& a, const ImageBatch& b);
double linf_distance(std::span<const double> a, std::span<const double> b);

}  // namespace bbox
