#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "bbox/net.hpp"
#include "bbox/tensor.hpp"

namespace bbox {

enum class FeedbackKind { HardLabel, TopK, FullScores };

/// How much of the prediction the black-box API reveals.
struct FeedbackMode {
  FeedbackKind kind = FeedbackKind::FullScores;
  std::size_t k = 0;  // used by TopK only

  static FeedbackMode hard_label() { return {FeedbackKind::HardLabel, 0}; }
  static FeedbackMode top_k(std::size_t k) { return {FeedbackKind::TopK, k}; }
  static FeedbackMode full_scores() { return {FeedbackKind::FullScores, 0}; }

  friend bool operator==(const FeedbackMode&, const FeedbackMode&) = default;
};

struct ClassScore {
  std::size_t label = 0;
  double probability = 0.0;
};

struct Feedback {
  FeedbackKind kind = FeedbackKind::HardLabel;
  /// Predicted class. Always the top-1 entry.
  std::size_t label = 0;
  /// TopK: exactly k entries, descending by probability.
  std::vector<ClassScore> top;
  /// FullScores: the whole probability vector.
  std::vector<double> scores;

  /// Probability of class c if the feedback reveals it.
  std::optional<double> probability_of(std::size_t c) const;
  /// Whether class c is revealed as one of the reported classes.
  bool reports(std::size_t c) const;
};

/// Builds feedback from raw logits. Ties break toward the lower class index.
Feedback make_feedback(std::span<const double> logits, const FeedbackMode& mode);

enum class OracleRole { Attack, Evaluation };

/// Black-box access to a model. Attack-role oracles count every evaluated
/// example; evaluation-role oracles never count.
class Oracle {
 public:
  Oracle(std::shared_ptr<const DifferentiableNet> model, FeedbackMode mode, OracleRole role = OracleRole::Attack);

  Oracle(const Oracle&) = delete;
  Oracle& operator=(const Oracle&) = delete;

  Feedback query(std::span<const double> x);
  std::vector<Feedback> query(const ImageBatch& x);

  std::uint64_t query_count() const noexcept { return count_.load(std::memory_order_relaxed); }

  const FeedbackMode& mode() const noexcept { return mode_; }
  OracleRole role() const noexcept { return role_; }
  std::size_t classes() const noexcept { return model_->classes(); }
  const Shape& input_shape() const noexcept { return model_->input_shape(); }

 private:
  std::shared_ptr<const DifferentiableNet> model_;
  FeedbackMode mode_;
  OracleRole role_;
  std::atomic<std::uint64_t> count_{0};
};

/// Hard predictions through an evaluation-role oracle.
std::vector<std::size_t> evaluate_labels(Oracle& evaluation, const ImageBatch& x);

}  // namespace bbox
