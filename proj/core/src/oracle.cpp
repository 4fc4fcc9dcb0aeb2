#include "bbox/oracle.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "bbox/error.hpp"

namespace bbox {

std::optional<double> Feedback::probability_of(std::size_t c) const {
  if (kind == FeedbackKind::FullScores) {
    if (c < scores.size()) return scores[c];
    return std::nullopt;
  }
  for (const auto& entry : top) {
    if (entry.label == c) return entry.probability;
  }
  return std::nullopt;
}

bool Feedback::reports(std::size_t c) const {
  if (kind == FeedbackKind::HardLabel) return label == c;
  return probability_of(c).has_value();
}

Feedback make_feedback(std::span<const double> logits, const FeedbackMode& mode) {
  Feedback fb;
  fb.kind = mode.kind;
  fb.label = argmax(logits);
  switch (mode.kind) {
    case FeedbackKind::HardLabel:
      break;
    case FeedbackKind::FullScores:
      fb.scores = softmax(logits);
      break;
    case FeedbackKind::TopK: {
      if (mode.k < 1 || mode.k > logits.size()) {
        throw Error(ErrorCode::InvalidArgument, "top-k feedback needs 1 <= k <= classes");
      }
      const auto p = softmax(logits);
      std::vector<std::size_t> order(p.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
      fb.top.reserve(mode.k);
      for (std::size_t i = 0; i < mode.k; ++i) fb.top.push_back({order[i], p[order[i]]});
      fb.label = fb.top.front().label;
      break;
    }
  }
  return fb;
}

Oracle::Oracle(std::shared_ptr<const DifferentiableNet> model, FeedbackMode mode, OracleRole role)
    : model_(std::move(model)), mode_(mode), role_(role) {
  if (!model_) throw Error(ErrorCode::InvalidArgument, "oracle needs a model");
  if (mode_.kind == FeedbackKind::TopK && (mode_.k < 1 || mode_.k > model_->classes())) {
    throw Error(ErrorCode::InvalidArgument, "top-k oracle needs 1 <= k <= classes, got k=" + std::to_string(mode_.k));
  }
}

Feedback Oracle::query(std::span<const double> x) {
  Feedback fb = make_feedback(model_->logits(x), mode_);
  if (role_ == OracleRole::Attack) count_.fetch_add(1, std::memory_order_relaxed);
  return fb;
}

std::vector<Feedback> Oracle::query(const ImageBatch& x) {
  if (!(x.shape() == model_->input_shape())) {
    throw Error(ErrorCode::ShapeMismatch, "oracle query shape does not match the model input");
  }
  std::vector<Feedback> out;
  out.reserve(x.count());
  for (std::size_t i = 0; i < x.count(); ++i) out.push_back(make_feedback(model_->logits(x.example(i)), mode_));
  if (role_ == OracleRole::Attack) count_.fetch_add(x.count(), std::memory_order_relaxed);
  return out;
}

std::vector<std::size_t> evaluate_labels(Oracle& evaluation, const ImageBatch& x) {
  std::vector<std::size_t> out;
  out.reserve(x.count());
  for (const auto& fb : evaluation.query(x)) out.push_back(fb.label);
  return out;
}

}  // namespace bbox
