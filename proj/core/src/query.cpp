#include "bbox/query.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "bbox/error.hpp"

namespace bbox {

namespace {

constexpr std::size_t kPoolDraws = 10;
constexpr std::size_t kNoiseRestarts = 100;

/// Per-instance query accounting, budget checks and trace rows.
class Session {
 public:
  Session(Oracle& oracle, const QueryBudget& budget, QueryResult& result)
      : oracle_(oracle), budget_(budget), result_(result), start_(std::chrono::steady_clock::now()) {
    budget_.validate();
  }

  bool can_query(std::uint64_t needed = 1) const {
    if (result_.queries_used + needed > budget_.max_queries) return false;
    return !budget_.max_seconds || elapsed() < *budget_.max_seconds;
  }

  Feedback query(std::span<const double> x) {
    ++result_.queries_used;
    return oracle_.query(x);
  }

  Oracle& oracle() { return oracle_; }

  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

  void row(double best_loss, double dist, bool success, std::optional<double> threshold = std::nullopt,
           std::optional<std::uint64_t> failures = std::nullopt) {
    double now = elapsed();
    if (!result_.trace.empty() && now <= result_.trace.back().elapsed_s) {
      now = std::nextafter(result_.trace.back().elapsed_s, 1e300);
    }
    result_.trace.push_back({result_.queries_used, now, best_loss, dist, success, threshold, failures});
  }

 private:
  Oracle& oracle_;
  QueryBudget budget_;
  QueryResult& result_;
  std::chrono::steady_clock::time_point start_;
};

void require_seed(const Oracle& oracle, std::span<const double> seed, std::size_t label) {
  if (seed.size() != oracle.input_shape().size()) {
    throw Error(ErrorCode::ShapeMismatch, "seed size does not match the oracle input");
  }
  if (label >= oracle.classes()) throw Error(ErrorCode::InvalidLabel, "label out of range");
}

void require_feedback(const Oracle& oracle, FeedbackKind kind, const char* attack) {
  if (oracle.mode().kind != kind) {
    throw Error(ErrorCode::InvalidArgument, std::string(attack) + " needs a different oracle feedback granularity");
  }
}

void record_state(QueryResult& r, const QueryOptions& o, std::span<const double> x) {
  if (o.record_states) r.states.emplace_back(x.begin(), x.end());
}

struct Start {
  std::vector<double> image;
  Feedback feedback;
};

/// Up to kPoolDraws auxiliary images, then kNoiseRestarts uniform-noise
/// images; the first one the predicate accepts wins.
Start find_start(Session& session, const QueryOptions& options, std::size_t size,
                 const std::function<bool(const Feedback&)>& valid, RngStream& rng) {
  std::vector<std::size_t> order(options.start_pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  const std::size_t draws = std::min(kPoolDraws, order.size());
  for (std::size_t i = 0; i < draws && session.can_query(); ++i) {
    const auto& img = options.start_pool[order[i]];
    if (img.size() != size) throw Error(ErrorCode::ShapeMismatch, "start pool image has the wrong size");
    auto fb = session.query(img);
    if (valid(fb)) return {img, std::move(fb)};
  }
  for (std::size_t i = 0; i < kNoiseRestarts && session.can_query(); ++i) {
    std::vector<double> img(size);
    for (double& v : img) v = rng.uniform();
    auto fb = session.query(img);
    if (valid(fb)) return {std::move(img), std::move(fb)};
  }
  throw Error(ErrorCode::NoAdversarialStart, "no valid starting image within the restart bound");
}

double deficit(const Feedback& fb, std::size_t target) {
  const auto p = fb.probability_of(target);
  return p ? 1.0 - *p : std::numeric_limits<double>::infinity();
}

struct Window {
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t side = 1;
};

Window random_window(const Shape& s, double fraction, RngStream& rng) {
  Window w;
  w.side = square_side(fraction, s.h, s.w);
  w.top = rng.index(s.h - w.side + 1);
  w.left = rng.index(s.w - w.side + 1);
  return w;
}

/// Refills the window with seed +- radius (one sign per channel), clamped to [0, 1].
bool refill_window(std::vector<double>& x, std::span<const double> seed, const Shape& s, const Window& w,
                   double radius, RngStream& rng) {
  bool changed = false;
  for (std::size_t c = 0; c < s.c; ++c) {
    const double delta = radius * rng.random_sign();
    for (std::size_t i = w.top; i < w.top + w.side; ++i) {
      for (std::size_t j = w.left; j < w.left + w.side; ++j) {
        const std::size_t k = c * s.h * s.w + i * s.w + j;
        const double v = std::clamp(seed[k] + delta, 0.0, 1.0);
        changed = changed || v != x[k];
        x[k] = v;
      }
    }
  }
  return changed;
}

}  // namespace

void QueryBudget::validate() const {
  if (max_queries < 1) throw Error(ErrorCode::InvalidArgument, "query budget must allow at least one query");
  if (max_seconds && !(*max_seconds > 0.0)) throw Error(ErrorCode::InvalidArgument, "time budget must be positive");
}

double margin_from_scores(std::span<const double> scores, std::size_t label, Goal goal) {
  if (label >= scores.size()) throw Error(ErrorCode::InvalidLabel, "label out of range");
  double other = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (j != label) other = std::max(other, scores[j]);
  }
  return goal == Goal::Untargeted ? scores[label] - other : other - scores[label];
}

double square_fraction(const SquareParams& params, std::uint64_t used, std::uint64_t max_queries) {
  double p = params.p_init;
  const double progress = max_queries == 0 ? 1.0 : static_cast<double>(used) / static_cast<double>(max_queries);
  for (double point : params.halving_points) {
    if (progress >= point) p *= 0.5;
  }
  return p;
}

std::size_t square_side(double fraction, std::size_t h, std::size_t w) {
  const double raw = std::round(std::sqrt(fraction * static_cast<double>(h * w)));
  const auto side = static_cast<std::size_t>(std::max(1.0, raw));
  return std::min({side, h, w});
}

// ---- Square --------------------------------------------------------------------

QueryResult square_attack(Oracle& oracle, std::span<const double> seed, std::size_t label, Goal goal,
                          const PerturbationBudget& budget, const QueryBudget& qbudget, const QueryOptions& options,
                          const SquareParams& params, const std::optional<WarmStart>& warm) {
  require_feedback(oracle, FeedbackKind::FullScores, "square");
  require_seed(oracle, seed, label);
  budget.validate();
  const Shape s = oracle.input_shape();
  const double eps = budget.epsilon;
  auto rng = make_rng(options.seed, options.example, "square");
  QueryResult result;
  Session session(oracle, qbudget, result);

  std::vector<double> best;
  double best_loss = std::numeric_limits<double>::infinity();
  bool success = false;
  if (warm) {
    best = warm->image;
    project_linf_inplace(best, seed, eps);
    if (warm->loss) {
      best_loss = *warm->loss;
      success = best_loss < 0.0;
    }
  } else {
    // vertical stripes: one sign per (channel, column)
    best.assign(seed.begin(), seed.end());
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t j = 0; j < s.w; ++j) {
        const double delta = eps * rng.random_sign();
        for (std::size_t i = 0; i < s.h; ++i) {
          const std::size_t k = c * s.h * s.w + i * s.w + j;
          best[k] = std::clamp(seed[k] + delta, 0.0, 1.0);
        }
      }
    }
  }
  if (!warm || !warm->loss) {
    const auto fb = session.query(best);
    best_loss = margin_from_scores(fb.scores, label, goal);
    success = goal_satisfied(fb.label, label, goal);
    session.row(best_loss, linf_distance(best, seed), success);
  }
  record_state(result, options, best);

  std::vector<double> candidate;
  while (!success && session.can_query()) {
    const double p = square_fraction(params, result.queries_used, qbudget.max_queries);
    candidate = best;
    bool changed = false;
    for (int attempt = 0; attempt < 10 && !changed; ++attempt) {
      candidate = best;
      changed = refill_window(candidate, seed, s, random_window(s, p, rng), eps, rng);
    }
    const auto fb = session.query(candidate);
    const double loss = margin_from_scores(fb.scores, label, goal);
    if (loss < best_loss) {
      best_loss = loss;
      best.swap(candidate);
      success = goal_satisfied(fb.label, label, goal);
      record_state(result, options, best);
    }
    session.row(best_loss, linf_distance(best, seed), success);
  }
  result.image = std::move(best);
  result.success = success;
  return result;
}

// ---- Square: top-k -------------------------------------------------------------

void ThresholdScheduler::record(bool accepted) {
  if (accepted) {
    consecutive_failures = 0;
    return;
  }
  ++consecutive_failures;
  if (patience > 0 && consecutive_failures % patience == 0) {
    threshold *= factor;
    ++halvings;
  }
}

QueryResult square_topk(Oracle& oracle, std::span<const double> seed, std::size_t target,
                        const PerturbationBudget& budget, const QueryBudget& qbudget, ThresholdScheduler scheduler,
                        const QueryOptions& options, const SquareTopKParams& params) {
  require_feedback(oracle, FeedbackKind::TopK, "square-topk");
  require_seed(oracle, seed, target);
  budget.validate();
  if (!(scheduler.threshold > 0.0)) throw Error(ErrorCode::InvalidArgument, "scheduler threshold must be positive");
  const Shape s = oracle.input_shape();
  auto rng = make_rng(options.seed, options.example, "square-topk");
  QueryResult result;
  Session session(oracle, qbudget, result);

  auto start = find_start(session, options, s.size(), [&](const Feedback& fb) { return fb.reports(target); }, rng);
  std::vector<double> x = std::move(start.image);
  double radius = linf_distance(x, seed);
  double current_deficit = deficit(start.feedback, target);
  bool top1 = start.feedback.label == target;
  auto done = [&] { return top1 && radius <= budget.epsilon; };
  auto emit = [&] {
    session.row(radius, linf_distance(x, seed), done(), scheduler.threshold, scheduler.consecutive_failures);
  };
  record_state(result, options, x);
  emit();

  std::vector<double> candidate;
  bool score_turn = true;
  while (!done() && session.can_query()) {
    // distance proposals are only tried while the deficit is under the threshold
    const bool reduce = !score_turn && radius > budget.epsilon && current_deficit < scheduler.threshold;
    if (!reduce) {
      const double p = square_fraction(params.square, result.queries_used, qbudget.max_queries);
      candidate = x;
      refill_window(candidate, seed, s, random_window(s, p, rng), radius, rng);
      const auto fb = session.query(candidate);
      const double d = deficit(fb, target);
      if (fb.reports(target) && d < current_deficit) {
        x.swap(candidate);
        current_deficit = d;
        top1 = fb.label == target;
        record_state(result, options, x);
      }
    } else {
      const double shrunk = (1.0 - params.shrink) * radius;
      candidate = x;
      project_linf_inplace(candidate, seed, shrunk);
      const auto fb = session.query(candidate);
      const double d = deficit(fb, target);
      const bool accepted = fb.reports(target) && d < scheduler.threshold;
      scheduler.record(accepted);
      if (accepted) {
        x.swap(candidate);
        radius = shrunk;
        current_deficit = d;
        top1 = fb.label == target;
        record_state(result, options, x);
      }
    }
    score_turn = !score_turn;
    emit();
  }
  result.success = done();
  result.image = std::move(x);
  result.radius = radius;
  return result;
}

// ---- NES -----------------------------------------------------------------------

std::vector<double> nes_gradient(const ScalarLoss& loss, std::span<const double> x, double sigma, std::size_t n,
                                 RngStream& sampler) {
  if (n == 0 || n % 2 != 0) throw Error(ErrorCode::InvalidArgument, "nes needs a positive even sample count");
  if (!(sigma > 0.0)) throw Error(ErrorCode::InvalidArgument, "nes sigma must be positive");
  std::vector<double> grad(x.size(), 0.0);
  std::vector<double> u(x.size());
  std::vector<double> probe(x.size());
  for (std::size_t pair = 0; pair < n / 2; ++pair) {
    for (double& v : u) v = sampler.normal();
    for (std::size_t i = 0; i < x.size(); ++i) probe[i] = x[i] + sigma * u[i];
    const double plus = loss(probe);
    for (std::size_t i = 0; i < x.size(); ++i) probe[i] = x[i] - sigma * u[i];
    const double minus = loss(probe);
    const double diff = plus - minus;
    for (std::size_t i = 0; i < x.size(); ++i) grad[i] += diff * u[i];
  }
  const double scale = 1.0 / (sigma * static_cast<double>(n));
  for (double& g : grad) g *= scale;
  return grad;
}

std::vector<double> nes_gradient(Oracle& oracle, std::span<const double> x, double sigma, std::size_t n,
                                 const FeedbackLoss& loss, RngStream& sampler) {
  return nes_gradient([&](std::span<const double> z) { return loss(oracle.query(z)); }, x, sigma, n, sampler);
}

QueryResult nes_attack(Oracle& oracle, std::span<const double> seed, std::size_t label, Goal goal, NesVariant variant,
                       const PerturbationBudget& budget, const QueryBudget& qbudget, const QueryOptions& options,
                       const NesParams& params) {
  require_seed(oracle, seed, label);
  budget.validate();
  const double alpha = params.step_size.value_or(budget.epsilon / 10.0);
  auto rng = make_rng(options.seed, options.example, variant == NesVariant::Full ? "nes" : "nes-topk");
  QueryResult result;
  Session session(oracle, qbudget, result);
  const std::size_t n = params.samples;

  if (variant == NesVariant::Full) {
    require_feedback(oracle, FeedbackKind::FullScores, "nes");
    std::vector<double> x(seed.begin(), seed.end());
    auto fb = session.query(x);
    double loss = margin_from_scores(fb.scores, label, goal);
    double best_loss = loss;
    std::vector<double> best = x;
    bool success = goal_satisfied(fb.label, label, goal);
    record_state(result, options, x);
    session.row(best_loss, 0.0, success);
    const FeedbackLoss margin = [&](const Feedback& f) {
      ++result.queries_used;
      return margin_from_scores(f.scores, label, goal);
    };
    while (!success && session.can_query(n + 1)) {
      const auto g = nes_gradient(oracle, x, params.sigma, n, margin, rng);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] -= alpha * sign(g[i]);
      project_linf_inplace(x, seed, budget.epsilon);
      fb = session.query(x);
      loss = margin_from_scores(fb.scores, label, goal);
      record_state(result, options, x);
      if (loss < best_loss || goal_satisfied(fb.label, label, goal)) {
        best_loss = std::min(best_loss, loss);
        best = x;
      }
      success = goal_satisfied(fb.label, label, goal);
      session.row(best_loss, linf_distance(x, seed), success);
    }
    result.image = success ? x : best;
    result.success = success;
    return result;
  }

  require_feedback(oracle, FeedbackKind::TopK, "nes-topk");
  if (goal != Goal::Targeted) throw Error(ErrorCode::InvalidArgument, "nes-topk is a targeted attack");
  const std::size_t target = label;
  auto start = find_start(session, options, seed.size(), [&](const Feedback& f) { return f.reports(target); }, rng);
  std::vector<double> x = std::move(start.image);
  double radius = linf_distance(x, seed);
  double current_deficit = deficit(start.feedback, target);
  bool top1 = start.feedback.label == target;
  auto done = [&] { return top1 && radius <= budget.epsilon; };
  record_state(result, options, x);
  session.row(radius, linf_distance(x, seed), done());

  const FeedbackLoss target_loss = [&](const Feedback& f) {
    ++result.queries_used;
    if (const auto p = f.probability_of(target)) return -std::log(std::max(*p, 1e-300));
    double floor = 1.0;
    for (const auto& e : f.top) floor = std::min(floor, e.probability);
    return -std::log(std::max(floor, 1e-300));
  };
  std::vector<double> candidate;
  while (!done() && session.can_query(n + 1)) {
    const auto g = nes_gradient(oracle, x, params.sigma, n, target_loss, rng);
    candidate = x;
    for (std::size_t i = 0; i < x.size(); ++i) candidate[i] -= alpha * sign(g[i]);
    project_linf_inplace(candidate, seed, radius);
    auto fb = session.query(candidate);
    if (fb.reports(target)) {
      x.swap(candidate);
      current_deficit = deficit(fb, target);
      top1 = fb.label == target;
      record_state(result, options, x);
    }
    session.row(radius, linf_distance(x, seed), done());
    if (current_deficit < params.trigger && radius > budget.epsilon && session.can_query()) {
      const double shrunk = (1.0 - params.shrink) * radius;
      candidate = x;
      project_linf_inplace(candidate, seed, shrunk);
      fb = session.query(candidate);
      if (fb.reports(target)) {
        x.swap(candidate);
        radius = shrunk;
        current_deficit = deficit(fb, target);
        top1 = fb.label == target;
        record_state(result, options, x);
      }
      session.row(radius, linf_distance(x, seed), done());
    }
  }
  result.success = done();
  result.image = std::move(x);
  result.radius = radius;
  return result;
}

// ---- RayS ----------------------------------------------------------------------

double rays_binary_search(const std::function<bool(double)>& adversarial, double hi, double tolerance) {
  double lo = 0.0;
  while (hi - lo > tolerance) {
    const double mid = 0.5 * (lo + hi);
    if (adversarial(mid)) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

std::pair<std::size_t, std::size_t> rays_blocks(std::size_t d, std::size_t level) {
  const std::size_t parts = level >= 63 ? d : std::min<std::size_t>(d, std::size_t{1} << level);
  const std::size_t size = (d + parts - 1) / parts;
  return {(d + size - 1) / size, size};
}

QueryResult rays_attack(Oracle& oracle, std::span<const double> seed, std::size_t label, Goal goal,
                        const PerturbationBudget& budget, const QueryBudget& qbudget, const QueryOptions& options,
                        const RaysParams& params) {
  require_feedback(oracle, FeedbackKind::HardLabel, "rays");
  require_seed(oracle, seed, label);
  budget.validate();
  if (goal != Goal::Untargeted) throw Error(ErrorCode::InvalidArgument, "rays is an untargeted attack");
  const std::size_t d = seed.size();
  QueryResult result;
  Session session(oracle, qbudget, result);
  constexpr double kInf = std::numeric_limits<double>::infinity();

  std::vector<double> dir(d, 1.0);
  double best = kInf;
  std::vector<double> point(d);
  auto ray = [&](const std::vector<double>& s, double r) {
    for (std::size_t i = 0; i < d; ++i) point[i] = std::clamp(seed[i] + r * s[i], 0.0, 1.0);
    return std::span<const double>(point);
  };
  auto current_state = [&] {
    std::vector<double> img(d);
    const double r = std::isfinite(best) ? std::min(best, budget.epsilon) : 0.0;
    for (std::size_t i = 0; i < d; ++i) img[i] = std::clamp(seed[i] + r * dir[i], 0.0, 1.0);
    return img;
  };
  bool out_of_budget = false;
  auto adversarial = [&](const std::vector<double>& s, double r) {
    if (!session.can_query()) {
      out_of_budget = true;
      return false;
    }
    const bool adv = session.query(ray(s, r)).label != label;
    session.row(best, std::isfinite(best) ? std::min(best, budget.epsilon) : 0.0, best <= budget.epsilon);
    return adv;
  };
  // Accepts s iff binary search along it certifies a radius strictly below best.
  auto try_direction = [&](const std::vector<double>& s) {
    const double hi = std::isfinite(best) ? best : 1.0;
    if (!adversarial(s, hi)) return false;
    const double r = rays_binary_search([&](double m) { return adversarial(s, m); }, hi, params.tolerance);
    if (out_of_budget || !(r < best)) return false;
    dir = s;
    best = r;
    if (!result.trace.empty()) {
      result.trace.back().best_loss = best;
      result.trace.back().success = best <= budget.epsilon;
    }
    record_state(result, options, current_state());
    return true;
  };

  try_direction(dir);
  std::size_t level = 0;
  std::size_t block = 0;
  while (best > budget.epsilon && session.can_query()) {
    const auto [count, size] = rays_blocks(d, level);
    std::vector<double> flipped = dir;
    const std::size_t lo = block * size;
    const std::size_t hi = std::min(d, lo + size);
    for (std::size_t i = lo; i < hi; ++i) flipped[i] = -flipped[i];
    try_direction(flipped);
    if (++block >= count) {
      block = 0;
      level = size == 1 ? 0 : level + 1;
    }
  }
  result.direction = dir;
  result.radius = best;
  result.success = best <= budget.epsilon;
  result.image = current_state();
  return result;
}

// ---- SignFlip ------------------------------------------------------------------

QueryResult signflip_attack(Oracle& oracle, std::span<const double> seed, std::size_t label, Goal goal,
                            const PerturbationBudget& budget, const QueryBudget& qbudget,
                            const QueryOptions& options, const SignFlipParams& params) {
  require_feedback(oracle, FeedbackKind::HardLabel, "signflip");
  require_seed(oracle, seed, label);
  budget.validate();
  const std::size_t d = seed.size();
  auto rng = make_rng(options.seed, options.example, "signflip");
  QueryResult result;
  Session session(oracle, qbudget, result);
  auto is_adv = [&](const Feedback& fb) { return goal_satisfied(fb.label, label, goal); };

  auto start = find_start(session, options, d, is_adv, rng);
  std::vector<double> x = std::move(start.image);
  double radius = linf_distance(x, seed);
  double shrink = params.shrink;
  record_state(result, options, x);
  session.row(radius, radius, radius <= budget.epsilon);

  std::vector<double> candidate;
  while (radius > budget.epsilon && session.can_query()) {
    // radius reduction
    const double target_radius = std::max(budget.epsilon, (1.0 - shrink) * radius);
    candidate = x;
    project_linf_inplace(candidate, seed, target_radius);
    if (is_adv(session.query(candidate))) {
      x.swap(candidate);
      radius = target_radius;
      shrink = std::min(params.shrink, shrink * 1.5);
      record_state(result, options, x);
    } else {
      shrink = std::max(1e-4, shrink * 0.5);
    }
    session.row(radius, linf_distance(x, seed), radius <= budget.epsilon);
    if (radius <= budget.epsilon || !session.can_query()) break;

    // random sign flips of the current perturbation
    candidate = x;
    bool changed = false;
    for (std::size_t i = 0; i < d; ++i) {
      if (rng.bernoulli(params.flip_probability)) {
        candidate[i] = std::clamp(seed[i] - (x[i] - seed[i]), 0.0, 1.0);
        changed = changed || candidate[i] != x[i];
      }
    }
    if (changed) {
      if (is_adv(session.query(candidate))) {
        x.swap(candidate);
        record_state(result, options, x);
      }
      session.row(radius, linf_distance(x, seed), radius <= budget.epsilon);
    }
  }
  result.success = radius <= budget.epsilon;
  result.radius = radius;
  result.image = std::move(x);
  return result;
}

// ---- baselines -----------------------------------------------------------------

QueryResult random_noise_attack(Oracle& oracle, std::span<const double> seed, std::size_t label, Goal goal,
                                const PerturbationBudget& budget, const QueryBudget& qbudget,
                                const QueryOptions& options) {
  require_seed(oracle, seed, label);
  budget.validate();
  auto rng = make_rng(options.seed, options.example, "random-noise");
  QueryResult result;
  Session session(oracle, qbudget, result);
  std::vector<double> x(seed.begin(), seed.end());
  result.image = x;
  while (!result.success && session.can_query()) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = std::clamp(seed[i] + budget.epsilon * rng.random_sign(), 0.0, 1.0);
    }
    result.success = goal_satisfied(session.query(x).label, label, goal);
    if (result.success) result.image = x;
    session.row(result.success ? 0.0 : 1.0, linf_distance(x, seed), result.success);
  }
  return result;
}

std::vector<QueryResult> hybrid_square(Oracle& oracle, std::span<const DifferentiableNet> surrogates,
                                       const ImageBatch& seeds, std::span<const std::size_t> labels, Goal goal,
                                       const TransferConfig& transfer, const PerturbationBudget& budget,
                                       const QueryBudget& qbudget, const QueryOptions& options,
                                       const SquareParams& params) {
  require_feedback(oracle, FeedbackKind::FullScores, "hybrid-square");
  if (surrogates.empty()) throw Error(ErrorCode::InvalidArgument, "hybrid-square needs surrogates");
  qbudget.validate();
  TransferConfig local = transfer;
  local.goal = goal;
  local.budget = budget;
  TransferOptions topts;
  topts.example_offset = options.example;
  const auto run = run_transfer_attack(local, surrogates, seeds, labels, topts);
  const ImageBatch& candidates = run.candidates.empty() ? seeds : run.candidates.back();

  std::vector<QueryResult> out;
  out.reserve(seeds.count());
  for (std::size_t i = 0; i < seeds.count(); ++i) {
    const auto seed = seeds.example(i);
    const auto cand = candidates.example(i);
    const auto start = std::chrono::steady_clock::now();
    const auto fb = oracle.query(cand);
    const double check_elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const double loss = margin_from_scores(fb.scores, labels[i], goal);
    const bool transferred = goal_satisfied(fb.label, labels[i], goal);
    QueryResult r;
    if (transferred || qbudget.max_queries <= 1) {
      r.image.assign(cand.begin(), cand.end());
      r.success = transferred;
      r.queries_used = 1;
      r.trace.push_back({1, check_elapsed, loss, linf_distance(cand, seed), transferred, {}, {}});
      if (options.record_states) r.states.push_back(r.image);
    } else {
      QueryOptions sq = options;
      sq.example = options.example + i;
      QueryBudget rest = qbudget;
      rest.max_queries = qbudget.max_queries - 1;
      if (rest.max_seconds) rest.max_seconds = std::max(1e-9, *rest.max_seconds - check_elapsed);
      r = square_attack(oracle, seed, labels[i], goal, budget, rest, sq, params,
                        WarmStart{{cand.begin(), cand.end()}, loss});
      r.queries_used += 1;
      for (auto& row : r.trace) {
        row.query += 1;
        row.elapsed_s += check_elapsed;
      }
      r.trace.insert(r.trace.begin(), {1, check_elapsed, loss, linf_distance(cand, seed), false, {}, {}});
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace bbox
