#include "bbox/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bbox/error.hpp"

namespace bbox {

namespace {

struct VariantTraits {
  bool momentum = false;
  bool nesterov = false;
  bool variance = false;
  bool enhanced = false;
  bool spatial = false;
  bool diverse = false;
  bool admix = false;
};

VariantTraits traits(TransferVariant v) {
  switch (v) {
    case TransferVariant::I: return {};
    case TransferVariant::MI: return {.momentum = true};
    case TransferVariant::NI: return {.momentum = true, .nesterov = true};
    case TransferVariant::VMI: return {.momentum = true, .variance = true};
    case TransferVariant::VNI: return {.momentum = true, .nesterov = true, .variance = true};
    case TransferVariant::EMI: return {.momentum = true, .enhanced = true};
    case TransferVariant::SMI: return {.spatial = true};
    case TransferVariant::SMIMI: return {.momentum = true, .spatial = true};
    case TransferVariant::MIDI: return {.momentum = true, .diverse = true};
    case TransferVariant::Admix: return {.momentum = true, .admix = true};
    case TransferVariant::OdsAug: return {};
  }
  return {};
}

std::vector<double> clamp01(std::vector<double> v) {
  for (double& x : v) x = std::clamp(x, 0.0, 1.0);
  return v;
}

void add_scaled(std::vector<double>& acc, std::span<const double> v, double scale) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += scale * v[i];
}

std::int32_t clamp_index(long v, long hi) { return static_cast<std::int32_t>(std::clamp(v, 0L, hi - 1)); }

}  // namespace

const char* attack_id(TransferVariant v) noexcept {
  switch (v) {
    case TransferVariant::I: return "i-fgsm";
    case TransferVariant::MI: return "mi-fgsm";
    case TransferVariant::NI: return "ni-fgsm";
    case TransferVariant::VMI: return "vmi-fgsm";
    case TransferVariant::VNI: return "vni-fgsm";
    case TransferVariant::EMI: return "emi-fgsm";
    case TransferVariant::SMI: return "smi-fgsm";
    case TransferVariant::SMIMI: return "smimi-fgsm";
    case TransferVariant::MIDI: return "midi-fgsm";
    case TransferVariant::Admix: return "admix-fgsm";
    case TransferVariant::OdsAug: return "ods-aug";
  }
  return "?";
}

std::optional<TransferVariant> transfer_variant_from_id(std::string_view id) noexcept {
  for (auto v : {TransferVariant::I, TransferVariant::MI, TransferVariant::NI, TransferVariant::VMI,
                 TransferVariant::VNI, TransferVariant::EMI, TransferVariant::SMI, TransferVariant::SMIMI,
                 TransferVariant::MIDI, TransferVariant::Admix, TransferVariant::OdsAug}) {
    if (id == attack_id(v)) return v;
  }
  return std::nullopt;
}

TransferConfig TransferConfig::defaults(Goal goal, TransferVariant variant) {
  TransferConfig c;
  c.goal = goal;
  c.variant = variant;
  c.iterations = goal == Goal::Targeted ? 40 : 10;
  return c;
}

double TransferConfig::alpha() const {
  if (step_size) return *step_size;
  return iterations == 0 ? 0.0 : budget.epsilon / static_cast<double>(iterations);
}

void TransferConfig::validate() const {
  budget.validate();
  if (step_size && !(*step_size > 0.0)) throw Error(ErrorCode::InvalidArgument, "step size must be positive");
  const auto& p = params;
  if (p.momentum < 0.0) throw Error(ErrorCode::InvalidArgument, "momentum must be >= 0");
  if (p.variance_beta < 0.0 || p.emi_radius < 0.0 || p.admix_eta < 0.0) {
    throw Error(ErrorCode::InvalidArgument, "sampling radii must be >= 0");
  }
  if (p.smi_shift_fraction < 0.0 || p.smi_shift_fraction > 1.0) {
    throw Error(ErrorCode::InvalidArgument, "smi shift fraction must lie in [0, 1]");
  }
  if (p.di_probability < 0.0 || p.di_probability > 1.0) {
    throw Error(ErrorCode::InvalidArgument, "diverse-input probability must lie in [0, 1]");
  }
  if (p.di_scale < 1.0) throw Error(ErrorCode::InvalidArgument, "diverse-input scale must be >= 1");
  if (p.admix_scales == 0 || p.admix_count == 0) {
    throw Error(ErrorCode::InvalidArgument, "admix needs at least one scale and one mixed image");
  }
}

// ---- ensemble gradient --------------------------------------------------------

EnsembleGradient ensemble_gradient(std::span<const DifferentiableNet> surrogates, std::span<const double> x,
                                   std::size_t label, Goal goal) {
  if (surrogates.empty()) throw Error(ErrorCode::InvalidArgument, "ensemble needs at least one surrogate");
  EnsembleGradient out;
  out.gradient.assign(x.size(), 0.0);
  const double inv = 1.0 / static_cast<double>(surrogates.size());
  for (const auto& net : surrogates) {
    auto g = grad_input(net, x, LossKind::CrossEntropy, label, goal);
    if (surrogates.size() == 1) {
      out.gradient = std::move(g.gradient);
    } else {
      add_scaled(out.gradient, g.gradient, inv);
    }
    out.losses.push_back(g.loss);
    out.success.push_back(goal_satisfied(g.predicted, label, goal));
    out.mean_loss += g.loss * inv;
  }
  return out;
}

BatchEnsembleGradient ensemble_gradient(std::span<const DifferentiableNet> surrogates, const ImageBatch& x,
                                        std::span<const std::size_t> labels, Goal goal) {
  if (labels.size() != x.count()) throw Error(ErrorCode::ShapeMismatch, "labels/batch size differ");
  BatchEnsembleGradient out{ImageBatch(x.count(), x.shape()), {}, {}};
  for (std::size_t i = 0; i < x.count(); ++i) {
    auto eg = ensemble_gradient(surrogates, x.example(i), labels[i], goal);
    out.gradient.set_example(i, eg.gradient);
    out.losses.push_back(std::move(eg.losses));
    out.success.push_back(std::move(eg.success));
  }
  return out;
}

// ---- spatial maps -------------------------------------------------------------

std::vector<double> SpatialMap::apply(std::span<const double> x, const Shape& shape) const {
  if (identity()) return {x.begin(), x.end()};
  const std::size_t plane = shape.h * shape.w;
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t c = 0; c < shape.c; ++c) {
    for (std::size_t p = 0; p < plane; ++p) {
      if (source[p] >= 0) out[c * plane + p] = x[c * plane + static_cast<std::size_t>(source[p])];
    }
  }
  return out;
}

std::vector<double> SpatialMap::adjoint(std::span<const double> grad, const Shape& shape) const {
  if (identity()) return {grad.begin(), grad.end()};
  const std::size_t plane = shape.h * shape.w;
  std::vector<double> out(grad.size(), 0.0);
  for (std::size_t c = 0; c < shape.c; ++c) {
    for (std::size_t p = 0; p < plane; ++p) {
      if (source[p] >= 0) out[c * plane + static_cast<std::size_t>(source[p])] += grad[c * plane + p];
    }
  }
  return out;
}

SpatialMap SpatialMap::shift(const Shape& shape, int dy, int dx) {
  SpatialMap m;
  m.source.resize(shape.h * shape.w);
  const long h = static_cast<long>(shape.h);
  const long w = static_cast<long>(shape.w);
  for (long i = 0; i < h; ++i) {
    for (long j = 0; j < w; ++j) {
      m.source[static_cast<std::size_t>(i * w + j)] = clamp_index(i - dy, h) * static_cast<std::int32_t>(w) +
                                                      clamp_index(j - dx, w);
    }
  }
  return m;
}

SpatialMap SpatialMap::diverse_input(const Shape& shape, double scale, RngStream& rng) {
  const long h = static_cast<long>(shape.h);
  const long w = static_cast<long>(shape.w);
  const long big_h = std::max(h, static_cast<long>(std::floor(scale * static_cast<double>(h))));
  const long big_w = std::max(w, static_cast<long>(std::floor(scale * static_cast<double>(w))));
  const long rh = h + static_cast<long>(rng.index(static_cast<std::uint64_t>(big_h - h + 1)));
  const long rw = std::clamp((rh * w + h / 2) / h, w, big_w);
  const long top = static_cast<long>(rng.index(static_cast<std::uint64_t>(big_h - rh + 1)));
  const long left = static_cast<long>(rng.index(static_cast<std::uint64_t>(big_w - rw + 1)));
  SpatialMap m;
  m.source.resize(shape.h * shape.w);
  for (long i = 0; i < h; ++i) {
    for (long j = 0; j < w; ++j) {
      // output -> padded canvas -> resized image -> input (all nearest neighbour)
      const long ci = i * big_h / h - top;
      const long cj = j * big_w / w - left;
      std::int32_t src = -1;
      if (ci >= 0 && ci < rh && cj >= 0 && cj < rw) {
        src = static_cast<std::int32_t>((ci * h / rh) * w + (cj * w / rw));
      }
      m.source[static_cast<std::size_t>(i * w + j)] = src;
    }
  }
  return m;
}

std::vector<double> diverse_input_transform(std::span<const double> x, const Shape& shape, double probability,
                                            double scale, RngStream& rng) {
  if (!rng.bernoulli(probability)) return {x.begin(), x.end()};
  return SpatialMap::diverse_input(shape, scale, rng).apply(x, shape);
}

std::vector<AugmentedInput> augment(const TransferConfig& config, std::span<const double> x, const Shape& shape,
                                    std::span<const std::span<const double>> mix_pool, RngStream& sampler) {
  const auto t = traits(config.variant);
  const auto& p = config.params;
  std::vector<AugmentedInput> out;
  if (t.spatial) {
    const double weight = 1.0 / static_cast<double>(p.smi_copies + 1);
    out.push_back({{x.begin(), x.end()}, {}, 1.0, weight});
    const int max_shift = static_cast<int>(std::ceil(p.smi_shift_fraction * static_cast<double>(shape.h)));
    for (std::size_t k = 0; k < p.smi_copies; ++k) {
      const int span = 2 * max_shift + 1;
      const int dy = static_cast<int>(sampler.index(static_cast<std::uint64_t>(span))) - max_shift;
      const int dx = static_cast<int>(sampler.index(static_cast<std::uint64_t>(span))) - max_shift;
      auto map = SpatialMap::shift(shape, dy, dx);
      auto img = map.apply(x, shape);
      out.push_back({std::move(img), std::move(map), 1.0, weight});
    }
  } else if (t.diverse) {
    if (sampler.bernoulli(p.di_probability)) {
      auto map = SpatialMap::diverse_input(shape, p.di_scale, sampler);
      auto img = map.apply(x, shape);
      out.push_back({std::move(img), std::move(map), 1.0, 1.0});
    } else {
      out.push_back({{x.begin(), x.end()}, {}, 1.0, 1.0});
    }
  } else if (t.admix) {
    const double weight = 1.0 / static_cast<double>(p.admix_scales * p.admix_count);
    for (std::size_t j = 0; j < p.admix_count; ++j) {
      std::span<const double> other = mix_pool.empty() ? x : mix_pool[sampler.index(mix_pool.size())];
      std::vector<double> mixed(x.size());
      for (std::size_t k = 0; k < x.size(); ++k) mixed[k] = x[k] + p.admix_eta * other[k];
      for (std::size_t i = 0; i < p.admix_scales; ++i) {
        const double gamma = std::ldexp(1.0, -static_cast<int>(i));
        std::vector<double> img(mixed.size());
        for (std::size_t k = 0; k < img.size(); ++k) img[k] = gamma * mixed[k];
        out.push_back({clamp01(std::move(img)), {}, gamma, weight});
      }
    }
  } else {
    out.push_back({{x.begin(), x.end()}, {}, 1.0, 1.0});
  }
  return out;
}

// ---- stabilization ------------------------------------------------------------

std::vector<double> raw_gradient(const TransferConfig& config, TransferState& state, std::span<const double> x,
                                 const GradientFn& gradient) {
  const auto t = traits(config.variant);
  std::vector<double> point(x.begin(), x.end());
  if (t.nesterov) {
    const double lookahead = config.direction_sign() * config.alpha() * config.params.momentum;
    for (std::size_t i = 0; i < point.size(); ++i) point[i] += lookahead * state.momentum[i];
  }
  if (!t.enhanced) return gradient(point);

  const auto& p = config.params;
  const auto dir = sign(state.previous_gradient);
  const bool flat = std::all_of(dir.begin(), dir.end(), [](double d) { return d == 0.0; });
  std::vector<double> avg;
  if (flat || p.emi_samples <= 1) {
    avg = gradient(point);
  } else {
    avg.assign(point.size(), 0.0);
    const double radius = p.emi_radius * config.alpha();
    const double inv = 1.0 / static_cast<double>(p.emi_samples);
    for (std::size_t s = 0; s < p.emi_samples; ++s) {
      const double c = -radius + 2.0 * radius * static_cast<double>(s) / static_cast<double>(p.emi_samples - 1);
      std::vector<double> probe(point);
      for (std::size_t i = 0; i < probe.size(); ++i) probe[i] += c * dir[i];
      add_scaled(avg, gradient(probe), inv);
    }
  }
  state.previous_gradient = avg;
  return avg;
}

std::vector<double> stabilize(const TransferConfig& config, std::span<const double> raw, TransferState& state,
                              std::span<const double> x, const GradientFn& gradient, RngStream& sampler) {
  const auto t = traits(config.variant);
  const auto& p = config.params;
  std::vector<double> combined(raw.begin(), raw.end());
  if (t.variance) {
    for (std::size_t i = 0; i < combined.size(); ++i) combined[i] += state.variance[i];
    std::vector<double> next(combined.size(), 0.0);
    if (p.variance_samples > 0) {
      const double radius = p.variance_beta * config.budget.epsilon;
      const double inv = 1.0 / static_cast<double>(p.variance_samples);
      for (std::size_t s = 0; s < p.variance_samples; ++s) {
        std::vector<double> probe(x.begin(), x.end());
        for (double& v : probe) v += sampler.uniform(-radius, radius);
        add_scaled(next, gradient(probe), inv);
      }
      for (std::size_t i = 0; i < next.size(); ++i) next[i] -= raw[i];
    }
    state.variance = std::move(next);
  }
  ++state.iteration;
  if (!t.momentum) return combined;
  const auto normalized = l1_normalize(combined);
  for (std::size_t i = 0; i < normalized.size(); ++i) {
    state.momentum[i] = p.momentum * state.momentum[i] + normalized[i];
  }
  return state.momentum;
}

std::vector<double> step(std::span<const double> x, std::span<const double> direction,
                         std::span<const double> origin, const TransferConfig& config) {
  if (direction.size() != x.size()) throw Error(ErrorCode::ShapeMismatch, "step: direction size differs");
  const double s = config.direction_sign() * config.alpha();
  std::vector<double> next(x.begin(), x.end());
  for (std::size_t i = 0; i < next.size(); ++i) next[i] += s * sign(direction[i]);
  project_linf_inplace(next, origin, config.budget.epsilon);
  return next;
}

// ---- ODS ---------------------------------------------------------------------

std::vector<double> ods_direction(std::span<const DifferentiableNet> surrogates, std::span<const double> x,
                                  RngStream& sampler) {
  if (surrogates.empty()) throw Error(ErrorCode::InvalidArgument, "ods needs at least one surrogate");
  const auto& net = surrogates[sampler.index(surrogates.size())];
  const auto cache = net.forward(x);
  const auto p = softmax(cache.logits());
  std::vector<double> w(p.size());
  for (double& v : w) v = sampler.uniform(-1.0, 1.0);
  double wp = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) wp += w[j] * p[j];
  std::vector<double> dlogits(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) dlogits[j] = p[j] * (w[j] - wp);
  return sign(net.backward_input(cache, dlogits));
}

// ---- full attack ----------------------------------------------------------------

std::pair<double, double> local_metrics(std::span<const DifferentiableNet> surrogates, const ImageBatch& x,
                                        std::span<const std::size_t> labels, Goal goal) {
  double loss = 0.0;
  double hits = 0.0;
  for (std::size_t i = 0; i < x.count(); ++i) {
    for (const auto& net : surrogates) {
      const auto z = net.logits(x.example(i));
      loss += cross_entropy(z, labels[i]).value;
      hits += goal_satisfied(argmax(z), labels[i], goal) ? 1.0 : 0.0;
    }
  }
  const double denom = static_cast<double>(x.count() * surrogates.size());
  if (denom == 0.0) return {0.0, 0.0};
  return {loss / denom, hits / denom};
}

TransferRun run_transfer_attack(const TransferConfig& config, std::span<const DifferentiableNet> surrogates,
                                const ImageBatch& seeds, std::span<const std::size_t> labels,
                                const TransferOptions& options) {
  config.validate();
  if (config.variant == TransferVariant::OdsAug) {
    throw Error(ErrorCode::InvalidArgument, "ods-aug is a direction sampler for query attacks, not a transfer attack");
  }
  if (surrogates.empty()) throw Error(ErrorCode::InvalidArgument, "transfer attack needs at least one surrogate");
  if (labels.size() != seeds.count()) throw Error(ErrorCode::ShapeMismatch, "labels/seeds size differ");
  for (const auto& net : surrogates) {
    if (!(net.input_shape() == seeds.shape())) {
      throw Error(ErrorCode::ShapeMismatch, "surrogate '" + net.label() + "' input shape differs from seeds");
    }
  }

  const std::size_t n = seeds.count();
  const Shape shape = seeds.shape();
  const std::size_t max_iters = options.max_iterations.value_or(config.iterations);

  std::vector<TransferState> states(n, TransferState(shape.size()));
  std::vector<RngStream> samplers;
  std::vector<std::vector<std::span<const double>>> pools(n);
  samplers.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    samplers.push_back(make_rng(config.seed, options.example_offset + i, "transfer"));
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && labels[j] != labels[i]) pools[i].push_back(seeds.example(j));
    }
    if (pools[i].empty()) {
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i) pools[i].push_back(seeds.example(j));
      }
    }
  }

  TransferRun run;
  ImageBatch current = seeds;
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  for (std::size_t t = 0; t < max_iters; ++t) {
    if (options.keep_going && !options.keep_going(t, elapsed())) break;
    ImageBatch next(n, shape);
    for (std::size_t i = 0; i < n; ++i) {
      auto& sampler = samplers[i];
      const std::size_t label = labels[i];
      GradientFn local = [&](std::span<const double> z) {
        std::vector<double> total(z.size(), 0.0);
        for (const auto& copy : augment(config, z, shape, pools[i], sampler)) {
          const auto g = ensemble_gradient(surrogates, copy.image, label, config.goal).gradient;
          const auto back = copy.map.adjoint(g, shape);
          add_scaled(total, back, copy.weight * copy.chain);
        }
        return total;
      };
      const auto x = current.example(i);
      const auto raw = raw_gradient(config, states[i], x, local);
      const auto dir = stabilize(config, raw, states[i], x, local, sampler);
      next.set_example(i, step(x, dir, seeds.example(i), config));
    }
    const auto [loss, asr] = local_metrics(surrogates, next, labels, config.goal);
    if (!std::isfinite(loss)) {
      throw Error(ErrorCode::NonFinite, "local loss is not finite at iteration " + std::to_string(t + 1));
    }
    double now = elapsed();
    if (!run.trace.empty() && now <= run.trace.back().elapsed_s) {
      now = std::nextafter(run.trace.back().elapsed_s, 1e300);
    }
    run.trace.push_back({t + 1, now, loss, asr});
    run.candidates.push_back(next);
    current = std::move(next);
  }
  return run;
}

}  // namespace bbox
