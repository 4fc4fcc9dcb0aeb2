#include "bbox/net.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bbox/error.hpp"

namespace bbox {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::size_t conv_extent(std::size_t in, const Conv2d& conv) {
  const std::size_t padded = in + 2 * conv.padding;
  if (padded < conv.kernel || conv.stride == 0) {
    throw Error(ErrorCode::ShapeMismatch, "Conv2d: kernel larger than padded input");
  }
  return (padded - conv.kernel) / conv.stride + 1;
}

Shape infer_output(const Layer& layer, const Shape& in) {
  return std::visit(
      Overloaded{
          [&](const Affine& a) {
            if (a.in != in.size()) {
              throw Error(ErrorCode::ShapeMismatch, "Affine: expected input size " + std::to_string(a.in) +
                                                        ", got " + std::to_string(in.size()));
            }
            if (a.weight.size() != a.in * a.out || a.bias.size() != a.out) {
              throw Error(ErrorCode::ShapeMismatch, "Affine: parameter sizes inconsistent");
            }
            return Shape{a.out, 1, 1};
          },
          [&](const Conv2d& c) {
            if (c.in_channels != in.c) throw Error(ErrorCode::ShapeMismatch, "Conv2d: channel mismatch");
            if (c.weight.size() != c.out_channels * c.in_channels * c.kernel * c.kernel ||
                c.bias.size() != c.out_channels) {
              throw Error(ErrorCode::ShapeMismatch, "Conv2d: parameter sizes inconsistent");
            }
            return Shape{c.out_channels, conv_extent(in.h, c), conv_extent(in.w, c)};
          },
          [&](const ReLU&) { return in; },
          [&](const MaxPool2&) {
            if (in.h < 2 || in.w < 2) throw Error(ErrorCode::ShapeMismatch, "MaxPool2: input smaller than 2x2");
            return Shape{in.c, in.h / 2, in.w / 2};
          },
          [&](const Flatten&) { return Shape{in.size(), 1, 1}; },
      },
      layer);
}

void conv_forward(const Conv2d& c, const Shape& in, const Shape& out, std::span<const double> x,
                  std::vector<double>& y) {
  y.assign(out.size(), 0.0);
  const auto k = c.kernel;
  const auto pad = static_cast<std::ptrdiff_t>(c.padding);
  for (std::size_t o = 0; o < c.out_channels; ++o) {
    double* yo = y.data() + o * out.h * out.w;
    for (std::size_t i = 0; i < out.h * out.w; ++i) yo[i] = c.bias[o];
    for (std::size_t ci = 0; ci < c.in_channels; ++ci) {
      const double* xc = x.data() + ci * in.h * in.w;
      const double* wk = c.weight.data() + (o * c.in_channels + ci) * k * k;
      for (std::size_t oy = 0; oy < out.h; ++oy) {
        for (std::size_t ox = 0; ox < out.w; ++ox) {
          double acc = 0.0;
          const auto y0 = static_cast<std::ptrdiff_t>(oy * c.stride) - pad;
          const auto x0 = static_cast<std::ptrdiff_t>(ox * c.stride) - pad;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const auto iy = y0 + static_cast<std::ptrdiff_t>(ky);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in.h)) continue;
            const double* row = xc + iy * static_cast<std::ptrdiff_t>(in.w);
            const double* wrow = wk + ky * k;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const auto ix = x0 + static_cast<std::ptrdiff_t>(kx);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in.w)) continue;
              acc += wrow[kx] * row[ix];
            }
          }
          yo[oy * out.w + ox] += acc;
        }
      }
    }
  }
}

// dx (may be null) and parameter grads (may be null) from dy.
void conv_backward(const Conv2d& c, const Shape& in, const Shape& out, std::span<const double> x,
                   std::span<const double> dy, std::vector<double>* dx, double* dw, double* db) {
  const auto k = c.kernel;
  const auto pad = static_cast<std::ptrdiff_t>(c.padding);
  if (dx) dx->assign(in.size(), 0.0);
  for (std::size_t o = 0; o < c.out_channels; ++o) {
    const double* dyo = dy.data() + o * out.h * out.w;
    if (db) {
      for (std::size_t i = 0; i < out.h * out.w; ++i) db[o] += dyo[i];
    }
    for (std::size_t ci = 0; ci < c.in_channels; ++ci) {
      const double* xc = x.data() + ci * in.h * in.w;
      const double* wk = c.weight.data() + (o * c.in_channels + ci) * k * k;
      double* dwk = dw ? dw + (o * c.in_channels + ci) * k * k : nullptr;
      double* dxc = dx ? dx->data() + ci * in.h * in.w : nullptr;
      for (std::size_t oy = 0; oy < out.h; ++oy) {
        for (std::size_t ox = 0; ox < out.w; ++ox) {
          const double g = dyo[oy * out.w + ox];
          if (g == 0.0) continue;
          const auto y0 = static_cast<std::ptrdiff_t>(oy * c.stride) - pad;
          const auto x0 = static_cast<std::ptrdiff_t>(ox * c.stride) - pad;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const auto iy = y0 + static_cast<std::ptrdiff_t>(ky);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in.h)) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const auto ix = x0 + static_cast<std::ptrdiff_t>(kx);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in.w)) continue;
              const auto off = static_cast<std::size_t>(iy) * in.w + static_cast<std::size_t>(ix);
              if (dwk) dwk[ky * k + kx] += g * xc[off];
              if (dxc) dxc[off] += g * wk[ky * k + kx];
            }
          }
        }
      }
    }
  }
}

}  // namespace

const char* layer_name(const Layer& layer) noexcept {
  return std::visit(Overloaded{[](const Affine&) { return "affine"; }, [](const Conv2d&) { return "conv"; },
                               [](const ReLU&) { return "relu"; }, [](const MaxPool2&) { return "maxpool2"; },
                               [](const Flatten&) { return "flatten"; }},
                    layer);
}

DifferentiableNet::DifferentiableNet(std::string label, Shape input, std::vector<Layer> layers)
    : label_(std::move(label)), input_(input), layers_(std::move(layers)) {
  shapes_.push_back(input_);
  for (const auto& layer : layers_) shapes_.push_back(infer_output(layer, shapes_.back()));
  classes_ = shapes_.back().size();
  if (classes_ < 2) throw Error(ErrorCode::InvalidArgument, "network must output at least 2 classes");
}

void DifferentiableNet::check_input(std::span<const double> x) const {
  if (x.size() != input_.size()) {
    throw Error(ErrorCode::ShapeMismatch, "network '" + label_ + "' expects " + std::to_string(input_.size()) +
                                              " inputs, got " + std::to_string(x.size()));
  }
}

ForwardCache DifferentiableNet::forward(std::span<const double> x) const {
  check_input(x);
  ForwardCache cache;
  cache.activations.reserve(layers_.size() + 1);
  cache.pool_argmax.resize(layers_.size());
  cache.activations.emplace_back(x.begin(), x.end());
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const Shape& in = shapes_[li];
    const Shape& out = shapes_[li + 1];
    const std::vector<double>& a = cache.activations.back();
    std::vector<double> y;
    std::visit(Overloaded{
                   [&](const Affine& f) {
                     y.assign(f.out, 0.0);
                     for (std::size_t o = 0; o < f.out; ++o) {
                       const double* w = f.weight.data() + o * f.in;
                       double acc = f.bias[o];
                       for (std::size_t i = 0; i < f.in; ++i) acc += w[i] * a[i];
                       y[o] = acc;
                     }
                   },
                   [&](const Conv2d& c) { conv_forward(c, in, out, a, y); },
                   [&](const ReLU&) {
                     y = a;
                     for (double& v : y) v = v > 0.0 ? v : 0.0;
                   },
                   [&](const MaxPool2&) {
                     y.assign(out.size(), 0.0);
                     auto& idx = cache.pool_argmax[li];
                     idx.assign(out.size(), 0);
                     for (std::size_t ch = 0; ch < out.c; ++ch) {
                       for (std::size_t oy = 0; oy < out.h; ++oy) {
                         for (std::size_t ox = 0; ox < out.w; ++ox) {
                           std::size_t best = ch * in.h * in.w + (2 * oy) * in.w + 2 * ox;
                           for (std::size_t dy = 0; dy < 2; ++dy) {
                             for (std::size_t dx = 0; dx < 2; ++dx) {
                               const std::size_t off = ch * in.h * in.w + (2 * oy + dy) * in.w + 2 * ox + dx;
                               if (a[off] > a[best]) best = off;
                             }
                           }
                           const std::size_t o = ch * out.h * out.w + oy * out.w + ox;
                           y[o] = a[best];
                           idx[o] = static_cast<std::uint32_t>(best);
                         }
                       }
                     }
                   },
                   [&](const Flatten&) { y = a; },
               },
               layers_[li]);
    cache.activations.push_back(std::move(y));
  }
  return cache;
}

std::vector<double> DifferentiableNet::logits(std::span<const double> x) const {
  auto cache = forward(x);
  return std::move(cache.activations.back());
}

std::vector<std::vector<double>> DifferentiableNet::logits(const ImageBatch& x) const {
  if (!(x.shape() == input_)) throw Error(ErrorCode::ShapeMismatch, "batch shape does not match network input");
  std::vector<std::vector<double>> out;
  out.reserve(x.count());
  for (std::size_t i = 0; i < x.count(); ++i) out.push_back(logits(x.example(i)));
  return out;
}

std::vector<double> DifferentiableNet::backward_impl(const ForwardCache& cache, std::span<const double> dlogits,
                                                     std::vector<std::vector<double>>* grads) const {
  if (cache.activations.size() != layers_.size() + 1) {
    throw Error(ErrorCode::InvalidArgument, "forward cache does not belong to this network");
  }
  if (dlogits.size() != classes_) throw Error(ErrorCode::ShapeMismatch, "dlogits has wrong length");
  std::vector<double> dy(dlogits.begin(), dlogits.end());
  std::size_t pidx = 0;
  if (grads) {
    for (const auto& layer : layers_) {
      if (std::holds_alternative<Affine>(layer) || std::holds_alternative<Conv2d>(layer)) pidx += 2;
    }
  }
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const Shape& in = shapes_[li];
    const Shape& out = shapes_[li + 1];
    const std::vector<double>& a = cache.activations[li];
    std::vector<double> dx;
    std::visit(Overloaded{
                   [&](const Affine& f) {
                     if (grads) {
                       pidx -= 2;
                       double* dw = (*grads)[pidx].data();
                       double* db = (*grads)[pidx + 1].data();
                       for (std::size_t o = 0; o < f.out; ++o) {
                         const double g = dy[o];
                         db[o] += g;
                         if (g == 0.0) continue;
                         double* row = dw + o * f.in;
                         for (std::size_t i = 0; i < f.in; ++i) row[i] += g * a[i];
                       }
                     }
                     dx.assign(f.in, 0.0);
                     for (std::size_t o = 0; o < f.out; ++o) {
                       const double g = dy[o];
                       if (g == 0.0) continue;
                       const double* w = f.weight.data() + o * f.in;
                       for (std::size_t i = 0; i < f.in; ++i) dx[i] += g * w[i];
                     }
                   },
                   [&](const Conv2d& c) {
                     double* dw = nullptr;
                     double* db = nullptr;
                     if (grads) {
                       pidx -= 2;
                       dw = (*grads)[pidx].data();
                       db = (*grads)[pidx + 1].data();
                     }
                     conv_backward(c, in, out, a, dy, &dx, dw, db);
                   },
                   [&](const ReLU&) {
                     dx = dy;
                     for (std::size_t i = 0; i < dx.size(); ++i) {
                       if (!(a[i] > 0.0)) dx[i] = 0.0;
                     }
                   },
                   [&](const MaxPool2&) {
                     dx.assign(in.size(), 0.0);
                     const auto& idx = cache.pool_argmax[li];
                     for (std::size_t o = 0; o < out.size(); ++o) dx[idx[o]] += dy[o];
                   },
                   [&](const Flatten&) { dx = dy; },
               },
               layers_[li]);
    dy = std::move(dx);
  }
  return dy;
}

std::vector<double> DifferentiableNet::backward_input(const ForwardCache& cache,
                                                      std::span<const double> dlogits) const {
  return backward_impl(cache, dlogits, nullptr);
}

void DifferentiableNet::accumulate_parameter_gradients(const ForwardCache& cache, std::span<const double> dlogits,
                                                       std::vector<std::vector<double>>& grads) const {
  backward_impl(cache, dlogits, &grads);
}

std::vector<std::span<double>> DifferentiableNet::parameters() {
  std::vector<std::span<double>> out;
  for (auto& layer : layers_) {
    if (auto* a = std::get_if<Affine>(&layer)) {
      out.emplace_back(a->weight);
      out.emplace_back(a->bias);
    } else if (auto* c = std::get_if<Conv2d>(&layer)) {
      out.emplace_back(c->weight);
      out.emplace_back(c->bias);
    }
  }
  return out;
}

std::vector<std::span<const double>> DifferentiableNet::parameters() const {
  std::vector<std::span<const double>> out;
  for (const auto& layer : layers_) {
    if (const auto* a = std::get_if<Affine>(&layer)) {
      out.emplace_back(a->weight);
      out.emplace_back(a->bias);
    } else if (const auto* c = std::get_if<Conv2d>(&layer)) {
      out.emplace_back(c->weight);
      out.emplace_back(c->bias);
    }
  }
  return out;
}

std::size_t DifferentiableNet::parameter_count() const {
  std::size_t n = 0;
  for (auto p : parameters()) n += p.size();
  return n;
}

std::vector<std::vector<double>> DifferentiableNet::zero_gradients() const {
  std::vector<std::vector<double>> out;
  for (auto p : parameters()) out.emplace_back(p.size(), 0.0);
  return out;
}

bool operator==(const DifferentiableNet& a, const DifferentiableNet& b) {
  if (a.label_ != b.label_ || !(a.input_ == b.input_) || a.layers_.size() != b.layers_.size()) return false;
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    if (a.layers_[i].index() != b.layers_[i].index()) return false;
  }
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!std::equal(pa[i].begin(), pa[i].end(), pb[i].begin(), pb[i].end())) return false;
  }
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    const auto* ca = std::get_if<Conv2d>(&a.layers_[i]);
    const auto* cb = std::get_if<Conv2d>(&b.layers_[i]);
    if (ca && (ca->stride != cb->stride || ca->padding != cb->padding || ca->kernel != cb->kernel)) return false;
  }
  return true;
}

// ---- losses -----------------------------------------------------------------

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - top);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

LossValue cross_entropy(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) throw Error(ErrorCode::InvalidLabel, "label " + std::to_string(label) + " out of range");
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - top);
  LossValue out;
  out.value = -(logits[label] - top - std::log(total));
  out.dlogits.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out.dlogits[i] = std::exp(logits[i] - top) / total;
  out.dlogits[label] -= 1.0;
  return out;
}

namespace {

std::size_t best_other(std::span<const double> z, std::size_t excluded) {
  std::size_t best = excluded == 0 ? 1 : 0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    if (j != excluded && z[j] > z[best]) best = j;
  }
  return best;
}

}  // namespace

LossValue margin_loss(std::span<const double> logits, std::size_t label, Goal goal) {
  if (label >= logits.size()) throw Error(ErrorCode::InvalidLabel, "label " + std::to_string(label) + " out of range");
  const std::size_t other = best_other(logits, label);
  LossValue out;
  out.dlogits.assign(logits.size(), 0.0);
  if (goal == Goal::Untargeted) {
    out.value = logits[label] - logits[other];
    out.dlogits[label] = 1.0;
    out.dlogits[other] = -1.0;
  } else {
    out.value = logits[other] - logits[label];
    out.dlogits[other] = 1.0;
    out.dlogits[label] = -1.0;
  }
  return out;
}

LossValue evaluate_loss(LossKind kind, std::span<const double> logits, std::size_t label, Goal goal) {
  return kind == LossKind::CrossEntropy ? cross_entropy(logits, label) : margin_loss(logits, label, goal);
}

bool goal_satisfied(std::size_t predicted, std::size_t label, Goal goal) noexcept {
  return goal == Goal::Untargeted ? predicted != label : predicted == label;
}

InputGradient grad_input(const DifferentiableNet& net, std::span<const double> x, LossKind loss,
                         std::size_t label, Goal goal) {
  if (label >= net.classes()) {
    throw Error(ErrorCode::InvalidLabel, "label " + std::to_string(label) + " >= class count");
  }
  const ForwardCache cache = net.forward(x);
  LossValue lv = evaluate_loss(loss, cache.logits(), label, goal);
  InputGradient out;
  out.loss = lv.value;
  out.predicted = argmax(cache.logits());
  out.gradient = net.backward_input(cache, lv.dlogits);
  return out;
}

ImageBatch grad_input(const DifferentiableNet& net, const ImageBatch& x, LossKind loss,
                      std::span<const std::size_t> labels, Goal goal) {
  if (labels.size() != x.count()) throw Error(ErrorCode::ShapeMismatch, "grad_input: labels/batch size differ");
  ImageBatch out(x.count(), x.shape());
  for (std::size_t i = 0; i < x.count(); ++i) {
    out.set_example(i, grad_input(net, x.example(i), loss, labels[i], goal).gradient);
  }
  return out;
}

}  // namespace bbox
