#include "bbox/zoo.hpp"

#include <cmath>
#include <string>

#include "bbox/error.hpp"
#include "bbox/rng.hpp"

namespace bbox {

namespace {

void kaiming_uniform(std::vector<double>& w, std::size_t fan_in, RngStream& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : w) v = rng.uniform(-bound, bound);
}

Affine make_affine(std::size_t in, std::size_t out, RngStream& rng) {
  Affine a{in, out, std::vector<double>(in * out), std::vector<double>(out, 0.0)};
  kaiming_uniform(a.weight, in, rng);
  return a;
}

Conv2d make_conv(std::size_t in, std::size_t out, RngStream& rng) {
  Conv2d c{in, out, 3, 1, 1, std::vector<double>(out * in * 9), std::vector<double>(out, 0.0)};
  kaiming_uniform(c.weight, in * 9, rng);
  return c;
}

}  // namespace

DifferentiableNet make_linear(Shape input, std::size_t classes, std::uint64_t seed) {
  auto rng = make_rng(seed, 0, "init/linear");
  std::vector<Layer> layers{Flatten{}, make_affine(input.size(), classes, rng)};
  return DifferentiableNet("linear", input, std::move(layers));
}

DifferentiableNet make_mlp(Shape input, std::size_t classes, std::uint64_t seed, std::size_t hidden) {
  auto rng = make_rng(seed, 0, "init/mlp");
  std::vector<Layer> layers{Flatten{},
                            make_affine(input.size(), hidden, rng),
                            ReLU{},
                            make_affine(hidden, hidden, rng),
                            ReLU{},
                            make_affine(hidden, classes, rng)};
  return DifferentiableNet("mlp", input, std::move(layers));
}

DifferentiableNet make_convnet(Shape input, std::size_t classes, std::uint64_t seed, std::size_t channels1,
                               std::size_t channels2) {
  if (input.h < 4 || input.w < 4) throw Error(ErrorCode::InvalidArgument, "convnet needs inputs of at least 4x4");
  auto rng = make_rng(seed, 0, "init/conv");
  const std::size_t flat = channels2 * (input.h / 2 / 2) * (input.w / 2 / 2);
  std::vector<Layer> layers{make_conv(input.c, channels1, rng),
                            ReLU{},
                            MaxPool2{},
                            make_conv(channels1, channels2, rng),
                            ReLU{},
                            MaxPool2{},
                            Flatten{},
                            make_affine(flat, classes, rng)};
  return DifferentiableNet("conv", input, std::move(layers));
}

DifferentiableNet make_architecture(std::string_view arch, Shape input, std::size_t classes, std::uint64_t seed) {
  if (arch == "linear") return make_linear(input, classes, seed);
  if (arch == "mlp") return make_mlp(input, classes, seed);
  if (arch == "conv") return make_convnet(input, classes, seed);
  throw Error(ErrorCode::InvalidArgument, "unknown architecture '" + std::string(arch) + "'");
}

}  // namespace bbox
