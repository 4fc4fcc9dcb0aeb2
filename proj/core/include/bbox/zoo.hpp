#pragma once

#include <cstdint>
#include <string_view>

#include "bbox/net.hpp"

namespace bbox {

/// Flatten + one affine map.
DifferentiableNet make_linear(Shape input, std::size_t classes, std::uint64_t seed);
/// Two ReLU hidden layers.
DifferentiableNet make_mlp(Shape input, std::size_t classes, std::uint64_t seed, std::size_t hidden = 128);
/// conv3x3(c1) - relu - pool - conv3x3(c2) - relu - pool - affine. Needs h, w >= 4.
DifferentiableNet make_convnet(Shape input, std::size_t classes, std::uint64_t seed, std::size_t channels1 = 8,
                               std::size_t channels2 = 16);

/// Builds by architecture name: "linear", "mlp" or "conv".
DifferentiableNet make_architecture(std::string_view arch, Shape input, std::size_t classes, std::uint64_t seed);

}  // namespace bbox
