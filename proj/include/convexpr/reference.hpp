#pragma once

#include <vector>

#include "convexpr/expression.hpp"
#include "convexpr/kernels.hpp"
#include "convexpr/tensor.hpp"

namespace convexpr::reference {

/// Expression output shape under the given mode assignment, independent
/// of any evaluation order.
std::vector<int64_t> output_shape(const ExpressionSpec& spec, const ShapeEnv& env,
                                  const ConvModeMap& modes);

/// Serial brute-force evaluation of the whole N-input expression straight
/// from the nested-sum definition: for every output coordinate, sum over
/// all contracted indices and all filter positions the product of input
/// entries. Exponential in expression size; kept as the testing oracle
/// and the benchmark baseline for the pairwise kernels. Shares nothing
/// with the pairwise reduction path.
DenseTensor eval(const ExpressionSpec& spec, const ShapeEnv& env, const ConvModeMap& modes,
                 const std::vector<DenseTensor>& inputs);

}  // namespace convexpr::reference
