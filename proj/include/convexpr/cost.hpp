#pragma once

#include "convexpr/checked_int.hpp"
#include "convexpr/kernels.hpp"

namespace convexpr {

enum class CostMode { Inference, Training };

const char* to_string(CostMode m);
CostMode cost_mode_from_string(std::string_view s);

/// Multiplication counts for one pairwise op. In training mode the two
/// gradient terms are included; total is forward (+ g1 + g2 when training).
struct CostBreakdown {
  u128 forward = 0;
  u128 g1 = 0;
  u128 g2 = 0;
  u128 total = 0;
};

/// Predicted multiplications under the tnn-cost model.
///
/// forward = F * prod_c(X_c * L_c) with
///   F = (batch dims) * (contraction dims) * (left free dims) * (right free dims),
///   X_c / L_c the feature/filter dimension of each convolved atom.
/// With no convolved atoms, forward = F. Training mode adds
///   g1 = F * prod_c(X'_c * L_c),  g2 = F * prod_c(X_c * X'_c)
/// with X'_c the output dimension under the op's mode; with no convolved
/// atoms g1 = g2 = F. The conv factor uses feature*filter regardless of
/// padding, so the prediction upper-bounds the kernel's actual count.
CostBreakdown pairwise_cost(const PairwiseOp& op, CostMode mode);

}  // namespace convexpr
