#include "convexpr/cost.hpp"

namespace convexpr {

const char* to_string(CostMode m) {
  return m == CostMode::Inference ? "inference" : "training";
}

CostMode cost_mode_from_string(std::string_view s) {
  if (s == "inference") return CostMode::Inference;
  if (s == "training") return CostMode::Training;
  throw std::invalid_argument("unknown cost mode: " + std::string(s));
}

CostBreakdown pairwise_cost(const PairwiseOp& op, CostMode mode) {
  u128 f = 1;
  for (int64_t d : op.batch_dims) f = checked_mul(f, static_cast<u128>(d));
  for (int64_t d : op.contraction_dims) f = checked_mul(f, static_cast<u128>(d));
  for (int64_t d : op.left_free_dims) f = checked_mul(f, static_cast<u128>(d));
  for (int64_t d : op.right_free_dims) f = checked_mul(f, static_cast<u128>(d));

  CostBreakdown cb;
  cb.forward = f;
  cb.g1 = f;
  cb.g2 = f;
  for (const auto& ax : op.conv_axes) {
    const auto x = static_cast<u128>(ax.feature_dim);
    const auto l = static_cast<u128>(ax.filter_dim);
    const auto xo = static_cast<u128>(ax.output_dim);
    cb.forward = checked_mul(cb.forward, checked_mul(x, l));
    cb.g1 = checked_mul(cb.g1, checked_mul(xo, l));
    cb.g2 = checked_mul(cb.g2, checked_mul(x, xo));
  }

  if (mode == CostMode::Inference) {
    cb.g1 = 0;
    cb.g2 = 0;
    cb.total = cb.forward;
  } else {
    cb.total = checked_add(checked_add(cb.forward, cb.g1), cb.g2);
  }
  return cb;
}

}  // namespace convexpr
