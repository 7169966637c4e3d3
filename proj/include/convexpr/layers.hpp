#pragma once

#include <string>
#include <vector>

#include "convexpr/expression.hpp"
#include "convexpr/sequencer.hpp"
#include "convexpr/tensor.hpp"

namespace convexpr {

enum class LayerKind {
  Standard,
  CP,
  RCP,
  TK,
  RTK,
  TT,
  RTT,
  TR,
  RTR,
  BT,
  HT,
  InterleavedGroup,
  SeparableDepthwise,
};

const char* to_string(LayerKind k);
LayerKind layer_kind_from_string(std::string_view s);
std::vector<LayerKind> all_layer_kinds();

/// Parameters of one tensorized convolutional layer. Channel dimensions
/// are given factored: T = prod(t_factors), S = prod(s_factors); the
/// reshaped kinds (RCP/RTK/RTT/RTR/BT/HT) use M = t_factors.size() > 1,
/// the plain kinds use single factors. Rank slots per kind:
///   CP, RCP        {R}
///   TK             {R1, R2}
///   RTK            {R0, R1..RM}
///   TT             {R1, R2, R3}
///   RTT            {R1..RM}
///   TR             {R0, R1, R2, R3}
///   RTR            {R0, R1..RM}
///   BT             {R, R1..RM, R0}
///   HT (M=3 fixed) {R0..R5}
/// Standard, InterleavedGroup and SeparableDepthwise take no ranks.
struct LayerSpec {
  LayerKind kind = LayerKind::Standard;
  std::vector<int64_t> t_factors = {1};
  std::vector<int64_t> s_factors = {1};
  int64_t filter_h = 3, filter_w = 3;
  int64_t feature_h = 32, feature_w = 32;
  int64_t batch = 1;
  std::vector<int64_t> ranks;

  int64_t t_total() const;
  int64_t s_total() const;
  int order() const { return static_cast<int>(t_factors.size()); }  // M
};

/// Rank slots the kind expects given M; 0 for rankless kinds.
std::size_t rank_slot_count(LayerKind kind, int m);

/// Throws std::invalid_argument on factor/rank arity mismatches.
void validate(const LayerSpec& layer);

struct LayerExpression {
  ExpressionSpec spec;
  ShapeEnv env;
  std::vector<std::string> tensor_names;  // "X", "W1", ..., aligned with inputs
};

/// The layer's conv_einsum string and per-input shapes. The expression is
/// produced through the parser, so it satisfies every spec invariant.
LayerExpression expression(const LayerSpec& layer);

/// Total element count of the weight factors (the input tensor and batch
/// are excluded).
u128 param_count(const LayerSpec& layer);

/// Largest uniform rank whose param_count stays within cr * (T*S*H*W),
/// floored at 1. Monotone search; requires a ranked kind and 0 < cr <= 1.
int64_t rank_for_compression(const LayerSpec& layer, double cr);

/// Copy of `layer` with every rank slot set to rank_for_compression.
LayerSpec with_compression_rank(LayerSpec layer, double cr);

/// The explicit evaluation path used in the reduction proofs for RCP and
/// RTK layers: chain W1..WM pairwise, absorb the core (RTK), contract
/// with W0 to rebuild the kernel, then a single convolution with X.
/// Exactly M+1 internal nodes for RCP and M+2 for RTK.
EvaluationPlan theorem_reduced_plan(const LayerSpec& layer,
                                    CostMode cost_mode = CostMode::Inference);

/// The five CP-factorized ResNet-34 block configurations (first 3x3
/// layer of each stage at its input resolution), ranks solved at `cr`.
std::vector<std::pair<std::string, LayerSpec>> resnet34_cp_blocks(int64_t batch, double cr);

std::string layer_to_json(const LayerSpec& layer);
LayerSpec layer_from_json(const std::string& text);

}  // namespace convexpr
