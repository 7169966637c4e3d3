#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "convexpr/cost.hpp"
#include "convexpr/expression.hpp"
#include "convexpr/kernels.hpp"
#include "convexpr/tensor.hpp"

namespace convexpr {

struct PlanError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One internal node of an evaluation tree. Operand ids refer to inputs
/// (0..N-1) or to earlier nodes (N + node index).
struct PlanNode {
  int left = -1;
  int right = -1;
  PairwiseOp op;
  u128 cost = 0;  // total under the plan's cost mode
};

/// A full binary evaluation tree over the expression inputs, in execution
/// order (each node reads only inputs or earlier nodes). An expression
/// with a single input has no nodes; execution reduces to a
/// self-contraction sum plus an axis reorder.
struct EvaluationPlan {
  ExpressionSpec spec;
  ShapeEnv env;
  ConvModeMap modes;
  CostMode cost_mode = CostMode::Inference;

  std::vector<PlanNode> nodes;
  Subscripts root_subs;
  std::vector<int64_t> root_dims;
  u128 total_cost = 0;
  uint64_t peak_intermediate_elements = 0;
};

/// The degenerate left-deep tree ((T1.T2).T3)... in input order.
EvaluationPlan left_to_right(const ExpressionSpec& spec, const ShapeEnv& env,
                             const ConvModeMap& modes, CostMode cost_mode = CostMode::Inference);

struct OptimalOptions {
  int max_inputs = 16;
  /// Iteratively raised cost-cap pruning (netcon lineage). Produces
  /// results identical to the exact subset DP; off by default.
  bool cost_capped = false;
};

/// Multiplication-minimal plan over all full binary trees on the inputs,
/// including outer-product joins of disconnected operands. Exact subset
/// dynamic programming; ties broken by smaller peak intermediate element
/// count, then by lexicographically smallest canonical tree encoding, so
/// the result is deterministic. Rejects expressions whose multi-way conv
/// atoms are not circular.
EvaluationPlan optimal(const ExpressionSpec& spec, const ShapeEnv& env, const ConvModeMap& modes,
                       CostMode cost_mode = CostMode::Inference, OptimalOptions options = {});

/// Every full binary tree over the inputs (N <= 6; there are (2N-3)!!).
std::vector<EvaluationPlan> enumerate_all(const ExpressionSpec& spec, const ShapeEnv& env,
                                          const ConvModeMap& modes,
                                          CostMode cost_mode = CostMode::Inference);

/// Builds a plan from an explicit join sequence. Each pair names two
/// operand ids (inputs 0..N-1, or N+j for the j-th join), left first;
/// every input must be consumed exactly once.
EvaluationPlan plan_from_joins(const ExpressionSpec& spec, const ShapeEnv& env,
                               const ConvModeMap& modes, CostMode cost_mode,
                               const std::vector<std::pair<int, int>>& joins);

/// Recomputed cost of a plan under an arbitrary mode (sums
/// pairwise_cost(...).total over the nodes with their recorded shapes).
u128 plan_cost(const EvaluationPlan& plan, CostMode mode);

struct ExecutionResult {
  DenseTensor output;
  u128 multiplications = 0;              // sum of flops_actual over nodes
  uint64_t peak_intermediate_elements = 0;  // largest node result materialized
};

/// Replays the plan through kernels::pairwise_eval and reorders the root
/// to the expression's output subscripts.
ExecutionResult execute(const EvaluationPlan& plan, const std::vector<DenseTensor>& inputs);

/// Canonical "(i (j k))"-style encoding of the plan's tree.
std::string tree_encoding(const EvaluationPlan& plan);

/// {"nodes":[{"left":..,"right":..,"result":"..","cost":..},..],
///  "total_cost":.., "peak_elems":..}
std::string plan_to_json(const EvaluationPlan& plan);

}  // namespace convexpr
