#include "convexpr/sequencer.hpp"

#include <algorithm>
#include <limits>

#include "json.hpp"

namespace convexpr {

namespace {

struct AtomInfo {
  Atom atom;
  uint32_t carriers = 0;  // bitmask of inputs containing the atom
  bool in_output = false;
  bool is_conv = false;
  ConvMode mode = ConvMode::Same;
  int64_t partial_dim = 1;   // dimension while not fully absorbed (conv: per occurrence below)
  int64_t resolved_dim = 1;  // dimension once every carrier is absorbed
  std::vector<std::pair<int, int64_t>> occurrence_dims;  // (input, dim)
};

struct Intermediate {
  Subscripts subs;
  std::vector<int64_t> dims;
  bool computed = false;
};

// Shared planning state: atom table plus cached subscripts/dims per
// input subset.
struct PlanContext {
  const ExpressionSpec& spec;
  const ShapeEnv& env;
  const ConvModeMap& modes;
  CostMode cost_mode;
  int n = 0;
  std::vector<AtomInfo> atoms;  // canonical first-appearance order
  std::vector<Intermediate> cache;

  PlanContext(const ExpressionSpec& s, const ShapeEnv& e, const ConvModeMap& m, CostMode cm)
      : spec(s), env(e), modes(m), cost_mode(cm), n(static_cast<int>(s.inputs.size())) {
    if (n < 1) throw PlanError("expression has no inputs");
    if (n > 30) throw PlanError("too many inputs");
    for (const auto& a : spec.all_atoms()) {
      AtomInfo info;
      info.atom = a;
      info.in_output = spec.in_output(a);
      info.is_conv = spec.is_conv(a);
      for (int i = 0; i < n; ++i) {
        const auto& subs = spec.inputs[static_cast<std::size_t>(i)];
        auto it = std::find(subs.begin(), subs.end(), a);
        if (it == subs.end()) continue;
        info.carriers |= 1u << i;
        info.occurrence_dims.emplace_back(
            i, env.dims[static_cast<std::size_t>(i)]
                       [static_cast<std::size_t>(it - subs.begin())]);
      }
      if (info.is_conv) {
        auto mit = modes.find(a);
        if (mit == modes.end()) throw PlanError("no conv mode assigned to atom '" + a.name + "'");
        info.mode = mit->second;
        if (info.occurrence_dims.size() >= 3 && info.mode != ConvMode::Circular)
          throw PlanError("multi-way conv atom '" + a.name + "' requires circular mode");
        int64_t feature = 0, filter = std::numeric_limits<int64_t>::max();
        for (const auto& [inp, d] : info.occurrence_dims) {
          feature = std::max(feature, d);
          filter = std::min(filter, d);
        }
        info.resolved_dim = info.occurrence_dims.size() >= 3
                                ? feature
                                : conv_output_dim(info.mode, feature, filter);
      } else {
        info.resolved_dim = info.occurrence_dims[0].second;
      }
      atoms.push_back(std::move(info));
    }
    cache.resize(std::size_t{1} << n);
  }

  uint32_t full_mask() const { return (n == 32) ? ~0u : ((1u << n) - 1u); }

  int64_t dim_in_subset(const AtomInfo& info, uint32_t mask) const {
    if ((info.carriers & ~mask) == 0) return info.resolved_dim;
    for (const auto& [inp, d] : info.occurrence_dims)
      if (mask & (1u << inp)) return d;
    return -1;
  }

  // Subscripts an intermediate over `mask` carries. A single input is the
  // raw tensor; larger subsets keep an atom iff it appears in the output
  // or in some input outside the subset.
  const Intermediate& subset(uint32_t mask) {
    Intermediate& e = cache[mask];
    if (e.computed) return e;
    e.computed = true;
    if (std::popcount(mask) == 1) {
      const int i = std::countr_zero(mask);
      e.subs = spec.inputs[static_cast<std::size_t>(i)];
      e.dims = env.dims[static_cast<std::size_t>(i)];
      return e;
    }
    for (const auto& info : atoms) {
      if ((info.carriers & mask) == 0) continue;
      if (!info.in_output && (info.carriers & ~mask) == 0) continue;
      e.subs.push_back(info.atom);
      e.dims.push_back(dim_in_subset(info, mask));
    }
    return e;
  }

  std::set<Atom> keep_set(uint32_t node_mask) const {
    std::set<Atom> keep;
    for (const auto& info : atoms)
      if (info.in_output || (info.carriers & ~node_mask) != 0) keep.insert(info.atom);
    return keep;
  }

  PairwiseOp node_op(uint32_t lmask, uint32_t rmask) {
    const auto& l = subset(lmask);
    const auto& r = subset(rmask);
    const auto& res = subset(lmask | rmask);
    return make_pairwise_op(l.subs, l.dims, r.subs, r.dims, keep_set(lmask | rmask), modes,
                            res.subs);
  }

  u128 node_cost(const PairwiseOp& op) const { return pairwise_cost(op, cost_mode).total; }

  uint64_t subset_elements(uint32_t mask) {
    const auto& e = subset(mask);
    u128 total = 1;
    for (int64_t d : e.dims) total = checked_mul(total, static_cast<u128>(d));
    if (total > std::numeric_limits<uint64_t>::max())
      throw OverflowError("intermediate element count overflow");
    return static_cast<uint64_t>(total);
  }
};

// Assembles an EvaluationPlan from a binary split map: splits[mask] gives
// the (left, right) child masks of the node covering `mask`.
EvaluationPlan assemble_plan(PlanContext& ctx, const std::vector<std::pair<uint32_t, uint32_t>>& node_splits) {
  EvaluationPlan plan;
  plan.spec = ctx.spec;
  plan.env = ctx.env;
  plan.modes = ctx.modes;
  plan.cost_mode = ctx.cost_mode;

  std::vector<int> id_of_mask(std::size_t{1} << ctx.n, -1);
  for (int i = 0; i < ctx.n; ++i) id_of_mask[std::size_t{1} << i] = i;

  uint64_t peak = 0;
  for (const auto& [lmask, rmask] : node_splits) {
    PlanNode node;
    node.left = id_of_mask[lmask];
    node.right = id_of_mask[rmask];
    node.op = ctx.node_op(lmask, rmask);
    node.cost = ctx.node_cost(node.op);
    plan.total_cost = checked_add(plan.total_cost, node.cost);
    peak = std::max(peak, static_cast<uint64_t>(node.op.result_elements()));
    id_of_mask[lmask | rmask] = ctx.n + static_cast<int>(plan.nodes.size());
    plan.nodes.push_back(std::move(node));
  }
  plan.peak_intermediate_elements = peak;

  if (ctx.n == 1) {
    // Single input: the root is the input after self-contraction sums.
    for (std::size_t j = 0; j < ctx.spec.inputs[0].size(); ++j)
      if (ctx.spec.in_output(ctx.spec.inputs[0][j])) {
        plan.root_subs.push_back(ctx.spec.inputs[0][j]);
        plan.root_dims.push_back(ctx.env.dims[0][j]);
      }
  } else {
    const auto& root = ctx.subset(ctx.full_mask());
    plan.root_subs = root.subs;
    plan.root_dims = root.dims;
  }
  return plan;
}

// Emits node splits for a tree described by per-mask splits, in postorder.
void collect_splits(uint32_t mask, const std::vector<std::pair<uint32_t, uint32_t>>& split_of,
                    std::vector<std::pair<uint32_t, uint32_t>>& out) {
  if (std::popcount(mask) == 1) return;
  auto [l, r] = split_of[mask];
  collect_splits(l, split_of, out);
  collect_splits(r, split_of, out);
  out.push_back({l, r});
}

}  // namespace

EvaluationPlan left_to_right(const ExpressionSpec& spec, const ShapeEnv& env,
                             const ConvModeMap& modes, CostMode cost_mode) {
  PlanContext ctx(spec, env, modes, cost_mode);
  std::vector<std::pair<uint32_t, uint32_t>> splits;
  uint32_t acc = 1u;
  for (int i = 1; i < ctx.n; ++i) {
    splits.push_back({acc, 1u << i});
    acc |= 1u << i;
  }
  return assemble_plan(ctx, splits);
}

namespace {

struct DpCell {
  bool valid = false;
  u128 cost = 0;
  uint64_t peak = 0;
  std::string enc;
  uint32_t left = 0, right = 0;
};

// Exact subset DP. With a finite `cap`, partial plans costing more than
// the cap are discarded; *exceeded tracks the cheapest discarded total so
// the caller can raise the cap to the next candidate.
std::vector<DpCell> run_dp(PlanContext& ctx, bool capped, u128 cap, bool* found, u128* exceeded) {
  const uint32_t full = ctx.full_mask();
  std::vector<DpCell> dp(std::size_t{1} << ctx.n);
  for (int i = 0; i < ctx.n; ++i) {
    DpCell& cell = dp[std::size_t{1} << i];
    cell.valid = true;
    cell.enc = std::to_string(i);
  }

  bool any_exceeded = false;
  u128 min_exceeded = 0;

  std::vector<uint32_t> order;
  for (uint32_t mask = 1; mask <= full; ++mask)
    if (std::popcount(mask) >= 2) order.push_back(mask);
  std::sort(order.begin(), order.end(),
            [](uint32_t a, uint32_t b) { return std::popcount(a) < std::popcount(b); });

  for (uint32_t mask : order) {
    DpCell& cell = dp[mask];
    const uint32_t low = mask & (~mask + 1u);
    // Enumerate splits with the lowest input on the left.
    for (uint32_t sub = (mask - 1) & mask; sub; sub = (sub - 1) & mask) {
      if (!(sub & low)) continue;
      const uint32_t lmask = sub;
      const uint32_t rmask = mask & ~sub;
      const DpCell& lc = dp[lmask];
      const DpCell& rc = dp[rmask];
      if (!lc.valid || !rc.valid) continue;

      PairwiseOp op = ctx.node_op(lmask, rmask);
      u128 total = checked_add(checked_add(lc.cost, rc.cost), ctx.node_cost(op));
      if (capped && total > cap) {
        if (!any_exceeded || total < min_exceeded) min_exceeded = total;
        any_exceeded = true;
        continue;
      }
      const uint64_t peak = std::max({lc.peak, rc.peak, static_cast<uint64_t>(op.result_elements())});
      if (cell.valid) {
        if (total > cell.cost) continue;
        if (total == cell.cost && peak > cell.peak) continue;
      }
      std::string enc = "(" + lc.enc + " " + rc.enc + ")";
      if (cell.valid && total == cell.cost && peak == cell.peak && enc >= cell.enc) continue;
      cell.valid = true;
      cell.cost = total;
      cell.peak = peak;
      cell.enc = std::move(enc);
      cell.left = lmask;
      cell.right = rmask;
    }
  }

  *found = dp[full].valid;
  *exceeded = any_exceeded ? min_exceeded : 0;
  return dp;
}

}  // namespace

EvaluationPlan optimal(const ExpressionSpec& spec, const ShapeEnv& env, const ConvModeMap& modes,
                       CostMode cost_mode, OptimalOptions options) {
  PlanContext ctx(spec, env, modes, cost_mode);
  if (ctx.n > options.max_inputs)
    throw PlanError("expression has " + std::to_string(ctx.n) + " inputs, over the cap of " +
                    std::to_string(options.max_inputs));

  if (ctx.n == 1) return assemble_plan(ctx, {});

  std::vector<DpCell> dp;
  if (!options.cost_capped) {
    bool found = false;
    u128 exceeded = 0;
    dp = run_dp(ctx, false, 0, &found, &exceeded);
  } else {
    // Start from the cheapest single join and raise the cap to the next
    // discarded candidate until a complete plan fits.
    u128 cap = 1;
    while (true) {
      bool found = false;
      u128 exceeded = 0;
      dp = run_dp(ctx, true, cap, &found, &exceeded);
      if (found) break;
      cap = std::max(checked_mul(cap, 2), exceeded);
    }
  }

  std::vector<std::pair<uint32_t, uint32_t>> split_of(std::size_t{1} << ctx.n);
  for (uint32_t mask = 1; mask <= ctx.full_mask(); ++mask)
    if (dp[mask].valid && std::popcount(mask) >= 2) split_of[mask] = {dp[mask].left, dp[mask].right};

  std::vector<std::pair<uint32_t, uint32_t>> splits;
  collect_splits(ctx.full_mask(), split_of, splits);
  return assemble_plan(ctx, splits);
}

namespace {

// Expands every unsplit internal subset in turn, emitting a plan per
// fully assigned split map.
void enumerate_trees(std::vector<std::pair<uint32_t, uint32_t>>& split_of, PlanContext& ctx,
                     std::vector<EvaluationPlan>& out) {
  // Find the first unsplit internal subset, depth-first from the root.
  std::vector<uint32_t> stack = {ctx.full_mask()};
  uint32_t pending = 0;
  while (!stack.empty()) {
    uint32_t m = stack.back();
    stack.pop_back();
    if (std::popcount(m) == 1) continue;
    auto [l, r] = split_of[m];
    if (l == 0) {
      pending = m;
      break;
    }
    stack.push_back(l);
    stack.push_back(r);
  }
  if (pending == 0) {
    std::vector<std::pair<uint32_t, uint32_t>> splits;
    collect_splits(ctx.full_mask(), split_of, splits);
    out.push_back(assemble_plan(ctx, splits));
    return;
  }
  const uint32_t low = pending & (~pending + 1u);
  for (uint32_t sub = (pending - 1) & pending; sub; sub = (sub - 1) & pending) {
    if (!(sub & low)) continue;
    split_of[pending] = {sub, pending & ~sub};
    enumerate_trees(split_of, ctx, out);
    split_of[pending] = {0, 0};
  }
}

}  // namespace

std::vector<EvaluationPlan> enumerate_all(const ExpressionSpec& spec, const ShapeEnv& env,
                                          const ConvModeMap& modes, CostMode cost_mode) {
  PlanContext ctx(spec, env, modes, cost_mode);
  if (ctx.n > 6) throw PlanError("enumerate_all supports at most 6 inputs");
  std::vector<EvaluationPlan> out;
  if (ctx.n == 1) {
    out.push_back(assemble_plan(ctx, {}));
    return out;
  }
  std::vector<std::pair<uint32_t, uint32_t>> split_of(std::size_t{1} << ctx.n, {0, 0});
  enumerate_trees(split_of, ctx, out);
  return out;
}

EvaluationPlan plan_from_joins(const ExpressionSpec& spec, const ShapeEnv& env,
                               const ConvModeMap& modes, CostMode cost_mode,
                               const std::vector<std::pair<int, int>>& joins) {
  PlanContext ctx(spec, env, modes, cost_mode);
  if (static_cast<int>(joins.size()) != ctx.n - 1)
    throw PlanError("plan_from_joins: expected " + std::to_string(ctx.n - 1) + " joins");

  std::vector<uint32_t> mask_of;
  std::vector<bool> used;
  for (int i = 0; i < ctx.n; ++i) {
    mask_of.push_back(1u << i);
    used.push_back(false);
  }
  std::vector<std::pair<uint32_t, uint32_t>> splits;
  for (const auto& [l, r] : joins) {
    if (l < 0 || r < 0 || l >= static_cast<int>(mask_of.size()) ||
        r >= static_cast<int>(mask_of.size()) || l == r)
      throw PlanError("plan_from_joins: operand id out of range");
    if (used[static_cast<std::size_t>(l)] || used[static_cast<std::size_t>(r)])
      throw PlanError("plan_from_joins: operand used twice");
    used[static_cast<std::size_t>(l)] = used[static_cast<std::size_t>(r)] = true;
    const uint32_t lm = mask_of[static_cast<std::size_t>(l)];
    const uint32_t rm = mask_of[static_cast<std::size_t>(r)];
    splits.push_back({lm, rm});
    mask_of.push_back(lm | rm);
    used.push_back(false);
  }
  if (mask_of.back() != ctx.full_mask())
    throw PlanError("plan_from_joins: joins do not cover all inputs");
  return assemble_plan(ctx, splits);
}

u128 plan_cost(const EvaluationPlan& plan, CostMode mode) {
  u128 total = 0;
  for (const auto& node : plan.nodes)
    total = checked_add(total, pairwise_cost(node.op, mode).total);
  return total;
}

ExecutionResult execute(const EvaluationPlan& plan, const std::vector<DenseTensor>& inputs) {
  const int n = static_cast<int>(plan.spec.inputs.size());
  if (static_cast<int>(inputs.size()) != n)
    throw ShapeError("execute: wrong number of input tensors");
  for (int i = 0; i < n; ++i)
    if (inputs[static_cast<std::size_t>(i)].shape != plan.env.dims[static_cast<std::size_t>(i)])
      throw ShapeError("execute: input " + std::to_string(i) + " shape mismatch");

  ExecutionResult res;

  Subscripts cur_subs;
  DenseTensor cur;
  if (n == 1 && plan.nodes.empty()) {
    std::set<Atom> keep(plan.spec.output.begin(), plan.spec.output.end());
    auto [t, subs] = sum_unique_modes(inputs[0], plan.spec.inputs[0], keep);
    cur = std::move(t);
    cur_subs = std::move(subs);
  } else {
    std::vector<DenseTensor> results;
    results.reserve(plan.nodes.size());
    auto operand = [&](int id) -> const DenseTensor& {
      return id < n ? inputs[static_cast<std::size_t>(id)]
                    : results[static_cast<std::size_t>(id - n)];
    };
    for (const auto& node : plan.nodes) {
      DenseTensor r = pairwise_eval(operand(node.left), operand(node.right), node.op);
      res.multiplications = checked_add(res.multiplications, flops_actual(node.op));
      res.peak_intermediate_elements =
          std::max(res.peak_intermediate_elements, static_cast<uint64_t>(r.size()));
      results.push_back(std::move(r));
    }
    cur = std::move(results.back());
    cur_subs = plan.nodes.back().op.result;
  }

  // Reorder the root to the expression's output subscripts.
  std::vector<int64_t> order;
  for (const auto& a : plan.spec.output) {
    auto it = std::find(cur_subs.begin(), cur_subs.end(), a);
    if (it == cur_subs.end()) throw ShapeError("execute: root is missing output atom '" + a.name + "'");
    order.push_back(it - cur_subs.begin());
  }
  res.output = permute(cur, order);
  return res;
}

std::string tree_encoding(const EvaluationPlan& plan) {
  const int n = static_cast<int>(plan.spec.inputs.size());
  std::vector<std::string> enc;
  for (int i = 0; i < n; ++i) enc.push_back(std::to_string(i));
  for (const auto& node : plan.nodes)
    enc.push_back("(" + enc[static_cast<std::size_t>(node.left)] + " " +
                  enc[static_cast<std::size_t>(node.right)] + ")");
  return enc.back();
}

namespace {
nlohmann::json cost_to_json(u128 v) {
  if (v <= std::numeric_limits<uint64_t>::max()) return static_cast<uint64_t>(v);
  return to_decimal_string(v);
}
}  // namespace

std::string plan_to_json(const EvaluationPlan& plan) {
  nlohmann::json j;
  j["nodes"] = nlohmann::json::array();
  for (const auto& node : plan.nodes) {
    nlohmann::json nj;
    nj["left"] = node.left;
    nj["right"] = node.right;
    nj["result"] = render(node.op.result);
    nj["cost"] = cost_to_json(node.cost);
    j["nodes"].push_back(std::move(nj));
  }
  j["total_cost"] = cost_to_json(plan.total_cost);
  j["peak_elems"] = plan.peak_intermediate_elements;
  return j.dump();
}

}  // namespace convexpr
