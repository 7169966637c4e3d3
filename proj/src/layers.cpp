#include "convexpr/layers.hpp"

#include <algorithm>
#include <cctype>

#include "json.hpp"

namespace convexpr {

const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Standard: return "standard";
    case LayerKind::CP: return "cp";
    case LayerKind::RCP: return "rcp";
    case LayerKind::TK: return "tk";
    case LayerKind::RTK: return "rtk";
    case LayerKind::TT: return "tt";
    case LayerKind::RTT: return "rtt";
    case LayerKind::TR: return "tr";
    case LayerKind::RTR: return "rtr";
    case LayerKind::BT: return "bt";
    case LayerKind::HT: return "ht";
    case LayerKind::InterleavedGroup: return "interleaved-group";
    case LayerKind::SeparableDepthwise: return "separable-depthwise";
  }
  return "?";
}

LayerKind layer_kind_from_string(std::string_view s) {
  std::string k;
  for (char c : s)
    if (c != '-' && c != '_') k.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (k == "standard") return LayerKind::Standard;
  if (k == "cp") return LayerKind::CP;
  if (k == "rcp") return LayerKind::RCP;
  if (k == "tk" || k == "tucker") return LayerKind::TK;
  if (k == "rtk") return LayerKind::RTK;
  if (k == "tt") return LayerKind::TT;
  if (k == "rtt") return LayerKind::RTT;
  if (k == "tr") return LayerKind::TR;
  if (k == "rtr") return LayerKind::RTR;
  if (k == "bt") return LayerKind::BT;
  if (k == "ht") return LayerKind::HT;
  if (k == "interleavedgroup" || k == "interleaved") return LayerKind::InterleavedGroup;
  if (k == "separabledepthwise" || k == "separable") return LayerKind::SeparableDepthwise;
  throw std::invalid_argument("unknown layer kind: " + std::string(s));
}

std::vector<LayerKind> all_layer_kinds() {
  return {LayerKind::Standard, LayerKind::CP, LayerKind::RCP, LayerKind::TK, LayerKind::RTK,
          LayerKind::TT, LayerKind::RTT, LayerKind::TR, LayerKind::RTR, LayerKind::BT,
          LayerKind::HT, LayerKind::InterleavedGroup, LayerKind::SeparableDepthwise};
}

int64_t LayerSpec::t_total() const {
  int64_t t = 1;
  for (int64_t f : t_factors) t *= f;
  return t;
}

int64_t LayerSpec::s_total() const {
  int64_t s = 1;
  for (int64_t f : s_factors) s *= f;
  return s;
}

std::size_t rank_slot_count(LayerKind kind, int m) {
  switch (kind) {
    case LayerKind::Standard:
    case LayerKind::InterleavedGroup:
    case LayerKind::SeparableDepthwise: return 0;
    case LayerKind::CP:
    case LayerKind::RCP: return 1;
    case LayerKind::TK: return 2;
    case LayerKind::RTK: return static_cast<std::size_t>(m) + 1;
    case LayerKind::TT: return 3;
    case LayerKind::RTT: return static_cast<std::size_t>(m);
    case LayerKind::TR: return 4;
    case LayerKind::RTR: return static_cast<std::size_t>(m) + 1;
    case LayerKind::BT: return static_cast<std::size_t>(m) + 2;
    case LayerKind::HT: return 6;
  }
  return 0;
}

void validate(const LayerSpec& layer) {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("layer: " + msg); };
  if (layer.t_factors.empty() || layer.s_factors.empty()) fail("channel factors must be non-empty");
  for (int64_t f : layer.t_factors)
    if (f < 1) fail("channel factors must be positive");
  for (int64_t f : layer.s_factors)
    if (f < 1) fail("channel factors must be positive");
  if (layer.filter_h < 1 || layer.filter_w < 1 || layer.feature_h < 1 || layer.feature_w < 1 ||
      layer.batch < 1)
    fail("dimensions must be positive");
  for (int64_t r : layer.ranks)
    if (r < 1) fail("ranks must be positive");

  const bool reshaped = layer.kind == LayerKind::RCP || layer.kind == LayerKind::RTK ||
                        layer.kind == LayerKind::RTT || layer.kind == LayerKind::RTR ||
                        layer.kind == LayerKind::BT || layer.kind == LayerKind::HT;
  if (reshaped) {
    if (layer.t_factors.size() != layer.s_factors.size())
      fail("reshaped kinds need matching T/S factor counts");
  } else if (layer.kind == LayerKind::InterleavedGroup) {
    if (layer.t_factors.size() != 2 || layer.s_factors.size() != 2)
      fail("interleaved-group needs T = N*T' and S = M*S' (two factors each)");
  } else {
    if (layer.t_factors.size() != 1 || layer.s_factors.size() != 1)
      fail(std::string(to_string(layer.kind)) + " takes unfactored channels");
  }
  if (layer.kind == LayerKind::HT && layer.order() != 3) fail("ht is defined for M = 3");
  if (layer.kind == LayerKind::SeparableDepthwise && layer.t_total() != layer.s_total())
    fail("separable-depthwise requires T == S");

  const std::size_t want = rank_slot_count(layer.kind, layer.order());
  if (layer.ranks.size() != want)
    fail(std::string(to_string(layer.kind)) + " expects " + std::to_string(want) + " rank(s), got " +
         std::to_string(layer.ranks.size()));
}

namespace {

std::string paren(const std::string& base, int i) { return "(" + base + std::to_string(i) + ")"; }

struct Builder {
  std::string expr;
  std::vector<std::vector<int64_t>> dims;
  std::vector<std::string> names;
  bool first = true;

  void add(const std::string& name, const std::string& subs, std::vector<int64_t> d) {
    if (!first) expr += ",";
    first = false;
    expr += subs;
    dims.push_back(std::move(d));
    names.push_back(name);
  }
  void finish(const std::string& output, const std::string& convs) {
    expr += "->" + output;
    if (!convs.empty()) expr += "|" + convs;
  }
};

}  // namespace

LayerExpression expression(const LayerSpec& layer) {
  validate(layer);
  const int m = layer.order();
  const int64_t T = layer.t_total();
  const int64_t S = layer.s_total();
  const int64_t H = layer.filter_h, W = layer.filter_w;
  const int64_t Hp = layer.feature_h, Wp = layer.feature_w;
  const int64_t B = layer.batch;
  const auto& R = layer.ranks;

  Builder b;

  // Reshaped input "b(s1)..(sM)hw" and output "b(t1)..(tM)hw".
  auto reshaped_x = [&] {
    std::string subs = "b";
    std::vector<int64_t> d = {B};
    for (int i = 1; i <= m; ++i) {
      subs += paren("s", i);
      d.push_back(layer.s_factors[static_cast<std::size_t>(i - 1)]);
    }
    subs += "hw";
    d.push_back(Hp);
    d.push_back(Wp);
    b.add("X", subs, std::move(d));
  };
  auto reshaped_out = [&] {
    std::string subs = "b";
    for (int i = 1; i <= m; ++i) subs += paren("t", i);
    return subs + "hw";
  };

  switch (layer.kind) {
    case LayerKind::Standard:
      b.add("X", "bshw", {B, S, Hp, Wp});
      b.add("W", "tshw", {T, S, H, W});
      b.finish("bthw", "hw");
      break;
    case LayerKind::CP:
      b.add("X", "bshw", {B, S, Hp, Wp});
      b.add("W1", "rt", {R[0], T});
      b.add("W2", "rs", {R[0], S});
      b.add("W3", "rh", {R[0], H});
      b.add("W4", "rw", {R[0], W});
      b.finish("bthw", "hw");
      break;
    case LayerKind::RCP: {
      reshaped_x();
      for (int i = 1; i <= m; ++i)
        b.add("W" + std::to_string(i), "r" + paren("t", i) + paren("s", i),
              {R[0], layer.t_factors[static_cast<std::size_t>(i - 1)],
               layer.s_factors[static_cast<std::size_t>(i - 1)]});
      b.add("W0", "rhw", {R[0], H, W});
      b.finish(reshaped_out(), "hw");
      break;
    }
    case LayerKind::TK:
      b.add("X", "bshw", {B, S, Hp, Wp});
      b.add("W1", "(r1)t", {R[0], T});
      b.add("W2", "(r2)s", {R[1], S});
      b.add("W0", "(r1)(r2)hw", {R[0], R[1], H, W});
      b.finish("bthw", "hw");
      break;
    case LayerKind::RTK: {
      reshaped_x();
      for (int i = 1; i <= m; ++i)
        b.add("W" + std::to_string(i), paren("r", i) + paren("t", i) + paren("s", i),
              {R[static_cast<std::size_t>(i)], layer.t_factors[static_cast<std::size_t>(i - 1)],
               layer.s_factors[static_cast<std::size_t>(i - 1)]});
      b.add("W0", "(r0)hw", {R[0], H, W});
      std::string core = "(r0)";
      std::vector<int64_t> core_dims = {R[0]};
      for (int i = 1; i <= m; ++i) {
        core += paren("r", i);
        core_dims.push_back(R[static_cast<std::size_t>(i)]);
      }
      b.add("C", core, std::move(core_dims));
      b.finish(reshaped_out(), "hw");
      break;
    }
    case LayerKind::TT:
      b.add("X", "bshw", {B, S, Hp, Wp});
      b.add("W1", "(r1)t", {R[0], T});
      b.add("W2", "(r1)(r2)h", {R[0], R[1], H});
      b.add("W3", "(r2)(r3)w", {R[1], R[2], W});
      b.add("W4", "(r3)s", {R[2], S});
      b.finish("bthw", "hw");
      break;
    case LayerKind::RTT: {
      reshaped_x();
      for (int i = 1; i <= m; ++i) {
        std::string subs;
        std::vector<int64_t> d;
        if (i == 1) {
          subs = "(r1)";
          d = {R[0]};
        } else {
          subs = paren("r", i - 1) + paren("r", i);
          d = {R[static_cast<std::size_t>(i - 2)], R[static_cast<std::size_t>(i - 1)]};
        }
        subs += paren("t", i) + paren("s", i);
        d.push_back(layer.t_factors[static_cast<std::size_t>(i - 1)]);
        d.push_back(layer.s_factors[static_cast<std::size_t>(i - 1)]);
        b.add("W" + std::to_string(i), subs, std::move(d));
      }
      b.add("W0", paren("r", m) + "hw", {R[static_cast<std::size_t>(m - 1)], H, W});
      b.finish(reshaped_out(), "hw");
      break;
    }
    case LayerKind::TR:
      b.add("X", "bshw", {B, S, Hp, Wp});
      b.add("W1", "(r0)(r1)t", {R[0], R[1], T});
      b.add("W2", "(r1)(r2)h", {R[1], R[2], H});
      b.add("W3", "(r2)(r3)w", {R[2], R[3], W});
      b.add("W4", "(r3)(r0)s", {R[3], R[0], S});
      b.finish("bthw", "hw");
      break;
    case LayerKind::RTR: {
      reshaped_x();
      for (int i = 1; i <= m; ++i)
        b.add("W" + std::to_string(i), paren("r", i - 1) + paren("r", i) + paren("t", i) + paren("s", i),
              {R[static_cast<std::size_t>(i - 1)], R[static_cast<std::size_t>(i)],
               layer.t_factors[static_cast<std::size_t>(i - 1)],
               layer.s_factors[static_cast<std::size_t>(i - 1)]});
      b.add("W0", paren("r", m) + "(r0)hw", {R[static_cast<std::size_t>(m)], R[0], H, W});
      b.finish(reshaped_out(), "hw");
      break;
    }
    case LayerKind::BT: {
      reshaped_x();
      for (int i = 1; i <= m; ++i)
        b.add("W" + std::to_string(i), "r" + paren("r", i) + paren("t", i) + paren("s", i),
              {R[0], R[static_cast<std::size_t>(i)], layer.t_factors[static_cast<std::size_t>(i - 1)],
               layer.s_factors[static_cast<std::size_t>(i - 1)]});
      b.add("W0", "r(r0)hw", {R[0], R[static_cast<std::size_t>(m + 1)], H, W});
      std::string core = "r";
      std::vector<int64_t> core_dims = {R[0]};
      for (int i = 1; i <= m; ++i) {
        core += paren("r", i);
        core_dims.push_back(R[static_cast<std::size_t>(i)]);
      }
      core += "(r0)";
      core_dims.push_back(R[static_cast<std::size_t>(m + 1)]);
      b.add("C", core, std::move(core_dims));
      b.finish(reshaped_out(), "hw");
      break;
    }
    case LayerKind::HT:
      reshaped_x();
      for (int i = 1; i <= 3; ++i)
        b.add("W" + std::to_string(i), paren("r", i) + paren("t", i) + paren("s", i),
              {R[static_cast<std::size_t>(i)], layer.t_factors[static_cast<std::size_t>(i - 1)],
               layer.s_factors[static_cast<std::size_t>(i - 1)]});
      b.add("W0", "(r0)hw", {R[0], H, W});
      b.add("C1", "(r1)(r2)(r4)", {R[1], R[2], R[4]});
      b.add("C2", "(r3)(r0)(r5)", {R[3], R[0], R[5]});
      b.add("C3", "(r4)(r5)", {R[4], R[5]});
      b.finish(reshaped_out(), "hw");
      break;
    case LayerKind::InterleavedGroup: {
      const int64_t N = layer.t_factors[0], Tp = layer.t_factors[1];
      const int64_t M = layer.s_factors[0], Sp = layer.s_factors[1];
      b.add("X", "bmshw", {B, M, Sp, Hp, Wp});
      b.add("W1", "nmhw", {N, M, H, W});
      b.add("W2", "tshw", {Tp, Sp, H, W});
      b.finish("bnthw", "hw");
      break;
    }
    case LayerKind::SeparableDepthwise:
      b.add("X", "bshw", {B, S, Hp, Wp});
      b.add("W1", "sh", {S, H});
      b.add("W2", "sw", {S, W});
      b.finish("bshw", "hw");
      break;
  }

  LayerExpression out;
  out.spec = parse(b.expr);
  out.env = make_shape_env(out.spec, std::move(b.dims));
  out.tensor_names = std::move(b.names);
  return out;
}

u128 param_count(const LayerSpec& layer) {
  validate(layer);
  const auto ex = expression(layer);
  u128 total = 0;
  for (std::size_t i = 1; i < ex.env.dims.size(); ++i) {  // skip the input X
    u128 n = 1;
    for (int64_t d : ex.env.dims[i]) n = checked_mul(n, static_cast<u128>(d));
    total = checked_add(total, n);
  }
  return total;
}

int64_t rank_for_compression(const LayerSpec& layer, double cr) {
  if (!(cr > 0.0 && cr <= 1.0)) throw std::invalid_argument("compression rate must be in (0, 1]");
  const std::size_t slots = rank_slot_count(layer.kind, layer.order());
  if (slots == 0)
    throw std::invalid_argument(std::string(to_string(layer.kind)) + " has no rank to solve");

  LayerSpec probe = layer;
  auto params_at = [&](int64_t r) {
    probe.ranks.assign(slots, r);
    return param_count(probe);
  };
  const u128 budget = static_cast<u128>(
      cr * static_cast<double>(layer.t_total() * layer.s_total() * layer.filter_h * layer.filter_w));

  if (params_at(1) > budget) return 1;
  int64_t lo = 1, hi = 2;
  while (params_at(hi) <= budget) {
    lo = hi;
    hi *= 2;
  }
  while (lo + 1 < hi) {
    const int64_t mid = lo + (hi - lo) / 2;
    (params_at(mid) <= budget ? lo : hi) = mid;
  }
  return lo;
}

LayerSpec with_compression_rank(LayerSpec layer, double cr) {
  const int64_t r = rank_for_compression(layer, cr);
  layer.ranks.assign(rank_slot_count(layer.kind, layer.order()), r);
  return layer;
}

EvaluationPlan theorem_reduced_plan(const LayerSpec& layer, CostMode cost_mode) {
  if (layer.kind != LayerKind::RCP && layer.kind != LayerKind::RTK)
    throw std::invalid_argument("theorem_reduced_plan applies to rcp and rtk layers");
  const auto ex = expression(layer);
  const int m = layer.order();
  const int n = static_cast<int>(ex.spec.inputs.size());

  // Inputs: X=0, W1..WM = 1..M, W0 = M+1 (, C = M+2 for RTK).
  std::vector<std::pair<int, int>> joins;
  int cur = 1;
  for (int i = 2; i <= m; ++i) {
    joins.push_back({cur, i});
    cur = n + static_cast<int>(joins.size()) - 1;
  }
  if (layer.kind == LayerKind::RTK) {
    joins.push_back({cur, m + 2});  // absorb the core, contracting r1..rM
    cur = n + static_cast<int>(joins.size()) - 1;
  }
  joins.push_back({cur, m + 1});  // contract with W0: the rebuilt kernel
  cur = n + static_cast<int>(joins.size()) - 1;
  joins.push_back({cur, 0});  // single convolution with the input

  return plan_from_joins(ex.spec, ex.env, resolve_conv_modes(ex.spec, ConvMode::Same), cost_mode,
                         joins);
}

std::vector<std::pair<std::string, LayerSpec>> resnet34_cp_blocks(int64_t batch, double cr) {
  struct Cfg {
    const char* name;
    int64_t s, t, k, feat;
  };
  // First 3x3 convolution of each stage at its input resolution.
  const Cfg cfgs[] = {
      {"conv1", 3, 64, 7, 112}, {"conv2_x", 64, 64, 3, 56},   {"conv3_x", 128, 128, 3, 28},
      {"conv4_x", 256, 256, 3, 14}, {"conv5_x", 512, 512, 3, 7},
  };
  std::vector<std::pair<std::string, LayerSpec>> blocks;
  for (const auto& c : cfgs) {
    LayerSpec layer;
    layer.kind = LayerKind::CP;
    layer.t_factors = {c.t};
    layer.s_factors = {c.s};
    layer.filter_h = layer.filter_w = c.k;
    layer.feature_h = layer.feature_w = c.feat;
    layer.batch = batch;
    layer.ranks = {rank_for_compression(layer, cr)};
    blocks.emplace_back(c.name, std::move(layer));
  }
  return blocks;
}

std::string layer_to_json(const LayerSpec& layer) {
  nlohmann::json j;
  j["kind"] = to_string(layer.kind);
  j["T"] = layer.t_factors;
  j["S"] = layer.s_factors;
  j["H"] = layer.filter_h;
  j["W"] = layer.filter_w;
  j["Hp"] = layer.feature_h;
  j["Wp"] = layer.feature_w;
  j["B"] = layer.batch;
  if (layer.ranks.size() == 1)
    j["rank"] = layer.ranks[0];
  else if (!layer.ranks.empty())
    j["rank"] = layer.ranks;
  return j.dump();
}

LayerSpec layer_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  LayerSpec layer;
  layer.kind = layer_kind_from_string(j.at("kind").get<std::string>());

  auto int_list = [](const nlohmann::json& v) -> std::vector<int64_t> {
    if (v.is_array()) return v.get<std::vector<int64_t>>();
    return {v.get<int64_t>()};
  };
  layer.t_factors = int_list(j.at("T"));
  layer.s_factors = int_list(j.at("S"));
  layer.filter_h = j.at("H").get<int64_t>();
  layer.filter_w = j.at("W").get<int64_t>();
  layer.feature_h = j.at("Hp").get<int64_t>();
  layer.feature_w = j.at("Wp").get<int64_t>();
  layer.batch = j.value("B", int64_t{1});

  const std::size_t slots = rank_slot_count(layer.kind, layer.order());
  if (j.contains("rank")) {
    auto ranks = int_list(j.at("rank"));
    if (ranks.size() == 1 && slots > 1) ranks.assign(slots, ranks[0]);
    layer.ranks = std::move(ranks);
  }
  validate(layer);
  return layer;
}

}  // namespace convexpr
