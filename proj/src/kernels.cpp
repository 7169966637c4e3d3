#include "convexpr/kernels.hpp"

#include <algorithm>
#include <cassert>

namespace convexpr {

const char* to_string(ConvMode m) {
  switch (m) {
    case ConvMode::Full: return "full";
    case ConvMode::Same: return "same";
    case ConvMode::Valid: return "valid";
    case ConvMode::Circular: return "circular";
  }
  return "?";
}

ConvMode conv_mode_from_string(std::string_view s) {
  if (s == "full") return ConvMode::Full;
  if (s == "same") return ConvMode::Same;
  if (s == "valid") return ConvMode::Valid;
  if (s == "circular") return ConvMode::Circular;
  throw std::invalid_argument("unknown conv mode: " + std::string(s));
}

int64_t conv_output_dim(ConvMode mode, int64_t feature, int64_t filter) {
  switch (mode) {
    case ConvMode::Full: return feature + filter - 1;
    case ConvMode::Same: return feature;
    case ConvMode::Valid:
      if (feature < filter) throw ShapeError("valid convolution requires feature >= filter");
      return feature - filter + 1;
    case ConvMode::Circular: return feature;
  }
  return 0;
}

ConvModeMap resolve_conv_modes(const ExpressionSpec& spec, ConvMode requested) {
  ConvModeMap modes;
  for (const auto& a : spec.conv_atoms)
    modes[a] = spec.occurrence_count(a) >= 3 ? ConvMode::Circular : requested;
  return modes;
}

namespace {

int find_axis(const Subscripts& subs, const Atom& a) {
  auto it = std::find(subs.begin(), subs.end(), a);
  return it == subs.end() ? -1 : static_cast<int>(it - subs.begin());
}

int64_t same_offset(int64_t filter) { return (filter - 1) / 2; }

}  // namespace

PairwiseOp make_pairwise_op(const Subscripts& left, const std::vector<int64_t>& left_dims,
                            const Subscripts& right, const std::vector<int64_t>& right_dims,
                            const std::set<Atom>& keep, const ConvModeMap& conv_modes,
                            const std::optional<Subscripts>& result_order) {
  if (left.size() != left_dims.size() || right.size() != right_dims.size())
    throw ShapeError("pairwise op: subscript/dimension length mismatch");

  PairwiseOp op;
  op.left = left;
  op.right = right;
  op.left_dims = left_dims;
  op.right_dims = right_dims;

  std::map<Atom, int64_t> result_dim_of;

  auto classify_one = [&](const Atom& a, int li, int ri) {
    const bool kept = keep.count(a) > 0;
    if (li >= 0 && ri >= 0) {
      auto mode_it = conv_modes.find(a);
      if (mode_it != conv_modes.end()) {
        ConvAxis ax;
        ax.atom = a;
        ax.mode = mode_it->second;
        ax.feature_on_left = left_dims[li] >= right_dims[ri];
        ax.feature_dim = std::max(left_dims[li], right_dims[ri]);
        ax.filter_dim = std::min(left_dims[li], right_dims[ri]);
        ax.output_dim = conv_output_dim(ax.mode, ax.feature_dim, ax.filter_dim);
        op.conv_axes.push_back(ax);
        result_dim_of[a] = ax.output_dim;
        return;
      }
      if (left_dims[li] != right_dims[ri])
        throw ShapeError("atom '" + a.name + "' has mismatched dimensions " +
                         std::to_string(left_dims[li]) + " vs " + std::to_string(right_dims[ri]));
      if (kept) {
        op.batch_atoms.push_back(a);
        op.batch_dims.push_back(left_dims[li]);
        result_dim_of[a] = left_dims[li];
      } else {
        op.contraction_atoms.push_back(a);
        op.contraction_dims.push_back(left_dims[li]);
      }
      return;
    }
    if (li >= 0) {
      if (kept) {
        op.left_free.push_back(a);
        op.left_free_dims.push_back(left_dims[li]);
        result_dim_of[a] = left_dims[li];
      } else {
        op.left_self.push_back(a);
      }
    } else {
      if (kept) {
        op.right_free.push_back(a);
        op.right_free_dims.push_back(right_dims[ri]);
        result_dim_of[a] = right_dims[ri];
      } else {
        op.right_self.push_back(a);
      }
    }
  };

  // Left-subscript order drives the shared/conv canonical order.
  for (std::size_t i = 0; i < left.size(); ++i)
    classify_one(left[i], static_cast<int>(i), find_axis(right, left[i]));
  for (std::size_t j = 0; j < right.size(); ++j)
    if (find_axis(left, right[j]) < 0) classify_one(right[j], -1, static_cast<int>(j));

  if (result_order) {
    op.result = *result_order;
    if (op.result.size() != result_dim_of.size())
      throw ShapeError("pairwise op: result order does not match kept atoms");
  } else {
    for (const auto& a : left)
      if (result_dim_of.count(a)) op.result.push_back(a);
    for (const auto& a : right)
      if (result_dim_of.count(a) && find_axis(left, a) < 0) op.result.push_back(a);
  }
  for (const auto& a : op.result) {
    auto it = result_dim_of.find(a);
    if (it == result_dim_of.end())
      throw ShapeError("pairwise op: result atom '" + a.name + "' is not kept by this node");
    op.result_dims.push_back(it->second);
  }
  return op;
}

std::pair<DenseTensor, Subscripts> sum_unique_modes(const DenseTensor& t, const Subscripts& subs,
                                                    const std::set<Atom>& keep) {
  if (static_cast<std::size_t>(t.rank()) != subs.size())
    throw ShapeError("sum_unique_modes: rank/subscript mismatch");
  for (const auto& a : keep)
    if (find_axis(subs, a) < 0)
      throw ShapeError("sum_unique_modes: keep atom '" + a.name + "' absent from subscripts");

  std::vector<int> kept_axes;
  Subscripts kept_subs;
  for (std::size_t i = 0; i < subs.size(); ++i)
    if (keep.count(subs[i])) {
      kept_axes.push_back(static_cast<int>(i));
      kept_subs.push_back(subs[i]);
    }
  if (kept_axes.size() == subs.size()) return {t, subs};

  std::vector<int64_t> out_shape;
  for (int ax : kept_axes) out_shape.push_back(t.shape[static_cast<std::size_t>(ax)]);
  DenseTensor out(out_shape);

  const auto out_strides = strides_of(out.shape);
  const int r = t.rank();
  std::vector<int64_t> idx(static_cast<std::size_t>(r), 0);
  std::vector<int64_t> out_stride_of_axis(static_cast<std::size_t>(r), 0);
  for (std::size_t k = 0; k < kept_axes.size(); ++k)
    out_stride_of_axis[static_cast<std::size_t>(kept_axes[k])] = out_strides[k];

  int64_t out_pos = 0;
  const int64_t total = t.size();
  for (int64_t flat = 0; flat < total; ++flat) {
    out.data[static_cast<std::size_t>(out_pos)] += t.data[static_cast<std::size_t>(flat)];
    for (int ax = r - 1; ax >= 0; --ax) {
      auto a = static_cast<std::size_t>(ax);
      if (++idx[a] < t.shape[a]) {
        out_pos += out_stride_of_axis[a];
        break;
      }
      out_pos -= out_stride_of_axis[a] * (t.shape[a] - 1);
      idx[a] = 0;
    }
  }
  return {std::move(out), std::move(kept_subs)};
}

namespace {

Atom compound_name(const Subscripts& members) {
  std::string name;
  for (const auto& m : members) name += m.name;
  return Atom{name};
}

// Permutes the named atoms to the front in `order` and reshapes each
// listed group into a single compound axis. Shared by the public
// merge_like_modes and the pairwise pipeline.
std::tuple<DenseTensor, Subscripts, MergeRecord> merge_groups(
    const DenseTensor& t, const Subscripts& subs,
    const std::vector<std::pair<AtomClass, Subscripts>>& groups) {
  std::vector<int64_t> order;
  for (const auto& [cls, members] : groups)
    for (const auto& a : members) {
      int ax = find_axis(subs, a);
      if (ax < 0) throw ShapeError("merge: atom '" + a.name + "' absent from subscripts");
      order.push_back(ax);
    }
  if (order.size() != subs.size()) throw ShapeError("merge: groups must cover every axis");

  DenseTensor arranged = permute(t, order);

  std::vector<int64_t> merged_shape;
  Subscripts merged_subs;
  MergeRecord record;
  std::size_t pos = 0;
  for (const auto& [cls, members] : groups) {
    if (members.empty()) continue;
    MergeGroup g;
    g.cls = cls;
    g.members = members;
    int64_t dim = 1;
    for (std::size_t k = 0; k < members.size(); ++k, ++pos) {
      g.member_dims.push_back(arranged.shape[pos]);
      dim *= arranged.shape[pos];
    }
    if (members.size() == 1 || cls == AtomClass::Convolution) {
      // conv axes are never merged; singletons keep their own name
      for (std::size_t k = 0; k < members.size(); ++k) {
        merged_shape.push_back(g.member_dims[k]);
        merged_subs.push_back(members[k]);
      }
      continue;
    }
    g.compound = compound_name(members);
    merged_shape.push_back(dim);
    merged_subs.push_back(g.compound);
    record.groups.push_back(std::move(g));
  }
  return {reshape(arranged, merged_shape), std::move(merged_subs), std::move(record)};
}

}  // namespace

std::tuple<DenseTensor, Subscripts, MergeRecord> merge_like_modes(
    const DenseTensor& t, const Subscripts& subs, const std::map<Atom, AtomClass>& classes) {
  std::vector<std::pair<AtomClass, Subscripts>> groups(4);
  groups[0].first = AtomClass::BatchProduct;
  groups[1].first = AtomClass::Contraction;
  groups[2].first = AtomClass::Free;
  groups[3].first = AtomClass::Convolution;
  for (const auto& a : subs) {
    auto it = classes.find(a);
    if (it == classes.end()) throw ShapeError("merge: atom '" + a.name + "' has no class");
    switch (it->second) {
      case AtomClass::BatchProduct: groups[0].second.push_back(a); break;
      case AtomClass::Contraction:
      case AtomClass::SelfContraction: groups[1].second.push_back(a); break;
      case AtomClass::Free: groups[2].second.push_back(a); break;
      case AtomClass::Convolution: groups[3].second.push_back(a); break;
    }
  }
  return merge_groups(t, subs, groups);
}

std::pair<DenseTensor, Subscripts> unmerge_modes(const DenseTensor& t, const Subscripts& subs,
                                                 const MergeRecord& record) {
  std::vector<int64_t> shape;
  Subscripts out_subs;
  for (std::size_t i = 0; i < subs.size(); ++i) {
    const MergeGroup* g = nullptr;
    for (const auto& cand : record.groups)
      if (cand.compound == subs[i]) g = &cand;
    if (!g) {
      shape.push_back(t.shape[i]);
      out_subs.push_back(subs[i]);
      continue;
    }
    for (std::size_t k = 0; k < g->members.size(); ++k) {
      shape.push_back(g->member_dims[k]);
      out_subs.push_back(g->members[k]);
    }
  }
  return {reshape(t, shape), std::move(out_subs)};
}

namespace {

struct CoreAxis {
  ConvMode mode;
  bool feature_on_left;
  int64_t feature, filter, out, offset;  // offset: Same-mode crop shift
};

// Feature index for output position n and filter position k; -1 if the
// term falls outside the feature (Full/Same boundaries).
inline int64_t feature_index(const CoreAxis& ax, int64_t n, int64_t k) {
  switch (ax.mode) {
    case ConvMode::Full: {
      int64_t x = n - k;
      return (x >= 0 && x < ax.feature) ? x : -1;
    }
    case ConvMode::Same: {
      int64_t x = n + ax.offset - k;
      return (x >= 0 && x < ax.feature) ? x : -1;
    }
    case ConvMode::Valid: return n + k;
    case ConvMode::Circular: {
      int64_t x = (n - k) % ax.feature;
      return x < 0 ? x + ax.feature : x;
    }
  }
  return -1;
}

// left  [G, S, FL, left-conv dims...]   (feature or filter per axis)
// right [G, S, FR, right-conv dims...]
// out   [G, FL, FR, out-conv dims...]
DenseTensor grouped_conv_core(const DenseTensor& left, const DenseTensor& right, int64_t G,
                              int64_t S, int64_t FL, int64_t FR,
                              const std::vector<CoreAxis>& axes) {
  const int c = static_cast<int>(axes.size());
  std::vector<int64_t> ldims(static_cast<std::size_t>(c)), rdims(static_cast<std::size_t>(c)),
      odims(static_cast<std::size_t>(c));
  for (int i = 0; i < c; ++i) {
    const auto& ax = axes[static_cast<std::size_t>(i)];
    ldims[static_cast<std::size_t>(i)] = ax.feature_on_left ? ax.feature : ax.filter;
    rdims[static_cast<std::size_t>(i)] = ax.feature_on_left ? ax.filter : ax.feature;
    odims[static_cast<std::size_t>(i)] = ax.out;
  }
  const auto lstr = strides_of(ldims);
  const auto rstr = strides_of(rdims);
  const int64_t LC = element_count(ldims);
  const int64_t RC = element_count(rdims);
  const int64_t OC = element_count(odims);

  std::vector<int64_t> out_shape = {G, FL, FR};
  out_shape.insert(out_shape.end(), odims.begin(), odims.end());
  DenseTensor out(out_shape);

  const double* ld = left.data.data();
  const double* rd = right.data.data();
  double* od = out.data.data();
  const int64_t total = G * FL * FR * OC;

#pragma omp parallel for schedule(static)
  for (int64_t flat = 0; flat < total; ++flat) {
    int64_t rest = flat;
    const int64_t oc = rest % OC;
    rest /= OC;
    const int64_t fr = rest % FR;
    rest /= FR;
    const int64_t fl = rest % FL;
    const int64_t g = rest / FL;

    int64_t n[16];
    int64_t tmp = oc;
    for (int i = c - 1; i >= 0; --i) {
      n[i] = tmp % odims[static_cast<std::size_t>(i)];
      tmp /= odims[static_cast<std::size_t>(i)];
    }

    double acc = 0.0;
    for (int64_t s = 0; s < S; ++s) {
      const double* lbase = ld + ((g * S + s) * FL + fl) * LC;
      const double* rbase = rd + ((g * S + s) * FR + fr) * RC;
      if (c == 0) {
        acc += lbase[0] * rbase[0];
        continue;
      }
      // odometer over filter positions of every conv axis
      int64_t k[16] = {0};
      while (true) {
        int64_t loff = 0, roff = 0;
        bool valid = true;
        for (int i = 0; i < c; ++i) {
          const auto& ax = axes[static_cast<std::size_t>(i)];
          const int64_t x = feature_index(ax, n[i], k[i]);
          if (x < 0) {
            valid = false;
            break;
          }
          loff += (ax.feature_on_left ? x : k[i]) * lstr[static_cast<std::size_t>(i)];
          roff += (ax.feature_on_left ? k[i] : x) * rstr[static_cast<std::size_t>(i)];
        }
        if (valid) acc += lbase[loff] * rbase[roff];
        int i = c - 1;
        for (; i >= 0; --i) {
          if (++k[i] < axes[static_cast<std::size_t>(i)].filter) break;
          k[i] = 0;
        }
        if (i < 0) break;
      }
    }
    od[flat] = acc;
  }
  return out;
}

// Permute+merge one operand into the core layout [G, S, F, conv...].
DenseTensor canonicalize_operand(const DenseTensor& t, const Subscripts& subs,
                                 const PairwiseOp& op, bool is_left) {
  const Subscripts& free_atoms = is_left ? op.left_free : op.right_free;
  std::vector<int64_t> order;
  auto push_axes = [&](const Subscripts& atoms) {
    for (const auto& a : atoms) order.push_back(find_axis(subs, a));
  };
  push_axes(op.batch_atoms);
  push_axes(op.contraction_atoms);
  push_axes(free_atoms);
  for (const auto& ax : op.conv_axes) order.push_back(find_axis(subs, ax.atom));

  DenseTensor arranged = permute(t, order);
  std::vector<int64_t> shape = {element_count(op.batch_dims), element_count(op.contraction_dims),
                                is_left ? element_count(op.left_free_dims)
                                        : element_count(op.right_free_dims)};
  for (const auto& ax : op.conv_axes)
    shape.push_back((ax.feature_on_left == is_left) ? ax.feature_dim : ax.filter_dim);
  return reshape(arranged, shape);
}

}  // namespace

DenseTensor pairwise_eval(const DenseTensor& a, const DenseTensor& b, const PairwiseOp& op) {
  if (a.shape != op.left_dims || b.shape != op.right_dims)
    throw ShapeError("pairwise_eval: operand shapes do not match op");
  if (op.conv_axes.size() > 16) throw ShapeError("pairwise_eval: too many conv axes");

  // (1) self-contraction preprocessing
  std::set<Atom> keep_l(op.left.begin(), op.left.end());
  for (const auto& s : op.left_self) keep_l.erase(s);
  std::set<Atom> keep_r(op.right.begin(), op.right.end());
  for (const auto& s : op.right_self) keep_r.erase(s);
  auto [lt, lsubs] = sum_unique_modes(a, op.left, keep_l);
  auto [rt, rsubs] = sum_unique_modes(b, op.right, keep_r);

  // (2) merge like modes into the canonical grouped layout
  DenseTensor lc = canonicalize_operand(lt, lsubs, op, true);
  DenseTensor rc = canonicalize_operand(rt, rsubs, op, false);

  // (3) grouped direct convolution core
  std::vector<CoreAxis> axes;
  for (const auto& ax : op.conv_axes)
    axes.push_back({ax.mode, ax.feature_on_left, ax.feature_dim, ax.filter_dim, ax.output_dim,
                    ax.mode == ConvMode::Same ? same_offset(ax.filter_dim) : 0});
  DenseTensor core = grouped_conv_core(lc, rc, lc.shape[0], lc.shape[1], lc.shape[2], rc.shape[2], axes);

  // (4) unmerge compound axes and restore the result subscript order
  std::vector<int64_t> unmerged_shape;
  Subscripts unmerged_subs;
  auto append = [&](const Subscripts& atoms, const std::vector<int64_t>& dims) {
    for (std::size_t i = 0; i < atoms.size(); ++i) {
      unmerged_subs.push_back(atoms[i]);
      unmerged_shape.push_back(dims[i]);
    }
  };
  append(op.batch_atoms, op.batch_dims);
  append(op.left_free, op.left_free_dims);
  append(op.right_free, op.right_free_dims);
  for (const auto& ax : op.conv_axes) {
    unmerged_subs.push_back(ax.atom);
    unmerged_shape.push_back(ax.output_dim);
  }
  DenseTensor unmerged = reshape(core, unmerged_shape);

  std::vector<int64_t> order;
  for (const auto& a2 : op.result) order.push_back(find_axis(unmerged_subs, a2));
  return permute(unmerged, order);
}

u128 flops_actual(const PairwiseOp& op) {
  u128 f = 1;
  for (int64_t d : op.batch_dims) f = checked_mul(f, static_cast<u128>(d));
  for (int64_t d : op.contraction_dims) f = checked_mul(f, static_cast<u128>(d));
  for (int64_t d : op.left_free_dims) f = checked_mul(f, static_cast<u128>(d));
  for (int64_t d : op.right_free_dims) f = checked_mul(f, static_cast<u128>(d));
  for (const auto& ax : op.conv_axes) {
    u128 pairs = 0;
    switch (ax.mode) {
      case ConvMode::Full:
      case ConvMode::Circular:
        pairs = checked_mul(static_cast<u128>(ax.feature_dim), static_cast<u128>(ax.filter_dim));
        break;
      case ConvMode::Valid:
        pairs = checked_mul(static_cast<u128>(ax.feature_dim - ax.filter_dim + 1),
                            static_cast<u128>(ax.filter_dim));
        break;
      case ConvMode::Same: {
        const int64_t off = same_offset(ax.filter_dim);
        int64_t count = 0;
        for (int64_t nn = 0; nn < ax.output_dim; ++nn) {
          const int64_t m = nn + off;
          const int64_t klo = std::max<int64_t>(0, m - ax.feature_dim + 1);
          const int64_t khi = std::min<int64_t>(ax.filter_dim - 1, m);
          if (khi >= klo) count += khi - klo + 1;
        }
        pairs = static_cast<u128>(count);
        break;
      }
    }
    f = checked_mul(f, pairs);
  }
  return f;
}

}  // namespace convexpr
