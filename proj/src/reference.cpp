#include "convexpr/reference.hpp"

#include <algorithm>

namespace convexpr::reference {

namespace {

struct Occurrence {
  int input;
  int axis;
  int64_t dim;
};

// One conv atom across the whole expression: the occurrence with the
// largest dimension (lowest input index on ties) is the feature, all
// others are filters whose positions are summed over.
struct ConvGroup {
  Atom atom;
  ConvMode mode;
  Occurrence feature;
  std::vector<Occurrence> filters;
  int64_t out_dim;
  int64_t offset;  // Same-mode crop shift
};

std::vector<Occurrence> occurrences_of(const ExpressionSpec& spec, const ShapeEnv& env,
                                       const Atom& a) {
  std::vector<Occurrence> occ;
  for (std::size_t i = 0; i < spec.inputs.size(); ++i)
    for (std::size_t j = 0; j < spec.inputs[i].size(); ++j)
      if (spec.inputs[i][j] == a)
        occ.push_back({static_cast<int>(i), static_cast<int>(j), env.dims[i][j]});
  return occ;
}

ConvGroup make_group(const ExpressionSpec& spec, const ShapeEnv& env, const ConvModeMap& modes,
                     const Atom& a) {
  ConvGroup g;
  g.atom = a;
  auto it = modes.find(a);
  if (it == modes.end()) throw ShapeError("no conv mode for atom '" + a.name + "'");
  g.mode = it->second;

  auto occ = occurrences_of(spec, env, a);
  std::size_t best = 0;
  for (std::size_t i = 1; i < occ.size(); ++i)
    if (occ[i].dim > occ[best].dim) best = i;
  g.feature = occ[best];
  for (std::size_t i = 0; i < occ.size(); ++i)
    if (i != best) g.filters.push_back(occ[i]);

  if (occ.size() >= 3 && g.mode != ConvMode::Circular)
    throw ShapeError("multi-way conv atom '" + a.name + "' requires circular mode");
  g.out_dim = occ.size() >= 3 ? g.feature.dim
                              : conv_output_dim(g.mode, g.feature.dim, g.filters[0].dim);
  g.offset = (g.mode == ConvMode::Same && occ.size() == 2) ? (g.filters[0].dim - 1) / 2 : 0;
  return g;
}

}  // namespace

std::vector<int64_t> output_shape(const ExpressionSpec& spec, const ShapeEnv& env,
                                  const ConvModeMap& modes) {
  std::vector<int64_t> shape;
  for (const auto& a : spec.output) {
    if (spec.is_conv(a)) {
      shape.push_back(make_group(spec, env, modes, a).out_dim);
    } else {
      shape.push_back(env.dim_of(spec, a));
    }
  }
  return shape;
}

DenseTensor eval(const ExpressionSpec& spec, const ShapeEnv& env, const ConvModeMap& modes,
                 const std::vector<DenseTensor>& inputs) {
  const std::size_t n_inputs = spec.inputs.size();
  if (inputs.size() != n_inputs) throw ShapeError("reference: wrong number of input tensors");
  for (std::size_t i = 0; i < n_inputs; ++i) {
    std::vector<int64_t> expect = env.dims[i];
    if (inputs[i].shape != expect) throw ShapeError("reference: input shape mismatch");
  }

  auto classes = classify(spec);

  // Free index variables of the nested sum: one per output non-conv atom,
  // one per summed (contraction/self-contraction) atom, one per conv
  // filter occurrence, plus the output position of each conv atom.
  std::vector<Atom> summed;
  for (const auto& [a, c] : classes)
    if (c == AtomClass::Contraction || c == AtomClass::SelfContraction) summed.push_back(a);

  std::vector<ConvGroup> groups;
  for (const auto& a : spec.conv_atoms) groups.push_back(make_group(spec, env, modes, a));

  DenseTensor out(output_shape(spec, env, modes));

  // Coordinate slots per input tensor; filled per term below.
  std::vector<std::vector<int64_t>> coords(n_inputs);
  for (std::size_t i = 0; i < n_inputs; ++i) coords[i].assign(spec.inputs[i].size(), 0);

  // Locations of each plain atom, precomputed.
  struct PlainAtom {
    std::vector<Occurrence> occ;
    int64_t dim;
    bool in_output;
    int out_axis;
  };
  std::map<Atom, PlainAtom> plain;
  for (const auto& a : spec.all_atoms()) {
    if (spec.is_conv(a)) continue;
    PlainAtom p;
    p.occ = occurrences_of(spec, env, a);
    p.dim = p.occ[0].dim;
    p.in_output = spec.in_output(a);
    p.out_axis = -1;
    plain.emplace(a, std::move(p));
  }
  for (std::size_t k = 0; k < spec.output.size(); ++k) {
    auto it = plain.find(spec.output[k]);
    if (it != plain.end()) it->second.out_axis = static_cast<int>(k);
  }
  std::map<Atom, int> conv_out_axis;
  for (std::size_t k = 0; k < spec.output.size(); ++k)
    if (spec.is_conv(spec.output[k])) conv_out_axis[spec.output[k]] = static_cast<int>(k);

  const auto out_strides = strides_of(out.shape);
  std::vector<int64_t> out_idx(out.shape.size(), 0);

  // Flattened list of summation slots: (kind, payload, range)
  struct Slot {
    enum Kind { Plain, Filter } kind;
    const PlainAtom* atom = nullptr;   // Plain
    const ConvGroup* group = nullptr;  // Filter
    int filter_index = 0;
    int64_t range = 1;
  };
  std::vector<Slot> slots;
  for (const auto& a : summed) {
    const auto& p = plain.at(a);
    slots.push_back({Slot::Plain, &p, nullptr, 0, p.dim});
  }
  for (const auto& g : groups)
    for (std::size_t f = 0; f < g.filters.size(); ++f)
      slots.push_back({Slot::Filter, nullptr, &g, static_cast<int>(f), g.filters[f].dim});

  std::vector<int64_t> slot_val(slots.size(), 0);

  const int64_t out_total = out.size();
  for (int64_t oflat = 0; oflat < out_total; ++oflat) {
    // Plant output coordinates of plain atoms into every occurrence.
    for (const auto& [a, p] : plain)
      if (p.in_output)
        for (const auto& occ : p.occ) coords[occ.input][occ.axis] = out_idx[p.out_axis];

    double acc = 0.0;
    std::fill(slot_val.begin(), slot_val.end(), 0);
    while (true) {
      // Plant summed plain atoms and filter positions.
      for (std::size_t s = 0; s < slots.size(); ++s) {
        const Slot& slot = slots[s];
        if (slot.kind == Slot::Plain) {
          for (const auto& occ : slot.atom->occ) coords[occ.input][occ.axis] = slot_val[s];
        } else {
          const auto& occ = slot.group->filters[slot.filter_index];
          coords[occ.input][occ.axis] = slot_val[s];
        }
      }
      // Resolve each conv feature index from the output position and the
      // filter positions; a term outside the feature range contributes 0.
      bool valid = true;
      for (const auto& g : groups) {
        const int64_t n = out_idx[conv_out_axis.at(g.atom)];
        int64_t x = 0;
        if (g.filters.size() == 1) {
          const int64_t k = coords[g.filters[0].input][g.filters[0].axis];
          switch (g.mode) {
            case ConvMode::Full: x = n - k; break;
            case ConvMode::Same: x = n + g.offset - k; break;
            case ConvMode::Valid: x = n + k; break;
            case ConvMode::Circular:
              x = (n - k) % g.feature.dim;
              if (x < 0) x += g.feature.dim;
              break;
          }
        } else {
          int64_t ksum = 0;
          for (const auto& f : g.filters) ksum += coords[f.input][f.axis];
          x = (n - ksum) % g.feature.dim;
          if (x < 0) x += g.feature.dim;
        }
        if (x < 0 || x >= g.feature.dim) {
          valid = false;
          break;
        }
        coords[g.feature.input][g.feature.axis] = x;
      }
      if (valid) {
        double term = 1.0;
        for (std::size_t i = 0; i < n_inputs; ++i) term *= inputs[i].at(coords[i]);
        acc += term;
      }
      // Advance the summation odometer.
      int s = static_cast<int>(slots.size()) - 1;
      for (; s >= 0; --s) {
        if (++slot_val[s] < slots[s].range) break;
        slot_val[s] = 0;
      }
      if (s < 0) break;
    }
    out.data[static_cast<std::size_t>(oflat)] = acc;

    // Advance the output odometer.
    for (int ax = static_cast<int>(out.shape.size()) - 1; ax >= 0; --ax) {
      auto a = static_cast<std::size_t>(ax);
      if (++out_idx[a] < out.shape[a]) break;
      out_idx[a] = 0;
    }
  }
  return out;
}

}  // namespace convexpr::reference
