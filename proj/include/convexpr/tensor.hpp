#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "convexpr/expression.hpp"

namespace convexpr {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int64_t element_count(std::span<const int64_t> shape);

/// Dense row-major tensor of doubles (last axis fastest). A zero-order
/// tensor has shape {} and a single data element.
struct DenseTensor {
  std::vector<int64_t> shape;
  std::vector<double> data;

  DenseTensor() : data(1, 0.0) {}
  explicit DenseTensor(std::vector<int64_t> s);

  int rank() const { return static_cast<int>(shape.size()); }
  int64_t size() const { return static_cast<int64_t>(data.size()); }

  double& at(std::span<const int64_t> index);
  double at(std::span<const int64_t> index) const;
};

/// Row-major strides for a shape (last axis stride 1).
std::vector<int64_t> strides_of(std::span<const int64_t> shape);

/// Materialized copy with axes reordered so that result axis i is source
/// axis order[i]: result.shape[i] == t.shape[order[i]].
DenseTensor permute(const DenseTensor& t, std::span<const int64_t> order);

/// Same flat data, new shape metadata. Element counts must match.
DenseTensor reshape(const DenseTensor& t, std::vector<int64_t> new_shape);

/// Deterministic i.i.d. uniform[-1,1) entries from a SplitMix64 stream
/// seeded with `seed`. Same seed and shape give bit-identical data.
DenseTensor fill_random(std::vector<int64_t> shape, uint64_t seed);

/// SplitMix64 generator, also used by the test-suite generators.
struct SplitMix64 {
  uint64_t state;
  explicit SplitMix64(uint64_t seed) : state(seed) {}
  uint64_t next();
  double next_unit();                     // [-1, 1)
  int64_t next_in(int64_t lo, int64_t hi);  // inclusive range
};

// --- (de)serialization -----------------------------------------------------

std::string tensor_to_json(const DenseTensor& t);
DenseTensor tensor_from_json(const std::string& text);

/// Little-endian binary layout: u64 rank, u64 dims..., f64 payload.
void tensor_write_binary(const DenseTensor& t, std::ostream& os);
DenseTensor tensor_read_binary(std::istream& is);

// --- shape environment -----------------------------------------------------

/// Dimension assignment for every (input, axis), aligned with the
/// expression's subscript lists. For non-conv atoms all occurrences must
/// carry equal dimensions; conv atoms may differ per occurrence.
struct ShapeEnv {
  std::vector<std::vector<int64_t>> dims;

  int64_t dim_of(const ExpressionSpec& spec, const Atom& a) const;  // first occurrence
};

/// Validates dims against the spec and returns the ShapeEnv.
/// Multi-way conv atoms (in three or more inputs) must carry equal
/// dimensions at every occurrence; two-way conv atoms may differ.
ShapeEnv make_shape_env(const ExpressionSpec& spec, std::vector<std::vector<int64_t>> dims);

/// Per-atom view: every dimension the atom carries across the inputs.
std::map<Atom, std::set<int64_t>> atom_dims(const ExpressionSpec& spec, const ShapeEnv& env);

}  // namespace convexpr
