#include "convexpr/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <istream>
#include <ostream>

#include "json.hpp"

namespace convexpr {

int64_t element_count(std::span<const int64_t> shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

DenseTensor::DenseTensor(std::vector<int64_t> s) : shape(std::move(s)) {
  for (int64_t d : shape)
    if (d < 1) throw ShapeError("tensor dimensions must be positive");
  data.assign(static_cast<std::size_t>(element_count(shape)), 0.0);
}

std::vector<int64_t> strides_of(std::span<const int64_t> shape) {
  std::vector<int64_t> st(shape.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
    st[static_cast<std::size_t>(i)] = acc;
    acc *= shape[static_cast<std::size_t>(i)];
  }
  return st;
}

namespace {
int64_t flat_index(std::span<const int64_t> index, std::span<const int64_t> shape) {
  int64_t flat = 0;
  for (std::size_t i = 0; i < shape.size(); ++i) flat = flat * shape[i] + index[i];
  return flat;
}
}  // namespace

double& DenseTensor::at(std::span<const int64_t> index) {
  return data[static_cast<std::size_t>(flat_index(index, shape))];
}

double DenseTensor::at(std::span<const int64_t> index) const {
  return data[static_cast<std::size_t>(flat_index(index, shape))];
}

DenseTensor permute(const DenseTensor& t, std::span<const int64_t> order) {
  const int r = t.rank();
  if (static_cast<int>(order.size()) != r)
    throw ShapeError("permute: order length does not match rank");
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  for (int64_t o : order) {
    if (o < 0 || o >= r || seen[static_cast<std::size_t>(o)])
      throw ShapeError("permute: order is not a permutation");
    seen[static_cast<std::size_t>(o)] = true;
  }

  std::vector<int64_t> new_shape(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i)
    new_shape[static_cast<std::size_t>(i)] = t.shape[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];

  DenseTensor out(new_shape);
  if (r == 0) {
    out.data = t.data;
    return out;
  }

  // Walk output positions in row-major order; gather from the source via
  // the permuted strides.
  const auto src_strides = strides_of(t.shape);
  std::vector<int64_t> gather(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i)
    gather[static_cast<std::size_t>(i)] = src_strides[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];

  std::vector<int64_t> idx(static_cast<std::size_t>(r), 0);
  int64_t src = 0;
  const int64_t total = out.size();
  for (int64_t flat = 0; flat < total; ++flat) {
    out.data[static_cast<std::size_t>(flat)] = t.data[static_cast<std::size_t>(src)];
    for (int ax = r - 1; ax >= 0; --ax) {
      auto a = static_cast<std::size_t>(ax);
      if (++idx[a] < new_shape[a]) {
        src += gather[a];
        break;
      }
      src -= gather[a] * (new_shape[a] - 1);
      idx[a] = 0;
    }
  }
  return out;
}

DenseTensor reshape(const DenseTensor& t, std::vector<int64_t> new_shape) {
  for (int64_t d : new_shape)
    if (d < 1) throw ShapeError("reshape: dimensions must be positive");
  if (element_count(new_shape) != t.size())
    throw ShapeError("reshape: element count mismatch");
  DenseTensor out;
  out.shape = std::move(new_shape);
  out.data = t.data;
  return out;
}

uint64_t SplitMix64::next() {
  state += 0x9E3779B97F4A7C15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double SplitMix64::next_unit() {
  // 53 high bits -> [0,1), then stretch to [-1,1).
  double u = static_cast<double>(next() >> 11) * 0x1.0p-53;
  return 2.0 * u - 1.0;
}

int64_t SplitMix64::next_in(int64_t lo, int64_t hi) {
  return lo + static_cast<int64_t>(next() % static_cast<uint64_t>(hi - lo + 1));
}

DenseTensor fill_random(std::vector<int64_t> shape, uint64_t seed) {
  DenseTensor t(std::move(shape));
  SplitMix64 rng(seed);
  for (double& v : t.data) v = rng.next_unit();
  return t;
}

std::string tensor_to_json(const DenseTensor& t) {
  nlohmann::json j;
  j["shape"] = t.shape;
  j["data"] = t.data;
  return j.dump();
}

DenseTensor tensor_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  DenseTensor t(j.at("shape").get<std::vector<int64_t>>());
  auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<int64_t>(data.size()) != t.size())
    throw ShapeError("tensor JSON: data length does not match shape");
  t.data = std::move(data);
  return t;
}

namespace {
void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}
uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw ShapeError("tensor binary: truncated stream");
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}
}  // namespace

void tensor_write_binary(const DenseTensor& t, std::ostream& os) {
  put_u64(os, static_cast<uint64_t>(t.rank()));
  for (int64_t d : t.shape) put_u64(os, static_cast<uint64_t>(d));
  for (double v : t.data) {
    uint64_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, 8);
    put_u64(os, bits);
  }
}

DenseTensor tensor_read_binary(std::istream& is) {
  uint64_t rank = get_u64(is);
  std::vector<int64_t> shape(rank);
  for (auto& d : shape) d = static_cast<int64_t>(get_u64(is));
  DenseTensor t(std::move(shape));
  for (double& v : t.data) {
    uint64_t bits = get_u64(is);
    std::memcpy(&v, &bits, 8);
  }
  return t;
}

int64_t ShapeEnv::dim_of(const ExpressionSpec& spec, const Atom& a) const {
  for (std::size_t i = 0; i < spec.inputs.size(); ++i)
    for (std::size_t j = 0; j < spec.inputs[i].size(); ++j)
      if (spec.inputs[i][j] == a) return dims[i][j];
  throw ShapeError("atom '" + a.name + "' not present in any input");
}

ShapeEnv make_shape_env(const ExpressionSpec& spec, std::vector<std::vector<int64_t>> dims) {
  if (dims.size() != spec.inputs.size())
    throw ShapeError("shape env: expected " + std::to_string(spec.inputs.size()) +
                     " dim lists, got " + std::to_string(dims.size()));
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (dims[i].size() != spec.inputs[i].size())
      throw ShapeError("shape env: input " + std::to_string(i) + " expects " +
                       std::to_string(spec.inputs[i].size()) + " dims, got " +
                       std::to_string(dims[i].size()));
    for (int64_t d : dims[i])
      if (d < 1) throw ShapeError("shape env: dimensions must be positive");
  }

  for (const auto& a : spec.all_atoms()) {
    std::vector<int64_t> occ;
    for (std::size_t i = 0; i < spec.inputs.size(); ++i)
      for (std::size_t j = 0; j < spec.inputs[i].size(); ++j)
        if (spec.inputs[i][j] == a) occ.push_back(dims[i][j]);
    const bool equal = std::all_of(occ.begin(), occ.end(), [&](int64_t d) { return d == occ[0]; });
    if (!spec.is_conv(a)) {
      if (!equal)
        throw ShapeError("atom '" + a.name + "' carries unequal dimensions across inputs");
    } else if (occ.size() >= 3 && !equal) {
      throw ShapeError("multi-way conv atom '" + a.name + "' requires equal dimensions");
    }
  }

  return ShapeEnv{std::move(dims)};
}

std::map<Atom, std::set<int64_t>> atom_dims(const ExpressionSpec& spec, const ShapeEnv& env) {
  std::map<Atom, std::set<int64_t>> view;
  for (std::size_t i = 0; i < spec.inputs.size(); ++i)
    for (std::size_t j = 0; j < spec.inputs[i].size(); ++j)
      view[spec.inputs[i][j]].insert(env.dims[i][j]);
  return view;
}

}  // namespace convexpr
