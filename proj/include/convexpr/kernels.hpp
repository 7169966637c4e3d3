#pragma once

#include <map>
#include <optional>
#include <set>
#include <tuple>
#include <vector>

#include "convexpr/checked_int.hpp"
#include "convexpr/expression.hpp"
#include "convexpr/tensor.hpp"

namespace convexpr {

enum class ConvMode { Full, Same, Valid, Circular };

const char* to_string(ConvMode m);
ConvMode conv_mode_from_string(std::string_view s);

/// Output dimension of a 1-D convolution of a feature of length
/// `feature` with a filter of length `filter`.
///   Full -> feature+filter-1, Same -> feature,
///   Valid -> feature-filter+1 (requires feature >= filter),
///   Circular -> feature.
int64_t conv_output_dim(ConvMode mode, int64_t feature, int64_t filter);

using ConvModeMap = std::map<Atom, ConvMode>;

/// Per-atom mode assignment for an expression. Conv atoms appearing in
/// three or more inputs are forced to Circular (the only mode whose
/// pairwise form is associative); two-way atoms take the requested mode.
ConvModeMap resolve_conv_modes(const ExpressionSpec& spec, ConvMode requested);

/// One convolution performed at a pairwise node.
struct ConvAxis {
  Atom atom;
  ConvMode mode = ConvMode::Same;
  bool feature_on_left = true;
  int64_t feature_dim = 1;
  int64_t filter_dim = 1;
  int64_t output_dim = 1;
};

/// A fully shape-resolved 2-input conv_einsum. Atom roles are re-derived
/// for the pair: an atom shared by both operands is a batch product if it
/// survives and a contraction otherwise; a single-operand atom is free if
/// it survives and a self-contraction otherwise; conv-marked atoms shared
/// by both operands are convolved here.
struct PairwiseOp {
  Subscripts left, right, result;
  std::vector<int64_t> left_dims, right_dims, result_dims;

  std::vector<ConvAxis> conv_axes;   // convolved at this node, left-subscript order
  Subscripts batch_atoms;            // shared, kept (left-subscript order)
  Subscripts contraction_atoms;      // shared, summed
  Subscripts left_free, right_free;  // single side, kept (own order)
  Subscripts left_self, right_self;  // single side, summed in preprocessing

  std::vector<int64_t> batch_dims, contraction_dims, left_free_dims, right_free_dims;

  int64_t result_elements() const { return element_count(result_dims); }
};

/// Builds and validates a PairwiseOp. `keep` lists the atoms that must
/// survive this node (the expression output plus anything still needed by
/// tensors outside the node). `conv_modes` marks the expression's conv
/// atoms; only atoms present in both operands are convolved here. With no
/// `result_order`, the result lists kept left atoms then new right atoms.
PairwiseOp make_pairwise_op(const Subscripts& left, const std::vector<int64_t>& left_dims,
                            const Subscripts& right, const std::vector<int64_t>& right_dims,
                            const std::set<Atom>& keep, const ConvModeMap& conv_modes,
                            const std::optional<Subscripts>& result_order = std::nullopt);

/// Sums out the axes whose atoms are not in `keep`. Surviving atoms stay
/// in their original relative order. No multiplications are performed.
std::pair<DenseTensor, Subscripts> sum_unique_modes(const DenseTensor& t, const Subscripts& subs,
                                                    const std::set<Atom>& keep);

struct MergeGroup {
  AtomClass cls;
  Atom compound;       // synthesized name: member names concatenated
  Subscripts members;  // original atoms, in merged order
  std::vector<int64_t> member_dims;
};

struct MergeRecord {
  std::vector<MergeGroup> groups;  // one entry per merged compound axis
};

/// Reshapes same-class non-conv modes into one compound mode each, in the
/// canonical class order batch | contraction | free | conv. Members keep
/// their order of appearance in `subs`; conv atoms are never merged. The
/// record inverts the merge via unmerge_modes.
std::tuple<DenseTensor, Subscripts, MergeRecord> merge_like_modes(
    const DenseTensor& t, const Subscripts& subs, const std::map<Atom, AtomClass>& classes);

/// Expands every compound axis found in `subs` back into its members.
std::pair<DenseTensor, Subscripts> unmerge_modes(const DenseTensor& t, const Subscripts& subs,
                                                 const MergeRecord& record);

/// Executes one pairwise conv_einsum exactly: self-contraction
/// preprocessing, like-mode merging, the grouped direct-convolution core
/// (native loop nest, no FFT), then unmerge and reorder to op.result.
/// The core parallelizes over independent output coordinates.
DenseTensor pairwise_eval(const DenseTensor& a, const DenseTensor& b, const PairwiseOp& op);

/// Exact number of scalar multiplications the direct loop nest performs
/// for this op. Full and Circular convolutions hit the cost model's
/// feature*filter product exactly; Same and Valid skip boundary terms.
u128 flops_actual(const PairwiseOp& op);

}  // namespace convexpr
