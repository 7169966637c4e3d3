#pragma once

#include <compare>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace convexpr {

/// Error raised on malformed conv_einsum strings. `position` is the byte
/// offset into the original source where the problem was detected.
struct ParseError : std::runtime_error {
  ParseError(const std::string& msg, std::size_t pos)
      : std::runtime_error(msg + " (at position " + std::to_string(pos) + ")"),
        position(pos) {}
  std::size_t position;
};

/// One subscript symbol. Bare letters parse to single-character names;
/// parenthesized groups like "(t1)" parse to multi-character names.
/// Identity is the name alone: "(t1)" in two subscript lists is one atom.
struct Atom {
  std::string name;

  Atom() = default;
  Atom(std::string n) : name(std::move(n)) {}
  Atom(const char* n) : name(n) {}

  friend auto operator<=>(const Atom&, const Atom&) = default;
};

using Subscripts = std::vector<Atom>;

enum class AtomClass { Convolution, BatchProduct, Contraction, Free, SelfContraction };

const char* to_string(AtomClass c);

/// A parsed conv_einsum expression: "subs,subs,...->subs|convs".
///
/// Invariants established by parse():
///  - no atom repeats within a single subscript list,
///  - every output atom appears in at least one input,
///  - every conv atom appears in the output and in at least two inputs,
///  - conv_atoms is stored in output order (the canonical order).
struct ExpressionSpec {
  std::vector<Subscripts> inputs;
  Subscripts output;
  Subscripts conv_atoms;

  bool is_conv(const Atom& a) const;
  std::size_t input_count() const { return inputs.size(); }

  /// Number of input subscript lists containing `a` (0, 1 or more).
  int occurrence_count(const Atom& a) const;
  bool in_output(const Atom& a) const;

  /// All distinct atoms, ordered by first appearance scanning inputs
  /// left to right. Used as the canonical atom order throughout.
  Subscripts all_atoms() const;

  friend bool operator==(const ExpressionSpec&, const ExpressionSpec&) = default;
};

/// Parse a conv_einsum string. Whitespace is ignored everywhere.
///
/// Grammar:
///   expr    := inputs "->" output [ "|" convs ]
///   inputs  := subs ("," subs)*
///   subs    := atom*            output := atom*
///   convs   := atom ("," atom)* | atom*
///   atom    := LETTER | "(" NAME ")"    NAME := [A-Za-z0-9]+
ExpressionSpec parse(std::string_view source);

/// Canonical string form: no whitespace, multi-character atoms
/// re-parenthesized, conv atoms comma-free. parse(render(s)) == s.
std::string render(const ExpressionSpec& spec);
std::string render(const Subscripts& subs);

/// Total classification of every atom appearing anywhere in the spec.
std::map<Atom, AtomClass> classify(const ExpressionSpec& spec);

}  // namespace convexpr
