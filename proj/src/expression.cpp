#include "convexpr/expression.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace convexpr {

const char* to_string(AtomClass c) {
  switch (c) {
    case AtomClass::Convolution: return "convolution";
    case AtomClass::BatchProduct: return "batch";
    case AtomClass::Contraction: return "contraction";
    case AtomClass::Free: return "free";
    case AtomClass::SelfContraction: return "self-contraction";
  }
  return "?";
}

bool ExpressionSpec::is_conv(const Atom& a) const {
  return std::find(conv_atoms.begin(), conv_atoms.end(), a) != conv_atoms.end();
}

int ExpressionSpec::occurrence_count(const Atom& a) const {
  int n = 0;
  for (const auto& subs : inputs)
    if (std::find(subs.begin(), subs.end(), a) != subs.end()) ++n;
  return n;
}

bool ExpressionSpec::in_output(const Atom& a) const {
  return std::find(output.begin(), output.end(), a) != output.end();
}

Subscripts ExpressionSpec::all_atoms() const {
  Subscripts out;
  std::set<Atom> seen;
  for (const auto& subs : inputs)
    for (const auto& a : subs)
      if (seen.insert(a).second) out.push_back(a);
  return out;
}

namespace {

enum class TokKind { AtomTok, Comma, Arrow, Pipe, End };

struct Token {
  TokKind kind;
  Atom atom;
  std::size_t pos;
};

// Scans the source into tokens, skipping whitespace but keeping original
// byte positions for diagnostics.
std::vector<Token> tokenize(std::string_view src) {
  std::vector<Token> toks;
  std::size_t i = 0;
  while (i < src.size()) {
    char c = src[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (c == ',') {
      toks.push_back({TokKind::Comma, {}, i});
      ++i;
    } else if (c == '-') {
      if (i + 1 >= src.size() || src[i + 1] != '>')
        throw ParseError("expected '->' after '-'", i);
      toks.push_back({TokKind::Arrow, {}, i});
      i += 2;
    } else if (c == '|') {
      toks.push_back({TokKind::Pipe, {}, i});
      ++i;
    } else if (c == '(') {
      std::size_t start = i++;
      std::string name;
      while (i < src.size() && src[i] != ')') {
        char n = src[i];
        if (std::isspace(static_cast<unsigned char>(n))) {
          ++i;
          continue;
        }
        if (!std::isalnum(static_cast<unsigned char>(n)))
          throw ParseError("invalid character in parenthesized atom name", i);
        name.push_back(n);
        ++i;
      }
      if (i >= src.size()) throw ParseError("unbalanced '('", start);
      ++i;  // consume ')'
      if (name.empty()) throw ParseError("empty parenthesized atom name", start);
      toks.push_back({TokKind::AtomTok, Atom{std::move(name)}, start});
    } else if (c == ')') {
      throw ParseError("unbalanced ')'", i);
    } else if (std::isalpha(static_cast<unsigned char>(c))) {
      toks.push_back({TokKind::AtomTok, Atom{std::string(1, c)}, i});
      ++i;
    } else {
      throw ParseError(std::string("unexpected character '") + c + "'", i);
    }
  }
  toks.push_back({TokKind::End, {}, src.size()});
  return toks;
}

void check_no_repeats(const Subscripts& subs, const char* where, std::size_t pos) {
  std::set<Atom> seen;
  for (const auto& a : subs)
    if (!seen.insert(a).second)
      throw ParseError("atom '" + a.name + "' repeated within " + where, pos);
}

}  // namespace

ExpressionSpec parse(std::string_view source) {
  auto toks = tokenize(source);

  ExpressionSpec spec;
  std::size_t i = 0;

  // inputs := subs ("," subs)*
  spec.inputs.emplace_back();
  std::size_t section_pos = 0;
  while (true) {
    const Token& t = toks[i];
    if (t.kind == TokKind::AtomTok) {
      spec.inputs.back().push_back(t.atom);
      ++i;
    } else if (t.kind == TokKind::Comma) {
      if (spec.inputs.back().empty())
        throw ParseError("empty input subscript list", t.pos);
      spec.inputs.emplace_back();
      ++i;
    } else if (t.kind == TokKind::Arrow) {
      section_pos = t.pos;
      ++i;
      break;
    } else {
      throw ParseError("expected atom, ',' or '->' in inputs", t.pos);
    }
  }
  if (spec.inputs.back().empty())
    throw ParseError("empty input subscript list", section_pos);

  // output := atom*
  while (toks[i].kind == TokKind::AtomTok) {
    spec.output.push_back(toks[i].atom);
    ++i;
  }

  // optional "|" convs, commas between conv atoms optional
  Subscripts conv_listed;
  if (toks[i].kind == TokKind::Pipe) {
    ++i;
    bool want_atom = true;
    while (toks[i].kind != TokKind::End) {
      const Token& t = toks[i];
      if (t.kind == TokKind::AtomTok) {
        conv_listed.push_back(t.atom);
        want_atom = false;
        ++i;
      } else if (t.kind == TokKind::Comma) {
        if (want_atom) throw ParseError("expected conv atom before ','", t.pos);
        want_atom = true;
        ++i;
      } else {
        throw ParseError("unexpected token in conv list", t.pos);
      }
    }
    if (conv_listed.empty())
      throw ParseError("'|' with no conv atoms", toks[i].pos);
  }
  if (toks[i].kind != TokKind::End) {
    if (toks[i].kind == TokKind::Arrow)
      throw ParseError("duplicate '->'", toks[i].pos);
    throw ParseError("unexpected trailing token", toks[i].pos);
  }

  for (const auto& subs : spec.inputs) check_no_repeats(subs, "one input subscript list", source.size());
  check_no_repeats(spec.output, "the output subscript list", source.size());
  check_no_repeats(conv_listed, "the conv list", source.size());

  for (const auto& a : spec.output)
    if (spec.occurrence_count(a) == 0)
      throw ParseError("output atom '" + a.name + "' absent from all inputs", source.size());

  for (const auto& a : conv_listed) {
    if (std::find(spec.output.begin(), spec.output.end(), a) == spec.output.end())
      throw ParseError("conv atom '" + a.name + "' absent from output", source.size());
    if (spec.occurrence_count(a) < 2)
      throw ParseError("conv atom '" + a.name + "' present in fewer than two inputs", source.size());
  }

  // Canonical conv order: output order. Membership came from the source list.
  for (const auto& a : spec.output)
    if (std::find(conv_listed.begin(), conv_listed.end(), a) != conv_listed.end())
      spec.conv_atoms.push_back(a);

  return spec;
}

std::string render(const Subscripts& subs) {
  std::string out;
  for (const auto& a : subs) {
    if (a.name.size() == 1)
      out += a.name;
    else
      out += "(" + a.name + ")";
  }
  return out;
}

std::string render(const ExpressionSpec& spec) {
  std::string out;
  for (std::size_t i = 0; i < spec.inputs.size(); ++i) {
    if (i) out += ",";
    out += render(spec.inputs[i]);
  }
  out += "->";
  out += render(spec.output);
  if (!spec.conv_atoms.empty()) {
    out += "|";
    out += render(spec.conv_atoms);
  }
  return out;
}

std::map<Atom, AtomClass> classify(const ExpressionSpec& spec) {
  std::map<Atom, AtomClass> classes;
  for (const auto& a : spec.all_atoms()) {
    AtomClass c;
    if (spec.is_conv(a)) {
      c = AtomClass::Convolution;
    } else {
      int occ = spec.occurrence_count(a);
      bool out = spec.in_output(a);
      if (occ >= 2)
        c = out ? AtomClass::BatchProduct : AtomClass::Contraction;
      else
        c = out ? AtomClass::Free : AtomClass::SelfContraction;
    }
    classes.emplace(a, c);
  }
  return classes;
}

}  // namespace convexpr
