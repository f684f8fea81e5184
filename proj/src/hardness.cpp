#include "mpobm/hardness.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "mpobm/errors.hpp"
#include "mpobm/parallel.hpp"
#include "mpobm/quadrature.hpp"

namespace mpobm {

int Formula::variable(int index) {
  if (index < 1) throw InputError("variable index must be >= 1");
  n = std::max(n, index);
  nodes.push_back({FormulaOp::var, index, -1, -1});
  return root();
}

int Formula::negate(int a) {
  nodes.push_back({FormulaOp::negation, 0, a, -1});
  return root();
}

int Formula::conjoin(int a, int b) {
  nodes.push_back({FormulaOp::conjunction, 0, a, b});
  return root();
}

int Formula::disjoin(int a, int b) {
  nodes.push_back({FormulaOp::disjunction, 0, a, b});
  return root();
}

namespace {

class Parser {
 public:
  explicit Parser(const std::string& text) : s_(text) {}

  Formula infix() {
    parse_or();
    skip();
    if (pos_ < s_.size()) fail("unexpected '" + std::string(1, s_[pos_]) + "'");
    return finish();
  }

  Formula sexpr() {
    parse_sexpr();
    skip();
    if (pos_ < s_.size()) fail("trailing input");
    return finish();
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw InputError("syntax error at position " + std::to_string(pos_) + ": " + what);
  }

  void skip() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  int parse_or() {
    int lhs = parse_and();
    while (accept('|')) lhs = f_.disjoin(lhs, parse_and());
    return lhs;
  }

  int parse_and() {
    int lhs = parse_unary();
    while (accept('&')) lhs = f_.conjoin(lhs, parse_unary());
    return lhs;
  }

  int parse_unary() {
    skip();
    if (accept('!') || accept('~')) return f_.negate(parse_unary());
    if (accept('(')) {
      const int inner = parse_or();
      if (!accept(')')) fail("expected ')'");
      return inner;
    }
    return parse_variable();
  }

  int parse_variable() {
    skip();
    if (pos_ >= s_.size()) fail("unexpected end of input");
    if (s_[pos_] != 'x' && s_[pos_] != 'X') fail("expected a variable like x1");
    const std::size_t start = pos_++;
    std::size_t end = pos_;
    while (end < s_.size() && std::isdigit(static_cast<unsigned char>(s_[end]))) ++end;
    if (end == pos_) fail("variable without index");
    if (end - pos_ > 6) fail("variable index too large");
    const long index = std::stol(s_.substr(pos_, end - pos_));
    if (index < 1) {
      pos_ = start;
      fail("variable index 0");
    }
    pos_ = end;
    used_.insert(static_cast<int>(index));
    return f_.variable(static_cast<int>(index));
  }

  std::string word() {
    skip();
    std::size_t end = pos_;
    while (end < s_.size() && std::isalpha(static_cast<unsigned char>(s_[end]))) ++end;
    std::string w = s_.substr(pos_, end - pos_);
    std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return std::tolower(c); });
    pos_ = end;
    return w;
  }

  int parse_sexpr() {
    if (!accept('(')) return parse_variable();
    const std::size_t at = pos_;
    const std::string op = word();
    std::vector<int> args;
    while (!accept(')')) {
      skip();
      if (pos_ >= s_.size()) fail("expected ')'");
      args.push_back(parse_sexpr());
    }
    if (op == "not") {
      if (args.size() != 1) fail("not takes one argument");
      return f_.negate(args[0]);
    }
    if (op != "and" && op != "or") {
      pos_ = at;
      fail("unknown operator '" + op + "'");
    }
    if (args.size() < 2) fail(op + " takes at least two arguments");
    int acc = args[0];
    for (std::size_t k = 1; k < args.size(); ++k) acc = op == "and" ? f_.conjoin(acc, args[k]) : f_.disjoin(acc, args[k]);
    return acc;
  }

  Formula finish() {
    if (f_.nodes.empty()) throw InputError("empty formula");
    for (int v = 1; v <= f_.n; ++v) {
      if (!used_.count(v)) throw InputError("variable x" + std::to_string(v) + " missing; indices must be dense");
    }
    return std::move(f_);
  }

  const std::string& s_;
  std::size_t pos_ = 0;
  Formula f_;
  std::set<int> used_;
};

Formula parse_dimacs(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int vars = -1;
  long declared = -1;
  Formula f;
  int cnf = -1;
  int clause = -1;
  long clauses = 0;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok) || tok[0] == 'c') continue;
    if (tok == "%") break;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (tok == "p") {
      std::string kind;
      if (vars >= 0 || !(ls >> kind >> vars >> declared) || kind != "cnf" || vars < 1 || declared < 1) {
        throw InputError(where + "bad problem line");
      }
      continue;
    }
    if (vars < 0) throw InputError(where + "clause before the problem line");
    do {
      long lit = 0;
      try {
        std::size_t used = 0;
        lit = std::stol(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::logic_error&) {
        throw InputError(where + "bad literal '" + tok + "'");
      }
      if (lit == 0) {
        if (clause < 0) throw InputError(where + "empty clause");
        cnf = cnf < 0 ? clause : f.conjoin(cnf, clause);
        clause = -1;
        ++clauses;
        continue;
      }
      if (std::labs(lit) > vars) throw InputError(where + "literal " + tok + " exceeds the declared variable count");
      int node = f.variable(static_cast<int>(std::labs(lit)));
      if (lit < 0) node = f.negate(node);
      clause = clause < 0 ? node : f.disjoin(clause, node);
    } while (ls >> tok);
  }
  if (vars < 0) throw InputError("missing problem line");
  if (clause >= 0) throw InputError("last clause not terminated by 0");
  if (clauses != declared) {
    throw InputError("problem line declares " + std::to_string(declared) + " clauses, found " + std::to_string(clauses));
  }
  f.n = vars;
  return f;
}

bool is_dimacs(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;
    if (tok == "p") return true;
    if (tok != "c") return false;
  }
  return false;
}

bool is_sexpr(const std::string& text) {
  std::size_t i = text.find_first_not_of(" \t\r\n");
  if (i == std::string::npos || text[i] != '(') return false;
  i = text.find_first_not_of(" \t\r\n", i + 1);
  if (i == std::string::npos) return false;
  std::string w;
  while (i < text.size() && std::isalpha(static_cast<unsigned char>(text[i]))) w += static_cast<char>(std::tolower(text[i++]));
  return w == "and" || w == "or" || w == "not";
}

bool binary(const Formula::Node& node) {
  return node.op == FormulaOp::conjunction || node.op == FormulaOp::disjunction;
}

void print(const Formula& f, int i, std::string& out) {
  const auto& node = f.nodes[i];
  auto operand = [&](int child, bool parens) {
    if (parens) out += '(';
    print(f, child, out);
    if (parens) out += ')';
  };
  switch (node.op) {
    case FormulaOp::var:
      out += 'x' + std::to_string(node.var);
      break;
    case FormulaOp::negation:
      out += '!';
      operand(node.left, binary(f.nodes[node.left]));
      break;
    case FormulaOp::conjunction:
    case FormulaOp::disjunction: {
      // left chains of the same operator print flat; anything else is bracketed
      operand(node.left, binary(f.nodes[node.left]) && f.nodes[node.left].op != node.op);
      out += node.op == FormulaOp::conjunction ? " & " : " | ";
      operand(node.right, binary(f.nodes[node.right]));
      break;
    }
  }
}

template <typename T, typename Leaf, typename Not, typename And, typename Or>
T fold(const Formula& f, std::vector<T>& val, Leaf leaf, Not neg, And conj, Or disj) {
  if (f.nodes.empty()) throw InputError("empty formula");
  val.resize(f.nodes.size());
  for (std::size_t i = 0; i < f.nodes.size(); ++i) {
    const auto& node = f.nodes[i];
    switch (node.op) {
      case FormulaOp::var: val[i] = leaf(node.var); break;
      case FormulaOp::negation: val[i] = neg(val[node.left]); break;
      case FormulaOp::conjunction: val[i] = conj(val[node.left], val[node.right]); break;
      case FormulaOp::disjunction: val[i] = disj(val[node.left], val[node.right]); break;
    }
  }
  return val.back();
}

bool evaluate_into(const Formula& f, std::uint64_t bits, std::vector<char>& scratch) {
  return fold<char>(
      f, scratch, [&](int v) -> char { return (bits >> (v - 1)) & 1U; }, [](char a) -> char { return !a; },
      [](char a, char b) -> char { return a && b; }, [](char a, char b) -> char { return a || b; });
}

double smooth_bump_mass() {
  const auto rule = gauss_legendre(200, -0.25, 0.25);
  double mass = 0.0;
  for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
    const double t = 4.0 * rule.nodes[k];
    mass += rule.weights[k] * std::exp(-1.0 / (1.0 - t * t));
  }
  return mass;
}

struct StratumSums {
  double mass_a = 0.0;
  double var_a = 0.0;
  double mass_rest = 0.0;
  double var_rest = 0.0;
};

}  // namespace

Formula parse_formula(const std::string& text) {
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) throw InputError("empty formula text");
  if (is_dimacs(text)) {
    // one-line form "p cnf 2 1 / 1 -2 0" uses '/' for line breaks
    std::string lines = text;
    std::replace(lines.begin(), lines.end(), '/', '\n');
    return parse_dimacs(lines);
  }
  Parser p(text);
  return is_sexpr(text) ? p.sexpr() : p.infix();
}

std::string to_string(const Formula& f) {
  if (f.nodes.empty()) return "";
  std::string out;
  print(f, f.root(), out);
  return out;
}

bool evaluate(const Formula& f, std::uint64_t assignment) {
  std::vector<char> scratch;
  return evaluate_into(f, assignment, scratch);
}

double poly_extend(const Formula& f, std::span<const double> x) {
  if (static_cast<int>(x.size()) < f.n) throw ContractViolation("poly_extend: point has fewer than n coordinates");
  std::vector<double> val;
  return fold<double>(
      f, val, [&](int v) { return x[v - 1]; }, [](double a) { return 1.0 - a; }, [](double a, double b) { return a * b; },
      [](double a, double b) { return a + b - a * b; });
}

std::uint64_t model_count(const Formula& f, int cap) {
  if (f.n > cap || f.n > 62) throw SizeError("model_count: n = " + std::to_string(f.n) + " exceeds the enumeration cap");
  const std::uint64_t total = std::uint64_t{1} << f.n;
  const std::uint64_t block = 1 << 12;
  const std::size_t n_blocks = static_cast<std::size_t>((total + block - 1) / block);
  std::uint64_t count = 0;
  ordered_reduce<std::uint64_t>(
      n_blocks,
      [&](std::size_t b) {
        std::vector<char> scratch;
        std::uint64_t c = 0;
        const std::uint64_t end = std::min(total, (b + 1) * block);
        for (std::uint64_t z = b * block; z < end; ++z) c += evaluate_into(f, z, scratch);
        return c;
      },
      [&](std::uint64_t c) { count += c; });
  return count;
}

Formula random_cnf(int n, int clauses, int width, Rng& rng) {
  if (n < 1 || clauses < 1 || width < 1 || width > n) throw ConfigError("random_cnf: need 1 <= width <= n, clauses >= 1");
  Formula f;
  std::vector<int> vars(n);
  std::iota(vars.begin(), vars.end(), 1);
  std::bernoulli_distribution sign(0.5);
  int cnf = -1;
  for (int c = 0; c < clauses; ++c) {
    std::shuffle(vars.begin(), vars.end(), rng);
    int clause = -1;
    for (int k = 0; k < width; ++k) {
      int lit = f.variable(vars[k]);
      if (sign(rng)) lit = f.negate(lit);
      clause = clause < 0 ? lit : f.disjoin(clause, lit);
    }
    cnf = cnf < 0 ? clause : f.conjoin(cnf, clause);
  }
  f.n = n;
  return f;
}

std::string to_string(BumpKind kind) { return kind == BumpKind::box ? "box" : "smooth"; }

BumpKind bump_kind_from_string(const std::string& name) {
  if (name == "box") return BumpKind::box;
  if (name == "smooth") return BumpKind::smooth;
  throw ConfigError("unknown bump '" + name + "'");
}

Bump::Bump(BumpKind kind) : kind_(kind) {
  if (kind_ == BumpKind::smooth) scale_ = 1.0 / smooth_bump_mass();
}

double Bump::operator()(double x) const {
  if (kind_ == BumpKind::box) return std::abs(x) <= 0.25 ? scale_ : 0.0;
  const double t = 4.0 * x;
  return std::abs(t) < 1.0 ? scale_ * std::exp(-1.0 / (1.0 - t * t)) : 0.0;
}

HardDensity::HardDensity(Formula f, BumpKind bump) : f_(std::move(f)), bump_(bump) {
  if (f_.nodes.empty() || f_.n < 1) throw InputError("hard density needs a nonempty formula");
}

double HardDensity::soft(double x) const {
  const double e0 = bump_.zero(x);
  const double e1 = bump_.one(x);
  return e0 + e1 > 0.0 ? e1 / (e0 + e1) : 0.0;
}

double HardDensity::g(std::span<const double> x) const {
  double weight = 1.0;
  std::vector<double> s(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    weight *= bump_.zero(x[i]) + bump_.one(x[i]);
    if (weight == 0.0) return 0.0;
    s[i] = soft(x[i]);
  }
  return poly_extend(f_, s) * weight;
}

double HardDensity::u(std::span<const double> x) const {
  double prod = 1.0;
  for (double xi : x) prod *= bump_.one(xi);
  return prod;
}

double HardDensity::p_tilde(std::span<const double> x, double y) const {
  if (static_cast<int>(x.size()) != n()) throw ContractViolation("p_tilde: x must have n coordinates");
  const double e1 = bump_.one(y);
  const double e0 = bump_.zero(y);
  double value = 0.0;
  if (e1 > 0.0) value += g(x) * e1;
  if (e0 > 0.0) value += u(x) * e0;
  return value;
}

GapReport verify_gap(const HardDensity& hd, std::uint64_t samples, std::uint64_t seed, int cap) {
  const int n = hd.n();
  GapReport rep;
  rep.n = n;
  rep.seed = seed;
  rep.bump = to_string(hd.bump().kind());
  rep.model_count = model_count(hd.formula(), cap);
  rep.predicted = static_cast<double>(rep.model_count) / static_cast<double>(rep.model_count + 1);

  // Every point of positive density lies in one box prod_i [z_i +- 1/4] x [r +- 1/4];
  // sample each box uniformly and add up the box integrals.
  const std::uint64_t strata = std::uint64_t{1} << n;
  const std::uint64_t per = std::max<std::uint64_t>(2, (samples + 2 * strata - 1) / (2 * strata));
  const double volume = std::ldexp(1.0, -(n + 1));
  const std::uint64_t block = 256;
  const std::size_t n_blocks = static_cast<std::size_t>((strata + block - 1) / block);

  StratumSums total;
  ordered_reduce<StratumSums>(
      n_blocks,
      [&](std::size_t b) {
        StratumSums acc;
        std::vector<double> x(n);
        std::uniform_real_distribution<double> jitter(-0.25, 0.25);
        const std::uint64_t end = std::min(strata, (b + 1) * block);
        for (std::uint64_t z = b * block; z < end; ++z) {
          Rng rng = make_stream(seed, z);
          for (int r = 0; r < 2; ++r) {
            double sum = 0.0;
            double sq = 0.0;
            for (std::uint64_t k = 0; k < per; ++k) {
              for (int i = 0; i < n; ++i) x[i] = static_cast<double>((z >> i) & 1U) + jitter(rng);
              const double v = hd.p_tilde(x, r + jitter(rng)) * volume;
              sum += v;
              sq += v * v;
            }
            const double mean = sum / per;
            const double var = std::max(0.0, (sq - per * mean * mean) / (per - 1)) / per;
            if (r == 1) {
              acc.mass_a += mean;
              acc.var_a += var;
            } else {
              acc.mass_rest += mean;
              acc.var_rest += var;
            }
          }
        }
        return acc;
      },
      [&](StratumSums s) {
        total.mass_a += s.mass_a;
        total.var_a += s.var_a;
        total.mass_rest += s.mass_rest;
        total.var_rest += s.var_rest;
      });

  const double norm = static_cast<double>(rep.model_count + 1);
  rep.samples = 2 * strata * per;
  rep.p_a = total.mass_a / norm;
  rep.std_error = std::sqrt(total.var_a) / norm;
  rep.normalizer = total.mass_a + total.mass_rest;
  rep.normalizer_std_error = std::sqrt(total.var_a + total.var_rest);
  rep.within_tolerance = std::abs(rep.p_a - rep.predicted) <= 3.0 * rep.std_error + 1e-12;
  rep.decided_sat = rep.p_a > 0.25;
  rep.decision_correct = rep.decided_sat == (rep.model_count > 0);
  return rep;
}

}  // namespace mpobm
