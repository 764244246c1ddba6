#include "hlik/adtape.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

namespace hlik::ad {

namespace {
std::atomic<std::uint64_t> g_tape_serial{1};

[[noreturn]] void reject(const char* op) {
  throw ConfigError(std::string("adtape: unsupported operation '") + op +
                    "' (supported: +, -, *, /, exp, log, pow, frozen comparisons)");
}
}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Const: return "const";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Neg: return "neg";
    case Op::AddC: return "add_const";
    case Op::MulC: return "mul_const";
    case Op::RSubC: return "rsub_const";
    case Op::RDivC: return "rdiv_const";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::PowC: return "pow_const";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Recording

TapeBuilder::TapeBuilder(std::span<const double> x0) {
  input_count_ = x0.size();
  nodes_.reserve(x0.size() + 64);
  inputs_.reserve(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) {
    nodes_.push_back({Op::Input, 0, 0, 0.0});
    inputs_.push_back(Var(this, static_cast<std::uint32_t>(i), x0[i]));
  }
}

std::uint32_t TapeBuilder::push(Op op, std::uint32_t a, std::uint32_t b, double aux) {
  nodes_.push_back({op, a, b, aux});
  return static_cast<std::uint32_t>(nodes_.size() - 1);
}

Var TapeBuilder::constant(double c) {
  return Var(this, push(Op::Const, 0, 0, c), c);
}

Tape TapeBuilder::finish(const Var& output) && {
  if (finished_) throw ConfigError("adtape: builder already finished");
  if (output.builder_ != this) throw ConfigError("adtape: output from a different builder");
  finished_ = true;
  Tape tape;
  tape.nodes_ = std::move(nodes_);
  tape.input_count_ = input_count_;
  tape.output_ = output.node_;
  tape.serial_ = g_tape_serial.fetch_add(1);
  tape.detect_pattern();
  return tape;
}

namespace {
TapeBuilder* same_builder(const Var& a, const Var& b, TapeBuilder* ba, TapeBuilder* bb) {
  (void)a;
  (void)b;
  if (ba != bb || ba == nullptr) throw ConfigError("adtape: vars from different tapes");
  return ba;
}
}  // namespace

#define HLIK_VAR_BIN(OPNAME, OPSYM)                                                  \
  Var operator OPSYM(const Var& a, const Var& b) {                                   \
    TapeBuilder* t = same_builder(a, b, a.builder_, b.builder_);                      \
    return Var(t, t->push(Op::OPNAME, a.node_, b.node_, 0.0), a.value_ OPSYM b.value_); \
  }

HLIK_VAR_BIN(Add, +)
HLIK_VAR_BIN(Sub, -)
HLIK_VAR_BIN(Mul, *)
HLIK_VAR_BIN(Div, /)
#undef HLIK_VAR_BIN

Var operator+(const Var& a, double c) {
  if (!a.builder_) throw ConfigError("adtape: uninitialized var");
  if (c == 0.0) return a;
  return Var(a.builder_, a.builder_->push(Op::AddC, a.node_, 0, c), a.value_ + c);
}
Var operator+(double c, const Var& a) { return a + c; }
Var operator-(const Var& a, double c) { return a + (-c); }
Var operator-(double c, const Var& a) {
  return Var(a.builder_, a.builder_->push(Op::RSubC, a.node_, 0, c), c - a.value_);
}
Var operator*(const Var& a, double c) {
  if (!a.builder_) throw ConfigError("adtape: uninitialized var");
  if (c == 1.0) return a;
  return Var(a.builder_, a.builder_->push(Op::MulC, a.node_, 0, c), a.value_ * c);
}
Var operator*(double c, const Var& a) { return a * c; }
Var operator/(const Var& a, double c) { return a * (1.0 / c); }
Var operator/(double c, const Var& a) {
  return Var(a.builder_, a.builder_->push(Op::RDivC, a.node_, 0, c), c / a.value_);
}
Var Var::operator-() const {
  return Var(builder_, builder_->push(Op::Neg, node_, 0, 0.0), -value_);
}

Var exp(const Var& a) {
  return Var(a.builder_, a.builder_->push(Op::Exp, a.node_, 0, 0.0), std::exp(a.value_));
}
Var log(const Var& a) {
  return Var(a.builder_, a.builder_->push(Op::Log, a.node_, 0, 0.0), std::log(a.value_));
}
Var pow(const Var& a, double c) {
  return Var(a.builder_, a.builder_->push(Op::PowC, a.node_, 0, c), std::pow(a.value_, c));
}
Var pow(const Var& a, const Var& b) {
  if (a.value_ <= 0.0)
    throw ConfigError("adtape: pow(var, var) requires a positive base at recording");
  return exp(b * log(a));
}
Var sqrt(const Var& a) { return pow(a, 0.5); }
Var fabs(const Var& a) { return a.value_ >= 0.0 ? a : -a; }  // branch frozen

Var sin(const Var&) { reject("sin"); }
Var cos(const Var&) { reject("cos"); }
Var tan(const Var&) { reject("tan"); }
Var tgamma(const Var&) { reject("tgamma"); }
Var lgamma(const Var&) { reject("lgamma"); }
Var erf(const Var&) { reject("erf"); }

// ---------------------------------------------------------------------------
// Evaluation

void Tape::Workspace::resize(std::size_t n, bool second_order) {
  val.resize(n);
  pa.resize(n);
  pb.resize(n);
  adj.resize(n);
  if (second_order) {
    haa.resize(n);
    hab.resize(n);
    hbb.resize(n);
    dot.resize(n);
    adjdot.resize(n);
  }
}

namespace {

// Forward value pass. Fills values and first/second local partials.
// Returns the index of the first non-finite node value, or -1.
template <bool kSecond>
std::int64_t forward_pass(const std::vector<Tape::Node>& nodes, std::span<const double> x,
                          std::vector<double>& val, std::vector<double>& pa,
                          std::vector<double>& pb, std::vector<double>& haa,
                          std::vector<double>& hab, std::vector<double>& hbb) {
  const std::size_t n = nodes.size();
  bool ok = true;
  for (std::size_t i = 0; i < n; ++i) {
    const Tape::Node& nd = nodes[i];
    double v = 0.0, dpa = 0.0, dpb = 0.0, d2aa = 0.0, d2ab = 0.0, d2bb = 0.0;
    switch (nd.op) {
      case Op::Input: v = x[i]; break;
      case Op::Const: v = nd.aux; break;
      case Op::Add: v = val[nd.a] + val[nd.b]; dpa = 1.0; dpb = 1.0; break;
      case Op::Sub: v = val[nd.a] - val[nd.b]; dpa = 1.0; dpb = -1.0; break;
      case Op::Mul:
        v = val[nd.a] * val[nd.b];
        dpa = val[nd.b];
        dpb = val[nd.a];
        d2ab = 1.0;
        break;
      case Op::Div: {
        const double ib = 1.0 / val[nd.b];
        v = val[nd.a] * ib;
        dpa = ib;
        dpb = -v * ib;
        d2ab = -ib * ib;
        d2bb = 2.0 * v * ib * ib;
        break;
      }
      case Op::Neg: v = -val[nd.a]; dpa = -1.0; break;
      case Op::AddC: v = val[nd.a] + nd.aux; dpa = 1.0; break;
      case Op::MulC: v = val[nd.a] * nd.aux; dpa = nd.aux; break;
      case Op::RSubC: v = nd.aux - val[nd.a]; dpa = -1.0; break;
      case Op::RDivC: {
        const double ia = 1.0 / val[nd.a];
        v = nd.aux * ia;
        dpa = -v * ia;
        d2aa = 2.0 * v * ia * ia;
        break;
      }
      case Op::Exp:
        v = std::exp(val[nd.a]);
        dpa = v;
        d2aa = v;
        break;
      case Op::Log: {
        const double ia = 1.0 / val[nd.a];
        v = std::log(val[nd.a]);
        dpa = ia;
        d2aa = -ia * ia;
        break;
      }
      case Op::PowC: {
        const double c = nd.aux;
        v = std::pow(val[nd.a], c);
        dpa = c * std::pow(val[nd.a], c - 1.0);
        d2aa = c * (c - 1.0) * std::pow(val[nd.a], c - 2.0);
        break;
      }
    }
    val[i] = v;
    pa[i] = dpa;
    pb[i] = dpb;
    if constexpr (kSecond) {
      haa[i] = d2aa;
      hab[i] = d2ab;
      hbb[i] = d2bb;
    }
    ok = ok && std::isfinite(v);
    if (!ok) return static_cast<std::int64_t>(i);
  }
  return -1;
}

void reverse_adjoints(const std::vector<Tape::Node>& nodes, std::uint32_t output,
                      const std::vector<double>& pa, const std::vector<double>& pb,
                      std::vector<double>& adj) {
  std::fill(adj.begin(), adj.end(), 0.0);
  adj[output] = 1.0;
  for (std::size_t i = nodes.size(); i-- > 0;) {
    const Tape::Node& nd = nodes[i];
    const double a = adj[i];
    if (a == 0.0) continue;
    switch (nd.op) {
      case Op::Input:
      case Op::Const:
        break;
      case Op::Add:
      case Op::Sub:
      case Op::Mul:
      case Op::Div:
        adj[nd.a] += pa[i] * a;
        adj[nd.b] += pb[i] * a;
        break;
      default:
        adj[nd.a] += pa[i] * a;
        break;
    }
  }
}

}  // namespace

double Tape::value(std::span<const double> x, Workspace& ws) const {
  if (x.size() != input_count_) throw DataError("adtape: input length mismatch");
  ws.resize(nodes_.size(), false);
  ws.prepared_second_order = false;
  ws.serial = serial_;
  std::int64_t bad = forward_pass<false>(nodes_, x, ws.val, ws.pa, ws.pb, ws.haa, ws.hab, ws.hbb);
  if (bad >= 0)
    throw NumericalError("adtape: non-finite value at tape node " + std::to_string(bad) + " (" +
                         op_name(nodes_[bad].op) + ")");
  return ws.val[output_];
}

double Tape::value_and_gradient(std::span<const double> x, Workspace& ws,
                                std::span<double> grad) const {
  if (grad.size() != input_count_) throw DataError("adtape: gradient length mismatch");
  double v = value(x, ws);
  reverse_adjoints(nodes_, output_, ws.pa, ws.pb, ws.adj);
  for (std::size_t i = 0; i < input_count_; ++i) grad[i] = ws.adj[i];
  return v;
}

void Tape::prepare_second_order(std::span<const double> x, Workspace& ws) const {
  if (x.size() != input_count_) throw DataError("adtape: input length mismatch");
  ws.resize(nodes_.size(), true);
  ws.serial = serial_;
  std::int64_t bad = forward_pass<true>(nodes_, x, ws.val, ws.pa, ws.pb, ws.haa, ws.hab, ws.hbb);
  if (bad >= 0)
    throw NumericalError("adtape: non-finite value at tape node " + std::to_string(bad) + " (" +
                         op_name(nodes_[bad].op) + ")");
  reverse_adjoints(nodes_, output_, ws.pa, ws.pb, ws.adj);
  ws.prepared_second_order = true;
}

double Tape::prepared_value(const Workspace& ws) const {
  if (!ws.prepared_second_order || ws.serial != serial_)
    throw ConfigError("adtape: workspace not prepared for this tape");
  return ws.val[output_];
}

void Tape::prepared_gradient(const Workspace& ws, std::span<double> grad) const {
  if (!ws.prepared_second_order || ws.serial != serial_)
    throw ConfigError("adtape: workspace not prepared for this tape");
  for (std::size_t i = 0; i < input_count_; ++i) grad[i] = ws.adj[i];
}

void Tape::hessian_vector_product(std::span<const double> seed, Workspace& ws,
                                  std::span<double> out) const {
  if (!ws.prepared_second_order || ws.serial != serial_)
    throw ConfigError("adtape: workspace not prepared for this tape");
  if (seed.size() != input_count_ || out.size() != input_count_)
    throw DataError("adtape: seed/out length mismatch");

  auto& dot = ws.dot;
  auto& adjdot = ws.adjdot;
  const auto& pa = ws.pa;
  const auto& pb = ws.pb;

  // Forward tangent sweep.
  const std::size_t n = nodes_.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Node& nd = nodes_[i];
    switch (nd.op) {
      case Op::Input: dot[i] = seed[i]; break;
      case Op::Const: dot[i] = 0.0; break;
      case Op::Add:
      case Op::Sub:
      case Op::Mul:
      case Op::Div:
        dot[i] = pa[i] * dot[nd.a] + pb[i] * dot[nd.b];
        break;
      default:
        dot[i] = pa[i] * dot[nd.a];
        break;
    }
  }

  // Reverse adjoint-dot sweep: d/dt of the gradient along the seed direction.
  std::fill(adjdot.begin(), adjdot.end(), 0.0);
  for (std::size_t i = n; i-- > 0;) {
    const Node& nd = nodes_[i];
    const double w = ws.adj[i];
    const double wd = adjdot[i];
    if (w == 0.0 && wd == 0.0) continue;
    switch (nd.op) {
      case Op::Input:
      case Op::Const:
        break;
      case Op::Add:
      case Op::Sub:
        adjdot[nd.a] += pa[i] * wd;
        adjdot[nd.b] += pb[i] * wd;
        break;
      case Op::Mul:
        adjdot[nd.a] += pa[i] * wd + w * dot[nd.b];
        adjdot[nd.b] += pb[i] * wd + w * dot[nd.a];
        break;
      case Op::Div:
        adjdot[nd.a] += pa[i] * wd + w * ws.hab[i] * dot[nd.b];
        adjdot[nd.b] += pb[i] * wd + w * (ws.hab[i] * dot[nd.a] + ws.hbb[i] * dot[nd.b]);
        break;
      default:
        adjdot[nd.a] += pa[i] * wd + w * ws.haa[i] * dot[nd.a];
        break;
    }
  }
  for (std::size_t i = 0; i < input_count_; ++i) out[i] = adjdot[i];
}

// ---------------------------------------------------------------------------
// Sparsity detection

bool SparsityPattern::contains(std::uint32_t i, std::uint32_t j) const {
  if (i > j) std::swap(i, j);
  return std::binary_search(entries_.begin(), entries_.end(), std::make_pair(i, j));
}

double SparseSym::at(std::uint32_t i, std::uint32_t j) const {
  if (i > j) std::swap(i, j);
  auto it = std::lower_bound(index.begin(), index.end(), std::make_pair(i, j));
  if (it == index.end() || *it != std::make_pair(i, j)) return 0.0;
  return value[static_cast<std::size_t>(it - index.begin())];
}

namespace {

// Enumerates the input indices a node depends on (its ancestor inputs),
// using an epoch-stamped visited array so repeated queries stay cheap.
class DepEnumerator {
 public:
  explicit DepEnumerator(const std::vector<Tape::Node>& nodes)
      : nodes_(nodes), stamp_(nodes.size(), 0), epoch_(0) {}

  const std::vector<std::uint32_t>& deps(std::uint32_t root, std::vector<std::uint32_t>& out) {
    ++epoch_;
    out.clear();
    stack_.clear();
    stack_.push_back(root);
    stamp_[root] = epoch_;
    while (!stack_.empty()) {
      std::uint32_t i = stack_.back();
      stack_.pop_back();
      const Tape::Node& nd = nodes_[i];
      if (nd.op == Op::Input) {
        out.push_back(i);
        continue;
      }
      if (nd.op == Op::Const) continue;
      if (stamp_[nd.a] != epoch_) {
        stamp_[nd.a] = epoch_;
        stack_.push_back(nd.a);
      }
      const bool binary = nd.op == Op::Add || nd.op == Op::Sub || nd.op == Op::Mul || nd.op == Op::Div;
      if (binary && stamp_[nd.b] != epoch_) {
        stamp_[nd.b] = epoch_;
        stack_.push_back(nd.b);
      }
    }
    return out;
  }

 private:
  const std::vector<Tape::Node>& nodes_;
  std::vector<std::uint64_t> stamp_;
  std::vector<std::uint32_t> stack_;
  std::uint64_t epoch_;
};

inline std::uint64_t pack_pair(std::uint32_t i, std::uint32_t j) {
  if (i > j) std::swap(i, j);
  return (static_cast<std::uint64_t>(i) << 32) | j;
}

}  // namespace

void Tape::detect_pattern() {
  // Nodes the output actually depends on.
  std::vector<char> reach(nodes_.size(), 0);
  reach[output_] = 1;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (!reach[i]) continue;
    const Node& nd = nodes_[i];
    if (nd.op == Op::Input || nd.op == Op::Const) continue;
    reach[nd.a] = 1;
    const bool binary = nd.op == Op::Add || nd.op == Op::Sub || nd.op == Op::Mul || nd.op == Op::Div;
    if (binary) reach[nd.b] = 1;
  }

  DepEnumerator dep(nodes_);
  std::vector<std::uint32_t> da, db;
  std::vector<std::uint64_t> pairs;
  for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
    if (!reach[i]) continue;
    const Node& nd = nodes_[i];
    switch (nd.op) {
      case Op::Mul: {
        dep.deps(nd.a, da);
        dep.deps(nd.b, db);
        for (auto x : da)
          for (auto y : db) pairs.push_back(pack_pair(x, y));
        break;
      }
      case Op::Div: {
        dep.deps(nd.a, da);
        dep.deps(nd.b, db);
        for (auto x : da)
          for (auto y : db) pairs.push_back(pack_pair(x, y));
        for (auto x : db)
          for (auto y : db) pairs.push_back(pack_pair(x, y));
        break;
      }
      case Op::RDivC:
      case Op::Exp:
      case Op::Log:
      case Op::PowC: {
        // PowC with exponent 0/1 is linear; keep the pair anyway (superset).
        dep.deps(nd.a, da);
        for (auto x : da)
          for (auto y : da)
            if (x <= y) pairs.push_back(pack_pair(x, y));
        break;
      }
      default:
        break;
    }
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  pattern_.entries_.reserve(pairs.size());
  for (auto p : pairs)
    pattern_.entries_.emplace_back(static_cast<std::uint32_t>(p >> 32),
                                   static_cast<std::uint32_t>(p & 0xffffffffu));
  pattern_.tape_serial_ = serial_;
}

// ---------------------------------------------------------------------------
// Hessian plan and recovery

HessianPlan::HessianPlan(const Tape& tape, const SparsityPattern& pattern,
                         std::span<const std::uint32_t> subset)
    : subset_(subset.begin(), subset.end()), tape_serial_(tape.serial()) {
  if (pattern.tape_serial() != tape.serial())
    throw ConfigError("adtape: sparsity pattern was produced from a different tape");

  // Map global input index -> subset-local index.
  std::vector<std::int64_t> local(tape.input_count(), -1);
  for (std::size_t k = 0; k < subset_.size(); ++k) {
    if (subset_[k] >= tape.input_count())
      throw ConfigError("adtape: hessian subset index out of range");
    local[subset_[k]] = static_cast<std::int64_t>(k);
  }

  for (const auto& [gi, gj] : pattern.entries()) {
    const std::int64_t li = local[gi], lj = local[gj];
    if (li < 0 || lj < 0) continue;
    std::uint32_t a = static_cast<std::uint32_t>(std::min(li, lj));
    std::uint32_t b = static_cast<std::uint32_t>(std::max(li, lj));
    entry_index_.emplace_back(a, b);
  }
  std::sort(entry_index_.begin(), entry_index_.end());
  entry_index_.erase(std::unique(entry_index_.begin(), entry_index_.end()), entry_index_.end());

  const std::size_t ncols = subset_.size();
  const std::size_t nent = entry_index_.size();

  // Column adjacency: entries incident to each column.
  std::vector<std::vector<std::uint32_t>> col_entries(ncols);
  for (std::uint32_t e = 0; e < nent; ++e) {
    const auto& [i, j] = entry_index_[e];
    col_entries[i].push_back(e);
    if (j != i) col_entries[j].push_back(e);
  }
  auto other_end = [&](std::uint32_t e, std::uint32_t col) {
    const auto& [i, j] = entry_index_[e];
    return i == col ? j : i;
  };

  std::vector<char> known(nent, 0);
  std::vector<std::uint32_t> unknown_count(ncols, 0);
  for (std::uint32_t c = 0; c < ncols; ++c)
    unknown_count[c] = static_cast<std::uint32_t>(col_entries[c].size());

  std::vector<std::uint32_t> row_mark(ncols, 0);
  std::vector<char> in_group(ncols, 0);
  std::uint32_t mark_epoch = 0;
  std::size_t remaining = nent;

  std::vector<std::uint32_t> order(ncols);
  for (std::uint32_t c = 0; c < ncols; ++c) order[c] = c;

  while (remaining > 0) {
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
      if (unknown_count[a] != unknown_count[b]) return unknown_count[a] > unknown_count[b];
      return a < b;
    });
    ++mark_epoch;
    Group group;
    for (std::uint32_t c : order) {
      if (unknown_count[c] == 0) continue;
      bool conflict = false;
      for (std::uint32_t e : col_entries[c]) {
        if (known[e]) continue;
        if (row_mark[other_end(e, c)] == mark_epoch) {
          conflict = true;
          break;
        }
      }
      if (conflict) continue;
      group.cols.push_back(c);
      in_group[c] = 1;
      // Mark the opposite row of every unknown entry, and the column's own
      // row: a later candidate sharing an unknown entry with c must see the
      // shared row as taken.
      row_mark[c] = mark_epoch;
      for (std::uint32_t e : col_entries[c]) {
        if (known[e]) continue;
        row_mark[other_end(e, c)] = mark_epoch;
      }
    }
    // Recovery schedule: for each member column, every still-unknown entry is
    // read from its opposite row, subtracting already-known entries whose
    // other endpoint is also a group column.
    for (std::uint32_t c : group.cols) {
      for (std::uint32_t e : col_entries[c]) {
        if (known[e]) continue;
        Recovery rec;
        rec.entry = e;
        rec.read_row = other_end(e, c);
        for (std::uint32_t e2 : col_entries[rec.read_row]) {
          if (e2 == e || !known[e2]) continue;
          if (in_group[other_end(e2, rec.read_row)]) rec.subtract.push_back(e2);
        }
        known[e] = 1;
        --remaining;
        --unknown_count[c];
        if (rec.read_row != c) --unknown_count[rec.read_row];
        group.recover.push_back(std::move(rec));
      }
    }
    for (std::uint32_t c : group.cols) in_group[c] = 0;
    if (group.cols.empty())
      throw NumericalError("adtape: hessian grouping failed to make progress");
    groups_.push_back(std::move(group));
  }
}

void Tape::sparse_hessian(std::span<const double> x, const HessianPlan& plan, Workspace& ws,
                          std::span<double> values) const {
  if (plan.tape_serial() != serial_)
    throw ConfigError("adtape: hessian plan was produced from a different tape");
  if (values.size() != plan.num_entries())
    throw DataError("adtape: hessian value buffer size mismatch");

  prepare_second_order(x, ws);
  std::vector<double> seed(input_count_, 0.0);
  std::vector<double> hv(input_count_, 0.0);
  for (const auto& group : plan.groups_) {
    for (std::uint32_t c : group.cols) seed[plan.subset_[c]] = 1.0;
    hessian_vector_product(seed, ws, hv);
    for (const auto& rec : group.recover) {
      double v = hv[plan.subset_[rec.read_row]];
      for (std::uint32_t e : rec.subtract) v -= values[e];
      values[rec.entry] = v;
    }
    for (std::uint32_t c : group.cols) seed[plan.subset_[c]] = 0.0;
  }
}

SparseSym Tape::hessian(std::span<const double> x, const SparsityPattern& pattern,
                        Workspace& ws) const {
  if (pattern.tape_serial() != serial_)
    throw ConfigError("adtape: sparsity pattern was produced from a different tape");
  std::vector<std::uint32_t> all(input_count_);
  for (std::uint32_t i = 0; i < input_count_; ++i) all[i] = i;
  HessianPlan plan(*this, pattern, all);
  SparseSym out;
  out.dim = static_cast<std::uint32_t>(input_count_);
  out.index = plan.entries();
  out.value.resize(out.index.size());
  sparse_hessian(x, plan, ws, out.value);
  return out;
}

}  // namespace hlik::ad
