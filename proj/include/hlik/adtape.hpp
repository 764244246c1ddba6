#pragma once

// Reverse-mode automatic differentiation over a recorded scalar expression
// graph ("tape"), with Hessian sparsity detection and sparse second
// derivatives evaluated as Hessian-vector products over groups of
// structurally orthogonal columns.
//
// A Tape is immutable after recording and may be evaluated concurrently;
// every evaluation works through a caller-owned Workspace. Branches
// (comparisons, min/max, fabs) are frozen at the recorded values.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hlik/errors.hpp"

namespace hlik::ad {

enum class Op : std::uint8_t {
  Input,
  Const,
  Add,   // a + b
  Sub,   // a - b
  Mul,   // a * b
  Div,   // a / b
  Neg,   // -a
  AddC,  // a + aux
  MulC,  // a * aux
  RSubC, // aux - a
  RDivC, // aux / a
  Exp,
  Log,
  PowC,  // a ^ aux
};

const char* op_name(Op op);

class Tape;
class TapeBuilder;

// Symmetric set of (i, j) input-index pairs with i <= j. Produced from a
// specific tape; hessian evaluation rejects a pattern from any other tape.
class SparsityPattern {
 public:
  std::span<const std::pair<std::uint32_t, std::uint32_t>> entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool contains(std::uint32_t i, std::uint32_t j) const;
  std::uint64_t tape_serial() const { return tape_serial_; }

 private:
  friend class Tape;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> entries_;  // sorted, i <= j
  std::uint64_t tape_serial_ = 0;
};

// Sparse symmetric matrix aligned with a sorted (i, j) entry list.
struct SparseSym {
  std::uint32_t dim = 0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> index;  // i <= j, sorted
  std::vector<double> value;

  double at(std::uint32_t i, std::uint32_t j) const;  // 0 outside the pattern
};

// Column grouping and recovery schedule for evaluating the Hessian of a tape
// restricted to a subset of its inputs. Groups are built greedily, one at a
// time: the column with the most unrecovered entries seeds a group, then any
// column without a row collision (among still-unknown entries) joins. Each
// group costs one Hessian-vector product.
class HessianPlan {
 public:
  HessianPlan(const Tape& tape, const SparsityPattern& pattern,
              std::span<const std::uint32_t> subset);

  std::size_t num_groups() const { return groups_.size(); }
  std::size_t num_entries() const { return entry_index_.size(); }
  // Entry list in subset-local coordinates, sorted.
  const std::vector<std::pair<std::uint32_t, std::uint32_t>>& entries() const {
    return entry_index_;
  }
  std::span<const std::uint32_t> subset() const { return subset_; }
  std::uint64_t tape_serial() const { return tape_serial_; }

 private:
  friend class Tape;
  struct Recovery {
    std::uint32_t entry;          // index into entry_index_
    std::uint32_t read_row;       // subset-local row whose Hv component is read
    std::vector<std::uint32_t> subtract;  // previously recovered entries to subtract
  };
  struct Group {
    std::vector<std::uint32_t> cols;  // subset-local
    std::vector<Recovery> recover;
  };
  std::vector<std::uint32_t> subset_;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> entry_index_;
  std::vector<Group> groups_;
  std::uint64_t tape_serial_ = 0;
};

class Tape {
 public:
  struct Node {
    Op op;
    std::uint32_t a = 0, b = 0;
    double aux = 0.0;
  };

  // Caller-owned scratch space; reusable across evaluations of the same tape.
  class Workspace {
   public:
    Workspace() = default;

   private:
    friend class Tape;
    void resize(std::size_t n, bool second_order);
    std::vector<double> val, pa, pb, haa, hab, hbb, adj, dot, adjdot;
    bool prepared_second_order = false;
    std::uint64_t serial = 0;
  };

  std::size_t input_count() const { return input_count_; }
  std::size_t node_count() const { return nodes_.size(); }
  std::uint32_t output_index() const { return output_; }
  std::uint64_t serial() const { return serial_; }

  // Forward evaluation at x (length input_count). Throws NumericalError with
  // the offending node index on a non-finite intermediate.
  double value(std::span<const double> x, Workspace& ws) const;

  // One reverse sweep; grad has length input_count.
  double value_and_gradient(std::span<const double> x, Workspace& ws,
                            std::span<double> grad) const;

  // Second-order evaluation: prepare once per x (forward values + local
  // partials + reverse adjoints), then any number of Hessian-vector products.
  void prepare_second_order(std::span<const double> x, Workspace& ws) const;
  double prepared_value(const Workspace& ws) const;
  void prepared_gradient(const Workspace& ws, std::span<double> grad) const;
  // out += nothing; out is overwritten with H * seed. seed/out length input_count.
  void hessian_vector_product(std::span<const double> seed, Workspace& ws,
                              std::span<double> out) const;

  // Conservative symmetric second-derivative pattern (superset of the true
  // nonzero set; equality for the model objectives used here). Detected once
  // at recording time.
  const SparsityPattern& hessian_pattern() const { return pattern_; }

  // Sparse Hessian restricted to `plan`. Values are aligned with
  // plan.entries(); entries outside the pattern are identically zero.
  void sparse_hessian(std::span<const double> x, const HessianPlan& plan, Workspace& ws,
                      std::span<double> values) const;

  // Convenience for tests and small problems: full-input plan built on the fly.
  SparseSym hessian(std::span<const double> x, const SparsityPattern& pattern,
                    Workspace& ws) const;

 private:
  friend class TapeBuilder;
  friend class HessianPlan;
  void detect_pattern();

  std::vector<Node> nodes_;
  std::size_t input_count_ = 0;
  std::uint32_t output_ = 0;
  SparsityPattern pattern_;
  std::uint64_t serial_ = 0;
};

// Value-plus-node handle used while recording. Arithmetic on Vars appends
// nodes to the owning builder. Comparisons read the recorded values, which
// freezes branch structure at the recording point.
class Var {
 public:
  Var() = default;
  double value() const { return value_; }

  friend Var operator+(const Var& a, const Var& b);
  friend Var operator-(const Var& a, const Var& b);
  friend Var operator*(const Var& a, const Var& b);
  friend Var operator/(const Var& a, const Var& b);
  friend Var operator+(const Var& a, double c);
  friend Var operator+(double c, const Var& a);
  friend Var operator-(const Var& a, double c);
  friend Var operator-(double c, const Var& a);
  friend Var operator*(const Var& a, double c);
  friend Var operator*(double c, const Var& a);
  friend Var operator/(const Var& a, double c);
  friend Var operator/(double c, const Var& a);
  Var operator-() const;
  Var& operator+=(const Var& o) { return *this = *this + o; }
  Var& operator+=(double c) { return *this = *this + c; }
  Var& operator-=(const Var& o) { return *this = *this - o; }
  Var& operator*=(const Var& o) { return *this = *this * o; }

  friend Var exp(const Var& a);
  friend Var log(const Var& a);
  friend Var pow(const Var& a, double c);
  friend Var pow(const Var& a, const Var& b);  // exp(b log a), a > 0 at recording
  friend Var sqrt(const Var& a);

  // Frozen-branch comparisons.
  friend bool operator<(const Var& a, const Var& b) { return a.value_ < b.value_; }
  friend bool operator<(const Var& a, double b) { return a.value_ < b; }
  friend bool operator<(double a, const Var& b) { return a < b.value_; }
  friend bool operator>(const Var& a, const Var& b) { return a.value_ > b.value_; }
  friend bool operator>(const Var& a, double b) { return a.value_ > b; }
  friend bool operator>(double a, const Var& b) { return a > b.value_; }
  friend Var fmax(const Var& a, const Var& b) { return a.value_ >= b.value_ ? a : b; }
  friend Var fmin(const Var& a, const Var& b) { return a.value_ <= b.value_ ? a : b; }
  friend Var fabs(const Var& a);

 private:
  friend class TapeBuilder;
  Var(TapeBuilder* builder, std::uint32_t node, double value)
      : builder_(builder), node_(node), value_(value) {}
  TapeBuilder* builder_ = nullptr;
  std::uint32_t node_ = 0;
  double value_ = 0.0;
};

// Operations outside the supported set reject at record time, naming the op.
Var sin(const Var&);
Var cos(const Var&);
Var tan(const Var&);
Var tgamma(const Var&);
Var lgamma(const Var&);
Var erf(const Var&);

class TapeBuilder {
 public:
  explicit TapeBuilder(std::span<const double> x0);

  std::span<const Var> inputs() const { return inputs_; }
  Var constant(double c);
  Tape finish(const Var& output) &&;

  // Low-level node append used by the Var operator overloads.
  std::uint32_t push(Op op, std::uint32_t a, std::uint32_t b, double aux);

 private:
  friend class Var;
  std::vector<Tape::Node> nodes_;
  std::vector<Var> inputs_;
  std::size_t input_count_ = 0;
  bool finished_ = false;
};

// Records f over inputs initialized at x0. f: (std::span<const Var>) -> Var.
template <class F>
Tape record(std::span<const double> x0, F&& f) {
  TapeBuilder builder(x0);
  Var out = f(builder.inputs());
  return std::move(builder).finish(out);
}

}  // namespace hlik::ad
