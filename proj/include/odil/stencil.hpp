#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "odil/grid.hpp"

namespace odil {

enum class Op {
  constant,
  param,
  unknown,
  known,
  add,
  sub,
  mul,
  div,
  neg,
  pow,
  sin,
  cos,
  exp,
  sqrt,
  abs,
  max,
  min,
  select_sign,
};

struct ExprNode;

/// Handle to an immutable node of a compact-stencil expression tree.
/// Subtrees may be shared; a shared node is evaluated once per grid point.
class Expr {
 public:
  Expr(double value);  // NOLINT: constants convert implicitly
  explicit Expr(std::shared_ptr<const ExprNode> node) : node_(std::move(node)) {}

  const ExprNode& node() const { return *node_; }
  const ExprNode* get() const { return node_.get(); }

 private:
  std::shared_ptr<const ExprNode> node_;
};

struct ExprNode {
  Op op = Op::constant;
  double value = 0.0;
  std::string name;
  MultiIndex offset{0, 0, 0};
  int offset_rank = 0;
  std::vector<Expr> args;
};

/// A named field appearing in expressions, either an unknown (differentiated)
/// or a known constant field. Offsets are relative to the evaluation point
/// and address the trailing axes of the block grid when the field has lower
/// rank (a 2D velocity read from a space-time block, for instance).
class FieldRef {
 public:
  FieldRef(std::string name, bool unknown) : name_(std::move(name)), unknown_(unknown) {}
  Expr operator()() const;
  Expr operator()(int o0) const;
  Expr operator()(int o0, int o1) const;
  Expr operator()(int o0, int o1, int o2) const;
  Expr at(std::span<const int> offset) const;
  const std::string& name() const { return name_; }

 private:
  std::string name_;
  bool unknown_;
};

FieldRef unknown_field(std::string name);
FieldRef known_field(std::string name);
Expr param(std::string name);

Expr operator+(const Expr& a, const Expr& b);
Expr operator-(const Expr& a, const Expr& b);
Expr operator*(const Expr& a, const Expr& b);
Expr operator/(const Expr& a, const Expr& b);
Expr operator-(const Expr& a);
Expr pow(const Expr& a, const Expr& b);
Expr sin(const Expr& a);
Expr cos(const Expr& a);
Expr exp(const Expr& a);
Expr sqrt(const Expr& a);
Expr abs(const Expr& a);
Expr max(const Expr& a, const Expr& b);
Expr min(const Expr& a, const Expr& b);
/// `sign >= 0 ? if_nonneg : if_neg`; the derivative follows the chosen branch.
Expr select_by_sign(const Expr& sign, const Expr& if_nonneg, const Expr& if_neg);

using FieldMap = std::map<std::string, Field>;
using ParamMap = std::map<std::string, double>;
using GridMap = std::map<std::string, Grid>;

/// Sparse derivative triplets: residual row, unknown column, value.
struct JacobianTriplets {
  std::vector<std::int64_t> rows;
  std::vector<std::int64_t> cols;
  std::vector<double> vals;
};

/// Field and parameter values resolved for one evaluation, indexed by the
/// block's own field/parameter numbering.
struct BlockInputs {
  std::vector<std::span<const double>> unknowns;
  std::vector<std::span<const double>> knowns;
  std::vector<double> params;
};

/// One differentiable quantity a residual depends on.
struct Slot {
  enum class Kind { unknown, param } kind;
  int id;             // block-local unknown field or parameter id
  MultiIndex offset;  // unknown fields only
  int offset_rank = 0;
};

/// A residual expression compiled for evaluation over an index set.
///
/// Construction validates every name against `grids`, checks that all
/// offsets stay inside their field's grid for every point, and precomputes
/// the per-point flat indices so that evaluation loops do no bounds logic.
/// With `clip` set, points whose stencil would leave a grid are dropped
/// instead of raising.
class ResidualBlock {
 public:
  ResidualBlock(std::string name, const Expr& expr, IndexSet index_set, const GridMap& grids,
                double weight = 1.0, bool clip = false);

  const std::string& name() const { return name_; }
  double weight() const { return weight_; }
  const IndexSet& index_set() const { return index_set_; }
  std::int64_t rows() const { return static_cast<std::int64_t>(index_set_.size()); }

  const std::vector<std::string>& unknown_names() const { return unknown_names_; }
  const std::vector<std::string>& known_names() const { return known_names_; }
  const std::vector<std::string>& param_names() const { return param_names_; }
  const std::vector<Slot>& slots() const { return slots_; }
  int slot_count() const { return static_cast<int>(slots_.size()); }

  /// Flat index into the unknown field of `slot` at residual `row`. Only
  /// meaningful for unknown slots.
  std::int64_t slot_index(std::int64_t row, int slot) const {
    return slot_flat_[row * slots_.size() + slot];
  }

  /// Weighted residuals for rows [begin, end) written to `out` (length
  /// end - begin). When `jac` is non-empty it receives, row-major, the
  /// derivative of each residual with respect to every slot.
  void evaluate(const BlockInputs& in, std::int64_t begin, std::int64_t end,
                std::span<double> out, std::span<double> jac) const;

  /// Whole-block evaluation, chunked over rows in parallel.
  void evaluate(const BlockInputs& in, std::span<double> out, std::span<double> jac) const;

  /// Resolves inputs by name; throws naming the first unbound name.
  BlockInputs bind(const FieldMap& fields, const ParamMap& params) const;

 private:
  struct Instr {
    Op op;
    int a = -1, b = -1, c = -1;
    double value = 0.0;
    int src = -1;        // unknown: slot id; param: param id; known: known ref id
    int dbegin = 0;      // offset of this node's derivative list
    int dcount = 0;
    int map_a = -1;      // offsets into maps_ aligned with the node's list
    int map_b = -1;
    int map_c = -1;
  };
  struct KnownRef {
    int id;
    MultiIndex offset;
    int offset_rank;
  };

  int compile(const Expr& e, std::map<const ExprNode*, int>& seen);
  void finalize_derivatives();
  void run(const BlockInputs& in, std::int64_t row, double* vals, double* derivs,
           bool with_derivs) const;

  std::string name_;
  double weight_;
  IndexSet index_set_;
  std::vector<std::string> unknown_names_, known_names_, param_names_;
  std::vector<Slot> slots_;
  std::vector<KnownRef> known_refs_;
  std::vector<Instr> program_;
  std::vector<int> slot_lists_;  // concatenated sorted slot ids per node
  std::vector<int> maps_;
  int deriv_size_ = 0;
  std::vector<std::int64_t> slot_flat_;   // rows x slots
  std::vector<std::int64_t> known_flat_;  // rows x known refs
};

/// Weighted residuals of `block`, one per index-set point in order.
std::vector<double> eval_residuals(const ResidualBlock& block, const FieldMap& fields,
                                   const ParamMap& params = {});

/// Jacobian with columns laid out as the block's unknown fields in name
/// order, each occupying grid.size() consecutive columns.
JacobianTriplets eval_jacobian(const ResidualBlock& block, const FieldMap& fields,
                               const ParamMap& params = {});

/// Derivative of each weighted residual with respect to a scalar parameter.
std::vector<double> eval_param_gradient(const ResidualBlock& block, const FieldMap& fields,
                                        const ParamMap& params, const std::string& param_name);

}  // namespace odil
