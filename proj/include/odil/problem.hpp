#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "odil/grid.hpp"
#include "odil/sparse.hpp"
#include "odil/stencil.hpp"

namespace odil {

struct NormalSystem {
  SparseMatrix a;         // sum of J^T J plus damping on the diagonal
  std::vector<double> b;  // -sum of J^T r
};

/// A discrete loss assembled from residual blocks over a set of unknown
/// fields and scalar parameters.
///
/// The global unknown vector holds the fields one after another (declaration
/// order unless overridden by `set_layout`), each flattened row-major,
/// followed by the parameters.
class Problem {
 public:
  void add_unknown(const std::string& name, const Grid& grid, double initial = 0.0);
  void add_param(const std::string& name, double initial);
  /// Declares or replaces a known (constant) field.
  void set_known(const std::string& name, Field field);
  const Field& known(const std::string& name) const;

  /// Grids of all declared unknown and known fields, for building blocks.
  GridMap grids() const;

  void add_block(ResidualBlock block);
  void add_block(const std::string& name, const Expr& expr, IndexSet index_set, double weight = 1.0,
                 bool clip = false);
  const std::vector<ResidualBlock>& blocks() const { return blocks_; }
  const ResidualBlock& block(const std::string& name) const;

  /// Reorders the fields in the global vector. Must name each unknown once.
  void set_layout(const std::vector<std::string>& field_order);

  std::int64_t total_dofs() const { return total_dofs_; }
  std::int64_t residual_count() const;
  const std::vector<std::string>& field_order() const { return order_; }
  const std::vector<std::string>& param_names() const { return param_names_; }
  std::int64_t field_offset(const std::string& name) const;
  std::int64_t param_offset(const std::string& name) const;
  const Grid& unknown_grid(const std::string& name) const;

  /// Initial guess built from the declared initial values.
  std::vector<double> initial_vector() const;
  void set_initial(const std::string& field, const Field& value);
  void set_initial_param(const std::string& name, double value);

  Field field(std::span<const double> x, const std::string& name) const;
  FieldMap fields(std::span<const double> x) const;
  ParamMap params(std::span<const double> x) const;
  std::vector<double> pack(const FieldMap& fields, const ParamMap& params = {}) const;

  double loss(std::span<const double> x) const;
  std::vector<double> gradient(std::span<const double> x) const;
  double loss_and_gradient(std::span<const double> x, std::vector<double>& grad) const;
  /// Jacobian of all weighted residuals (blocks stacked in order) and the
  /// residual vector itself.
  SparseMatrix jacobian(std::span<const double> x, std::vector<double>* residuals = nullptr) const;
  NormalSystem normal_system(std::span<const double> x, double damping) const;
  /// Weighted residuals of one block.
  std::vector<double> block_residuals(std::span<const double> x, const std::string& block) const;

  /// Called by the optimizers before every epoch with the current iterate;
  /// problems with lagged terms update their known fields here.
  std::function<void(Problem&, std::span<const double>)> refresh;

  /// Reference for error tracking: relative L2 over the listed fields.
  void set_reference(FieldMap reference);
  /// Overrides the error metric.
  void set_error_metric(std::function<double(const Problem&, std::span<const double>)> metric);
  bool has_error_metric() const;
  double error(std::span<const double> x) const;

 private:
  struct Unknown {
    Grid grid;
    double initial = 0.0;
    std::optional<Field> initial_field;
  };

  void relayout();
  BlockInputs inputs(const ResidualBlock& b, std::span<const double> x) const;
  /// Per slot: the global column of the field start, or of the parameter.
  std::vector<std::int64_t> field_offsets(const ResidualBlock& b) const;
  void evaluate_block(const ResidualBlock& b, std::span<const double> x, std::vector<double>& res,
                      std::vector<double>* jac) const;

  std::map<std::string, Unknown> unknowns_;
  std::vector<std::string> order_;
  std::vector<std::string> param_names_;
  std::vector<double> param_initial_;
  FieldMap knowns_;
  std::vector<ResidualBlock> blocks_;
  std::map<std::string, std::int64_t> offsets_;
  std::int64_t total_dofs_ = 0;
  FieldMap reference_;
  std::function<double(const Problem&, std::span<const double>)> metric_;
};

}  // namespace odil
