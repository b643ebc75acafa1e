#include "odil/problem.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "odil/error.hpp"

namespace odil {

void Problem::add_unknown(const std::string& name, const Grid& grid, double initial) {
  if (unknowns_.count(name) || knowns_.count(name))
    throw Error("field '" + name + "' declared twice");
  unknowns_[name] = Unknown{grid, initial, std::nullopt};
  order_.push_back(name);
  relayout();
}

void Problem::add_param(const std::string& name, double initial) {
  if (std::find(param_names_.begin(), param_names_.end(), name) != param_names_.end())
    throw Error("parameter '" + name + "' declared twice");
  param_names_.push_back(name);
  param_initial_.push_back(initial);
  relayout();
}

void Problem::set_known(const std::string& name, Field field) {
  if (unknowns_.count(name)) throw Error("field '" + name + "' is already an unknown");
  const auto it = knowns_.find(name);
  if (it != knowns_.end() && it->second.grid != field.grid)
    throw Error("known field '" + name + "': grid changed");
  knowns_[name] = std::move(field);
}

const Field& Problem::known(const std::string& name) const {
  const auto it = knowns_.find(name);
  if (it == knowns_.end()) throw Error("no known field '" + name + "'");
  return it->second;
}

GridMap Problem::grids() const {
  GridMap g;
  for (const auto& [name, u] : unknowns_) g.emplace(name, u.grid);
  for (const auto& [name, f] : knowns_) g.emplace(name, f.grid);
  return g;
}

void Problem::add_block(ResidualBlock block) {
  for (const auto& n : block.unknown_names())
    if (!unknowns_.count(n)) throw Error("block '" + block.name() + "': '" + n + "' is not an unknown");
  for (const auto& n : block.known_names())
    if (!knowns_.count(n)) throw Error("block '" + block.name() + "': '" + n + "' is not a known field");
  for (const auto& n : block.param_names())
    if (std::find(param_names_.begin(), param_names_.end(), n) == param_names_.end())
      throw Error("block '" + block.name() + "': unbound parameter '" + n + "'");
  for (const auto& b : blocks_)
    if (b.name() == block.name()) throw Error("block '" + block.name() + "' added twice");
  blocks_.push_back(std::move(block));
}

void Problem::add_block(const std::string& name, const Expr& expr, IndexSet index_set, double weight,
                        bool clip) {
  add_block(ResidualBlock(name, expr, std::move(index_set), grids(), weight, clip));
}

const ResidualBlock& Problem::block(const std::string& name) const {
  for (const auto& b : blocks_)
    if (b.name() == name) return b;
  throw Error("no block '" + name + "'");
}

void Problem::set_layout(const std::vector<std::string>& field_order) {
  auto sorted = field_order;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::string> names;
  for (const auto& [n, u] : unknowns_) names.push_back(n);
  if (sorted != names) throw Error("set_layout: order must list every unknown field exactly once");
  order_ = field_order;
  relayout();
}

void Problem::relayout() {
  offsets_.clear();
  std::int64_t off = 0;
  for (const auto& n : order_) {
    offsets_[n] = off;
    off += unknowns_.at(n).grid.size();
  }
  total_dofs_ = off + static_cast<std::int64_t>(param_names_.size());
}

std::int64_t Problem::residual_count() const {
  std::int64_t n = 0;
  for (const auto& b : blocks_) n += b.rows();
  return n;
}

std::int64_t Problem::field_offset(const std::string& name) const {
  const auto it = offsets_.find(name);
  if (it == offsets_.end()) throw Error("no unknown field '" + name + "'");
  return it->second;
}

std::int64_t Problem::param_offset(const std::string& name) const {
  const auto it = std::find(param_names_.begin(), param_names_.end(), name);
  if (it == param_names_.end()) throw Error("no parameter '" + name + "'");
  return total_dofs_ - static_cast<std::int64_t>(param_names_.size()) + (it - param_names_.begin());
}

const Grid& Problem::unknown_grid(const std::string& name) const {
  const auto it = unknowns_.find(name);
  if (it == unknowns_.end()) throw Error("no unknown field '" + name + "'");
  return it->second.grid;
}

std::vector<double> Problem::initial_vector() const {
  std::vector<double> x(total_dofs_);
  for (const auto& n : order_) {
    const Unknown& u = unknowns_.at(n);
    const auto off = offsets_.at(n);
    if (u.initial_field) {
      std::copy(u.initial_field->values.begin(), u.initial_field->values.end(), x.begin() + off);
    } else {
      std::fill(x.begin() + off, x.begin() + off + u.grid.size(), u.initial);
    }
  }
  for (std::size_t k = 0; k < param_names_.size(); ++k) x[param_offset(param_names_[k])] = param_initial_[k];
  return x;
}

void Problem::set_initial(const std::string& field, const Field& value) {
  auto it = unknowns_.find(field);
  if (it == unknowns_.end()) throw Error("no unknown field '" + field + "'");
  if (value.grid != it->second.grid) throw Error("set_initial: grid mismatch for '" + field + "'");
  it->second.initial_field = value;
}

void Problem::set_initial_param(const std::string& name, double value) {
  const auto it = std::find(param_names_.begin(), param_names_.end(), name);
  if (it == param_names_.end()) throw Error("no parameter '" + name + "'");
  param_initial_[it - param_names_.begin()] = value;
}

Field Problem::field(std::span<const double> x, const std::string& name) const {
  const Grid& g = unknown_grid(name);
  const auto off = field_offset(name);
  return Field(g, std::vector<double>(x.begin() + off, x.begin() + off + g.size()));
}

FieldMap Problem::fields(std::span<const double> x) const {
  FieldMap m;
  for (const auto& n : order_) m.emplace(n, field(x, n));
  return m;
}

ParamMap Problem::params(std::span<const double> x) const {
  ParamMap m;
  for (const auto& n : param_names_) m[n] = x[param_offset(n)];
  return m;
}

std::vector<double> Problem::pack(const FieldMap& fields, const ParamMap& params) const {
  std::vector<double> x = initial_vector();
  for (const auto& [n, f] : fields) {
    if (f.grid != unknown_grid(n)) throw Error("pack: grid mismatch for '" + n + "'");
    std::copy(f.values.begin(), f.values.end(), x.begin() + field_offset(n));
  }
  for (const auto& [n, v] : params) x[param_offset(n)] = v;
  return x;
}

BlockInputs Problem::inputs(const ResidualBlock& b, std::span<const double> x) const {
  if (static_cast<std::int64_t>(x.size()) != total_dofs_)
    throw Error("unknown vector has length " + std::to_string(x.size()) + ", expected " +
                std::to_string(total_dofs_));
  BlockInputs in;
  for (const auto& n : b.unknown_names())
    in.unknowns.push_back(x.subspan(offsets_.at(n), unknowns_.at(n).grid.size()));
  for (const auto& n : b.known_names()) in.knowns.emplace_back(knowns_.at(n).values);
  for (const auto& n : b.param_names()) in.params.push_back(x[param_offset(n)]);
  return in;
}

std::vector<std::int64_t> Problem::field_offsets(const ResidualBlock& b) const {
  std::vector<std::int64_t> cols;
  for (const auto& s : b.slots()) {
    cols.push_back(s.kind == Slot::Kind::unknown ? offsets_.at(b.unknown_names()[s.id])
                                                 : param_offset(b.param_names()[s.id]));
  }
  return cols;
}

void Problem::evaluate_block(const ResidualBlock& b, std::span<const double> x, std::vector<double>& res,
                             std::vector<double>* jac) const {
  const auto in = inputs(b, x);
  res.assign(b.rows(), 0.0);
  if (jac) jac->assign(b.rows() * b.slot_count(), 0.0);
  b.evaluate(in, res, jac ? std::span<double>(*jac) : std::span<double>());
  for (std::int64_t r = 0; r < b.rows(); ++r) {
    if (!std::isfinite(res[r])) {
      const auto& p = b.index_set().points()[r];
      std::ostringstream msg;
      msg << "block '" << b.name() << "': non-finite residual at index (" << p[0];
      for (int a = 1; a < b.index_set().grid().rank(); ++a) msg << ", " << p[a];
      msg << ")";
      throw NonFiniteError(msg.str());
    }
  }
}

double Problem::loss(std::span<const double> x) const {
  double total = 0.0;
  std::vector<double> res;
  for (const auto& b : blocks_) {
    if (b.weight() == 0.0) continue;
    evaluate_block(b, x, res, nullptr);
    for (double r : res) total += r * r;
  }
  return total;
}

double Problem::loss_and_gradient(std::span<const double> x, std::vector<double>& grad) const {
  grad.assign(total_dofs_, 0.0);
  double total = 0.0;
  std::vector<double> res, jac;
  for (const auto& b : blocks_) {
    if (b.weight() == 0.0) continue;
    evaluate_block(b, x, res, &jac);
    const auto base = field_offsets(b);
    const int ns = b.slot_count();
    for (std::int64_t r = 0; r < b.rows(); ++r) {
      total += res[r] * res[r];
      for (int s = 0; s < ns; ++s) {
        const double d = jac[r * ns + s];
        if (d == 0.0) continue;
        const auto col = b.slots()[s].kind == Slot::Kind::unknown ? base[s] + b.slot_index(r, s) : base[s];
        grad[col] += 2.0 * res[r] * d;
      }
    }
  }
  return total;
}

std::vector<double> Problem::gradient(std::span<const double> x) const {
  std::vector<double> g;
  loss_and_gradient(x, g);
  return g;
}

SparseMatrix Problem::jacobian(std::span<const double> x, std::vector<double>* residuals) const {
  std::vector<std::int64_t> rows, cols;
  std::vector<double> vals;
  if (residuals) residuals->clear();
  std::vector<double> res, jac;
  std::int64_t row0 = 0;
  for (const auto& b : blocks_) {
    if (b.weight() == 0.0) {
      if (residuals) residuals->insert(residuals->end(), b.rows(), 0.0);
      row0 += b.rows();
      continue;
    }
    evaluate_block(b, x, res, &jac);
    const auto base = field_offsets(b);
    const int ns = b.slot_count();
    for (std::int64_t r = 0; r < b.rows(); ++r) {
      for (int s = 0; s < ns; ++s) {
        const double d = jac[r * ns + s];
        if (d == 0.0) continue;
        rows.push_back(row0 + r);
        cols.push_back(b.slots()[s].kind == Slot::Kind::unknown ? base[s] + b.slot_index(r, s) : base[s]);
        vals.push_back(d);
      }
    }
    if (residuals) residuals->insert(residuals->end(), res.begin(), res.end());
    row0 += b.rows();
  }
  return SparseMatrix::from_triplets(row0, total_dofs_, rows, cols, vals);
}

NormalSystem Problem::normal_system(std::span<const double> x, double damping) const {
  if (!(damping >= 0.0)) throw Error("normal_system: damping must be nonnegative");
  std::vector<double> r;
  const SparseMatrix j = jacobian(x, &r);
  NormalSystem sys{gram(j, damping), j.matvec_transpose(r)};
  for (auto& v : sys.b) v = -v;
  return sys;
}

std::vector<double> Problem::block_residuals(std::span<const double> x, const std::string& name) const {
  std::vector<double> res;
  evaluate_block(block(name), x, res, nullptr);
  return res;
}

void Problem::set_reference(FieldMap reference) {
  for (const auto& [n, f] : reference)
    if (f.grid != unknown_grid(n)) throw Error("reference for '" + n + "' has a different grid");
  reference_ = std::move(reference);
}

void Problem::set_error_metric(std::function<double(const Problem&, std::span<const double>)> metric) {
  metric_ = std::move(metric);
}

bool Problem::has_error_metric() const { return metric_ || !reference_.empty(); }

double Problem::error(std::span<const double> x) const {
  if (metric_) return metric_(*this, x);
  if (reference_.empty()) return std::nan("");
  double num = 0.0, den = 0.0;
  for (const auto& [n, ref] : reference_) {
    const auto off = field_offset(n);
    for (std::int64_t i = 0; i < ref.grid.size(); ++i) {
      const double d = x[off + i] - ref.values[i];
      num += d * d;
      den += ref.values[i] * ref.values[i];
    }
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

}  // namespace odil
