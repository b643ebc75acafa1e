#include "odil/grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "odil/error.hpp"

namespace odil {

std::string to_string(Centering c) { return c == Centering::node ? "node" : "cell"; }

Centering centering_from_string(const std::string& s) {
  if (s == "node") return Centering::node;
  if (s == "cell") return Centering::cell;
  throw Error("unknown centering '" + s + "' (expected node|cell)");
}

Grid::Grid(std::vector<int> dims, std::vector<double> lo, std::vector<double> hi,
           Centering centering)
    : dims_(std::move(dims)), lo_(std::move(lo)), hi_(std::move(hi)), centering_(centering) {
  const int r = rank();
  if (r < 1 || r > kMaxRank) throw Error("grid rank must be 1..3, got " + std::to_string(r));
  if (static_cast<int>(lo_.size()) != r || static_cast<int>(hi_.size()) != r)
    throw Error("grid bounds must have one entry per axis");
  spacing_.resize(r);
  strides_.assign(r, 1);
  const int min_points = centering_ == Centering::node ? 2 : 1;
  for (int a = 0; a < r; ++a) {
    if (dims_[a] < min_points)
      throw Error("grid axis " + std::to_string(a) + " needs at least " +
                  std::to_string(min_points) + " points");
    if (!(hi_[a] > lo_[a])) throw Error("grid axis " + std::to_string(a) + " has hi <= lo");
    const int intervals = centering_ == Centering::node ? dims_[a] - 1 : dims_[a];
    spacing_[a] = (hi_[a] - lo_[a]) / intervals;
  }
  for (int a = r - 2; a >= 0; --a) {
    strides_[a] = strides_[a + 1] * dims_[a + 1];
  }
  size_ = 1;
  for (int a = 0; a < r; ++a) {
    if (size_ > std::numeric_limits<std::int64_t>::max() / dims_[a])
      throw Error("grid too large for the index type");
    size_ *= dims_[a];
  }
}

std::int64_t Grid::flat_index(const MultiIndex& idx) const {
  std::int64_t off = 0;
  for (int a = 0; a < rank(); ++a) {
    if (idx[a] < 0 || idx[a] >= dims_[a])
      throw Error("index " + std::to_string(idx[a]) + " out of range on axis " +
                  std::to_string(a) + " (size " + std::to_string(dims_[a]) + ")");
    off += idx[a] * strides_[a];
  }
  return off;
}

MultiIndex Grid::unflatten(std::int64_t flat) const {
  if (flat < 0 || flat >= size_) throw Error("flat index out of range");
  MultiIndex idx{0, 0, 0};
  for (int a = 0; a < rank(); ++a) {
    idx[a] = static_cast<int>(flat / strides_[a]);
    flat %= strides_[a];
  }
  return idx;
}

bool Grid::contains(const MultiIndex& idx) const {
  for (int a = 0; a < rank(); ++a) {
    if (idx[a] < 0 || idx[a] >= dims_[a]) return false;
  }
  return true;
}

double Grid::coord(int axis, int i) const {
  const double shift = centering_ == Centering::cell ? 0.5 : 0.0;
  return lo_[axis] + (i + shift) * spacing_[axis];
}

bool Grid::operator==(const Grid& o) const {
  return dims_ == o.dims_ && lo_ == o.lo_ && hi_ == o.hi_ && centering_ == o.centering_;
}

Field::Field(Grid g, double fill) : grid(std::move(g)), values(grid.size(), fill) {}

Field::Field(Grid g, std::vector<double> v) : grid(std::move(g)), values(std::move(v)) {
  if (static_cast<std::int64_t>(values.size()) != grid.size())
    throw Error("field has " + std::to_string(values.size()) + " values, grid needs " +
                std::to_string(grid.size()));
}

bool Field::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

Field operator-(const Field& a, const Field& b) {
  if (a.grid != b.grid) throw Error("field grid mismatch");
  Field out(a.grid);
  for (std::size_t i = 0; i < a.values.size(); ++i) out.values[i] = a.values[i] - b.values[i];
  return out;
}

Field operator*(double s, const Field& a) {
  Field out(a.grid);
  for (std::size_t i = 0; i < a.values.size(); ++i) out.values[i] = s * a.values[i];
  return out;
}

double norm(const Field& f, NormKind which) {
  const auto& v = f.values;
  if (v.empty()) return 0.0;
  double acc = 0.0;
  switch (which) {
    case NormKind::L1:
      for (double x : v) acc += std::abs(x);
      return acc / v.size();
    case NormKind::L2:
      for (double x : v) acc += x * x;
      return std::sqrt(acc / v.size());
    case NormKind::Linf:
      for (double x : v) acc = std::max(acc, std::abs(x));
      return acc;
  }
  return acc;
}

double norm(const Field& f, NormKind which, const Field& relative_to) {
  if (f.grid != relative_to.grid) throw Error("norm: grid mismatch");
  const double num = norm(f - relative_to, which);
  const double den = norm(relative_to, which);
  return den == 0.0 ? num : num / den;
}

Field eval_on_grid(const Grid& grid,
                   const std::function<double(std::span<const double>)>& f) {
  Field out(grid);
  std::array<double, kMaxRank> x{};
  for (std::int64_t k = 0; k < grid.size(); ++k) {
    const MultiIndex idx = grid.unflatten(k);
    for (int a = 0; a < grid.rank(); ++a) x[a] = grid.coord(a, idx[a]);
    out.values[k] = f(std::span<const double>(x.data(), grid.rank()));
  }
  return out;
}

IndexSet::IndexSet(Grid g, std::vector<MultiIndex> pts)
    : grid_(std::move(g)), points_(std::move(pts)) {}

IndexSet IndexSet::box(const Grid& g, const MultiIndex& lo, const MultiIndex& hi) {
  std::vector<MultiIndex> pts;
  MultiIndex l{0, 0, 0}, h{0, 0, 0};
  for (int a = 0; a < g.rank(); ++a) {
    l[a] = std::max(lo[a], 0);
    h[a] = std::min(hi[a], g.dim(a) - 1);
    if (l[a] > h[a]) return IndexSet(g, {});
  }
  for (int i = l[0]; i <= h[0]; ++i)
    for (int j = l[1]; j <= h[1]; ++j)
      for (int k = l[2]; k <= h[2]; ++k) pts.push_back({i, j, k});
  return IndexSet(g, std::move(pts));
}

IndexSet IndexSet::interior(const Grid& g, int margin) {
  MultiIndex lo{0, 0, 0}, hi{0, 0, 0};
  for (int a = 0; a < g.rank(); ++a) {
    lo[a] = margin;
    hi[a] = g.dim(a) - 1 - margin;
  }
  return box(g, lo, hi);
}

IndexSet IndexSet::boundary_face(const Grid& g, int axis, int side) {
  if (axis < 0 || axis >= g.rank()) throw Error("boundary_face: bad axis");
  MultiIndex lo{0, 0, 0}, hi{0, 0, 0};
  for (int a = 0; a < g.rank(); ++a) hi[a] = g.dim(a) - 1;
  lo[axis] = hi[axis] = side == 0 ? 0 : g.dim(axis) - 1;
  return box(g, lo, hi);
}

IndexSet IndexSet::explicit_list(const Grid& g, std::vector<MultiIndex> list) {
  for (const auto& idx : list) g.flat_index(idx);
  return IndexSet(g, std::move(list));
}

IndexSet& IndexSet::append(const IndexSet& other) {
  if (other.grid_ != grid_) throw Error("IndexSet::append: grid mismatch");
  points_.insert(points_.end(), other.points_.begin(), other.points_.end());
  return *this;
}

}  // namespace odil
