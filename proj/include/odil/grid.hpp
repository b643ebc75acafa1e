#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace odil {

inline constexpr int kMaxRank = 3;

/// Multi-index on a grid of rank <= 3. Entries beyond the rank are zero.
using MultiIndex = std::array<int, kMaxRank>;

enum class Centering { node, cell };

std::string to_string(Centering c);
Centering centering_from_string(const std::string& s);

/// Uniform Cartesian lattice with 1 to 3 axes, row-major with the last axis
/// fastest. Immutable after construction.
class Grid {
 public:
  Grid() = default;
  Grid(std::vector<int> dims, std::vector<double> lo, std::vector<double> hi,
       Centering centering);

  int rank() const { return static_cast<int>(dims_.size()); }
  const std::vector<int>& dims() const { return dims_; }
  int dim(int axis) const { return dims_[axis]; }
  const std::vector<double>& lo() const { return lo_; }
  const std::vector<double>& hi() const { return hi_; }
  double spacing(int axis) const { return spacing_[axis]; }
  Centering centering() const { return centering_; }
  std::int64_t size() const { return size_; }
  std::int64_t stride(int axis) const { return strides_[axis]; }

  /// Row-major offset of `idx`. Throws naming the axis when out of range.
  std::int64_t flat_index(const MultiIndex& idx) const;
  MultiIndex unflatten(std::int64_t flat) const;
  bool contains(const MultiIndex& idx) const;

  /// Physical coordinate of a lattice point (node) or cell midpoint (cell).
  double coord(int axis, int i) const;

  bool operator==(const Grid& o) const;
  bool operator!=(const Grid& o) const { return !(*this == o); }

 private:
  std::vector<int> dims_;
  std::vector<double> lo_, hi_, spacing_;
  std::vector<std::int64_t> strides_;
  std::int64_t size_ = 0;
  Centering centering_ = Centering::node;
};

/// Values bound to a grid, stored flat in row-major order.
struct Field {
  Grid grid;
  std::vector<double> values;

  Field() = default;
  explicit Field(Grid g, double fill = 0.0);
  Field(Grid g, std::vector<double> v);

  double& operator[](std::int64_t i) { return values[i]; }
  double operator[](std::int64_t i) const { return values[i]; }
  double& at(const MultiIndex& idx) { return values[grid.flat_index(idx)]; }
  double at(const MultiIndex& idx) const { return values[grid.flat_index(idx)]; }

  bool all_finite() const;
};

Field operator-(const Field& a, const Field& b);
Field operator*(double s, const Field& a);

enum class NormKind { L1, L2, Linf };

/// Mean-based norms: L1 is the mean absolute value, L2 the root mean square.
double norm(const Field& f, NormKind which);
/// Norm of (f - ref) divided by the norm of ref; falls back to the absolute
/// norm of the difference when ref has zero norm.
double norm(const Field& f, NormKind which, const Field& relative_to);

/// Samples `f` at every lattice point (node) or cell midpoint (cell).
Field eval_on_grid(const Grid& grid,
                   const std::function<double(std::span<const double>)>& f);

/// Ordered set of grid points over which a residual block is evaluated.
class IndexSet {
 public:
  IndexSet() = default;

  /// Points at least `margin` away from every face.
  static IndexSet interior(const Grid& g, int margin = 1);
  /// Axis-aligned box [lo, hi] inclusive per axis.
  static IndexSet box(const Grid& g, const MultiIndex& lo, const MultiIndex& hi);
  /// The layer of points with idx[axis] == 0 (side 0) or dims-1 (side 1).
  static IndexSet boundary_face(const Grid& g, int axis, int side);
  static IndexSet explicit_list(const Grid& g, std::vector<MultiIndex> list);

  const Grid& grid() const { return grid_; }
  const std::vector<MultiIndex>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }

  /// Concatenation; both sets must live on the same grid.
  IndexSet& append(const IndexSet& other);

 private:
  IndexSet(Grid g, std::vector<MultiIndex> pts);
  Grid grid_;
  std::vector<MultiIndex> points_;
};

}  // namespace odil
