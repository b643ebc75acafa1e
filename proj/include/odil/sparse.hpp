#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace odil {

/// Compressed sparse row matrix. Column indices are sorted and unique within
/// each row.
class SparseMatrix {
 public:
  SparseMatrix() = default;
  SparseMatrix(std::int64_t n_rows, std::int64_t n_cols, std::vector<std::int64_t> row_ptr,
               std::vector<std::int64_t> col_idx, std::vector<double> vals);

  /// Sums duplicate (row, col) entries and sorts columns within each row.
  static SparseMatrix from_triplets(std::int64_t n_rows, std::int64_t n_cols,
                                    std::span<const std::int64_t> rows,
                                    std::span<const std::int64_t> cols,
                                    std::span<const double> vals);
  static SparseMatrix identity(std::int64_t n);

  std::int64_t n_rows() const { return n_rows_; }
  std::int64_t n_cols() const { return n_cols_; }
  std::int64_t nnz() const { return static_cast<std::int64_t>(vals_.size()); }
  const std::vector<std::int64_t>& row_ptr() const { return row_ptr_; }
  const std::vector<std::int64_t>& col_idx() const { return col_idx_; }
  const std::vector<double>& vals() const { return vals_; }
  std::vector<double>& vals() { return vals_; }

  /// Entry (i, j), zero when not stored.
  double coeff(std::int64_t i, std::int64_t j) const;
  std::vector<double> diagonal() const;
  bool same_pattern(const SparseMatrix& o) const;

  std::vector<double> matvec(std::span<const double> x) const;
  void matvec(std::span<const double> x, std::span<double> y) const;
  /// y = A^T x
  std::vector<double> matvec_transpose(std::span<const double> x) const;
  SparseMatrix transpose() const;

  /// MatrixMarket coordinate, real, general.
  void write_matrix_market(const std::filesystem::path& path) const;

 private:
  std::int64_t n_rows_ = 0, n_cols_ = 0;
  std::vector<std::int64_t> row_ptr_{0};
  std::vector<std::int64_t> col_idx_;
  std::vector<double> vals_;
};

/// J^T J + damping * I.
SparseMatrix gram(const SparseMatrix& jac, double damping = 0.0);

enum class Ordering { natural, rcm, nested_dissection, automatic };

/// Fill-reducing permutation of a symmetric pattern: perm[new] = old.
std::vector<std::int64_t> compute_ordering(const SparseMatrix& a, Ordering kind);

namespace detail {
struct LowerPattern {
  std::vector<std::int64_t> ptr, row, src;
};
}  // namespace detail

/// Sparse Cholesky factorization P A P^T = L L^T of an SPD matrix.
///
/// `analyze` depends only on the sparsity pattern and can be reused for any
/// matrix with the same pattern via `factorize`.
class SparseCholesky {
 public:
  SparseCholesky() = default;
  explicit SparseCholesky(const SparseMatrix& a, Ordering ordering = Ordering::automatic);

  void analyze(const SparseMatrix& a, Ordering ordering = Ordering::automatic);
  /// Throws SingularMatrixError on a non-positive pivot.
  void factorize(const SparseMatrix& a);
  std::vector<double> solve(std::span<const double> b) const;

  bool analyzed() const { return analyzed_; }
  bool matches(const SparseMatrix& a) const;
  /// Stored entries of L, counting zeros kept inside dense supernode blocks.
  std::int64_t factor_nnz() const { return factor_nnz_; }
  const std::vector<std::int64_t>& permutation() const { return perm_; }

 private:
  bool analyzed_ = false;
  std::int64_t n_ = 0;
  std::vector<std::int64_t> perm_, inv_perm_;
  // Lower triangle of the permuted matrix by columns, with the source
  // position in the input CSR values for each entry.
  detail::LowerPattern lower_;
  // Supernode s owns columns [super_ptr_[s], super_ptr_[s+1]) and stores a
  // dense column-major block over rows srow_[srow_ptr_[s] ..] at sval_ptr_[s].
  std::vector<std::int64_t> super_ptr_, col_super_, srow_ptr_, srow_, sval_ptr_;
  std::vector<double> lvals_;
  std::int64_t factor_nnz_ = 0;
  std::vector<std::int64_t> pattern_ptr_, pattern_cols_;  // input pattern fingerprint
};

/// Solves A x = b for SPD A. Throws SingularMatrixError (suggesting damping)
/// when the factorization breaks down.
std::vector<double> solve_direct(const SparseMatrix& a, std::span<const double> b,
                                 Ordering ordering = Ordering::automatic);

enum class Preconditioner { none, jacobi };

struct CgResult {
  std::vector<double> x;
  int iterations = 0;
  double relative_residual = 0.0;
  bool converged = false;
};

/// Preconditioned conjugate gradient from x = 0, stopping when
/// ||b - A x||_2 <= tol ||b||_2.
CgResult solve_cg(const SparseMatrix& a, std::span<const double> b, double tol, int max_iter,
                  Preconditioner precond = Preconditioner::jacobi);

}  // namespace odil
