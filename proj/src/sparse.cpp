#include "odil/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

#include <cblas.h>

#include "odil/error.hpp"
#include "odil/parallel.hpp"

extern "C" void dpotrf_(const char* uplo, const int* n, double* a, const int* lda, int* info);

namespace odil {

SparseMatrix::SparseMatrix(std::int64_t n_rows, std::int64_t n_cols,
                           std::vector<std::int64_t> row_ptr, std::vector<std::int64_t> col_idx,
                           std::vector<double> vals)
    : n_rows_(n_rows),
      n_cols_(n_cols),
      row_ptr_(std::move(row_ptr)),
      col_idx_(std::move(col_idx)),
      vals_(std::move(vals)) {
  if (static_cast<std::int64_t>(row_ptr_.size()) != n_rows_ + 1 || row_ptr_.front() != 0)
    throw Error("csr: row_ptr must have n_rows+1 entries starting at 0");
  if (col_idx_.size() != vals_.size() ||
      row_ptr_.back() != static_cast<std::int64_t>(col_idx_.size()))
    throw Error("csr: array lengths disagree");
  for (std::int64_t i = 0; i < n_rows_; ++i) {
    if (row_ptr_[i + 1] < row_ptr_[i]) throw Error("csr: row_ptr not monotone");
    for (std::int64_t p = row_ptr_[i]; p < row_ptr_[i + 1]; ++p) {
      if (col_idx_[p] < 0 || col_idx_[p] >= n_cols_) throw Error("csr: column out of range");
      if (p > row_ptr_[i] && col_idx_[p] <= col_idx_[p - 1])
        throw Error("csr: columns not sorted/unique in row " + std::to_string(i));
    }
  }
}

SparseMatrix SparseMatrix::from_triplets(std::int64_t n_rows, std::int64_t n_cols,
                                         std::span<const std::int64_t> rows,
                                         std::span<const std::int64_t> cols,
                                         std::span<const double> vals) {
  if (rows.size() != cols.size() || rows.size() != vals.size())
    throw Error("from_triplets: array lengths disagree");
  std::vector<std::int64_t> count(n_rows + 1, 0);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= n_rows || cols[k] < 0 || cols[k] >= n_cols)
      throw Error("from_triplets: index out of range");
    ++count[rows[k] + 1];
  }
  std::partial_sum(count.begin(), count.end(), count.begin());
  std::vector<std::int64_t> pos(count.begin(), count.end() - 1);
  std::vector<std::int64_t> tc(rows.size());
  std::vector<double> tv(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto p = pos[rows[k]]++;
    tc[p] = cols[k];
    tv[p] = vals[k];
  }
  // Sort each row by column and merge duplicates with a dense marker.
  std::vector<std::int64_t> row_ptr(n_rows + 1, 0), col_idx;
  std::vector<double> out;
  col_idx.reserve(rows.size());
  out.reserve(rows.size());
  std::vector<std::int64_t> where(n_cols, -1);
  std::vector<std::int64_t> idx;
  for (std::int64_t i = 0; i < n_rows; ++i) {
    const std::int64_t start = static_cast<std::int64_t>(col_idx.size());
    for (std::int64_t p = count[i]; p < count[i + 1]; ++p) {
      const auto c = tc[p];
      if (where[c] >= start) {
        out[where[c]] += tv[p];
      } else {
        where[c] = static_cast<std::int64_t>(col_idx.size());
        col_idx.push_back(c);
        out.push_back(tv[p]);
      }
    }
    const std::int64_t end = static_cast<std::int64_t>(col_idx.size());
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return col_idx[a] < col_idx[b]; });
    std::vector<std::int64_t> sc(idx.size());
    std::vector<double> sv(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      sc[k] = col_idx[idx[k]];
      sv[k] = out[idx[k]];
    }
    std::copy(sc.begin(), sc.end(), col_idx.begin() + start);
    std::copy(sv.begin(), sv.end(), out.begin() + start);
    row_ptr[i + 1] = end;
  }
  return SparseMatrix(n_rows, n_cols, std::move(row_ptr), std::move(col_idx), std::move(out));
}

SparseMatrix SparseMatrix::identity(std::int64_t n) {
  std::vector<std::int64_t> rp(n + 1), ci(n);
  std::iota(rp.begin(), rp.end(), 0);
  std::iota(ci.begin(), ci.end(), 0);
  return SparseMatrix(n, n, std::move(rp), std::move(ci), std::vector<double>(n, 1.0));
}

double SparseMatrix::coeff(std::int64_t i, std::int64_t j) const {
  const auto b = col_idx_.begin() + row_ptr_[i], e = col_idx_.begin() + row_ptr_[i + 1];
  const auto it = std::lower_bound(b, e, j);
  return it != e && *it == j ? vals_[it - col_idx_.begin()] : 0.0;
}

std::vector<double> SparseMatrix::diagonal() const {
  std::vector<double> d(std::min(n_rows_, n_cols_), 0.0);
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = coeff(i, i);
  return d;
}

bool SparseMatrix::same_pattern(const SparseMatrix& o) const {
  return n_rows_ == o.n_rows_ && n_cols_ == o.n_cols_ && row_ptr_ == o.row_ptr_ &&
         col_idx_ == o.col_idx_;
}

void SparseMatrix::matvec(std::span<const double> x, std::span<double> y) const {
  if (static_cast<std::int64_t>(x.size()) != n_cols_ || static_cast<std::int64_t>(y.size()) != n_rows_)
    throw Error("matvec: dimension mismatch");
  parallel_for(n_rows_, 4096, [&](std::int64_t b, std::int64_t e) {
    for (std::int64_t i = b; i < e; ++i) {
      double acc = 0.0;
      for (std::int64_t p = row_ptr_[i]; p < row_ptr_[i + 1]; ++p) acc += vals_[p] * x[col_idx_[p]];
      y[i] = acc;
    }
  });
}

std::vector<double> SparseMatrix::matvec(std::span<const double> x) const {
  std::vector<double> y(n_rows_);
  matvec(x, y);
  return y;
}

std::vector<double> SparseMatrix::matvec_transpose(std::span<const double> x) const {
  if (static_cast<std::int64_t>(x.size()) != n_rows_) throw Error("matvec_transpose: dimension mismatch");
  std::vector<double> y(n_cols_, 0.0);
  for (std::int64_t i = 0; i < n_rows_; ++i)
    for (std::int64_t p = row_ptr_[i]; p < row_ptr_[i + 1]; ++p) y[col_idx_[p]] += vals_[p] * x[i];
  return y;
}

SparseMatrix SparseMatrix::transpose() const {
  std::vector<std::int64_t> rp(n_cols_ + 1, 0);
  for (auto c : col_idx_) ++rp[c + 1];
  std::partial_sum(rp.begin(), rp.end(), rp.begin());
  std::vector<std::int64_t> pos(rp.begin(), rp.end() - 1), ci(nnz());
  std::vector<double> v(nnz());
  for (std::int64_t i = 0; i < n_rows_; ++i) {
    for (std::int64_t p = row_ptr_[i]; p < row_ptr_[i + 1]; ++p) {
      const auto q = pos[col_idx_[p]]++;
      ci[q] = i;
      v[q] = vals_[p];
    }
  }
  return SparseMatrix(n_cols_, n_rows_, std::move(rp), std::move(ci), std::move(v));
}

void SparseMatrix::write_matrix_market(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "%%MatrixMarket matrix coordinate real general\n";
  out << n_rows_ << " " << n_cols_ << " " << nnz() << "\n";
  out << std::setprecision(17);
  for (std::int64_t i = 0; i < n_rows_; ++i)
    for (std::int64_t p = row_ptr_[i]; p < row_ptr_[i + 1]; ++p)
      out << i + 1 << " " << col_idx_[p] + 1 << " " << vals_[p] << "\n";
}

SparseMatrix gram(const SparseMatrix& jac, double damping) {
  const SparseMatrix jt = jac.transpose();
  const std::int64_t n = jac.n_cols();
  const auto& jrp = jac.row_ptr();
  const auto& jci = jac.col_idx();
  const auto& jv = jac.vals();
  std::vector<std::int64_t> rp(n + 1, 0), ci;
  std::vector<double> vals;
  std::vector<std::int64_t> mark(n, -1);
  std::vector<double> acc(n, 0.0);
  std::vector<std::int64_t> cols;
  for (std::int64_t i = 0; i < n; ++i) {
    cols.clear();
    mark[i] = i;
    cols.push_back(i);
    acc[i] = damping;
    for (std::int64_t p = jt.row_ptr()[i]; p < jt.row_ptr()[i + 1]; ++p) {
      const auto k = jt.col_idx()[p];
      const double a = jt.vals()[p];
      for (std::int64_t q = jrp[k]; q < jrp[k + 1]; ++q) {
        const auto j = jci[q];
        if (mark[j] != i) {
          mark[j] = i;
          cols.push_back(j);
          acc[j] = 0.0;
        }
        acc[j] += a * jv[q];
      }
    }
    std::sort(cols.begin(), cols.end());
    for (auto j : cols) {
      ci.push_back(j);
      vals.push_back(acc[j]);
    }
    rp[i + 1] = static_cast<std::int64_t>(ci.size());
  }
  return SparseMatrix(n, n, std::move(rp), std::move(ci), std::move(vals));
}

// ---------------------------------------------------------------------------
// Orderings

namespace {

struct Graph {
  std::vector<std::int64_t> ptr, adj;
  std::int64_t n() const { return static_cast<std::int64_t>(ptr.size()) - 1; }
  std::int64_t degree(std::int64_t v) const { return ptr[v + 1] - ptr[v]; }
};

Graph adjacency(const SparseMatrix& a) {
  if (a.n_rows() != a.n_cols()) throw Error("ordering requires a square matrix");
  const std::int64_t n = a.n_rows();
  std::vector<std::int64_t> rows, cols;
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t p = a.row_ptr()[i]; p < a.row_ptr()[i + 1]; ++p) {
      const auto j = a.col_idx()[p];
      if (j == i) continue;
      rows.push_back(i);
      cols.push_back(j);
      rows.push_back(j);
      cols.push_back(i);
    }
  }
  std::vector<double> ones(rows.size(), 1.0);
  const auto s = SparseMatrix::from_triplets(n, n, rows, cols, ones);
  return Graph{s.row_ptr(), s.col_idx()};
}

// BFS over nodes with mark[v] == id. Returns nodes in visit order and fills
// level_ptr with the start of each level.
std::vector<std::int64_t> bfs_levels(const Graph& g, std::int64_t root,
                                     const std::vector<std::int64_t>& mark, std::int64_t id,
                                     std::vector<std::int64_t>& seen, std::int64_t stamp,
                                     std::vector<std::int64_t>& level_ptr) {
  std::vector<std::int64_t> order{root};
  seen[root] = stamp;
  level_ptr.assign(1, 0);
  std::size_t head = 0;
  while (head < order.size()) {
    const std::size_t level_end = order.size();
    level_ptr.push_back(static_cast<std::int64_t>(level_end));
    for (; head < level_end; ++head) {
      const auto v = order[head];
      for (auto p = g.ptr[v]; p < g.ptr[v + 1]; ++p) {
        const auto w = g.adj[p];
        if (mark[w] == id && seen[w] != stamp) {
          seen[w] = stamp;
          order.push_back(w);
        }
      }
    }
  }
  // The last pushed level is empty; drop the duplicate end marker.
  if (level_ptr.size() > 1 && level_ptr[level_ptr.size() - 1] == level_ptr[level_ptr.size() - 2])
    level_ptr.pop_back();
  return order;
}

class Orderer {
 public:
  explicit Orderer(const SparseMatrix& a) : g_(adjacency(a)), seen_(g_.n(), -1) {}

  std::int64_t pseudo_peripheral(std::int64_t start, const std::vector<std::int64_t>& mark,
                                 std::int64_t id) {
    std::int64_t root = start;
    std::vector<std::int64_t> lp;
    auto order = bfs_levels(g_, root, mark, id, seen_, ++stamp_, lp);
    std::int64_t ecc = static_cast<std::int64_t>(lp.size()) - 1;
    for (int it = 0; it < 8; ++it) {
      std::int64_t best = -1;
      for (auto k = lp[lp.size() - 2]; k < lp.back(); ++k) {
        const auto v = order[k];
        if (best < 0 || g_.degree(v) < g_.degree(best)) best = v;
      }
      std::vector<std::int64_t> lp2;
      auto order2 = bfs_levels(g_, best, mark, id, seen_, ++stamp_, lp2);
      const std::int64_t ecc2 = static_cast<std::int64_t>(lp2.size()) - 1;
      if (ecc2 <= ecc) break;
      root = best;
      ecc = ecc2;
      lp = std::move(lp2);
      order = std::move(order2);
    }
    return root;
  }

  std::vector<std::int64_t> rcm() {
    const std::int64_t n = g_.n();
    std::vector<std::int64_t> mark(n, 0), perm;
    perm.reserve(n);
    std::vector<char> done(n, 0);
    std::vector<std::int64_t> by_degree(n);
    std::iota(by_degree.begin(), by_degree.end(), 0);
    std::stable_sort(by_degree.begin(), by_degree.end(),
                     [&](auto a, auto b) { return g_.degree(a) < g_.degree(b); });
    for (auto s : by_degree) {
      if (done[s]) continue;
      const auto root = pseudo_peripheral(s, mark, 0);
      const std::size_t first = perm.size();
      perm.push_back(root);
      done[root] = 1;
      std::vector<std::int64_t> nb;
      for (std::size_t head = first; head < perm.size(); ++head) {
        const auto v = perm[head];
        nb.clear();
        for (auto p = g_.ptr[v]; p < g_.ptr[v + 1]; ++p)
          if (!done[g_.adj[p]]) nb.push_back(g_.adj[p]);
        std::stable_sort(nb.begin(), nb.end(),
                         [&](auto a, auto b) { return g_.degree(a) < g_.degree(b); });
        for (auto w : nb) {
          done[w] = 1;
          perm.push_back(w);
        }
      }
    }
    std::reverse(perm.begin(), perm.end());
    return perm;
  }

  std::vector<std::int64_t> nested_dissection() {
    const std::int64_t n = g_.n();
    std::vector<std::int64_t> mark(n, 0), perm;
    perm.reserve(n);
    std::vector<std::int64_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    next_id_ = 1;
    dissect(all, 0, mark, perm);
    return perm;
  }

 private:
  void dissect(const std::vector<std::int64_t>& nodes, std::int64_t id,
               std::vector<std::int64_t>& mark, std::vector<std::int64_t>& perm) {
    constexpr std::size_t kLeaf = 48;
    if (nodes.size() <= kLeaf) {
      perm.insert(perm.end(), nodes.begin(), nodes.end());
      for (auto v : nodes) mark[v] = -1;
      return;
    }
    // Split into connected components first.
    std::vector<std::int64_t> lp;
    const auto root0 = pseudo_peripheral(nodes.front(), mark, id);
    auto order = bfs_levels(g_, root0, mark, id, seen_, ++stamp_, lp);
    if (order.size() < nodes.size()) {
      const std::int64_t stamp = stamp_;
      std::vector<std::int64_t> rest;
      for (auto v : nodes)
        if (seen_[v] != stamp) rest.push_back(v);
      const std::int64_t a = next_id_++, b = next_id_++;
      for (auto v : order) mark[v] = a;
      for (auto v : rest) mark[v] = b;
      dissect(order, a, mark, perm);
      dissect(rest, b, mark, perm);
      return;
    }
    const std::int64_t levels = static_cast<std::int64_t>(lp.size()) - 1;
    if (levels < 3) {
      perm.insert(perm.end(), order.begin(), order.end());
      for (auto v : nodes) mark[v] = -1;
      return;
    }
    // Smallest level whose removal leaves both sides with >= 30% of nodes;
    // the median level when none qualifies.
    const double total = static_cast<double>(order.size());
    std::int64_t best = -1, median = -1;
    for (std::int64_t m = 1; m < levels - 1; ++m) {
      const double below = static_cast<double>(lp[m]);
      const double above = total - static_cast<double>(lp[m + 1]);
      if (median < 0 && lp[m + 1] >= total / 2) median = m;
      if (below >= 0.3 * total && above >= 0.3 * total) {
        if (best < 0 || lp[m + 1] - lp[m] < lp[best + 1] - lp[best]) best = m;
      }
    }
    if (best < 0) best = median >= 1 ? median : levels / 2;
    std::vector<std::int64_t> part_a(order.begin(), order.begin() + lp[best]);
    std::vector<std::int64_t> sep(order.begin() + lp[best], order.begin() + lp[best + 1]);
    std::vector<std::int64_t> part_b(order.begin() + lp[best + 1], order.end());
    const std::int64_t a = next_id_++, b = next_id_++;
    for (auto v : part_a) mark[v] = a;
    for (auto v : part_b) mark[v] = b;
    for (auto v : sep) mark[v] = -1;
    dissect(part_a, a, mark, perm);
    dissect(part_b, b, mark, perm);
    perm.insert(perm.end(), sep.begin(), sep.end());
  }

  Graph g_;
  std::vector<std::int64_t> seen_;
  std::int64_t stamp_ = 0;
  std::int64_t next_id_ = 1;
};

std::vector<std::int64_t> invert(const std::vector<std::int64_t>& p) {
  std::vector<std::int64_t> inv(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) inv[p[k]] = static_cast<std::int64_t>(k);
  return inv;
}

using Lower = detail::LowerPattern;

Lower permuted_lower(const SparseMatrix& a, const std::vector<std::int64_t>& perm,
                     const std::vector<std::int64_t>& inv) {
  const std::int64_t n = a.n_rows();
  Lower l;
  l.ptr.assign(n + 1, 0);
  for (std::int64_t j = 0; j < n; ++j) {
    const auto old = perm[j];
    for (auto p = a.row_ptr()[old]; p < a.row_ptr()[old + 1]; ++p)
      if (inv[a.col_idx()[p]] >= j) ++l.ptr[j + 1];
  }
  std::partial_sum(l.ptr.begin(), l.ptr.end(), l.ptr.begin());
  l.row.resize(l.ptr.back());
  l.src.resize(l.ptr.back());
  for (std::int64_t j = 0; j < n; ++j) {
    const auto old = perm[j];
    auto q = l.ptr[j];
    for (auto p = a.row_ptr()[old]; p < a.row_ptr()[old + 1]; ++p) {
      const auto i = inv[a.col_idx()[p]];
      if (i >= j) {
        l.row[q] = i;
        l.src[q] = p;
        ++q;
      }
    }
  }
  return l;
}

struct Symbolic {
  std::vector<std::int64_t> parent;
  std::vector<std::int64_t> col_count;  // including the diagonal
  double flops = 0.0;
};

// Elimination tree and column counts of L for the ordering `perm`.
Symbolic symbolic(const SparseMatrix& a, const std::vector<std::int64_t>& perm) {
  const std::int64_t n = a.n_rows();
  // Row k of the lower triangle is column k of the upper one.
  const auto inv = invert(perm);
  std::vector<std::int64_t> up_ptr(n + 1, 0), up_row;
  for (std::int64_t k = 0; k < n; ++k) {
    const auto old = perm[k];
    for (auto p = a.row_ptr()[old]; p < a.row_ptr()[old + 1]; ++p)
      if (inv[a.col_idx()[p]] < k) ++up_ptr[k + 1];
  }
  std::partial_sum(up_ptr.begin(), up_ptr.end(), up_ptr.begin());
  up_row.resize(up_ptr.back());
  for (std::int64_t k = 0; k < n; ++k) {
    auto q = up_ptr[k];
    for (auto p = a.row_ptr()[perm[k]]; p < a.row_ptr()[perm[k] + 1]; ++p) {
      const auto i = inv[a.col_idx()[p]];
      if (i < k) up_row[q++] = i;
    }
  }
  Symbolic s;
  s.parent.assign(n, -1);
  std::vector<std::int64_t> ancestor(n, -1);
  for (std::int64_t k = 0; k < n; ++k) {
    for (auto p = up_ptr[k]; p < up_ptr[k + 1]; ++p) {
      for (auto i = up_row[p]; i != -1 && i < k;) {
        const auto next = ancestor[i];
        ancestor[i] = k;
        if (next == -1) {
          s.parent[i] = k;
          break;
        }
        i = next;
      }
    }
  }
  // Row k of L is the union of etree paths from the entries of row k of A.
  s.col_count.assign(n, 1);
  std::vector<std::int64_t> flag(n, -1);
  for (std::int64_t k = 0; k < n; ++k) {
    flag[k] = k;
    for (auto p = up_ptr[k]; p < up_ptr[k + 1]; ++p) {
      for (auto i = up_row[p]; flag[i] != k; i = s.parent[i]) {
        flag[i] = k;
        ++s.col_count[i];
      }
    }
  }
  for (auto c : s.col_count) s.flops += static_cast<double>(c) * static_cast<double>(c);
  return s;
}

std::vector<std::int64_t> postorder(const std::vector<std::int64_t>& parent) {
  const std::int64_t n = static_cast<std::int64_t>(parent.size());
  std::vector<std::int64_t> head(n, -1), next(n, -1), post, stack;
  post.reserve(n);
  // Children pushed in reverse so that they pop in increasing order.
  for (std::int64_t j = n - 1; j >= 0; --j) {
    if (parent[j] < 0) continue;
    next[j] = head[parent[j]];
    head[parent[j]] = j;
  }
  for (std::int64_t root = 0; root < n; ++root) {
    if (parent[root] >= 0) continue;
    stack.push_back(root);
    while (!stack.empty()) {
      const auto v = stack.back();
      if (head[v] >= 0) {
        const auto c = head[v];
        head[v] = next[c];
        stack.push_back(c);
      } else {
        stack.pop_back();
        post.push_back(v);
      }
    }
  }
  return post;
}

// Merges a supernode into its parent when the explicit zeros this adds stay
// small relative to the merged block.
bool relax_merge(std::int64_t cols, double zeros, double total) {
  if (cols <= 4) return true;
  const double frac = zeros / total;
  if (cols <= 16) return frac < 0.8;
  if (cols <= 48) return frac < 0.1;
  return frac < 0.05;
}

}  // namespace

std::vector<std::int64_t> compute_ordering(const SparseMatrix& a, Ordering kind) {
  const std::int64_t n = a.n_rows();
  if (kind == Ordering::natural) {
    std::vector<std::int64_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    return p;
  }
  Orderer ord(a);
  if (kind == Ordering::rcm) return ord.rcm();
  if (kind == Ordering::nested_dissection) return ord.nested_dissection();
  auto p_nd = ord.nested_dissection();
  auto p_rcm = ord.rcm();
  const double f_nd = symbolic(a, p_nd).flops;
  const double f_rcm = symbolic(a, p_rcm).flops;
  return f_nd <= f_rcm ? p_nd : p_rcm;
}

// ---------------------------------------------------------------------------
// Cholesky

SparseCholesky::SparseCholesky(const SparseMatrix& a, Ordering ordering) {
  analyze(a, ordering);
  factorize(a);
}

void SparseCholesky::analyze(const SparseMatrix& a, Ordering ordering) {
  if (a.n_rows() != a.n_cols()) throw Error("cholesky: matrix must be square");
  n_ = a.n_rows();
  // Postordering the elimination tree keeps every supernode contiguous and
  // leaves the fill unchanged.
  {
    const auto base = compute_ordering(a, ordering);
    const auto post = postorder(symbolic(a, base).parent);
    perm_.resize(n_);
    for (std::int64_t k = 0; k < n_; ++k) perm_[k] = base[post[k]];
  }
  inv_perm_ = invert(perm_);
  const Symbolic sym = symbolic(a, perm_);
  const auto& parent = sym.parent;
  const auto& cc = sym.col_count;

  // Fundamental supernodes, then relaxed amalgamation along parent chains.
  std::vector<std::int64_t> first{0};
  for (std::int64_t j = 1; j < n_; ++j)
    if (!(parent[j - 1] == j && cc[j - 1] == cc[j] + 1)) first.push_back(j);
  first.push_back(n_);
  super_ptr_.assign(1, 0);
  {
    std::int64_t cols = 0, below = 0;
    double zeros = 0.0;
    for (std::size_t s = 0; s + 1 < first.size(); ++s) {
      const std::int64_t f = first[s], l = first[s + 1] - 1;
      const std::int64_t ns = l - f + 1, rs = cc[l] - 1;
      if (cols > 0) {
        // The pending group ends at f - 1; merge it when f is its parent.
        const std::int64_t c = cols + ns;
        const double added = static_cast<double>(cols) * static_cast<double>(ns + rs - below);
        const double z = zeros + added;
        const double total = 0.5 * static_cast<double>(c) * static_cast<double>(c + 1) +
                             static_cast<double>(c) * static_cast<double>(rs);
        if (parent[f - 1] == f && relax_merge(c, z, total)) {
          cols = c;
          below = rs;
          zeros = z;
          continue;
        }
        super_ptr_.push_back(f);
      }
      cols = ns;
      below = rs;
      zeros = 0.0;
    }
    super_ptr_.push_back(n_);
  }
  const std::int64_t nsup = static_cast<std::int64_t>(super_ptr_.size()) - 1;
  col_super_.resize(n_);
  for (std::int64_t s = 0; s < nsup; ++s)
    for (auto j = super_ptr_[s]; j < super_ptr_[s + 1]; ++j) col_super_[j] = s;

  // Row structure of each supernode: its own columns, entries of A below
  // them, and the rows its children pass up.
  lower_ = permuted_lower(a, perm_, inv_perm_);
  std::vector<std::vector<std::int64_t>> children(nsup);
  std::vector<std::int64_t> mark(n_, -1), rows;
  srow_ptr_.assign(1, 0);
  srow_.clear();
  for (std::int64_t s = 0; s < nsup; ++s) {
    const std::int64_t f = super_ptr_[s], l = super_ptr_[s + 1] - 1;
    rows.clear();
    auto add = [&](std::int64_t i) {
      if (i > l && mark[i] != s) {
        mark[i] = s;
        rows.push_back(i);
      }
    };
    for (auto j = f; j <= l; ++j)
      for (auto p = lower_.ptr[j]; p < lower_.ptr[j + 1]; ++p) add(lower_.row[p]);
    for (auto c : children[s])
      for (auto p = srow_ptr_[c]; p < srow_ptr_[c + 1]; ++p) add(srow_[p]);
    std::sort(rows.begin(), rows.end());
    for (auto j = f; j <= l; ++j) srow_.push_back(j);
    srow_.insert(srow_.end(), rows.begin(), rows.end());
    srow_ptr_.push_back(static_cast<std::int64_t>(srow_.size()));
    if (!rows.empty()) children[col_super_[rows.front()]].push_back(s);
  }
  sval_ptr_.assign(nsup + 1, 0);
  factor_nnz_ = 0;
  for (std::int64_t s = 0; s < nsup; ++s) {
    const std::int64_t ns = super_ptr_[s + 1] - super_ptr_[s];
    const std::int64_t m = srow_ptr_[s + 1] - srow_ptr_[s];
    sval_ptr_[s + 1] = sval_ptr_[s] + m * ns;
    factor_nnz_ += ns * (ns + 1) / 2 + ns * (m - ns);
  }
  pattern_ptr_ = a.row_ptr();
  pattern_cols_ = a.col_idx();
  lvals_.assign(sval_ptr_.back(), 0.0);
  analyzed_ = true;
}

bool SparseCholesky::matches(const SparseMatrix& a) const {
  return analyzed_ && n_ == a.n_rows() && pattern_ptr_ == a.row_ptr() &&
         pattern_cols_ == a.col_idx();
}

void SparseCholesky::factorize(const SparseMatrix& a) {
  if (!matches(a)) analyze(a);
  const auto& av = a.vals();
  const std::int64_t nsup = static_cast<std::int64_t>(super_ptr_.size()) - 1;
  std::fill(lvals_.begin(), lvals_.end(), 0.0);
  std::vector<std::int64_t> map(n_, 0);
  // Supernodes waiting to update supernode s, linked through `next`, and the
  // position in each one's row list of its next target row.
  std::vector<std::int64_t> head(nsup, -1), next(nsup, -1), cursor(nsup, 0);
  std::vector<double> work, diag_in;
  for (std::int64_t s = 0; s < nsup; ++s) {
    const std::int64_t f = super_ptr_[s], l = super_ptr_[s + 1] - 1, ns = l - f + 1;
    const std::int64_t* rs = srow_.data() + srow_ptr_[s];
    const std::int64_t m = srow_ptr_[s + 1] - srow_ptr_[s];
    double* panel = lvals_.data() + sval_ptr_[s];
    for (std::int64_t t = 0; t < m; ++t) map[rs[t]] = t;
    diag_in.assign(ns, 0.0);
    for (auto j = f; j <= l; ++j) {
      for (auto p = lower_.ptr[j]; p < lower_.ptr[j + 1]; ++p) {
        panel[map[lower_.row[p]] + (j - f) * m] += av[lower_.src[p]];
        if (lower_.row[p] == j) diag_in[j - f] = av[lower_.src[p]];
      }
    }
    for (auto d = head[s]; d != -1;) {
      const auto d_next = next[d];
      const std::int64_t* rd = srow_.data() + srow_ptr_[d];
      const std::int64_t md = srow_ptr_[d + 1] - srow_ptr_[d];
      const std::int64_t nd = super_ptr_[d + 1] - super_ptr_[d];
      const std::int64_t p0 = cursor[d];
      std::int64_t p1 = p0;
      while (p1 < md && rd[p1] <= l) ++p1;
      const std::int64_t k1 = p1 - p0, m2 = md - p0;
      const double* ld = lvals_.data() + sval_ptr_[d] + p0;
      work.resize(static_cast<std::size_t>(m2 * k1));
      cblas_dgemm(CblasColMajor, CblasNoTrans, CblasTrans, static_cast<int>(m2), static_cast<int>(k1),
                  static_cast<int>(nd), 1.0, ld, static_cast<int>(md), ld, static_cast<int>(md), 0.0,
                  work.data(), static_cast<int>(m2));
      for (std::int64_t c = 0; c < k1; ++c) {
        double* col = panel + (rd[p0 + c] - f) * m;
        const double* w = work.data() + c * m2;
        for (std::int64_t r = c; r < m2; ++r) col[map[rd[p0 + r]]] -= w[r];
      }
      cursor[d] = p1;
      if (p1 < md) {
        const auto t = col_super_[rd[p1]];
        next[d] = head[t];
        head[t] = d;
      }
      d = d_next;
    }
    int info = 0;
    const int ni = static_cast<int>(ns), mi = static_cast<int>(m);
    dpotrf_("L", &ni, panel, &mi, &info);
    for (std::int64_t c = 0; info == 0 && c < ns; ++c) {
      const double piv = panel[c + c * m];
      if (!(piv * piv > 1e-14 * std::abs(diag_in[c]))) info = static_cast<int>(c) + 1;
    }
    if (info != 0) {
      throw SingularMatrixError("cholesky: non-positive pivot at step " + std::to_string(f + info - 1) +
                                " of " + std::to_string(n_) +
                                "; the system is singular or indefinite, increase the damping");
    }
    if (m > ns) {
      cblas_dtrsm(CblasColMajor, CblasRight, CblasLower, CblasTrans, CblasNonUnit,
                  static_cast<int>(m - ns), ni, 1.0, panel, mi, panel + ns, mi);
      cursor[s] = ns;
      const auto t = col_super_[rs[ns]];
      next[s] = head[t];
      head[t] = s;
    }
  }
}

std::vector<double> SparseCholesky::solve(std::span<const double> b) const {
  if (static_cast<std::int64_t>(b.size()) != n_) throw Error("cholesky solve: dimension mismatch");
  const std::int64_t nsup = static_cast<std::int64_t>(super_ptr_.size()) - 1;
  std::vector<double> y(n_);
  for (std::int64_t k = 0; k < n_; ++k) y[k] = b[perm_[k]];
  for (std::int64_t s = 0; s < nsup; ++s) {
    const std::int64_t f = super_ptr_[s], ns = super_ptr_[s + 1] - f;
    const std::int64_t* rs = srow_.data() + srow_ptr_[s];
    const std::int64_t m = srow_ptr_[s + 1] - srow_ptr_[s];
    const double* panel = lvals_.data() + sval_ptr_[s];
    for (std::int64_t c = 0; c < ns; ++c) {
      const double* col = panel + c * m;
      const double yc = (y[f + c] /= col[c]);
      for (std::int64_t r = c + 1; r < m; ++r) y[rs[r]] -= col[r] * yc;
    }
  }
  for (std::int64_t s = nsup - 1; s >= 0; --s) {
    const std::int64_t f = super_ptr_[s], ns = super_ptr_[s + 1] - f;
    const std::int64_t* rs = srow_.data() + srow_ptr_[s];
    const std::int64_t m = srow_ptr_[s + 1] - srow_ptr_[s];
    const double* panel = lvals_.data() + sval_ptr_[s];
    for (std::int64_t c = ns - 1; c >= 0; --c) {
      const double* col = panel + c * m;
      double acc = y[f + c];
      for (std::int64_t r = c + 1; r < m; ++r) acc -= col[r] * y[rs[r]];
      y[f + c] = acc / col[c];
    }
  }
  std::vector<double> x(n_);
  for (std::int64_t k = 0; k < n_; ++k) x[perm_[k]] = y[k];
  return x;
}
std::vector<double> solve_direct(const SparseMatrix& a, std::span<const double> b,
                                 Ordering ordering) {
  SparseCholesky chol(a, ordering);
  return chol.solve(b);
}

CgResult solve_cg(const SparseMatrix& a, std::span<const double> b, double tol, int max_iter,
                  Preconditioner precond) {
  if (!(tol > 0.0)) throw Error("solve_cg: tol must be positive");
  const std::int64_t n = a.n_rows();
  if (a.n_cols() != n || static_cast<std::int64_t>(b.size()) != n) throw Error("solve_cg: dimension mismatch");
  CgResult res;
  res.x.assign(n, 0.0);
  auto dot = [](std::span<const double> u, std::span<const double> v) {
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
    return s;
  };
  const double bnorm = std::sqrt(dot(b, b));
  if (bnorm == 0.0) {
    res.converged = true;
    return res;
  }
  std::vector<double> inv_diag;
  if (precond == Preconditioner::jacobi) {
    inv_diag = a.diagonal();
    for (std::int64_t i = 0; i < n; ++i) {
      if (inv_diag[i] == 0.0) throw Error("solve_cg: zero diagonal entry at row " + std::to_string(i));
      inv_diag[i] = 1.0 / inv_diag[i];
    }
  }
  auto apply_m = [&](std::span<const double> r, std::span<double> z) {
    for (std::int64_t i = 0; i < n; ++i) z[i] = inv_diag.empty() ? r[i] : r[i] * inv_diag[i];
  };
  std::vector<double> r(b.begin(), b.end()), z(n), p(n), ap(n);
  apply_m(r, z);
  p = z;
  double rz = dot(r, z);
  res.relative_residual = 1.0;
  for (int it = 1; it <= max_iter; ++it) {
    a.matvec(p, ap);
    const double alpha = rz / dot(p, ap);
    for (std::int64_t i = 0; i < n; ++i) {
      res.x[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
    }
    res.iterations = it;
    res.relative_residual = std::sqrt(dot(r, r)) / bnorm;
    if (res.relative_residual <= tol) {
      res.converged = true;
      break;
    }
    apply_m(r, z);
    const double rz_new = dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::int64_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  return res;
}

}  // namespace odil
