#include "odil/stencil.hpp"

#include <algorithm>
#include <cmath>

#include "odil/error.hpp"
#include "odil/parallel.hpp"

namespace odil {

namespace {

Expr make(Op op, std::vector<Expr> args) {
  auto n = std::make_shared<ExprNode>();
  n->op = op;
  n->args = std::move(args);
  return Expr(std::move(n));
}

Expr make_ref(const std::string& name, bool unknown, std::span<const int> off) {
  if (off.size() > static_cast<std::size_t>(kMaxRank)) throw Error("offset rank exceeds 3");
  auto n = std::make_shared<ExprNode>();
  n->op = unknown ? Op::unknown : Op::known;
  n->name = name;
  n->offset_rank = static_cast<int>(off.size());
  for (std::size_t a = 0; a < off.size(); ++a) n->offset[a] = off[a];
  return Expr(std::move(n));
}

int find_or_add(std::vector<std::string>& names, const std::string& name) {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it != names.end()) return static_cast<int>(it - names.begin());
  names.push_back(name);
  return static_cast<int>(names.size()) - 1;
}

}  // namespace

Expr::Expr(double value) {
  auto n = std::make_shared<ExprNode>();
  n->op = Op::constant;
  n->value = value;
  node_ = std::move(n);
}

Expr FieldRef::operator()() const { return make_ref(name_, unknown_, {}); }
Expr FieldRef::operator()(int o0) const {
  const int o[] = {o0};
  return make_ref(name_, unknown_, o);
}
Expr FieldRef::operator()(int o0, int o1) const {
  const int o[] = {o0, o1};
  return make_ref(name_, unknown_, o);
}
Expr FieldRef::operator()(int o0, int o1, int o2) const {
  const int o[] = {o0, o1, o2};
  return make_ref(name_, unknown_, o);
}
Expr FieldRef::at(std::span<const int> offset) const { return make_ref(name_, unknown_, offset); }

FieldRef unknown_field(std::string name) { return FieldRef(std::move(name), true); }
FieldRef known_field(std::string name) { return FieldRef(std::move(name), false); }

Expr param(std::string name) {
  auto n = std::make_shared<ExprNode>();
  n->op = Op::param;
  n->name = std::move(name);
  return Expr(std::move(n));
}

Expr operator+(const Expr& a, const Expr& b) { return make(Op::add, {a, b}); }
Expr operator-(const Expr& a, const Expr& b) { return make(Op::sub, {a, b}); }
Expr operator*(const Expr& a, const Expr& b) { return make(Op::mul, {a, b}); }
Expr operator/(const Expr& a, const Expr& b) { return make(Op::div, {a, b}); }
Expr operator-(const Expr& a) { return make(Op::neg, {a}); }
Expr pow(const Expr& a, const Expr& b) { return make(Op::pow, {a, b}); }
Expr sin(const Expr& a) { return make(Op::sin, {a}); }
Expr cos(const Expr& a) { return make(Op::cos, {a}); }
Expr exp(const Expr& a) { return make(Op::exp, {a}); }
Expr sqrt(const Expr& a) { return make(Op::sqrt, {a}); }
Expr abs(const Expr& a) { return make(Op::abs, {a}); }
Expr max(const Expr& a, const Expr& b) { return make(Op::max, {a, b}); }
Expr min(const Expr& a, const Expr& b) { return make(Op::min, {a, b}); }
Expr select_by_sign(const Expr& sign, const Expr& if_nonneg, const Expr& if_neg) {
  return make(Op::select_sign, {sign, if_nonneg, if_neg});
}

ResidualBlock::ResidualBlock(std::string name, const Expr& expr, IndexSet index_set,
                             const GridMap& grids, double weight, bool clip)
    : name_(std::move(name)), weight_(weight), index_set_(std::move(index_set)) {
  if (!(weight_ >= 0.0)) throw Error("block '" + name_ + "': weight must be nonnegative");
  std::map<const ExprNode*, int> seen;
  compile(expr, seen);
  finalize_derivatives();

  const Grid& bg = index_set_.grid();
  auto grid_of = [&](const std::string& field) -> const Grid& {
    const auto it = grids.find(field);
    if (it == grids.end()) throw Error("block '" + name_ + "': unbound field '" + field + "'");
    if (it->second.rank() > bg.rank())
      throw Error("block '" + name_ + "': field '" + field + "' has higher rank than the block grid");
    return it->second;
  };
  std::vector<const Grid*> ugrids, kgrids;
  for (const auto& n : unknown_names_) ugrids.push_back(&grid_of(n));
  for (const auto& n : known_names_) kgrids.push_back(&grid_of(n));
  auto check_rank = [&](const std::string& field, const Grid& g, int offset_rank) {
    if (offset_rank != 0 && offset_rank != g.rank())
      throw Error("block '" + name_ + "': offset for field '" + field + "' has " +
                  std::to_string(offset_rank) + " components, field rank is " +
                  std::to_string(g.rank()));
  };
  for (const auto& s : slots_)
    if (s.kind == Slot::Kind::unknown)
      check_rank(unknown_names_[s.id], *ugrids[s.id], s.offset_rank);
  for (const auto& k : known_refs_) check_rank(known_names_[k.id], *kgrids[k.id], k.offset_rank);

  // Maps a block point plus offset onto a field's trailing axes.
  auto locate = [&](const MultiIndex& p, const MultiIndex& off, const Grid& fg,
                    std::int64_t& flat) {
    const int shift = bg.rank() - fg.rank();
    std::int64_t f = 0;
    for (int a = 0; a < fg.rank(); ++a) {
      const int i = p[shift + a] + off[a];
      if (i < 0 || i >= fg.dim(a)) return false;
      f += i * fg.stride(a);
    }
    flat = f;
    return true;
  };

  std::vector<MultiIndex> kept;
  const std::size_t ns = slots_.size(), nk = known_refs_.size();
  std::vector<std::int64_t> sflat(ns), kflat(nk);
  for (const auto& p : index_set_.points()) {
    bool ok = true;
    for (std::size_t s = 0; s < ns && ok; ++s) {
      if (slots_[s].kind != Slot::Kind::unknown) {
        sflat[s] = -1;
        continue;
      }
      ok = locate(p, slots_[s].offset, *ugrids[slots_[s].id], sflat[s]);
    }
    for (std::size_t k = 0; k < nk && ok; ++k)
      ok = locate(p, known_refs_[k].offset, *kgrids[known_refs_[k].id], kflat[k]);
    if (!ok) {
      if (clip) continue;
      throw Error("block '" + name_ + "': stencil leaves the grid at point (" +
                  std::to_string(p[0]) + "," + std::to_string(p[1]) + "," + std::to_string(p[2]) +
                  ")");
    }
    kept.push_back(p);
    slot_flat_.insert(slot_flat_.end(), sflat.begin(), sflat.end());
    known_flat_.insert(known_flat_.end(), kflat.begin(), kflat.end());
  }
  if (clip) index_set_ = IndexSet::explicit_list(bg, std::move(kept));
}

int ResidualBlock::compile(const Expr& e, std::map<const ExprNode*, int>& seen) {
  const ExprNode* node = e.get();
  if (const auto it = seen.find(node); it != seen.end()) return it->second;
  Instr ins{node->op};
  switch (node->op) {
    case Op::constant:
      ins.value = node->value;
      break;
    case Op::param: {
      const int pid = find_or_add(param_names_, node->name);
      int s = -1;
      for (std::size_t k = 0; k < slots_.size(); ++k)
        if (slots_[k].kind == Slot::Kind::param && slots_[k].id == pid) s = static_cast<int>(k);
      if (s < 0) {
        slots_.push_back({Slot::Kind::param, pid, {0, 0, 0}, 0});
        s = static_cast<int>(slots_.size()) - 1;
      }
      ins.src = s;
      break;
    }
    case Op::unknown: {
      const int fid = find_or_add(unknown_names_, node->name);
      int s = -1;
      for (std::size_t k = 0; k < slots_.size(); ++k)
        if (slots_[k].kind == Slot::Kind::unknown && slots_[k].id == fid &&
            slots_[k].offset == node->offset)
          s = static_cast<int>(k);
      if (s < 0) {
        slots_.push_back({Slot::Kind::unknown, fid, node->offset, node->offset_rank});
        s = static_cast<int>(slots_.size()) - 1;
      }
      ins.src = s;
      break;
    }
    case Op::known: {
      const int fid = find_or_add(known_names_, node->name);
      int r = -1;
      for (std::size_t k = 0; k < known_refs_.size(); ++k)
        if (known_refs_[k].id == fid && known_refs_[k].offset == node->offset)
          r = static_cast<int>(k);
      if (r < 0) {
        known_refs_.push_back({fid, node->offset, node->offset_rank});
        r = static_cast<int>(known_refs_.size()) - 1;
      }
      ins.src = r;
      break;
    }
    default: {
      const auto& args = node->args;
      if (!args.empty()) ins.a = compile(args[0], seen);
      if (args.size() > 1) ins.b = compile(args[1], seen);
      if (args.size() > 2) ins.c = compile(args[2], seen);
    }
  }
  program_.push_back(ins);
  const int id = static_cast<int>(program_.size()) - 1;
  seen.emplace(node, id);
  return id;
}

void ResidualBlock::finalize_derivatives() {
  std::vector<std::vector<int>> lists(program_.size());
  auto list_of = [&](int k) -> const std::vector<int>& { return lists[k]; };
  for (std::size_t k = 0; k < program_.size(); ++k) {
    const Instr& ins = program_[k];
    std::vector<int>& out = lists[k];
    switch (ins.op) {
      case Op::constant:
      case Op::known:
        break;
      case Op::param:
      case Op::unknown:
        out.push_back(ins.src);
        break;
      case Op::select_sign: {
        // The sign argument only chooses a branch.
        const auto& p = list_of(ins.b);
        const auto& n = list_of(ins.c);
        std::set_union(p.begin(), p.end(), n.begin(), n.end(), std::back_inserter(out));
        break;
      }
      default: {
        if (ins.a >= 0) out = list_of(ins.a);
        if (ins.b >= 0) {
          std::vector<int> merged;
          const auto& bl = list_of(ins.b);
          std::set_union(out.begin(), out.end(), bl.begin(), bl.end(), std::back_inserter(merged));
          out = std::move(merged);
        }
      }
    }
  }
  auto build_map = [&](const std::vector<int>& dst, int arg) {
    if (arg < 0) return -1;
    const int at = static_cast<int>(maps_.size());
    const auto& src = lists[arg];
    for (int s : dst) {
      const auto it = std::lower_bound(src.begin(), src.end(), s);
      maps_.push_back(it != src.end() && *it == s ? static_cast<int>(it - src.begin()) : -1);
    }
    return at;
  };
  int offset = 0;
  for (std::size_t k = 0; k < program_.size(); ++k) {
    Instr& ins = program_[k];
    ins.dbegin = offset;
    ins.dcount = static_cast<int>(lists[k].size());
    offset += ins.dcount;
    slot_lists_.insert(slot_lists_.end(), lists[k].begin(), lists[k].end());
    if (ins.op == Op::select_sign) {
      ins.map_b = build_map(lists[k], ins.b);
      ins.map_c = build_map(lists[k], ins.c);
    } else if (ins.op != Op::unknown && ins.op != Op::param) {
      ins.map_a = build_map(lists[k], ins.a);
      ins.map_b = build_map(lists[k], ins.b);
    }
  }
  deriv_size_ = offset;
}

void ResidualBlock::run(const BlockInputs& in, std::int64_t row, double* v, double* d,
                        bool with_derivs) const {
  const std::size_t ns = slots_.size(), nk = known_refs_.size();
  const int* maps = maps_.data();
  for (std::size_t k = 0; k < program_.size(); ++k) {
    const Instr& I = program_[k];
    double ca = 0.0, cb = 0.0;  // partials with respect to args a and b
    double& out = v[k];
    switch (I.op) {
      case Op::constant:
        out = I.value;
        continue;
      case Op::known:
        out = in.knowns[known_refs_[I.src].id][known_flat_[row * nk + I.src]];
        continue;
      case Op::unknown:
        out = in.unknowns[slots_[I.src].id][slot_flat_[row * ns + I.src]];
        if (with_derivs) d[I.dbegin] = 1.0;
        continue;
      case Op::param:
        out = in.params[slots_[I.src].id];
        if (with_derivs) d[I.dbegin] = 1.0;
        continue;
      case Op::add:
        out = v[I.a] + v[I.b];
        ca = 1.0;
        cb = 1.0;
        break;
      case Op::sub:
        out = v[I.a] - v[I.b];
        ca = 1.0;
        cb = -1.0;
        break;
      case Op::mul:
        out = v[I.a] * v[I.b];
        ca = v[I.b];
        cb = v[I.a];
        break;
      case Op::div:
        out = v[I.a] / v[I.b];
        ca = 1.0 / v[I.b];
        cb = -out / v[I.b];
        break;
      case Op::neg:
        out = -v[I.a];
        ca = -1.0;
        break;
      case Op::pow: {
        const double base = v[I.a], ex = v[I.b];
        out = std::pow(base, ex);
        ca = ex == 0.0 ? 0.0 : ex * std::pow(base, ex - 1.0);
        cb = program_[I.b].dcount > 0 ? out * std::log(base) : 0.0;
        break;
      }
      case Op::sin:
        out = std::sin(v[I.a]);
        ca = std::cos(v[I.a]);
        break;
      case Op::cos:
        out = std::cos(v[I.a]);
        ca = -std::sin(v[I.a]);
        break;
      case Op::exp:
        out = std::exp(v[I.a]);
        ca = out;
        break;
      case Op::sqrt:
        out = std::sqrt(v[I.a]);
        ca = 0.5 / out;
        break;
      case Op::abs:
        out = std::abs(v[I.a]);
        ca = v[I.a] >= 0.0 ? 1.0 : -1.0;
        break;
      case Op::max:
        if (v[I.a] >= v[I.b]) {
          out = v[I.a];
          ca = 1.0;
        } else {
          out = v[I.b];
          cb = 1.0;
        }
        break;
      case Op::min:
        if (v[I.a] <= v[I.b]) {
          out = v[I.a];
          ca = 1.0;
        } else {
          out = v[I.b];
          cb = 1.0;
        }
        break;
      case Op::select_sign: {
        const bool pos = v[I.a] >= 0.0;
        const int pick = pos ? I.b : I.c;
        out = v[pick];
        if (with_derivs) {
          const int* m = maps + (pos ? I.map_b : I.map_c);
          const double* src = d + program_[pick].dbegin;
          double* dst = d + I.dbegin;
          for (int j = 0; j < I.dcount; ++j) dst[j] = m[j] >= 0 ? src[m[j]] : 0.0;
        }
        continue;
      }
    }
    if (!with_derivs || I.dcount == 0) continue;
    double* dst = d + I.dbegin;
    const double* da = d + program_[I.a].dbegin;
    const int* ma = maps + I.map_a;
    if (I.b < 0) {
      for (int j = 0; j < I.dcount; ++j) dst[j] = ca * da[ma[j]];
    } else {
      const double* db = d + program_[I.b].dbegin;
      const int* mb = maps + I.map_b;
      for (int j = 0; j < I.dcount; ++j) {
        const double x = ma[j] >= 0 ? ca * da[ma[j]] : 0.0;
        const double y = mb[j] >= 0 ? cb * db[mb[j]] : 0.0;
        dst[j] = x + y;
      }
    }
  }
}

void ResidualBlock::evaluate(const BlockInputs& in, std::int64_t begin, std::int64_t end,
                             std::span<double> out, std::span<double> jac) const {
  const bool with_derivs = !jac.empty();
  const std::size_t ns = slots_.size();
  std::vector<double> vals(program_.size());
  std::vector<double> derivs(with_derivs ? deriv_size_ : 0);
  const Instr& root = program_.back();
  const int* root_list = slot_lists_.data() + root.dbegin;
  for (std::int64_t r = begin; r < end; ++r) {
    run(in, r, vals.data(), derivs.data(), with_derivs);
    out[r - begin] = weight_ * vals.back();
    if (with_derivs) {
      double* row = jac.data() + (r - begin) * ns;
      std::fill(row, row + ns, 0.0);
      for (int j = 0; j < root.dcount; ++j) row[root_list[j]] = weight_ * derivs[root.dbegin + j];
    }
  }
}

void ResidualBlock::evaluate(const BlockInputs& in, std::span<double> out,
                             std::span<double> jac) const {
  const std::size_t ns = slots_.size();
  parallel_for(rows(), 2048, [&](std::int64_t b, std::int64_t e) {
    evaluate(in, b, e, out.subspan(b, e - b),
             jac.empty() ? jac : jac.subspan(b * ns, (e - b) * ns));
  });
}

BlockInputs ResidualBlock::bind(const FieldMap& fields, const ParamMap& params) const {
  BlockInputs in;
  auto lookup = [&](const std::string& n) -> std::span<const double> {
    const auto it = fields.find(n);
    if (it == fields.end()) throw Error("block '" + name_ + "': unbound field '" + n + "'");
    return it->second.values;
  };
  for (const auto& n : unknown_names_) in.unknowns.push_back(lookup(n));
  for (const auto& n : known_names_) in.knowns.push_back(lookup(n));
  for (const auto& n : param_names_) {
    const auto it = params.find(n);
    if (it == params.end()) throw Error("block '" + name_ + "': unbound parameter '" + n + "'");
    in.params.push_back(it->second);
  }
  return in;
}

std::vector<double> eval_residuals(const ResidualBlock& block, const FieldMap& fields,
                                   const ParamMap& params) {
  const auto in = block.bind(fields, params);
  std::vector<double> out(block.rows());
  block.evaluate(in, out, {});
  return out;
}

JacobianTriplets eval_jacobian(const ResidualBlock& block, const FieldMap& fields,
                               const ParamMap& params) {
  const auto in = block.bind(fields, params);
  const std::int64_t nr = block.rows();
  const int ns = block.slot_count();
  std::vector<double> res(nr), jac(nr * ns);
  block.evaluate(in, res, jac);

  std::vector<std::string> order = block.unknown_names();
  std::sort(order.begin(), order.end());
  std::vector<std::int64_t> base(block.unknown_names().size());
  std::int64_t acc = 0;
  for (const auto& n : order) {
    const auto id = std::find(block.unknown_names().begin(), block.unknown_names().end(), n) -
                    block.unknown_names().begin();
    base[id] = acc;
    acc += static_cast<std::int64_t>(fields.at(n).values.size());
  }
  JacobianTriplets t;
  for (std::int64_t r = 0; r < nr; ++r) {
    for (int s = 0; s < ns; ++s) {
      const Slot& sl = block.slots()[s];
      if (sl.kind != Slot::Kind::unknown) continue;
      t.rows.push_back(r);
      t.cols.push_back(base[sl.id] + block.slot_index(r, s));
      t.vals.push_back(jac[r * ns + s]);
    }
  }
  return t;
}

std::vector<double> eval_param_gradient(const ResidualBlock& block, const FieldMap& fields,
                                        const ParamMap& params, const std::string& param_name) {
  if (!params.count(param_name)) throw Error("unknown parameter '" + param_name + "'");
  const auto in = block.bind(fields, params);
  const std::int64_t nr = block.rows();
  const int ns = block.slot_count();
  std::vector<double> grad(nr, 0.0);
  int slot = -1;
  for (int s = 0; s < ns; ++s) {
    const Slot& sl = block.slots()[s];
    if (sl.kind == Slot::Kind::param && block.param_names()[sl.id] == param_name) slot = s;
  }
  if (slot < 0) return grad;
  std::vector<double> res(nr), jac(nr * ns);
  block.evaluate(in, res, jac);
  for (std::int64_t r = 0; r < nr; ++r) grad[r] = jac[r * ns + slot];
  return grad;
}

}  // namespace odil
