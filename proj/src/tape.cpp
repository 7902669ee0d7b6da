#include "tape.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"

namespace mmpivot {

const char* op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kConstant: return "constant";
    case Op::kMatMul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kAddRowVec: return "add_rowvec";
    case Op::kScalarMul: return "scalar_mul";
    case Op::kSigmoid: return "sigmoid";
    case Op::kTanh: return "tanh";
    case Op::kRelu: return "relu";
    case Op::kAbs: return "abs";
    case Op::kMaxConst: return "max_const";
    case Op::kSum: return "sum";
    case Op::kSqnormRows: return "sqnorm_rows";
    case Op::kL2NormRows: return "l2norm_rows";
    case Op::kGatherRows: return "gather_rows";
    case Op::kSliceRows: return "slice_rows";
    case Op::kSliceCols: return "slice_cols";
    case Op::kTranspose: return "transpose";
    case Op::kReshape: return "reshape";
    case Op::kConcatRows: return "concat_rows";
  }
  return "?";
}

namespace {

std::string node_desc(const TapeNode& n, int32_t id) {
  std::string s = concat("node ", id, " (", op_name(n.op));
  if (!n.name.empty()) s += concat(" '", n.name, "'");
  return s + ")";
}

int64_t nrows(const TapeNode& n) { return n.shape[0]; }
int64_t ncols(const TapeNode& n) { return n.shape[1]; }

}  // namespace

const TapeNode& Tape::node(int32_t id) const {
  if (id < 0 || id >= size()) fail_invalid("tape node id ", id, " out of range");
  return nodes_[static_cast<size_t>(id)];
}

const Tensor& Tape::constant_value(int32_t id) const {
  auto it = constants_.find(id);
  if (it == constants_.end()) fail_invalid("node ", id, " is not a constant");
  return it->second;
}

int32_t Tape::push(TapeNode node) {
  if (node.shape.size() != 2) fail_invalid("tape nodes are rank-2, got ", shape_string(node.shape));
  shape_size(node.shape);  // validates positive extents
  nodes_.push_back(std::move(node));
  return size() - 1;
}

const TapeNode& Tape::operand(int32_t id, const char* op) const {
  if (id < 0 || id >= size()) fail_invalid(op, ": operand id ", id, " out of range");
  return nodes_[static_cast<size_t>(id)];
}

int32_t Tape::input(std::string name, int64_t rows, int64_t cols) {
  if (name.empty()) fail_invalid("input name must be non-empty");
  for (int32_t id : input_ids_)
    if (nodes_[static_cast<size_t>(id)].name == name)
      fail_invalid("duplicate input name '", name, "'");
  TapeNode n{Op::kInput, {}, Shape{rows, cols}, 0.0, false, false, {}, std::move(name)};
  const int32_t id = push(std::move(n));
  input_ids_.push_back(id);
  return id;
}

int32_t Tape::constant(Tensor value, std::string label) {
  if (value.rank() != 2) fail_invalid("tape constants are rank-2, got ", shape_string(value.shape()));
  if (!value.all_finite()) fail_invalid("constant '", label, "' has non-finite entries");
  TapeNode n{Op::kConstant, {}, value.shape(), 0.0, false, false, {}, std::move(label)};
  const int32_t id = push(std::move(n));
  constants_.emplace(id, std::move(value));
  return id;
}

int32_t Tape::matmul(int32_t a, int32_t b, bool trans_a, bool trans_b) {
  const TapeNode& na = operand(a, "matmul");
  const TapeNode& nb = operand(b, "matmul");
  const int64_t m = trans_a ? ncols(na) : nrows(na);
  const int64_t ka = trans_a ? nrows(na) : ncols(na);
  const int64_t kb = trans_b ? ncols(nb) : nrows(nb);
  const int64_t n = trans_b ? nrows(nb) : ncols(nb);
  if (ka != kb)
    fail_invalid("matmul inner extents differ: ", shape_string(na.shape),
                 trans_a ? "^T" : "", " vs ", shape_string(nb.shape), trans_b ? "^T" : "");
  return push({Op::kMatMul, {a, b}, Shape{m, n}, 0.0, trans_a, trans_b, {}, {}});
}

int32_t Tape::add(int32_t a, int32_t b) {
  const TapeNode& na = operand(a, "add");
  const TapeNode& nb = operand(b, "add");
  if (na.shape != nb.shape)
    fail_invalid("add shape mismatch: ", shape_string(na.shape), " vs ", shape_string(nb.shape));
  return push({Op::kAdd, {a, b}, na.shape, 0.0, false, false, {}, {}});
}

int32_t Tape::sub(int32_t a, int32_t b) {
  const TapeNode& na = operand(a, "sub");
  const TapeNode& nb = operand(b, "sub");
  if (na.shape != nb.shape)
    fail_invalid("sub shape mismatch: ", shape_string(na.shape), " vs ", shape_string(nb.shape));
  return push({Op::kSub, {a, b}, na.shape, 0.0, false, false, {}, {}});
}

int32_t Tape::mul(int32_t a, int32_t b) {
  const TapeNode& na = operand(a, "mul");
  const TapeNode& nb = operand(b, "mul");
  if (na.shape != nb.shape)
    fail_invalid("mul shape mismatch: ", shape_string(na.shape), " vs ", shape_string(nb.shape));
  return push({Op::kMul, {a, b}, na.shape, 0.0, false, false, {}, {}});
}

int32_t Tape::add_rowvec(int32_t mat, int32_t row) {
  const TapeNode& nm = operand(mat, "add_rowvec");
  const TapeNode& nr = operand(row, "add_rowvec");
  if (nrows(nr) != 1 || ncols(nr) != ncols(nm))
    fail_invalid("add_rowvec needs a 1 x ", ncols(nm), " row, got ", shape_string(nr.shape));
  return push({Op::kAddRowVec, {mat, row}, nm.shape, 0.0, false, false, {}, {}});
}

int32_t Tape::scalar_mul(int32_t a, double factor) {
  const TapeNode& na = operand(a, "scalar_mul");
  return push({Op::kScalarMul, {a}, na.shape, factor, false, false, {}, {}});
}

int32_t Tape::sigmoid(int32_t a) {
  return push({Op::kSigmoid, {a}, operand(a, "sigmoid").shape, 0.0, false, false, {}, {}});
}

int32_t Tape::tanh(int32_t a) {
  return push({Op::kTanh, {a}, operand(a, "tanh").shape, 0.0, false, false, {}, {}});
}

int32_t Tape::relu(int32_t a) {
  return push({Op::kRelu, {a}, operand(a, "relu").shape, 0.0, false, false, {}, {}});
}

int32_t Tape::abs(int32_t a) {
  return push({Op::kAbs, {a}, operand(a, "abs").shape, 0.0, false, false, {}, {}});
}

int32_t Tape::max_const(int32_t a, double bound) {
  return push({Op::kMaxConst, {a}, operand(a, "max_const").shape, bound, false, false, {}, {}});
}

int32_t Tape::sum(int32_t a) {
  operand(a, "sum");
  return push({Op::kSum, {a}, Shape{1, 1}, 0.0, false, false, {}, {}});
}

int32_t Tape::sqnorm_rows(int32_t a) {
  const TapeNode& na = operand(a, "sqnorm_rows");
  return push({Op::kSqnormRows, {a}, Shape{nrows(na), 1}, 0.0, false, false, {}, {}});
}

int32_t Tape::l2norm_rows(int32_t a) {
  return push({Op::kL2NormRows, {a}, operand(a, "l2norm_rows").shape, 0.0, false, false, {}, {}});
}

int32_t Tape::gather_rows(int32_t a, std::vector<int64_t> rows) {
  const TapeNode& na = operand(a, "gather_rows");
  if (rows.empty()) fail_invalid("gather_rows needs at least one index");
  for (int64_t r : rows)
    if (r < 0 || r >= nrows(na))
      fail_invalid("gather_rows index ", r, " out of range for ", shape_string(na.shape));
  const int64_t m = static_cast<int64_t>(rows.size());
  return push({Op::kGatherRows, {a}, Shape{m, ncols(na)}, 0.0, false, false, std::move(rows), {}});
}

int32_t Tape::slice_rows(int32_t a, int64_t begin, int64_t end) {
  const TapeNode& na = operand(a, "slice_rows");
  if (begin < 0 || end > nrows(na) || begin >= end)
    fail_invalid("slice_rows [", begin, ", ", end, ") invalid for ", shape_string(na.shape));
  return push({Op::kSliceRows, {a}, Shape{end - begin, ncols(na)}, 0.0, false, false,
               {begin, end}, {}});
}

int32_t Tape::slice_cols(int32_t a, int64_t begin, int64_t end) {
  const TapeNode& na = operand(a, "slice_cols");
  if (begin < 0 || end > ncols(na) || begin >= end)
    fail_invalid("slice_cols [", begin, ", ", end, ") invalid for ", shape_string(na.shape));
  return push({Op::kSliceCols, {a}, Shape{nrows(na), end - begin}, 0.0, false, false,
               {begin, end}, {}});
}

int32_t Tape::transpose(int32_t a) {
  const TapeNode& na = operand(a, "transpose");
  return push({Op::kTranspose, {a}, Shape{ncols(na), nrows(na)}, 0.0, false, false, {}, {}});
}

int32_t Tape::reshape(int32_t a, int64_t rows, int64_t cols) {
  const TapeNode& na = operand(a, "reshape");
  if (rows * cols != nrows(na) * ncols(na))
    fail_invalid("reshape to ", rows, " x ", cols, " changes size of ", shape_string(na.shape));
  return push({Op::kReshape, {a}, Shape{rows, cols}, 0.0, false, false, {}, {}});
}

int32_t Tape::concat_rows(std::vector<int32_t> parts) {
  if (parts.empty()) fail_invalid("concat_rows needs at least one part");
  int64_t rows = 0;
  const int64_t cols = ncols(operand(parts[0], "concat_rows"));
  for (int32_t p : parts) {
    const TapeNode& np = operand(p, "concat_rows");
    if (ncols(np) != cols)
      fail_invalid("concat_rows column mismatch: ", cols, " vs ", shape_string(np.shape));
    rows += nrows(np);
  }
  return push({Op::kConcatRows, std::move(parts), Shape{rows, cols}, 0.0, false, false, {}, {}});
}

namespace {

// out (+)= op(A) . op(B)
template <typename Real>
void matmul_acc(TensorT<Real>& out, const TensorT<Real>& a, bool ta, const TensorT<Real>& b,
                bool tb, bool accumulate) {
  const int64_t m = out.rows();
  const int64_t n = out.cols();
  const int64_t k = ta ? a.rows() : a.cols();
  if (!accumulate) std::fill(out.values().begin(), out.values().end(), Real(0));
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t p = 0; p < k; ++p) {
      const Real av = ta ? a(p, i) : a(i, p);
      if (av == Real(0)) continue;
      for (int64_t j = 0; j < n; ++j) {
        out(i, j) += av * (tb ? b(j, p) : b(p, j));
      }
    }
  }
}

template <typename Real>
void check_finite(const TensorT<Real>& t, const TapeNode& n, int32_t id, const char* phase) {
  if (!t.all_finite())
    fail_runtime("non-finite value in ", phase, " at ", node_desc(n, id));
}

}  // namespace

template <typename Real>
std::vector<TensorT<Real>> tape_forward(const Tape& tape, const BindingsT<Real>& bindings) {
  std::vector<TensorT<Real>> values(static_cast<size_t>(tape.size()));
  for (int32_t id = 0; id < tape.size(); ++id) {
    const TapeNode& n = tape.node(id);
    const auto arg = [&](size_t i) -> const TensorT<Real>& {
      return values[static_cast<size_t>(n.args[i])];
    };
    TensorT<Real> out;
    switch (n.op) {
      case Op::kInput: {
        auto it = bindings.find(n.name);
        if (it == bindings.end()) fail_invalid("unbound input '", n.name, "'");
        if (it->second.shape() != n.shape)
          fail_invalid("binding '", n.name, "' has shape ", shape_string(it->second.shape()),
                       ", expected ", shape_string(n.shape));
        out = it->second;
        break;
      }
      case Op::kConstant:
        out = tape.constant_value(id).template cast<Real>();
        break;
      case Op::kMatMul: {
        out = TensorT<Real>(n.shape);
        matmul_acc(out, arg(0), n.trans_a, arg(1), n.trans_b, false);
        break;
      }
      case Op::kAdd: {
        out = arg(0);
        const auto& b = arg(1);
        for (int64_t i = 0; i < out.size(); ++i) out[i] += b[i];
        break;
      }
      case Op::kSub: {
        out = arg(0);
        const auto& b = arg(1);
        for (int64_t i = 0; i < out.size(); ++i) out[i] -= b[i];
        break;
      }
      case Op::kMul: {
        out = arg(0);
        const auto& b = arg(1);
        for (int64_t i = 0; i < out.size(); ++i) out[i] *= b[i];
        break;
      }
      case Op::kAddRowVec: {
        out = arg(0);
        const auto& r = arg(1);
        for (int64_t i = 0; i < out.rows(); ++i)
          for (int64_t j = 0; j < out.cols(); ++j) out(i, j) += r[j];
        break;
      }
      case Op::kScalarMul: {
        out = arg(0);
        const Real f = static_cast<Real>(n.scalar);
        for (int64_t i = 0; i < out.size(); ++i) out[i] *= f;
        break;
      }
      case Op::kSigmoid: {
        out = arg(0);
        for (int64_t i = 0; i < out.size(); ++i)
          out[i] = Real(1) / (Real(1) + std::exp(-out[i]));
        break;
      }
      case Op::kTanh: {
        out = arg(0);
        for (int64_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
        break;
      }
      case Op::kRelu: {
        out = arg(0);
        for (int64_t i = 0; i < out.size(); ++i) out[i] = std::max(Real(0), out[i]);
        break;
      }
      case Op::kAbs: {
        out = arg(0);
        for (int64_t i = 0; i < out.size(); ++i) out[i] = std::abs(out[i]);
        break;
      }
      case Op::kMaxConst: {
        out = arg(0);
        const Real c = static_cast<Real>(n.scalar);
        for (int64_t i = 0; i < out.size(); ++i) out[i] = std::max(c, out[i]);
        break;
      }
      case Op::kSum: {
        Real acc = 0;
        for (Real v : arg(0).values()) acc += v;
        out = TensorT<Real>::scalar(acc);
        break;
      }
      case Op::kSqnormRows: {
        const auto& a = arg(0);
        out = TensorT<Real>(n.shape);
        for (int64_t i = 0; i < a.rows(); ++i) {
          Real acc = 0;
          for (int64_t j = 0; j < a.cols(); ++j) acc += a(i, j) * a(i, j);
          out(i, 0) = acc;
        }
        break;
      }
      case Op::kL2NormRows: {
        const auto& a = arg(0);
        out = TensorT<Real>(n.shape);
        for (int64_t i = 0; i < a.rows(); ++i) {
          Real acc = 0;
          for (int64_t j = 0; j < a.cols(); ++j) acc += a(i, j) * a(i, j);
          const Real norm = std::sqrt(acc);
          if (norm > Real(0))
            for (int64_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j) / norm;
          // zero rows stay zero
        }
        break;
      }
      case Op::kGatherRows: {
        const auto& a = arg(0);
        out = TensorT<Real>(n.shape);
        for (size_t r = 0; r < n.index.size(); ++r) {
          const auto src = a.row_span(n.index[r]);
          std::copy(src.begin(), src.end(), out.row_span(static_cast<int64_t>(r)).begin());
        }
        break;
      }
      case Op::kSliceRows: {
        const auto& a = arg(0);
        out = TensorT<Real>(n.shape);
        for (int64_t i = 0; i < out.rows(); ++i) {
          const auto src = a.row_span(n.index[0] + i);
          std::copy(src.begin(), src.end(), out.row_span(i).begin());
        }
        break;
      }
      case Op::kSliceCols: {
        const auto& a = arg(0);
        out = TensorT<Real>(n.shape);
        for (int64_t i = 0; i < out.rows(); ++i)
          for (int64_t j = 0; j < out.cols(); ++j) out(i, j) = a(i, n.index[0] + j);
        break;
      }
      case Op::kTranspose: {
        const auto& a = arg(0);
        out = TensorT<Real>(n.shape);
        for (int64_t i = 0; i < a.rows(); ++i)
          for (int64_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
        break;
      }
      case Op::kReshape: {
        out = TensorT<Real>(n.shape, std::vector<Real>(arg(0).values().begin(),
                                                       arg(0).values().end()));
        break;
      }
      case Op::kConcatRows: {
        out = TensorT<Real>(n.shape);
        int64_t at = 0;
        for (int32_t p : n.args) {
          const auto& part = values[static_cast<size_t>(p)];
          for (int64_t i = 0; i < part.rows(); ++i, ++at) {
            const auto src = part.row_span(i);
            std::copy(src.begin(), src.end(), out.row_span(at).begin());
          }
        }
        break;
      }
    }
    check_finite(out, n, id, "forward");
    values[static_cast<size_t>(id)] = std::move(out);
  }
  return values;
}

template <typename Real>
BindingsT<Real> tape_backward(const Tape& tape, const std::vector<TensorT<Real>>& values,
                              int32_t wrt) {
  if (wrt < 0 || wrt >= tape.size()) fail_invalid("backward: wrt node ", wrt, " out of range");
  if (values.size() != static_cast<size_t>(tape.size()))
    fail_invalid("backward: values do not match tape; run tape_forward first");
  const TapeNode& target = tape.node(wrt);
  if (target.shape != Shape{1, 1})
    fail_invalid("backward target must be scalar-shaped, ", node_desc(target, wrt), " is ",
                 shape_string(target.shape));

  std::vector<TensorT<Real>> adj(static_cast<size_t>(tape.size()));
  for (int32_t id = 0; id <= wrt; ++id) adj[static_cast<size_t>(id)] = TensorT<Real>(tape.node(id).shape);
  adj[static_cast<size_t>(wrt)][0] = Real(1);

  for (int32_t id = wrt; id >= 0; --id) {
    const TapeNode& n = tape.node(id);
    const TensorT<Real>& d = adj[static_cast<size_t>(id)];
    const auto val = [&](size_t i) -> const TensorT<Real>& {
      return values[static_cast<size_t>(n.args[i])];
    };
    const auto grad = [&](size_t i) -> TensorT<Real>& {
      return adj[static_cast<size_t>(n.args[i])];
    };
    switch (n.op) {
      case Op::kInput:
      case Op::kConstant:
        break;
      case Op::kMatMul: {
        // c = op(a) . op(b)
        TensorT<Real>& da = grad(0);
        TensorT<Real>& db = grad(1);
        if (!n.trans_a && !n.trans_b) {
          matmul_acc(da, d, false, val(1), true, true);   // da += d . b^T
          matmul_acc(db, val(0), true, d, false, true);   // db += a^T . d
        } else if (n.trans_a && !n.trans_b) {
          matmul_acc(da, val(1), false, d, true, true);   // da += b . d^T
          matmul_acc(db, val(0), false, d, false, true);  // db += a . d
        } else if (!n.trans_a && n.trans_b) {
          matmul_acc(da, d, false, val(1), false, true);  // da += d . b
          matmul_acc(db, d, true, val(0), false, true);   // db += d^T . a
        } else {
          matmul_acc(da, val(1), true, d, true, true);    // da += b^T . d^T
          matmul_acc(db, d, true, val(0), true, true);    // db += d^T . a^T
        }
        break;
      }
      case Op::kAdd: {
        for (int64_t i = 0; i < d.size(); ++i) {
          grad(0)[i] += d[i];
          grad(1)[i] += d[i];
        }
        break;
      }
      case Op::kSub: {
        for (int64_t i = 0; i < d.size(); ++i) {
          grad(0)[i] += d[i];
          grad(1)[i] -= d[i];
        }
        break;
      }
      case Op::kMul: {
        const auto& a = val(0);
        const auto& b = val(1);
        for (int64_t i = 0; i < d.size(); ++i) {
          grad(0)[i] += d[i] * b[i];
          grad(1)[i] += d[i] * a[i];
        }
        break;
      }
      case Op::kAddRowVec: {
        TensorT<Real>& dm = grad(0);
        TensorT<Real>& dr = grad(1);
        for (int64_t i = 0; i < d.rows(); ++i)
          for (int64_t j = 0; j < d.cols(); ++j) {
            dm(i, j) += d(i, j);
            dr[j] += d(i, j);
          }
        break;
      }
      case Op::kScalarMul: {
        const Real f = static_cast<Real>(n.scalar);
        for (int64_t i = 0; i < d.size(); ++i) grad(0)[i] += d[i] * f;
        break;
      }
      case Op::kSigmoid: {
        const auto& y = values[static_cast<size_t>(id)];
        for (int64_t i = 0; i < d.size(); ++i) grad(0)[i] += d[i] * y[i] * (Real(1) - y[i]);
        break;
      }
      case Op::kTanh: {
        const auto& y = values[static_cast<size_t>(id)];
        for (int64_t i = 0; i < d.size(); ++i) grad(0)[i] += d[i] * (Real(1) - y[i] * y[i]);
        break;
      }
      case Op::kRelu: {
        const auto& x = val(0);
        for (int64_t i = 0; i < d.size(); ++i)
          if (x[i] > Real(0)) grad(0)[i] += d[i];
        break;
      }
      case Op::kAbs: {
        const auto& x = val(0);
        for (int64_t i = 0; i < d.size(); ++i) {
          if (x[i] > Real(0)) grad(0)[i] += d[i];
          else if (x[i] < Real(0)) grad(0)[i] -= d[i];
        }
        break;
      }
      case Op::kMaxConst: {
        const auto& x = val(0);
        const Real c = static_cast<Real>(n.scalar);
        for (int64_t i = 0; i < d.size(); ++i)
          if (x[i] > c) grad(0)[i] += d[i];
        break;
      }
      case Op::kSum: {
        const Real g = d[0];
        for (int64_t i = 0; i < grad(0).size(); ++i) grad(0)[i] += g;
        break;
      }
      case Op::kSqnormRows: {
        const auto& x = val(0);
        TensorT<Real>& dx = grad(0);
        for (int64_t i = 0; i < x.rows(); ++i) {
          const Real g = Real(2) * d(i, 0);
          for (int64_t j = 0; j < x.cols(); ++j) dx(i, j) += g * x(i, j);
        }
        break;
      }
      case Op::kL2NormRows: {
        const auto& x = val(0);
        const auto& y = values[static_cast<size_t>(id)];
        TensorT<Real>& dx = grad(0);
        for (int64_t i = 0; i < x.rows(); ++i) {
          Real acc = 0;
          for (int64_t j = 0; j < x.cols(); ++j) acc += x(i, j) * x(i, j);
          const Real norm = std::sqrt(acc);
          if (norm == Real(0)) continue;  // zero rows carry no gradient
          Real dot = 0;
          for (int64_t j = 0; j < x.cols(); ++j) dot += d(i, j) * y(i, j);
          for (int64_t j = 0; j < x.cols(); ++j)
            dx(i, j) += (d(i, j) - y(i, j) * dot) / norm;
        }
        break;
      }
      case Op::kGatherRows: {
        TensorT<Real>& dx = grad(0);
        for (size_t r = 0; r < n.index.size(); ++r) {
          const auto src = d.row_span(static_cast<int64_t>(r));
          auto dst = dx.row_span(n.index[r]);
          for (size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
        }
        break;
      }
      case Op::kSliceRows: {
        TensorT<Real>& dx = grad(0);
        for (int64_t i = 0; i < d.rows(); ++i) {
          const auto src = d.row_span(i);
          auto dst = dx.row_span(n.index[0] + i);
          for (size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
        }
        break;
      }
      case Op::kSliceCols: {
        TensorT<Real>& dx = grad(0);
        for (int64_t i = 0; i < d.rows(); ++i)
          for (int64_t j = 0; j < d.cols(); ++j) dx(i, n.index[0] + j) += d(i, j);
        break;
      }
      case Op::kTranspose: {
        TensorT<Real>& dx = grad(0);
        for (int64_t i = 0; i < d.rows(); ++i)
          for (int64_t j = 0; j < d.cols(); ++j) dx(j, i) += d(i, j);
        break;
      }
      case Op::kReshape: {
        TensorT<Real>& dx = grad(0);
        for (int64_t i = 0; i < d.size(); ++i) dx[i] += d[i];
        break;
      }
      case Op::kConcatRows: {
        int64_t at = 0;
        for (size_t p = 0; p < n.args.size(); ++p) {
          TensorT<Real>& dx = adj[static_cast<size_t>(n.args[p])];
          for (int64_t i = 0; i < dx.rows(); ++i, ++at) {
            const auto src = d.row_span(at);
            auto dst = dx.row_span(i);
            for (size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
          }
        }
        break;
      }
    }
  }

  BindingsT<Real> grads;
  for (int32_t id : tape.input_ids()) {
    if (id > wrt) {
      grads.emplace(tape.node(id).name, TensorT<Real>(tape.node(id).shape));
      continue;
    }
    check_finite(adj[static_cast<size_t>(id)], tape.node(id), id, "backward");
    grads.emplace(tape.node(id).name, std::move(adj[static_cast<size_t>(id)]));
  }
  return grads;
}

double tape_check_gradient(const Tape& tape, const Bindings& bindings, int32_t wrt,
                           double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1e-2))
    fail_invalid("check_gradient epsilon must be in (0, 1e-2], got ", epsilon);
  BindingsT<double> b64 = widen_bindings<double>(bindings);
  const auto values = tape_forward<double>(tape, b64);
  const auto analytic = tape_backward<double>(tape, values, wrt);

  double worst = 0.0;
  for (auto& [name, tensor] : b64) {
    const auto found = analytic.find(name);
    if (found == analytic.end()) continue;  // binding not consumed by this tape
    const TensorD& a_grad = found->second;
    for (int64_t i = 0; i < tensor.size(); ++i) {
      const double orig = tensor[i];
      tensor[i] = orig + epsilon;
      const double f_plus = tape_forward<double>(tape, b64)[static_cast<size_t>(wrt)][0];
      tensor[i] = orig - epsilon;
      const double f_minus = tape_forward<double>(tape, b64)[static_cast<size_t>(wrt)][0];
      tensor[i] = orig;
      const double numeric = (f_plus - f_minus) / (2.0 * epsilon);
      const double a = a_grad[i];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

template std::vector<TensorT<float>> tape_forward<float>(const Tape&, const BindingsT<float>&);
template std::vector<TensorT<double>> tape_forward<double>(const Tape&, const BindingsT<double>&);
template BindingsT<float> tape_backward<float>(const Tape&, const std::vector<TensorT<float>>&,
                                               int32_t);
template BindingsT<double> tape_backward<double>(const Tape&, const std::vector<TensorT<double>>&,
                                                 int32_t);

}  // namespace mmpivot
