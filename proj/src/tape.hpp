#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace mmpivot {

// Closed primitive set. Every encoder and loss in this project lowers to
// these ops; there are no user-defined extensions.
enum class Op : uint8_t {
  kInput,
  kConstant,
  kMatMul,      // optional transposes on either operand
  kAdd,
  kSub,
  kMul,         // elementwise
  kAddRowVec,   // matrix + broadcast 1 x n row
  kScalarMul,
  kSigmoid,
  kTanh,
  kRelu,        // max(0, x); subgradient 0 at x = 0
  kAbs,
  kMaxConst,    // max(x, c)
  kSum,         // all entries -> 1 x 1
  kSqnormRows,  // per-row squared L2 norm -> m x 1
  kL2NormRows,  // per-row unit normalization; zero rows stay zero
  kGatherRows,  // row lookup by fixed index list
  kSliceRows,
  kSliceCols,
  kTranspose,
  kReshape,
  kConcatRows,
};

const char* op_name(Op op);

struct TapeNode {
  Op op;
  std::vector<int32_t> args;
  Shape shape;                 // output shape, always rank 2
  double scalar = 0.0;         // kScalarMul factor / kMaxConst bound
  bool trans_a = false;
  bool trans_b = false;
  std::vector<int64_t> index;  // kGatherRows: row ids; kSlice*: {begin, end}
  std::string name;            // kInput: binding key; otherwise a debug label
};

// Append-only computation graph. Nodes are recorded in topological order by
// construction and the tape is immutable once handed to an evaluator.
class Tape {
 public:
  int32_t input(std::string name, int64_t rows, int64_t cols);
  int32_t constant(Tensor value, std::string label = {});

  int32_t matmul(int32_t a, int32_t b, bool trans_a = false, bool trans_b = false);
  int32_t add(int32_t a, int32_t b);
  int32_t sub(int32_t a, int32_t b);
  int32_t mul(int32_t a, int32_t b);
  int32_t add_rowvec(int32_t mat, int32_t row);
  int32_t scalar_mul(int32_t a, double factor);
  int32_t sigmoid(int32_t a);
  int32_t tanh(int32_t a);
  int32_t relu(int32_t a);
  int32_t abs(int32_t a);
  int32_t max_const(int32_t a, double bound);
  int32_t sum(int32_t a);
  int32_t sqnorm_rows(int32_t a);
  int32_t l2norm_rows(int32_t a);
  int32_t gather_rows(int32_t a, std::vector<int64_t> rows);
  int32_t slice_rows(int32_t a, int64_t begin, int64_t end);
  int32_t slice_cols(int32_t a, int64_t begin, int64_t end);
  int32_t transpose(int32_t a);
  int32_t reshape(int32_t a, int64_t rows, int64_t cols);
  int32_t concat_rows(std::vector<int32_t> parts);

  int32_t size() const { return static_cast<int32_t>(nodes_.size()); }
  const TapeNode& node(int32_t id) const;
  const std::vector<TapeNode>& nodes() const { return nodes_; }
  const Tensor& constant_value(int32_t id) const;
  const std::vector<int32_t>& input_ids() const { return input_ids_; }

 private:
  int32_t push(TapeNode node);
  const TapeNode& operand(int32_t id, const char* op) const;

  std::vector<TapeNode> nodes_;
  std::map<int32_t, Tensor> constants_;
  std::vector<int32_t> input_ids_;
};

template <typename Real>
using BindingsT = std::map<std::string, TensorT<Real>>;
using Bindings = BindingsT<float>;

template <typename Real>
BindingsT<Real> widen_bindings(const Bindings& bindings) {
  BindingsT<Real> out;
  for (const auto& [name, value] : bindings) out.emplace(name, value.template cast<Real>());
  return out;
}

// Evaluates every node; result i is the value of node i. Identical bindings
// give bit-identical values. Non-finite intermediates are a hard failure.
template <typename Real>
std::vector<TensorT<Real>> tape_forward(const Tape& tape, const BindingsT<Real>& bindings);

// Gradients of the scalar node `wrt` with respect to every bound input,
// keyed by input name. `values` must come from tape_forward on this tape.
template <typename Real>
BindingsT<Real> tape_backward(const Tape& tape, const std::vector<TensorT<Real>>& values,
                              int32_t wrt);

// Max over all input coordinates of
//   |analytic - central_difference| / max(1, |analytic|, |numeric|),
// evaluated in 64-bit precision regardless of the training dtype.
double tape_check_gradient(const Tape& tape, const Bindings& bindings, int32_t wrt,
                           double epsilon);

}  // namespace mmpivot
