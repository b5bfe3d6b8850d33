#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "fedbnr/linalg.hpp"
#include "fedbnr/params.hpp"

namespace fedbnr::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid for the tape's lifetime.
struct Value {
  Tape* tape = nullptr;
  int index = -1;

  const Matrix& matrix() const;
  double scalar() const;  // 1x1 nodes
  Eigen::Index rows() const;
  Eigen::Index cols() const;
};

/// Reverse-mode tape over dense matrices. Supported primitives: add,
/// multiply, matmul, elementwise tanh/relu/exp/cos/sin/log, cholesky,
/// solve_psd, logdet, sum, trace, plus structural ops (transpose,
/// concatenation, row interleave, constant-exponent column products) needed
/// to assemble feature maps.
class Tape {
 public:
  /// Receives (tape, adjoint of this node, value of this node) and pushes
  /// gradient contributions to parents via accumulate().
  using BackwardFn = std::function<void(Tape&, const Matrix&, const Matrix&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Value var(Matrix value);       // differentiable leaf
  Value constant(Matrix value);  // non-differentiable leaf
  Value scalar_const(double value);

  /// Reverse pass from a 1x1 output. Adjoints of all differentiable nodes
  /// are available afterwards via adjoint().
  void backward(Value output);
  const Matrix& adjoint(Value v) const;

  // low-level API used by the op implementations
  Value emit(Matrix value, bool requires_grad, BackwardFn backward);
  void accumulate(int index, const Matrix& grad);
  bool requires_grad(Value v) const;
  const Matrix& value_of(int index) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  friend struct Value;

  struct Node {
    Matrix value;
    Matrix adj;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
};

// ---- primitives ----
// add: same shape, or broadcast of a 1x1 scalar / column vector operand
Value add(Value a, Value b);
Value sub(Value a, Value b);
// multiply: elementwise same shape, or broadcast with a 1x1 operand
Value multiply(Value a, Value b);
Value scale(Value a, double c);
Value matmul(Value a, Value b, bool trans_a = false, bool trans_b = false);
Value transpose(Value a);
Value tanh(Value a);
Value relu(Value a);
Value exp(Value a);
Value cos(Value a);
Value sin(Value a);
Value log(Value a);
Value cholesky(Value a);               // lower factor; a symmetric PD
Value solve_psd(Value chol, Value b);  // (L·Lᵀ)⁻¹ b
Value logdet(Value chol);              // 1x1
Value sum(Value a);                    // 1x1
Value trace(Value a);                  // 1x1

// ---- structural ops ----
Value vcat(std::span<const Value> parts);
/// Rows of the result alternate a.row(i), b.row(i).
Value interleave_rows(Value a, Value b);
/// Column j of the (1 x n) result is Π_i base(i,j)^exponents(i,j).
/// Exponents are a fixed matrix (integer-valued for negative bases).
Value colprod_pow(Value base, const Matrix& exponents);

/// Builds a scalar loss over the layout's segments (same order as the
/// layout; each segment presented as a matrix-valued leaf).
using LossFn = std::function<Value(Tape&, std::span<const Value> segments)>;

struct GradResult {
  double value = 0.0;
  ParamVector grads;
};

/// Loss value only (forward pass).
double evaluate(const LossFn& loss, const ParamVector& params);

/// Exact reverse-mode value and gradient of the loss at params.
GradResult evaluate_with_gradient(const LossFn& loss,
                                  const ParamVector& params);

/// Central differences (f(p+h) - f(p-h)) / 2h per coordinate; test oracle,
/// independent of the reverse-mode path.
ParamVector finite_difference_gradient(const LossFn& loss,
                                       const ParamVector& params,
                                       double step);

}  // namespace fedbnr::ad
