#include "fedbnr/autodiff.hpp"

#include <cmath>

#include "fedbnr/errors.hpp"

namespace fedbnr::ad {

namespace {

void check_same_tape(Value a, Value b) {
  if (a.tape != b.tape) {
    throw std::invalid_argument("autodiff: operands from different tapes");
  }
}

// strict lower triangle plus half the diagonal; the masking operator of the
// Cholesky adjoint
Matrix phi_mask(const Matrix& m) {
  Matrix out = m.triangularView<Eigen::StrictlyLower>();
  out.diagonal() = 0.5 * m.diagonal();
  return out;
}

}  // namespace

const Matrix& Value::matrix() const { return tape->value_of(index); }

double Value::scalar() const {
  const Matrix& m = matrix();
  if (m.rows() != 1 || m.cols() != 1) {
    throw DimensionMismatch("Value::scalar on a non-1x1 node");
  }
  return m(0, 0);
}

Eigen::Index Value::rows() const { return matrix().rows(); }
Eigen::Index Value::cols() const { return matrix().cols(); }

Value Tape::var(Matrix value) { return emit(std::move(value), true, nullptr); }

Value Tape::constant(Matrix value) {
  return emit(std::move(value), false, nullptr);
}

Value Tape::scalar_const(double value) {
  return constant(Matrix::Constant(1, 1, value));
}

Value Tape::emit(Matrix value, bool requires_grad, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Value{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(int index, const Matrix& grad) {
  Node& n = nodes_[static_cast<std::size_t>(index)];
  if (!n.requires_grad) return;
  if (n.adj.size() == 0) {
    n.adj = grad;
  } else {
    n.adj += grad;
  }
}

bool Tape::requires_grad(Value v) const {
  return nodes_[static_cast<std::size_t>(v.index)].requires_grad;
}

const Matrix& Tape::value_of(int index) const {
  return nodes_[static_cast<std::size_t>(index)].value;
}

void Tape::backward(Value output) {
  if (output.tape != this) {
    throw std::invalid_argument("backward: output from a different tape");
  }
  const Matrix& out = value_of(output.index);
  if (out.rows() != 1 || out.cols() != 1) {
    throw DimensionMismatch("backward: output must be 1x1");
  }
  for (auto& n : nodes_) n.adj.resize(0, 0);
  accumulate(output.index, Matrix::Ones(1, 1));
  for (int i = output.index; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || !n.backward || n.adj.size() == 0) continue;
    n.backward(*this, n.adj, n.value);
  }
}

const Matrix& Tape::adjoint(Value v) const {
  static const Matrix empty;
  const Node& n = nodes_[static_cast<std::size_t>(v.index)];
  return n.adj.size() == 0 ? empty : n.adj;
}

// ---------------------------------------------------------------------------

namespace {

bool any_grad(Value a) { return a.tape->requires_grad(a); }
bool any_grad(Value a, Value b) {
  return a.tape->requires_grad(a) || b.tape->requires_grad(b);
}

}  // namespace

Value add(Value a, Value b) {
  check_same_tape(a, b);
  const Matrix& va = a.matrix();
  const Matrix& vb = b.matrix();
  const int ia = a.index, ib = b.index;
  const bool grad = any_grad(a, b);

  if (va.rows() == vb.rows() && va.cols() == vb.cols()) {
    return a.tape->emit(va + vb, grad,
                        [ia, ib](Tape& t, const Matrix& g, const Matrix&) {
                          t.accumulate(ia, g);
                          t.accumulate(ib, g);
                        });
  }
  if (vb.rows() == 1 && vb.cols() == 1) {
    return a.tape->emit(va.array() + vb(0, 0), grad,
                        [ia, ib](Tape& t, const Matrix& g, const Matrix&) {
                          t.accumulate(ia, g);
                          t.accumulate(ib, Matrix::Constant(1, 1, g.sum()));
                        });
  }
  if (vb.cols() == 1 && vb.rows() == va.rows()) {
    // broadcast column vector across the columns of a
    return a.tape->emit(va.colwise() + vb.col(0), grad,
                        [ia, ib](Tape& t, const Matrix& g, const Matrix&) {
                          t.accumulate(ia, g);
                          t.accumulate(ib, g.rowwise().sum());
                        });
  }
  throw DimensionMismatch("add: incompatible shapes");
}

Value sub(Value a, Value b) { return add(a, scale(b, -1.0)); }

Value multiply(Value a, Value b) {
  check_same_tape(a, b);
  const Matrix& va = a.matrix();
  const Matrix& vb = b.matrix();
  if (va.rows() == 1 && va.cols() == 1 && vb.size() != 1) {
    return multiply(b, a);
  }
  const int ia = a.index, ib = b.index;
  const bool grad = any_grad(a, b);

  if (va.rows() == vb.rows() && va.cols() == vb.cols()) {
    return a.tape->emit(
        va.cwiseProduct(vb), grad,
        [ia, ib](Tape& t, const Matrix& g, const Matrix&) {
          t.accumulate(ia, g.cwiseProduct(t.value_of(ib)));
          t.accumulate(ib, g.cwiseProduct(t.value_of(ia)));
        });
  }
  if (vb.rows() == 1 && vb.cols() == 1) {
    return a.tape->emit(
        va * vb(0, 0), grad, [ia, ib](Tape& t, const Matrix& g, const Matrix&) {
          t.accumulate(ia, g * t.value_of(ib)(0, 0));
          t.accumulate(
              ib, Matrix::Constant(1, 1, g.cwiseProduct(t.value_of(ia)).sum()));
        });
  }
  throw DimensionMismatch("multiply: incompatible shapes");
}

Value scale(Value a, double c) {
  const int ia = a.index;
  return a.tape->emit(a.matrix() * c, any_grad(a),
                      [ia, c](Tape& t, const Matrix& g, const Matrix&) {
                        t.accumulate(ia, g * c);
                      });
}

Value matmul(Value a, Value b, bool trans_a, bool trans_b) {
  check_same_tape(a, b);
  const Matrix& va = a.matrix();
  const Matrix& vb = b.matrix();
  const Eigen::Index inner_a = trans_a ? va.rows() : va.cols();
  const Eigen::Index inner_b = trans_b ? vb.cols() : vb.rows();
  if (inner_a != inner_b) {
    throw DimensionMismatch("matmul: inner dimensions differ");
  }
  const Matrix x = trans_a ? Matrix(va.transpose()) : va;
  const Matrix y = trans_b ? Matrix(vb.transpose()) : vb;
  const int ia = a.index, ib = b.index;

  return a.tape->emit(
      x * y, any_grad(a, b),
      [ia, ib, trans_a, trans_b](Tape& t, const Matrix& g, const Matrix&) {
        const Matrix& va = t.value_of(ia);
        const Matrix& vb = t.value_of(ib);
        const Matrix x = trans_a ? Matrix(va.transpose()) : va;
        const Matrix y = trans_b ? Matrix(vb.transpose()) : vb;
        const Matrix gx = g * y.transpose();
        const Matrix gy = x.transpose() * g;
        t.accumulate(ia, trans_a ? Matrix(gx.transpose()) : gx);
        t.accumulate(ib, trans_b ? Matrix(gy.transpose()) : gy);
      });
}

Value transpose(Value a) {
  const int ia = a.index;
  return a.tape->emit(a.matrix().transpose(), any_grad(a),
                      [ia](Tape& t, const Matrix& g, const Matrix&) {
                        t.accumulate(ia, g.transpose());
                      });
}

namespace {

template <typename F, typename DF>
Value unary_elementwise(Value a, F f, DF df) {
  const int ia = a.index;
  Matrix out = a.matrix().unaryExpr(f);
  return a.tape->emit(std::move(out), any_grad(a),
                      [ia, df](Tape& t, const Matrix& g, const Matrix&) {
                        t.accumulate(
                            ia, g.cwiseProduct(t.value_of(ia).unaryExpr(df)));
                      });
}

}  // namespace

Value tanh(Value a) {
  return unary_elementwise(
      a, [](double x) { return std::tanh(x); },
      [](double x) {
        const double th = std::tanh(x);
        return 1.0 - th * th;
      });
}

Value relu(Value a) {
  return unary_elementwise(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Value exp(Value a) {
  return unary_elementwise(
      a, [](double x) { return std::exp(x); },
      [](double x) { return std::exp(x); });
}

Value cos(Value a) {
  return unary_elementwise(
      a, [](double x) { return std::cos(x); },
      [](double x) { return -std::sin(x); });
}

Value sin(Value a) {
  return unary_elementwise(
      a, [](double x) { return std::sin(x); },
      [](double x) { return std::cos(x); });
}

Value log(Value a) {
  return unary_elementwise(
      a, [](double x) { return std::log(x); },
      [](double x) { return 1.0 / x; });
}

Value cholesky(Value a) {
  const int ia = a.index;
  CholeskyFactor f = fedbnr::cholesky(a.matrix());
  // Adjoint of the factorization of symmetric A (Cholesky applied to the
  // symmetric part): Ā = sym(L⁻ᵀ · Φ(Lᵀ·L̄) · L⁻¹), Φ = strict lower + ½ diag.
  return a.tape->emit(
      std::move(f.lower), any_grad(a),
      [ia](Tape& t, const Matrix& g, const Matrix& l) {
        const Matrix p = phi_mask(l.transpose() * g);
        const Matrix s1 = l.transpose().triangularView<Eigen::Upper>().solve(p);
        const Matrix s = l.transpose()
                             .triangularView<Eigen::Upper>()
                             .solve(Matrix(s1.transpose()))
                             .transpose();
        t.accumulate(ia, 0.5 * (s + s.transpose()));
      });
}

Value solve_psd(Value chol, Value b) {
  check_same_tape(chol, b);
  const Matrix& l = chol.matrix();
  if (l.rows() != b.matrix().rows()) {
    throw DimensionMismatch("solve_psd: rhs rows do not match factor");
  }
  Matrix x = l.triangularView<Eigen::Lower>().solve(b.matrix());
  l.transpose().triangularView<Eigen::Upper>().solveInPlace(x);
  const int il = chol.index, ib = b.index;

  return chol.tape->emit(
      std::move(x), any_grad(chol, b),
      [il, ib](Tape& t, const Matrix& g, const Matrix& x) {
        const Matrix& l = t.value_of(il);
        Matrix s = l.triangularView<Eigen::Lower>().solve(g);
        l.transpose().triangularView<Eigen::Upper>().solveInPlace(s);
        t.accumulate(ib, s);
        if (t.requires_grad(Value{&t, il})) {
          // Ā = -A⁻¹·ḡ·xᵀ, then chain through A = L·Lᵀ
          const Matrix abar = -(s * x.transpose());
          const Matrix gl = (abar + abar.transpose()) * l;
          t.accumulate(il, Matrix(gl.triangularView<Eigen::Lower>()));
        }
      });
}

Value logdet(Value chol) {
  const int il = chol.index;
  const Matrix& l = chol.matrix();
  const double v = 2.0 * l.diagonal().array().log().sum();
  return chol.tape->emit(Matrix::Constant(1, 1, v), any_grad(chol),
                         [il](Tape& t, const Matrix& g, const Matrix&) {
                           const Matrix& l = t.value_of(il);
                           Matrix gl = Matrix::Zero(l.rows(), l.cols());
                           gl.diagonal() =
                               2.0 * g(0, 0) * l.diagonal().cwiseInverse();
                           t.accumulate(il, gl);
                         });
}

Value sum(Value a) {
  const int ia = a.index;
  return a.tape->emit(Matrix::Constant(1, 1, a.matrix().sum()), any_grad(a),
                      [ia](Tape& t, const Matrix& g, const Matrix&) {
                        const Matrix& v = t.value_of(ia);
                        t.accumulate(
                            ia, Matrix::Constant(v.rows(), v.cols(), g(0, 0)));
                      });
}

Value trace(Value a) {
  const Matrix& v = a.matrix();
  if (v.rows() != v.cols()) {
    throw DimensionMismatch("trace: matrix must be square");
  }
  const int ia = a.index;
  return a.tape->emit(Matrix::Constant(1, 1, v.trace()), any_grad(a),
                      [ia](Tape& t, const Matrix& g, const Matrix&) {
                        const Matrix& v = t.value_of(ia);
                        Matrix gi = Matrix::Zero(v.rows(), v.cols());
                        gi.diagonal().setConstant(g(0, 0));
                        t.accumulate(ia, gi);
                      });
}

Value vcat(std::span<const Value> parts) {
  if (parts.empty()) throw DimensionMismatch("vcat: no parts");
  Tape* tape = parts.front().tape;
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  bool grad = false;
  for (const Value& p : parts) {
    if (p.tape != tape) {
      throw std::invalid_argument("vcat: operands from different tapes");
    }
    if (p.cols() != cols) throw DimensionMismatch("vcat: column mismatch");
    rows += p.rows();
    grad = grad || tape->requires_grad(p);
  }
  Matrix out(rows, cols);
  std::vector<int> idx;
  std::vector<Eigen::Index> offs, lens;
  Eigen::Index at = 0;
  for (const Value& p : parts) {
    out.middleRows(at, p.rows()) = p.matrix();
    idx.push_back(p.index);
    offs.push_back(at);
    lens.push_back(p.rows());
    at += p.rows();
  }
  return tape->emit(std::move(out), grad,
                    [idx, offs, lens](Tape& t, const Matrix& g, const Matrix&) {
                      for (std::size_t k = 0; k < idx.size(); ++k) {
                        t.accumulate(idx[k], g.middleRows(offs[k], lens[k]));
                      }
                    });
}

Value interleave_rows(Value a, Value b) {
  check_same_tape(a, b);
  const Matrix& va = a.matrix();
  const Matrix& vb = b.matrix();
  if (va.rows() != vb.rows() || va.cols() != vb.cols()) {
    throw DimensionMismatch("interleave_rows: shapes differ");
  }
  Matrix out(2 * va.rows(), va.cols());
  for (Eigen::Index i = 0; i < va.rows(); ++i) {
    out.row(2 * i) = va.row(i);
    out.row(2 * i + 1) = vb.row(i);
  }
  const int ia = a.index, ib = b.index;
  return a.tape->emit(std::move(out), any_grad(a, b),
                      [ia, ib](Tape& t, const Matrix& g, const Matrix&) {
                        const Eigen::Index r = g.rows() / 2;
                        Matrix ga(r, g.cols()), gb(r, g.cols());
                        for (Eigen::Index i = 0; i < r; ++i) {
                          ga.row(i) = g.row(2 * i);
                          gb.row(i) = g.row(2 * i + 1);
                        }
                        t.accumulate(ia, ga);
                        t.accumulate(ib, gb);
                      });
}

Value colprod_pow(Value base, const Matrix& exponents) {
  const Matrix& vb = base.matrix();
  if (vb.rows() != exponents.rows() || vb.cols() != exponents.cols()) {
    throw DimensionMismatch("colprod_pow: exponent shape mismatch");
  }
  Matrix out(1, vb.cols());
  for (Eigen::Index j = 0; j < vb.cols(); ++j) {
    double p = 1.0;
    for (Eigen::Index i = 0; i < vb.rows(); ++i) {
      p *= std::pow(vb(i, j), exponents(i, j));
    }
    out(0, j) = p;
  }
  const int ia = base.index;
  const Matrix e = exponents;
  return base.tape->emit(
      std::move(out), any_grad(base),
      [ia, e](Tape& t, const Matrix& g, const Matrix&) {
        const Matrix& v = t.value_of(ia);
        Matrix gv = Matrix::Zero(v.rows(), v.cols());
        for (Eigen::Index j = 0; j < v.cols(); ++j) {
          for (Eigen::Index i = 0; i < v.rows(); ++i) {
            if (e(i, j) == 0.0) continue;
            double leave_one_out = 1.0;
            for (Eigen::Index k = 0; k < v.rows(); ++k) {
              if (k == i) continue;
              leave_one_out *= std::pow(v(k, j), e(k, j));
            }
            gv(i, j) = g(0, j) * e(i, j) * std::pow(v(i, j), e(i, j) - 1.0) *
                       leave_one_out;
          }
        }
        t.accumulate(ia, gv);
      });
}

// ---------------------------------------------------------------------------

namespace {

std::vector<Value> bind_segments(Tape& tape, const ParamVector& params) {
  std::vector<Value> segs;
  segs.reserve(params.layout->num_segments());
  for (std::size_t i = 0; i < params.layout->num_segments(); ++i) {
    segs.push_back(tape.var(params.segment(i)));
  }
  return segs;
}

}  // namespace

double evaluate(const LossFn& loss, const ParamVector& params) {
  Tape tape;
  auto segs = bind_segments(tape, params);
  Value out = loss(tape, segs);
  return out.scalar();
}

GradResult evaluate_with_gradient(const LossFn& loss,
                                  const ParamVector& params) {
  Tape tape;
  auto segs = bind_segments(tape, params);
  Value out = loss(tape, segs);
  const double value = out.scalar();
  tape.backward(out);

  GradResult r;
  r.value = value;
  r.grads = ParamVector::zeros(params.layout);
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const Matrix& adj = tape.adjoint(segs[i]);
    if (adj.size() != 0) r.grads.set_segment(i, adj);
  }
  return r;
}

ParamVector finite_difference_gradient(const LossFn& loss,
                                       const ParamVector& params,
                                       double step) {
  if (!(step > 0.0)) {
    throw std::invalid_argument(
        "finite_difference_gradient: step must be > 0");
  }
  ParamVector grads = ParamVector::zeros(params.layout);
  ParamVector probe = params;
  for (Eigen::Index i = 0; i < params.data.size(); ++i) {
    probe.data[i] = params.data[i] + step;
    const double up = evaluate(loss, probe);
    probe.data[i] = params.data[i] - step;
    const double down = evaluate(loss, probe);
    probe.data[i] = params.data[i];
    grads.data[i] = (up - down) / (2.0 * step);
  }
  return grads;
}

}  // namespace fedbnr::ad
