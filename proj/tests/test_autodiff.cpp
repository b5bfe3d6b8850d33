#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>

#include "fedbnr/autodiff.hpp"
#include "fedbnr/errors.hpp"
#include "fedbnr/rng.hpp"

using namespace fedbnr;

namespace {

LayoutPtr scalar_layout(const std::string& name) {
  return std::make_shared<const ParamLayout>(
      std::vector<ParamSpec>{{name, 1, 1}});
}

ParamVector make_params(LayoutPtr layout, std::initializer_list<double> vals) {
  ParamVector p = ParamVector::zeros(std::move(layout));
  Eigen::Index i = 0;
  for (const double v : vals) p.data[i++] = v;
  return p;
}

double rel_error(const ParamVector& a, const ParamVector& b) {
  const double denom = std::max(1e-12, b.data.norm());
  return (a.data - b.data).norm() / denom;
}

}  // namespace

TEST_CASE("gradient of w'w") {
  auto layout = std::make_shared<const ParamLayout>(
      std::vector<ParamSpec>{{"w", 2, 1}});
  const auto params = make_params(layout, {1.0, 2.0});
  const ad::LossFn loss = [](ad::Tape&, std::span<const ad::Value> segs) {
    return ad::matmul(segs[0], segs[0], true, false);
  };
  const auto res = ad::evaluate_with_gradient(loss, params);
  CHECK(res.value == doctest::Approx(5.0));
  CHECK(res.grads.data[0] == doctest::Approx(2.0));
  CHECK(res.grads.data[1] == doctest::Approx(4.0));
}

TEST_CASE("gradient of logdet(sigma^2 I3) w.r.t. sigma") {
  const auto params = make_params(scalar_layout("s"), {2.0});
  const ad::LossFn loss = [](ad::Tape& t, std::span<const ad::Value> segs) {
    const ad::Value s2 = ad::multiply(segs[0], segs[0]);
    const ad::Value a = ad::multiply(t.constant(Matrix::Identity(3, 3)), s2);
    return ad::logdet(ad::cholesky(a));
  };
  const auto res = ad::evaluate_with_gradient(loss, params);
  CHECK(res.value == doctest::Approx(3.0 * std::log(4.0)));
  CHECK(res.grads.data[0] == doctest::Approx(3.0));  // 6 / sigma at sigma=2
}

TEST_CASE("finite differences on f(w) = w^2") {
  const auto params = make_params(scalar_layout("w"), {3.0});
  const ad::LossFn loss = [](ad::Tape&, std::span<const ad::Value> segs) {
    return ad::multiply(segs[0], segs[0]);
  };
  const auto fd = ad::finite_difference_gradient(loss, params, 1e-5);
  CHECK(fd.data[0] == doctest::Approx(6.0).epsilon(1e-8));
}

TEST_CASE("finite differences of a constant loss vanish") {
  const auto params = make_params(scalar_layout("w"), {0.7});
  const ad::LossFn loss = [](ad::Tape& t, std::span<const ad::Value>) {
    return t.scalar_const(4.2);
  };
  const auto fd = ad::finite_difference_gradient(loss, params, 1e-5);
  CHECK(fd.data[0] == 0.0);
  CHECK_THROWS_AS(ad::finite_difference_gradient(loss, params, 0.0),
                  std::invalid_argument);
}

// every supported primitive appears in at least one of these compositions
namespace {

ad::LossFn composition_a() {
  // tanh / relu / matmul / broadcast add / sum
  return [](ad::Tape& t, std::span<const ad::Value> segs) {
    Matrix x(3, 4);
    x << 0.3, -0.8, 1.2, 0.5, -0.4, 0.9, -1.1, 0.2, 0.7, -0.2, 0.4, -0.6;
    const ad::Value h =
        ad::tanh(ad::add(ad::matmul(segs[0], t.constant(x)), segs[1]));
    const ad::Value r = ad::relu(ad::add(h, t.scalar_const(0.25)));
    return ad::sum(ad::multiply(r, r));
  };
}

ad::LossFn composition_b() {
  // exp / cos / sin / log / elementwise multiply / trace
  return [](ad::Tape& t, std::span<const ad::Value> segs) {
    const ad::Value w = segs[0];
    const ad::Value c = ad::cos(w);
    const ad::Value s = ad::sin(w);
    const ad::Value e = ad::exp(ad::scale(w, 0.3));
    const ad::Value soft = ad::log(ad::add(ad::exp(w), t.scalar_const(1.0)));
    const ad::Value mix = ad::add(ad::multiply(c, s), ad::multiply(e, soft));
    return ad::trace(ad::matmul(ad::transpose(mix), mix));
  };
}

ad::LossFn composition_c() {
  // cholesky / solve_psd / logdet on an always-PD matrix built from params
  return [](ad::Tape& t, std::span<const ad::Value> segs) {
    const ad::Value m = segs[0];
    const ad::Value gram = ad::matmul(m, m, false, true);
    const ad::Value jitter =
        ad::multiply(t.constant(Matrix::Identity(m.rows(), m.rows())),
                     ad::exp(segs[1]));
    const ad::Value a = ad::add(gram, jitter);
    const ad::Value l = ad::cholesky(a);
    Matrix rhs = Matrix::Zero(m.rows(), 1);
    rhs(0, 0) = 1.0;
    rhs(m.rows() - 1, 0) = -0.5;
    const ad::Value x = ad::solve_psd(l, t.constant(rhs));
    const ad::Value quad = ad::matmul(x, x, true, false);
    return ad::add(ad::logdet(l), quad);
  };
}

ad::LossFn composition_d() {
  // structural ops: transpose, vcat, interleave, colprod_pow
  return [](ad::Tape& t, std::span<const ad::Value> segs) {
    const ad::Value u = ad::add(ad::exp(segs[0]), t.scalar_const(0.5));
    Matrix e(u.rows(), u.cols());
    for (Eigen::Index i = 0; i < e.rows(); ++i) {
      for (Eigen::Index j = 0; j < e.cols(); ++j) {
        e(i, j) = static_cast<double>((i + j) % 3);
      }
    }
    const ad::Value prod = ad::colprod_pow(u, e);
    const ad::Value stack = ad::interleave_rows(prod, ad::scale(prod, 2.0));
    const ad::Value row =
        ad::matmul(ad::sum(stack), t.constant(Matrix::Ones(1, stack.cols())));
    const std::array<ad::Value, 2> parts{stack, row};
    return ad::sum(ad::vcat(parts));
  };
}

}  // namespace

TEST_CASE("reverse mode matches central differences across seeds") {
  struct Case {
    ad::LossFn loss;
    std::vector<ParamSpec> specs;
  };
  std::vector<Case> cases;
  cases.push_back({composition_a(), {{"w", 2, 3}, {"b", 2, 1}}});
  cases.push_back({composition_b(), {{"w", 3, 3}}});
  cases.push_back({composition_c(), {{"m", 4, 3}, {"j", 1, 1}}});
  cases.push_back({composition_d(), {{"u", 3, 2}}});

  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    const auto layout =
        std::make_shared<const ParamLayout>(cases[ci].specs);
    for (int seed = 0; seed < 20; ++seed) {
      Rng rng(mix64(1000 + seed, ci));
      ParamVector params = ParamVector::zeros(layout);
      for (Eigen::Index i = 0; i < params.data.size(); ++i) {
        params.data[i] = rng.uniform(-1.0, 1.0);
      }
      const auto res = ad::evaluate_with_gradient(cases[ci].loss, params);
      const auto fd =
          ad::finite_difference_gradient(cases[ci].loss, params, 1e-5);
      CAPTURE(ci);
      CAPTURE(seed);
      CHECK(rel_error(res.grads, fd) < 1e-4);
    }
  }
}

TEST_CASE("unused parameters get zero gradients") {
  auto layout = std::make_shared<const ParamLayout>(
      std::vector<ParamSpec>{{"a", 1, 1}, {"b", 1, 1}});
  const auto params = make_params(layout, {1.5, -0.5});
  const ad::LossFn loss = [](ad::Tape&, std::span<const ad::Value> segs) {
    return ad::multiply(segs[0], segs[0]);
  };
  const auto res = ad::evaluate_with_gradient(loss, params);
  CHECK(res.grads.data[0] == doctest::Approx(3.0));
  CHECK(res.grads.data[1] == 0.0);
}

TEST_CASE("backward demands a scalar output") {
  ad::Tape tape;
  const ad::Value v = tape.var(Matrix::Ones(2, 2));
  CHECK_THROWS_AS(tape.backward(v), DimensionMismatch);
}
