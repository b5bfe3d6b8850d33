#include "fedbnr/blr.hpp"

#include <cmath>
#include <numbers>

#include "fedbnr/errors.hpp"
#include "tape_model.hpp"

namespace fedbnr {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void check_scales(double sigma, double lambda) {
  if (!(sigma > 0.0) || !(lambda > 0.0)) {
    throw std::invalid_argument("sigma and lambda must be > 0");
  }
}

}  // namespace

BlrPosterior blr_fit(const Matrix& phi, const Vector& y, double sigma,
                     double lambda) {
  if (phi.cols() != y.size()) {
    throw DimensionMismatch("blr_fit: phi has " + std::to_string(phi.cols()) +
                            " columns, y has " + std::to_string(y.size()));
  }
  check_scales(sigma, lambda);
  const double inv_s2 = 1.0 / (sigma * sigma);
  const double inv_l2 = 1.0 / (lambda * lambda);

  BlrPosterior post;
  post.sigma = sigma;
  post.lambda = lambda;
  post.a = inv_s2 * gram(phi);
  post.a.diagonal().array() += inv_l2;
  post.a_chol = cholesky(post.a);
  post.w_bar = inv_s2 * solve_psd(post.a_chol, Vector(phi * y));
  return post;
}

PredictiveDistribution blr_predict(const BlrPosterior& post,
                                   const Matrix& phi_star) {
  if (phi_star.rows() != post.dim()) {
    throw DimensionMismatch("blr_predict: feature dimension mismatch");
  }
  PredictiveDistribution out;
  out.mean = phi_star.transpose() * post.w_bar;
  const Matrix v = solve_psd(post.a_chol, phi_star);
  out.variance.resize(phi_star.cols());
  const double s2 = post.sigma * post.sigma;
  for (Eigen::Index j = 0; j < phi_star.cols(); ++j) {
    out.variance[j] = s2 + phi_star.col(j).dot(v.col(j));
  }
  return out;
}

double blr_log_marginal(const Matrix& phi, const Vector& y, double sigma,
                        double lambda) {
  if (phi.cols() != y.size()) {
    throw DimensionMismatch("blr_log_marginal: phi/y size mismatch");
  }
  check_scales(sigma, lambda);
  const auto n = static_cast<double>(y.size());
  const auto d = static_cast<double>(phi.rows());
  const double inv_s2 = 1.0 / (sigma * sigma);
  const double inv_l2 = 1.0 / (lambda * lambda);

  Matrix a = inv_s2 * gram(phi);
  a.diagonal().array() += inv_l2;
  const CholeskyFactor l = cholesky(a);
  const Vector phiy = phi * y;
  const double quad = phiy.dot(solve_psd(l, phiy));
  const double datafit = inv_s2 * y.squaredNorm() - inv_s2 * inv_s2 * quad;

  return -0.5 * n * kLog2Pi - n * std::log(sigma) - d * std::log(lambda) -
         0.5 * logdet(l) - 0.5 * datafit;
}

PredictiveDistribution gp_predict_dual(const Matrix& k_train,
                                       const Matrix& k_cross,
                                       const Vector& k_star_diag,
                                       const Vector& y, double sigma) {
  if (!(sigma > 0.0)) {
    throw std::invalid_argument("gp_predict_dual: sigma must be > 0");
  }
  const Eigen::Index n = k_train.rows();
  const Eigen::Index q = k_star_diag.size();
  if (k_train.cols() != n || k_cross.rows() != n || k_cross.cols() != q ||
      y.size() != n) {
    throw DimensionMismatch("gp_predict_dual: inconsistent block shapes");
  }
  const double s2 = sigma * sigma;

  PredictiveDistribution out;
  if (n == 0) {
    out.mean = Vector::Zero(q);
    out.variance = k_star_diag.array() + s2;
    return out;
  }

  Matrix c = k_train;
  c.diagonal().array() += s2;
  const CholeskyFactor l = cholesky(c);
  out.mean = k_cross.transpose() * solve_psd(l, y);
  const Matrix v = solve_psd(l, k_cross);
  out.variance.resize(q);
  for (Eigen::Index j = 0; j < q; ++j) {
    out.variance[j] = k_star_diag[j] - k_cross.col(j).dot(v.col(j)) + s2;
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace detail {

TapeNet bind_tape_net(const KernelNetwork& arch,
                      std::span<const ad::Value> segments) {
  const std::size_t expected =
      2 * (arch.extractor.size() + arch.shifter.size()) + 2;
  if (segments.size() != expected) {
    throw LayoutMismatch("parameter segments do not match the architecture");
  }
  TapeNet net;
  std::size_t at = 0;
  for (std::size_t i = 0; i < arch.extractor.size(); ++i) {
    net.extractor.emplace_back(segments[at], segments[at + 1]);
    at += 2;
  }
  for (std::size_t i = 0; i < arch.shifter.size(); ++i) {
    net.shifter.emplace_back(segments[at], segments[at + 1]);
    at += 2;
  }
  net.log_sigma = segments[at];
  net.log_lambda = segments[at + 1];
  return net;
}

namespace {

ad::Value apply_activation(Activation act, ad::Value x) {
  switch (act) {
    case Activation::Tanh:
      return ad::tanh(x);
    case Activation::Relu:
      return ad::relu(x);
    case Activation::Identity:
      return x;
  }
  throw UnsupportedPrimitive("unknown activation");
}

ad::Value apply_nl_tape(Nonlinearity nl, ad::Value t) {
  switch (nl) {
    case Nonlinearity::Exp:
      return ad::exp(t);
    case Nonlinearity::Tanh:
      return ad::tanh(t);
    case Nonlinearity::Relu:
      return ad::relu(t);
    case Nonlinearity::Cos:
      return ad::cos(t);
    case Nonlinearity::Sin:
      return ad::sin(t);
    case Nonlinearity::Identity:
      return t;
  }
  throw UnsupportedPrimitive("unknown nonlinearity");
}

ad::Value eval_mlp_tape(
    const std::vector<AffineLayer>& layers,
    const std::vector<std::pair<ad::Value, ad::Value>>& weights,
    ad::Value x) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = ad::add(ad::matmul(weights[i].first, x), weights[i].second);
    x = apply_activation(layers[i].act, x);
  }
  return x;
}

ad::Value extract_tape(ad::Tape& tape, const KernelNetwork& arch,
                       const TapeNet& net, const Matrix& x) {
  Matrix lifted = x;
  if (arch.lift) {
    lifted = (arch.lift->weight * x).colwise() + arch.lift->bias;
  }
  ad::Value v = tape.constant(std::move(lifted));
  return eval_mlp_tape(arch.extractor, net.extractor, v);
}

ad::Value shift_tape(ad::Tape& tape, const KernelNetwork& arch,
                     const TapeNet& net, const Matrix& omega_t) {
  ad::Value v = tape.constant(omega_t);
  if (arch.shifter.empty()) return v;
  ad::Value h = eval_mlp_tape(arch.shifter, net.shifter, v);
  if (arch.shifter_skip) {
    const Eigen::Index out = h.rows();
    const Eigen::Index k = std::min(out, omega_t.rows());
    Matrix skip = Matrix::Zero(out, omega_t.cols());
    skip.topRows(k) = omega_t.topRows(k);
    h = ad::add(h, tape.constant(std::move(skip)));
  }
  return h;
}

Matrix replicate_plain(const KernelNetwork& arch, const Matrix& x,
                       const Vector& omega_i) {
  switch (arch.replicate) {
    case ReplicatePolicy::None:
      return x;
    case ReplicatePolicy::MultiplyNoise:
      return x.array().colwise() *
             (1.0 + arch.replicate_scale * omega_i.head(x.rows()).array());
    case ReplicatePolicy::AddNoise:
      return x.colwise() + arch.replicate_scale * omega_i.head(x.rows());
  }
  throw UnsupportedPrimitive("unknown replicate policy");
}

}  // namespace

ad::Value feature_map_tape(ad::Tape& tape, const UrkConfig& arch,
                           const TapeNet& net, const Matrix& omegas,
                           const Matrix& x) {
  arch.validate();
  if (x.rows() != arch.network.input_dim) {
    throw ShapeMismatch("feature_map: input dimension mismatch");
  }
  const KernelNetwork& knet = arch.network;
  const double inv_norm = 1.0 / arch.normalizer();

  if (!knet.has_trainable_params()) {
    return tape.constant(feature_map(arch, omegas, x));
  }

  if (knet.combine == CombineRule::ElementwisePower && !knet.shifter.empty()) {
    throw UnsupportedPrimitive(
        "elementwise-power features require fixed (non-trainable) exponents");
  }

  const Matrix omega_t = omegas.transpose();

  if (knet.replicate == ReplicatePolicy::None) {
    const ad::Value u = extract_tape(tape, knet, net, x);
    switch (knet.combine) {
      case CombineRule::RffCosSin: {
        const ad::Value h = shift_tape(tape, knet, net, omega_t);
        const ad::Value t = ad::matmul(h, u, true, false);  // m x n
        return ad::scale(ad::interleave_rows(ad::cos(t), ad::sin(t)),
                         inv_norm);
      }
      case CombineRule::InnerProduct: {
        const ad::Value h = shift_tape(tape, knet, net, omega_t);
        const ad::Value t = ad::matmul(h, u, true, false);
        return ad::scale(apply_nl_tape(knet.combine_nl, t), inv_norm);
      }
      case CombineRule::ElementwisePower: {
        std::vector<ad::Value> rows;
        rows.reserve(static_cast<std::size_t>(arch.m));
        for (int i = 0; i < arch.m; ++i) {
          const Matrix e = omega_t.col(i).replicate(1, x.cols());
          rows.push_back(ad::colprod_pow(u, e));
        }
        return ad::scale(ad::vcat(rows), inv_norm);
      }
    }
  }

  // replicate policies: one randomized input copy per sample
  std::vector<ad::Value> blocks;
  blocks.reserve(static_cast<std::size_t>(arch.m));
  for (int i = 0; i < arch.m; ++i) {
    const Vector omega_i = omegas.row(i).transpose();
    const ad::Value u =
        extract_tape(tape, knet, net, replicate_plain(knet, x, omega_i));
    const ad::Value h =
        shift_tape(tape, knet, net, Matrix(omega_i));
    switch (knet.combine) {
      case CombineRule::RffCosSin: {
        const ad::Value t = ad::matmul(h, u, true, false);  // 1 x n
        blocks.push_back(ad::interleave_rows(ad::cos(t), ad::sin(t)));
        break;
      }
      case CombineRule::InnerProduct: {
        const ad::Value t = ad::matmul(h, u, true, false);
        blocks.push_back(apply_nl_tape(knet.combine_nl, t));
        break;
      }
      case CombineRule::ElementwisePower: {
        const Matrix e = omega_i.replicate(1, x.cols());
        blocks.push_back(ad::colprod_pow(u, e));
        break;
      }
    }
  }
  return ad::scale(ad::vcat(blocks), inv_norm);
}

ad::Value lml_tape(ad::Tape& tape, const UrkConfig& arch, const TapeNet& net,
                   const Matrix& omegas, const Matrix& x, const Vector& y) {
  if (x.cols() != y.size()) {
    throw DimensionMismatch("lml: input/target size mismatch");
  }
  const auto n = static_cast<double>(y.size());
  const auto d = static_cast<double>(arch.feature_dim());

  const ad::Value phi = feature_map_tape(tape, arch, net, omegas, x);
  const ad::Value inv_s2 = ad::exp(ad::scale(net.log_sigma, -2.0));
  const ad::Value inv_l2 = ad::exp(ad::scale(net.log_lambda, -2.0));

  const ad::Value g = ad::matmul(phi, phi, false, true);
  const ad::Value a =
      ad::add(ad::multiply(g, inv_s2),
              ad::multiply(tape.constant(Matrix::Identity(
                               arch.feature_dim(), arch.feature_dim())),
                           inv_l2));
  const ad::Value l = ad::cholesky(a);
  const ad::Value ld = ad::logdet(l);

  const ad::Value phiy = ad::matmul(phi, tape.constant(Matrix(y)));
  const ad::Value quad =
      ad::matmul(phiy, ad::solve_psd(l, phiy), true, false);
  const ad::Value datafit =
      ad::sub(ad::multiply(inv_s2, tape.scalar_const(y.squaredNorm())),
              ad::multiply(ad::multiply(inv_s2, inv_s2), quad));

  ad::Value lml = tape.scalar_const(-0.5 * n * 1.8378770664093454836);
  lml = ad::add(lml, ad::scale(net.log_sigma, -n));
  lml = ad::add(lml, ad::scale(net.log_lambda, -d));
  lml = ad::add(lml, ad::scale(ld, -0.5));
  lml = ad::add(lml, ad::scale(datafit, -0.5));
  return lml;
}

}  // namespace detail

ad::LossFn make_neg_lml_loss(const UrkConfig& arch, const Matrix& x,
                             const Vector& y) {
  return make_neg_lml_loss(arch, sample_omegas(arch), x, y);
}

ad::LossFn make_neg_lml_loss(const UrkConfig& arch, const Matrix& omegas,
                             const Matrix& x, const Vector& y) {
  return [arch, omegas, x, y](ad::Tape& tape,
                              std::span<const ad::Value> segments) {
    const detail::TapeNet net = detail::bind_tape_net(arch.network, segments);
    return ad::scale(detail::lml_tape(tape, arch, net, omegas, x, y), -1.0);
  };
}

ad::LossFn make_kd_loss(const UrkConfig& arch, const Matrix& omegas,
                        const Matrix& x_kd, const Vector& y_kd,
                        const Matrix& kernel_target, double alpha) {
  if (kernel_target.rows() != x_kd.cols() ||
      kernel_target.cols() != x_kd.cols()) {
    throw DimensionMismatch("make_kd_loss: kernel target shape mismatch");
  }
  return [arch, omegas, x_kd, y_kd, kernel_target, alpha](
             ad::Tape& tape, std::span<const ad::Value> segments) {
    const detail::TapeNet net = detail::bind_tape_net(arch.network, segments);
    ad::Value loss = ad::scale(
        detail::lml_tape(tape, arch, net, omegas, x_kd, y_kd), -1.0);
    if (alpha != 0.0) {
      const ad::Value phi =
          detail::feature_map_tape(tape, arch, net, omegas, x_kd);
      const ad::Value k = ad::matmul(phi, phi, true, false);
      const ad::Value diff = ad::sub(k, tape.constant(kernel_target));
      const auto cells = static_cast<double>(kernel_target.size());
      const ad::Value mse =
          ad::scale(ad::sum(ad::multiply(diff, diff)), 1.0 / cells);
      loss = ad::add(loss, ad::scale(mse, alpha));
    }
    return loss;
  };
}

}  // namespace fedbnr
