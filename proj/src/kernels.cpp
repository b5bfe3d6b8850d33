#include "fedbnr/kernels.hpp"

#include <cmath>
#include <numbers>

#include "fedbnr/errors.hpp"

namespace fedbnr {

namespace {

// Counter-mode substream for weight sampling: sample i, word k ->
// mix64(key_i, k). Stateless, so sample i's draws never depend on how many
// samples are generated around it.
struct OmegaStream {
  std::uint64_t key;

  OmegaStream(std::uint64_t seed, std::uint64_t sample)
      : key(mix64(mix64(seed) ^ 0x0a1fed5eed5ULL, sample)) {}

  double uniform(std::uint64_t k) const {
    return static_cast<double>(mix64(key, k) >> 11) * 0x1.0p-53;
  }

  void normal_pair(std::uint64_t t, double& z0, double& z1) const {
    const double u1 = 1.0 - uniform(2 * t);  // (0, 1]
    const double u2 = uniform(2 * t + 1);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    z0 = r * std::cos(a);
    z1 = r * std::sin(a);
  }
};

Matrix eval_mlp(const std::vector<AffineLayer>& layers, Matrix x) {
  for (const auto& l : layers) {
    x = (l.weight * x).colwise() + l.bias;
    switch (l.act) {
      case Activation::Tanh:
        x = x.array().tanh();
        break;
      case Activation::Relu:
        x = x.cwiseMax(0.0);
        break;
      case Activation::Identity:
        break;
    }
  }
  return x;
}

Matrix apply_nl(Nonlinearity nl, Matrix t) {
  switch (nl) {
    case Nonlinearity::Exp:
      return t.array().exp();
    case Nonlinearity::Tanh:
      return t.array().tanh();
    case Nonlinearity::Relu:
      return t.cwiseMax(0.0);
    case Nonlinearity::Cos:
      return t.array().cos();
    case Nonlinearity::Sin:
      return t.array().sin();
    case Nonlinearity::Identity:
      return t;
  }
  throw UnsupportedPrimitive("unknown nonlinearity");
}

Matrix lift_inputs(const KernelNetwork& net, const Matrix& x) {
  if (!net.lift) return x;
  return (net.lift->weight * x).colwise() + net.lift->bias;
}

Matrix extract(const KernelNetwork& net, const Matrix& x) {
  return eval_mlp(net.extractor, lift_inputs(net, x));
}

// omega_t is d' x m (columns = samples); returns shifter output, one column
// per sample
Matrix shift_omegas(const KernelNetwork& net, const Matrix& omega_t) {
  if (net.shifter.empty()) return omega_t;
  Matrix h = eval_mlp(net.shifter, omega_t);
  if (net.shifter_skip) {
    const Eigen::Index k = std::min(h.rows(), omega_t.rows());
    h.topRows(k) += omega_t.topRows(k);
  }
  return h;
}

Matrix replicate_input(const KernelNetwork& net, const Matrix& x,
                       const Vector& omega_i) {
  switch (net.replicate) {
    case ReplicatePolicy::None:
      return x;
    case ReplicatePolicy::MultiplyNoise:
      return x.array().colwise() *
             (1.0 + net.replicate_scale * omega_i.head(x.rows()).array());
    case ReplicatePolicy::AddNoise:
      return x.colwise() + net.replicate_scale * omega_i.head(x.rows());
  }
  throw UnsupportedPrimitive("unknown replicate policy");
}

// powers with small integer exponents (the multinomial case) take the
// repeated-multiply path
double pow_by_exponent(double base, double e) {
  if (e >= 0.0 && e <= 32.0 && e == std::floor(e)) {
    double p = 1.0;
    for (int k = 0; k < static_cast<int>(e); ++k) p *= base;
    return p;
  }
  return std::pow(base, e);
}

// column products with fixed exponents: out(j) = prod_i u(i,j)^e(i)
Eigen::RowVectorXd col_pow_products(const Matrix& u, const Vector& e) {
  Eigen::RowVectorXd out(u.cols());
  for (Eigen::Index j = 0; j < u.cols(); ++j) {
    double p = 1.0;
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
      p *= pow_by_exponent(u(i, j), e[i]);
    }
    out[j] = p;
  }
  return out;
}

// unnormalized concatenated features, row block i = g(w_i, X)
Matrix feature_map_raw(const UrkConfig& cfg, const Matrix& omegas,
                       const Matrix& x) {
  const KernelNetwork& net = cfg.network;
  const Eigen::Index n = x.cols();
  const int m = cfg.m;
  const int d = net.output_dim();

  if (net.replicate == ReplicatePolicy::None) {
    const Matrix u = extract(net, x);
    // one row per (possibly shifted) weight sample; large sample counts
    // skip the transpose round-trip entirely when the shifter is identity
    Matrix shifted;
    if (!net.shifter.empty()) {
      shifted = shift_omegas(net, Matrix(omegas.transpose())).transpose();
    }
    const Matrix& w_rows = net.shifter.empty() ? omegas : shifted;

    switch (net.combine) {
      case CombineRule::RffCosSin: {
        const Matrix t = w_rows * u;  // m x n
        Matrix phi(2 * static_cast<Eigen::Index>(m), n);
        using Strided =
            Eigen::Map<Matrix, 0, Eigen::Stride<Eigen::Dynamic, 1>>;
        Strided(phi.data(), m, n, {2 * n, 1}) = t.array().cos();
        Strided(phi.data() + n, m, n, {2 * n, 1}) = t.array().sin();
        return phi;
      }
      case CombineRule::InnerProduct:
        return apply_nl(net.combine_nl, w_rows * u);
      case CombineRule::ElementwisePower: {
        Matrix phi(m, n);
        for (int i = 0; i < m; ++i) {
          for (Eigen::Index j = 0; j < n; ++j) {
            double p = 1.0;
            for (Eigen::Index k = 0; k < u.rows(); ++k) {
              p *= pow_by_exponent(u(k, j), w_rows(i, k));
            }
            phi(i, j) = p;
          }
        }
        return phi;
      }
    }
    throw UnsupportedPrimitive("unknown combine rule");
  }

  const Matrix omega_t = omegas.transpose();
  const Matrix h = shift_omegas(net, omega_t);
  Matrix phi(static_cast<Eigen::Index>(m) * d, n);
  for (int i = 0; i < m; ++i) {
    const Vector omega_i = omegas.row(i).transpose();
    const Matrix u = extract(net, replicate_input(net, x, omega_i));
    switch (net.combine) {
      case CombineRule::RffCosSin: {
        const Eigen::RowVectorXd t = h.col(i).transpose() * u;
        phi.row(2 * i) = t.array().cos();
        phi.row(2 * i + 1) = t.array().sin();
        break;
      }
      case CombineRule::InnerProduct:
        phi.row(i) =
            apply_nl(net.combine_nl, h.col(i).transpose() * u).row(0);
        break;
      case CombineRule::ElementwisePower:
        phi.row(i) = col_pow_products(u, h.col(i));
        break;
    }
  }
  return phi;
}

}  // namespace

void OmegaSampler::validate() const {
  if (dim < 1) throw ShapeMismatch("sampler dimension must be >= 1");
  if (kind == Kind::Multinomial) {
    if (trials < 1) throw ShapeMismatch("multinomial trials must be >= 1");
    if (probs.size() != dim) {
      throw ShapeMismatch("multinomial probabilities must have length d'");
    }
    if (probs.minCoeff() < 0.0) {
      throw ShapeMismatch("multinomial probabilities must be non-negative");
    }
    if (std::abs(probs.sum() - 1.0) > 1e-12) {
      throw ShapeMismatch("multinomial probabilities must sum to 1");
    }
  }
  if (kind == Kind::StandardNormal && !(scale > 0.0)) {
    throw ShapeMismatch("sampler scale must be > 0");
  }
}

int KernelNetwork::output_dim() const {
  return combine == CombineRule::RffCosSin ? 2 : 1;
}

int KernelNetwork::latent_dim() const {
  if (!extractor.empty()) {
    return static_cast<int>(extractor.back().weight.rows());
  }
  if (lift) return static_cast<int>(lift->weight.rows());
  return input_dim;
}

int KernelNetwork::shifter_dim(int omega_dim) const {
  return shifter.empty() ? omega_dim
                         : static_cast<int>(shifter.back().weight.rows());
}

bool KernelNetwork::has_trainable_params() const {
  return !extractor.empty() || !shifter.empty();
}

double UrkConfig::normalizer() const {
  return normalization == Normalization::SqrtM
             ? std::sqrt(static_cast<double>(m))
             : std::sqrt(static_cast<double>(m) - 1.0);
}

void UrkConfig::validate() const {
  sampler.validate();
  if (m < 2) throw ShapeMismatch("sample count m must be >= 2");
  const KernelNetwork& net = network;
  if (net.lift && net.lift->weight.cols() != net.input_dim) {
    throw ShapeMismatch("lift input dimension mismatch");
  }
  Eigen::Index in = net.lift ? net.lift->weight.rows() : net.input_dim;
  for (const auto& l : net.extractor) {
    if (l.weight.cols() != in || l.bias.size() != l.weight.rows()) {
      throw ShapeMismatch("extractor layer dimension mismatch");
    }
    in = l.weight.rows();
  }
  Eigen::Index win = sampler.dim;
  for (const auto& l : net.shifter) {
    if (l.weight.cols() != win || l.bias.size() != l.weight.rows()) {
      throw ShapeMismatch("shifter layer dimension mismatch");
    }
    win = l.weight.rows();
  }
  if (net.shifter_dim(sampler.dim) != net.latent_dim()) {
    throw ShapeMismatch(
        "shifter output dimension must match the extracted feature "
        "dimension");
  }
  if (net.replicate != ReplicatePolicy::None && sampler.dim < net.input_dim) {
    throw ShapeMismatch("replicate policies need sampler dim >= input dim");
  }
}

Matrix sample_omegas(const UrkConfig& config) {
  config.validate();
  const int m = config.m;
  const int dp = config.sampler.dim;
  Matrix omegas(m, dp);

  if (config.sampler.kind == OmegaSampler::Kind::StandardNormal) {
    const double scale = config.sampler.scale;
    for (int i = 0; i < m; ++i) {
      OmegaStream s(config.sampler.seed, static_cast<std::uint64_t>(i));
      for (int j = 0; j < dp; j += 2) {
        double z0, z1;
        s.normal_pair(static_cast<std::uint64_t>(j / 2), z0, z1);
        omegas(i, j) = scale * z0;
        if (j + 1 < dp) omegas(i, j + 1) = scale * z1;
      }
    }
    return omegas;
  }

  // multinomial: count of trials falling in each bucket
  const Vector& probs = config.sampler.probs;
  Vector cum(probs.size());
  double acc = 0.0;
  for (Eigen::Index j = 0; j < probs.size(); ++j) {
    acc += probs[j];
    cum[j] = acc;
  }
  cum[probs.size() - 1] = 1.0;
  for (int i = 0; i < m; ++i) {
    OmegaStream s(config.sampler.seed, static_cast<std::uint64_t>(i));
    omegas.row(i).setZero();
    for (int t = 0; t < config.sampler.trials; ++t) {
      const double u = s.uniform(static_cast<std::uint64_t>(t));
      Eigen::Index b = 0;
      while (b + 1 < cum.size() && u >= cum[b]) ++b;
      omegas(i, b) += 1.0;
    }
  }
  return omegas;
}

Matrix feature_map(const UrkConfig& config, const Matrix& x) {
  return feature_map(config, sample_omegas(config), x);
}

Matrix feature_map(const UrkConfig& config, const Matrix& omegas,
                   const Matrix& x) {
  config.validate();
  if (x.rows() != config.network.input_dim) {
    throw ShapeMismatch("feature_map: input has " + std::to_string(x.rows()) +
                        " rows, network expects " +
                        std::to_string(config.network.input_dim));
  }
  if (omegas.rows() != config.m || omegas.cols() != config.sampler.dim) {
    throw ShapeMismatch("feature_map: omega sample shape mismatch");
  }
  return feature_map_raw(config, omegas, x) / config.normalizer();
}

Matrix urk_kernel(const UrkConfig& config, const Matrix& x, const Matrix& xp) {
  const Matrix omegas = sample_omegas(config);
  const Matrix fa = feature_map(config, omegas, x);
  const Matrix fb = feature_map(config, omegas, xp);
  return fa.transpose() * fb;
}

UrkConfig rff_gaussian(double lengthscale, int dim, std::uint64_t seed,
                       int m) {
  if (!(lengthscale > 0.0)) {
    throw ShapeMismatch("rff_gaussian: lengthscale must be > 0");
  }
  UrkConfig cfg;
  cfg.sampler.kind = OmegaSampler::Kind::StandardNormal;
  cfg.sampler.dim = dim;
  cfg.sampler.scale = 1.0 / lengthscale;
  cfg.sampler.seed = seed;
  cfg.network.input_dim = dim;
  cfg.network.combine = CombineRule::RffCosSin;
  cfg.m = m;
  cfg.normalization = Normalization::SqrtM;
  return cfg;
}

UrkConfig exp_kernel_construction(int dim, std::uint64_t seed, int m) {
  UrkConfig cfg;
  cfg.sampler.kind = OmegaSampler::Kind::StandardNormal;
  cfg.sampler.dim = dim;
  cfg.sampler.scale = 1.0;
  cfg.sampler.seed = seed;
  cfg.network.input_dim = dim;
  cfg.network.combine = CombineRule::InnerProduct;
  cfg.network.combine_nl = Nonlinearity::Exp;
  cfg.m = m;
  cfg.normalization = Normalization::SqrtM;
  return cfg;
}

UrkConfig poly_kernel_construction(double c, int n, int dim,
                                   std::uint64_t seed, int m) {
  if (c < 0.0) throw ShapeMismatch("poly: c must be >= 0");
  if (n < 1) throw ShapeMismatch("poly: n must be >= 1");
  const double p = static_cast<double>(dim);
  UrkConfig cfg;
  cfg.sampler.kind = OmegaSampler::Kind::Multinomial;
  cfg.sampler.dim = dim + 1;
  cfg.sampler.trials = n;
  cfg.sampler.probs = Vector(dim + 1);
  cfg.sampler.probs[0] = 0.5;
  cfg.sampler.probs.tail(dim).setConstant(0.5 / p);
  cfg.sampler.seed = seed;

  // lifted input [sqrt(2c), sqrt(2p)·x]
  FixedAffine lift;
  lift.weight = Matrix::Zero(dim + 1, dim);
  lift.weight.bottomRows(dim) =
      std::sqrt(2.0 * p) * Matrix::Identity(dim, dim);
  lift.bias = Vector::Zero(dim + 1);
  lift.bias[0] = std::sqrt(2.0 * c);

  cfg.network.input_dim = dim;
  cfg.network.lift = std::move(lift);
  cfg.network.combine = CombineRule::ElementwisePower;
  cfg.m = m;
  cfg.normalization = Normalization::SqrtM;
  return cfg;
}

double closed_form_gaussian(double lengthscale, const Vector& x,
                            const Vector& xp) {
  if (x.size() != xp.size()) throw ShapeMismatch("closed_form: dim mismatch");
  return std::exp(-(x - xp).squaredNorm() / (2.0 * lengthscale * lengthscale));
}

double closed_form_exp(const Vector& x, const Vector& xp) {
  if (x.size() != xp.size()) throw ShapeMismatch("closed_form: dim mismatch");
  return std::exp((x + xp).squaredNorm() / 2.0);
}

double closed_form_poly(double c, int n, const Vector& x, const Vector& xp) {
  if (x.size() != xp.size()) throw ShapeMismatch("closed_form: dim mismatch");
  return std::pow(x.dot(xp) + c, n);
}

McKernelEstimate mc_kernel_estimate(const UrkConfig& config, const Vector& x,
                                    const Vector& xp) {
  return mc_kernel_estimate(config, sample_omegas(config), x, xp);
}

McKernelEstimate mc_kernel_estimate(const UrkConfig& config,
                                    const Matrix& omegas, const Vector& x,
                                    const Vector& xp) {
  const Matrix fa = feature_map_raw(config, omegas, x);
  const Matrix fb = feature_map_raw(config, omegas, xp);
  const int d = config.network.output_dim();
  const int m = config.m;

  Vector s(m);
  const double* pa = fa.data();
  const double* pb = fb.data();
  for (int i = 0; i < m; ++i) {
    double dot = 0.0;
    for (int k = 0; k < d; ++k) {
      dot += pa[i * d + k] * pb[i * d + k];
    }
    s[i] = dot;
  }
  const double norm2 = config.normalizer() * config.normalizer();
  const double mean = s.mean();
  const double var =
      (s.array() - mean).square().sum() / (static_cast<double>(m) - 1.0);

  McKernelEstimate est;
  est.value = s.sum() / norm2;
  est.stderr_est = std::sqrt(var * static_cast<double>(m)) / norm2;
  return est;
}

LayoutPtr make_param_layout(const KernelNetwork& network) {
  std::vector<ParamSpec> segs;
  for (std::size_t i = 0; i < network.extractor.size(); ++i) {
    const auto& l = network.extractor[i];
    segs.push_back({"f." + std::to_string(i) + ".W", l.weight.rows(),
                    l.weight.cols()});
    segs.push_back({"f." + std::to_string(i) + ".b", l.bias.size(), 1});
  }
  for (std::size_t i = 0; i < network.shifter.size(); ++i) {
    const auto& l = network.shifter[i];
    segs.push_back({"h." + std::to_string(i) + ".W", l.weight.rows(),
                    l.weight.cols()});
    segs.push_back({"h." + std::to_string(i) + ".b", l.bias.size(), 1});
  }
  segs.push_back({"log_sigma", 1, 1});
  segs.push_back({"log_lambda", 1, 1});
  return std::make_shared<const ParamLayout>(std::move(segs));
}

ParamVector pack_params(const KernelNetwork& network, double sigma,
                        double lambda) {
  if (!(sigma > 0.0) || !(lambda > 0.0)) {
    throw std::invalid_argument("pack_params: sigma, lambda must be > 0");
  }
  ParamVector p = ParamVector::zeros(make_param_layout(network));
  std::size_t seg = 0;
  for (const auto& l : network.extractor) {
    p.set_segment(seg++, l.weight);
    p.set_segment(seg++, l.bias);
  }
  for (const auto& l : network.shifter) {
    p.set_segment(seg++, l.weight);
    p.set_segment(seg++, l.bias);
  }
  p.set_scalar("log_sigma", std::log(sigma));
  p.set_scalar("log_lambda", std::log(lambda));
  return p;
}

KernelNetwork bind_network(const KernelNetwork& arch,
                           const ParamVector& params) {
  KernelNetwork net = arch;
  std::size_t seg = 0;
  for (auto& l : net.extractor) {
    l.weight = params.segment(seg++);
    l.bias = params.segment(seg++).col(0);
  }
  for (auto& l : net.shifter) {
    l.weight = params.segment(seg++);
    l.bias = params.segment(seg++).col(0);
  }
  return net;
}

UrkConfig bind_config(const UrkConfig& arch, const ParamVector& params) {
  UrkConfig cfg = arch;
  cfg.network = bind_network(arch.network, params);
  return cfg;
}

double sigma_of(const ParamVector& params) {
  return std::exp(params.scalar("log_sigma"));
}

double lambda_of(const ParamVector& params) {
  return std::exp(params.scalar("log_lambda"));
}

void init_weights(KernelNetwork& network, std::uint64_t seed, double scale) {
  std::size_t idx = 0;
  auto fill = [&](AffineLayer& l, bool zero) {
    Rng rng(mix64(seed, idx++));
    if (zero) {
      l.weight.setZero();
    } else {
      const double sd = scale / std::sqrt(static_cast<double>(l.weight.cols()));
      for (Eigen::Index i = 0; i < l.weight.rows(); ++i) {
        for (Eigen::Index j = 0; j < l.weight.cols(); ++j) {
          l.weight(i, j) = sd * rng.normal();
        }
      }
    }
    l.bias.setZero();
  };
  for (auto& l : network.extractor) fill(l, false);
  for (std::size_t i = 0; i < network.shifter.size(); ++i) {
    const bool last = (i + 1 == network.shifter.size());
    fill(network.shifter[i], network.shifter_skip && last);
  }
}

}  // namespace fedbnr
