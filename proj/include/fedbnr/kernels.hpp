#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedbnr/linalg.hpp"
#include "fedbnr/params.hpp"
#include "fedbnr/rng.hpp"

namespace fedbnr {

enum class Activation { Tanh, Relu, Identity };

// How a transformed weight sample and the extracted input features are
// combined into the random basis function z_w(x).
enum class CombineRule {
  RffCosSin,       // [cos(w·u), sin(w·u)], d = 2
  InnerProduct,    // nonlinearity(w·u), d = 1
  ElementwisePower // Π_i u_i^{w_i}, d = 1 (integer-valued weights)
};

enum class Nonlinearity { Exp, Tanh, Relu, Cos, Sin, Identity };

// Randomized copies of the input, one per weight sample.
enum class ReplicatePolicy { None, MultiplyNoise, AddNoise };

enum class Normalization { SqrtM, SqrtMMinus1 };

/// Distribution of the random weight vector. Draws are deterministic given
/// the seed, with a fixed word budget per sample so that a prefix of a
/// longer stream equals the shorter stream.
struct OmegaSampler {
  enum class Kind { StandardNormal, Multinomial };

  Kind kind = Kind::StandardNormal;
  int dim = 1;          // d'
  double scale = 1.0;   // StandardNormal only; draws are N(0, scale² I)
  int trials = 1;       // Multinomial only
  Vector probs;         // Multinomial only; sums to 1
  std::uint64_t seed = 0;

  void validate() const;
};

struct AffineLayer {
  Matrix weight;
  Vector bias;
  Activation act = Activation::Identity;
};

/// Fixed (non-trainable) affine input embedding, e.g. the lifted input of
/// the polynomial construction.
struct FixedAffine {
  Matrix weight;
  Vector bias;
};

/// The feature network g(w, x): an optional fixed lift, a trainable
/// extractor for x, a trainable distribution shifter for w, a replicate
/// policy, and the combine rule producing d outputs per weight sample.
struct KernelNetwork {
  int input_dim = 1;
  std::optional<FixedAffine> lift;
  std::vector<AffineLayer> extractor;
  std::vector<AffineLayer> shifter;
  // adds a (dimension-padded) identity path around the shifter so the
  // identity transform is in its hypothesis set
  bool shifter_skip = false;
  ReplicatePolicy replicate = ReplicatePolicy::None;
  double replicate_scale = 0.1;
  CombineRule combine = CombineRule::RffCosSin;
  Nonlinearity combine_nl = Nonlinearity::Exp;

  int output_dim() const;   // d
  int latent_dim() const;   // dimension of u = extractor(lift(x))
  int shifter_dim(int omega_dim) const;
  bool has_trainable_params() const;
};

/// A unifying random kernel: sampler for w, feature network g, sample count
/// m, and the normalization of the concatenated feature map.
struct UrkConfig {
  OmegaSampler sampler;
  KernelNetwork network;
  int m = 2;
  Normalization normalization = Normalization::SqrtMMinus1;

  int feature_dim() const { return m * network.output_dim(); }
  double normalizer() const;
  void validate() const;
};

/// m i.i.d. draws from the sampler, one per row (m x d').
Matrix sample_omegas(const UrkConfig& config);

/// The normalized concatenation of m samples of g(w_i, X); (m·d) x n.
/// Row block i is g(w_i, X).
Matrix feature_map(const UrkConfig& config, const Matrix& x);
Matrix feature_map(const UrkConfig& config, const Matrix& omegas,
                   const Matrix& x);

/// feature_map(X)ᵀ · feature_map(X')
Matrix urk_kernel(const UrkConfig& config, const Matrix& x, const Matrix& xp);

// ---- named constructions ----

/// Random Fourier features for the Gaussian kernel exp(-|x-x'|²/2ℓ²).
UrkConfig rff_gaussian(double lengthscale, int dim, std::uint64_t seed = 0,
                       int m = 50);

/// g(w, x) = exp(w·x), w ~ N(0, I); limit kernel exp((x+x')·(x+x')/2).
UrkConfig exp_kernel_construction(int dim, std::uint64_t seed = 0, int m = 50);

/// Multinomial construction with limit kernel (x·x' + c)^n.
UrkConfig poly_kernel_construction(double c, int n, int dim,
                                   std::uint64_t seed = 0, int m = 50);

// ---- closed forms (test oracles) ----
double closed_form_gaussian(double lengthscale, const Vector& x,
                            const Vector& xp);
double closed_form_exp(const Vector& x, const Vector& xp);
double closed_form_poly(double c, int n, const Vector& x, const Vector& xp);

/// Streaming Monte-Carlo estimate of the kernel at a single input pair,
/// with the estimated standard error of the estimate.
struct McKernelEstimate {
  double value = 0.0;
  double stderr_est = 0.0;
};
McKernelEstimate mc_kernel_estimate(const UrkConfig& config, const Vector& x,
                                    const Vector& xp);
McKernelEstimate mc_kernel_estimate(const UrkConfig& config,
                                    const Matrix& omegas, const Vector& x,
                                    const Vector& xp);

// ---- trainable parameter handling ----

/// Layout of the network's trainable weights, in evaluation order, followed
/// by the scalar segments "log_sigma" and "log_lambda".
LayoutPtr make_param_layout(const KernelNetwork& network);

/// Flatten the network weights (plus log σ, log λ) into a ParamVector.
ParamVector pack_params(const KernelNetwork& network, double sigma,
                        double lambda);

/// Copy the weight segments of params back into a network of this
/// architecture.
KernelNetwork bind_network(const KernelNetwork& arch,
                           const ParamVector& params);
UrkConfig bind_config(const UrkConfig& arch, const ParamVector& params);

double sigma_of(const ParamVector& params);
double lambda_of(const ParamVector& params);

/// Seeded weight initialization: W ~ N(0, scale²/fan_in), b = 0. The last
/// shifter layer is zeroed when the skip path is enabled, so the shifter
/// starts as the identity embedding.
void init_weights(KernelNetwork& network, std::uint64_t seed,
                  double scale = 1.0);

}  // namespace fedbnr
