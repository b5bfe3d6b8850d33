#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "fedbnr/blr.hpp"
#include "fedbnr/kernels.hpp"
#include "fedbnr/messages.hpp"
#include "fedbnr/params.hpp"

namespace fedbnr {

enum class Phase1Mode { Local, Avg, Kd };
enum class Phase2Mode { Local, Global };

struct AblationMode {
  Phase1Mode phase1 = Phase1Mode::Avg;
  Phase2Mode phase2 = Phase2Mode::Global;
};

/// Parses "avg+global", "kd+local", ... (the 3x2 ablation grid).
/// avg+global is FedBNR, kd+global is FedBNR-KD.
AblationMode ablation_select(std::string_view name);
std::string ablation_name(AblationMode mode);

struct ClientState {
  int id = 0;
  Matrix x;          // p x n_c
  Vector y;          // n_c
  ParamVector params;
  Matrix phi_cache;  // features under the kernel last used for phase 2
};

struct ServerState {
  ParamVector params;
  Matrix omegas;  // fixed for the lifetime of a run
  std::optional<std::pair<Matrix, Vector>> kd_data;
  Phase1Mode aggregation = Phase1Mode::Avg;
  int round = 0;
};

struct RunConfig {
  int num_clients = 1;
  Phase1Mode phase1 = Phase1Mode::Avg;
  Phase2Mode phase2 = Phase2Mode::Global;
  int local_epochs = 50;
  int max_rounds = 100;
  double lr_local = 1e-3;
  double lr_kd = 1e-3;
  double kd_alpha = 1.0;
  int kd_epochs = 50;
  bool kd_halving = true;  // halve the KD step on loss increase
  int patience = 5;
  std::uint64_t seed = 0;
  // classic FedAvg weights clients by dataset size; the protocol here
  // averages unweighted unless asked
  bool weighted_fedavg = false;
  int threads = 0;  // 0 = hardware concurrency
};

/// Full-batch gradient ascent on the exact local log marginal likelihood,
/// starting from the broadcast global parameters.
msgs::ClientModelUpdate local_update(const ClientState& client,
                                     const ParamVector& global,
                                     const UrkConfig& arch,
                                     const Matrix& omegas, int epochs,
                                     double lr);

/// Elementwise mean of client parameters (θ and the log-space noise/prior
/// scales).
ParamVector fedavg_aggregate(const std::vector<msgs::ClientModelUpdate>& updates,
                             const LayoutPtr& layout,
                             const std::vector<double>* weights = nullptr);

/// Server-side distillation: gradient descent on
/// -LML(θ; X_kd, y_kd) + alpha * MSE(K_θ(X_kd) - mean_c K_θc(X_kd)).
ParamVector kd_aggregate(const ServerState& server,
                         const std::vector<msgs::ClientModelUpdate>& updates,
                         const UrkConfig& arch, double alpha, int kd_epochs,
                         double lr, bool halving = true);

/// Client side of phase 2: features under the broadcast kernel, returned as
/// the scatter matrix Φ_c·Φ_cᵀ. Caches Φ_c on the client.
msgs::ScatterMatrix phase2_scatter(ClientState& client,
                                   const ParamVector& kernel_params,
                                   const UrkConfig& arch,
                                   const Matrix& omegas);

/// Server side: A = σ⁻²·Σ scatter_c + λ⁻²I, broadcast as the Cholesky
/// factor of A.
msgs::PrecisionBroadcast phase2_assemble(
    const std::vector<msgs::ScatterMatrix>& scatters, double sigma,
    double lambda, int feature_dim);

/// Client side: σ⁻²·A⁻¹·Φ_c·y_c via a solve against the broadcast factor.
msgs::IntermediateWeights phase2_client_weights(
    const ClientState& client, const msgs::PrecisionBroadcast& precision,
    double sigma);

/// A fitted global (or local) model: bound kernel + posterior.
struct Predictor {
  UrkConfig kernel;
  Matrix omegas;
  BlrPosterior posterior;
};

PredictiveDistribution predict(const Predictor& model, const Matrix& x);

/// Mean over models of each model's own RMSE on (x, y); single-model lists
/// reduce to plain RMSE.
double mean_model_rmse(const std::vector<Predictor>& models, const Matrix& x,
                       const Vector& y);

struct RoundRecord {
  int round = 0;
  double val_rmse = 0.0;
};

struct FedRunResult {
  // one entry for global models, one per client for the *-local ablations
  std::vector<Predictor> models;
  std::vector<RoundRecord> rounds;
  int best_round = -1;
};

/// Phase 1 for up to max_rounds with early stopping on validation RMSE,
/// then phase 2. All client/server exchanges pass through the serialized
/// message layer. Client updates within a round may run in parallel;
/// results do not depend on the schedule.
FedRunResult run_fedbnr(const RunConfig& config, const UrkConfig& arch,
                        std::vector<ClientState>& clients, ServerState& server,
                        const Matrix& x_val, const Vector& y_val);

}  // namespace fedbnr
