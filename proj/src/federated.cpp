#include "fedbnr/federated.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <thread>

#include "fedbnr/errors.hpp"

namespace fedbnr {

namespace {

ParamVector from_flat(const LayoutPtr& layout, const Vector& data) {
  if (data.size() != layout->total_size()) {
    throw LayoutMismatch("parameter vector size does not match layout");
  }
  ParamVector p;
  p.layout = layout;
  p.data = data;
  return p;
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t]() {
      for (int i = t; i < n; i += threads) {
        try {
          fn(i);
        } catch (...) {
          errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct AssembledPrecision {
  Matrix a;
  CholeskyFactor chol;
};

AssembledPrecision assemble_precision(
    const std::vector<msgs::ScatterMatrix>& scatters, double sigma,
    double lambda, int feature_dim) {
  if (!(sigma > 0.0) || !(lambda > 0.0)) {
    throw std::invalid_argument("phase2: sigma and lambda must be > 0");
  }
  const double inv_s2 = 1.0 / (sigma * sigma);
  const double inv_l2 = 1.0 / (lambda * lambda);
  Matrix a = inv_l2 * Matrix::Identity(feature_dim, feature_dim);
  for (const auto& s : scatters) {
    if (s.scatter.rows() != feature_dim || s.scatter.cols() != feature_dim) {
      throw DimensionMismatch("phase2: scatter matrix dimension mismatch");
    }
    a += inv_s2 * s.scatter;
  }
  AssembledPrecision out;
  out.chol = cholesky(a);
  out.a = std::move(a);
  return out;
}

double rmse_of(const Vector& pred, const Vector& y) {
  return std::sqrt((pred - y).squaredNorm() / static_cast<double>(y.size()));
}

// numerical collapse inside the likelihood (a failed pivot from overflowed
// parameters) is the same signal as a NaN loss: the step diverged
ad::GradResult safe_eval(const ad::LossFn& loss, const ParamVector& params) {
  try {
    return ad::evaluate_with_gradient(loss, params);
  } catch (const NotPositiveDefinite&) {
    ad::GradResult r;
    r.value = std::numeric_limits<double>::quiet_NaN();
    r.grads = ParamVector::zeros(params.layout);
    return r;
  }
}

// log-space mean of the noise/prior scales across clients; used only when
// phase 1 never produced aggregated globals
std::pair<double, double> mean_scales(const std::vector<ClientState>& clients) {
  long double ls = 0.0L, ll = 0.0L;
  for (const auto& c : clients) {
    ls += static_cast<long double>(c.params.scalar("log_sigma"));
    ll += static_cast<long double>(c.params.scalar("log_lambda"));
  }
  const auto k = static_cast<long double>(clients.size());
  return {std::exp(static_cast<double>(ls / k)),
          std::exp(static_cast<double>(ll / k))};
}

std::vector<Predictor> build_phase2_models(const RunConfig& cfg,
                                           const UrkConfig& arch,
                                           std::vector<ClientState>& clients,
                                           const ServerState& server) {
  std::vector<Predictor> models;

  if (cfg.phase2 == Phase2Mode::Global) {
    std::vector<msgs::ScatterMatrix> scatters;
    scatters.reserve(clients.size());
    for (auto& c : clients) {
      const ParamVector& ks =
          cfg.phase1 == Phase1Mode::Local ? c.params : server.params;
      scatters.push_back(
          msgs::wire_transfer(phase2_scatter(c, ks, arch, server.omegas)));
    }
    double sigma, lambda;
    if (cfg.phase1 == Phase1Mode::Local) {
      std::tie(sigma, lambda) = mean_scales(clients);
    } else {
      sigma = sigma_of(server.params);
      lambda = lambda_of(server.params);
    }
    const auto ap =
        assemble_precision(scatters, sigma, lambda, arch.feature_dim());
    const auto pb = msgs::wire_transfer(
        msgs::PrecisionBroadcast{ap.chol.lower});

    Vector w_bar = Vector::Zero(arch.feature_dim());
    for (const auto& c : clients) {
      const auto iw =
          msgs::wire_transfer(phase2_client_weights(c, pb, sigma));
      w_bar += iw.weights;
    }
    const auto gw = msgs::wire_transfer(msgs::GlobalWeights{w_bar});

    BlrPosterior post;
    post.a = ap.a;
    post.a_chol = ap.chol;
    post.w_bar = gw.weights;
    post.sigma = sigma;
    post.lambda = lambda;

    if (cfg.phase1 == Phase1Mode::Local) {
      for (const auto& c : clients) {
        models.push_back(
            Predictor{bind_config(arch, c.params), server.omegas, post});
      }
    } else {
      models.push_back(
          Predictor{bind_config(arch, server.params), server.omegas, post});
    }
    return models;
  }

  // phase-2 local: every client keeps its own last layer
  for (const auto& c : clients) {
    const ParamVector& ks =
        cfg.phase1 == Phase1Mode::Local ? c.params : server.params;
    const UrkConfig kernel = bind_config(arch, ks);
    const Matrix phi = feature_map(kernel, server.omegas, c.x);
    models.push_back(Predictor{
        kernel, server.omegas,
        blr_fit(phi, c.y, sigma_of(ks), lambda_of(ks))});
  }
  return models;
}

struct Snapshot {
  Vector server;
  std::vector<Vector> clients;
};

}  // namespace

AblationMode ablation_select(std::string_view name) {
  const auto plus = name.find('+');
  if (plus == std::string_view::npos) {
    throw UnknownMode("ablation mode must look like 'avg+global'");
  }
  const std::string_view p1 = name.substr(0, plus);
  const std::string_view p2 = name.substr(plus + 1);
  AblationMode mode;
  if (p1 == "local") {
    mode.phase1 = Phase1Mode::Local;
  } else if (p1 == "avg") {
    mode.phase1 = Phase1Mode::Avg;
  } else if (p1 == "kd") {
    mode.phase1 = Phase1Mode::Kd;
  } else {
    throw UnknownMode("unknown phase-1 mode: " + std::string(p1));
  }
  if (p2 == "local") {
    mode.phase2 = Phase2Mode::Local;
  } else if (p2 == "global") {
    mode.phase2 = Phase2Mode::Global;
  } else {
    throw UnknownMode("unknown phase-2 mode: " + std::string(p2));
  }
  return mode;
}

std::string ablation_name(AblationMode mode) {
  std::string p1 = mode.phase1 == Phase1Mode::Local ? "local"
                   : mode.phase1 == Phase1Mode::Avg ? "avg"
                                                    : "kd";
  return p1 + (mode.phase2 == Phase2Mode::Local ? "+local" : "+global");
}

msgs::ClientModelUpdate local_update(const ClientState& client,
                                     const ParamVector& global,
                                     const UrkConfig& arch,
                                     const Matrix& omegas, int epochs,
                                     double lr) {
  const auto loss = make_neg_lml_loss(arch, omegas, client.x, client.y);
  ParamVector params = global;
  for (int e = 0; e < epochs; ++e) {
    const auto res = safe_eval(loss, params);
    if (!std::isfinite(res.value) || !res.grads.data.allFinite()) {
      throw NonFiniteLoss("client " + std::to_string(client.id) +
                          ": non-finite marginal likelihood at epoch " +
                          std::to_string(e));
    }
    params.data -= lr * res.grads.data;
  }
  return msgs::ClientModelUpdate{params.data};
}

ParamVector fedavg_aggregate(const std::vector<msgs::ClientModelUpdate>& updates,
                             const LayoutPtr& layout,
                             const std::vector<double>* weights) {
  if (updates.empty()) throw LayoutMismatch("fedavg: no updates");
  std::vector<ParamVector> items;
  items.reserve(updates.size());
  for (const auto& u : updates) items.push_back(from_flat(layout, u.params));
  return mean_params(items, weights);
}

ParamVector kd_aggregate(const ServerState& server,
                         const std::vector<msgs::ClientModelUpdate>& updates,
                         const UrkConfig& arch, double alpha, int kd_epochs,
                         double lr, bool halving) {
  if (!server.kd_data || server.kd_data->second.size() == 0) {
    throw NoKdData("knowledge distillation requires a server-held dataset");
  }
  if (alpha < 0.0) {
    throw std::invalid_argument("kd_aggregate: alpha must be >= 0");
  }
  const Matrix& x_kd = server.kd_data->first;
  const Vector& y_kd = server.kd_data->second;
  const LayoutPtr layout = server.params.layout;

  // distillation target: mean of the client kernel matrices on the KD set
  Matrix k_target = Matrix::Zero(x_kd.cols(), x_kd.cols());
  for (const auto& u : updates) {
    const UrkConfig cfg = bind_config(arch, from_flat(layout, u.params));
    const Matrix phi = feature_map(cfg, server.omegas, x_kd);
    k_target += gram(Matrix(phi.transpose()));
  }
  k_target /= static_cast<double>(updates.size());

  const auto loss =
      make_kd_loss(arch, server.omegas, x_kd, y_kd, k_target, alpha);

  ParamVector params = server.params;
  auto cur = safe_eval(loss, params);
  if (!std::isfinite(cur.value)) {
    throw NonFiniteLoss("kd_aggregate: non-finite loss at start");
  }
  double step = lr;
  int halvings = 0;
  int epoch = 0;
  while (epoch < kd_epochs) {
    ParamVector cand = params;
    cand.data -= step * cur.grads.data;
    const auto next = safe_eval(loss, cand);
    const bool bad = !std::isfinite(next.value) || !next.grads.data.allFinite();
    if ((bad || next.value > cur.value) && halving) {
      step *= 0.5;
      if (++halvings > 60) break;
      continue;
    }
    if (bad) {
      throw NonFiniteLoss("kd_aggregate: non-finite loss at epoch " +
                          std::to_string(epoch));
    }
    params = std::move(cand);
    cur = next;
    ++epoch;
  }
  return params;
}

msgs::ScatterMatrix phase2_scatter(ClientState& client,
                                   const ParamVector& kernel_params,
                                   const UrkConfig& arch,
                                   const Matrix& omegas) {
  const UrkConfig cfg = bind_config(arch, kernel_params);
  client.phi_cache = feature_map(cfg, omegas, client.x);
  return msgs::ScatterMatrix{gram(client.phi_cache)};
}

msgs::PrecisionBroadcast phase2_assemble(
    const std::vector<msgs::ScatterMatrix>& scatters, double sigma,
    double lambda, int feature_dim) {
  return msgs::PrecisionBroadcast{
      assemble_precision(scatters, sigma, lambda, feature_dim).chol.lower};
}

msgs::IntermediateWeights phase2_client_weights(
    const ClientState& client, const msgs::PrecisionBroadcast& precision,
    double sigma) {
  if (client.phi_cache.size() == 0) {
    throw std::logic_error("phase2_client_weights before phase2_scatter");
  }
  const CholeskyFactor chol{precision.chol_lower};
  const double inv_s2 = 1.0 / (sigma * sigma);
  return msgs::IntermediateWeights{
      inv_s2 * solve_psd(chol, Vector(client.phi_cache * client.y))};
}

PredictiveDistribution predict(const Predictor& model, const Matrix& x) {
  return blr_predict(model.posterior,
                     feature_map(model.kernel, model.omegas, x));
}

double mean_model_rmse(const std::vector<Predictor>& models, const Matrix& x,
                       const Vector& y) {
  double acc = 0.0;
  for (const auto& m : models) {
    acc += rmse_of(predict(m, x).mean, y);
  }
  return acc / static_cast<double>(models.size());
}

FedRunResult run_fedbnr(const RunConfig& config, const UrkConfig& arch,
                        std::vector<ClientState>& clients, ServerState& server,
                        const Matrix& x_val, const Vector& y_val) {
  if (clients.empty()) {
    throw std::invalid_argument("run_fedbnr: no clients");
  }
  for (const auto& c : clients) {
    if (c.y.size() < 1) {
      throw std::invalid_argument("run_fedbnr: client " +
                                  std::to_string(c.id) + " has no data");
    }
    if (!c.params.same_layout(server.params)) {
      throw LayoutMismatch("run_fedbnr: client/server layout mismatch");
    }
  }
  if (config.phase1 == Phase1Mode::Kd &&
      (!server.kd_data || server.kd_data->second.size() == 0)) {
    throw NoKdData("run_fedbnr: kd aggregation without a kd dataset");
  }
  if (server.omegas.size() == 0) {
    server.omegas = sample_omegas(arch);
  }

  const int k = static_cast<int>(clients.size());
  int threads = config.threads > 0
                    ? config.threads
                    : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min(threads, k));
  const LayoutPtr layout = server.params.layout;

  FedRunResult result;
  double best_val = std::numeric_limits<double>::infinity();
  Snapshot best;
  int stall = 0;

  for (int round = 0; round < config.max_rounds; ++round) {
    server.round = round;
    const auto bc = msgs::wire_transfer(
        msgs::ModelBroadcast{server.params.data, server.omegas});
    const ParamVector broadcast = from_flat(layout, bc.params);

    std::vector<msgs::ClientModelUpdate> updates(
        static_cast<std::size_t>(k));
    parallel_for(k, threads, [&](int i) {
      const ParamVector& start = config.phase1 == Phase1Mode::Local
                                     ? clients[static_cast<std::size_t>(i)].params
                                     : broadcast;
      updates[static_cast<std::size_t>(i)] = msgs::wire_transfer(
          local_update(clients[static_cast<std::size_t>(i)], start, arch,
                       bc.omegas, config.local_epochs, config.lr_local));
    });
    for (int i = 0; i < k; ++i) {
      clients[static_cast<std::size_t>(i)].params =
          from_flat(layout, updates[static_cast<std::size_t>(i)].params);
    }

    switch (config.phase1) {
      case Phase1Mode::Avg: {
        std::vector<double> weights;
        if (config.weighted_fedavg) {
          for (const auto& c : clients) {
            weights.push_back(static_cast<double>(c.y.size()));
          }
        }
        server.params = fedavg_aggregate(
            updates, layout, config.weighted_fedavg ? &weights : nullptr);
        break;
      }
      case Phase1Mode::Kd:
        server.params =
            kd_aggregate(server, updates, arch, config.kd_alpha,
                         config.kd_epochs, config.lr_kd, config.kd_halving);
        break;
      case Phase1Mode::Local:
        break;
    }

    const auto models = build_phase2_models(config, arch, clients, server);
    const double val = mean_model_rmse(models, x_val, y_val);
    result.rounds.push_back(RoundRecord{round, val});

    if (val < best_val) {
      best_val = val;
      result.best_round = round;
      best.server = server.params.data;
      best.clients.clear();
      for (const auto& c : clients) best.clients.push_back(c.params.data);
      stall = 0;
    } else if (++stall >= config.patience) {
      break;
    }
  }

  if (result.best_round >= 0) {
    server.params.data = best.server;
    for (std::size_t i = 0; i < clients.size(); ++i) {
      clients[i].params.data = best.clients[i];
    }
  }

  result.models = build_phase2_models(config, arch, clients, server);
  return result;
}

}  // namespace fedbnr
