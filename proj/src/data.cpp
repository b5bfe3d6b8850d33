#include "fedbnr/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fedbnr/errors.hpp"
#include "fedbnr/rng.hpp"

namespace fedbnr {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    // trim whitespace and a possible trailing \r
    const auto b = cell.find_first_not_of(" \t\r\n");
    const auto e = cell.find_last_not_of(" \t\r\n");
    cells.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  const auto res = std::from_chars(first, last, out);
  return res.ec == std::errc{} && res.ptr == last && std::isfinite(out);
}

std::vector<Eigen::Index> sorted_order_by(const Vector& key) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(key.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&key](Eigen::Index a, Eigen::Index b) {
                     return key[a] < key[b];
                   });
  return order;
}

}  // namespace

Dataset Dataset::select(const std::vector<Eigen::Index>& rows) const {
  Dataset out;
  out.feature_names = feature_names;
  out.stats = stats;
  out.x.resize(p(), static_cast<Eigen::Index>(rows.size()));
  out.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.x.col(static_cast<Eigen::Index>(i)) = x.col(rows[i]);
    out.y[static_cast<Eigen::Index>(i)] = y[rows[i]];
  }
  return out;
}

Dataset load_csv(const std::string& path, const std::string& target,
                 CsvLoadReport* report) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file");
  const auto header = split_line(line);
  if (header.empty()) throw ParseError(path + ": empty header");

  int target_col = -1;
  if (!target.empty() && target[0] == '#') {
    target_col = std::stoi(target.substr(1));
    if (target_col < 0 || target_col >= static_cast<int>(header.size())) {
      throw MissingTarget(path + ": target index out of range");
    }
  } else {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == target) {
        target_col = static_cast<int>(i);
        break;
      }
    }
    if (target_col < 0) {
      throw MissingTarget(path + ": no column named '" + target + "'");
    }
  }

  std::vector<std::vector<double>> rows;
  Eigen::Index dropped = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line.find_first_not_of(" \t\r\n") == std::string::npos) {
      continue;
    }
    const auto cells = split_line(line);
    if (cells.size() != header.size()) {
      ++dropped;
      continue;
    }
    std::vector<double> vals(cells.size());
    bool ok = true;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (!parse_double(cells[i], vals[i])) {
        ok = false;
        break;
      }
    }
    if (!ok) {
      ++dropped;
      continue;
    }
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw ParseError(path + ": no usable rows");
  if (report) report->rows_dropped = dropped;

  const auto p = static_cast<Eigen::Index>(header.size()) - 1;
  const auto n = static_cast<Eigen::Index>(rows.size());
  Dataset ds;
  ds.x.resize(p, n);
  ds.y.resize(n);
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (static_cast<int>(i) != target_col) ds.feature_names.push_back(header[i]);
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::Index at = 0;
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (static_cast<int>(i) == target_col) {
        ds.y[j] = rows[static_cast<std::size_t>(j)][i];
      } else {
        ds.x(at++, j) = rows[static_cast<std::size_t>(j)][i];
      }
    }
  }
  return ds;
}

Split split_811(const Dataset& ds, std::uint64_t seed) {
  const Eigen::Index n = ds.n();
  if (n < 10) throw TooFewRows("split_811 needs at least 10 rows");

  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(mix64(seed, 0x511));
  rng.shuffle(idx);

  const Eigen::Index n_test = n / 10;
  const Eigen::Index n_valid = n / 10;
  const Eigen::Index n_train = n - n_test - n_valid;

  Split out;
  out.train = ds.select({idx.begin(), idx.begin() + n_train});
  out.test = ds.select({idx.begin() + n_train, idx.begin() + n_train + n_test});
  out.valid = ds.select({idx.begin() + n_train + n_test, idx.end()});
  return out;
}

PartitionPlan correlation_sorted_partition(const Dataset& train,
                                           int num_clients,
                                           std::uint64_t seed) {
  const Eigen::Index n = train.n();
  if (num_clients < 1) {
    throw std::invalid_argument("partition needs at least 1 client");
  }
  if (n < 2 * static_cast<Eigen::Index>(num_clients)) {
    throw TooFewRows("partition needs at least 2 rows per client");
  }

  // Pearson correlation of each feature with the target
  const double y_mean = train.y.mean();
  const double y_sd = std::sqrt(
      (train.y.array() - y_mean).square().sum() / static_cast<double>(n));
  int best_feature = -1;
  double best_abs = -1.0;
  for (Eigen::Index f = 0; f < train.p(); ++f) {
    const double m = train.x.row(f).mean();
    const auto centered = train.x.row(f).array() - m;
    const double sd =
        std::sqrt(centered.square().sum() / static_cast<double>(n));
    if (sd == 0.0 || y_sd == 0.0) continue;
    const double corr = (centered * (train.y.array() - y_mean).transpose())
                            .sum() /
                        (static_cast<double>(n) * sd * y_sd);
    if (std::abs(corr) > best_abs) {
      best_abs = std::abs(corr);
      best_feature = static_cast<int>(f);
    }
  }
  if (best_feature < 0) {
    throw DegenerateFeature(
        "no feature has a defined correlation with the target");
  }

  const auto order = sorted_order_by(train.x.row(best_feature).transpose());

  const int num_chunks = 2 * num_clients;
  const Eigen::Index base = n / num_chunks;
  const Eigen::Index extra = n % num_chunks;
  PartitionPlan plan;
  plan.sort_feature = best_feature;
  plan.chunk_bounds.push_back(0);
  for (int ch = 0; ch < num_chunks; ++ch) {
    plan.chunk_bounds.push_back(plan.chunk_bounds.back() + base +
                                (ch < extra ? 1 : 0));
  }

  std::vector<int> chunk_ids(static_cast<std::size_t>(num_chunks));
  std::iota(chunk_ids.begin(), chunk_ids.end(), 0);
  Rng rng(mix64(seed, 0xc0ffee));
  rng.shuffle(chunk_ids);

  plan.client_rows.resize(static_cast<std::size_t>(num_clients));
  for (int c = 0; c < num_clients; ++c) {
    for (int take = 0; take < 2; ++take) {
      const int ch = chunk_ids[static_cast<std::size_t>(2 * c + take)];
      for (Eigen::Index i = plan.chunk_bounds[static_cast<std::size_t>(ch)];
           i < plan.chunk_bounds[static_cast<std::size_t>(ch) + 1]; ++i) {
        plan.client_rows[static_cast<std::size_t>(c)].push_back(
            order[static_cast<std::size_t>(i)]);
      }
    }
  }
  return plan;
}

PartitionPlan range_partition(const Dataset& ds,
                              const std::vector<double>& boundaries) {
  if (!std::is_sorted(boundaries.begin(), boundaries.end())) {
    throw std::invalid_argument("range_partition: boundaries must be sorted");
  }
  const std::size_t k = boundaries.size() + 1;
  PartitionPlan plan;
  plan.client_rows.resize(k);
  for (Eigen::Index j = 0; j < ds.n(); ++j) {
    const double v = ds.x(0, j);
    std::size_t c = 0;
    while (c < boundaries.size() && v >= boundaries[c]) ++c;
    plan.client_rows[c].push_back(j);
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (plan.client_rows[c].empty()) {
      throw EmptyClient("range_partition: client " + std::to_string(c) +
                        " captured no points");
    }
  }
  return plan;
}

ScalarFn synthetic_fn(const std::string& name) {
  if (name == "sin") return [](double x) { return std::sin(x); };
  if (name == "step") return [](double x) { return x > 0.0 ? 1.0 : 0.0; };
  if (name == "identity") return [](double x) { return x; };
  if (name == "linear") return [](double x) { return 2.0 * x + 1.0; };
  throw ConfigError("unknown synthetic function: " + name);
}

Dataset synthetic_1d(const ScalarFn& fn, double lo, double hi, Eigen::Index n,
                     double noise_sigma, std::uint64_t seed) {
  if (!(lo < hi)) throw std::invalid_argument("synthetic_1d: invalid range");
  if (n < 1) throw std::invalid_argument("synthetic_1d: n must be >= 1");
  Dataset ds;
  ds.x.resize(1, n);
  ds.y.resize(n);
  ds.feature_names = {"x"};
  Rng rng(mix64(seed, 0x51d));
  for (Eigen::Index j = 0; j < n; ++j) {
    ds.x(0, j) = rng.uniform(lo, hi);
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    ds.y[j] = fn(ds.x(0, j)) + noise_sigma * rng.normal();
  }
  return ds;
}

Dataset synthetic_tabular(Eigen::Index n, std::uint64_t seed,
                          double noise_sigma) {
  if (n < 1) throw std::invalid_argument("synthetic_tabular: n must be >= 1");
  Dataset ds;
  ds.x.resize(4, n);
  ds.y.resize(n);
  ds.feature_names = {"t1", "t2", "t3", "t4"};
  Rng rng(mix64(seed, 0x7ab));
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index f = 0; f < 4; ++f) {
      ds.x(f, j) = rng.uniform(-1.0, 1.0);
    }
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    const double x1 = ds.x(0, j), x2 = ds.x(1, j), x3 = ds.x(2, j),
                 x4 = ds.x(3, j);
    ds.y[j] = 2.0 * x1 + std::sin(2.0 * x2) + 0.5 * x3 * x3 - 0.8 * x4 +
              0.3 * x1 * x4 + noise_sigma * rng.normal();
  }
  return ds;
}

Standardizer fit_standardizer(const Dataset& train) {
  const auto n = static_cast<double>(train.n());
  Standardizer s;
  s.x_mean = train.x.rowwise().mean();
  s.x_std.resize(train.p());
  for (Eigen::Index f = 0; f < train.p(); ++f) {
    const double var =
        (train.x.row(f).array() - s.x_mean[f]).square().sum() / n;
    const double sd = std::sqrt(var);
    s.x_std[f] = sd > 0.0 ? sd : 1.0;
  }
  s.y_mean = train.y.mean();
  const double yv = (train.y.array() - s.y_mean).square().sum() / n;
  s.y_std = yv > 0.0 ? std::sqrt(yv) : 1.0;
  return s;
}

Dataset apply_standardizer(const Standardizer& s, const Dataset& ds) {
  Dataset out = ds;
  out.x = (ds.x.colwise() - Vector(s.x_mean)).array().colwise() /
          Vector(s.x_std).array();
  out.y = (ds.y.array() - s.y_mean) / s.y_std;
  out.stats = s;
  return out;
}

double destandardize_mean(const Standardizer& s, double mean) {
  return mean * s.y_std + s.y_mean;
}

double destandardize_var(const Standardizer& s, double var) {
  return var * s.y_std * s.y_std;
}

}  // namespace fedbnr
