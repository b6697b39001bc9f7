#include "tagforge/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "tagforge/kernels.hpp"

namespace tagforge {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kEmptyComponentMass = 1e-10;
constexpr double kAbsoluteVarianceFloor = 1e-12;

void check_finite(const Matrix& data) {
  for (double v : data.data()) {
    if (!std::isfinite(v)) throw DataError("non-finite input");
  }
}

std::vector<double> column_variances(const Matrix& data) {
  const std::size_t n = data.rows();
  const std::size_t d = data.cols();
  std::vector<double> mean(d, 0.0), var(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += data(i, j);
  }
  for (auto& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = data(i, j) - mean[j];
      var[j] += diff * diff;
    }
  }
  for (auto& v : var) v /= static_cast<double>(n);
  return var;
}

std::vector<std::size_t> kmeanspp_seeds(const Matrix& data, std::size_t k, Rng& rng) {
  const std::size_t n = data.rows();
  std::vector<std::size_t> seeds{static_cast<std::size_t>(rng.below(n))};
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  while (seeds.size() < k) {
    const auto latest = data.row(seeds.back());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      best[i] = std::min(best[i], squared_l2(data.row(i), latest));
      total += best[i];
    }
    std::size_t pick = 0;
    if (total <= 0.0) {
      pick = static_cast<std::size_t>(rng.below(n));
    } else {
      const double target = rng.uniform() * total;
      double running = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        running += best[i];
        if (running > target) {
          pick = i;
          break;
        }
      }
    }
    seeds.push_back(pick);
  }
  return seeds;
}

std::vector<std::size_t> random_seeds(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Partial Fisher-Yates: first k entries are a uniform sample.
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(k);
  return idx;
}

std::size_t worst_covered_row(const GmmModel& gmm, const Matrix& data) {
  std::vector<double> lj(gmm.components());
  std::size_t worst = 0;
  double worst_ll = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < data.rows(); ++i) {
    log_joint(gmm, data.row(i), lj);
    const double ll = logsumexp(lj);
    if (ll < worst_ll) {
      worst_ll = ll;
      worst = i;
    }
  }
  return worst;
}

std::vector<double> json_vector(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array()) throw DataError(where + ": expected array");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number()) throw DataError(where + ": expected number");
    out.push_back(v.get<double>());
  }
  return out;
}

Matrix json_matrix(const nlohmann::json& j, std::size_t rows, std::size_t cols, const std::string& where) {
  if (!j.is_array() || j.size() != rows) throw DataError(where + ": expected " + std::to_string(rows) + " rows");
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = json_vector(j[r], where);
    if (row.size() != cols) throw DataError(where + ": expected " + std::to_string(cols) + " columns");
    std::copy(row.begin(), row.end(), m.row(r).begin());
  }
  return m;
}

nlohmann::json matrix_json(const Matrix& m) {
  auto out = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    out.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return out;
}

}  // namespace

double logsumexp(std::span<const double> values) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : values) mx = std::max(mx, v);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double v : values) s += std::exp(v - mx);
  return mx + std::log(s);
}

void log_joint(const GmmModel& gmm, std::span<const double> x, std::span<double> out) {
  const std::size_t d = gmm.dim();
  for (std::size_t c = 0; c < gmm.components(); ++c) {
    const auto mu = gmm.means.row(c);
    const auto var = gmm.variances.row(c);
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = x[j] - mu[j];
      acc += kLog2Pi + std::log(var[j]) + diff * diff / var[j];
    }
    out[c] = std::log(gmm.weights[c]) - 0.5 * acc;
  }
}

std::vector<double> responsibilities(const GmmModel& gmm, std::span<const double> x) {
  if (x.size() != gmm.dim()) throw InvalidArgument("responsibilities: dimension mismatch");
  for (double v : x) {
    if (!std::isfinite(v)) throw DataError("non-finite input");
  }
  std::vector<double> out(gmm.components());
  log_joint(gmm, x, out);
  const double lse = logsumexp(out);
  for (auto& v : out) v = std::exp(v - lse);
  return out;
}

double log_likelihood(const GmmModel& gmm, const Matrix& data) {
  if (data.cols() != gmm.dim()) throw InvalidArgument("log_likelihood: dimension mismatch");
  check_finite(data);
  return kernels::estep_stats(gmm, data).loglik;
}

GmmFit fit_gmm(const Matrix& data, std::size_t k, const EmConfig& cfg) {
  if (k < 1) throw InvalidArgument("fit_gmm: K must be >= 1");
  if (data.rows() < k) throw InvalidArgument("fewer descriptors than components");
  if (cfg.max_iters < 1) throw InvalidArgument("fit_gmm: max_iters must be >= 1");
  if (!(cfg.ll_rel_tol > 0.0) || !(cfg.variance_floor_scale > 0.0)) {
    throw InvalidArgument("fit_gmm: tolerances must be positive");
  }
  check_finite(data);

  const std::size_t n = data.rows();
  const std::size_t d = data.cols();
  const auto data_var = column_variances(data);
  std::vector<double> floor(d);
  for (std::size_t j = 0; j < d; ++j) floor[j] = std::max(cfg.variance_floor_scale * data_var[j], kAbsoluteVarianceFloor);

  Rng rng(cfg.seed);
  const auto seeds = cfg.init == GmmInit::kmeans_pp ? kmeanspp_seeds(data, k, rng) : random_seeds(n, k, rng);

  GmmFit fit;
  GmmModel& g = fit.model;
  g.weights.assign(k, 1.0 / static_cast<double>(k));
  g.means = Matrix(k, d);
  g.variances = Matrix(k, d);
  for (std::size_t c = 0; c < k; ++c) {
    const auto src = data.row(seeds[c]);
    std::copy(src.begin(), src.end(), g.means.row(c).begin());
    for (std::size_t j = 0; j < d; ++j) g.variances(c, j) = std::max(data_var[j], floor[j]);
  }

  auto& diag = fit.diagnostics;
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    const kernels::EStepStats st = kernels::estep_stats(g, data);
    if (!diag.loglik_history.empty()) {
      const double prev = diag.loglik_history.back();
      if ((st.loglik - prev) / std::abs(prev) < cfg.ll_rel_tol) {
        diag.loglik_history.push_back(st.loglik);
        diag.converged = true;
        return fit;
      }
    }
    diag.loglik_history.push_back(st.loglik);

    for (std::size_t c = 0; c < k; ++c) {
      const double nk = st.nk[c];
      if (nk < kEmptyComponentMass) {
        const auto src = data.row(worst_covered_row(g, data));
        std::copy(src.begin(), src.end(), g.means.row(c).begin());
        for (std::size_t j = 0; j < d; ++j) g.variances(c, j) = std::max(data_var[j], floor[j]);
        g.weights[c] = 1.0 / static_cast<double>(n);
        ++diag.reseeded_components;
        continue;
      }
      for (std::size_t j = 0; j < d; ++j) {
        const double shift = st.s1(c, j) / nk;
        g.means(c, j) += shift;
        g.variances(c, j) = std::max(st.s2(c, j) / nk - shift * shift, floor[j]);
      }
      g.weights[c] = nk / static_cast<double>(n);
    }
    const double wsum = std::accumulate(g.weights.begin(), g.weights.end(), 0.0);
    for (auto& w : g.weights) w /= wsum;
    ++diag.iterations;
  }
  diag.loglik_history.push_back(kernels::estep_stats(g, data).loglik);
  return fit;
}

void validate_gmm(const GmmModel& gmm) {
  const std::size_t k = gmm.components();
  const std::size_t d = gmm.dim();
  if (k == 0 || d == 0) throw DataError("gmm: empty model");
  if (gmm.means.rows() != k || gmm.variances.rows() != k || gmm.variances.cols() != d) {
    throw DataError("gmm: inconsistent shapes");
  }
  double sum = 0.0;
  for (double w : gmm.weights) {
    if (!(w > 0.0) || !std::isfinite(w)) throw DataError("gmm: weights must be positive");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw DataError("gmm: weights do not sum to 1");
  for (double v : gmm.means.data()) {
    if (!std::isfinite(v)) throw DataError("gmm: non-finite mean");
  }
  for (double v : gmm.variances.data()) {
    if (!(v > 0.0) || !std::isfinite(v)) throw DataError("gmm: variances must be positive");
  }
}

std::string gmm_to_json(const GmmModel& gmm) {
  nlohmann::json j;
  j["version"] = 1;
  j["k"] = gmm.components();
  j["d"] = gmm.dim();
  j["weights"] = gmm.weights;
  j["means"] = matrix_json(gmm.means);
  j["variances"] = matrix_json(gmm.variances);
  return j.dump() + "\n";
}

GmmModel gmm_from_json(const std::string& text, const std::string& source_name) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(source_name + ": invalid JSON (" + e.what() + ")");
  }
  try {
    const auto k = j.at("k").get<std::size_t>();
    const auto d = j.at("d").get<std::size_t>();
    GmmModel g;
    g.weights = json_vector(j.at("weights"), source_name + ": weights");
    if (g.weights.size() != k) throw DataError(source_name + ": weights length != k");
    g.means = json_matrix(j.at("means"), k, d, source_name + ": means");
    g.variances = json_matrix(j.at("variances"), k, d, source_name + ": variances");
    try {
      validate_gmm(g);
    } catch (const DataError& e) {
      throw DataError(source_name + ": " + e.what());
    }
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(source_name + ": malformed GMM document (" + e.what() + ")");
  }
}

void save_gmm(const GmmModel& gmm, const std::string& path) { write_file_atomic(path, gmm_to_json(gmm)); }

GmmModel load_gmm(const std::string& path) { return gmm_from_json(read_file(path), path); }

}  // namespace tagforge
