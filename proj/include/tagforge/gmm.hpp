// Diagonal-covariance Gaussian mixture fitted by EM.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tagforge/common.hpp"

namespace tagforge {

struct GmmModel {
  std::vector<double> weights;  // K, sums to 1
  Matrix means;                 // K x D
  Matrix variances;             // K x D, diagonal

  std::size_t components() const { return weights.size(); }
  std::size_t dim() const { return means.cols(); }
  bool operator==(const GmmModel&) const = default;
};

enum class GmmInit { kmeans_pp, random_points };

struct EmConfig {
  int max_iters = 100;
  double ll_rel_tol = 1e-6;
  // Floor is variance_floor_scale * per-dimension data variance.
  double variance_floor_scale = 1e-6;
  std::uint64_t seed = 1;
  GmmInit init = GmmInit::kmeans_pp;
};

struct EmDiagnostics {
  std::vector<double> loglik_history;  // log-likelihood of the parameters entering each iteration, then the final one
  int iterations = 0;
  int reseeded_components = 0;
  bool converged = false;
};

struct GmmFit {
  GmmModel model;
  EmDiagnostics diagnostics;
};

GmmFit fit_gmm(const Matrix& data, std::size_t k, const EmConfig& cfg = {});

// log(pi_k) + log N(x; mu_k, sigma_k^2) for every component.
void log_joint(const GmmModel& gmm, std::span<const double> x, std::span<double> out);

double logsumexp(std::span<const double> values);

// Posterior component probabilities, computed in log space.
std::vector<double> responsibilities(const GmmModel& gmm, std::span<const double> x);

double log_likelihood(const GmmModel& gmm, const Matrix& data);

void validate_gmm(const GmmModel& gmm);

// JSON document {version, k, d, weights, means, variances}; doubles in
// shortest round-trip form.
std::string gmm_to_json(const GmmModel& gmm);
GmmModel gmm_from_json(const std::string& text, const std::string& source_name);
void save_gmm(const GmmModel& gmm, const std::string& path);
GmmModel load_gmm(const std::string& path);

}  // namespace tagforge
