// Data-parallel inner loops. Each kernel has an OpenMP version and a plain
// serial reference under kernels::reference used by the tests and the
// benchmark. The parallel versions reduce partial results in a fixed order
// that does not depend on the thread count, so their output is bit-identical
// for any number of threads.
#pragma once

#include <span>
#include <vector>

#include "tagforge/common.hpp"
#include "tagforge/gmm.hpp"

namespace tagforge {

struct EmbeddingNet;
struct TrainPair;

namespace kernels {

// EM sufficient statistics, centred at the current means for stability:
//   nk[k]    = sum_i g_ik
//   s1(k,j)  = sum_i g_ik (x_ij - mu_kj)
//   s2(k,j)  = sum_i g_ik (x_ij - mu_kj)^2
struct EStepStats {
  std::vector<double> nk;
  Matrix s1;
  Matrix s2;
  double loglik = 0.0;
};

inline constexpr std::size_t kEStepChunk = 512;

EStepStats estep_stats(const GmmModel& gmm, const Matrix& data);

// Unnormalized Fisher sums: [A | B] with A(k,j) = sum_i g_ik z_ijk and
// B(k,j) = sum_i g_ik (z_ijk^2 - 1), z = (x - mu)/sigma. Pairwise tree with
// single-row leaves.
std::vector<double> fisher_sums(const GmmModel& gmm, const Matrix& descriptors);

// Squared L2 distance from query to every row.
std::vector<double> squared_distances(const Matrix& rows, std::span<const double> query);

// Mean squared regression loss plus L2 penalty, with its exact gradient
// written into grad (resized to the shape of net).
double mlp_loss_grad(const EmbeddingNet& net, std::span<const TrainPair> batch, double l2_reg, EmbeddingNet& grad);

namespace reference {

EStepStats estep_stats(const GmmModel& gmm, const Matrix& data);
std::vector<double> fisher_sums(const GmmModel& gmm, const Matrix& descriptors);
std::vector<double> squared_distances(const Matrix& rows, std::span<const double> query);
double mlp_loss_grad(const EmbeddingNet& net, std::span<const TrainPair> batch, double l2_reg, EmbeddingNet& grad);

}  // namespace reference
}  // namespace kernels
}  // namespace tagforge
