// Fisher-vector encoding of a descriptor set under a diagonal GMM.
#pragma once

#include <string>
#include <vector>

#include "tagforge/common.hpp"
#include "tagforge/gmm.hpp"

namespace tagforge {

struct DescriptorSet {
  std::string video_id;
  Matrix matrix;  // n x D
};

enum class FisherNorm { none, ssqrt, l2, ssqrt_l2 };

FisherNorm parse_fisher_norm(const std::string& name);
std::string to_string(FisherNorm norm);

// values = [mean block (K x D) | variance block (K x D)], component-major.
struct FisherVector {
  std::string video_id;
  std::vector<double> values;
  bool degenerate = false;  // all-zero encoding, L2 step skipped
  bool operator==(const FisherVector&) const = default;
};

// u_kj = 1/(n sqrt(pi_k))  sum_i g_ik (x_ij - mu_kj)/sigma_kj
// v_kj = 1/(n sqrt(2 pi_k)) sum_i g_ik [((x_ij - mu_kj)/sigma_kj)^2 - 1]
// followed by the optional signed square root and global L2 normalization.
// Row sums use a midpoint pairwise tree, so the encoding of a set
// concatenated with itself is bit-identical to the encoding of the set.
FisherVector encode_fisher(const GmmModel& gmm, const DescriptorSet& ds, FisherNorm norm = FisherNorm::ssqrt_l2);

}  // namespace tagforge
