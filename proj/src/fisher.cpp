#include "tagforge/fisher.hpp"

#include <cmath>

#include "tagforge/kernels.hpp"

namespace tagforge {

FisherNorm parse_fisher_norm(const std::string& name) {
  if (name == "none") return FisherNorm::none;
  if (name == "ssqrt") return FisherNorm::ssqrt;
  if (name == "l2") return FisherNorm::l2;
  if (name == "ssqrt_l2") return FisherNorm::ssqrt_l2;
  throw InvalidArgument("unknown normalization '" + name + "' (none, ssqrt, l2, ssqrt_l2)");
}

std::string to_string(FisherNorm norm) {
  switch (norm) {
    case FisherNorm::none: return "none";
    case FisherNorm::ssqrt: return "ssqrt";
    case FisherNorm::l2: return "l2";
    case FisherNorm::ssqrt_l2: return "ssqrt_l2";
  }
  return "none";
}

FisherVector encode_fisher(const GmmModel& gmm, const DescriptorSet& ds, FisherNorm norm) {
  const std::size_t n = ds.matrix.rows();
  if (n == 0) throw InvalidArgument(ds.video_id + ": descriptor set is empty");
  if (ds.matrix.cols() != gmm.dim()) {
    throw InvalidArgument(ds.video_id + ": descriptor dimension " + std::to_string(ds.matrix.cols()) +
                          " does not match GMM dimension " + std::to_string(gmm.dim()));
  }
  for (double v : ds.matrix.data()) {
    if (!std::isfinite(v)) throw DataError(ds.video_id + ": non-finite descriptor value");
  }

  const std::size_t k = gmm.components();
  const std::size_t d = gmm.dim();
  FisherVector fv{ds.video_id, kernels::fisher_sums(gmm, ds.matrix), false};
  auto& values = fv.values;
  const double nd = static_cast<double>(n);
  for (std::size_t c = 0; c < k; ++c) {
    const double mean_scale = nd * std::sqrt(gmm.weights[c]);
    const double var_scale = nd * std::sqrt(2.0 * gmm.weights[c]);
    for (std::size_t j = 0; j < d; ++j) {
      values[c * d + j] /= mean_scale;
      values[k * d + c * d + j] /= var_scale;
    }
  }

  if (norm == FisherNorm::ssqrt || norm == FisherNorm::ssqrt_l2) {
    for (auto& v : values) v = std::copysign(std::sqrt(std::abs(v)), v);
  }
  if (norm == FisherNorm::l2 || norm == FisherNorm::ssqrt_l2) {
    const double len = norm2(values);
    if (len == 0.0) {
      fv.degenerate = true;
    } else {
      for (auto& v : values) v /= len;
    }
  }
  return fv;
}

}  // namespace tagforge
