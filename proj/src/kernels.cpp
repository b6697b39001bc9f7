#include "tagforge/kernels.hpp"

#include <algorithm>
#include <cmath>

#include "tagforge/crossmodal.hpp"

namespace tagforge::kernels {

namespace {

EStepStats empty_stats(std::size_t k, std::size_t d) {
  return EStepStats{std::vector<double>(k, 0.0), Matrix(k, d), Matrix(k, d), 0.0};
}

// Adds the contribution of rows [lo, hi) in order.
void accumulate_estep(const GmmModel& gmm, const Matrix& data, std::size_t lo, std::size_t hi, EStepStats& st) {
  const std::size_t k = gmm.components();
  const std::size_t d = gmm.dim();
  std::vector<double> lj(k);
  for (std::size_t i = lo; i < hi; ++i) {
    const auto x = data.row(i);
    log_joint(gmm, x, lj);
    const double lse = logsumexp(lj);
    st.loglik += lse;
    for (std::size_t c = 0; c < k; ++c) {
      const double g = std::exp(lj[c] - lse);
      st.nk[c] += g;
      const auto mu = gmm.means.row(c);
      auto s1 = st.s1.row(c);
      auto s2 = st.s2.row(c);
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = x[j] - mu[j];
        s1[j] += g * diff;
        s2[j] += g * diff * diff;
      }
    }
  }
}

void add_into(EStepStats& acc, const EStepStats& part) {
  for (std::size_t c = 0; c < acc.nk.size(); ++c) acc.nk[c] += part.nk[c];
  auto& a1 = acc.s1.data();
  auto& a2 = acc.s2.data();
  for (std::size_t i = 0; i < a1.size(); ++i) {
    a1[i] += part.s1.data()[i];
    a2[i] += part.s2.data()[i];
  }
  acc.loglik += part.loglik;
}

struct FisherScratch {
  std::vector<double> lj;
  std::vector<double> inv_sigma;  // K x D
};

FisherScratch make_scratch(const GmmModel& gmm) {
  FisherScratch s;
  s.lj.resize(gmm.components());
  s.inv_sigma.resize(gmm.components() * gmm.dim());
  for (std::size_t c = 0; c < gmm.components(); ++c) {
    for (std::size_t j = 0; j < gmm.dim(); ++j) {
      s.inv_sigma[c * gmm.dim() + j] = 1.0 / std::sqrt(gmm.variances(c, j));
    }
  }
  return s;
}

// Writes (not adds) the contribution of one descriptor.
void fisher_row(const GmmModel& gmm, std::span<const double> x, FisherScratch& s, std::span<double> out) {
  const std::size_t k = gmm.components();
  const std::size_t d = gmm.dim();
  log_joint(gmm, x, s.lj);
  const double lse = logsumexp(s.lj);
  for (std::size_t c = 0; c < k; ++c) {
    const double g = std::exp(s.lj[c] - lse);
    const auto mu = gmm.means.row(c);
    for (std::size_t j = 0; j < d; ++j) {
      const double z = (x[j] - mu[j]) * s.inv_sigma[c * d + j];
      out[c * d + j] = g * z;
      out[k * d + c * d + j] = g * (z * z - 1.0);
    }
  }
}

// Pairwise sum of row contributions over [lo, hi), split at the midpoint down
// to single rows. scratch[depth] holds the right child's result.
void fisher_tree(const GmmModel& gmm, const Matrix& data, std::size_t lo, std::size_t hi, std::span<double> out,
                 std::vector<std::vector<double>>& scratch, std::size_t depth, FisherScratch& fs) {
  if (hi - lo == 1) {
    fisher_row(gmm, data.row(lo), fs, out);
    return;
  }
  const std::size_t mid = lo + (hi - lo) / 2;
  fisher_tree(gmm, data, lo, mid, out, scratch, depth + 1, fs);
  const std::span<double> right = scratch[depth];
  fisher_tree(gmm, data, mid, hi, right, scratch, depth + 1, fs);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += right[i];
}

struct Segment {
  std::size_t lo;
  std::size_t hi;
};

// Top levels of the same midpoint tree, cut at `levels`.
void collect_segments(std::size_t lo, std::size_t hi, int levels, std::vector<Segment>& segs) {
  if (levels == 0 || hi - lo <= 1) {
    segs.push_back({lo, hi});
    return;
  }
  const std::size_t mid = lo + (hi - lo) / 2;
  collect_segments(lo, mid, levels - 1, segs);
  collect_segments(mid, hi, levels - 1, segs);
}

// Recombines segment results in the order the tree would have summed them.
void combine_segments(std::size_t lo, std::size_t hi, int levels, std::vector<std::vector<double>>& results,
                      std::size_t& next, std::vector<double>& out) {
  if (levels == 0 || hi - lo <= 1) {
    out = std::move(results[next++]);
    return;
  }
  const std::size_t mid = lo + (hi - lo) / 2;
  std::vector<double> right;
  combine_segments(lo, mid, levels - 1, results, next, out);
  combine_segments(mid, hi, levels - 1, results, next, right);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += right[i];
}

void forward(const EmbeddingNet& net, std::span<const double> x, std::span<double> hidden, std::span<double> out) {
  const std::size_t h = net.hidden_dim();
  for (std::size_t j = 0; j < h; ++j) hidden[j] = std::tanh(dot(net.w1.row(j), x) + net.b1[j]);
  for (std::size_t o = 0; o < net.output_dim(); ++o) out[o] = dot(net.w2.row(o), hidden) + net.b2[o];
}

double penalty(const EmbeddingNet& net, double l2_reg) {
  if (l2_reg == 0.0) return 0.0;
  return l2_reg * (dot(net.w1.data(), net.w1.data()) + dot(net.w2.data(), net.w2.data()));
}

void check_batch(const EmbeddingNet& net, std::span<const TrainPair> batch) {
  if (batch.empty()) throw InvalidArgument("loss_and_grad: empty batch");
  for (const auto& p : batch) {
    if (p.fisher.size() != net.input_dim()) throw InvalidArgument("loss_and_grad: fisher length does not match net input");
    if (p.target.size() != net.output_dim()) throw InvalidArgument("loss_and_grad: target length does not match net output");
  }
}

}  // namespace

EStepStats estep_stats(const GmmModel& gmm, const Matrix& data) {
  const std::size_t k = gmm.components();
  const std::size_t d = gmm.dim();
  const std::size_t n = data.rows();
  const std::size_t chunks = (n + kEStepChunk - 1) / kEStepChunk;
  std::vector<EStepStats> partial(chunks);
#pragma omp parallel for schedule(static) num_threads(threads())
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(chunks); ++c) {
    partial[c] = empty_stats(k, d);
    const std::size_t lo = static_cast<std::size_t>(c) * kEStepChunk;
    accumulate_estep(gmm, data, lo, std::min(n, lo + kEStepChunk), partial[c]);
  }
  EStepStats total = empty_stats(k, d);
  for (const auto& p : partial) add_into(total, p);
  return total;
}

std::vector<double> fisher_sums(const GmmModel& gmm, const Matrix& descriptors) {
  const std::size_t n = descriptors.rows();
  const std::size_t f = 2 * gmm.components() * gmm.dim();
  if (n == 0) return std::vector<double>(f, 0.0);

  int levels = 0;
  while ((1 << levels) < 4 * threads() && levels < 12) ++levels;
  if (threads() == 1) levels = 0;

  std::vector<Segment> segs;
  collect_segments(0, n, levels, segs);
  std::vector<std::vector<double>> results(segs.size());
#pragma omp parallel for schedule(dynamic) num_threads(threads())
  for (std::ptrdiff_t s = 0; s < static_cast<std::ptrdiff_t>(segs.size()); ++s) {
    results[s].assign(f, 0.0);
    std::size_t depth = 1;
    while ((std::size_t{1} << depth) < segs[s].hi - segs[s].lo) ++depth;
    std::vector<std::vector<double>> scratch(depth + 1, std::vector<double>(f));
    FisherScratch fs = make_scratch(gmm);
    fisher_tree(gmm, descriptors, segs[s].lo, segs[s].hi, results[s], scratch, 0, fs);
  }
  std::size_t next = 0;
  std::vector<double> out;
  combine_segments(0, n, levels, results, next, out);
  return out;
}

std::vector<double> squared_distances(const Matrix& rows, std::span<const double> query) {
  std::vector<double> out(rows.rows());
#pragma omp parallel for schedule(static) num_threads(threads())
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(rows.rows()); ++i) {
    out[i] = squared_l2(rows.row(i), query);
  }
  return out;
}

double mlp_loss_grad(const EmbeddingNet& net, std::span<const TrainPair> batch, double l2_reg, EmbeddingNet& grad) {
  check_batch(net, batch);
  const std::size_t b = batch.size();
  const std::size_t f = net.input_dim();
  const std::size_t h = net.hidden_dim();
  const std::size_t d = net.output_dim();
  const double scale = 2.0 / static_cast<double>(b);

  Matrix hidden(b, h);
  Matrix delta2(b, d);  // dL/dy per pair
  Matrix delta1(b, h);  // dL/d(pre-activation) per pair
  std::vector<double> sq(b);

  // Pairs are independent in the forward and backward passes.
#pragma omp parallel for schedule(static) num_threads(threads())
  for (std::ptrdiff_t p = 0; p < static_cast<std::ptrdiff_t>(b); ++p) {
    std::vector<double> y(d);
    forward(net, batch[p].fisher, hidden.row(p), y);
    double s = 0.0;
    for (std::size_t o = 0; o < d; ++o) {
      const double r = y[o] - batch[p].target[o];
      s += r * r;
      delta2(p, o) = scale * r;
    }
    sq[p] = s;
    for (std::size_t j = 0; j < h; ++j) {
      double back = 0.0;
      for (std::size_t o = 0; o < d; ++o) back += net.w2(o, j) * delta2(p, o);
      const double a = hidden(p, j);
      delta1(p, j) = back * (1.0 - a * a);
    }
  }

  double loss = 0.0;
  for (double s : sq) loss += s;
  loss = loss / static_cast<double>(b) + penalty(net, l2_reg);

  grad = EmbeddingNet::zeros(f, h, d);
  // Parameter rows are independent; each sums over pairs in batch order.
#pragma omp parallel for schedule(static) num_threads(threads())
  for (std::ptrdiff_t o = 0; o < static_cast<std::ptrdiff_t>(d); ++o) {
    auto g = grad.w2.row(o);
    double gb = 0.0;
    for (std::size_t p = 0; p < b; ++p) {
      const double dl = delta2(p, o);
      gb += dl;
      const auto hp = hidden.row(p);
      for (std::size_t j = 0; j < h; ++j) g[j] += dl * hp[j];
    }
    grad.b2[o] = gb;
    const auto w = net.w2.row(o);
    for (std::size_t j = 0; j < h; ++j) g[j] += 2.0 * l2_reg * w[j];
  }
#pragma omp parallel for schedule(static) num_threads(threads())
  for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(h); ++j) {
    auto g = grad.w1.row(j);
    double gb = 0.0;
    for (std::size_t p = 0; p < b; ++p) {
      const double dl = delta1(p, j);
      gb += dl;
      const auto& x = batch[p].fisher;
      for (std::size_t i = 0; i < f; ++i) g[i] += dl * x[i];
    }
    grad.b1[j] = gb;
    const auto w = net.w1.row(j);
    for (std::size_t i = 0; i < f; ++i) g[i] += 2.0 * l2_reg * w[i];
  }
  return loss;
}

namespace reference {

EStepStats estep_stats(const GmmModel& gmm, const Matrix& data) {
  EStepStats st = empty_stats(gmm.components(), gmm.dim());
  accumulate_estep(gmm, data, 0, data.rows(), st);
  return st;
}

std::vector<double> fisher_sums(const GmmModel& gmm, const Matrix& descriptors) {
  const std::size_t f = 2 * gmm.components() * gmm.dim();
  std::vector<double> out(f, 0.0);
  std::vector<double> row(f);
  FisherScratch fs = make_scratch(gmm);
  for (std::size_t i = 0; i < descriptors.rows(); ++i) {
    fisher_row(gmm, descriptors.row(i), fs, row);
    for (std::size_t t = 0; t < f; ++t) out[t] += row[t];
  }
  return out;
}

std::vector<double> squared_distances(const Matrix& rows, std::span<const double> query) {
  std::vector<double> out(rows.rows());
  for (std::size_t i = 0; i < rows.rows(); ++i) out[i] = squared_l2(rows.row(i), query);
  return out;
}

// Straight per-pair backpropagation.
double mlp_loss_grad(const EmbeddingNet& net, std::span<const TrainPair> batch, double l2_reg, EmbeddingNet& grad) {
  check_batch(net, batch);
  const std::size_t f = net.input_dim();
  const std::size_t h = net.hidden_dim();
  const std::size_t d = net.output_dim();
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  grad = EmbeddingNet::zeros(f, h, d);
  std::vector<double> hidden(h), y(d), dy(d), dz(h);
  double loss = 0.0;
  for (const auto& p : batch) {
    forward(net, p.fisher, hidden, y);
    for (std::size_t o = 0; o < d; ++o) {
      const double r = y[o] - p.target[o];
      loss += r * r * inv_b;
      dy[o] = 2.0 * r * inv_b;
    }
    for (std::size_t j = 0; j < h; ++j) {
      double back = 0.0;
      for (std::size_t o = 0; o < d; ++o) back += net.w2(o, j) * dy[o];
      dz[j] = back * (1.0 - hidden[j] * hidden[j]);
    }
    for (std::size_t o = 0; o < d; ++o) {
      grad.b2[o] += dy[o];
      for (std::size_t j = 0; j < h; ++j) grad.w2(o, j) += dy[o] * hidden[j];
    }
    for (std::size_t j = 0; j < h; ++j) {
      grad.b1[j] += dz[j];
      for (std::size_t i = 0; i < f; ++i) grad.w1(j, i) += dz[j] * p.fisher[i];
    }
  }
  for (std::size_t i = 0; i < grad.w1.data().size(); ++i) grad.w1.data()[i] += 2.0 * l2_reg * net.w1.data()[i];
  for (std::size_t i = 0; i < grad.w2.data().size(); ++i) grad.w2.data()[i] += 2.0 * l2_reg * net.w2.data()[i];
  return loss + penalty(net, l2_reg);
}

}  // namespace reference
}  // namespace tagforge::kernels
