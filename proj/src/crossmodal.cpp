#include "tagforge/crossmodal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "tagforge/kernels.hpp"

namespace tagforge {

namespace {

// Visits every parameter array of a net in a fixed order.
template <typename Net, typename Fn>
void for_each_param(Net& net, Fn&& fn) {
  fn(net.w1.data());
  fn(net.b1);
  fn(net.w2.data());
  fn(net.b2);
}

void momentum_step(EmbeddingNet& net, EmbeddingNet& velocity, const EmbeddingNet& grad, double lr, double momentum) {
  std::vector<std::vector<double>*> p, v;
  std::vector<const std::vector<double>*> g;
  for_each_param(net, [&](auto& a) { p.push_back(&a); });
  for_each_param(velocity, [&](auto& a) { v.push_back(&a); });
  for_each_param(grad, [&](const auto& a) { g.push_back(&a); });
  for (std::size_t t = 0; t < p.size(); ++t) {
    auto& pv = *p[t];
    auto& vv = *v[t];
    const auto& gv = *g[t];
    for (std::size_t i = 0; i < pv.size(); ++i) {
      vv[i] = momentum * vv[i] - lr * gv[i];
      pv[i] += vv[i];
    }
  }
}

void check_pairs(std::span<const TrainPair> pairs) {
  if (pairs.empty()) throw InvalidArgument("train_embedding: no training pairs");
  const std::size_t f = pairs.front().fisher.size();
  const std::size_t d = pairs.front().target.size();
  if (f == 0 || d == 0) throw InvalidArgument("train_embedding: empty fisher or target vector");
  for (const auto& p : pairs) {
    if (p.fisher.size() != f) throw InvalidArgument("train_embedding: inconsistent fisher dimensions");
    if (p.target.size() != d) throw InvalidArgument("train_embedding: inconsistent target dimensions");
  }
}

EmbeddingNet init_net(std::size_t f, std::size_t h, std::size_t d, double scale, std::uint64_t seed) {
  EmbeddingNet net = EmbeddingNet::zeros(f, h, d);
  Rng rng(seed);
  for (auto& w : net.w1.data()) w = scale * rng.normal();
  for (auto& w : net.w2.data()) w = scale * rng.normal();
  return net;
}

Matrix json_matrix(const nlohmann::json& j, std::size_t rows, std::size_t cols, const std::string& what) {
  if (!j.is_array() || j.size() != rows) throw DataError(what + ": expected " + std::to_string(rows) + " rows");
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw DataError(what + ": expected " + std::to_string(cols) + " columns");
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

std::vector<double> json_vector(const nlohmann::json& j, std::size_t n, const std::string& what) {
  if (!j.is_array() || j.size() != n) throw DataError(what + ": expected " + std::to_string(n) + " values");
  return j.get<std::vector<double>>();
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

EmbeddingNet EmbeddingNet::zeros(std::size_t input, std::size_t hidden, std::size_t output) {
  return EmbeddingNet{Matrix(hidden, input), std::vector<double>(hidden, 0.0), Matrix(output, hidden),
                      std::vector<double>(output, 0.0)};
}

LossGrad loss_and_grad(const EmbeddingNet& net, std::span<const TrainPair> batch, double l2_reg) {
  LossGrad out;
  out.loss = kernels::mlp_loss_grad(net, batch, l2_reg, out.grad);
  return out;
}

TrainedNet train_embedding(std::span<const TrainPair> pairs, const NetConfig& cfg) {
  if (cfg.hidden < 1) throw InvalidArgument("train_embedding: hidden must be >= 1");
  if (cfg.max_iters < 1) throw InvalidArgument("train_embedding: max_iters must be >= 1");
  if (!(cfg.lr > 0.0)) throw InvalidArgument("train_embedding: lr must be > 0");
  check_pairs(pairs);

  const std::size_t f = pairs.front().fisher.size();
  const std::size_t d = pairs.front().target.size();
  TrainedNet result;
  auto& trace = result.trace;
  EmbeddingNet net = init_net(f, cfg.hidden, d, cfg.weight_init_scale, cfg.seed);
  EmbeddingNet velocity = EmbeddingNet::zeros(f, cfg.hidden, d);
  EmbeddingNet best = net;
  double best_loss = std::numeric_limits<double>::infinity();
  double lr = cfg.lr;

  const auto check_finite = [](double loss, int iter) {
    if (!std::isfinite(loss)) throw DataError("divergence: non-finite loss at iteration " + std::to_string(iter));
  };
  const auto record_best = [&](const EmbeddingNet& candidate, double loss, int iter) {
    if (loss < best_loss) {
      best_loss = loss;
      best = candidate;
      trace.best_iteration = iter;
    }
  };

  if (cfg.optimizer == Optimizer::full_batch_gd_momentum) {
    EmbeddingNet accepted = net;
    LossGrad accepted_lg;
    bool have_accepted = false;
    for (int iter = 0; iter < cfg.max_iters; ++iter) {
      LossGrad lg = loss_and_grad(net, pairs, cfg.l2_reg);
      check_finite(lg.loss, iter);
      if (have_accepted && lg.loss > accepted_lg.loss) {
        // Overshoot: return to the last accepted iterate with half the step.
        net = accepted;
        lg = accepted_lg;
        lr *= 0.5;
        ++trace.lr_halvings;
        for_each_param(velocity, [](auto& a) { std::fill(a.begin(), a.end(), 0.0); });
      } else {
        accepted = net;
        accepted_lg = lg;
        have_accepted = true;
        trace.accepted_losses.push_back(lg.loss);
        record_best(net, lg.loss, iter);
      }
      momentum_step(net, velocity, lg.grad, lr, cfg.momentum);
    }
    EmbeddingNet scratch;
    const double last = kernels::mlp_loss_grad(net, pairs, cfg.l2_reg, scratch);
    if (std::isfinite(last) && last <= accepted_lg.loss) {
      trace.accepted_losses.push_back(last);
      record_best(net, last, cfg.max_iters);
    }
  } else {
    const std::size_t batch_size = std::max<std::size_t>(1, std::min(cfg.batch_size, pairs.size()));
    Rng rng(derive_seed(cfg.seed, "minibatch"));
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t cursor = order.size();
    std::vector<TrainPair> batch;
    EmbeddingNet scratch;
    for (int iter = 0; iter < cfg.max_iters; ++iter) {
      if (cursor >= order.size()) {
        // Epoch boundary: score the full training set, then reshuffle.
        const double full = kernels::mlp_loss_grad(net, pairs, cfg.l2_reg, scratch);
        check_finite(full, iter);
        trace.accepted_losses.push_back(full);
        record_best(net, full, iter);
        rng.shuffle(order);
        cursor = 0;
      }
      batch.clear();
      for (std::size_t b = 0; b < batch_size && cursor < order.size(); ++b) batch.push_back(pairs[order[cursor++]]);
      const LossGrad lg = loss_and_grad(net, batch, cfg.l2_reg);
      check_finite(lg.loss, iter);
      momentum_step(net, velocity, lg.grad, lr, cfg.momentum);
    }
    const double full = kernels::mlp_loss_grad(net, pairs, cfg.l2_reg, scratch);
    if (std::isfinite(full)) {
      trace.accepted_losses.push_back(full);
      record_best(net, full, cfg.max_iters);
    }
  }
  trace.best_loss = best_loss;
  result.net = std::move(best);
  return result;
}

std::vector<double> project(const EmbeddingNet& net, std::span<const double> fv) {
  if (fv.size() != net.input_dim()) {
    throw InvalidArgument("project: fisher vector length " + std::to_string(fv.size()) + " does not match net input " +
                          std::to_string(net.input_dim()));
  }
  std::vector<double> hidden(net.hidden_dim());
  for (std::size_t j = 0; j < hidden.size(); ++j) hidden[j] = std::tanh(dot(net.w1.row(j), fv) + net.b1[j]);
  std::vector<double> out(net.output_dim());
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = dot(net.w2.row(o), hidden) + net.b2[o];
  return out;
}

double nearest_class_accuracy(const EmbeddingNet& net, std::span<const TrainPair> labeled,
                              const std::map<std::string, std::vector<double>>& class_vectors) {
  for (const auto& p : labeled) {
    if (!class_vectors.contains(p.class_stem)) throw InvalidArgument("no class vector for '" + p.class_stem + "'");
  }
  if (labeled.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& p : labeled) {
    const auto y = project(net, p.fisher);
    const std::string* nearest = nullptr;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [stem, vec] : class_vectors) {
      if (vec.size() != y.size()) throw InvalidArgument("class vector '" + stem + "' has the wrong dimension");
      const double dist = squared_l2(y, vec);
      if (dist < best) {
        best = dist;
        nearest = &stem;
      }
    }
    if (nearest && *nearest == p.class_stem) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labeled.size());
}

void validate_net(const EmbeddingNet& net) {
  const std::size_t h = net.w1.rows();
  if (h == 0 || net.w1.cols() == 0 || net.w2.rows() == 0) throw DataError("net: empty parameters");
  if (net.b1.size() != h || net.w2.cols() != h || net.b2.size() != net.w2.rows()) {
    throw DataError("net: inconsistent parameter shapes");
  }
  bool finite = true;
  for_each_param(net, [&](const auto& a) {
    for (double v : a) finite = finite && std::isfinite(v);
  });
  if (!finite) throw DataError("net: non-finite parameter");
}

std::string net_to_json(const EmbeddingNet& net) {
  nlohmann::json j;
  j["version"] = 1;
  j["f"] = net.input_dim();
  j["h"] = net.hidden_dim();
  j["d"] = net.output_dim();
  j["activation"] = "tanh";
  j["w1"] = matrix_json(net.w1);
  j["b1"] = net.b1;
  j["w2"] = matrix_json(net.w2);
  j["b2"] = net.b2;
  return j.dump() + "\n";
}

EmbeddingNet net_from_json(const std::string& text, const std::string& source_name) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(source_name + ": invalid JSON (" + e.what() + ")");
  }
  try {
    if (j.at("version").get<int>() != 1) throw DataError(source_name + ": unsupported net version");
    const auto f = j.at("f").get<std::size_t>();
    const auto h = j.at("h").get<std::size_t>();
    const auto d = j.at("d").get<std::size_t>();
    EmbeddingNet net{json_matrix(j.at("w1"), h, f, source_name + ": w1"), json_vector(j.at("b1"), h, source_name + ": b1"),
                     json_matrix(j.at("w2"), d, h, source_name + ": w2"), json_vector(j.at("b2"), d, source_name + ": b2")};
    try {
      validate_net(net);
    } catch (const DataError& e) {
      throw DataError(source_name + ": " + e.what());
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(source_name + ": malformed net document (" + e.what() + ")");
  }
}

void save_net(const EmbeddingNet& net, const std::string& path) { write_file_atomic(path, net_to_json(net)); }

EmbeddingNet load_net(const std::string& path) { return net_from_json(read_file(path), path); }

}  // namespace tagforge
