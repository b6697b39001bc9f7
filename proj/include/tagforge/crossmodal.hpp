// Two-layer network mapping Fisher vectors into the tag vector space.
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tagforge/common.hpp"

namespace tagforge {

// y = W2 tanh(W1 x + b1) + b2
struct EmbeddingNet {
  Matrix w1;               // h x F
  std::vector<double> b1;  // h
  Matrix w2;               // d x h
  std::vector<double> b2;  // d

  std::size_t input_dim() const { return w1.cols(); }
  std::size_t hidden_dim() const { return w1.rows(); }
  std::size_t output_dim() const { return w2.rows(); }

  static EmbeddingNet zeros(std::size_t input, std::size_t hidden, std::size_t output);
  bool operator==(const EmbeddingNet&) const = default;
};

struct TrainPair {
  std::vector<double> fisher;
  std::vector<double> target;
  std::string class_stem;
};

enum class Optimizer { full_batch_gd_momentum, minibatch_sgd };

struct NetConfig {
  std::size_t hidden = 600;
  int max_iters = 1000;
  Optimizer optimizer = Optimizer::full_batch_gd_momentum;
  double lr = 1e-2;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  double weight_init_scale = 0.01;
  std::uint64_t seed = 1;
  double l2_reg = 1e-4;
};

struct LossGrad {
  double loss = 0.0;
  EmbeddingNet grad;
};

LossGrad loss_and_grad(const EmbeddingNet& net, std::span<const TrainPair> batch, double l2_reg);

struct TrainTrace {
  std::vector<double> accepted_losses;  // full-batch mode: loss of every accepted iterate
  double best_loss = 0.0;
  int best_iteration = 0;
  int lr_halvings = 0;
};

struct TrainedNet {
  EmbeddingNet net;
  TrainTrace trace;
};

TrainedNet train_embedding(std::span<const TrainPair> pairs, const NetConfig& cfg);

std::vector<double> project(const EmbeddingNet& net, std::span<const double> fv);

// Fraction of pairs whose projection is L2-closest to their own class vector.
double nearest_class_accuracy(const EmbeddingNet& net, std::span<const TrainPair> labeled,
                              const std::map<std::string, std::vector<double>>& class_vectors);

void validate_net(const EmbeddingNet& net);
std::string net_to_json(const EmbeddingNet& net);
EmbeddingNet net_from_json(const std::string& text, const std::string& source_name);
void save_net(const EmbeddingNet& net, const std::string& path);
EmbeddingNet load_net(const std::string& path);

}  // namespace tagforge
