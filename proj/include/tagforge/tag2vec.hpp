// Skip-gram with negative sampling over hash-tag sentences, and queries on
// the learned space.
#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "tagforge/common.hpp"
#include "tagforge/corpus.hpp"

namespace tagforge {

struct T2VConfig {
  std::size_t dim = 100;
  std::size_t window = 5;     // context radius
  std::size_t negatives = 5;  // noise samples per positive pair
  int epochs = 15;
  double initial_lr = 0.025;
  double final_lr = 1e-4;      // reached linearly at the end of training
  double subsample_t = 1e-4;   // 0 disables frequent-tag subsampling
  std::uint64_t seed = 1;
  // > 1 runs lock-free parallel updates; results then vary run to run.
  int workers = 1;

  void validate() const;
};

class TagVectors {
 public:
  TagVectors() = default;
  TagVectors(std::vector<std::string> stems, Matrix input, Matrix context = {});

  std::size_t size() const { return stems_.size(); }
  std::size_t dim() const { return input_.cols(); }
  const std::vector<std::string>& stems() const { return stems_; }
  const Matrix& input() const { return input_; }
  const Matrix& context() const { return context_; }
  Matrix& mutable_input() { return input_; }

  std::optional<std::size_t> index_of(std::string_view stem) const;
  // Throws InvalidArgument naming the stem when it is not in the vocabulary.
  std::size_t require(std::string_view stem) const;
  std::span<const double> vector(std::string_view stem) const { return input_.row(require(stem)); }

  bool operator==(const TagVectors& other) const {
    return stems_ == other.stems_ && input_ == other.input_ && context_ == other.context_;
  }

 private:
  std::vector<std::string> stems_;
  Matrix input_;
  Matrix context_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Draws vocabulary indices with probability proportional to count^0.75.
class NegativeSampler {
 public:
  explicit NegativeSampler(const Vocabulary& vocab, double power = 0.75);
  std::size_t sample(Rng& rng) const;
  double probability(std::size_t index) const;

 private:
  std::vector<double> cdf_;
};

struct T2VTrainStats {
  std::vector<double> epoch_mean_loss;  // mean SGNS loss per positive pair
  std::uint64_t pairs = 0;
};

TagVectors train_tag2vec(const Corpus& corpus, const T2VConfig& cfg, T2VTrainStats* stats = nullptr);

// Cosine of the two input vectors.
double similarity(const TagVectors& tv, std::string_view a, std::string_view b);
double cosine(std::span<const double> a, std::span<const double> b);

enum class Metric { l2, cosine };
Metric parse_metric(const std::string& name);

struct Neighbor {
  std::string stem;
  double score = 0.0;  // L2 distance, or cosine similarity
  bool operator==(const Neighbor&) const = default;
};

using Query = std::variant<std::string, std::vector<double>>;

// Exhaustive scan. l2: ascending distance; cosine: descending similarity;
// equal scores ordered by stem.
std::vector<Neighbor> nearest_tags(const TagVectors& tv, const Query& query, std::size_t k, Metric metric,
                                   const std::set<std::string, std::less<>>& exclude = {});

enum class VectorFileErrorKind { malformed_header, malformed_row, dimension_mismatch, truncated_payload, trailing_data };

class VectorFileError : public DataError {
 public:
  VectorFileError(VectorFileErrorKind kind, const std::string& message) : DataError(message), kind_(kind) {}
  VectorFileErrorKind kind() const { return kind_; }

 private:
  VectorFileErrorKind kind_;
};

// "T2V <count> <dim>\n" then one line per stem: the stem and `dim` doubles,
// each as 16 hex digits of its little-endian IEEE-754 bytes.
std::string serialize_vectors(const std::vector<std::string>& stems, const Matrix& m);
std::string serialize_vectors(const TagVectors& tv);
TagVectors parse_vectors(std::string_view text, const std::string& source_name);
// Writes path; with include_context the training-side matrix goes to path + ".ctx".
void save_vectors(const TagVectors& tv, const std::string& path, bool include_context = false);
TagVectors load_vectors(const std::string& path);

std::string hex_double(double v);

}  // namespace tagforge
