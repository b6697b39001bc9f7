#include "tagforge/tag2vec.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "tagforge/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tagforge {

namespace {

// log(sigmoid(x)) without overflow.
double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct Encoded {
  std::vector<std::vector<std::uint32_t>> sentences;
  std::uint64_t tokens = 0;
};

Encoded encode_trainable(const Corpus& corpus) {
  Encoded enc;
  for (const auto& s : corpus.sentences) {
    if (!s.trainable) continue;
    std::vector<std::uint32_t> ids;
    for (const auto& stem : s.stems) {
      if (auto idx = corpus.vocab.index_of(stem)) ids.push_back(static_cast<std::uint32_t>(*idx));
    }
    enc.tokens += ids.size();
    enc.sentences.push_back(std::move(ids));
  }
  return enc;
}

struct Model {
  Matrix& in;
  Matrix& out;
  const NegativeSampler& sampler;
  std::size_t negatives;
};

// One positive (center, context) pair plus negatives. Returns the pair loss.
double train_pair(Model& m, std::size_t center, std::size_t context, double lr, Rng& rng, std::vector<double>& grad) {
  const std::size_t dim = m.in.cols();
  auto vin = m.in.row(center);
  std::fill(grad.begin(), grad.end(), 0.0);
  double loss = 0.0;
  for (std::size_t n = 0; n <= m.negatives; ++n) {
    std::size_t target = context;
    double label = 1.0;
    if (n > 0) {
      target = m.sampler.sample(rng);
      if (target == context) continue;
      label = 0.0;
    }
    auto vout = m.out.row(target);
    const double f = dot(vin, vout);
    loss -= label > 0 ? log_sigmoid(f) : log_sigmoid(-f);
    const double g = (label - sigmoid(f)) * lr;
    for (std::size_t j = 0; j < dim; ++j) grad[j] += g * vout[j];
    for (std::size_t j = 0; j < dim; ++j) vout[j] += g * vin[j];
  }
  for (std::size_t j = 0; j < dim; ++j) vin[j] += grad[j];
  return loss;
}

int hex_digit(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

// Hex digits are written byte by byte in little-endian order.
double parse_hex_double(std::string_view s, bool& ok) {
  ok = false;
  if (s.size() != 16) return 0.0;
  std::uint64_t bits = 0;
  for (int byte = 0; byte < 8; ++byte) {
    const int hi = hex_digit(s[2 * byte]);
    const int lo = hex_digit(s[2 * byte + 1]);
    if (hi < 0 || lo < 0) return 0.0;
    bits |= static_cast<std::uint64_t>(hi * 16 + lo) << (8 * byte);
  }
  ok = true;
  return std::bit_cast<double>(bits);
}

std::vector<std::string_view> split_spaces(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && line[i] == ' ') ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

}  // namespace

void T2VConfig::validate() const {
  if (dim < 1) throw InvalidArgument("t2v: dim must be >= 1");
  if (window < 1) throw InvalidArgument("t2v: window must be >= 1");
  if (negatives < 1) throw InvalidArgument("t2v: negatives must be >= 1");
  if (epochs < 1) throw InvalidArgument("t2v: epochs must be >= 1");
  if (!(initial_lr > 0.0)) throw InvalidArgument("t2v: initial_lr must be > 0");
  if (subsample_t < 0.0) throw InvalidArgument("t2v: subsample_t must be >= 0");
  if (workers < 1) throw InvalidArgument("t2v: workers must be >= 1");
}

TagVectors::TagVectors(std::vector<std::string> stems, Matrix input, Matrix context)
    : stems_(std::move(stems)), input_(std::move(input)), context_(std::move(context)) {
  if (input_.rows() != stems_.size()) throw InvalidArgument("TagVectors: row count differs from vocabulary size");
  if (!context_.empty() && (context_.rows() != input_.rows() || context_.cols() != input_.cols())) {
    throw InvalidArgument("TagVectors: context matrix shape differs from input matrix");
  }
  for (std::size_t i = 0; i < stems_.size(); ++i) {
    if (!index_.emplace(stems_[i], i).second) throw InvalidArgument("TagVectors: duplicate stem '" + stems_[i] + "'");
  }
}

std::optional<std::size_t> TagVectors::index_of(std::string_view stem) const {
  const auto it = index_.find(std::string(stem));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t TagVectors::require(std::string_view stem) const {
  if (auto idx = index_of(stem)) return *idx;
  throw InvalidArgument("unknown stem '" + std::string(stem) + "'");
}

NegativeSampler::NegativeSampler(const Vocabulary& vocab, double power) {
  cdf_.reserve(vocab.size());
  double acc = 0.0;
  for (const auto& e : vocab.entries()) {
    acc += std::pow(static_cast<double>(e.count), power);
    cdf_.push_back(acc);
  }
}

std::size_t NegativeSampler::sample(Rng& rng) const {
  const double u = rng.uniform() * cdf_.back();
  const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
}

double NegativeSampler::probability(std::size_t index) const {
  const double lo = index == 0 ? 0.0 : cdf_[index - 1];
  return (cdf_[index] - lo) / cdf_.back();
}

TagVectors train_tag2vec(const Corpus& corpus, const T2VConfig& cfg, T2VTrainStats* stats) {
  cfg.validate();
  const Encoded enc = encode_trainable(corpus);
  if (enc.sentences.empty()) throw DataError("no trainable sentences");
  const std::size_t v = corpus.vocab.size();
  if (v < 2) throw DataError("vocabulary too small for negative sampling");

  const std::size_t dim = cfg.dim;
  Rng init_rng(cfg.seed);
  Matrix in(v, dim);
  for (auto& x : in.data()) x = (init_rng.uniform() - 0.5) / static_cast<double>(dim);
  Matrix out(v, dim, 0.0);

  const NegativeSampler sampler(corpus.vocab);
  std::vector<double> keep(v, 1.0);
  if (cfg.subsample_t > 0.0) {
    const double threshold = cfg.subsample_t * static_cast<double>(corpus.vocab.total_count());
    for (std::size_t i = 0; i < v; ++i) {
      const double f = static_cast<double>(corpus.vocab.at(i).count);
      keep[i] = std::min(1.0, (std::sqrt(f / threshold) + 1.0) * threshold / f);
    }
  }

  const double total = static_cast<double>(enc.tokens) * cfg.epochs;
  T2VTrainStats local;
  std::uint64_t processed = 0;
  Model model{in, out, sampler, cfg.negatives};
  const int workers = cfg.workers;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    std::uint64_t epoch_pairs = 0;
#pragma omp parallel num_threads(workers) reduction(+ : epoch_loss, epoch_pairs) if (workers > 1)
    {
      int tid = 0;
      int team = 1;
#ifdef _OPENMP
      tid = omp_get_thread_num();
      team = omp_get_num_threads();
#endif
      Rng rng(derive_seed(cfg.seed, "t2v-epoch") + static_cast<std::uint64_t>(epoch) * 1000003ULL +
              static_cast<std::uint64_t>(tid));
      std::vector<double> grad(dim);
      std::vector<std::uint32_t> kept;
      for (std::size_t si = static_cast<std::size_t>(tid); si < enc.sentences.size();
           si += static_cast<std::size_t>(team)) {
        const auto& sentence = enc.sentences[si];
        std::uint64_t done;
#pragma omp atomic capture
        done = processed += sentence.size();
        const double progress = std::min(1.0, static_cast<double>(done) / total);
        const double lr = cfg.initial_lr + (cfg.final_lr - cfg.initial_lr) * progress;

        kept.clear();
        for (auto id : sentence) {
          if (keep[id] >= 1.0 || rng.uniform() < keep[id]) kept.push_back(id);
        }
        for (std::size_t i = 0; i < kept.size(); ++i) {
          const std::size_t radius = cfg.window - rng.below(cfg.window);
          const std::size_t lo = i >= radius ? i - radius : 0;
          const std::size_t hi = std::min(kept.size() - 1, i + radius);
          for (std::size_t j = lo; j <= hi; ++j) {
            if (j == i) continue;
            epoch_loss += train_pair(model, kept[i], kept[j], lr, rng, grad);
            ++epoch_pairs;
          }
        }
      }
    }
    local.epoch_mean_loss.push_back(epoch_pairs ? epoch_loss / static_cast<double>(epoch_pairs) : 0.0);
    local.pairs += epoch_pairs;
  }

  for (double x : in.data()) {
    if (!std::isfinite(x)) throw DataError("t2v: training diverged (non-finite vectors)");
  }
  std::vector<std::string> stems;
  stems.reserve(v);
  for (const auto& e : corpus.vocab.entries()) stems.push_back(e.stem);
  if (stats) *stats = std::move(local);
  return TagVectors(std::move(stems), std::move(in), std::move(out));
}

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm2(a);
  const double nb = norm2(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

double similarity(const TagVectors& tv, std::string_view a, std::string_view b) {
  return cosine(tv.vector(a), tv.vector(b));
}

Metric parse_metric(const std::string& name) {
  if (name == "l2") return Metric::l2;
  if (name == "cosine") return Metric::cosine;
  throw InvalidArgument("unknown metric '" + name + "' (l2, cosine)");
}

std::vector<Neighbor> nearest_tags(const TagVectors& tv, const Query& query, std::size_t k, Metric metric,
                                   const std::set<std::string, std::less<>>& exclude) {
  if (k < 1) throw InvalidArgument("nearest_tags: k must be >= 1");
  std::vector<double> point;
  if (const auto* stem = std::get_if<std::string>(&query)) {
    const auto row = tv.vector(*stem);
    point.assign(row.begin(), row.end());
  } else {
    point = std::get<std::vector<double>>(query);
  }
  if (point.size() != tv.dim()) throw InvalidArgument("nearest_tags: query dimension does not match the tag space");

  std::vector<double> scores;
  if (metric == Metric::l2) {
    scores = kernels::squared_distances(tv.input(), point);
    for (auto& s : scores) s = std::sqrt(s);
  } else {
    scores.resize(tv.size());
    for (std::size_t i = 0; i < tv.size(); ++i) scores[i] = cosine(tv.input().row(i), point);
  }

  std::vector<std::size_t> candidates;
  candidates.reserve(tv.size());
  for (std::size_t i = 0; i < tv.size(); ++i) {
    if (!exclude.contains(tv.stems()[i])) candidates.push_back(i);
  }
  const auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return metric == Metric::l2 ? scores[a] < scores[b] : scores[a] > scores[b];
    return tv.stems()[a] < tv.stems()[b];
  };
  const std::size_t n = std::min(k, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(n), candidates.end(), better);
  std::vector<Neighbor> result;
  result.reserve(n);
  for (std::size_t i = 0; i < n; ++i) result.push_back({tv.stems()[candidates[i]], scores[candidates[i]]});
  return result;
}

std::string hex_double(double v) {
  static constexpr char digits[] = "0123456789abcdef";
  const auto bits = std::bit_cast<std::uint64_t>(v);
  std::string out(16, '0');
  for (int byte = 0; byte < 8; ++byte) {
    const auto b = static_cast<unsigned>((bits >> (8 * byte)) & 0xff);
    out[2 * byte] = digits[b >> 4];
    out[2 * byte + 1] = digits[b & 0xf];
  }
  return out;
}

std::string serialize_vectors(const std::vector<std::string>& stems, const Matrix& m) {
  std::string out = "T2V " + std::to_string(stems.size()) + " " + std::to_string(m.cols()) + "\n";
  out.reserve(out.size() + stems.size() * (m.cols() * 17 + 16));
  for (std::size_t i = 0; i < stems.size(); ++i) {
    out += stems[i];
    for (double x : m.row(i)) {
      out += ' ';
      out += hex_double(x);
    }
    out += '\n';
  }
  return out;
}

std::string serialize_vectors(const TagVectors& tv) { return serialize_vectors(tv.stems(), tv.input()); }

TagVectors parse_vectors(std::string_view text, const std::string& source_name) {
  using K = VectorFileErrorKind;
  const auto fail = [&](K kind, const std::string& what) -> VectorFileError {
    return VectorFileError(kind, source_name + ": " + what);
  };
  const std::size_t eol = text.find('\n');
  if (eol == std::string_view::npos) throw fail(K::malformed_header, "malformed header");
  const auto header = split_spaces(text.substr(0, eol));
  std::size_t count = 0, dim = 0;
  try {
    if (header.size() != 3 || header[0] != "T2V") throw std::invalid_argument("header");
    std::size_t used = 0;
    count = std::stoull(std::string(header[1]), &used);
    if (used != header[1].size()) throw std::invalid_argument("count");
    dim = std::stoull(std::string(header[2]), &used);
    if (used != header[2].size() || dim == 0) throw std::invalid_argument("dim");
  } catch (const std::exception&) {
    throw fail(K::malformed_header, "malformed header");
  }

  std::vector<std::string> stems;
  Matrix m(count, dim);
  std::size_t pos = eol + 1;
  std::size_t row = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    const bool terminated = end != std::string_view::npos;
    if (!terminated) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(row + 2);
    if (row >= count) throw fail(K::trailing_data, where + ": more rows than the header declares");
    const auto tokens = split_spaces(line);
    if (tokens.size() != dim + 1) {
      throw fail(K::dimension_mismatch, where + ": expected " + std::to_string(dim) + " values, found " +
                                            std::to_string(tokens.size() - 1));
    }
    if (!terminated) throw fail(K::truncated_payload, "truncated payload");
    stems.emplace_back(tokens[0]);
    for (std::size_t j = 0; j < dim; ++j) {
      bool ok = false;
      m(row, j) = parse_hex_double(tokens[j + 1], ok);
      if (!ok) throw fail(K::malformed_row, where + ": bad hexadecimal double '" + std::string(tokens[j + 1]) + "'");
    }
    ++row;
  }
  if (row < count) throw fail(K::truncated_payload, "truncated payload");
  try {
    return TagVectors(std::move(stems), std::move(m));
  } catch (const InvalidArgument& e) {
    throw fail(K::malformed_row, e.what());
  }
}

void save_vectors(const TagVectors& tv, const std::string& path, bool include_context) {
  write_file_atomic(path, serialize_vectors(tv));
  if (include_context && !tv.context().empty()) write_file_atomic(path + ".ctx", serialize_vectors(tv.stems(), tv.context()));
}

TagVectors load_vectors(const std::string& path) {
  TagVectors tv = parse_vectors(read_file(path), path);
  const std::string ctx_path = path + ".ctx";
  if (std::filesystem::exists(ctx_path)) {
    TagVectors ctx = parse_vectors(read_file(ctx_path), ctx_path);
    if (ctx.stems() != tv.stems() || ctx.dim() != tv.dim()) {
      throw VectorFileError(VectorFileErrorKind::dimension_mismatch, ctx_path + ": context matrix does not match " + path);
    }
    return TagVectors(tv.stems(), tv.input(), ctx.input());
  }
  return tv;
}

}  // namespace tagforge
