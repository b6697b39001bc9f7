#include "tagforge/suggest.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_set>

#include "json.hpp"
#include "tagforge/kernels.hpp"

namespace tagforge {

std::vector<Suggestion> rank_tags(std::span<const double> point, const TagVectors& tv, const DestemMap& dm,
                                  const SuggestConfig& cfg) {
  if (cfg.k < 1) throw InvalidArgument("suggest: k must be >= 1");
  if (tv.size() == 0) throw InvalidArgument("suggest: empty vocabulary");
  if (point.size() != tv.dim()) {
    throw InvalidArgument("suggest: projected dimension " + std::to_string(point.size()) +
                          " does not match tag space dimension " + std::to_string(tv.dim()));
  }
  std::vector<double> dist = kernels::squared_distances(tv.input(), point);
  for (auto& d : dist) d = std::sqrt(d);

  std::vector<std::size_t> order;
  order.reserve(tv.size());
  for (std::size_t i = 0; i < tv.size(); ++i) {
    if (!cfg.exclude_stems.contains(tv.stems()[i])) order.push_back(i);
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dist[a] != dist[b]) return dist[a] < dist[b];
    return tv.stems()[a] < tv.stems()[b];
  });

  std::vector<Suggestion> out;
  std::unordered_set<std::string> surfaces;
  for (std::size_t idx : order) {
    if (out.size() == cfg.k) break;
    std::string surface = destem(tv.stems()[idx], dm);
    if (cfg.collapse_to_surface && !surfaces.insert(surface).second) continue;
    out.push_back({out.size() + 1, tv.stems()[idx], std::move(surface), dist[idx]});
  }
  return out;
}

std::vector<Suggestion> suggest_tags(const FisherVector& fv, const EmbeddingNet& net, const TagVectors& tv,
                                     const DestemMap& dm, const SuggestConfig& cfg) {
  if (net.output_dim() != tv.dim()) throw InvalidArgument("suggest: net output dimension does not match tag space");
  const auto point = project(net, fv.values);
  return rank_tags(point, tv, dm, cfg);
}

std::string suggestions_to_tsv(const std::vector<Suggestion>& s) {
  std::string out;
  for (const auto& x : s) {
    out += std::to_string(x.rank) + '\t' + x.surface + '\t' + x.stem + '\t' + format_double(x.distance) + '\n';
  }
  return out;
}

std::string suggestions_to_json(const std::vector<Suggestion>& s) {
  auto arr = nlohmann::json::array();
  for (const auto& x : s) {
    arr.push_back({{"rank", x.rank}, {"surface", x.surface}, {"stem", x.stem}, {"distance", x.distance}});
  }
  return arr.dump() + "\n";
}

}  // namespace tagforge
