// Hash-tag suggestion for a query video: project its Fisher vector into the
// tag space and scan every tag vector by L2 distance. Training videos are
// never consulted.
#pragma once

#include <set>
#include <string>
#include <vector>

#include "tagforge/corpus.hpp"
#include "tagforge/crossmodal.hpp"
#include "tagforge/fisher.hpp"
#include "tagforge/tag2vec.hpp"

namespace tagforge {

struct Suggestion {
  std::size_t rank = 0;  // 1-based
  std::string stem;
  std::string surface;
  double distance = 0.0;
  bool operator==(const Suggestion&) const = default;
};

struct SuggestConfig {
  std::size_t k = 15;
  std::set<std::string, std::less<>> exclude_stems;
  // Drop a stem whose surface form was already suggested under another stem.
  bool collapse_to_surface = true;
};

// Ranks every tag by distance to `point` (ties by stem) after exclusions.
std::vector<Suggestion> rank_tags(std::span<const double> point, const TagVectors& tv, const DestemMap& dm,
                                  const SuggestConfig& cfg);

std::vector<Suggestion> suggest_tags(const FisherVector& fv, const EmbeddingNet& net, const TagVectors& tv,
                                     const DestemMap& dm, const SuggestConfig& cfg = {});

std::string suggestions_to_tsv(const std::vector<Suggestion>& s);
std::string suggestions_to_json(const std::vector<Suggestion>& s);

}  // namespace tagforge
