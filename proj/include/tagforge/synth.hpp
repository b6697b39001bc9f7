// Synthetic stand-ins for the scraped tag corpus and the video descriptors.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tagforge/corpus.hpp"
#include "tagforge/fisher.hpp"

namespace tagforge {

// One topic: each word is a list of surface variants, most common first.
// The topic's class stem is the stem of its first word.
struct TagGroup {
  std::vector<std::vector<std::string>> words;
};

// The first groups come from a built-in themed table; beyond that, or beyond
// its word count, words are generated ("t5w3") and pass through unstemmed.
std::vector<TagGroup> synth_tag_groups(std::size_t groups, std::size_t words_per_group);
std::string class_stem(const TagGroup& group);
std::vector<std::string> synth_class_stems(std::size_t classes);

struct TagSynthConfig {
  std::size_t groups = 5;
  std::size_t words_per_group = 8;
  std::size_t sentences = 2000;
  std::size_t tags_per_sentence = 4;  // distinct words from one group
  double noise_rate = 0.0;            // chance of one extra shared noise tag
  double variant_rate = 0.0;          // chance of a non-primary surface variant
  std::uint64_t seed = 7;
};

std::vector<TagRecord> synth_tag_records(const TagSynthConfig& cfg);
std::string records_to_jsonl(const std::vector<TagRecord>& records);

struct DescriptorSynthConfig {
  std::size_t classes = 5;
  std::size_t per_class = 20;
  std::size_t n = 200;  // descriptors per video
  std::size_t d = 16;
  std::size_t modes_per_class = 3;
  std::size_t shared_modes = 2;
  double class_share = 0.5;  // fraction of descriptors drawn from class modes
  double spread = 3.0;       // std-dev of mode centres
  double video_jitter = 0.3;
  std::uint64_t seed = 7;
};

struct SynthDescriptors {
  std::vector<DescriptorSet> sets;
  std::vector<std::pair<std::string, std::string>> labels;  // video_id, class stem
};

SynthDescriptors synth_descriptors(const DescriptorSynthConfig& cfg);

}  // namespace tagforge
