#include "tagforge/synth.hpp"

#include <algorithm>
#include <cstdio>

#include "json.hpp"
#include "tagforge/common.hpp"

namespace tagforge {

namespace {

using Word = std::vector<std::string>;

// Hand-picked topics whose 48 stems are pairwise distinct.
const std::vector<std::vector<Word>>& themed_groups() {
  static const std::vector<std::vector<Word>> table = {
      {{"basketball", "basketballs"}, {"dunk", "dunking", "dunks"}, {"ballislife"}, {"nba"},
       {"hoops", "hoop"}, {"court", "courts"}, {"jumpshot", "jumpshots"}, {"layup", "layups"}},
      {{"fishing", "fish", "fished"}, {"bass"}, {"lure", "lures"}, {"angler", "anglers"},
       {"catch", "catches"}, {"boat", "boating", "boats"}, {"lake", "lakes"}, {"reel", "reels"}},
      {{"salsa"}, {"dance", "dancing", "dances"}, {"bachata"}, {"latin"}, {"rhythm", "rhythms"},
       {"partner", "partners"}, {"spin", "spinning"}, {"merengue"}},
      {{"yoyo", "yoyos"}, {"trick", "tricks"}, {"string", "strings"}, {"throw", "throwing"},
       {"loop", "loops"}, {"sleeper"}, {"kendama"}, {"skill", "skills"}},
      {{"benchpress", "benchpressing"}, {"armday"}, {"gym"}, {"instafitness"}, {"lift", "lifting", "lifts"},
       {"gains"}, {"muscle", "muscles"}, {"workout", "workouts"}},
      {{"volleyball"}, {"spike", "spiking"}, {"serve", "serving"}, {"net"}, {"beach", "beaches"},
       {"setter"}, {"dig", "digs"}, {"sand"}},
  };
  return table;
}

const std::vector<std::string>& noise_tags() {
  static const std::vector<std::string> tags = {"vine", "lol", "funny", "follow", "like4like", "revine"};
  return tags;
}

std::string generated_word(std::size_t group, std::size_t word) {
  return "t" + std::to_string(group) + "w" + std::to_string(word);
}

}  // namespace

std::vector<TagGroup> synth_tag_groups(std::size_t groups, std::size_t words_per_group) {
  const auto& table = themed_groups();
  std::vector<TagGroup> out(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t w = 0; w < words_per_group; ++w) {
      if (g < table.size() && w < table[g].size()) {
        out[g].words.push_back(table[g][w]);
      } else {
        out[g].words.push_back({generated_word(g, w)});
      }
    }
  }
  return out;
}

std::string class_stem(const TagGroup& group) {
  if (group.words.empty()) throw InvalidArgument("class_stem: empty group");
  const auto n = normalize_tag(group.words.front().front());
  return n ? n->stem : group.words.front().front();
}

std::vector<std::string> synth_class_stems(std::size_t classes) {
  std::vector<std::string> out;
  for (const auto& g : synth_tag_groups(classes, 1)) out.push_back(class_stem(g));
  return out;
}

std::vector<TagRecord> synth_tag_records(const TagSynthConfig& cfg) {
  if (cfg.groups < 1) throw InvalidArgument("synth tags: groups must be >= 1");
  if (cfg.tags_per_sentence < 1 || cfg.tags_per_sentence > cfg.words_per_group) {
    throw InvalidArgument("synth tags: tags per sentence must be in [1, words per group]");
  }
  const auto groups = synth_tag_groups(cfg.groups, cfg.words_per_group);
  Rng rng(cfg.seed);
  std::vector<TagRecord> records;
  records.reserve(cfg.sentences);
  std::vector<std::size_t> idx(cfg.words_per_group);
  for (std::size_t s = 0; s < cfg.sentences; ++s) {
    TagRecord r;
    char id[32];
    std::snprintf(id, sizeof id, "t%06zu", s);
    r.video_id = id;
    const auto& group = groups[rng.below(cfg.groups)];
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    // Partial Fisher-Yates: the first tags_per_sentence slots are a uniform draw.
    for (std::size_t i = 0; i < cfg.tags_per_sentence; ++i) {
      std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
      const Word& word = group.words[idx[i]];
      std::string surface = word.front();
      if (word.size() > 1 && rng.uniform() < cfg.variant_rate) surface = word[1 + rng.below(word.size() - 1)];
      r.raw_tags.push_back("#" + surface);
    }
    if (cfg.noise_rate > 0.0 && rng.uniform() < cfg.noise_rate) {
      const auto& noise = noise_tags();
      r.raw_tags.push_back("#" + noise[rng.below(noise.size())]);
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::string records_to_jsonl(const std::vector<TagRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["video_id"] = r.video_id;
    j["tags"] = r.raw_tags;
    out += j.dump() + "\n";
  }
  return out;
}

SynthDescriptors synth_descriptors(const DescriptorSynthConfig& cfg) {
  if (cfg.classes < 1 || cfg.per_class < 1 || cfg.n < 1 || cfg.d < 1) {
    throw InvalidArgument("synth descriptors: classes, per-class, n and d must be >= 1");
  }
  if (cfg.modes_per_class < 1) throw InvalidArgument("synth descriptors: modes per class must be >= 1");
  Rng rng(cfg.seed);
  auto centre = [&] {
    std::vector<double> c(cfg.d);
    for (auto& v : c) v = cfg.spread * rng.normal();
    return c;
  };
  std::vector<std::vector<double>> shared;
  for (std::size_t m = 0; m < cfg.shared_modes; ++m) shared.push_back(centre());
  std::vector<std::vector<std::vector<double>>> modes(cfg.classes);
  for (auto& cls : modes) {
    for (std::size_t m = 0; m < cfg.modes_per_class; ++m) cls.push_back(centre());
  }

  const auto stems = synth_class_stems(cfg.classes);
  SynthDescriptors out;
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    for (std::size_t v = 0; v < cfg.per_class; ++v) {
      char id[48];
      std::snprintf(id, sizeof id, "c%02zu_v%03zu", c, v);
      std::vector<double> jitter(cfg.d);
      for (auto& j : jitter) j = cfg.video_jitter * rng.normal();
      DescriptorSet ds{id, Matrix(cfg.n, cfg.d)};
      for (std::size_t i = 0; i < cfg.n; ++i) {
        const bool own = shared.empty() || rng.uniform() < cfg.class_share;
        const auto& mu = own ? modes[c][rng.below(modes[c].size())] : shared[rng.below(shared.size())];
        for (std::size_t j = 0; j < cfg.d; ++j) {
          // Descriptors are stored as f32 on disk; round here so in-memory and
          // reloaded sets are identical.
          ds.matrix(i, j) = static_cast<float>(mu[j] + (own ? jitter[j] : 0.0) + rng.normal());
        }
      }
      out.labels.emplace_back(id, stems[c]);
      out.sets.push_back(std::move(ds));
    }
  }
  return out;
}

}  // namespace tagforge
