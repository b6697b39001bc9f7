// Tag ingestion: normalization, stemming, hash-tag sentences, vocabulary and
// the stem -> surface-form (de-stem) map.
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tagforge {

struct TagRecord {
  std::string video_id;
  std::vector<std::string> raw_tags;
};

struct NormalizedTag {
  std::string surface;
  std::string stem;
  bool operator==(const NormalizedTag&) const = default;
};

// Lowercase, strip everything outside [a-z0-9] (after NFC), then Porter-stem
// purely alphabetic surfaces. Returns nullopt when nothing survives.
std::optional<NormalizedTag> normalize_tag(std::string_view raw);

struct HashTagSentence {
  std::string video_id;
  std::vector<std::string> stems;
  bool trainable = false;  // >= 2 in-vocabulary stems
};

struct VocabEntry {
  std::string stem;
  std::uint64_t count = 0;
};

// Ordered by descending count, ties lexicographic; index == position.
class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::vector<VocabEntry> entries, std::uint64_t min_count);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::uint64_t min_count() const { return min_count_; }
  const std::vector<VocabEntry>& entries() const { return entries_; }
  const VocabEntry& at(std::size_t index) const { return entries_.at(index); }
  std::optional<std::size_t> index_of(std::string_view stem) const;
  bool contains(std::string_view stem) const { return index_of(stem).has_value(); }
  std::uint64_t total_count() const;

 private:
  std::vector<VocabEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::uint64_t min_count_ = 1;
};

struct SurfaceCount {
  std::string surface;
  std::uint64_t count = 0;
  bool operator==(const SurfaceCount&) const = default;
};

// stem -> surface forms sorted by descending count, then lexicographic.
class DestemMap {
 public:
  void add(const std::string& stem, const std::string& surface, std::uint64_t count = 1);
  // Re-sorts every candidate list; call after the last add().
  void finalize();

  using Entries = std::map<std::string, std::vector<SurfaceCount>, std::less<>>;

  const Entries& entries() const { return entries_; }
  const std::vector<SurfaceCount>* find(std::string_view stem) const;

 private:
  Entries entries_;
};

// Most frequent surface form of a stem; the stem itself when unknown.
std::string destem(std::string_view stem, const DestemMap& map);

struct Corpus {
  std::vector<HashTagSentence> sentences;
  Vocabulary vocab;
  DestemMap destem;

  std::size_t trainable_count() const;
};

struct CorpusDiagnostics {
  std::size_t records_read = 0;
  std::size_t malformed_records = 0;  // missing video_id
  std::size_t empty_records = 0;      // no tag survived normalization
  std::size_t dropped_tags = 0;
};

struct CorpusBuild {
  Corpus corpus;
  CorpusDiagnostics diagnostics;
};

CorpusBuild build_corpus(const std::vector<TagRecord>& records, std::uint64_t min_count = 5);

// Line-delimited JSON records: {"video_id": "...", "tags": [...]}.
// A record without video_id is returned with an empty id (dropped later);
// unparseable lines throw DataError naming file and line.
std::vector<TagRecord> read_tag_records(const std::string& path);
std::vector<TagRecord> parse_tag_records(std::string_view text, const std::string& source_name);

// Archive directory: sentences.txt, vocab.tsv, destem.tsv.
void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

std::string serialize_sentences(const Corpus& corpus);
std::string serialize_vocab(const Vocabulary& vocab);
std::string serialize_destem(const DestemMap& map);
DestemMap load_destem(const std::string& path);

}  // namespace tagforge
