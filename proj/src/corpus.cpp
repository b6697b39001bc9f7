#include "tagforge/corpus.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <unicode/normalizer2.h>
#include <unicode/unistr.h>

#include "json.hpp"
#include "tagforge/common.hpp"
#include "tagforge/porter.hpp"

namespace tagforge {

namespace {

std::string nfc(std::string_view utf8) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* normalizer = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) return std::string(utf8);
  const icu::UnicodeString in = icu::UnicodeString::fromUTF8(
      icu::StringPiece(utf8.data(), static_cast<int32_t>(utf8.size())));
  const icu::UnicodeString out = normalizer->normalize(in, status);
  if (U_FAILURE(status)) return std::string(utf8);
  std::string result;
  out.toUTF8String(result);
  return result;
}

bool by_count_then_name(const VocabEntry& a, const VocabEntry& b) {
  if (a.count != b.count) return a.count > b.count;
  return a.stem < b.stem;
}

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      return out;
    }
    out.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::uint64_t parse_count(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": invalid count '" + s + "'");
  }
}

}  // namespace

std::optional<NormalizedTag> normalize_tag(std::string_view raw) {
  const std::string composed = nfc(raw);
  std::string surface;
  bool alphabetic = true;
  for (unsigned char c : composed) {
    if (c >= 'A' && c <= 'Z') {
      surface.push_back(static_cast<char>(c - 'A' + 'a'));
    } else if (c >= 'a' && c <= 'z') {
      surface.push_back(static_cast<char>(c));
    } else if (c >= '0' && c <= '9') {
      surface.push_back(static_cast<char>(c));
      alphabetic = false;
    }
  }
  if (surface.empty()) return std::nullopt;
  std::string stem = alphabetic ? porter_stem(surface) : surface;
  // A handful of very short words ("s", "is") lose every letter in step 1a.
  if (stem.empty()) stem = surface;
  return NormalizedTag{std::move(surface), std::move(stem)};
}

Vocabulary::Vocabulary(std::vector<VocabEntry> entries, std::uint64_t min_count)
    : entries_(std::move(entries)), min_count_(min_count) {
  std::sort(entries_.begin(), entries_.end(), by_count_then_name);
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (!index_.emplace(entries_[i].stem, i).second) {
      throw InvalidArgument("duplicate vocabulary stem '" + entries_[i].stem + "'");
    }
  }
}

std::optional<std::size_t> Vocabulary::index_of(std::string_view stem) const {
  const auto it = index_.find(std::string(stem));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::uint64_t Vocabulary::total_count() const {
  return std::accumulate(entries_.begin(), entries_.end(), std::uint64_t{0},
                         [](std::uint64_t acc, const VocabEntry& e) { return acc + e.count; });
}

void DestemMap::add(const std::string& stem, const std::string& surface, std::uint64_t count) {
  auto& list = entries_[stem];
  for (auto& sc : list) {
    if (sc.surface == surface) {
      sc.count += count;
      return;
    }
  }
  list.push_back({surface, count});
}

void DestemMap::finalize() {
  for (auto& [stem, list] : entries_) {
    std::sort(list.begin(), list.end(), [](const SurfaceCount& a, const SurfaceCount& b) {
      if (a.count != b.count) return a.count > b.count;
      return a.surface < b.surface;
    });
  }
}

const std::vector<SurfaceCount>* DestemMap::find(std::string_view stem) const {
  const auto it = entries_.find(stem);
  return it == entries_.end() ? nullptr : &it->second;
}

std::string destem(std::string_view stem, const DestemMap& map) {
  const auto* list = map.find(stem);
  if (list == nullptr || list->empty()) return std::string(stem);
  // Lists are kept sorted, but a map built without finalize() must still
  // yield the max-count / lexicographically-first surface.
  const SurfaceCount* best = &list->front();
  for (const auto& sc : *list) {
    if (sc.count > best->count || (sc.count == best->count && sc.surface < best->surface)) best = &sc;
  }
  return best->surface;
}

std::size_t Corpus::trainable_count() const {
  return static_cast<std::size_t>(
      std::count_if(sentences.begin(), sentences.end(), [](const HashTagSentence& s) { return s.trainable; }));
}

CorpusBuild build_corpus(const std::vector<TagRecord>& records, std::uint64_t min_count) {
  if (min_count < 1) throw InvalidArgument("min_count must be >= 1");
  CorpusBuild out;
  auto& diag = out.diagnostics;
  std::map<std::string, std::uint64_t> counts;

  for (const auto& record : records) {
    ++diag.records_read;
    if (record.video_id.empty()) {
      ++diag.malformed_records;
      continue;
    }
    HashTagSentence sentence{record.video_id, {}, false};
    for (const auto& raw : record.raw_tags) {
      auto tag = normalize_tag(raw);
      if (!tag) {
        ++diag.dropped_tags;
        continue;
      }
      ++counts[tag->stem];
      out.corpus.destem.add(tag->stem, tag->surface);
      sentence.stems.push_back(std::move(tag->stem));
    }
    if (sentence.stems.empty()) {
      ++diag.empty_records;
      continue;
    }
    out.corpus.sentences.push_back(std::move(sentence));
  }
  out.corpus.destem.finalize();

  std::vector<VocabEntry> kept;
  for (const auto& [stem, count] : counts) {
    if (count >= min_count) kept.push_back({stem, count});
  }
  out.corpus.vocab = Vocabulary(std::move(kept), min_count);

  for (auto& sentence : out.corpus.sentences) {
    const auto in_vocab = std::count_if(sentence.stems.begin(), sentence.stems.end(),
                                        [&](const std::string& s) { return out.corpus.vocab.contains(s); });
    sentence.trainable = in_vocab >= 2;
  }
  return out;
}

std::vector<TagRecord> parse_tag_records(std::string_view text, const std::string& source_name) {
  std::vector<TagRecord> records;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    const std::string where = source_name + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(where + ": invalid JSON record");
    }
    if (!j.is_object()) throw DataError(where + ": record is not a JSON object");
    TagRecord record;
    if (auto it = j.find("video_id"); it != j.end() && it->is_string()) record.video_id = it->get<std::string>();
    if (auto it = j.find("tags"); it != j.end()) {
      if (!it->is_array()) throw DataError(where + ": \"tags\" must be an array");
      for (const auto& t : *it) {
        if (!t.is_string()) throw DataError(where + ": tag entries must be strings");
        record.raw_tags.push_back(t.get<std::string>());
      }
    }
    records.push_back(std::move(record));
  }
  return records;
}

std::vector<TagRecord> read_tag_records(const std::string& path) {
  return parse_tag_records(read_file(path), path);
}

std::string serialize_sentences(const Corpus& corpus) {
  std::string out;
  for (const auto& s : corpus.sentences) {
    out += s.video_id;
    for (const auto& stem : s.stems) {
      out += ' ';
      out += stem;
    }
    out += '\n';
  }
  return out;
}

std::string serialize_vocab(const Vocabulary& vocab) {
  std::string out;
  for (const auto& e : vocab.entries()) {
    out += e.stem + '\t' + std::to_string(e.count) + '\n';
  }
  return out;
}

std::string serialize_destem(const DestemMap& map) {
  std::string out;
  for (const auto& [stem, list] : map.entries()) {
    for (const auto& sc : list) out += stem + '\t' + sc.surface + '\t' + std::to_string(sc.count) + '\n';
  }
  return out;
}

void save_corpus(const Corpus& corpus, const std::string& dir) {
  std::filesystem::create_directories(dir);
  write_file_atomic(dir + "/sentences.txt", serialize_sentences(corpus));
  write_file_atomic(dir + "/vocab.tsv", serialize_vocab(corpus.vocab));
  write_file_atomic(dir + "/destem.tsv", serialize_destem(corpus.destem));
}

DestemMap load_destem(const std::string& path) {
  DestemMap map;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split(line, '\t');
    const std::string where = path + ":" + std::to_string(line_no);
    if (fields.size() != 3) throw DataError(where + ": expected stem, surface, count");
    map.add(fields[0], fields[1], parse_count(fields[2], where));
  }
  map.finalize();
  return map;
}

Corpus load_corpus(const std::string& dir) {
  Corpus corpus;
  const std::string vocab_path = dir + "/vocab.tsv";
  std::vector<VocabEntry> entries;
  {
    std::istringstream in(read_file(vocab_path));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto fields = split(line, '\t');
      const std::string where = vocab_path + ":" + std::to_string(line_no);
      if (fields.size() != 2) throw DataError(where + ": expected stem TAB count");
      entries.push_back({fields[0], parse_count(fields[1], where)});
    }
  }
  std::uint64_t min_count = 1;
  if (!entries.empty()) {
    min_count = std::min_element(entries.begin(), entries.end(), [](const VocabEntry& a, const VocabEntry& b) {
                  return a.count < b.count;
                })->count;
  }
  corpus.vocab = Vocabulary(std::move(entries), min_count);

  std::istringstream in(read_file(dir + "/sentences.txt"));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto tokens = split(line, ' ');
    HashTagSentence s;
    s.video_id = tokens.front();
    s.stems.assign(tokens.begin() + 1, tokens.end());
    const auto in_vocab = std::count_if(s.stems.begin(), s.stems.end(),
                                        [&](const std::string& t) { return corpus.vocab.contains(t); });
    s.trainable = in_vocab >= 2;
    corpus.sentences.push_back(std::move(s));
  }
  corpus.destem = load_destem(dir + "/destem.tsv");
  return corpus;
}

}  // namespace tagforge
