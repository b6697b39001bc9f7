#include <map>

#include "doctest.h"
#include "support/paths.hpp"
#include "tagforge/common.hpp"
#include "tagforge/corpus.hpp"
#include "tagforge/synth.hpp"

using namespace tagforge;

TEST_CASE("normalize_tag") {
  SUBCASE("stemmed surfaces") {
    CHECK(normalize_tag("fishing") == NormalizedTag{"fishing", "fish"});
    CHECK(normalize_tag("beautifully") == NormalizedTag{"beautifully", "beauti"});
    CHECK(normalize_tag("#FitFluential") == NormalizedTag{"fitfluential", "fitfluenti"});
    CHECK(normalize_tag("#Fishing!!") == NormalizedTag{"fishing", "fish"});
  }
  SUBCASE("nothing left") {
    CHECK_FALSE(normalize_tag("###").has_value());
    CHECK_FALSE(normalize_tag("").has_value());
    CHECK_FALSE(normalize_tag("\xe2\x9d\xa4\xef\xb8\x8f").has_value());  // heart emoji
  }
  SUBCASE("digits block stemming") {
    CHECK(normalize_tag("#Mr315") == NormalizedTag{"mr315", "mr315"});
    CHECK(normalize_tag("like4likes") == NormalizedTag{"like4likes", "like4likes"});
  }
  SUBCASE("non-ascii letters are stripped after NFC") {
    // "cafe" + combining acute accent composes to U+00E9, which is then removed.
    CHECK(normalize_tag("Cafe\xcc\x81") == NormalizedTag{"caf", "caf"});
    CHECK(normalize_tag("Caf\xc3\xa9s") == NormalizedTag{"cafs", "caf"});
  }
  SUBCASE("idempotent on its own surface") {
    for (const char* raw : {"#Fishing", "beautifully", "#Mr315", "Happiness!", "RUNNING", "x"}) {
      const auto first = normalize_tag(raw);
      REQUIRE(first);
      CHECK(normalize_tag(first->surface) == first);
    }
  }
}

TEST_CASE("build_corpus on the fish records") {
  const std::vector<TagRecord> records = {{"v1", {"#Fishing", "fished"}}, {"v2", {"fish"}}};
  const auto built = build_corpus(records, 1);
  const auto& c = built.corpus;
  REQUIRE(c.vocab.size() == 1);
  CHECK(c.vocab.at(0).stem == "fish");
  CHECK(c.vocab.at(0).count == 3);
  REQUIRE(c.sentences.size() == 2);
  CHECK(c.sentences[0].stems == std::vector<std::string>{"fish", "fish"});
  CHECK(c.sentences[1].stems == std::vector<std::string>{"fish"});
  CHECK(c.sentences[0].trainable);
  CHECK_FALSE(c.sentences[1].trainable);
  const auto* forms = c.destem.find("fish");
  REQUIRE(forms);
  // All counts tie at 1, so the order is lexicographic.
  CHECK(*forms == std::vector<SurfaceCount>{{"fish", 1}, {"fished", 1}, {"fishing", 1}});
}

TEST_CASE("build_corpus edge cases") {
  SUBCASE("empty stream") {
    const auto built = build_corpus({}, 5);
    CHECK(built.corpus.sentences.empty());
    CHECK(built.corpus.vocab.empty());
  }
  SUBCASE("below min_count: kept but not trainable") {
    const auto built = build_corpus({{"v1", {"a1b2"}}}, 2);
    CHECK(built.corpus.vocab.empty());
    REQUIRE(built.corpus.sentences.size() == 1);
    CHECK_FALSE(built.corpus.sentences[0].trainable);
  }
  SUBCASE("malformed and empty records are counted") {
    const auto built = build_corpus({{"", {"fish"}}, {"v2", {"###", "!!"}}, {"v3", {"fish", "#"}}}, 1);
    CHECK(built.diagnostics.records_read == 3);
    CHECK(built.diagnostics.malformed_records == 1);
    CHECK(built.diagnostics.empty_records == 1);
    CHECK(built.diagnostics.dropped_tags == 3);
    CHECK(built.corpus.sentences.size() == 1);
  }
  SUBCASE("min_count 0 is rejected") { CHECK_THROWS_AS(build_corpus({}, 0), InvalidArgument); }
}

TEST_CASE("vocabulary order, counts and stemming consistency") {
  TagSynthConfig cfg;
  cfg.sentences = 300;
  cfg.noise_rate = 0.3;
  cfg.variant_rate = 0.4;
  const auto records = synth_tag_records(cfg);
  const auto built = build_corpus(records, 3);
  const auto& c = built.corpus;

  // Brute-force tally of stems.
  std::map<std::string, std::uint64_t> tally;
  std::uint64_t emitted = 0;
  for (const auto& r : records) {
    for (const auto& t : r.raw_tags) {
      if (auto n = normalize_tag(t)) {
        ++tally[n->stem];
        ++emitted;
      }
    }
  }
  std::uint64_t total = 0;
  for (const auto& e : c.vocab.entries()) {
    CHECK(e.count == tally.at(e.stem));
    CHECK(e.count >= 3);
    total += e.count;
  }
  std::uint64_t kept = 0;
  for (const auto& [stem, n] : tally) kept += n >= 3 ? n : 0;
  CHECK(total == kept);
  CHECK(c.vocab.total_count() == total);
  std::uint64_t sentence_tokens = 0;
  for (const auto& s : c.sentences) sentence_tokens += s.stems.size();
  CHECK(sentence_tokens == emitted);

  for (std::size_t i = 1; i < c.vocab.size(); ++i) {
    const auto& a = c.vocab.at(i - 1);
    const auto& b = c.vocab.at(i);
    CHECK((a.count > b.count || (a.count == b.count && a.stem < b.stem)));
    CHECK(c.vocab.index_of(b.stem) == i);
  }
  for (const auto& [stem, forms] : c.destem.entries()) {
    for (const auto& f : forms) {
      CHECK(f.count > 0);
      CHECK(normalize_tag(f.surface)->stem == stem);
    }
  }
}

TEST_CASE("destem") {
  DestemMap dm;
  dm.add("beauti", "beautiful", 40);
  dm.add("beauti", "beauty", 55);
  dm.add("beauti", "beautifully", 5);
  dm.add("fish", "fish", 10);
  dm.add("tie", "tieb", 3);
  dm.add("tie", "tiea", 3);
  dm.finalize();
  CHECK(destem("beauti", dm) == "beauty");
  CHECK(destem("fish", dm) == "fish");
  CHECK(destem("zzzz", dm) == "zzzz");
  CHECK(destem("tie", dm) == "tiea");
}

TEST_CASE("tag record parsing") {
  const auto recs = parse_tag_records(
      "{\"video_id\": \"a\", \"tags\": [\"#X\", \"y\"]}\n\n{\"tags\": [\"z\"]}\n{\"video_id\": \"b\"}\n", "in.jsonl");
  REQUIRE(recs.size() == 3);
  CHECK(recs[0].raw_tags == std::vector<std::string>{"#X", "y"});
  CHECK(recs[1].video_id.empty());
  CHECK(recs[2].raw_tags.empty());
  try {
    parse_tag_records("{\"video_id\": \"a\"}\n{not json\n", "in.jsonl");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("in.jsonl:2") != std::string::npos);
  }
}

TEST_CASE("corpus archive round trip is byte-identical and deterministic") {
  TagSynthConfig cfg;
  cfg.sentences = 200;
  cfg.variant_rate = 0.5;
  cfg.noise_rate = 0.5;
  const auto records = synth_tag_records(cfg);
  const auto a = build_corpus(records, 2).corpus;
  const auto b = build_corpus(records, 2).corpus;
  CHECK(serialize_sentences(a) == serialize_sentences(b));
  CHECK(serialize_vocab(a.vocab) == serialize_vocab(b.vocab));
  CHECK(serialize_destem(a.destem) == serialize_destem(b.destem));

  testing_support::TempDir dir("corpus");
  save_corpus(a, dir.str());
  const auto loaded = load_corpus(dir.str());
  CHECK(serialize_sentences(loaded) == serialize_sentences(a));
  CHECK(serialize_vocab(loaded.vocab) == serialize_vocab(a.vocab));
  CHECK(serialize_destem(loaded.destem) == serialize_destem(a.destem));
  CHECK(loaded.trainable_count() == a.trainable_count());
  // First token of each sentence line is the video id.
  CHECK(read_file(dir / "sentences.txt").rfind("t000000 ", 0) == 0);
}
