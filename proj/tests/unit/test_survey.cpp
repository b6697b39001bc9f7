#include <algorithm>
#include <filesystem>

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"
#include "support/paths.hpp"
#include "tagforge/common.hpp"
#include "tagforge/survey.hpp"

using namespace tagforge;
using testing_support::TempDir;

namespace {

std::vector<StoreVideo> fixture_videos(std::size_t n, std::size_t k) {
  std::vector<StoreVideo> out;
  for (std::size_t v = 0; v < n; ++v) {
    StoreVideo sv;
    sv.video_id = "vid" + std::to_string(v);
    sv.media_url = "media/" + sv.video_id + ".mp4";
    sv.class_stem = v % 2 ? "salsa" : "fish";
    for (std::size_t r = 0; r < k; ++r) {
      sv.suggestions.push_back({r + 1, "s" + std::to_string(r), "surf" + std::to_string(r), 0.1 * static_cast<double>(r)});
    }
    out.push_back(std::move(sv));
  }
  return out;
}

RelevanceMark mark_for(const StoreVideo& v, const std::string& user, std::size_t selected) {
  RelevanceMark m{v.video_id, user, {}, {}};
  for (const auto& s : v.suggestions) m.shown_stems.push_back(s.stem);
  m.selected_stems.assign(m.shown_stems.begin(), m.shown_stems.begin() + static_cast<std::ptrdiff_t>(selected));
  return m;
}

std::string mark_body(const nlohmann::json& next, const std::string& user, std::size_t selected) {
  nlohmann::json body;
  body["video_id"] = next["video_id"];
  body["user_id"] = user;
  std::vector<std::string> shown;
  for (const auto& s : next["suggestions"]) shown.push_back(s["stem"].get<std::string>());
  body["shown"] = shown;
  body["selected"] = std::vector<std::string>(shown.begin(), shown.begin() + static_cast<std::ptrdiff_t>(selected));
  return body.dump();
}

}  // namespace

TEST_CASE("store validation") {
  TempDir dir("store");
  auto videos = fixture_videos(3, 4);
  CHECK_THROWS_AS(SurveyStore(videos, 5, dir / "m.jsonl"), DataError);
  auto dup = videos;
  dup.push_back(videos[0]);
  CHECK_THROWS_AS(SurveyStore(dup, 4, dir / "m.jsonl"), DataError);
}

TEST_CASE("marks are validated, logged and replayed") {
  TempDir dir("store");
  const auto videos = fixture_videos(6, 3);
  write_survey_store(videos, 3, dir / "store");
  const std::string log = dir / "marks.jsonl";
  {
    auto store = SurveyStore::open(dir / "store", log);
    CHECK(store.size() == 6);
    CHECK(store.k() == 3);

    auto m = mark_for(videos[0], "ann", 2);
    CHECK(store.post_mark(m).accepted);
    CHECK(store.post_mark(m).reason == "already marked");

    auto bad = mark_for(videos[1], "", 0);
    CHECK(store.post_mark(bad).reason == "missing user_id");
    bad = mark_for(videos[1], "ann", 0);
    bad.video_id = "nope";
    CHECK(store.post_mark(bad).reason == "unknown video");
    bad = mark_for(videos[1], "ann", 0);
    std::swap(bad.shown_stems[0], bad.shown_stems[1]);
    CHECK(store.post_mark(bad).reason == "shown list does not match served suggestions");
    bad = mark_for(videos[1], "ann", 0);
    bad.selected_stems = {"zzz"};
    CHECK(store.post_mark(bad).reason == "unknown selection");
    bad = mark_for(videos[1], "ann", 0);
    bad.selected_stems = {"s1", "s1"};
    CHECK(store.post_mark(bad).reason == "duplicate selection");

    // An empty selection is a valid answer.
    CHECK(store.post_mark(mark_for(videos[1], "ann", 0)).accepted);
    CHECK(store.post_mark(mark_for(videos[1], "bob", 3)).accepted);
    CHECK(store.mark_count() == 3);
    CHECK(store.marked_count("ann") == 2);
  }
  // Simulate a crash mid-append: the torn line is dropped on replay.
  {
    std::string text = read_file(log);
    text += R"({"video_id":"vid2","user_id":"ann","sho)";
    write_file_atomic(log, text);
  }
  auto store = SurveyStore::open(dir / "store", log);
  CHECK(store.mark_count() == 3);
  CHECK(store.marked_count("ann") == 2);
  CHECK(store.post_mark(mark_for(videos[0], "ann", 1)).reason == "already marked");
  const auto r = store.report();
  CHECK(r.total_marks == 3);
  CHECK(r.overall_avg == doctest::Approx(5.0 / 3.0));
}

TEST_CASE("presentation order is seeded per user and skips marked videos") {
  TempDir dir("order");
  const auto videos = fixture_videos(12, 2);
  SurveyStore store(videos, 2, dir / "m.jsonl");
  const auto ann = store.presentation_order("ann");
  CHECK(ann == store.presentation_order("ann"));
  CHECK(ann != store.presentation_order("bob"));
  auto sorted = ann;
  std::sort(sorted.begin(), sorted.end());
  auto ids = sorted;
  for (std::size_t i = 0; i < videos.size(); ++i) ids[i] = videos[i].video_id;
  std::sort(ids.begin(), ids.end());
  CHECK(sorted == ids);

  // Repeated calls without a mark return the same video.
  CHECK(store.get_next("ann")->video_id == ann[0]);
  CHECK(store.get_next("ann")->video_id == ann[0]);
  const auto first = *store.get_next("ann");
  REQUIRE(store.post_mark(mark_for(first, "ann", 1)).accepted);
  CHECK(store.get_next("ann")->video_id == ann[1]);

  for (std::size_t i = 1; i < ann.size(); ++i) {
    const auto next = *store.get_next("ann");
    REQUIRE(store.post_mark(mark_for(next, "ann", 0)).accepted);
  }
  CHECK_FALSE(store.get_next("ann").has_value());
  CHECK(nlohmann::json::parse(store.next_json("ann"))["done"] == true);
  CHECK_THROWS_AS(store.get_next(""), InvalidArgument);

  SurveyStore reopened = SurveyStore::open([&] {
    write_survey_store(videos, 2, dir / "store");
    return dir / "store";
  }(), dir / "m.jsonl");
  CHECK(reopened.presentation_order("ann") == ann);
  CHECK_FALSE(reopened.get_next("ann").has_value());
}

TEST_CASE("wire documents") {
  TempDir dir("wire");
  const auto videos = fixture_videos(2, 2);
  SurveyStore store(videos, 2, dir / "m.jsonl");
  const auto next = nlohmann::json::parse(store.next_json("u"));
  CHECK(next["done"] == false);
  CHECK(next["marked"] == 0);
  CHECK(next["total"] == 2);
  CHECK(next["suggestions"][0] == nlohmann::json{{"rank", 1}, {"surface", "surf0"}, {"stem", "s0"}});
  CHECK(next["media_url"] == "media/" + next["video_id"].get<std::string>() + ".mp4");

  CHECK(store.mark_json(mark_body(next, "u", 1)) == R"({"status":"accepted"})");
  CHECK(store.mark_json(mark_body(next, "u", 1)) == R"({"status":"rejected","reason":"already marked"})");
  const auto malformed = nlohmann::json::parse(store.mark_json("{not json"));
  CHECK(malformed["status"] == "rejected");
  CHECK(malformed["reason"].get<std::string>().rfind("malformed mark", 0) == 0);
}

TEST_CASE("HTTP endpoints") {
  TempDir dir("http");
  const auto videos = fixture_videos(5, 15);
  write_survey_store(videos, 15, dir / "store");
  const std::string log = dir / "marks.jsonl";
  auto store = SurveyStore::open(dir / "store", log);
  SurveyServer server(store);
  const int port = server.start("127.0.0.1", 0);
  REQUIRE(port > 0);
  httplib::Client cli("127.0.0.1", port);

  auto root = cli.Get("/");
  REQUIRE(root);
  CHECK(root->status == 200);
  CHECK(root->body.find("<html") != std::string::npos);

  auto missing = cli.Get("/api/next");
  REQUIRE(missing);
  CHECK(missing->status == 400);

  const std::vector<std::size_t> picks = {7, 0, 3, 15, 2};
  for (std::size_t i = 0; i < picks.size(); ++i) {
    auto res = cli.Get("/api/next?user=ann");
    REQUIRE(res);
    CHECK(res->status == 200);
    const auto next = nlohmann::json::parse(res->body);
    REQUIRE(next["done"] == false);
    CHECK(next["suggestions"].size() == 15);
    CHECK(next["marked"] == i);
    const auto body = mark_body(next, "ann", picks[i]);
    auto posted = cli.Post("/api/mark", body, "application/json");
    REQUIRE(posted);
    CHECK(posted->body == R"({"status":"accepted"})");
    auto again = cli.Post("/api/mark", body, "application/json");
    REQUIRE(again);
    CHECK(nlohmann::json::parse(again->body)["reason"] == "already marked");
  }
  auto done = cli.Get("/api/next?user=ann");
  REQUIRE(done);
  CHECK(nlohmann::json::parse(done->body)["done"] == true);

  auto report = cli.Get("/api/report");
  REQUIRE(report);
  CHECK(report->status == 200);
  const auto direct = report_to_json(aggregate_relevance(read_marks(log), store.labels(), 15));
  CHECK(report->body == direct);
  CHECK(nlohmann::json::parse(report->body)["overall_avg"] == 27.0 / 5.0);
  server.stop();

  // Restart from disk serves the same report.
  auto reopened = SurveyStore::open(dir / "store", log);
  CHECK(reopened.report_json() == direct);
}

TEST_CASE("UI directory is served at the root") {
  TempDir dir("ui");
  std::filesystem::create_directories(dir / "ui");
  write_file_atomic(dir / "ui/index.html", "<html>annotator</html>");
  SurveyStore store(fixture_videos(1, 1), 1, dir / "m.jsonl");
  SurveyServer server(store, dir / "ui");
  const int port = server.start("127.0.0.1", 0);
  httplib::Client cli("127.0.0.1", port);
  auto res = cli.Get("/");
  REQUIRE(res);
  CHECK(res->body == "<html>annotator</html>");
  auto api = cli.Get("/api/report");
  REQUIRE(api);
  CHECK(api->status == 200);
}
