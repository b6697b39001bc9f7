// Relevance-survey backend: a fixed store of videos with precomputed
// suggestions, an append-only marks log, and the HTTP API the annotator UI
// talks to.
#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "tagforge/evalstats.hpp"
#include "tagforge/suggest.hpp"

namespace tagforge {

struct StoreVideo {
  std::string video_id;
  std::string media_url;
  std::string class_stem;
  std::vector<Suggestion> suggestions;
};

// Store directory: videos.jsonl (one StoreVideo per line) and meta.json ({"k": ...}).
void write_survey_store(const std::vector<StoreVideo>& videos, std::size_t k, const std::string& dir);

struct MarkResult {
  bool accepted = false;
  std::string reason;
};

class SurveyStore {
 public:
  // Loads the store and replays the marks log (created if absent).
  static SurveyStore open(const std::string& store_dir, const std::string& marks_path);
  SurveyStore(std::vector<StoreVideo> videos, std::size_t k, std::string marks_path);

  SurveyStore(SurveyStore&& other) noexcept;

  // First video in the user's seeded presentation order not yet marked by them.
  std::optional<StoreVideo> get_next(const std::string& user_id) const;
  // Validates, appends to the log and syncs it to disk before returning.
  MarkResult post_mark(const RelevanceMark& mark);
  RelevanceReport report() const;

  // Video ids in the order presented to this user; stable across restarts.
  std::vector<std::string> presentation_order(const std::string& user_id) const;
  std::size_t marked_count(const std::string& user_id) const;
  std::size_t size() const { return videos_.size(); }
  std::size_t mark_count() const;
  std::size_t k() const { return k_; }
  std::map<std::string, std::string> labels() const;

  // Wire documents.
  std::string next_json(const std::string& user_id) const;
  std::string mark_json(const std::string& body);
  std::string report_json() const;

 private:
  std::vector<StoreVideo> videos_;  // sorted by video_id, immutable
  std::map<std::string, std::size_t> index_;
  std::size_t k_ = 15;
  std::string marks_path_;
  mutable std::shared_mutex mutex_;
  std::vector<RelevanceMark> marks_;
  std::map<std::string, std::map<std::string, bool>> marked_;  // user -> video set
};

class SurveyServer {
 public:
  SurveyServer(SurveyStore& store, std::string ui_dir = {});
  ~SurveyServer();
  SurveyServer(const SurveyServer&) = delete;
  SurveyServer& operator=(const SurveyServer&) = delete;

  // Binds and serves on a background thread; port 0 picks a free port.
  int start(const std::string& host, int port);
  // Blocks serving on the calling thread.
  void listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace tagforge
