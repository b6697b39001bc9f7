#include "tagforge/survey.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <filesystem>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "tagforge/common.hpp"

namespace tagforge {

namespace {

nlohmann::ordered_json video_to_json(const StoreVideo& v) {
  nlohmann::ordered_json j;
  j["video_id"] = v.video_id;
  j["media_url"] = v.media_url;
  j["class_stem"] = v.class_stem;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& s : v.suggestions) {
    arr.push_back({{"rank", s.rank}, {"surface", s.surface}, {"stem", s.stem}, {"distance", s.distance}});
  }
  j["suggestions"] = std::move(arr);
  return j;
}

StoreVideo video_from_json(const nlohmann::json& j, const std::string& where) {
  try {
    StoreVideo v;
    v.video_id = j.at("video_id").get<std::string>();
    v.media_url = j.at("media_url").get<std::string>();
    v.class_stem = j.at("class_stem").get<std::string>();
    for (const auto& s : j.at("suggestions")) {
      v.suggestions.push_back({s.at("rank").get<std::size_t>(), s.at("stem").get<std::string>(),
                               s.at("surface").get<std::string>(), s.at("distance").get<double>()});
    }
    if (v.video_id.empty()) throw DataError(where + ": empty video_id");
    return v;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + ": malformed store entry (" + e.what() + ")");
  }
}

void append_durably(const std::string& path, const std::string& line) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw DataError(path + ": cannot open marks log: " + std::strerror(errno));
  std::size_t written = 0;
  while (written < line.size()) {
    const ssize_t n = ::write(fd, line.data() + written, line.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      throw DataError(path + ": write failed: " + std::strerror(errno));
    }
    written += static_cast<std::size_t>(n);
  }
  const int rc = ::fsync(fd);
  ::close(fd);
  if (rc != 0) throw DataError(path + ": fsync failed");
}

const char* kFallbackPage = R"(<!doctype html>
<html><head><meta charset="utf-8"><title>tagforge survey</title></head>
<body><h1>tagforge survey service</h1>
<p>No annotator UI bundle is mounted. Start the server with <code>--ui DIR</code>.</p>
<ul><li>GET /api/next?user=ID</li><li>POST /api/mark</li><li>GET /api/report</li></ul>
</body></html>
)";

}  // namespace

void write_survey_store(const std::vector<StoreVideo>& videos, std::size_t k, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::string lines;
  for (const auto& v : videos) lines += video_to_json(v).dump() + "\n";
  write_file_atomic(dir + "/videos.jsonl", lines);
  nlohmann::ordered_json meta;
  meta["version"] = 1;
  meta["k"] = k;
  write_file_atomic(dir + "/meta.json", meta.dump() + "\n");
}

SurveyStore::SurveyStore(std::vector<StoreVideo> videos, std::size_t k, std::string marks_path)
    : videos_(std::move(videos)), k_(k), marks_path_(std::move(marks_path)) {
  std::sort(videos_.begin(), videos_.end(), [](const StoreVideo& a, const StoreVideo& b) { return a.video_id < b.video_id; });
  for (std::size_t i = 0; i < videos_.size(); ++i) {
    if (!index_.emplace(videos_[i].video_id, i).second) throw DataError("store: duplicate video '" + videos_[i].video_id + "'");
    if (videos_[i].suggestions.size() != k_) {
      throw DataError("store: video '" + videos_[i].video_id + "' has " + std::to_string(videos_[i].suggestions.size()) +
                      " suggestions, expected " + std::to_string(k_));
    }
  }
}

SurveyStore::SurveyStore(SurveyStore&& other) noexcept
    : videos_(std::move(other.videos_)),
      index_(std::move(other.index_)),
      k_(other.k_),
      marks_path_(std::move(other.marks_path_)),
      marks_(std::move(other.marks_)),
      marked_(std::move(other.marked_)) {}

SurveyStore SurveyStore::open(const std::string& store_dir, const std::string& marks_path) {
  const std::string meta_path = store_dir + "/meta.json";
  std::size_t k = 0;
  try {
    k = nlohmann::json::parse(read_file(meta_path)).at("k").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(meta_path + ": malformed store metadata");
  }
  const std::string videos_path = store_dir + "/videos.jsonl";
  std::vector<StoreVideo> videos;
  {
    std::istringstream in(read_file(videos_path));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const std::string where = videos_path + ":" + std::to_string(line_no);
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error&) {
        throw DataError(where + ": invalid JSON");
      }
      videos.push_back(video_from_json(j, where));
    }
  }
  SurveyStore store(std::move(videos), k, marks_path);

  // Replay. A final line without its newline is a torn write from a crash
  // and was never acknowledged.
  if (std::filesystem::exists(marks_path)) {
    const std::string text = read_file(marks_path);
    std::size_t start = 0;
    std::size_t line_no = 0;
    while (start < text.size()) {
      const std::size_t end = text.find('\n', start);
      if (end == std::string::npos) break;
      ++line_no;
      const std::string line = text.substr(start, end - start);
      start = end + 1;
      if (line.empty()) continue;
      RelevanceMark m = parse_mark(line, marks_path + ":" + std::to_string(line_no));
      store.marked_[m.user_id][m.video_id] = true;
      store.marks_.push_back(std::move(m));
    }
  }
  return store;
}

std::vector<std::string> SurveyStore::presentation_order(const std::string& user_id) const {
  std::vector<std::string> order;
  order.reserve(videos_.size());
  for (const auto& v : videos_) order.push_back(v.video_id);
  Rng rng(fnv1a64(user_id));
  rng.shuffle(order);
  return order;
}

std::optional<StoreVideo> SurveyStore::get_next(const std::string& user_id) const {
  if (user_id.empty()) throw InvalidArgument("get_next: empty user id");
  std::shared_lock lock(mutex_);
  const auto user = marked_.find(user_id);
  for (const auto& id : presentation_order(user_id)) {
    if (user == marked_.end() || !user->second.contains(id)) return videos_[index_.at(id)];
  }
  return std::nullopt;
}

std::size_t SurveyStore::marked_count(const std::string& user_id) const {
  std::shared_lock lock(mutex_);
  const auto it = marked_.find(user_id);
  return it == marked_.end() ? 0 : it->second.size();
}

std::size_t SurveyStore::mark_count() const {
  std::shared_lock lock(mutex_);
  return marks_.size();
}

MarkResult SurveyStore::post_mark(const RelevanceMark& mark) {
  if (mark.user_id.empty()) return {false, "missing user_id"};
  const auto it = index_.find(mark.video_id);
  if (it == index_.end()) return {false, "unknown video"};
  const auto& video = videos_[it->second];
  std::vector<std::string> served;
  for (const auto& s : video.suggestions) served.push_back(s.stem);
  if (mark.shown_stems != served) return {false, "shown list does not match served suggestions"};
  const std::set<std::string> shown(served.begin(), served.end());
  std::set<std::string> selected;
  for (const auto& s : mark.selected_stems) {
    if (!shown.contains(s)) return {false, "unknown selection"};
    if (!selected.insert(s).second) return {false, "duplicate selection"};
  }

  std::unique_lock lock(mutex_);
  auto& user = marked_[mark.user_id];
  if (user.contains(mark.video_id)) return {false, "already marked"};
  append_durably(marks_path_, mark_to_json_line(mark));
  user[mark.video_id] = true;
  marks_.push_back(mark);
  return {true, {}};
}

std::map<std::string, std::string> SurveyStore::labels() const {
  std::map<std::string, std::string> out;
  for (const auto& v : videos_) out.emplace(v.video_id, v.class_stem);
  return out;
}

RelevanceReport SurveyStore::report() const {
  std::shared_lock lock(mutex_);
  return aggregate_relevance(marks_, labels(), k_);
}

std::string SurveyStore::next_json(const std::string& user_id) const {
  nlohmann::ordered_json j;
  const auto next = get_next(user_id);
  if (!next) {
    j["done"] = true;
    j["marked"] = marked_count(user_id);
    j["total"] = videos_.size();
    return j.dump();
  }
  j["done"] = false;
  j["video_id"] = next->video_id;
  j["media_url"] = next->media_url;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& s : next->suggestions) arr.push_back({{"rank", s.rank}, {"surface", s.surface}, {"stem", s.stem}});
  j["suggestions"] = std::move(arr);
  j["marked"] = marked_count(user_id);
  j["total"] = videos_.size();
  return j.dump();
}

std::string SurveyStore::mark_json(const std::string& body) {
  nlohmann::ordered_json j;
  MarkResult result;
  try {
    result = post_mark(parse_mark(body, "request"));
  } catch (const DataError& e) {
    result = {false, std::string("malformed mark: ") + e.what()};
  }
  if (result.accepted) {
    j["status"] = "accepted";
  } else {
    j["status"] = "rejected";
    j["reason"] = result.reason;
  }
  return j.dump();
}

std::string SurveyStore::report_json() const { return report_to_json(report()); }

struct SurveyServer::Impl {
  Impl(SurveyStore& s, std::string ui) : store(s), ui_dir(std::move(ui)) {}
  SurveyStore& store;
  std::string ui_dir;
  httplib::Server server;
  std::thread thread;
};

SurveyServer::SurveyServer(SurveyStore& store, std::string ui_dir)
    : impl_(std::make_unique<Impl>(store, std::move(ui_dir))) {
  auto& srv = impl_->server;
  SurveyStore* st = &impl_->store;
  srv.Get("/api/next", [st](const httplib::Request& req, httplib::Response& res) {
    const std::string user = req.get_param_value("user");
    if (user.empty()) {
      res.status = 400;
      res.set_content(R"({"error":"missing user parameter"})", "application/json");
      return;
    }
    res.set_content(st->next_json(user), "application/json");
  });
  srv.Post("/api/mark", [st](const httplib::Request& req, httplib::Response& res) {
    res.set_content(st->mark_json(req.body), "application/json");
  });
  srv.Get("/api/report", [st](const httplib::Request&, httplib::Response& res) {
    res.set_content(st->report_json(), "application/json");
  });
  if (!impl_->ui_dir.empty() && std::filesystem::is_directory(impl_->ui_dir)) {
    srv.set_mount_point("/", impl_->ui_dir);
  } else {
    srv.Get("/", [](const httplib::Request&, httplib::Response& res) { res.set_content(kFallbackPage, "text/html"); });
  }
}

SurveyServer::~SurveyServer() { stop(); }

int SurveyServer::start(const std::string& host, int port) {
  auto& srv = impl_->server;
  int bound = port;
  if (port == 0) {
    bound = srv.bind_to_any_port(host);
  } else if (!srv.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw DataError("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([&srv] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  return bound;
}

void SurveyServer::listen(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw DataError("cannot listen on " + host + ":" + std::to_string(port));
}

void SurveyServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace tagforge
