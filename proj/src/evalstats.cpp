#include "tagforge/evalstats.hpp"

#include <filesystem>
#include <set>
#include <sstream>

#include "json.hpp"
#include "tagforge/common.hpp"

namespace tagforge {

namespace {

std::string describe(const RelevanceMark& m, std::size_t index) {
  return "mark #" + std::to_string(index + 1) + " (video '" + m.video_id + "', user '" + m.user_id + "')";
}

std::vector<std::string> string_array(const nlohmann::json& j, const char* key, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_array()) throw DataError(where + ": \"" + key + "\" must be an array");
  std::vector<std::string> out;
  for (const auto& v : *it) {
    if (!v.is_string()) throw DataError(where + ": \"" + key + "\" entries must be strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace

RelevanceReport aggregate_relevance(const std::vector<RelevanceMark>& marks,
                                    const std::map<std::string, std::string>& labels, std::size_t k) {
  struct ClassAcc {
    std::uint64_t selected_total = 0;
    std::size_t marks = 0;
    std::map<std::string, bool> video_has_relevant;
  };
  std::map<std::string, ClassAcc> acc;
  std::uint64_t selected_total = 0;

  for (std::size_t i = 0; i < marks.size(); ++i) {
    const auto& m = marks[i];
    const auto label = labels.find(m.video_id);
    if (label == labels.end()) throw InvalidArgument(describe(m, i) + ": video has no class label");
    const std::set<std::string> shown(m.shown_stems.begin(), m.shown_stems.end());
    for (const auto& s : m.selected_stems) {
      if (!shown.contains(s)) throw InvalidArgument(describe(m, i) + ": selected stem '" + s + "' was not shown");
    }
    auto& a = acc[label->second];
    a.selected_total += m.selected_stems.size();
    ++a.marks;
    auto [it, inserted] = a.video_has_relevant.try_emplace(m.video_id, false);
    it->second = it->second || !m.selected_stems.empty();
    selected_total += m.selected_stems.size();
  }

  RelevanceReport report;
  report.k = k;
  report.total_marks = marks.size();
  for (const auto& [cls, a] : acc) {
    ClassReport c;
    c.class_stem = cls;
    c.mark_count = a.marks;
    c.video_count = a.video_has_relevant.size();
    c.avg_relevant = static_cast<double>(a.selected_total) / static_cast<double>(a.marks);
    for (const auto& [video, relevant] : a.video_has_relevant) {
      if (!relevant) ++c.zero_relevant_videos;
    }
    report.total_zero_videos += c.zero_relevant_videos;
    report.classes.push_back(std::move(c));
  }
  report.overall_avg = marks.empty() ? 0.0 : static_cast<double>(selected_total) / static_cast<double>(marks.size());
  return report;
}

RelevanceMark parse_mark(const std::string& json_text, const std::string& where) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error&) {
    throw DataError(where + ": invalid JSON mark");
  }
  if (!j.is_object()) throw DataError(where + ": mark is not a JSON object");
  RelevanceMark m;
  for (const char* key : {"video_id", "user_id"}) {
    const auto it = j.find(key);
    if (it == j.end() || !it->is_string() || it->get<std::string>().empty()) {
      throw DataError(where + ": \"" + key + "\" must be a non-empty string");
    }
  }
  m.video_id = j["video_id"].get<std::string>();
  m.user_id = j["user_id"].get<std::string>();
  m.shown_stems = string_array(j, "shown", where);
  m.selected_stems = string_array(j, "selected", where);
  return m;
}

std::string mark_to_json_line(const RelevanceMark& mark) {
  nlohmann::ordered_json j;
  j["video_id"] = mark.video_id;
  j["user_id"] = mark.user_id;
  j["shown"] = mark.shown_stems;
  j["selected"] = mark.selected_stems;
  return j.dump() + "\n";
}

std::vector<RelevanceMark> read_marks(const std::string& path) {
  std::vector<RelevanceMark> marks;
  if (!std::filesystem::exists(path)) return marks;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    marks.push_back(parse_mark(line, path + ":" + std::to_string(line_no)));
  }
  return marks;
}

std::string report_to_tsv(const RelevanceReport& report) {
  std::string out = "class\tvideo_count\tavg_relevant\tzero_relevant_videos\n";
  for (const auto& c : report.classes) {
    out += c.class_stem + '\t' + std::to_string(c.video_count) + '\t' + format_double(c.avg_relevant) + '\t' +
           std::to_string(c.zero_relevant_videos) + '\n';
  }
  out += "# overall_avg\t" + format_double(report.overall_avg) + "\tk\t" + std::to_string(report.k) +
         "\ttotal_zero_videos\t" + std::to_string(report.total_zero_videos) + "\tmarks\t" +
         std::to_string(report.total_marks) + "\treference_tags_per_video\t" + format_double(kReferenceTagsPerVideo) +
         '\n';
  return out;
}

std::string report_to_json(const RelevanceReport& report) {
  nlohmann::ordered_json j;
  auto classes = nlohmann::ordered_json::array();
  for (const auto& c : report.classes) {
    nlohmann::ordered_json row;
    row["class"] = c.class_stem;
    row["video_count"] = c.video_count;
    row["mark_count"] = c.mark_count;
    row["avg_relevant"] = c.avg_relevant;
    row["zero_relevant_videos"] = c.zero_relevant_videos;
    classes.push_back(std::move(row));
  }
  j["k"] = report.k;
  j["classes"] = std::move(classes);
  j["overall_avg"] = report.overall_avg;
  j["total_zero_videos"] = report.total_zero_videos;
  j["total_marks"] = report.total_marks;
  j["reference_tags_per_video"] = kReferenceTagsPerVideo;
  return j.dump() + "\n";
}

}  // namespace tagforge
