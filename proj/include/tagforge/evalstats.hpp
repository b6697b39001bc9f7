// Aggregation of human relevance marks into per-class survey statistics.
#pragma once

#include <map>
#include <string>
#include <vector>

namespace tagforge {

struct RelevanceMark {
  std::string video_id;
  std::string user_id;
  std::vector<std::string> shown_stems;
  std::vector<std::string> selected_stems;
};

struct ClassReport {
  std::string class_stem;
  double avg_relevant = 0.0;  // mean |selected| over (video, user) marks
  std::size_t zero_relevant_videos = 0;
  std::size_t video_count = 0;
  std::size_t mark_count = 0;
  bool operator==(const ClassReport&) const = default;
};

struct RelevanceReport {
  std::vector<ClassReport> classes;  // sorted by class stem
  double overall_avg = 0.0;
  std::size_t total_zero_videos = 0;
  std::size_t total_marks = 0;
  std::size_t k = 15;
};

// Average number of hash-tags attached to a typical vine in the scraped
// platform statistics; reported for comparison only.
inline constexpr double kReferenceTagsPerVideo = 4.79;

// A video is zero-relevant when every user's selection for it is empty.
// Throws InvalidArgument naming the offending mark for an unlabeled video or
// a selection that is not a subset of the shown list.
RelevanceReport aggregate_relevance(const std::vector<RelevanceMark>& marks,
                                    const std::map<std::string, std::string>& labels, std::size_t k = 15);

// Line-delimited JSON {"video_id","user_id","shown":[...],"selected":[...]}.
RelevanceMark parse_mark(const std::string& json_text, const std::string& where);
std::string mark_to_json_line(const RelevanceMark& mark);
std::vector<RelevanceMark> read_marks(const std::string& path);

std::string report_to_tsv(const RelevanceReport& report);
std::string report_to_json(const RelevanceReport& report);

}  // namespace tagforge
