// Binary per-video files.
//
// Descriptor set `<video_id>.tfds`, little-endian:
//   "TFDS" | u32 version = 1 | u32 n | u32 D | n*D f32, row-major
//
// Fisher vector `<video_id>.fv`, little-endian:
//   "TFFV" | u32 version = 1 | u32 flags (bit 0: degenerate) | u32 F | F f64
#pragma once

#include <map>
#include <string>
#include <vector>

#include "tagforge/fisher.hpp"

namespace tagforge {

std::string encode_descriptor_file(const DescriptorSet& ds);
DescriptorSet decode_descriptor_file(std::string_view bytes, const std::string& video_id, const std::string& source_name);
void write_descriptor_file(const DescriptorSet& ds, const std::string& path);
DescriptorSet read_descriptor_file(const std::string& path);

std::string encode_fisher_file(const FisherVector& fv);
FisherVector decode_fisher_file(std::string_view bytes, const std::string& video_id, const std::string& source_name);
void write_fisher_file(const FisherVector& fv, const std::string& path);
FisherVector read_fisher_file(const std::string& path);

// All files with the given extension in a directory, sorted by filename;
// the video id is the filename stem.
std::vector<std::string> list_files(const std::string& dir, const std::string& extension);
std::vector<DescriptorSet> read_descriptor_dir(const std::string& dir);
std::map<std::string, FisherVector> read_fisher_dir(const std::string& dir);

// Labels manifest: video_id TAB class_stem per line.
std::vector<std::pair<std::string, std::string>> read_labels(const std::string& path);
std::string serialize_labels(const std::vector<std::pair<std::string, std::string>>& labels);

// Row-concatenation of descriptor sets, converted to double.
Matrix pool_descriptors(const std::vector<DescriptorSet>& sets);

}  // namespace tagforge
