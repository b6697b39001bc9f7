// End-to-end run driven by one TOML config: synth -> corpus -> t2v -> split
// -> gmm -> fv -> embed -> evaluate -> survey store.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tagforge/crossmodal.hpp"
#include "tagforge/fisher.hpp"
#include "tagforge/gmm.hpp"
#include "tagforge/synth.hpp"
#include "tagforge/tag2vec.hpp"

namespace tagforge {

struct PipelineConfig {
  std::uint64_t seed = 1;
  int threads = 1;
  std::string workdir = "tagforge-run";

  // Either synthetic data or existing inputs.
  bool synth = false;
  TagSynthConfig synth_tags;
  DescriptorSynthConfig synth_descriptors;
  std::string tags_path;
  std::string descriptors_dir;
  std::string labels_path;

  std::uint64_t min_count = 5;
  T2VConfig t2v;
  std::size_t gmm_k = 64;
  EmConfig em;
  FisherNorm fv_norm = FisherNorm::ssqrt_l2;
  double train_fraction = 0.8;
  NetConfig net;
  std::size_t suggest_k = 15;
  std::string media_prefix = "media/";
};

// Unknown keys and wrongly typed values throw DataError naming file and line.
PipelineConfig parse_pipeline_config(const std::string& text, const std::string& source_name,
                                     const std::vector<std::string>& overrides = {});
PipelineConfig load_pipeline_config(const std::string& path, const std::vector<std::string>& overrides = {});

struct PipelineResult {
  double train_accuracy = 0.0;
  double heldout_accuracy = 0.0;
  double heldout_hit_rate = 0.0;  // class surface within the top-k suggestions
  std::size_t heldout_videos = 0;
  std::vector<std::string> stages_run;
  std::vector<std::string> stages_skipped;
};

// Stages whose inputs, parameters and seed hash to the recorded value are
// skipped unless force is set.
PipelineResult run_pipeline(const PipelineConfig& cfg, bool force, std::ostream& log);

// FNV-1a over relative names and contents of a file or directory tree.
std::uint64_t content_hash(const std::string& path);

// Stratified split: per class, a seeded shuffle, then round(fraction * n)
// videos (at least one on each side when n >= 2) go to train.
struct Split {
  std::vector<std::pair<std::string, std::string>> train;
  std::vector<std::pair<std::string, std::string>> test;
};
Split split_labels(const std::vector<std::pair<std::string, std::string>>& labels, double train_fraction,
                   std::uint64_t seed);

}  // namespace tagforge
