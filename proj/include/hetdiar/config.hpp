#ifndef HETDIAR_CONFIG_HPP
#define HETDIAR_CONFIG_HPP

#include "hetdiar/batch_assembly.hpp"
#include "hetdiar/clustering.hpp"
#include "hetdiar/embedder.hpp"
#include "hetdiar/metrics.hpp"
#include "hetdiar/synthcorpus.hpp"
#include "hetdiar/vb_reseg.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace hetdiar {

struct FeatureSettings {
  int cmn_window = 0;  // frames; 0 disables mean normalisation
  double segment_window_s = 1.5;
  double segment_overlap = 0.5;
};

struct PldaSettings {
  int rank = 0;  // 0 selects embed_dim / 2
  int iterations = 10;
  double crop_s = 3.0;
  int crops_per_utterance = 2;
};

struct ClusteringSettings {
  std::string mode = "known_k";  // known_k | threshold
  double threshold = 0.0;
  bool calibrate = false;  // calibrate the threshold on dev sessions of training speakers
  int dev_sessions = 6;
  std::string metric = "score";  // score | row_distance
};

struct VbSettings {
  bool enabled = false;
  int ubm_components = 32;
  int ubm_iterations = 20;
  int max_ubm_frames = 60000;
  int rank = 8;
  int eigenvoice_iterations = 10;
  VbParams params;
};

struct ProjectionSettings {
  std::string method = "tsne";  // tsne | pca
  double perplexity = 30.0;
  int iterations = 1000;
  int max_points = 500;
  int kde_resolution = 32;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::string workdir = "work";
  CorpusConfig corpus;
  FeatureSettings features;
  AssemblyConfig assembly;
  EmbedderConfig embedder;
  TrainSchedule training;
  PldaSettings plda;
  ClusteringSettings clustering;
  VbSettings vb;
  ScoringOptions metrics;
  ProjectionSettings projection;

  void validate() const;
};

/// Complete configuration document with every key at its default value
/// (the seed is absent and must be supplied).
nlohmann::json default_config_json();

/// Overlays `doc` on the defaults. Throws UsageError on unknown keys, a
/// missing seed, or invalid values.
PipelineConfig resolve_config(const nlohmann::json& doc);
nlohmann::json to_json(const PipelineConfig& cfg);

/// Sets a dot-path key ("assembly.crop_min") to `value`, parsed as JSON when
/// possible and kept as a string otherwise. Unknown paths are rejected.
void apply_override(nlohmann::json& doc, const std::string& dot_path, const std::string& value);

}  // namespace hetdiar

#endif  // HETDIAR_CONFIG_HPP
