#ifndef HETDIAR_PIPELINE_HPP
#define HETDIAR_PIPELINE_HPP

#include "hetdiar/config.hpp"
#include "hetdiar/embedder.hpp"
#include "hetdiar/metrics.hpp"
#include "hetdiar/plda.hpp"
#include "hetdiar/synthcorpus.hpp"
#include "hetdiar/vb_reseg.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace hetdiar {

struct TrainedSystem {
  EmbedderModel embedder;
  EmbeddingPreprocessor preprocessor;
  PldaModel plda;
  EigenvoiceModel vb_model;
  double threshold = 0.0;
  nlohmann::json report;
};

/// Features as the system consumes them (sliding mean normalisation when
/// cmn_window > 0).
FeatureMatrix prepare_features(const FeatureMatrix& feats, const FeatureSettings& settings);

TrainedSystem train_system(const PipelineConfig& cfg, const SyntheticCorpus& corpus);

struct EmbeddedSession {
  std::vector<SegmentSpan> spans;
  std::vector<std::pair<double, double>> coverage;  // time each span is responsible for
  Eigen::MatrixXd embeddings;                        // raw, one row per span
};

/// Uniform segmentation of each speech region of `speech` and embedding
/// extraction for every window.
EmbeddedSession embed_session(const TrainedSystem& system, const PipelineConfig& cfg, const FeatureMatrix& feats,
                              const DiarizationHypothesis& speech);

/// Segment labels to intervals; overlapping windows split at the middle of
/// their overlap.
DiarizationHypothesis labels_to_hypothesis(const std::string& session_id, const EmbeddedSession& session,
                                           const std::vector<int>& labels);

struct SessionDiarization {
  std::vector<int> segment_labels;
  DiarizationHypothesis clustered;
  std::optional<DiarizationHypothesis> resegmented;
};

/// segment -> embed -> preprocess -> PLDA scores -> AHC -> optional VB.
SessionDiarization diarize_session(const TrainedSystem& system, const PipelineConfig& cfg, const FeatureMatrix& feats,
                                   const DiarizationHypothesis& speech, std::optional<int> known_k, bool use_vb);

/// Reference speaker with the largest overlap of a time range, or "" when none.
std::string majority_speaker(const DiarizationHypothesis& reference, double start_s, double end_s);

struct CorpusScore {
  nlohmann::json report;
  double der = 0.0;  // total error time over total scored speech
  double mean_jer = 0.0;
};

CorpusScore score_sessions(const std::vector<DiarizationHypothesis>& references,
                           const std::vector<DiarizationHypothesis>& hypotheses, const ScoringOptions& opts);

// Artifacts directory: models/, rttm/, reports/, plots/, corpus/, manifest.json.
class WorkdirLock {
 public:
  explicit WorkdirLock(const std::filesystem::path& root);
  ~WorkdirLock();
  WorkdirLock(const WorkdirLock&) = delete;
  WorkdirLock& operator=(const WorkdirLock&) = delete;

 private:
  std::filesystem::path path_;
};

void save_system(const std::filesystem::path& models_dir, const TrainedSystem& system);
TrainedSystem load_system(const std::filesystem::path& models_dir);

/// Records the command, resolved config, seed and SHA-256 of every artifact.
void write_manifest(const std::filesystem::path& root, const std::string& command, const PipelineConfig& cfg);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

// Commands. Each takes the resolved config, works inside cfg.workdir and
// returns a JSON summary.
nlohmann::json cmd_synth(const PipelineConfig& cfg);
nlohmann::json cmd_train(const PipelineConfig& cfg);
nlohmann::json cmd_embed(const PipelineConfig& cfg);
nlohmann::json cmd_diarize(const PipelineConfig& cfg);
nlohmann::json cmd_score(const PipelineConfig& cfg);
nlohmann::json cmd_score_files(const std::filesystem::path& ref, const std::filesystem::path& hyp,
                               const ScoringOptions& opts);
nlohmann::json cmd_analyze_batches(const PipelineConfig& cfg, int num_batches);
nlohmann::json cmd_project(const PipelineConfig& cfg);

}  // namespace hetdiar

#endif  // HETDIAR_PIPELINE_HPP
