#ifndef HETDIAR_SYNTHCORPUS_HPP
#define HETDIAR_SYNTHCORPUS_HPP

#include "hetdiar/batch_assembly.hpp"
#include "hetdiar/features.hpp"
#include "hetdiar/metrics.hpp"
#include "hetdiar/rng.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace hetdiar {

struct SyntheticSpeaker {
  std::string id;
  Eigen::VectorXd profile;      // D
  Eigen::VectorXd variability;  // D, > 0
  std::uint64_t fundamental_seed = 0;
};

struct SpeakerOptions {
  double profile_scale = 1.3;
  double profile_decay = 0.85;  // dimension d has scale profile_scale * decay^d
  double variability = 1.0;
  double variability_jitter = 0.2;  // relative spread of per-dimension scales
  int max_retries = 1000;
};

/// Speaker i draws from substream i of `seed`, so appending speakers never
/// changes earlier ones. Throws DataError when the margin cannot be met.
std::vector<SyntheticSpeaker> generate_speakers(int n, int dim, double margin, std::uint64_t seed,
                                                const SpeakerOptions& opts = {});

/// Speaker-independent content units shared by every speaker of a corpus;
/// each frame adds the vector of the unit active at that time.
struct ContentModel {
  Eigen::MatrixXd codebook;  // units x D, zero column means; empty disables
  double mean_unit_frames = 8.0;

  bool enabled() const { return codebook.rows() > 0; }
};

ContentModel make_content_model(int units, int dim, double scale, double mean_unit_frames, std::uint64_t seed);

/// profile + variability * (5-frame moving average of white noise), plus a
/// content-unit sequence when `content` is enabled.
FeatureMatrix synth_utterance(const SyntheticSpeaker& speaker, double duration_s, Rng& rng,
                              double frame_shift_s = 0.01, const ContentModel& content = {});

struct TurnModel {
  double mean_turn_s = 4.0;
  double min_turn_s = 0.3;
  double pause_prob = 0.0;
  double mean_pause_s = 0.5;
  double silence_level = 0.05;

  void validate() const;
};

struct ScriptTurn {
  std::string speaker_id;
  double start_s = 0.0;
  double end_s = 0.0;
};

struct SessionScript {
  std::vector<ScriptTurn> turns;
  int n_speakers = 0;
};

struct SynthSession {
  std::string session_id;
  FeatureMatrix features;
  SessionScript script;
  DiarizationHypothesis reference;
};

/// Alternating turns; every speaker talks at least once when time allows.
SynthSession synth_session(const std::vector<SyntheticSpeaker>& speakers, double total_s, const TurnModel& turns,
                           Rng& rng, const std::string& session_id = "session", double frame_shift_s = 0.01,
                           const ContentModel& content = {});

/// Band-limited harmonic tones per speaker, for waveform ingestion tests.
AudioSignal synth_waveform(const SyntheticSpeaker& speaker, double duration_s, int sample_rate, Rng& rng);

struct CorpusConfig {
  int train_speakers = 20;
  int eval_speakers = 12;
  int dim = 16;
  double margin = 2.0;
  SpeakerOptions speaker;
  int content_units = 24;
  double content_scale = 1.0;
  double content_unit_frames = 8.0;
  int utterances_per_speaker = 8;
  double utterance_s = 6.0;
  int sessions = 10;
  double session_s = 40.0;
  int min_session_speakers = 2;
  int max_session_speakers = 4;
  TurnModel turns;
  double frame_shift_s = 0.01;

  void validate() const;
};

struct SyntheticCorpus {
  std::vector<SyntheticSpeaker> train_speakers;
  std::vector<SyntheticSpeaker> eval_speakers;  // disjoint from the training set
  ContentModel content;
  CorpusIndex train;
  std::vector<SynthSession> sessions;
};

SyntheticCorpus generate_corpus(const CorpusConfig& cfg, std::uint64_t seed);

/// Writes manifest.json, HDFM dumps and reference RTTM files under `dir`.
void write_corpus(const std::filesystem::path& dir, const SyntheticCorpus& corpus);
SyntheticCorpus read_corpus(const std::filesystem::path& dir);

void to_json(nlohmann::json& j, const SpeakerOptions& o);
void from_json(const nlohmann::json& j, SpeakerOptions& o);
void to_json(nlohmann::json& j, const TurnModel& t);
void from_json(const nlohmann::json& j, TurnModel& t);
void to_json(nlohmann::json& j, const CorpusConfig& c);
void from_json(const nlohmann::json& j, CorpusConfig& c);

}  // namespace hetdiar

#endif  // HETDIAR_SYNTHCORPUS_HPP
