#ifndef HETDIAR_BATCH_ASSEMBLY_HPP
#define HETDIAR_BATCH_ASSEMBLY_HPP

#include "hetdiar/features.hpp"
#include "hetdiar/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace hetdiar {

/// Training utterances grouped by speaker. Speaker index == class index.
struct CorpusIndex {
  std::vector<std::string> speakers;
  std::vector<std::vector<FeatureMatrix>> utterances;

  int num_classes() const { return static_cast<int>(speakers.size()); }
  /// Throws DataError unless N >= 2, every speaker has utterances, and
  /// every utterance has at least `min_frames` frames.
  void validate(Eigen::Index min_frames) const;
  Eigen::Index total_frames() const;
};

enum class OverlapMode { kNone, kAdditiveMix };

struct AssemblyConfig {
  int batch_size = 16;   // B
  int frames = 64;       // T
  int dim = 16;          // D
  int crop_min = 64;
  int crop_max = 64;
  OverlapMode overlap_mode = OverlapMode::kNone;
  double overlap_fraction = 0.25;  // additive-mix only, in (0, 0.5]
  std::uint64_t seed = 0;

  void validate() const;
};

/// A run of consecutive frames attributed to one speaker, or to two
/// speakers at half credit each when `partner >= 0` (additively mixed).
struct SpeakerRun {
  int speaker = 0;
  int frames = 0;
  int partner = -1;

  bool operator==(const SpeakerRun&) const = default;
};

using RowProvenance = std::vector<SpeakerRun>;

struct AssembledBatch {
  int batch_size = 0;
  int frames = 0;
  int dim = 0;
  /// Row b holds frames [b*T, (b+1)*T) of the concatenated stream: a
  /// (B*T) x D matrix, i.e. the (B, T, D) tensor in row-major order.
  Eigen::MatrixXd tensor;
  std::vector<RowProvenance> provenance;
  Eigen::MatrixXd labels;  // B x C
  std::vector<int> crop_lengths;

  Eigen::Block<const Eigen::MatrixXd> row(int b) const { return tensor.middleRows(Eigen::Index(b) * frames, frames); }
};

/// Occupation of one row in half-frame units: credit[c] / (2T) is the
/// soft label of class c. Throws DataError unless the runs tile T frames.
std::vector<std::int64_t> occupation_half_frames(const RowProvenance& row, int frames, int num_classes);

FeatureMatrix crop_region(const FeatureMatrix& utterance, Rng& rng, const AssemblyConfig& cfg);

/// Result of additively mixing the tail of one block into the head of the next.
struct MixResult {
  Eigen::MatrixXd frames;
  std::vector<SpeakerRun> runs;
};

MixResult mix_overlap(const Eigen::MatrixXd& head_block, int head_speaker, const Eigen::MatrixXd& tail_block,
                      int tail_speaker, int row_frames, const AssemblyConfig& cfg);

Eigen::MatrixXd soft_labels(const std::vector<RowProvenance>& provenance, int frames, int num_classes);

AssembledBatch assemble_batch(const CorpusIndex& index, const AssemblyConfig& cfg, Rng& rng);

/// Owns one seeded generator; batches are drawn sequentially.
class BatchAssembler {
 public:
  BatchAssembler(const CorpusIndex& index, AssemblyConfig cfg);
  AssembledBatch next();
  const AssemblyConfig& config() const { return cfg_; }

 private:
  const CorpusIndex* index_;
  AssemblyConfig cfg_;
  Rng rng_;
};

struct AugmentationStats {
  std::int64_t rows_total = 0;
  std::int64_t rows_multispeaker = 0;
  std::int64_t batches_total = 0;
  std::int64_t batches_multispeaker = 0;
  std::map<int, std::int64_t> crop_length_histogram;
  std::map<int, std::int64_t> speakers_per_row_histogram;

  void observe(const AssembledBatch& batch);
  /// Segment-level rate: multi-speaker rows over all rows.
  double rate() const;
  double batch_rate() const;
};

double augmentation_rate(const std::vector<AssembledBatch>& batches);

int distinct_speakers(const RowProvenance& row);

}  // namespace hetdiar

#endif  // HETDIAR_BATCH_ASSEMBLY_HPP
