#include "hetdiar/batch_assembly.hpp"

#include "hetdiar/error.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace hetdiar {

void CorpusIndex::validate(Eigen::Index min_frames) const {
  if (speakers.size() < 2) throw DataError("corpus index needs at least 2 speakers");
  if (utterances.size() != speakers.size()) throw DataError("corpus index: utterance lists do not match speakers");
  for (std::size_t s = 0; s < speakers.size(); ++s) {
    if (utterances[s].empty()) throw DataError("speaker " + speakers[s] + " has no utterances");
    for (const auto& u : utterances[s])
      if (u.num_frames() < min_frames)
        throw DataError("speaker " + speakers[s] + " has an utterance shorter than " + std::to_string(min_frames) +
                        " frames");
  }
}

Eigen::Index CorpusIndex::total_frames() const {
  Eigen::Index n = 0;
  for (const auto& list : utterances)
    for (const auto& u : list) n += u.num_frames();
  return n;
}

void AssemblyConfig::validate() const {
  if (batch_size < 1 || frames < 1 || dim < 1) throw UsageError("assembly: B, T and D must be >= 1");
  if (crop_min < 1 || crop_min > crop_max) throw UsageError("assembly: need 1 <= crop_min <= crop_max");
  if (overlap_mode == OverlapMode::kAdditiveMix && !(overlap_fraction > 0.0 && overlap_fraction <= 0.5))
    throw UsageError("assembly: overlap_fraction must be in (0, 0.5]");
}

std::vector<std::int64_t> occupation_half_frames(const RowProvenance& row, int frames, int num_classes) {
  std::vector<std::int64_t> credit(num_classes, 0);
  std::int64_t covered = 0;
  for (const auto& run : row) {
    if (run.frames < 0 || run.speaker < 0 || run.speaker >= num_classes || run.partner >= num_classes)
      throw DataError("provenance run out of range");
    covered += run.frames;
    if (run.partner >= 0) {
      credit[run.speaker] += run.frames;
      credit[run.partner] += run.frames;
    } else {
      credit[run.speaker] += 2 * std::int64_t(run.frames);
    }
  }
  if (covered != frames)
    throw DataError("provenance frame counts sum to " + std::to_string(covered) + ", expected " +
                    std::to_string(frames));
  return credit;
}

Eigen::MatrixXd soft_labels(const std::vector<RowProvenance>& provenance, int frames, int num_classes) {
  Eigen::MatrixXd labels(static_cast<Eigen::Index>(provenance.size()), num_classes);
  const double denom = 2.0 * frames;
  for (std::size_t b = 0; b < provenance.size(); ++b) {
    const auto credit = occupation_half_frames(provenance[b], frames, num_classes);
    for (int c = 0; c < num_classes; ++c) labels(Eigen::Index(b), c) = double(credit[c]) / denom;
  }
  return labels;
}

FeatureMatrix crop_region(const FeatureMatrix& utterance, Rng& rng, const AssemblyConfig& cfg) {
  const Eigen::Index n = utterance.num_frames();
  if (n < cfg.crop_min)
    throw DataError("utterance of " + std::to_string(n) + " frames is shorter than crop_min " +
                    std::to_string(cfg.crop_min));
  const Eigen::Index hi = std::min<Eigen::Index>(cfg.crop_max, n);
  const Eigen::Index len = rng.uniform_int(cfg.crop_min, hi);
  const Eigen::Index start = rng.uniform_int(0, n - len);
  return slice(utterance, start, start + len);
}

namespace {

int overlap_frames_for(const AssemblyConfig& cfg, int row_frames, int head_frames, int tail_frames) {
  const int wanted = static_cast<int>(std::floor(cfg.overlap_fraction * row_frames));
  return std::max(0, std::min({wanted, head_frames, tail_frames}));
}

void push_run(std::vector<SpeakerRun>& runs, SpeakerRun run) {
  if (run.frames <= 0) return;
  if (!runs.empty() && runs.back().speaker == run.speaker && runs.back().partner == run.partner) {
    runs.back().frames += run.frames;
    return;
  }
  runs.push_back(run);
}

}  // namespace

MixResult mix_overlap(const Eigen::MatrixXd& head_block, int head_speaker, const Eigen::MatrixXd& tail_block,
                      int tail_speaker, int row_frames, const AssemblyConfig& cfg) {
  if (cfg.overlap_mode != OverlapMode::kAdditiveMix) throw UsageError("mix_overlap: additive-mix mode is disabled");
  if (!(cfg.overlap_fraction > 0.0 && cfg.overlap_fraction <= 0.5))
    throw UsageError("mix_overlap: overlap fraction must be in (0, 0.5]");
  if (head_block.cols() != tail_block.cols()) throw DataError("mix_overlap: dimension mismatch");
  const int n1 = static_cast<int>(head_block.rows());
  const int n2 = static_cast<int>(tail_block.rows());
  const int ov = overlap_frames_for(cfg, row_frames, n1, n2);

  MixResult out;
  out.frames.resize(n1 + n2 - ov, head_block.cols());
  out.frames.topRows(n1) = head_block;
  out.frames.bottomRows(n2 - ov) = tail_block.bottomRows(n2 - ov);
  out.frames.middleRows(n1 - ov, ov) += tail_block.topRows(ov);
  push_run(out.runs, {head_speaker, n1 - ov, -1});
  push_run(out.runs, {head_speaker, ov, tail_speaker});
  push_run(out.runs, {tail_speaker, n2 - ov, -1});
  return out;
}

AssembledBatch assemble_batch(const CorpusIndex& index, const AssemblyConfig& cfg, Rng& rng) {
  cfg.validate();
  index.validate(cfg.crop_min);
  const Eigen::Index total = Eigen::Index(cfg.batch_size) * cfg.frames;
  if (index.total_frames() < total)
    throw DataError("corpus has " + std::to_string(index.total_frames()) + " frames, fewer than T*B = " +
                    std::to_string(total));
  const bool mix = cfg.overlap_mode == OverlapMode::kAdditiveMix;

  AssembledBatch batch;
  batch.batch_size = cfg.batch_size;
  batch.frames = cfg.frames;
  batch.dim = cfg.dim;
  batch.tensor.resize(total, cfg.dim);

  std::vector<SpeakerRun> stream;  // runs over the concatenated frames
  Eigen::Index pos = 0;
  while (pos < total) {
    const auto speaker = static_cast<int>(rng.uniform_int(0, index.num_classes() - 1));
    const auto& utts = index.utterances[speaker];
    const auto& utt = utts[rng.uniform_int(0, static_cast<std::int64_t>(utts.size()) - 1)];
    if (utt.dim() != cfg.dim) throw DataError("utterance dimension does not match assembly D");
    const FeatureMatrix crop = crop_region(utt, rng, cfg);
    const int len = static_cast<int>(crop.num_frames());
    batch.crop_lengths.push_back(len);

    int ov = 0;
    if (mix && !stream.empty() && stream.back().partner < 0 && stream.back().speaker != speaker)
      ov = std::min(overlap_frames_for(cfg, cfg.frames, stream.back().frames, len), len - 1);
    if (ov > 0) {
      batch.tensor.middleRows(pos - ov, ov) += crop.frames.topRows(ov);
      const int prev = stream.back().speaker;
      stream.back().frames -= ov;
      if (stream.back().frames == 0) stream.pop_back();
      push_run(stream, {prev, ov, speaker});
    }
    const Eigen::Index take = std::min<Eigen::Index>(len - ov, total - pos);
    batch.tensor.middleRows(pos, take) = crop.frames.middleRows(ov, take);
    push_run(stream, {speaker, static_cast<int>(take), -1});
    pos += take;
  }

  // Split the stream runs at row boundaries.
  batch.provenance.assign(cfg.batch_size, {});
  int row = 0, filled = 0;
  for (SpeakerRun run : stream) {
    while (run.frames > 0) {
      const int take = std::min(run.frames, cfg.frames - filled);
      push_run(batch.provenance[row], {run.speaker, take, run.partner});
      run.frames -= take;
      filled += take;
      if (filled == cfg.frames) {
        ++row;
        filled = 0;
      }
    }
  }
  batch.labels = soft_labels(batch.provenance, cfg.frames, index.num_classes());
  return batch;
}

BatchAssembler::BatchAssembler(const CorpusIndex& index, AssemblyConfig cfg)
    : index_(&index), cfg_(std::move(cfg)), rng_(cfg_.seed) {
  cfg_.validate();
  index_->validate(cfg_.crop_min);
}

AssembledBatch BatchAssembler::next() { return assemble_batch(*index_, cfg_, rng_); }

int distinct_speakers(const RowProvenance& row) {
  std::set<int> ids;
  for (const auto& run : row) {
    ids.insert(run.speaker);
    if (run.partner >= 0) ids.insert(run.partner);
  }
  return static_cast<int>(ids.size());
}

void AugmentationStats::observe(const AssembledBatch& batch) {
  bool any = false;
  for (const auto& row : batch.provenance) {
    const int n = distinct_speakers(row);
    ++rows_total;
    ++speakers_per_row_histogram[n];
    if (n >= 2) {
      ++rows_multispeaker;
      any = true;
    }
  }
  for (int len : batch.crop_lengths) ++crop_length_histogram[len];
  ++batches_total;
  if (any) ++batches_multispeaker;
}

double AugmentationStats::rate() const {
  if (rows_total == 0) throw DataError("augmentation rate of an empty batch stream");
  return double(rows_multispeaker) / double(rows_total);
}

double AugmentationStats::batch_rate() const {
  if (batches_total == 0) throw DataError("augmentation rate of an empty batch stream");
  return double(batches_multispeaker) / double(batches_total);
}

double augmentation_rate(const std::vector<AssembledBatch>& batches) {
  AugmentationStats stats;
  for (const auto& b : batches) stats.observe(b);
  return stats.rate();
}

}  // namespace hetdiar
