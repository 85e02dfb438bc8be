#ifndef HETDIAR_FEATURES_HPP
#define HETDIAR_FEATURES_HPP

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

namespace hetdiar {

struct AudioSignal {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = 0;

  double duration_s() const { return sample_rate > 0 ? double(samples.size()) / sample_rate : 0.0; }
};

/// Time-major acoustic features: one row per frame.
struct FeatureMatrix {
  Eigen::MatrixXd frames;
  double frame_shift_s = 0.01;
  double frame_length_s = 0.025;

  Eigen::Index num_frames() const { return frames.rows(); }
  Eigen::Index dim() const { return frames.cols(); }
  double duration_s() const { return double(frames.rows()) * frame_shift_s; }
};

/// Half-open [begin_frame, end_frame) window of a session.
struct SegmentSpan {
  std::string session_id;
  double start_s = 0.0;
  double end_s = 0.0;
  Eigen::Index begin_frame = 0;
  Eigen::Index end_frame = 0;

  Eigen::Index num_frames() const { return end_frame - begin_frame; }
};

enum class WindowType { kHamming, kHanning, kPovey, kRectangular };

struct FrameOptions {
  double frame_length_s = 0.025;
  double frame_shift_s = 0.01;
  double preemphasis = 0.97;
  WindowType window = WindowType::kHamming;
  bool remove_dc = true;
  double low_freq = 20.0;
  double high_freq = 0.0;  // <= 0 means Nyquist + high_freq
  double log_floor = 1e-10;
};

AudioSignal load_audio(const std::filesystem::path& path);
/// Writes mono 16-bit PCM; samples are clipped to [-1, 1).
void save_audio(const std::filesystem::path& path, const AudioSignal& signal);

/// Number of frames for n samples: floor((n - L) / H) + 1, or 0 when n < L.
Eigen::Index num_frames(Eigen::Index num_samples, Eigen::Index frame_length, Eigen::Index frame_shift);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular filter weights, n_mels x (fft_size/2 + 1).
Eigen::MatrixXd mel_filter_weights(int n_mels, int fft_size, int sample_rate, double low_freq, double high_freq);

/// Center frequencies (Hz) of the mel filters used by mel_filterbank.
std::vector<double> mel_center_frequencies(int n_mels, int sample_rate, double low_freq, double high_freq);

FeatureMatrix mel_filterbank(const AudioSignal& signal, int n_mels, const FrameOptions& opts = {});

/// Orthonormal DCT-II of log mel energies, first n_ceps coefficients.
/// n_mels defaults to max(23, n_ceps).
FeatureMatrix mfcc(const AudioSignal& signal, int n_ceps, const FrameOptions& opts = {}, int n_mels = 0);

/// Subtracts a per-dimension running mean over a centered window of
/// `window_frames`. Near the edges the window keeps its size and is shifted
/// inside the data, so for T <= window_frames the global mean is removed.
FeatureMatrix sliding_mean_normalize(const FeatureMatrix& feats, int window_frames);

std::vector<SegmentSpan> uniform_segment(const FeatureMatrix& session_feats, double window_s = 1.5,
                                         double overlap_fraction = 0.5,
                                         const std::string& session_id = "");

/// Rows [span.begin_frame, span.end_frame) as a standalone matrix.
FeatureMatrix slice(const FeatureMatrix& feats, Eigen::Index begin, Eigen::Index end);

// HDFM feature dump: "HDFM", u32 T, u32 D, f32 frame shift, then T*D f32.
void write_features(const std::filesystem::path& path, const FeatureMatrix& feats);
FeatureMatrix read_features(const std::filesystem::path& path);

}  // namespace hetdiar

#endif  // HETDIAR_FEATURES_HPP
