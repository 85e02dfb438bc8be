#include "hetdiar/features.hpp"

#include "hetdiar/error.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

namespace hetdiar {

namespace {

Eigen::Index round_samples(double seconds, int sample_rate) {
  return static_cast<Eigen::Index>(std::llround(seconds * sample_rate));
}

Eigen::VectorXd analysis_window(WindowType type, Eigen::Index n) {
  Eigen::VectorXd w(n);
  const double denom = n > 1 ? double(n - 1) : 1.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = 2.0 * std::numbers::pi * double(i) / denom;
    switch (type) {
      case WindowType::kHamming: w(i) = 0.54 - 0.46 * std::cos(a); break;
      case WindowType::kHanning: w(i) = 0.5 - 0.5 * std::cos(a); break;
      case WindowType::kPovey: w(i) = std::pow(0.5 - 0.5 * std::cos(a), 0.85); break;
      case WindowType::kRectangular: w(i) = 1.0; break;
    }
  }
  return w;
}

int next_pow2(Eigen::Index n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Power spectra of windowed frames, T x (fft/2 + 1).
Eigen::MatrixXd power_spectra(const AudioSignal& signal, const FrameOptions& opts, int& fft_size) {
  if (signal.sample_rate <= 0) throw DataError("invalid sample rate");
  const Eigen::Index len = round_samples(opts.frame_length_s, signal.sample_rate);
  const Eigen::Index hop = round_samples(opts.frame_shift_s, signal.sample_rate);
  if (len <= 0 || hop <= 0) throw UsageError("frame length and shift must be positive");
  const Eigen::Index count = num_frames(static_cast<Eigen::Index>(signal.samples.size()), len, hop);
  if (count < 1) throw DataError("signal shorter than one frame");

  fft_size = next_pow2(len);
  const Eigen::VectorXd window = analysis_window(opts.window, len);
  Eigen::FFT<double> fft;
  std::vector<double> buf(fft_size);
  std::vector<std::complex<double>> spec;
  Eigen::MatrixXd power(count, fft_size / 2 + 1);
  for (Eigen::Index t = 0; t < count; ++t) {
    const double* src = signal.samples.data() + t * hop;
    Eigen::VectorXd frame = Eigen::Map<const Eigen::VectorXd>(src, len);
    if (opts.remove_dc) frame.array() -= frame.mean();
    if (opts.preemphasis != 0.0) {
      for (Eigen::Index i = len - 1; i > 0; --i) frame(i) -= opts.preemphasis * frame(i - 1);
      frame(0) -= opts.preemphasis * frame(0);
    }
    frame.array() *= window.array();
    std::fill(buf.begin(), buf.end(), 0.0);
    std::copy(frame.data(), frame.data() + len, buf.begin());
    fft.fwd(spec, buf);
    for (int k = 0; k <= fft_size / 2; ++k) power(t, k) = std::norm(spec[k]);
  }
  return power;
}

double resolve_high(double high_freq, int sample_rate) {
  const double nyquist = 0.5 * sample_rate;
  return high_freq > 0.0 ? high_freq : nyquist + high_freq;
}

}  // namespace

Eigen::Index num_frames(Eigen::Index num_samples, Eigen::Index frame_length, Eigen::Index frame_shift) {
  if (num_samples < frame_length || frame_length <= 0 || frame_shift <= 0) return 0;
  return (num_samples - frame_length) / frame_shift + 1;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_center_frequencies(int n_mels, int sample_rate, double low_freq, double high_freq) {
  const double lo = hz_to_mel(low_freq);
  const double hi = hz_to_mel(resolve_high(high_freq, sample_rate));
  const double step = (hi - lo) / (n_mels + 1);
  std::vector<double> centers(n_mels);
  for (int m = 0; m < n_mels; ++m) centers[m] = mel_to_hz(lo + step * (m + 1));
  return centers;
}

Eigen::MatrixXd mel_filter_weights(int n_mels, int fft_size, int sample_rate, double low_freq, double high_freq) {
  const double lo = hz_to_mel(low_freq);
  const double hi = hz_to_mel(resolve_high(high_freq, sample_rate));
  if (hi <= lo) throw UsageError("mel frequency range is empty");
  const double step = (hi - lo) / (n_mels + 1);
  const int bins = fft_size / 2 + 1;
  Eigen::MatrixXd weights = Eigen::MatrixXd::Zero(n_mels, bins);
  for (int m = 0; m < n_mels; ++m) {
    const double left = lo + step * m, center = left + step, right = center + step;
    for (int k = 0; k < bins; ++k) {
      const double mel = hz_to_mel(double(k) * sample_rate / fft_size);
      if (mel > left && mel < right)
        weights(m, k) = mel <= center ? (mel - left) / (center - left) : (right - mel) / (right - center);
    }
  }
  return weights;
}

FeatureMatrix mel_filterbank(const AudioSignal& signal, int n_mels, const FrameOptions& opts) {
  if (n_mels < 1) throw UsageError("n_mels must be >= 1");
  int fft_size = 0;
  const Eigen::MatrixXd power = power_spectra(signal, opts, fft_size);
  const Eigen::MatrixXd weights =
      mel_filter_weights(n_mels, fft_size, signal.sample_rate, opts.low_freq, opts.high_freq);
  FeatureMatrix out;
  out.frame_shift_s = opts.frame_shift_s;
  out.frame_length_s = opts.frame_length_s;
  out.frames = (power * weights.transpose()).array().max(opts.log_floor).log().matrix();
  return out;
}

FeatureMatrix mfcc(const AudioSignal& signal, int n_ceps, const FrameOptions& opts, int n_mels) {
  if (n_ceps < 1) throw UsageError("n_ceps must be >= 1");
  if (n_mels <= 0) n_mels = std::max(23, n_ceps);
  if (n_mels < n_ceps) throw UsageError("n_mels must be >= n_ceps");
  FeatureMatrix fbank = mel_filterbank(signal, n_mels, opts);
  Eigen::MatrixXd dct(n_mels, n_ceps);
  for (int k = 0; k < n_ceps; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / n_mels) : std::sqrt(2.0 / n_mels);
    for (int m = 0; m < n_mels; ++m) dct(m, k) = scale * std::cos(std::numbers::pi * k * (m + 0.5) / n_mels);
  }
  fbank.frames = (fbank.frames * dct).eval();
  return fbank;
}

FeatureMatrix sliding_mean_normalize(const FeatureMatrix& feats, int window_frames) {
  if (window_frames < 1) throw UsageError("window_frames must be >= 1");
  const Eigen::Index rows = feats.num_frames();
  const Eigen::Index win = std::min<Eigen::Index>(window_frames, rows);
  // Prefix sums keep the cost O(T D) regardless of the window.
  Eigen::MatrixXd prefix = Eigen::MatrixXd::Zero(rows + 1, feats.dim());
  for (Eigen::Index t = 0; t < rows; ++t) prefix.row(t + 1) = prefix.row(t) + feats.frames.row(t);
  FeatureMatrix out = feats;
  for (Eigen::Index t = 0; t < rows; ++t) {
    Eigen::Index begin = t - win / 2;
    Eigen::Index end = begin + win;
    if (begin < 0) {
      end -= begin;
      begin = 0;
    }
    if (end > rows) {
      begin -= end - rows;
      end = rows;
    }
    out.frames.row(t) -= (prefix.row(end) - prefix.row(begin)) / double(end - begin);
  }
  return out;
}

std::vector<SegmentSpan> uniform_segment(const FeatureMatrix& session_feats, double window_s,
                                         double overlap_fraction, const std::string& session_id) {
  if (window_s <= 0.0) throw UsageError("segment window must be positive");
  if (overlap_fraction < 0.0 || overlap_fraction >= 1.0) throw UsageError("overlap fraction must be in [0, 1)");
  const Eigen::Index total = session_feats.num_frames();
  if (total < 1) throw DataError("empty session");
  const double shift = session_feats.frame_shift_s;
  const Eigen::Index win = std::max<Eigen::Index>(1, std::llround(window_s / shift));
  const Eigen::Index hop = std::max<Eigen::Index>(1, std::llround(window_s * (1.0 - overlap_fraction) / shift));

  std::vector<SegmentSpan> spans;
  auto push = [&](Eigen::Index b, Eigen::Index e) {
    spans.push_back({session_id, double(b) * shift, double(e) * shift, b, e});
  };
  Eigen::Index start = 0;
  for (; start + win <= total; start += hop) push(start, start + win);
  const Eigen::Index covered = spans.empty() ? 0 : spans.back().end_frame;
  if (covered < total) {
    const Eigen::Index tail_start = spans.empty() ? 0 : start;
    if (spans.empty() || 2 * (total - tail_start) >= win) push(tail_start, total);
  }
  return spans;
}

FeatureMatrix slice(const FeatureMatrix& feats, Eigen::Index begin, Eigen::Index end) {
  if (begin < 0 || end > feats.num_frames() || begin >= end) throw DataError("frame slice out of range");
  FeatureMatrix out;
  out.frame_shift_s = feats.frame_shift_s;
  out.frame_length_s = feats.frame_length_s;
  out.frames = feats.frames.middleRows(begin, end - begin);
  return out;
}

}  // namespace hetdiar
