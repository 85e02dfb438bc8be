#include "hetdiar/binary_io.hpp"
#include "hetdiar/error.hpp"
#include "hetdiar/features.hpp"

#include <cmath>
#include <fstream>

namespace hetdiar {

void write_features(const std::filesystem::path& path, const FeatureMatrix& feats) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  io::write_magic(out, "HDFM");
  io::write_u32(out, static_cast<std::uint32_t>(feats.num_frames()));
  io::write_u32(out, static_cast<std::uint32_t>(feats.dim()));
  io::write_f32(out, static_cast<float>(feats.frame_shift_s));
  for (Eigen::Index t = 0; t < feats.num_frames(); ++t)
    for (Eigen::Index d = 0; d < feats.dim(); ++d) io::write_f32(out, static_cast<float>(feats.frames(t, d)));
}

FeatureMatrix read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing feature file: " + path.string());
  io::expect_magic(in, "HDFM", path.string());
  const std::uint32_t rows = io::read_u32(in);
  const std::uint32_t cols = io::read_u32(in);
  const float shift = io::read_f32(in);
  FeatureMatrix feats;
  // The shift is stored as f32; snap to 0.1 ms so times stay exact.
  feats.frame_shift_s = shift > 0.0f ? std::round(double(shift) * 1e4) / 1e4 : 0.01;
  feats.frames.resize(rows, cols);
  for (std::uint32_t t = 0; t < rows; ++t)
    for (std::uint32_t d = 0; d < cols; ++d) feats.frames(t, d) = io::read_f32(in);
  return feats;
}

}  // namespace hetdiar
