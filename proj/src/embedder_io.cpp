#include "hetdiar/binary_io.hpp"
#include "hetdiar/embedder.hpp"
#include "hetdiar/error.hpp"

#include <fstream>

namespace hetdiar {

namespace {
constexpr std::uint32_t kEmbedderFormatVersion = 1;
}

void save_embedder(const std::filesystem::path& path, const EmbedderModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  io::write_magic(out, "HDEM");
  io::write_u32(out, kEmbedderFormatVersion);
  io::write_string_block(out, nlohmann::json(model.config()).dump());
  io::write_u32(out, static_cast<std::uint32_t>(model.params().size()));
  for (const auto& p : model.params()) {
    io::write_u32(out, static_cast<std::uint32_t>(p.rank));
    io::write_u32(out, static_cast<std::uint32_t>(p.value.rows()));
    if (p.rank == 2) io::write_u32(out, static_cast<std::uint32_t>(p.value.cols()));
    for (Eigen::Index r = 0; r < p.value.rows(); ++r)
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) io::write_f32(out, static_cast<float>(p.value(r, c)));
  }
}

EmbedderModel load_embedder(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing embedder checkpoint: " + path.string());
  io::expect_magic(in, "HDEM", path.string());
  const std::uint32_t version = io::read_u32(in);
  if (version != kEmbedderFormatVersion)
    throw DataError("unsupported embedder checkpoint version " + std::to_string(version));
  EmbedderConfig cfg;
  try {
    cfg = nlohmann::json::parse(io::read_string_block(in)).get<EmbedderConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("embedder checkpoint config: ") + e.what());
  }
  EmbedderModel model = EmbedderModel::zeros(cfg);
  const std::uint32_t count = io::read_u32(in);
  if (count != model.params().size()) throw DataError("embedder checkpoint: tensor count does not match config");
  for (auto& p : model.params()) {
    const std::uint32_t rank = io::read_u32(in);
    const std::uint32_t rows = io::read_u32(in);
    const std::uint32_t cols = rank == 2 ? io::read_u32(in) : 1;
    if (int(rank) != p.rank || rows != p.value.rows() || cols != p.value.cols())
      throw DataError("embedder checkpoint: shape mismatch for " + p.name);
    for (Eigen::Index r = 0; r < p.value.rows(); ++r)
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) p.value(r, c) = io::read_f32(in);
  }
  return model;
}

}  // namespace hetdiar
