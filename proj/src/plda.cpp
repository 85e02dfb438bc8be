#include "hetdiar/plda.hpp"

#include "hetdiar/binary_io.hpp"
#include "hetdiar/error.hpp"
#include "hetdiar/log.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <map>
#include <numbers>

namespace hetdiar {

namespace {

struct SpeakerStats {
  std::vector<int> counts;
  Eigen::MatrixXd sums;  // d x S
  Eigen::MatrixXd scatter;  // sum x x^T, d x d
  Eigen::Index total = 0;
};

SpeakerStats gather(const Eigen::MatrixXd& x, const std::vector<int>& ids) {
  if (static_cast<Eigen::Index>(ids.size()) != x.rows()) throw DataError("plda: one speaker id per embedding needed");
  std::map<int, int> slot;
  for (int id : ids) slot.emplace(id, 0);
  int next = 0;
  for (auto& [id, s] : slot) s = next++;
  SpeakerStats st;
  st.counts.assign(slot.size(), 0);
  st.sums = Eigen::MatrixXd::Zero(x.cols(), static_cast<Eigen::Index>(slot.size()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int s = slot[ids[i]];
    ++st.counts[s];
    st.sums.col(s) += x.row(i).transpose();
  }
  st.scatter = x.transpose() * x;
  st.total = x.rows();
  return st;
}

double log_det_spd(const Eigen::MatrixXd& m, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw NumericError(std::string("plda: ") + what + " is not positive definite");
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& m, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw NumericError(std::string("plda: ") + what + " is singular");
  return llt.solve(Eigen::MatrixXd::Identity(m.rows(), m.cols()));
}

double log_likelihood_from_stats(const PldaModel& model, const SpeakerStats& st) {
  const Eigen::Index d = model.dim(), r = model.rank();
  const Eigen::MatrixXd noise_inv = spd_inverse(model.noise_cov, "noise covariance");
  const double noise_logdet = log_det_spd(model.noise_cov, "noise covariance");
  const Eigen::MatrixXd vt_ni = model.loading.transpose() * noise_inv;
  const Eigen::MatrixXd g = vt_ni * model.loading;
  double ll = -0.5 * (double(st.total) * (double(d) * std::log(2.0 * std::numbers::pi) + noise_logdet) +
                      (noise_inv.cwiseProduct(st.scatter)).sum());
  for (std::size_t s = 0; s < st.counts.size(); ++s) {
    const Eigen::MatrixXd precision = Eigen::MatrixXd::Identity(r, r) + double(st.counts[s]) * g;
    Eigen::LLT<Eigen::MatrixXd> llt(precision);
    const Eigen::VectorXd b = vt_ni * st.sums.col(Eigen::Index(s));
    ll += -0.5 * 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum() + 0.5 * b.dot(llt.solve(b));
  }
  return ll;
}

}  // namespace

EmbeddingPreprocessor fit_preprocessor(const Eigen::MatrixXd& embeddings) {
  const Eigen::Index n = embeddings.rows(), d = embeddings.cols();
  if (n < 2) throw DataError("fit_preprocessor: need at least 2 embeddings");
  if (n <= d) log_warning("fit_preprocessor: " + std::to_string(n) + " samples for dimension " + std::to_string(d));
  EmbeddingPreprocessor p;
  p.mean = embeddings.colwise().mean().transpose();
  const Eigen::MatrixXd centered = embeddings.rowwise() - p.mean.transpose();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / double(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  Eigen::VectorXd values = eig.eigenvalues();
  const Eigen::Index floored = (values.array() < kWhiteningEigenFloor).count();
  if (floored > 0)
    log_warning("fit_preprocessor: " + std::to_string(floored) + " covariance eigenvalues floored (degenerate input)");
  values = values.cwiseMax(kWhiteningEigenFloor);
  p.whitening = values.cwiseSqrt().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  return p;
}

Eigen::VectorXd preprocess(const EmbeddingPreprocessor& p, const Eigen::VectorXd& v) {
  if (v.size() != p.dim()) throw DataError("preprocess: dimension mismatch");
  if (!v.allFinite()) throw DataError("preprocess: non-finite embedding");
  const Eigen::VectorXd w = p.whitening * (v - p.mean);
  const double norm = w.norm();
  if (!(norm > 0.0)) throw NumericError("preprocess: embedding is zero after centering and whitening");
  return w / norm;
}

Eigen::MatrixXd preprocess_rows(const EmbeddingPreprocessor& p, const Eigen::MatrixXd& embeddings) {
  Eigen::MatrixXd out(embeddings.rows(), embeddings.cols());
  for (Eigen::Index i = 0; i < embeddings.rows(); ++i)
    out.row(i) = preprocess(p, embeddings.row(i).transpose()).transpose();
  return out;
}

Eigen::MatrixXd whiten_rows(const EmbeddingPreprocessor& p, const Eigen::MatrixXd& embeddings) {
  return (embeddings.rowwise() - p.mean.transpose()) * p.whitening.transpose();
}

PldaModel init_plda(const Eigen::MatrixXd& x, const std::vector<int>& ids, int rank) {
  const Eigen::Index d = x.cols();
  if (rank < 1 || rank > d) throw UsageError("plda: rank must be in [1, embed_dim]");
  const SpeakerStats st = gather(x, ids);
  if (st.counts.size() < 2) throw DataError("plda: need at least 2 speakers");
  Eigen::MatrixXd between = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd within = st.scatter;
  for (std::size_t s = 0; s < st.counts.size(); ++s) {
    const Eigen::VectorXd mean = st.sums.col(Eigen::Index(s)) / double(st.counts[s]);
    between += mean * mean.transpose();
    within -= double(st.counts[s]) * mean * mean.transpose();
  }
  between /= double(st.counts.size());
  within /= double(st.total);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(between);
  PldaModel m;
  m.loading.resize(d, rank);
  for (int k = 0; k < rank; ++k) {
    const Eigen::Index col = d - 1 - k;  // eigenvalues ascending
    m.loading.col(k) = eig.eigenvectors().col(col) * std::sqrt(std::max(eig.eigenvalues()(col), 0.0));
  }
  m.noise_cov = 0.5 * (within + within.transpose()) + 1e-6 * Eigen::MatrixXd::Identity(d, d);
  return m;
}

double plda_log_likelihood(const PldaModel& model, const Eigen::MatrixXd& x, const std::vector<int>& ids) {
  return log_likelihood_from_stats(model, gather(x, ids));
}

PldaModel fit_plda(const Eigen::MatrixXd& x, const std::vector<int>& ids, int rank, int iters,
                   std::vector<double>* objective) {
  PldaModel m = init_plda(x, ids, rank);
  const SpeakerStats st = gather(x, ids);
  const Eigen::Index d = x.cols(), r = rank;
  if (objective) {
    objective->clear();
    objective->push_back(log_likelihood_from_stats(m, st));
  }
  for (int it = 0; it < iters; ++it) {
    const Eigen::MatrixXd noise_inv = spd_inverse(m.noise_cov, "noise covariance");
    const Eigen::MatrixXd vt_ni = m.loading.transpose() * noise_inv;
    const Eigen::MatrixXd g = vt_ni * m.loading;
    Eigen::MatrixXd acc_hh = Eigen::MatrixXd::Zero(r, r);
    Eigen::MatrixXd acc_xh = Eigen::MatrixXd::Zero(d, r);
    for (std::size_t s = 0; s < st.counts.size(); ++s) {
      const double n = st.counts[s];
      const Eigen::MatrixXd cov = spd_inverse(Eigen::MatrixXd::Identity(r, r) + n * g, "speaker posterior precision");
      const Eigen::VectorXd mean = cov * (vt_ni * st.sums.col(Eigen::Index(s)));
      acc_hh += n * (cov + mean * mean.transpose());
      acc_xh += st.sums.col(Eigen::Index(s)) * mean.transpose();
    }
    Eigen::LDLT<Eigen::MatrixXd> solver(acc_hh);
    if (solver.info() != Eigen::Success || !(solver.vectorD().array() > 0.0).all())
      throw NumericError("plda: singular accumulator in M-step");
    m.loading = solver.solve(acc_xh.transpose()).transpose();
    Eigen::MatrixXd noise = (st.scatter - m.loading * acc_xh.transpose()) / double(st.total);
    m.noise_cov = 0.5 * (noise + noise.transpose());
    if (!m.loading.allFinite() || !m.noise_cov.allFinite()) throw NumericError("plda: non-finite EM update");
    if (objective) objective->push_back(log_likelihood_from_stats(m, st));
  }
  return m;
}

namespace {

// Quadratic-form pieces of the pair LLR:
//   llr(x, y) = c - 0.5 (x'Qx + y'Qy + x'Ny)
struct PairScorer {
  Eigen::MatrixXd q, n;
  double constant = 0.0;

  explicit PairScorer(const PldaModel& m) {
    const Eigen::MatrixXd between = m.loading * m.loading.transpose();
    const Eigen::MatrixXd total = between + m.noise_cov;
    const Eigen::MatrixXd total_inv = spd_inverse(total, "total covariance");
    const Eigen::MatrixXd schur = total - between * total_inv * between;
    const Eigen::MatrixXd schur_inv = spd_inverse(schur, "pair covariance");
    const Eigen::MatrixXd cross = -total_inv * between * schur_inv;
    q = schur_inv - total_inv;
    q = 0.5 * (q + q.transpose());
    n = cross + cross.transpose();
    constant = -0.5 * (log_det_spd(schur, "pair covariance") - log_det_spd(total, "total covariance"));
  }
};

}  // namespace

double plda_llr(const PldaModel& model, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  const PairScorer s(model);
  return s.constant - 0.5 * (x.dot(s.q * x) + y.dot(s.q * y) + x.dot(s.n * y));
}

Eigen::MatrixXd score_matrix(const PldaModel& model, const Eigen::MatrixXd& x) {
  if (x.cols() != model.dim()) throw DataError("score_matrix: dimension mismatch");
  const PairScorer s(model);
  const Eigen::Index m = x.rows();
  const Eigen::VectorXd self = (x * s.q).cwiseProduct(x).rowwise().sum();
  const Eigen::MatrixXd xn = x * s.n;
  Eigen::MatrixXd scores(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i; j < m; ++j) {
      const double v = s.constant - 0.5 * (self(i) + self(j) + xn.row(i).dot(x.row(j)));
      if (!std::isfinite(v)) throw NumericError("score_matrix: non-finite score");
      scores(i, j) = v;
      scores(j, i) = v;
    }
  }
  return scores;
}

void save_plda(const std::filesystem::path& path, const EmbeddingPreprocessor& pre, const PldaModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  io::write_magic(out, "HDPL");
  io::write_string_block(out, nlohmann::json{{"embed_dim", model.dim()}, {"r", model.rank()}}.dump());
  io::write_f64_block(out, pre.mean.transpose());
  io::write_f64_block(out, pre.whitening);
  io::write_f64_block(out, model.loading);
  io::write_f64_block(out, model.noise_cov);
}

void load_plda(const std::filesystem::path& path, EmbeddingPreprocessor& pre, PldaModel& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing PLDA model: " + path.string());
  io::expect_magic(in, "HDPL", path.string());
  Eigen::Index d = 0, r = 0;
  try {
    const auto header = nlohmann::json::parse(io::read_string_block(in));
    d = header.at("embed_dim").get<Eigen::Index>();
    r = header.at("r").get<Eigen::Index>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("PLDA header: ") + e.what());
  }
  if (d < 1 || r < 1 || r > d) throw DataError("PLDA header: invalid dimensions");
  pre.mean = io::read_f64_block(in, 1, d).transpose();
  pre.whitening = io::read_f64_block(in, d, d);
  model.loading = io::read_f64_block(in, d, r);
  model.noise_cov = io::read_f64_block(in, d, d);
}

}  // namespace hetdiar
