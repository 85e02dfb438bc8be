#include "hetdiar/error.hpp"
#include "hetdiar/log.hpp"
#include "hetdiar/rng.hpp"
#include "hetdiar/vb_reseg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace hetdiar {

Eigen::MatrixXd Ubm::component_log_likelihoods(const Eigen::MatrixXd& frames) const {
  if (frames.cols() != dim()) throw DataError("ubm: feature dimension mismatch");
  const Eigen::MatrixXd inv_var = variances.cwiseInverse();
  const Eigen::VectorXd constant =
      weights.array().log() -
      0.5 * (double(dim()) * std::log(2.0 * std::numbers::pi) + variances.array().log().rowwise().sum() +
             (means.array().square() * inv_var.array()).rowwise().sum());
  Eigen::MatrixXd ll = frames * means.cwiseProduct(inv_var).transpose();
  ll.noalias() -= 0.5 * frames.array().square().matrix() * inv_var.transpose();
  ll.rowwise() += constant.transpose();
  return ll;
}

Eigen::VectorXd Ubm::posteriors(const Eigen::MatrixXd& frames, Eigen::MatrixXd& gamma) const {
  gamma = component_log_likelihoods(frames);
  Eigen::VectorXd log_px(frames.rows());
  for (Eigen::Index t = 0; t < gamma.rows(); ++t) {
    const double peak = gamma.row(t).maxCoeff();
    gamma.row(t).array() = (gamma.row(t).array() - peak).exp();
    const double sum = gamma.row(t).sum();
    gamma.row(t) /= sum;
    log_px(t) = peak + std::log(sum);
  }
  return log_px;
}

double Ubm::average_log_likelihood(const Eigen::MatrixXd& frames) const {
  Eigen::MatrixXd gamma;
  return posteriors(frames, gamma).mean();
}

namespace {

Eigen::MatrixXd kmeans_centroids(const Eigen::MatrixXd& x, int k, Rng& rng, int iters) {
  const Eigen::Index n = x.rows();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  for (int i = 0; i < k; ++i) std::swap(order[i], order[rng.uniform_int(i, n - 1)]);
  Eigen::MatrixXd centroids(k, x.cols());
  for (int i = 0; i < k; ++i) centroids.row(i) = x.row(order[i]);

  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  for (int it = 0; it < iters; ++it) {
    const Eigen::VectorXd cnorm = centroids.rowwise().squaredNorm();
    const Eigen::MatrixXd cross = x * centroids.transpose();
    for (Eigen::Index t = 0; t < n; ++t) {
      Eigen::Index best = 0;
      (cnorm.transpose() - 2.0 * cross.row(t)).minCoeff(&best);
      assign[t] = static_cast<int>(best);
    }
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, x.cols());
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
    for (Eigen::Index t = 0; t < n; ++t) {
      sums.row(assign[t]) += x.row(t);
      counts(assign[t]) += 1.0;
    }
    for (int c = 0; c < k; ++c)
      centroids.row(c) = counts(c) > 0 ? Eigen::VectorXd(sums.row(c) / counts(c)) : Eigen::VectorXd(x.row(rng.uniform_int(0, n - 1)));
  }
  return centroids;
}

}  // namespace

Ubm train_ubm(const Eigen::MatrixXd& x, int num_components, int iters, std::uint64_t seed,
              std::vector<double>* objective) {
  const Eigen::Index n = x.rows(), d = x.cols();
  if (num_components < 1) throw UsageError("train_ubm: need at least one component");
  if (n < num_components) throw DataError("train_ubm: fewer frames than components");
  if (n < 10 * num_components) log_warning("train_ubm: only " + std::to_string(n) + " frames for " +
                                           std::to_string(num_components) + " components");
  Rng rng(seed);
  const Eigen::RowVectorXd global_mean = x.colwise().mean();
  const Eigen::RowVectorXd global_var = (x.rowwise() - global_mean).array().square().colwise().mean();
  const Eigen::RowVectorXd var_floor = (1e-3 * global_var.array()).max(1e-10);

  Ubm ubm;
  ubm.means = kmeans_centroids(x, num_components, rng, 10);
  ubm.weights = Eigen::VectorXd::Constant(num_components, 1.0 / num_components);
  ubm.variances = global_var.replicate(num_components, 1);
  {
    // Hard-assignment statistics seed the first EM step.
    const Eigen::VectorXd cnorm = ubm.means.rowwise().squaredNorm();
    const Eigen::MatrixXd cross = x * ubm.means.transpose();
    Eigen::MatrixXd s1 = Eigen::MatrixXd::Zero(num_components, d), s2 = s1;
    Eigen::VectorXd cnt = Eigen::VectorXd::Zero(num_components);
    for (Eigen::Index t = 0; t < n; ++t) {
      Eigen::Index c = 0;
      (cnorm.transpose() - 2.0 * cross.row(t)).minCoeff(&c);
      cnt(c) += 1.0;
      s1.row(c) += x.row(t);
      s2.row(c) += x.row(t).cwiseAbs2();
    }
    for (int c = 0; c < num_components; ++c) {
      if (cnt(c) < 2.0) continue;
      ubm.means.row(c) = s1.row(c) / cnt(c);
      ubm.variances.row(c) = (s2.row(c) / cnt(c) - ubm.means.row(c).cwiseAbs2()).cwiseMax(var_floor);
      ubm.weights(c) = cnt(c) / double(n);
    }
    ubm.weights = ubm.weights.cwiseMax(1e-8);
    ubm.weights /= ubm.weights.sum();
  }

  Eigen::MatrixXd gamma;
  for (int it = 0; it < iters; ++it) {
    const Eigen::VectorXd log_px = ubm.posteriors(x, gamma);
    if (objective) objective->push_back(log_px.mean());
    const Eigen::VectorXd occ = gamma.colwise().sum().transpose();
    const Eigen::MatrixXd first = gamma.transpose() * x;
    const Eigen::MatrixXd second = gamma.transpose() * x.cwiseAbs2();
    for (int c = 0; c < num_components; ++c) {
      if (occ(c) < 1e-3) continue;
      ubm.means.row(c) = first.row(c) / occ(c);
      ubm.variances.row(c) = (second.row(c) / occ(c) - ubm.means.row(c).cwiseAbs2()).cwiseMax(var_floor);
      ubm.weights(c) = occ(c) / double(n);
    }
    for (int c = 0; c < num_components; ++c) {
      if (occ(c) >= 1e-3) continue;
      Eigen::Index heavy = 0;
      ubm.weights.maxCoeff(&heavy);
      log_warning("train_ubm: component " + std::to_string(c) + " is empty; re-seeding from component " +
                  std::to_string(heavy));
      ubm.weights(heavy) *= 0.5;
      ubm.weights(c) = ubm.weights(heavy);
      ubm.variances.row(c) = ubm.variances.row(heavy);
      const Eigen::RowVectorXd offset = 0.2 * ubm.variances.row(heavy).cwiseSqrt();
      ubm.means.row(c) = ubm.means.row(heavy) + offset;
      ubm.means.row(heavy) -= offset;
    }
    ubm.weights /= ubm.weights.sum();
  }
  if (objective) objective->push_back(ubm.average_log_likelihood(x));
  return ubm;
}

SpeakerStats accumulate_stats(const Ubm& ubm, const Eigen::MatrixXd& frames) {
  Eigen::MatrixXd gamma;
  ubm.posteriors(frames, gamma);
  SpeakerStats s;
  s.zeroth = gamma.colwise().sum().transpose();
  s.first = gamma.transpose() * frames - s.zeroth.asDiagonal() * ubm.means;
  return s;
}

EigenvoiceModel train_eigenvoices(const Ubm& ubm, const std::vector<SpeakerStats>& stats, int rank, int iters) {
  const Eigen::Index k_count = ubm.num_components(), d = ubm.dim();
  const auto num_speakers = static_cast<Eigen::Index>(stats.size());
  if (rank < 1) throw UsageError("train_eigenvoices: rank must be >= 1");
  if (rank > num_speakers)
    throw DataError("train_eigenvoices: rank " + std::to_string(rank) + " exceeds " + std::to_string(num_speakers) +
                    " speakers");
  const Eigen::MatrixXd inv_var = ubm.variances.cwiseInverse();
  const Eigen::MatrixXd sd = ubm.variances.cwiseSqrt();

  // PCA start on variance-normalised mean offsets.
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(num_speakers, k_count * d);
  for (Eigen::Index s = 0; s < num_speakers; ++s)
    for (Eigen::Index k = 0; k < k_count; ++k) {
      const double n = stats[s].zeroth(k);
      if (n <= 1e-10) continue;
      for (Eigen::Index j = 0; j < d; ++j) z(s, k * d + j) = stats[s].first(k, j) / n / sd(k, j);
    }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(z / std::sqrt(double(num_speakers)), Eigen::ComputeThinV);
  EigenvoiceModel model;
  model.ubm = ubm;
  model.bases.resize(k_count * d, rank);
  for (int r = 0; r < rank; ++r) {
    const double sv = r < svd.singularValues().size() ? svd.singularValues()(r) : 0.0;
    for (Eigen::Index k = 0; k < k_count; ++k)
      for (Eigen::Index j = 0; j < d; ++j) model.bases(k * d + j, r) = svd.matrixV()(k * d + j, r) * sv * sd(k, j);
  }

  const Eigen::MatrixXd ident = Eigen::MatrixXd::Identity(rank, rank);
  for (int it = 0; it < iters; ++it) {
    std::vector<Eigen::MatrixXd> vtiev(k_count);
    for (Eigen::Index k = 0; k < k_count; ++k) {
      const auto v = model.bases.middleRows(k * d, d);
      vtiev[k] = v.transpose() * inv_var.row(k).transpose().asDiagonal() * v;
    }
    std::vector<Eigen::MatrixXd> acc_c(k_count, Eigen::MatrixXd::Zero(d, rank));
    std::vector<Eigen::MatrixXd> acc_a(k_count, Eigen::MatrixXd::Zero(rank, rank));
    for (Eigen::Index s = 0; s < num_speakers; ++s) {
      Eigen::MatrixXd precision = ident;
      Eigen::VectorXd linear = Eigen::VectorXd::Zero(rank);
      for (Eigen::Index k = 0; k < k_count; ++k) {
        precision += stats[s].zeroth(k) * vtiev[k];
        const auto v = model.bases.middleRows(k * d, d);
        linear += v.transpose() * stats[s].first.row(k).cwiseProduct(inv_var.row(k)).transpose();
      }
      Eigen::LLT<Eigen::MatrixXd> llt(precision);
      if (llt.info() != Eigen::Success) throw NumericError("train_eigenvoices: singular speaker precision");
      const Eigen::MatrixXd cov = llt.solve(ident);
      const Eigen::VectorXd mean = cov * linear;
      const Eigen::MatrixXd second = cov + mean * mean.transpose();
      for (Eigen::Index k = 0; k < k_count; ++k) {
        acc_c[k] += stats[s].first.row(k).transpose() * mean.transpose();
        acc_a[k] += stats[s].zeroth(k) * second;
      }
    }
    for (Eigen::Index k = 0; k < k_count; ++k) {
      Eigen::LDLT<Eigen::MatrixXd> solver(acc_a[k]);
      if (solver.info() != Eigen::Success) throw NumericError("train_eigenvoices: singular accumulator");
      model.bases.middleRows(k * d, d) = solver.solve(acc_c[k].transpose()).transpose();
    }
    if (!model.bases.allFinite()) throw NumericError("train_eigenvoices: non-finite bases");
  }
  return model;
}

}  // namespace hetdiar
