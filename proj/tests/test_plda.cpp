#include <doctest.h>

#include "hetdiar/error.hpp"
#include "hetdiar/plda.hpp"
#include "hetdiar/rng.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>

using namespace hetdiar;

namespace {

Eigen::MatrixXd gaussian(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

// Dense Gaussian log density, straight from the definition.
double log_normal(const Eigen::VectorXd& x, const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  REQUIRE(llt.info() == Eigen::Success);
  const Eigen::VectorXd z = llt.matrixL().solve(x);
  double logdet = 0;
  for (Eigen::Index i = 0; i < cov.rows(); ++i) logdet += 2 * std::log(llt.matrixL()(i, i));
  return -0.5 * (double(x.size()) * std::log(2 * std::numbers::pi) + logdet + z.squaredNorm());
}

struct Generated {
  Eigen::MatrixXd x;
  std::vector<int> ids;
  Eigen::MatrixXd v, noise;
};

Generated generate(int speakers, int per, int d, int r, double speaker_scale, std::uint64_t seed) {
  Rng rng(seed);
  Generated g;
  g.v = speaker_scale * gaussian(d, r, rng);
  Eigen::MatrixXd a = gaussian(d, d, rng);
  g.noise = 0.2 * a * a.transpose() / d + 0.3 * Eigen::MatrixXd::Identity(d, d);
  Eigen::LLT<Eigen::MatrixXd> llt(g.noise);
  Eigen::MatrixXd l = llt.matrixL();
  g.x.resize(speakers * per, d);
  for (int s = 0; s < speakers; ++s) {
    Eigen::VectorXd h = gaussian(r, 1, rng);
    for (int k = 0; k < per; ++k) {
      g.x.row(s * per + k) = (g.v * h + l * gaussian(d, 1, rng)).transpose();
      g.ids.push_back(s);
    }
  }
  return g;
}

double max_principal_angle_deg(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qa(a), qb(b);
  Eigen::MatrixXd ua = qa.householderQ() * Eigen::MatrixXd::Identity(a.rows(), a.cols());
  Eigen::MatrixXd ub = qb.householderQ() * Eigen::MatrixXd::Identity(b.rows(), b.cols());
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(ua.transpose() * ub);
  const double smallest = std::clamp(svd.singularValues().minCoeff(), -1.0, 1.0);
  return std::acos(smallest) * 180.0 / std::numbers::pi;
}

}  // namespace

TEST_SUITE("plda") {
  TEST_CASE("whitening contract on training data") {
    Rng rng(1);
    Eigen::MatrixXd mix = gaussian(6, 6, rng);
    Eigen::MatrixXd x = gaussian(500, 6, rng) * mix;
    x.rowwise() += Eigen::RowVectorXd::LinSpaced(6, -3, 3);
    EmbeddingPreprocessor p = fit_preprocessor(x);
    Eigen::MatrixXd w = whiten_rows(p, x);
    Eigen::MatrixXd cov = w.transpose() * w / double(w.rows());
    CHECK((cov - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(w.colwise().mean().cwiseAbs().maxCoeff() < 1e-9);

    // Refit on white data: mean 0, whitening orthogonal.
    EmbeddingPreprocessor q = fit_preprocessor(w);
    CHECK(q.mean.cwiseAbs().maxCoeff() < 1e-9);
    CHECK((q.whitening.transpose() * q.whitening - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-6);
  }

  TEST_CASE("degenerate inputs") {
    Eigen::MatrixXd same = Eigen::MatrixXd::Ones(10, 4);
    EmbeddingPreprocessor p = fit_preprocessor(same);
    CHECK(p.whitening.allFinite());
    CHECK_THROWS_AS(fit_preprocessor(Eigen::MatrixXd::Ones(1, 4)), DataError);
  }

  TEST_CASE("preprocess: unit norm, zero vector and identity idempotence") {
    Rng rng(2);
    Eigen::MatrixXd x = gaussian(200, 5, rng);
    EmbeddingPreprocessor p = fit_preprocessor(x);
    for (int k = 0; k < 20; ++k) CHECK(preprocess(p, gaussian(5, 1, rng)).norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(preprocess(p, p.mean), NumericError);

    EmbeddingPreprocessor id;
    id.mean = Eigen::VectorXd::Zero(5);
    id.whitening = Eigen::MatrixXd::Identity(5, 5);
    Eigen::VectorXd u = preprocess(id, gaussian(5, 1, rng));
    CHECK((preprocess(id, u) - u).norm() < 1e-15);
  }

  TEST_CASE("two-covariance LLR in one dimension") {
    PldaModel m;
    m.loading = Eigen::MatrixXd::Ones(1, 1);
    m.noise_cov = Eigen::MatrixXd::Ones(1, 1);
    const double llr = plda_llr(m, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1));
    CHECK(llr == doctest::Approx(0.5 * std::log(4.0 / 3.0)).epsilon(1e-12));
    CHECK(llr == doctest::Approx(0.14384).epsilon(1e-4));
  }

  TEST_CASE("LLR agrees with dense joint-Gaussian evaluation") {
    Rng rng(3);
    const int d = 5;
    PldaModel m;
    m.loading = gaussian(d, 2, rng);
    Eigen::MatrixXd a = gaussian(d, d, rng);
    m.noise_cov = a * a.transpose() + Eigen::MatrixXd::Identity(d, d);
    const Eigen::MatrixXd b = m.loading * m.loading.transpose();
    const Eigen::MatrixXd s = b + m.noise_cov;
    Eigen::MatrixXd joint(2 * d, 2 * d);
    joint << s, b, b, s;
    for (int k = 0; k < 10; ++k) {
      Eigen::VectorXd x = gaussian(d, 1, rng), y = gaussian(d, 1, rng);
      Eigen::VectorXd xy(2 * d);
      xy << x, y;
      const double oracle = log_normal(xy, joint) - log_normal(x, s) - log_normal(y, s);
      CHECK(plda_llr(m, x, y) == doctest::Approx(oracle).epsilon(1e-9));
    }
  }

  TEST_CASE("marginal log-likelihood agrees with dense evaluation") {
    Generated g = generate(6, 3, 4, 2, 1.0, 4);
    PldaModel m = init_plda(g.x, g.ids, 2);
    const Eigen::MatrixXd b = m.loading * m.loading.transpose();
    double oracle = 0;
    for (int s = 0; s < 6; ++s) {
      Eigen::MatrixXd cov(12, 12);
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) cov.block(4 * i, 4 * j, 4, 4) = b + (i == j ? m.noise_cov : Eigen::MatrixXd::Zero(4, 4));
      Eigen::VectorXd stacked(12);
      for (int i = 0; i < 3; ++i) stacked.segment(4 * i, 4) = g.x.row(3 * s + i).transpose();
      oracle += log_normal(stacked, cov);
    }
    CHECK(plda_log_likelihood(m, g.x, g.ids) == doctest::Approx(oracle).epsilon(1e-9));
  }

  TEST_CASE("EM recovers a known speaker subspace") {
    Generated g = generate(200, 10, 8, 2, 2.0, 5);
    std::vector<double> obj;
    PldaModel m = fit_plda(g.x, g.ids, 2, 25, &obj);
    CHECK(m.rank() == 2);
    CHECK(max_principal_angle_deg(m.loading, g.v) < 5.0);
    REQUIRE(obj.size() == 26);
    for (std::size_t i = 1; i < obj.size(); ++i) CHECK(obj[i] >= obj[i - 1] - 1e-8);
    Eigen::LLT<Eigen::MatrixXd> llt(m.noise_cov);
    CHECK(llt.info() == Eigen::Success);
    CHECK((m.noise_cov - m.noise_cov.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("zero EM iterations return the initialization") {
    Generated g = generate(20, 4, 6, 2, 1.0, 6);
    PldaModel init = init_plda(g.x, g.ids, 3);
    PldaModel same = fit_plda(g.x, g.ids, 3, 0);
    CHECK(same.loading == init.loading);
    CHECK(same.noise_cov == init.noise_cov);
    CHECK_THROWS_AS(fit_plda(g.x, g.ids, 7, 1), UsageError);
  }

  TEST_CASE("same-speaker pairs outscore different-speaker pairs") {
    Generated train = generate(100, 8, 8, 3, 1.5, 7);
    PldaModel m = fit_plda(train.x, train.ids, 3, 10);
    // Held-out pairs from the same V and noise.
    Rng rng(9);
    Eigen::LLT<Eigen::MatrixXd> llt(train.noise);
    Eigen::MatrixXd l = llt.matrixL();
    std::vector<Eigen::VectorXd> a, b;
    for (int s = 0; s < 60; ++s) {
      Eigen::VectorXd h = gaussian(3, 1, rng);
      a.push_back(train.v * h + l * gaussian(8, 1, rng));
      b.push_back(train.v * h + l * gaussian(8, 1, rng));
    }
    std::vector<double> same, diff;
    for (int i = 0; i < 60; ++i) {
      same.push_back(plda_llr(m, a[i], b[i]));
      diff.push_back(plda_llr(m, a[i], b[(i + 1) % 60]));
    }
    // Mann-Whitney AUC.
    double wins = 0;
    for (double s : same)
      for (double d : diff) wins += s > d ? 1.0 : (s == d ? 0.5 : 0.0);
    CHECK(wins / double(same.size() * diff.size()) > 0.95);
  }

  TEST_CASE("score matrix: symmetry, permutation equivariance, 1x1") {
    Generated g = generate(10, 3, 6, 2, 1.0, 10);
    PldaModel m = fit_plda(g.x, g.ids, 2, 3);
    Eigen::MatrixXd s = score_matrix(m, g.x);
    CHECK((s - s.transpose()).cwiseAbs().maxCoeff() < 1e-9);
    for (int i = 0; i < 5; ++i) CHECK(s(i, i) == doctest::Approx(plda_llr(m, g.x.row(i), g.x.row(i))).epsilon(1e-9));
    std::vector<int> perm(g.x.rows());
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    std::rotate(perm.begin(), perm.begin() + 7, perm.end());
    Eigen::MatrixXd px(g.x.rows(), g.x.cols());
    for (std::size_t i = 0; i < perm.size(); ++i) px.row(Eigen::Index(i)) = g.x.row(perm[i]);
    Eigen::MatrixXd ps = score_matrix(m, px);
    for (std::size_t i = 0; i < perm.size(); ++i)
      for (std::size_t j = 0; j < perm.size(); ++j) CHECK(ps(Eigen::Index(i), Eigen::Index(j)) == doctest::Approx(s(perm[i], perm[j])).epsilon(1e-12));
    CHECK(score_matrix(m, g.x.topRows(1)).size() == 1);
  }

  TEST_CASE("HDPL round trip") {
    Generated g = generate(10, 3, 6, 2, 1.0, 11);
    EmbeddingPreprocessor p = fit_preprocessor(g.x);
    PldaModel m = fit_plda(preprocess_rows(p, g.x), g.ids, 2, 2);
    const auto path = std::filesystem::temp_directory_path() / "hetdiar_test.hdpl";
    save_plda(path, p, m);
    EmbeddingPreprocessor p2;
    PldaModel m2;
    load_plda(path, p2, m2);
    CHECK(p2.mean == p.mean);
    CHECK(p2.whitening == p.whitening);
    CHECK(m2.loading == m.loading);
    CHECK(m2.noise_cov == m.noise_cov);
  }
}
