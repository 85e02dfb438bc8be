#include "hetdiar/projection.hpp"

#include "hetdiar/error.hpp"
#include "hetdiar/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <sstream>

namespace hetdiar {

Eigen::MatrixXd pca_project(const Eigen::MatrixXd& x) {
  if (x.rows() < 2) throw UsageError("pca: need at least two points");
  const Eigen::MatrixXd centred = x.rowwise() - x.colwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeThinV);
  Eigen::MatrixXd axes = Eigen::MatrixXd::Zero(x.cols(), 2);
  const Eigen::Index k = std::min<Eigen::Index>(2, svd.matrixV().cols());
  axes.leftCols(k) = svd.matrixV().leftCols(k);
  // Sign convention: largest-magnitude loading of each axis is positive.
  for (Eigen::Index c = 0; c < k; ++c) {
    Eigen::Index idx = 0;
    axes.col(c).cwiseAbs().maxCoeff(&idx);
    if (axes(idx, c) < 0) axes.col(c) = -axes.col(c);
  }
  return centred * axes;
}

namespace {

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& x) {
  const Eigen::VectorXd norms = x.rowwise().squaredNorm();
  Eigen::MatrixXd d = (-2.0 * x * x.transpose()).colwise() + norms;
  d.rowwise() += norms.transpose();
  return d.cwiseMax(0.0);
}

// Student-t kernel matrix with zero diagonal, and its sum.
Eigen::MatrixXd kernel(const Eigen::MatrixXd& y, double& sum) {
  Eigen::MatrixXd k = (1.0 + squared_distances(y).array()).inverse().matrix();
  k.diagonal().setZero();
  sum = k.sum();
  return k;
}

Eigen::MatrixXd kl_gradient(const Eigen::MatrixXd& p, const Eigen::MatrixXd& y, double exaggeration) {
  double z = 0.0;
  const Eigen::MatrixXd k = kernel(y, z);
  const Eigen::MatrixXd w = ((exaggeration * p).array() - k.array() / z).matrix().cwiseProduct(k);
  const Eigen::VectorXd row_sum = w.rowwise().sum();
  return 4.0 * (row_sum.asDiagonal() * y - w * y);
}

}  // namespace

Eigen::MatrixXd tsne_affinities(const Eigen::MatrixXd& x, double perplexity) {
  const Eigen::Index m = x.rows();
  const Eigen::MatrixXd d = squared_distances(x);
  const double target = std::log(perplexity);
  Eigen::MatrixXd cond = Eigen::MatrixXd::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    Eigen::VectorXd row(m);
    for (int it = 0; it < 200; ++it) {
      double min_d = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < m; ++j)
        if (j != i) min_d = std::min(min_d, d(i, j));
      double sum = 0.0;
      for (Eigen::Index j = 0; j < m; ++j) {
        row(j) = j == i ? 0.0 : std::exp(-beta * (d(i, j) - min_d));
        sum += row(j);
      }
      row /= sum;
      double entropy = 0.0;
      for (Eigen::Index j = 0; j < m; ++j)
        if (row(j) > 0) entropy -= row(j) * std::log(row(j));
      if (std::abs(entropy - target) < 1e-6) break;
      if (entropy > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
    cond.row(i) = row.transpose();
  }
  Eigen::MatrixXd p = (cond + cond.transpose()) / (2.0 * double(m));
  p = p.cwiseMax(1e-12);
  p.diagonal().setZero();
  return p / p.sum();
}

double tsne_kl(const Eigen::MatrixXd& p, const Eigen::MatrixXd& y) {
  double z = 0.0;
  const Eigen::MatrixXd k = kernel(y, z);
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = 0; j < p.cols(); ++j)
      if (i != j && p(i, j) > 0) kl += p(i, j) * std::log(p(i, j) / std::max(k(i, j) / z, 1e-300));
  return kl;
}

Projection tsne_project(const Eigen::MatrixXd& x, const TsneOptions& opts) {
  const Eigen::Index m = x.rows();
  if (m < 4) throw UsageError("tsne: need at least 4 points");
  if (!(opts.perplexity > 0.0) || opts.perplexity >= double(m - 1) / 3.0)
    throw UsageError("tsne: perplexity infeasible for " + std::to_string(m) + " points");
  if (opts.iterations < 0 || opts.exaggeration_iterations < 0) throw UsageError("tsne: negative iteration count");

  const Eigen::MatrixXd p = tsne_affinities(x, opts.perplexity);
  Rng rng(opts.seed);
  Projection out;
  Eigen::MatrixXd y(m, 2);
  for (Eigen::Index i = 0; i < m; ++i)
    for (int c = 0; c < 2; ++c) y(i, c) = 1e-4 * rng.normal();

  // Exaggeration phase: momentum with adaptive gains.
  const int early = std::min(opts.exaggeration_iterations, opts.iterations);
  Eigen::MatrixXd update = Eigen::MatrixXd::Zero(m, 2), gains = Eigen::MatrixXd::Ones(m, 2);
  for (int it = 0; it < early; ++it) {
    const Eigen::MatrixXd g = kl_gradient(p, y, opts.exaggeration);
    for (Eigen::Index i = 0; i < m; ++i)
      for (int c = 0; c < 2; ++c) {
        const bool same = (g(i, c) > 0) == (update(i, c) > 0);
        gains(i, c) = std::max(0.01, same ? gains(i, c) * 0.8 : gains(i, c) + 0.2);
      }
    const double momentum = it < 20 ? 0.5 : 0.8;
    update = momentum * update - opts.learning_rate * gains.cwiseProduct(g);
    y += update;
    y.rowwise() -= y.colwise().mean();
    out.kl_trace.push_back(tsne_kl(p, y));
  }
  out.exaggeration_end = early;

  // Plain KL descent with backtracking line search.
  double step = opts.learning_rate;
  double kl = tsne_kl(p, y);
  for (int it = early; it < opts.iterations; ++it) {
    const Eigen::MatrixXd g = kl_gradient(p, y, 1.0);
    const double g2 = g.squaredNorm();
    bool accepted = false;
    for (int tries = 0; tries < 60 && g2 > 0.0; ++tries) {
      const Eigen::MatrixXd candidate = y - step * g;
      const double kl_new = tsne_kl(p, candidate);
      if (kl_new <= kl - 1e-4 * step * g2) {
        y = candidate;
        kl = kl_new;
        step *= 1.5;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) step = opts.learning_rate;
    out.kl_trace.push_back(kl);
  }
  out.points = y.rowwise() - y.colwise().mean();
  return out;
}

double silhouette_score(const Eigen::MatrixXd& points, const std::vector<int>& labels) {
  const Eigen::Index m = points.rows();
  if (static_cast<Eigen::Index>(labels.size()) != m) throw UsageError("silhouette: label count mismatch");
  const Eigen::MatrixXd d = squared_distances(points).cwiseSqrt();
  const int k = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  if (k < 2) throw UsageError("silhouette: need at least two clusters");
  double total = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    std::vector<double> sum(k, 0.0);
    std::vector<int> count(k, 0);
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j == i) continue;
      sum[labels[j]] += d(i, j);
      ++count[labels[j]];
    }
    const int own = labels[i];
    if (count[own] == 0) continue;
    const double a = sum[own] / count[own];
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c)
      if (c != own && count[c] > 0) b = std::min(b, sum[c] / count[c]);
    total += (b - a) / std::max(a, b);
  }
  return total / double(m);
}

std::vector<DensityGrid> density_grids(const Eigen::MatrixXd& points, const std::vector<std::string>& groups,
                                       int resolution) {
  if (static_cast<Eigen::Index>(groups.size()) != points.rows()) throw UsageError("kde: group count mismatch");
  if (resolution < 2) throw UsageError("kde: resolution must be >= 2");
  std::vector<std::string> names;
  for (const auto& g : groups)
    if (std::find(names.begin(), names.end(), g) == names.end()) names.push_back(g);
  const Eigen::RowVector2d lo = points.colwise().minCoeff(), hi = points.colwise().maxCoeff();
  const Eigen::RowVector2d pad = 0.1 * (hi - lo).cwiseMax(1e-6);
  std::vector<DensityGrid> out;
  for (const auto& name : names) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < points.rows(); ++i)
      if (groups[i] == name) idx.push_back(i);
    const auto n = static_cast<double>(idx.size());
    Eigen::MatrixXd sub(static_cast<Eigen::Index>(idx.size()), 2);
    for (std::size_t i = 0; i < idx.size(); ++i) sub.row(static_cast<Eigen::Index>(i)) = points.row(idx[i]);
    const Eigen::RowVector2d mean = sub.colwise().mean();
    Eigen::RowVector2d sd = Eigen::RowVector2d::Constant(1e-3);
    if (idx.size() > 1) sd = ((sub.rowwise() - mean).array().square().colwise().sum() / (n - 1.0)).sqrt().max(1e-3);
    const double scott = std::pow(n, -1.0 / 6.0);
    DensityGrid grid;
    grid.group = name;
    grid.x_min = lo(0) - pad(0);
    grid.x_max = hi(0) + pad(0);
    grid.y_min = lo(1) - pad(1);
    grid.y_max = hi(1) + pad(1);
    grid.bandwidth_x = sd(0) * scott;
    grid.bandwidth_y = sd(1) * scott;
    grid.density = Eigen::MatrixXd::Zero(resolution, resolution);
    const double norm = 1.0 / (n * 2.0 * std::numbers::pi * grid.bandwidth_x * grid.bandwidth_y);
    for (int r = 0; r < resolution; ++r) {
      const double gy = grid.y_min + (grid.y_max - grid.y_min) * r / (resolution - 1);
      for (int c = 0; c < resolution; ++c) {
        const double gx = grid.x_min + (grid.x_max - grid.x_min) * c / (resolution - 1);
        double acc = 0.0;
        for (Eigen::Index i = 0; i < sub.rows(); ++i) {
          const double ux = (gx - sub(i, 0)) / grid.bandwidth_x, uy = (gy - sub(i, 1)) / grid.bandwidth_y;
          acc += std::exp(-0.5 * (ux * ux + uy * uy));
        }
        grid.density(r, c) = acc * norm;
      }
    }
    out.push_back(std::move(grid));
  }
  return out;
}

std::string projection_csv(const Eigen::MatrixXd& points, const std::vector<std::string>& labels,
                           const std::vector<std::string>& groups) {
  if (static_cast<Eigen::Index>(labels.size()) != points.rows() ||
      static_cast<Eigen::Index>(groups.size()) != points.rows())
    throw UsageError("projection csv: column length mismatch");
  std::ostringstream os;
  os << "x,y,label,group\n";
  char buf[64];
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,", points(i, 0), points(i, 1));
    os << buf << labels[i] << ',' << groups[i] << '\n';
  }
  return os.str();
}

nlohmann::json density_json(const std::vector<DensityGrid>& grids) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& g : grids) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < g.density.rows(); ++r) {
      std::vector<double> row(g.density.cols());
      for (Eigen::Index c = 0; c < g.density.cols(); ++c) row[c] = g.density(r, c);
      rows.push_back(row);
    }
    out.push_back({{"group", g.group},
                   {"x_range", {g.x_min, g.x_max}},
                   {"y_range", {g.y_min, g.y_max}},
                   {"bandwidth", {g.bandwidth_x, g.bandwidth_y}},
                   {"density", rows}});
  }
  return out;
}

}  // namespace hetdiar
