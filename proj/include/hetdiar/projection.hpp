#ifndef HETDIAR_PROJECTION_HPP
#define HETDIAR_PROJECTION_HPP

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace hetdiar {

enum class ProjectionMethod { kTsne, kPca };

struct TsneOptions {
  double perplexity = 30.0;
  int iterations = 1000;
  int exaggeration_iterations = 250;
  double exaggeration = 12.0;
  double learning_rate = 200.0;
  std::uint64_t seed = 0;
};

struct Projection {
  Eigen::MatrixXd points;         // m x 2
  std::vector<double> kl_trace;   // t-SNE only: KL after every iteration
  int exaggeration_end = 0;       // index of the first iteration without exaggeration
};

/// Exact projection onto the top-2 principal axes of the centred rows.
Eigen::MatrixXd pca_project(const Eigen::MatrixXd& x);

/// Exact symmetric t-SNE. Throws UsageError unless m >= 4 and
/// perplexity < (m - 1) / 3.
Projection tsne_project(const Eigen::MatrixXd& x, const TsneOptions& opts);

/// Symmetric-SNE input affinities (rows sum to 1/m jointly to 1).
Eigen::MatrixXd tsne_affinities(const Eigen::MatrixXd& x, double perplexity);
/// KL(P || Q) of a 2-D layout.
double tsne_kl(const Eigen::MatrixXd& p, const Eigen::MatrixXd& y);

/// Mean silhouette coefficient under Euclidean distance.
double silhouette_score(const Eigen::MatrixXd& points, const std::vector<int>& labels);

struct DensityGrid {
  std::string group;
  double x_min = 0, x_max = 0, y_min = 0, y_max = 0;
  double bandwidth_x = 0, bandwidth_y = 0;
  Eigen::MatrixXd density;  // resolution x resolution, row = y index
};

/// Gaussian KDE per group on a shared grid, bandwidth by Scott's rule.
std::vector<DensityGrid> density_grids(const Eigen::MatrixXd& points, const std::vector<std::string>& groups,
                                       int resolution = 32);

std::string projection_csv(const Eigen::MatrixXd& points, const std::vector<std::string>& labels,
                           const std::vector<std::string>& groups);
nlohmann::json density_json(const std::vector<DensityGrid>& grids);

}  // namespace hetdiar

#endif  // HETDIAR_PROJECTION_HPP
