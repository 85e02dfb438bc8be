#ifndef HETDIAR_CLUSTERING_HPP
#define HETDIAR_CLUSTERING_HPP

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace hetdiar {

enum class Linkage { kAverage };

/// kScore clusters on the similarity matrix itself; kRowDistance treats each
/// row as a vector and uses negative Euclidean distance between rows.
enum class ClusterMetric { kScore, kRowDistance };

struct ClusteringConfig {
  std::optional<int> known_k;  // stop at this many clusters when set
  double threshold = 0.0;      // otherwise stop when best merge score < threshold
  Linkage linkage = Linkage::kAverage;
  ClusterMetric metric = ClusterMetric::kScore;

  static ClusteringConfig with_known_k(int k) {
    ClusteringConfig c;
    c.known_k = k;
    return c;
  }
  static ClusteringConfig with_threshold(double t) {
    ClusteringConfig c;
    c.threshold = t;
    return c;
  }
};

/// Similarity the AHC actually merges on (identity for kScore).
Eigen::MatrixXd clustering_affinity(const Eigen::MatrixXd& similarity, ClusterMetric metric);

/// Average-linkage agglomerative clustering. Ties go to the lexicographically
/// smallest (i, j) pair of clusters ordered by their smallest member.
/// Labels are 0-based in order of first occurrence.
std::vector<int> ahc(const Eigen::MatrixXd& similarity, const ClusteringConfig& cfg);

/// Scores of the m - 1 merges of a full agglomeration, in merge order.
std::vector<double> merge_scores(const Eigen::MatrixXd& similarity, ClusterMetric metric = ClusterMetric::kScore);

/// Relabels to 0-based first-occurrence order.
std::vector<int> canonical_labels(const std::vector<int>& labels);

struct DevSession {
  Eigen::MatrixXd similarity;
  std::vector<int> reference;  // per-segment reference speaker
};

/// DER of a per-segment labelling, each segment counting one time unit.
double segment_der(const std::vector<int>& reference, const std::vector<int>& hypothesis);

struct ThresholdCalibration {
  double threshold = 0.0;
  double mean_der = 0.0;
  std::vector<double> grid;
  std::vector<double> grid_der;
};

inline constexpr int kThresholdGridPoints = 64;

/// Grid search over 64 thresholds evenly spaced between the smallest and
/// largest merge scores seen on the dev sessions. Among grid points with
/// minimal mean DER, the middle one is returned.
ThresholdCalibration calibrate_threshold(const std::vector<DevSession>& dev,
                                         ClusterMetric metric = ClusterMetric::kScore);

}  // namespace hetdiar

#endif  // HETDIAR_CLUSTERING_HPP
