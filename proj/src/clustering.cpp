#include "hetdiar/clustering.hpp"

#include "hetdiar/error.hpp"
#include "hetdiar/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>

namespace hetdiar {

Eigen::MatrixXd clustering_affinity(const Eigen::MatrixXd& similarity, ClusterMetric metric) {
  if (metric == ClusterMetric::kScore) return similarity;
  const Eigen::Index m = similarity.rows();
  Eigen::MatrixXd aff(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = i; j < m; ++j) aff(i, j) = aff(j, i) = -(similarity.row(i) - similarity.row(j)).norm();
  return aff;
}

std::vector<int> canonical_labels(const std::vector<int>& labels) {
  std::map<int, int> remap;
  std::vector<int> out;
  out.reserve(labels.size());
  for (int l : labels) {
    auto [it, inserted] = remap.emplace(l, static_cast<int>(remap.size()));
    out.push_back(it->second);
  }
  return out;
}

namespace {

struct Agglomeration {
  std::vector<int> labels;
  std::vector<double> merge_scores;
};

// Runs merges until `stop(num_clusters, best_score)` returns true.
template <typename Stop>
Agglomeration agglomerate(const Eigen::MatrixXd& sim, Stop stop) {
  const Eigen::Index m = sim.rows();
  if (m < 1 || sim.cols() != m) throw DataError("ahc: similarity matrix must be square and non-empty");
  if (!sim.allFinite()) throw DataError("ahc: similarity matrix has non-finite entries");
  if ((sim - sim.transpose()).cwiseAbs().maxCoeff() > 1e-6) throw DataError("ahc: similarity matrix not symmetric");

  // Clusters kept sorted by smallest member; sums(i, j) = total similarity.
  std::vector<std::vector<int>> members(m);
  for (Eigen::Index i = 0; i < m; ++i) members[i] = {static_cast<int>(i)};
  Eigen::MatrixXd sums = sim;
  Agglomeration out;
  while (members.size() > 1) {
    const auto n = static_cast<Eigen::Index>(members.size());
    double best = -std::numeric_limits<double>::infinity();
    Eigen::Index bi = -1, bj = -1;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double avg = sums(i, j) / (double(members[i].size()) * double(members[j].size()));
        if (avg > best) {
          best = avg;
          bi = i;
          bj = j;
        }
      }
    if (stop(members.size(), best)) break;
    out.merge_scores.push_back(best);
    members[bi].insert(members[bi].end(), members[bj].begin(), members[bj].end());
    members.erase(members.begin() + bj);
    sums.row(bi) += sums.row(bj);
    sums.col(bi) += sums.col(bj);
    // Drop row/column bj.
    const Eigen::Index tail = n - bj - 1;
    sums.block(bj, 0, tail, n) = sums.block(bj + 1, 0, tail, n).eval();
    sums.block(0, bj, n, tail) = sums.block(0, bj + 1, n, tail).eval();
    sums.conservativeResize(n - 1, n - 1);
  }
  out.labels.assign(m, 0);
  for (std::size_t c = 0; c < members.size(); ++c)
    for (int idx : members[c]) out.labels[idx] = static_cast<int>(c);
  out.labels = canonical_labels(out.labels);
  return out;
}

}  // namespace

std::vector<int> ahc(const Eigen::MatrixXd& similarity, const ClusteringConfig& cfg) {
  const Eigen::MatrixXd aff = clustering_affinity(similarity, cfg.metric);
  if (cfg.known_k) {
    const int k = *cfg.known_k;
    if (k < 1) throw UsageError("ahc: known_k must be >= 1");
    if (k > similarity.rows())
      throw DataError("ahc: known_k " + std::to_string(k) + " exceeds " + std::to_string(similarity.rows()) +
                      " segments");
    return agglomerate(aff, [k](std::size_t n, double) { return n <= static_cast<std::size_t>(k); }).labels;
  }
  const double thr = cfg.threshold;
  return agglomerate(aff, [thr](std::size_t, double best) { return best < thr; }).labels;
}

std::vector<double> merge_scores(const Eigen::MatrixXd& similarity, ClusterMetric metric) {
  return agglomerate(clustering_affinity(similarity, metric), [](std::size_t, double) { return false; })
      .merge_scores;
}

double segment_der(const std::vector<int>& reference, const std::vector<int>& hypothesis) {
  if (reference.size() != hypothesis.size()) throw DataError("segment_der: label lengths differ");
  DiarizationHypothesis ref{"dev", {}}, hyp{"dev", {}};
  for (std::size_t i = 0; i < reference.size(); ++i) {
    ref.intervals.push_back({double(i), double(i + 1), "r" + std::to_string(reference[i])});
    hyp.intervals.push_back({double(i), double(i + 1), "h" + std::to_string(hypothesis[i])});
  }
  return der(ref, hyp, 0.0);
}

ThresholdCalibration calibrate_threshold(const std::vector<DevSession>& dev, ClusterMetric metric) {
  if (dev.empty()) throw DataError("calibrate_threshold: empty dev set");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : dev) {
    if (static_cast<Eigen::Index>(s.reference.size()) != s.similarity.rows())
      throw DataError("calibrate_threshold: reference labels do not match matrix size");
    for (double v : merge_scores(s.similarity, metric)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!std::isfinite(lo)) lo = hi = 0.0;  // only single-segment sessions

  ThresholdCalibration cal;
  for (int g = 0; g < kThresholdGridPoints; ++g) {
    const double thr = lo + (hi - lo) * double(g) / double(kThresholdGridPoints - 1);
    double sum = 0.0;
    for (const auto& s : dev) {
      ClusteringConfig cfg = ClusteringConfig::with_threshold(thr);
      cfg.metric = metric;
      sum += segment_der(s.reference, ahc(s.similarity, cfg));
    }
    cal.grid.push_back(thr);
    cal.grid_der.push_back(sum / double(dev.size()));
  }
  const double best = *std::min_element(cal.grid_der.begin(), cal.grid_der.end());
  std::vector<std::size_t> optimal;
  for (std::size_t g = 0; g < cal.grid.size(); ++g)
    if (cal.grid_der[g] <= best) optimal.push_back(g);
  const std::size_t pick = optimal[optimal.size() / 2];
  cal.threshold = cal.grid[pick];
  cal.mean_der = cal.grid_der[pick];
  return cal;
}

}  // namespace hetdiar
