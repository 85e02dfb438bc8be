#include <doctest.h>

#include "hetdiar/clustering.hpp"
#include "hetdiar/error.hpp"
#include "hetdiar/rng.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <set>

using namespace hetdiar;

namespace {

Eigen::MatrixXd random_similarity(int m, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd s(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = i; j < m; ++j) s(i, j) = s(j, i) = rng.normal();
  return s;
}

// Speakers with within-score `within` and across-score `across`, plus noise.
Eigen::MatrixXd block_similarity(const std::vector<int>& who, double within, double across, double noise,
                                 std::uint64_t seed) {
  Rng rng(seed);
  const int m = int(who.size());
  Eigen::MatrixXd s(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = i; j < m; ++j) s(i, j) = s(j, i) = (who[i] == who[j] ? within : across) + noise * rng.normal();
  return s;
}

// Naive average linkage: recompute every cluster-pair mean from the raw
// matrix on each step. Clusters are kept sorted by smallest member.
struct Naive {
  std::vector<int> labels;
  std::vector<double> scores;
};

Naive naive_ahc(const Eigen::MatrixXd& s, int stop_k, double threshold, bool use_k) {
  const int m = int(s.rows());
  std::vector<std::vector<int>> clusters;
  for (int i = 0; i < m; ++i) clusters.push_back({i});
  Naive out;
  while (clusters.size() > 1) {
    if (use_k && int(clusters.size()) <= stop_k) break;
    double best = -std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 1;
    for (std::size_t i = 0; i < clusters.size(); ++i)
      for (std::size_t j = i + 1; j < clusters.size(); ++j) {
        double sum = 0;
        for (int a : clusters[i])
          for (int b : clusters[j]) sum += s(a, b);
        const double avg = sum / double(clusters[i].size() * clusters[j].size());
        if (avg > best) {
          best = avg;
          bi = i;
          bj = j;
        }
      }
    if (!use_k && best < threshold) break;
    out.scores.push_back(best);
    clusters[bi].insert(clusters[bi].end(), clusters[bj].begin(), clusters[bj].end());
    std::sort(clusters[bi].begin(), clusters[bi].end());
    clusters.erase(clusters.begin() + std::ptrdiff_t(bj));
    std::sort(clusters.begin(), clusters.end(), [](const auto& x, const auto& y) { return x.front() < y.front(); });
  }
  out.labels.assign(m, -1);
  for (std::size_t c = 0; c < clusters.size(); ++c)
    for (int i : clusters[c]) out.labels[i] = int(c);
  return out;
}

// Partition as a set of member sets, for comparisons up to renaming.
std::set<std::set<int>> partition(const std::vector<int>& labels) {
  std::map<int, std::set<int>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].insert(int(i));
  std::set<std::set<int>> out;
  for (auto& [k, v] : groups) out.insert(v);
  return out;
}

int num_clusters(const std::vector<int>& labels) { return int(std::set<int>(labels.begin(), labels.end()).size()); }

}  // namespace

TEST_SUITE("clustering") {
  TEST_CASE("known_k extremes") {
    Eigen::MatrixXd s = random_similarity(6, 1);
    auto singles = ahc(s, ClusteringConfig::with_known_k(6));
    CHECK(singles == std::vector<int>{0, 1, 2, 3, 4, 5});
    auto one = ahc(s, ClusteringConfig::with_known_k(1));
    CHECK(one == std::vector<int>(6, 0));
    CHECK_THROWS_AS(ahc(s, ClusteringConfig::with_known_k(7)), DataError);
    CHECK(ahc(Eigen::MatrixXd::Constant(1, 1, 2.0), ClusteringConfig::with_known_k(1)) == std::vector<int>{0});
  }

  TEST_CASE("block-diagonal similarity: AHC matches the best 2-partition") {
    std::vector<int> who{0, 1, 0, 0, 1, 1, 0, 1};
    Eigen::MatrixXd s = block_similarity(who, 10.0, -10.0, 0.5, 2);
    auto labels = ahc(s, ClusteringConfig::with_known_k(2));
    // Exhaustive search over all 2-partitions for the largest within-cluster score sum.
    const int m = int(who.size());
    double best = -1e300;
    std::vector<int> best_labels;
    for (int mask = 1; mask < (1 << (m - 1)); ++mask) {
      std::vector<int> l(m);
      for (int i = 0; i < m; ++i) l[i] = (mask >> i) & 1;
      double sum = 0;
      for (int i = 0; i < m; ++i)
        for (int j = i + 1; j < m; ++j)
          if (l[i] == l[j]) sum += s(i, j);
      if (sum > best) {
        best = sum;
        best_labels = l;
      }
    }
    CHECK(partition(labels) == partition(best_labels));
    CHECK(partition(labels) == partition(who));
    CHECK(labels.front() == 0);
  }

  TEST_CASE("AHC agrees with a naive average-linkage oracle") {
    for (int k = 0; k < 30; ++k) {
      const int m = 3 + k % 10;
      Eigen::MatrixXd s = random_similarity(m, 100 + k);
      for (int stop = 1; stop <= m; stop += 2) {
        CHECK(partition(ahc(s, ClusteringConfig::with_known_k(stop))) == partition(naive_ahc(s, stop, 0, true).labels));
      }
      const double thr = 0.1 * (k % 7) - 0.3;
      CHECK(partition(ahc(s, ClusteringConfig::with_threshold(thr))) == partition(naive_ahc(s, 0, thr, false).labels));
      auto scores = merge_scores(s);
      auto oracle = naive_ahc(s, 1, 0, true).scores;
      REQUIRE(scores.size() == oracle.size());
      for (std::size_t i = 0; i < scores.size(); ++i) CHECK(scores[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
    }
  }

  TEST_CASE("labels are first-occurrence ordered and canonical_labels agrees") {
    Eigen::MatrixXd s = random_similarity(12, 3);
    auto labels = ahc(s, ClusteringConfig::with_known_k(4));
    int next = 0;
    std::map<int, int> seen;
    for (int l : labels) {
      if (!seen.count(l)) seen[l] = next++;
      CHECK(seen[l] == l);
    }
    CHECK(canonical_labels({5, 5, 2, 9, 2}) == std::vector<int>{0, 0, 1, 2, 1});
  }

  TEST_CASE("permutation equivariance") {
    for (int k = 0; k < 10; ++k) {
      const int m = 9;
      Eigen::MatrixXd s = random_similarity(m, 200 + k);
      std::vector<int> perm(m);
      std::iota(perm.begin(), perm.end(), 0);
      Rng rng(k);
      for (int i = m - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(0, i)]);
      Eigen::MatrixXd p(m, m);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) p(i, j) = s(perm[i], perm[j]);
      auto a = ahc(s, ClusteringConfig::with_known_k(3));
      auto b = ahc(p, ClusteringConfig::with_known_k(3));
      std::vector<int> back(m);
      for (int i = 0; i < m; ++i) back[perm[i]] = b[i];
      CHECK(partition(a) == partition(back));
    }
  }

  TEST_CASE("ties resolve to the smallest cluster pair, deterministically") {
    Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(5, 5, 1.0);
    auto a = ahc(flat, ClusteringConfig::with_known_k(2));
    CHECK(a == std::vector<int>{0, 0, 0, 0, 1});
    CHECK(ahc(flat, ClusteringConfig::with_known_k(2)) == a);
    CHECK(naive_ahc(flat, 2, 0, true).labels == a);
  }

  TEST_CASE("lowering the threshold never adds clusters") {
    Eigen::MatrixXd s = random_similarity(15, 4);
    int prev = 0;
    for (double t = 3.0; t >= -3.0; t -= 0.05) {
      const int n = num_clusters(ahc(s, ClusteringConfig::with_threshold(t)));
      if (prev > 0) CHECK(n <= prev);
      prev = n;
    }
    CHECK(prev == 1);
  }

  TEST_CASE("row-distance affinity is negative Euclidean distance between rows") {
    Eigen::MatrixXd s = random_similarity(6, 5);
    Eigen::MatrixXd a = clustering_affinity(s, ClusterMetric::kRowDistance);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) CHECK(a(i, j) == doctest::Approx(-(s.row(i) - s.row(j)).norm()).epsilon(1e-12));
    CHECK(clustering_affinity(s, ClusterMetric::kScore) == s);
    std::vector<int> who{0, 0, 1, 1, 2, 2, 0, 1};
    ClusteringConfig c = ClusteringConfig::with_known_k(3);
    c.metric = ClusterMetric::kRowDistance;
    CHECK(partition(ahc(block_similarity(who, 5, -5, 0.3, 1), c)) == partition(who));
  }

  TEST_CASE("segment_der hand cases") {
    CHECK(segment_der({0, 0, 1, 1}, {3, 3, 7, 7}) == doctest::Approx(0.0));
    CHECK(segment_der({0, 0, 1, 1}, {0, 0, 0, 0}) == doctest::Approx(0.5));
    CHECK(segment_der({0, 0, 0, 0, 0, 0, 0, 0, 0, 1}, {0, 0, 0, 0, 0, 0, 0, 0, 0, 0}) == doctest::Approx(0.1));
  }

  TEST_CASE("calibration: flat objective returns a grid point") {
    DevSession d{Eigen::MatrixXd::Constant(1, 1, 0.0), {0}};
    ThresholdCalibration c = calibrate_threshold({d});
    CHECK(c.grid.size() == kThresholdGridPoints);
    CHECK(c.mean_der == 0.0);
    CHECK(std::find(c.grid.begin(), c.grid.end(), c.threshold) != c.grid.end());
    CHECK_THROWS_AS(calibrate_threshold({}), DataError);
  }

  TEST_CASE("calibration recovers speaker counts on separated sessions") {
    std::vector<int> two{0, 0, 1, 1, 0, 1, 0, 1, 1, 0};
    std::vector<int> three{0, 1, 2, 0, 1, 2, 2, 1, 0, 0, 1, 2};
    std::vector<DevSession> dev{{block_similarity(two, 8, -8, 1, 1), two}, {block_similarity(three, 8, -8, 1, 2), three}};
    ThresholdCalibration c = calibrate_threshold(dev);
    CHECK(num_clusters(ahc(dev[0].similarity, ClusteringConfig::with_threshold(c.threshold))) == 2);
    CHECK(num_clusters(ahc(dev[1].similarity, ClusteringConfig::with_threshold(c.threshold))) == 3);
    CHECK(c.mean_der == 0.0);
  }

  TEST_CASE("calibrating on the evaluation session attains the grid minimum") {
    std::vector<int> who{0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 0, 1, 1, 2};
    DevSession d{block_similarity(who, 1, -1, 1.2, 9), who};
    ThresholdCalibration c = calibrate_threshold({d});
    auto scores = merge_scores(d.similarity);
    const double lo = *std::min_element(scores.begin(), scores.end());
    const double hi = *std::max_element(scores.begin(), scores.end());
    double best = 1e9;
    for (int g = 0; g < kThresholdGridPoints; ++g) {
      const double t = lo + (hi - lo) * g / double(kThresholdGridPoints - 1);
      best = std::min(best, segment_der(who, ahc(d.similarity, ClusteringConfig::with_threshold(t))));
    }
    CHECK(segment_der(who, ahc(d.similarity, ClusteringConfig::with_threshold(c.threshold))) == doctest::Approx(best));
    CHECK(c.mean_der == doctest::Approx(best));
  }

  TEST_CASE("asymmetric input is rejected") {
    Eigen::MatrixXd s = random_similarity(4, 1);
    s(0, 1) += 1.0;
    CHECK_THROWS_AS(ahc(s, ClusteringConfig::with_known_k(2)), DataError);
  }
}
