#ifndef HETDIAR_VB_RESEG_HPP
#define HETDIAR_VB_RESEG_HPP

#include "hetdiar/features.hpp"
#include "hetdiar/metrics.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace hetdiar {

/// Diagonal-covariance GMM.
struct Ubm {
  Eigen::VectorXd weights;    // K
  Eigen::MatrixXd means;      // K x D
  Eigen::MatrixXd variances;  // K x D

  Eigen::Index num_components() const { return weights.size(); }
  Eigen::Index dim() const { return means.cols(); }

  /// T x K matrix of log(w_k N(x_t; mu_k, diag var_k)).
  Eigen::MatrixXd component_log_likelihoods(const Eigen::MatrixXd& frames) const;
  /// Per-frame log p(x_t) and component posteriors (T x K).
  Eigen::VectorXd posteriors(const Eigen::MatrixXd& frames, Eigen::MatrixXd& gamma) const;
  double average_log_likelihood(const Eigen::MatrixXd& frames) const;
};

/// EM for a diagonal GMM from a k-means initialisation. When `objective` is
/// non-null it receives the average per-frame log-likelihood before every
/// iteration and after the last one (iters + 1 values).
Ubm train_ubm(const Eigen::MatrixXd& frames, int num_components, int iters, std::uint64_t seed,
              std::vector<double>* objective = nullptr);

/// Zeroth and centred first-order Baum-Welch statistics.
struct SpeakerStats {
  Eigen::VectorXd zeroth;  // K
  Eigen::MatrixXd first;   // K x D, sum_t gamma_tk (x_t - mu_k)
};

SpeakerStats accumulate_stats(const Ubm& ubm, const Eigen::MatrixXd& frames);

struct EigenvoiceModel {
  Ubm ubm;
  Eigen::MatrixXd bases;  // (K*D) x R, component-major rows (k * D + d)

  Eigen::Index rank() const { return bases.cols(); }
};

/// Maximum-likelihood eigenvoice estimation (factor analysis on mean
/// supervectors), initialised from the principal directions of the
/// variance-normalised speaker offsets.
EigenvoiceModel train_eigenvoices(const Ubm& ubm, const std::vector<SpeakerStats>& per_speaker, int rank, int iters);

struct VbParams {
  int min_duration = 1;          // frames (after downsampling)
  double loop_probability = 0.9;
  int downsampling_factor = 25;
  int max_iterations = 10;

  void validate() const;
};

struct VbTrace {
  std::vector<double> elbo;  // one value per iteration
  std::vector<double> min_simplex_sum, max_simplex_sum;
  Eigen::MatrixXd responsibilities;  // final, speech frames x speakers
};

/// Variational-Bayes resegmentation of the speech regions of `init`.
DiarizationHypothesis vb_resegment(const FeatureMatrix& features, const DiarizationHypothesis& init,
                                   const EigenvoiceModel& model, const VbParams& params, VbTrace* trace = nullptr);

// HDVB: "HDVB", JSON header {K, D, R}, f64 blocks weights, means, variances, bases.
void save_vb_model(const std::filesystem::path& path, const EigenvoiceModel& model);
EigenvoiceModel load_vb_model(const std::filesystem::path& path);

}  // namespace hetdiar

#endif  // HETDIAR_VB_RESEG_HPP
