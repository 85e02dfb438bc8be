#ifndef HETDIAR_PLDA_HPP
#define HETDIAR_PLDA_HPP

#include <Eigen/Dense>

#include <filesystem>
#include <vector>

namespace hetdiar {

/// Centering, whitening and length normalization.
struct EmbeddingPreprocessor {
  Eigen::VectorXd mean;
  Eigen::MatrixXd whitening;

  Eigen::Index dim() const { return mean.size(); }
};

/// Two-covariance PLDA: x = V h + e, h ~ N(0, I), e ~ N(0, noise_cov).
struct PldaModel {
  Eigen::MatrixXd loading;    // d x r (V)
  Eigen::MatrixXd noise_cov;  // d x d

  Eigen::Index dim() const { return loading.rows(); }
  Eigen::Index rank() const { return loading.cols(); }
};

inline constexpr double kWhiteningEigenFloor = 1e-8;

/// Mean and whitening from the (1/n) sample covariance. Eigenvalues below
/// kWhiteningEigenFloor are floored, with a warning.
EmbeddingPreprocessor fit_preprocessor(const Eigen::MatrixXd& embeddings);

/// whitening * (v - mean), scaled to unit length. Throws NumericError when
/// the whitened vector is zero.
Eigen::VectorXd preprocess(const EmbeddingPreprocessor& p, const Eigen::VectorXd& v);
Eigen::MatrixXd preprocess_rows(const EmbeddingPreprocessor& p, const Eigen::MatrixXd& embeddings);
/// Centering and whitening only (no length normalization).
Eigen::MatrixXd whiten_rows(const EmbeddingPreprocessor& p, const Eigen::MatrixXd& embeddings);

/// Initial V (top-r between-class eigenvectors scaled by sqrt eigenvalue) and
/// noise_cov (within-class scatter + 1e-6 I).
PldaModel init_plda(const Eigen::MatrixXd& embeddings, const std::vector<int>& speaker_ids, int rank);

/// Marginal log-likelihood of the data, speakers integrated out.
double plda_log_likelihood(const PldaModel& model, const Eigen::MatrixXd& embeddings,
                           const std::vector<int>& speaker_ids);

/// EM training. When `objective` is non-null it receives iters + 1 values:
/// the log-likelihood of the initial model and after every iteration.
PldaModel fit_plda(const Eigen::MatrixXd& embeddings, const std::vector<int>& speaker_ids, int rank, int iters,
                   std::vector<double>* objective = nullptr);

/// Same-vs-different speaker log-likelihood ratio for one pair.
double plda_llr(const PldaModel& model, const Eigen::VectorXd& x, const Eigen::VectorXd& y);

/// m x m symmetric matrix of pairwise LLRs (rows of `embeddings`).
Eigen::MatrixXd score_matrix(const PldaModel& model, const Eigen::MatrixXd& embeddings);

// HDPL: "HDPL", JSON header {embed_dim, r}, then f64 blocks mean, whitening, V, noise_cov.
void save_plda(const std::filesystem::path& path, const EmbeddingPreprocessor& pre, const PldaModel& model);
void load_plda(const std::filesystem::path& path, EmbeddingPreprocessor& pre, PldaModel& model);

}  // namespace hetdiar

#endif  // HETDIAR_PLDA_HPP
