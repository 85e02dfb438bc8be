#ifndef HETDIAR_EMBEDDER_IMPL_HPP
#define HETDIAR_EMBEDDER_IMPL_HPP

// Template definitions for embedder.hpp.

#include "hetdiar/error.hpp"

#include <cmath>

namespace hetdiar {

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> log_softmax_rows(
    const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out = logits;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const Scalar peak = out.row(r).maxCoeff();
    out.row(r).array() -= peak;
    const Scalar lse = std::log(out.row(r).array().exp().sum());
    out.row(r).array() -= lse;
  }
  return out;
}

template <typename Derived, typename LabelDerived>
typename Derived::Scalar soft_cross_entropy(const Eigen::MatrixBase<Derived>& logits,
                                            const Eigen::MatrixBase<LabelDerived>& labels) {
  using Scalar = typename Derived::Scalar;
  if (logits.rows() != labels.rows() || logits.cols() != labels.cols())
    throw DataError("soft_cross_entropy: logits and labels differ in shape");
  if (logits.rows() == 0) throw DataError("soft_cross_entropy: empty batch");
  for (Eigen::Index r = 0; r < labels.rows(); ++r) {
    if ((labels.row(r).array() < Scalar(0)).any() ||
        std::abs(double(labels.row(r).sum()) - 1.0) > 1e-6)
      throw DataError("soft_cross_entropy: label row " + std::to_string(r) + " is not row-stochastic");
  }
  const auto logp = log_softmax_rows(logits);
  const Scalar total = -(logp.array() * labels.template cast<Scalar>().array()).sum();
  return total / Scalar(logits.rows());
}

}  // namespace hetdiar

#endif  // HETDIAR_EMBEDDER_IMPL_HPP
