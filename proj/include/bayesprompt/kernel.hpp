#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bayesprompt/error.hpp"

namespace bayesprompt {

namespace detail {

template <typename DA, typename DB, typename Scalar>
void check_kernel_args(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b, Scalar h) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                "kernel arguments of size " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  if (!(h > Scalar(0))) throw Error(ErrorCode::NonPositiveBandwidth, "bandwidth must be > 0");
}

}  // namespace detail

/// exp(-||a - b||^2 / h)
template <typename DA, typename DB>
typename DA::Scalar rbf_kernel(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b,
                               typename DA::Scalar h) {
  detail::check_kernel_args(a, b, h);
  return std::exp(-(a.reshaped() - b.reshaped()).squaredNorm() / h);
}

/// Gradient of rbf_kernel with respect to its first argument.
template <typename DA, typename DB>
Eigen::Matrix<typename DA::Scalar, Eigen::Dynamic, 1> rbf_kernel_grad(const Eigen::MatrixBase<DA>& a,
                                                                      const Eigen::MatrixBase<DB>& b,
                                                                      typename DA::Scalar h) {
  using Scalar = typename DA::Scalar;
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> diff = a.reshaped() - b.reshaped();
  return (Scalar(-2) / h) * rbf_kernel(a, b, h) * diff;
}

/// Squared Euclidean distances between all rows of `x`.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> pairwise_sq_distances(
    const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = x.rows();
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> d2(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d2(i, i) = Scalar(0);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      d2(i, j) = d2(j, i) = (x.row(i) - x.row(j)).squaredNorm();
    }
  }
  return d2;
}

/// Median heuristic over the rows of `particles`: median squared pairwise
/// distance divided by ln(M + 1). Falls back to 1 for fewer than two rows or
/// when every particle coincides.
template <typename Derived>
typename Derived::Scalar median_bandwidth(const Eigen::MatrixBase<Derived>& particles) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index m = particles.rows();
  if (m < 2) return Scalar(1);
  std::vector<Scalar> d2;
  d2.reserve(static_cast<std::size_t>(m * (m - 1) / 2));
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i + 1; j < m; ++j) d2.push_back((particles.row(i) - particles.row(j)).squaredNorm());
  }
  const std::size_t mid = d2.size() / 2;
  std::nth_element(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(mid), d2.end());
  Scalar median = d2[mid];
  if (d2.size() % 2 == 0) {
    const Scalar lower = *std::max_element(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(mid));
    median = (median + lower) / Scalar(2);
  }
  if (!(median > Scalar(0))) return Scalar(1);
  return median / std::log(static_cast<Scalar>(m + 1));
}

namespace detail {

template <typename DA, typename DB>
typename DA::Scalar kernel_sum(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b,
                               typename DA::Scalar h, bool skip_diagonal) {
  using Scalar = typename DA::Scalar;
  Scalar total(0);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      if (skip_diagonal && i == j) continue;
      total += std::exp(-(a.row(i) - b.row(j)).squaredNorm() / h);
    }
  }
  return total;
}

template <typename DA, typename DB, typename Scalar>
void check_mmd_args(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b, Scalar h) {
  if (a.rows() == 0 || b.rows() == 0) throw Error(ErrorCode::EmptyParticleSet, "MMD needs nonempty samples");
  if (a.cols() != b.cols()) throw Error(ErrorCode::DimensionMismatch, "MMD samples differ in dimension");
  if (!(h > Scalar(0))) throw Error(ErrorCode::NonPositiveBandwidth, "bandwidth must be > 0");
}

}  // namespace detail

/// Unbiased MMD^2 between the row samples `a` and `b` under rbf_kernel(h).
/// A sample with a single row contributes no within-sample pairs.
template <typename DA, typename DB>
typename DA::Scalar mmd(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b, typename DA::Scalar h) {
  using Scalar = typename DA::Scalar;
  detail::check_mmd_args(a, b, h);
  const auto m = static_cast<Scalar>(a.rows());
  const auto n = static_cast<Scalar>(b.rows());
  const Scalar aa = a.rows() > 1 ? detail::kernel_sum(a, a, h, true) / (m * (m - 1)) : Scalar(0);
  const Scalar bb = b.rows() > 1 ? detail::kernel_sum(b, b, h, true) / (n * (n - 1)) : Scalar(0);
  const Scalar ab = detail::kernel_sum(a, b, h, false) / (m * n);
  return aa + bb - Scalar(2) * ab;
}

/// Biased (V-statistic) MMD^2; nonnegative up to rounding.
template <typename DA, typename DB>
typename DA::Scalar mmd_biased(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b,
                               typename DA::Scalar h) {
  using Scalar = typename DA::Scalar;
  detail::check_mmd_args(a, b, h);
  const auto m = static_cast<Scalar>(a.rows());
  const auto n = static_cast<Scalar>(b.rows());
  return detail::kernel_sum(a, a, h, false) / (m * m) + detail::kernel_sum(b, b, h, false) / (n * n) -
         Scalar(2) * detail::kernel_sum(a, b, h, false) / (m * n);
}

/// Fixed reference sample with its within-sample kernel term cached, for
/// repeated unbiased MMD^2 evaluations against a moving particle set.
struct MmdReference {
  Eigen::MatrixXd samples;
  double bandwidth = 1.0;
  double self_term = 0.0;
};

MmdReference make_mmd_reference(Eigen::MatrixXd samples, double bandwidth);

double mmd_to_reference(const Eigen::MatrixXd& particles, const MmdReference& reference);

}  // namespace bayesprompt
