#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bayesprompt/embedding_store.hpp"
#include "bayesprompt/error.hpp"

namespace bayesprompt {

/// Diagonal-covariance Gaussian mixture. Row c of `means` / `variances`
/// describes component c; `weights` is a simplex over components.
template <typename Scalar>
struct GaussianMixture {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Matrix means;
  Matrix variances;
  Vector weights;

  Eigen::Index n_components() const noexcept { return means.rows(); }
  Eigen::Index dim() const noexcept { return means.cols(); }

  template <typename Other>
  GaussianMixture<Other> cast() const {
    return {means.template cast<Other>(), variances.template cast<Other>(), weights.template cast<Other>()};
  }
};

using GmmParams = GaussianMixture<double>;

/// Throws InvalidConfig when shapes disagree, weights leave the simplex
/// (1e-9) or a variance is not strictly positive.
void validate(const GmmParams& params);

namespace detail {

template <typename Scalar, typename Derived>
void check_point(const GaussianMixture<Scalar>& params, const Eigen::MatrixBase<Derived>& z) {
  if (z.size() != params.dim()) {
    throw Error(ErrorCode::DimensionMismatch, "point has dimension " + std::to_string(z.size()) +
                                                  ", mixture has " + std::to_string(params.dim()));
  }
}

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  const Scalar top = v.maxCoeff();
  if (!std::isfinite(top)) return top;
  return top + std::log((v.array() - top).exp().sum());
}

}  // namespace detail

/// log(pi_c) + log N(z; mu_c, diag var_c) for every component c.
template <typename Scalar, typename Derived>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> component_log_densities(const GaussianMixture<Scalar>& params,
                                                                  const Eigen::MatrixBase<Derived>& z) {
  detail::check_point(params, z);
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> zc = z.reshaped();
  const Scalar log_two_pi = std::log(Scalar(2) * std::numbers::pi_v<Scalar>);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(params.n_components());
  for (Eigen::Index c = 0; c < params.n_components(); ++c) {
    const auto var = params.variances.row(c).array();
    const auto diff = zc.transpose().array() - params.means.row(c).array();
    const Scalar quad = (diff.square() / var).sum();
    const Scalar log_det = var.log().sum();
    out(c) = std::log(params.weights(c)) - Scalar(0.5) * (quad + log_det + Scalar(params.dim()) * log_two_pi);
  }
  return out;
}

/// log sum_c pi_c N(z; mu_c, diag var_c), evaluated with log-sum-exp.
template <typename Scalar, typename Derived>
Scalar gmm_log_density(const GaussianMixture<Scalar>& params, const Eigen::MatrixBase<Derived>& z) {
  return detail::log_sum_exp(component_log_densities(params, z));
}

/// Posterior component probabilities at z, normalized in log space.
template <typename Scalar, typename Derived>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> gmm_responsibilities(const GaussianMixture<Scalar>& params,
                                                               const Eigen::MatrixBase<Derived>& z) {
  auto logs = component_log_densities(params, z);
  const Scalar total = detail::log_sum_exp(logs);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> r = (logs.array() - total).exp();
  return r / r.sum();
}

/// Gradient of gmm_log_density: sum_c r_c(z) (mu_c - z) / var_c.
template <typename Scalar, typename Derived>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> gmm_score(const GaussianMixture<Scalar>& params,
                                                    const Eigen::MatrixBase<Derived>& z) {
  const auto r = gmm_responsibilities(params, z);
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> zc = z.reshaped();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> g = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(params.dim());
  for (Eigen::Index c = 0; c < params.n_components(); ++c) {
    g.array() += r(c) * (params.means.row(c).transpose().array() - zc.array()) /
                 params.variances.row(c).transpose().array();
  }
  return g;
}

enum class GmmInit { ClassMeans, KMeansPlusPlus };

struct EmConfig {
  int max_iters = 200;
  double tol = 1e-6;
  /// Relative to the per-column data variance (absolute when a column is constant).
  double variance_floor = 1e-6;
  GmmInit init = GmmInit::ClassMeans;
  std::uint64_t seed = 0;
};

void validate(const EmConfig& config);

struct GmmFit {
  GmmParams params;
  /// Mean per-sample log-likelihood; the last entry belongs to `params`.
  std::vector<double> log_likelihood;
  int iterations = 0;
  bool converged = false;
  GmmInit init_used = GmmInit::ClassMeans;
  int reseeded_components = 0;
};

/// EM fit of an `n_components`-component diagonal mixture to the rows of
/// `data.vectors`. Class-means init needs n_components == number of
/// relation names with every class present; otherwise k-means++ seeding is
/// used. A single component is fitted in closed form.
/// Throws TooFewSamples when there are fewer rows than components.
GmmFit fit_gmm(const EmbeddingSet& data, std::size_t n_components, const EmConfig& config);

/// JSON `{"means": [[..]], "variances": [[..]], "weights": [..]}`.
void save_gmm(const GmmParams& params, const std::filesystem::path& path);
GmmParams load_gmm(const std::filesystem::path& path);

}  // namespace bayesprompt
