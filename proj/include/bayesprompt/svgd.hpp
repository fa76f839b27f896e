#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bayesprompt/error.hpp"
#include "bayesprompt/gmm.hpp"
#include "bayesprompt/kernel.hpp"

namespace bayesprompt {

/// Particle matrix (one particle per row) at SVGD iteration `iteration`.
template <typename Scalar>
struct ParticleSet {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> particles;
  std::size_t iteration = 0;

  Eigen::Index size() const noexcept { return particles.rows(); }
  Eigen::Index dim() const noexcept { return particles.cols(); }
};

using Particles = ParticleSet<double>;

/// Stein direction phi for every particle, evaluated against the current
/// (pre-step) set:
///   phi(x) = 1/M sum_j [k(x_j, x) score(x_j) + grad_{x_j} k(x_j, x)].
/// `scores` holds score(x_j) in row j.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> stein_direction(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& x,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& scores, Scalar h) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  if (!(h > Scalar(0))) throw Error(ErrorCode::NonPositiveBandwidth, "bandwidth must be > 0");
  const Eigen::Index m = x.rows();
  const Matrix k = (-pairwise_sq_distances(x).array() / h).exp().matrix();
  // grad_{x_j} k(x_j, x_i) = (2/h)(x_i - x_j) k_ij, summed over j.
  const Matrix repulsion = (Scalar(2) / h) * (x.array().colwise() * k.rowwise().sum().array()).matrix() -
                           (Scalar(2) / h) * (k * x);
  return (k * scores + repulsion) / static_cast<Scalar>(m);
}

template <typename Scalar, typename ScoreFn>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> score_rows(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& x, ScoreFn&& score) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> s(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    s.row(i) = score(Eigen::Matrix<Scalar, Eigen::Dynamic, 1>(x.row(i).transpose())).transpose();
  }
  return s;
}

namespace detail {

template <typename Scalar>
void require_finite_particles(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& x,
                              std::size_t iteration) {
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (!x.row(i).allFinite()) {
      throw Error(ErrorCode::NonFiniteUpdate, "particle " + std::to_string(i) + " became non-finite at iteration " +
                                                  std::to_string(iteration));
    }
  }
}

}  // namespace detail

/// One synchronous SVGD update with fixed step `step`:
/// x_m <- x_m + step * phi(x_m).
template <typename Scalar, typename ScoreFn>
ParticleSet<Scalar> svgd_step(const ParticleSet<Scalar>& current, ScoreFn&& score, Scalar h, Scalar step) {
  if (current.size() < 1) throw Error(ErrorCode::EmptyParticleSet, "SVGD needs at least one particle");
  if (!(step > Scalar(0))) throw Error(ErrorCode::InvalidConfig, "step size must be > 0");
  const auto scores = score_rows(current.particles, score);
  ParticleSet<Scalar> next;
  next.particles = current.particles + step * stein_direction(current.particles, scores, h);
  next.iteration = current.iteration + 1;
  detail::require_finite_particles(next.particles, next.iteration);
  return next;
}

enum class StepMode { Fixed, Adagrad };

struct SvgdConfig {
  int n_iters = 500;
  double base_step = 0.1;
  StepMode step_mode = StepMode::Adagrad;
  /// Weight on the accumulated squared direction in adagrad mode.
  double adagrad_decay = 0.9;
  /// Fixed kernel bandwidth; median heuristic every iteration when empty.
  std::optional<double> bandwidth;
  /// SVGD itself is deterministic; kept so configs round-trip unchanged.
  std::uint64_t seed = 0;
  /// Iterations between MMD evaluations when a reference is supplied.
  int mmd_every = 50;
};

void validate(const SvgdConfig& config);

struct SvgdTraceRow {
  std::size_t iteration = 0;
  double mean_phi_norm = 0.0;
  double bandwidth = 0.0;
  double mmd = std::numeric_limits<double>::quiet_NaN();
};

struct SvgdResult {
  Particles particles;
  std::vector<SvgdTraceRow> trace;
};

/// Transports `init` toward an arbitrary target given by its score.
SvgdResult svgd_run(const Particles& init, const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& score,
                    const SvgdConfig& config, const MmdReference* reference = nullptr);

/// Transports `init` toward the mixture `target`.
SvgdResult svgd_run(const Particles& init, const GmmParams& target, const SvgdConfig& config,
                    const MmdReference* reference = nullptr);

/// BPEM payload plus sidecar `{"kind": "particles", "iteration": n}`.
void save_particles(const Particles& particles, const std::filesystem::path& path);
Particles load_particles(const std::filesystem::path& path);

/// CSV with header `iter,mean_phi_norm,bandwidth,mmd`; MMD is empty on rows
/// where it was not evaluated.
void write_svgd_trace(const std::vector<SvgdTraceRow>& trace, const std::filesystem::path& path);

}  // namespace bayesprompt
