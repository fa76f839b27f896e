#include "bayesprompt/svgd.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

#include "bayesprompt/embedding_store.hpp"
#include "json_io.hpp"

namespace bayesprompt {

MmdReference make_mmd_reference(Eigen::MatrixXd samples, double bandwidth) {
  if (samples.rows() < 2) throw Error(ErrorCode::EmptyParticleSet, "MMD reference needs >= 2 samples");
  if (!(bandwidth > 0.0)) throw Error(ErrorCode::NonPositiveBandwidth, "bandwidth must be > 0");
  MmdReference ref;
  const auto n = static_cast<double>(samples.rows());
  ref.self_term = detail::kernel_sum(samples, samples, bandwidth, true) / (n * (n - 1));
  ref.samples = std::move(samples);
  ref.bandwidth = bandwidth;
  return ref;
}

double mmd_to_reference(const Eigen::MatrixXd& particles, const MmdReference& reference) {
  detail::check_mmd_args(particles, reference.samples, reference.bandwidth);
  const auto m = static_cast<double>(particles.rows());
  const auto n = static_cast<double>(reference.samples.rows());
  const double pp =
      particles.rows() > 1 ? detail::kernel_sum(particles, particles, reference.bandwidth, true) / (m * (m - 1)) : 0.0;
  const double pr = detail::kernel_sum(particles, reference.samples, reference.bandwidth, false) / (m * n);
  return pp + reference.self_term - 2.0 * pr;
}

void validate(const SvgdConfig& config) {
  if (config.n_iters < 0) throw Error(ErrorCode::InvalidConfig, "n_iters must be >= 0");
  if (!(config.base_step > 0.0)) throw Error(ErrorCode::InvalidConfig, "base_step must be > 0");
  if (!(config.adagrad_decay > 0.0 && config.adagrad_decay <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "adagrad_decay must lie in (0, 1]");
  }
  if (config.bandwidth && !(*config.bandwidth > 0.0)) {
    throw Error(ErrorCode::NonPositiveBandwidth, "fixed bandwidth must be > 0");
  }
  if (config.mmd_every < 1) throw Error(ErrorCode::InvalidConfig, "mmd_every must be >= 1");
}

SvgdResult svgd_run(const Particles& init, const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& score,
                    const SvgdConfig& config, const MmdReference* reference) {
  validate(config);
  if (init.size() < 1) throw Error(ErrorCode::EmptyParticleSet, "SVGD needs at least one particle");
  detail::require_finite_particles(init.particles, init.iteration);

  constexpr double kFudge = 1e-6;
  SvgdResult result{init, {}};
  Eigen::MatrixXd& x = result.particles.particles;
  Eigen::MatrixXd history = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  result.trace.reserve(static_cast<std::size_t>(config.n_iters));

  for (int it = 0; it < config.n_iters; ++it) {
    const double h = config.bandwidth ? *config.bandwidth : median_bandwidth(x);
    const Eigen::MatrixXd phi = stein_direction(x, score_rows(x, score), h);

    if (config.step_mode == StepMode::Fixed) {
      x += config.base_step * phi;
    } else {
      if (it == 0) {
        history = phi.array().square();
      } else {
        history = config.adagrad_decay * history.array() + (1.0 - config.adagrad_decay) * phi.array().square();
      }
      x.array() += config.base_step * phi.array() / (kFudge + history.array().sqrt());
    }
    ++result.particles.iteration;
    detail::require_finite_particles(x, result.particles.iteration);

    SvgdTraceRow row;
    row.iteration = result.particles.iteration;
    row.mean_phi_norm = phi.rowwise().norm().mean();
    row.bandwidth = h;
    if (reference && (it + 1) % config.mmd_every == 0) row.mmd = mmd_to_reference(x, *reference);
    result.trace.push_back(row);
  }
  return result;
}

SvgdResult svgd_run(const Particles& init, const GmmParams& target, const SvgdConfig& config,
                    const MmdReference* reference) {
  validate(target);
  if (init.dim() != target.dim()) {
    throw Error(ErrorCode::DimensionMismatch, "particles and target differ in dimension");
  }
  return svgd_run(
      init, [&target](const Eigen::VectorXd& z) { return gmm_score(target, z); }, config, reference);
}

void save_particles(const Particles& particles, const std::filesystem::path& path) {
  write_bpem_matrix(particles.particles, path);
  detail::write_json({{"kind", "particles"}, {"iteration", particles.iteration}}, sidecar_path(path));
}

Particles load_particles(const std::filesystem::path& path) {
  Particles p;
  p.particles = read_bpem_matrix(path);
  const auto meta = detail::read_json(sidecar_path(path));
  try {
    p.iteration = meta.at("iteration").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::IoFailure, "malformed particle metadata for " + path.string() + ": " + e.what());
  }
  if (p.size() < 1) throw Error(ErrorCode::EmptyParticleSet, path.string() + " holds no particles");
  return p;
}

void write_svgd_trace(const std::vector<SvgdTraceRow>& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write trace " + path.string());
  out << "iter,mean_phi_norm,bandwidth,mmd\n" << std::setprecision(17);
  for (const auto& r : trace) {
    out << r.iteration << ',' << r.mean_phi_norm << ',' << r.bandwidth << ',';
    if (!std::isnan(r.mmd)) out << r.mmd;
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::IoFailure, "trace write failed: " + path.string());
}

}  // namespace bayesprompt
