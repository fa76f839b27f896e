#include "bayesprompt/gmm.hpp"

#include <algorithm>
#include <limits>
#include <random>

#include "bayesprompt/seed.hpp"
#include "json_io.hpp"

namespace bayesprompt {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

VectorXd column_variance(const MatrixXd& x) {
  const VectorXd mean = x.colwise().mean().transpose();
  return (x.rowwise() - mean.transpose()).array().square().colwise().mean().transpose();
}

VectorXd variance_floor(const MatrixXd& x, double relative) {
  VectorXd floor = relative * column_variance(x);
  for (Index j = 0; j < floor.size(); ++j) {
    if (!(floor(j) > 0.0)) floor(j) = relative;
  }
  return floor;
}

GmmParams single_component(const MatrixXd& x, const VectorXd& floor) {
  GmmParams p;
  p.means = x.colwise().mean();
  p.variances = column_variance(x).cwiseMax(floor).transpose();
  p.weights = VectorXd::Ones(1);
  return p;
}

bool class_means_possible(const EmbeddingSet& data, std::size_t k) {
  if (k != data.n_classes()) return false;
  std::vector<std::size_t> counts(k, 0);
  for (auto l : data.labels) ++counts[l];
  return std::all_of(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; });
}

GmmParams init_class_means(const EmbeddingSet& data, const VectorXd& floor) {
  const auto k = static_cast<Index>(data.n_classes());
  const auto m = static_cast<double>(data.size());
  GmmParams p;
  p.means.resize(k, data.vectors.cols());
  p.variances.resize(k, data.vectors.cols());
  p.weights.resize(k);
  for (Index c = 0; c < k; ++c) {
    const auto rows = data.members_of(static_cast<std::size_t>(c));
    const MatrixXd members = data.vectors(rows, Eigen::all);
    p.means.row(c) = members.colwise().mean();
    p.variances.row(c) = column_variance(members).cwiseMax(floor).transpose();
    p.weights(c) = static_cast<double>(rows.size()) / m;
  }
  return p;
}

GmmParams init_kmeans_pp(const MatrixXd& x, Index k, const VectorXd& floor, std::uint64_t seed) {
  auto rng = make_rng(seed, "gmm-kmeans++");
  const Index n = x.rows();
  std::vector<Index> chosen;
  std::uniform_int_distribution<Index> first(0, n - 1);
  chosen.push_back(first(rng));
  VectorXd d2 = (x.rowwise() - x.row(chosen[0])).rowwise().squaredNorm();
  while (static_cast<Index>(chosen.size()) < k) {
    const double total = d2.sum();
    Index next = 0;
    if (total > 0.0) {
      std::discrete_distribution<Index> pick(d2.data(), d2.data() + d2.size());
      next = pick(rng);
    } else {
      // All remaining points coincide with a chosen center.
      std::uniform_int_distribution<Index> any(0, n - 1);
      next = any(rng);
    }
    chosen.push_back(next);
    d2 = d2.cwiseMin((x.rowwise() - x.row(next)).rowwise().squaredNorm());
  }
  GmmParams p;
  p.means = x(chosen, Eigen::all);
  const VectorXd var = column_variance(x).cwiseMax(floor);
  p.variances = var.transpose().replicate(k, 1);
  p.weights = VectorXd::Constant(k, 1.0 / static_cast<double>(k));
  return p;
}

/// Mean log-likelihood; fills log responsibilities (n x k).
double e_step(const GmmParams& p, const MatrixXd& x, MatrixXd& log_resp, VectorXd& point_ll) {
  const Index n = x.rows();
  log_resp.resize(n, p.n_components());
  point_ll.resize(n);
  for (Index i = 0; i < n; ++i) {
    const VectorXd lc = component_log_densities(p, x.row(i).transpose());
    const double total = detail::log_sum_exp(lc);
    log_resp.row(i) = (lc.array() - total).transpose();
    point_ll(i) = total;
  }
  return point_ll.mean();
}

}  // namespace

void validate(const GmmParams& params) {
  const auto k = params.n_components();
  if (k < 1 || params.variances.rows() != k || params.variances.cols() != params.dim() ||
      params.weights.size() != k) {
    throw Error(ErrorCode::InvalidConfig, "inconsistent mixture shapes");
  }
  if ((params.weights.array() < 0.0).any() || std::abs(params.weights.sum() - 1.0) > 1e-9) {
    throw Error(ErrorCode::InvalidConfig, "mixture weights are not a simplex");
  }
  if (!(params.variances.array() > 0.0).all() || !params.means.allFinite() || !params.variances.allFinite()) {
    throw Error(ErrorCode::InvalidConfig, "mixture variances must be finite and positive");
  }
}

void validate(const EmConfig& config) {
  if (config.max_iters < 1) throw Error(ErrorCode::InvalidConfig, "max_iters must be >= 1");
  if (!(config.tol > 0.0)) throw Error(ErrorCode::InvalidConfig, "tol must be > 0");
  if (!(config.variance_floor > 0.0)) throw Error(ErrorCode::InvalidConfig, "variance_floor must be > 0");
}

GmmFit fit_gmm(const EmbeddingSet& data, std::size_t n_components, const EmConfig& config) {
  validate(config);
  if (n_components < 1) throw Error(ErrorCode::InvalidConfig, "need at least one component");
  if (data.size() < n_components) {
    throw Error(ErrorCode::TooFewSamples, std::to_string(data.size()) + " samples for " +
                                              std::to_string(n_components) + " components");
  }
  const MatrixXd& x = data.vectors;
  const auto k = static_cast<Index>(n_components);
  const Index n = x.rows();
  const VectorXd floor = variance_floor(x, config.variance_floor);

  GmmFit fit;
  if (k == 1) {
    fit.params = single_component(x, floor);
  } else if (config.init == GmmInit::ClassMeans && class_means_possible(data, n_components)) {
    fit.params = init_class_means(data, floor);
  } else {
    fit.init_used = GmmInit::KMeansPlusPlus;
    fit.params = init_kmeans_pp(x, k, floor, config.seed);
  }
  if (config.init == GmmInit::KMeansPlusPlus) fit.init_used = GmmInit::KMeansPlusPlus;

  MatrixXd log_resp;
  VectorXd point_ll;
  for (int it = 0; it < config.max_iters; ++it) {
    const double ll = e_step(fit.params, x, log_resp, point_ll);
    fit.log_likelihood.push_back(ll);
    fit.iterations = it + 1;
    if (it > 0) {
      const double prev = fit.log_likelihood[fit.log_likelihood.size() - 2];
      if (std::abs(ll - prev) <= config.tol * std::abs(prev)) {
        fit.converged = true;
        return fit;
      }
    }

    // M-step. Variance max(S, floor) is the constrained maximizer, so
    // flooring keeps EM monotone.
    const MatrixXd resp = log_resp.array().exp();
    const VectorXd nk = resp.colwise().sum().transpose();
    GmmParams next;
    next.means.resize(k, x.cols());
    next.variances.resize(k, x.cols());
    next.weights = nk / static_cast<double>(n);
    std::vector<Index> empty;
    for (Index c = 0; c < k; ++c) {
      if (nk(c) < 1e-10) {
        empty.push_back(c);
        continue;
      }
      const VectorXd w = resp.col(c);
      const Eigen::RowVectorXd mu = (w.transpose() * x) / nk(c);
      const MatrixXd centered = x.rowwise() - mu;
      next.means.row(c) = mu;
      next.variances.row(c) =
          ((w.transpose() * centered.array().square().matrix()) / nk(c)).cwiseMax(floor.transpose());
    }
    // Dead components restart at the worst-explained point, keeping R_n.
    for (Index c : empty) {
      Index worst = 0;
      point_ll.minCoeff(&worst);
      next.means.row(c) = x.row(worst);
      next.variances.row(c) = column_variance(x).cwiseMax(floor).transpose();
      next.weights(c) = 1.0 / static_cast<double>(n);
      point_ll(worst) = std::numeric_limits<double>::infinity();
      ++fit.reseeded_components;
    }
    next.weights /= next.weights.sum();
    fit.params = std::move(next);
  }
  fit.log_likelihood.push_back(e_step(fit.params, x, log_resp, point_ll));
  return fit;
}

void save_gmm(const GmmParams& params, const std::filesystem::path& path) {
  validate(params);
  auto rows = [](const Eigen::MatrixXd& m) {
    std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()));
    for (Index r = 0; r < m.rows(); ++r) out[static_cast<std::size_t>(r)].assign(m.row(r).begin(), m.row(r).end());
    return out;
  };
  std::vector<double> weights(params.weights.begin(), params.weights.end());
  detail::write_json({{"means", rows(params.means)}, {"variances", rows(params.variances)}, {"weights", weights}},
                     path);
}

GmmParams load_gmm(const std::filesystem::path& path) {
  const auto j = detail::read_json(path);
  auto matrix = [&](const char* key) {
    const auto rows = j.at(key).get<std::vector<std::vector<double>>>();
    MatrixXd m(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows[0].size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (static_cast<Index>(rows[r].size()) != m.cols()) {
        throw Error(ErrorCode::DimensionMismatch, std::string("ragged ") + key + " in " + path.string());
      }
      for (std::size_t c = 0; c < rows[r].size(); ++c) m(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
    }
    return m;
  };
  GmmParams p;
  try {
    p.means = matrix("means");
    p.variances = matrix("variances");
    const auto w = j.at("weights").get<std::vector<double>>();
    p.weights = Eigen::Map<const VectorXd>(w.data(), static_cast<Index>(w.size()));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::IoFailure, "malformed mixture file " + path.string() + ": " + e.what());
  }
  validate(p);
  return p;
}

}  // namespace bayesprompt
