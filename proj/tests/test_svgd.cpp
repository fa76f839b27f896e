#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <string>

#include "bayesprompt/kernel.hpp"
#include "bayesprompt/seed.hpp"
#include "bayesprompt/svgd.hpp"
#include "test_util.hpp"

using namespace bayesprompt;

namespace {

Eigen::MatrixXd normal_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double mean = 0, double sd = 1) {
  std::normal_distribution<double> n(mean, sd);
  Eigen::MatrixXd m(rows, cols);
  for (auto& v : m.reshaped()) v = n(rng);
  return m;
}

Eigen::VectorXd minus_z(const Eigen::VectorXd& z) { return -z; }

GmmParams standard_normal(int dim) {
  return {Eigen::MatrixXd::Zero(1, dim), Eigen::MatrixXd::Ones(1, dim), Eigen::VectorXd::Ones(1)};
}

}  // namespace

TEST_CASE("rbf kernel values") {
  const Eigen::VectorXd a = Eigen::VectorXd::Zero(1), b = Eigen::VectorXd::Ones(1);
  CHECK(rbf_kernel(a, b, 1.0) == doctest::Approx(0.367879).epsilon(1e-6));
  CHECK(rbf_kernel_grad(a, b, 1.0)(0) == doctest::Approx(0.735759).epsilon(1e-6));

  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const Eigen::VectorXd x = normal_matrix(rng, 3, 1), y = normal_matrix(rng, 3, 1);
    const double h = 0.1 + t * 0.3;
    CHECK(rbf_kernel(x, x, h) == 1.0);
    CHECK(rbf_kernel(x, y, h) == rbf_kernel(y, x, h));
    CHECK(rbf_kernel(x, y, h) > 0.0);
    CHECK(rbf_kernel_grad(x, x, h).norm() == 0.0);
  }
}

TEST_CASE("rbf kernel errors") {
  CHECK_THROWS_AS(rbf_kernel(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(3), 1.0), Error);
  try {
    rbf_kernel(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2), 0.0);
    FAIL("expected NonPositiveBandwidth");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonPositiveBandwidth);
  }
}

TEST_CASE("kernel gradient matches finite differences") {
  Rng rng(2);
  std::uniform_real_distribution<double> hu(0.5, 5.0);
  for (int t = 0; t < 100; ++t) {
    const int dim = 1 + t % 5;
    const Eigen::VectorXd a = normal_matrix(rng, dim, 1), b = normal_matrix(rng, dim, 1);
    const double h = hu(rng);
    const auto g = rbf_kernel_grad(a, b, h);
    for (int d = 0; d < dim; ++d) {
      Eigen::VectorXd p = a, m = a;
      p(d) += 1e-6;
      m(d) -= 1e-6;
      const double fd = (rbf_kernel(p, b, h) - rbf_kernel(m, b, h)) / 2e-6;
      CHECK(rel_err(g(d), fd) < 1e-6);
    }
  }
}

TEST_CASE("median bandwidth") {
  Eigen::MatrixXd x(3, 1);
  x << 0, 1, 3;
  CHECK(median_bandwidth(x) == doctest::Approx(2.885390).epsilon(1e-6));
  CHECK(median_bandwidth(x) == doctest::Approx(4.0 / std::log(4.0)).epsilon(1e-15));
  CHECK(median_bandwidth(Eigen::MatrixXd::Constant(5, 2, 3.0)) == 1.0);
  CHECK(median_bandwidth(Eigen::MatrixXd::Zero(1, 2)) == 1.0);

  // four points: six distances {1,4,9,1,4,1} sorted {1,1,1,4,4,9}; median (1+4)/2
  Eigen::MatrixXd y(4, 1);
  y << 0, 1, 2, 3;
  CHECK(median_bandwidth(y) == doctest::Approx(2.5 / std::log(5.0)).epsilon(1e-15));

  Eigen::MatrixXd dup(6, 1);
  dup << 0, 1, 3, 0, 1, 3;
  CHECK(median_bandwidth(dup) == median_bandwidth(dup));
}

TEST_CASE("mmd properties") {
  Rng rng(3);
  const auto a = normal_matrix(rng, 40, 2);
  const auto b = normal_matrix(rng, 30, 2, 0.5);
  CHECK(mmd(a, b, 1.3) == doctest::Approx(mmd(b, a, 1.3)).epsilon(1e-14));
  CHECK(std::abs(mmd_biased(a, a, 1.3)) <= 1e-12);
  CHECK(std::abs(mmd(a, a, 1.3)) < 0.05);
  CHECK_THROWS_AS(mmd(a, Eigen::MatrixXd(0, 2), 1.0), Error);
  CHECK_THROWS_AS(mmd(a, Eigen::MatrixXd::Zero(3, 3), 1.0), Error);

  const auto ref = make_mmd_reference(b, 1.3);
  CHECK(mmd_to_reference(a, ref) == doctest::Approx(mmd(a, b, 1.3)).epsilon(1e-12));
}

TEST_CASE("mmd separates shifted samples") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto p = normal_matrix(rng, 100, 1);
    const auto q = normal_matrix(rng, 100, 1);
    const auto far = normal_matrix(rng, 100, 1, 10);
    Eigen::MatrixXd both(200, 1);
    both << p, far;
    const double h = median_bandwidth(both);
    const double same = mmd(p, q, h);
    const double shifted = mmd(p, far, h);
    CHECK(shifted > 0.1);
    CHECK(shifted > same);
  }
}

TEST_CASE("single particle step is gradient ascent") {
  Rng rng(4);
  for (int t = 0; t < 10; ++t) {
    Particles one{normal_matrix(rng, 1, 3), 0};
    const auto next = svgd_step(one, minus_z, 0.7, 0.05);
    const Eigen::RowVectorXd expected = one.particles.row(0) + 0.05 * (-one.particles.row(0));
    CHECK((next.particles.row(0) - expected).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(next.iteration == 1);
  }
}

TEST_CASE("flat target repulsion") {
  auto flat = [](const Eigen::VectorXd& z) { return Eigen::VectorXd::Zero(z.size()).eval(); };
  Particles two{Eigen::MatrixXd(2, 2), 0};
  two.particles << 0, 0, 0.5, 0.2;
  double prev = (two.particles.row(0) - two.particles.row(1)).norm();
  for (int i = 0; i < 20; ++i) {
    two = svgd_step(two, flat, median_bandwidth(two.particles), 0.1);
    const double now = (two.particles.row(0) - two.particles.row(1)).norm();
    CHECK(now > prev);
    prev = now;
  }
}

TEST_CASE("step is permutation equivariant") {
  Rng rng(5);
  const Particles p{normal_matrix(rng, 7, 3), 0};
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(7);
  perm.setIdentity();
  std::shuffle(perm.indices().data(), perm.indices().data() + 7, rng);
  const Particles q{perm * p.particles, 0};
  const auto a = svgd_step(p, minus_z, 1.1, 0.2);
  const auto b = svgd_step(q, minus_z, 1.1, 0.2);
  CHECK(((perm * a.particles) - b.particles).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("stein direction matches the per-particle sum") {
  Rng rng(6);
  const auto x = normal_matrix(rng, 6, 2);
  const auto s = score_rows<double>(x, minus_z);
  const double h = 0.9;
  const auto phi = stein_direction<double>(x, s, h);
  for (Eigen::Index i = 0; i < 6; ++i) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(2);
    for (Eigen::Index j = 0; j < 6; ++j) {
      const Eigen::VectorXd xj = x.row(j).transpose(), xi = x.row(i).transpose();
      sum += rbf_kernel(xj, xi, h) * s.row(j).transpose() + rbf_kernel_grad(xj, xi, h);
    }
    CHECK((phi.row(i).transpose() - sum / 6.0).norm() < 1e-14);
  }
}

TEST_CASE("non-finite update names the particle") {
  auto bad = [](const Eigen::VectorXd& z) {
    Eigen::VectorXd g = -z;
    if (z(0) > 1) g(0) = std::numeric_limits<double>::infinity();
    return g;
  };
  Particles p{Eigen::MatrixXd(3, 1), 0};
  p.particles << 0, 5, 100;
  try {
    svgd_step(p, bad, 1.0, 0.1);
    FAIL("expected NonFiniteUpdate");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFiniteUpdate);
    CHECK(std::string(e.what()).find("particle") != std::string::npos);
  }
}

TEST_CASE("zero iterations is identity") {
  Rng rng(7);
  const Particles p{normal_matrix(rng, 5, 2), 3};
  SvgdConfig cfg;
  cfg.n_iters = 0;
  const auto r = svgd_run(p, standard_normal(2), cfg);
  CHECK(r.particles.particles == p.particles);
  CHECK(r.trace.empty());
}

TEST_CASE("gaussian benchmark moments") {
  Rng rng(8);
  const Particles init{normal_matrix(rng, 100, 1, 10), 0};
  const auto r = svgd_run(init, standard_normal(1), SvgdConfig{});
  const auto& x = r.particles.particles;
  const double mean = x.mean();
  const double var = (x.array() - mean).square().mean();
  CHECK(std::abs(mean) < 0.05);
  CHECK(std::abs(var - 1) < 0.1);
  CHECK(r.trace.size() == 500);
  CHECK(r.particles.iteration == 500);

  const auto again = svgd_run(init, standard_normal(1), SvgdConfig{});
  CHECK(again.particles.particles == x);
}

TEST_CASE("fixed step and fixed bandwidth") {
  Rng rng(9);
  const Particles init{normal_matrix(rng, 50, 2, 3), 0};
  SvgdConfig cfg;
  cfg.step_mode = StepMode::Fixed;
  cfg.base_step = 0.05;
  cfg.bandwidth = 1.0;
  cfg.n_iters = 2;
  const auto r = svgd_run(init, standard_normal(2), cfg);
  // two explicit steps agree with the run
  auto manual = svgd_step(init, minus_z, 1.0, 0.05);
  manual = svgd_step(manual, minus_z, 1.0, 0.05);
  CHECK((r.particles.particles - manual.particles).cwiseAbs().maxCoeff() < 1e-14);
  for (const auto& row : r.trace) CHECK(row.bandwidth == 1.0);
}

TEST_CASE("config validation") {
  SvgdConfig cfg;
  cfg.base_step = 0;
  CHECK_THROWS_AS(validate(cfg), Error);
  cfg = {};
  cfg.adagrad_decay = 1.5;
  CHECK_THROWS_AS(validate(cfg), Error);
  cfg = {};
  cfg.bandwidth = -1.0;
  CHECK_THROWS_AS(validate(cfg), Error);
}

TEST_CASE("trace csv and particle io") {
  TempDir dir;
  Rng rng(10);
  const Particles init{normal_matrix(rng, 20, 1, 4), 0};
  const auto target = standard_normal(1);
  const auto ref = make_mmd_reference(normal_matrix(rng, 200, 1), 1.0);
  SvgdConfig cfg;
  cfg.n_iters = 120;
  const auto r = svgd_run(init, target, cfg, &ref);
  write_svgd_trace(r.trace, dir / "t.csv");

  std::ifstream in(dir / "t.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "iter,mean_phi_norm,bandwidth,mmd");
  int rows = 0, with_mmd = 0;
  while (std::getline(in, line)) {
    ++rows;
    if (line.back() != ',') ++with_mmd;
  }
  CHECK(rows == 120);
  CHECK(with_mmd == 2);

  const auto quantized = Particles{r.particles.particles.cast<float>().cast<double>(), r.particles.iteration};
  save_particles(quantized, dir / "p.bpem");
  const auto back = load_particles(dir / "p.bpem");
  CHECK(back.particles == quantized.particles);
  CHECK(back.iteration == 120);
}
