#include <catch2/catch.hpp>

#include <cmath>

#include "gtd/bounds.hpp"
#include "gtd/domains.hpp"
#include "gtd/rng.hpp"
#include "gtd/saddle.hpp"
#include "gtd/solvers.hpp"

using namespace gtd;

namespace {

struct Setup {
  domains::DomainBundle bundle;
  MomentTriple moments;
  SaddleObjective objective;
};

Setup make_setup(domains::DomainBundle bundle, MMode mode) {
  MomentTriple m =
      exact_moments(bundle.mdp, bundle.behavior, bundle.target, bundle.xi, bundle.basis);
  auto [rt, ry] = default_radii(m, mode, bundle.theta_init);
  SaddleObjective obj(m, mode, rt, ry);
  return Setup{std::move(bundle), std::move(m), std::move(obj)};
}

Vec random_in_ball(SplitMixRng& rng, int d, double radius) {
  Vec v(d);
  for (int i = 0; i < d; ++i) v[i] = rng.normal();
  return project_ball(v * (radius / (3.0 * std::sqrt(static_cast<double>(d)))), radius);
}

}  // namespace

TEST_CASE("lagrangian basics: zero dual, saddle theta, independent evaluation path") {
  Setup s = make_setup(domains::baird(), MMode::Identity);
  const int d = s.objective.dim();
  SplitMixRng rng(1);

  REQUIRE(s.objective.lagrangian(random_in_ball(rng, d, 10.0), Vec::Zero(d)) == 0.0);

  const Vec theta_star = s.objective.theta_star();
  for (int i = 0; i < 10; ++i) {
    const Vec y = random_in_ball(rng, d, 5.0);
    REQUIRE(s.objective.lagrangian(theta_star, y) ==
            Approx(-0.5 * y.squaredNorm()).margin(1e-10));
    REQUIRE(s.objective.lagrangian(theta_star, y) <= 1e-12);
  }

  const Mat m_mat = s.objective.m_matrix();
  for (int i = 0; i < 20; ++i) {
    const Vec theta = random_in_ball(rng, d, 10.0);
    const Vec y = random_in_ball(rng, d, 10.0);
    const double direct = (s.moments.b_vec - s.moments.a_mat * theta).dot(y) -
                          0.5 * y.dot(m_mat * y);
    REQUIRE(s.objective.lagrangian(theta, y) == Approx(direct).margin(1e-10));
  }
}

TEST_CASE("y_star zeroes the dual gradient") {
  Setup s = make_setup(domains::chain50(), MMode::Covariance);
  SplitMixRng rng(2);
  const int d = s.objective.dim();
  const Mat m_mat = s.objective.m_matrix();

  REQUIRE(s.objective.y_star(s.objective.theta_star()).norm() < 1e-8);

  for (int i = 0; i < 20; ++i) {
    const Vec theta = random_in_ball(rng, d, s.objective.radius_theta());
    const Vec ys = s.objective.y_star(theta);
    const Vec grad = s.moments.b_vec - s.moments.a_mat * theta - m_mat * ys;
    REQUIRE(grad.norm() < 1e-10);
  }

  Setup id = make_setup(domains::baird(), MMode::Identity);
  const Vec theta = random_in_ball(rng, 8, 5.0);
  REQUIRE((id.objective.y_star(theta) -
           (id.moments.b_vec - id.moments.a_mat * theta)).norm() < 1e-12);
}

TEST_CASE("half J equals the lagrangian at y_star (both weightings)") {
  SplitMixRng rng(3);
  for (MMode mode : {MMode::Identity, MMode::Covariance}) {
    Setup s = make_setup(domains::chain50(), mode);
    for (int i = 0; i < 100; ++i) {
      const Vec theta = random_in_ball(rng, s.objective.dim(), s.objective.radius_theta());
      const double j = s.objective.j_value(theta);
      REQUIRE(j >= 0.0);
      REQUIRE(0.5 * j == Approx(s.objective.lagrangian(theta, s.objective.y_star(theta)))
                             .margin(1e-10));
    }
  }
}

TEST_CASE("objective values vanish exactly at the solution") {
  Setup s = make_setup(domains::energy(), MMode::Covariance);
  Metrics metrics(s.moments);
  const Vec theta_star = s.objective.theta_star();
  REQUIRE(metrics.neu(theta_star) < 1e-12);
  REQUIRE(metrics.mspbe(theta_star) < 1e-12);
  REQUIRE(s.objective.j_value(theta_star) < 1e-12);
}

TEST_CASE("mspbe agrees with the projector path on the chain domain") {
  Setup s = make_setup(domains::chain50(), MMode::Covariance);
  Metrics metrics(s.moments);
  REQUIRE_FALSE(metrics.c_singular());
  const WeightedProjector proj = build_projector(s.bundle.basis, s.bundle.xi);
  const InducedChain chain = induce_chain(s.bundle.mdp, s.bundle.target);
  SplitMixRng rng(4);
  for (int i = 0; i < 20; ++i) {
    const Vec theta = random_in_ball(rng, s.objective.dim(), s.objective.radius_theta());
    const Vec v = s.bundle.basis.table * theta;
    const Vec tv = bellman_apply(chain, v, s.bundle.mdp.discount);
    const double via_projector = std::pow(xi_norm(v - proj.matrix * tv, s.bundle.xi), 2);
    REQUIRE(metrics.mspbe(theta) == Approx(via_projector).margin(1e-8));
  }
}

TEST_CASE("mspbe stays finite through the pseudo-inverse on the rank-deficient star basis") {
  Setup s = make_setup(domains::baird(), MMode::Identity);
  Metrics metrics(s.moments);
  REQUIRE(metrics.c_singular());
  const double value = metrics.mspbe(s.bundle.theta_init);
  REQUIRE(std::isfinite(value));
  REQUIRE(value > 0.0);
  // The residual b - A theta lies in range(C), so the pseudo-inverse solve is
  // exact: C (C^+ g) = g.
  const Vec g = s.moments.b_vec - s.moments.a_mat * s.bundle.theta_init;
  Eigen::SelfAdjointEigenSolver<Mat> eig(s.moments.c_mat);
  Vec x = Vec::Zero(8);
  for (int i = 0; i < 8; ++i) {
    const double lambda = eig.eigenvalues()[i];
    if (lambda > 1e-12 * eig.eigenvalues().maxCoeff())
      x += eig.eigenvectors().col(i) * (eig.eigenvectors().col(i).dot(g) / lambda);
  }
  REQUIRE((s.moments.c_mat * x - g).norm() < 1e-10);
  REQUIRE(metrics.mspbe(s.bundle.theta_init) == Approx(g.dot(x)).margin(1e-10));
}

TEST_CASE("covariance-mode objective refuses a singular C") {
  auto bundle = domains::baird();
  MomentTriple m =
      exact_moments(bundle.mdp, bundle.behavior, bundle.target, bundle.xi, bundle.basis);
  REQUIRE_THROWS_AS(SaddleObjective(m, MMode::Covariance, 10.0, 10.0), ConditioningError);
}

TEST_CASE("moment identity residual: on-policy tabular, off-policy star, degenerate discount") {
  // Tabular on-policy: both sides coincide to machine precision.
  std::vector<Mat> trans(2, Mat::Zero(3, 3));
  trans[0] << 0.5, 0.5, 0, 0, 0.5, 0.5, 0.5, 0, 0.5;
  trans[1] << 0.2, 0.4, 0.4, 0.3, 0.3, 0.4, 0.25, 0.5, 0.25;
  Mat reward(3, 2);
  reward << 1, 0, 0, 2, -1, 1;
  Mdp mdp(trans, reward, 0.8);
  PolicyTable policy(Mat::Constant(3, 2, 0.5));
  FeatureBasis tabular{Mat::Identity(3, 3)};
  Vec w(3);
  w << 0.5, 0.25, 0.25;
  SplitMixRng rng(5);
  for (int i = 0; i < 10; ++i) {
    Vec theta(3);
    for (int j = 0; j < 3; ++j) theta[j] = rng.uniform(-4, 4);
    REQUIRE(moment_identity_residual(mdp, policy, policy, StateDistribution(w), tabular, theta) < 1e-12);
  }

  auto baird = domains::baird();
  for (int i = 0; i < 50; ++i) {
    Vec theta(8);
    for (int j = 0; j < 8; ++j) theta[j] = rng.uniform(-20, 20);
    REQUIRE(moment_identity_residual(baird.mdp, baird.behavior, baird.target, baird.xi, baird.basis,
                            theta) < 1e-9);
  }

  domains::BairdParams p;
  p.gamma = 0.0;
  auto flat = domains::baird(p);
  for (int i = 0; i < 10; ++i) {
    Vec theta(8);
    for (int j = 0; j < 8; ++j) theta[j] = rng.uniform(-20, 20);
    REQUIRE(moment_identity_residual(flat.mdp, flat.behavior, flat.target, flat.xi, flat.basis, theta) <
            1e-9);
  }
}

TEST_CASE("error function: zero at the saddle point, interior max recovers half NEU") {
  Setup s = make_setup(domains::baird(), MMode::Identity);
  REQUIRE(s.objective.err(s.objective.theta_star(), Vec::Zero(8)) == Approx(0.0).margin(1e-9));

  // With M = I and y*(theta) strictly inside Y, the inner max is 1/2 ||b - A theta||^2.
  SplitMixRng rng(6);
  for (int i = 0; i < 20; ++i) {
    const Vec theta = random_in_ball(rng, 8, s.objective.radius_theta());
    const Vec g = s.moments.b_vec - s.moments.a_mat * theta;
    REQUIRE(g.norm() < s.objective.radius_y());  // interior by the radius rule
    const double err = s.objective.err(theta, Vec::Zero(8));
    const double min_part = -s.objective.radius_theta() *
                            (s.moments.a_mat.transpose() * Vec::Zero(8)).norm();
    REQUIRE(err == Approx(0.5 * g.squaredNorm() - min_part).margin(1e-9));
  }
}

TEST_CASE("error function matches a projected gradient ascent/descent oracle") {
  Setup s = make_setup(domains::baird(), MMode::Identity);
  SplitMixRng rng(7);
  const Mat m_mat = s.objective.m_matrix();
  const double ry = s.objective.radius_y();
  const double rt = s.objective.radius_theta();
  for (int trial = 0; trial < 5; ++trial) {
    const Vec theta = random_in_ball(rng, 8, rt) * 1.8;  // also probe outside the ball
    const Vec y = random_in_ball(rng, 8, ry);

    // Inner max by projected gradient ascent on the concave quadratic.
    const Vec g = s.moments.b_vec - s.moments.a_mat * theta;
    Vec yk = Vec::Zero(8);
    const double step = 1.0 / (s.objective.tau() + 1.0);
    for (int it = 0; it < 200000; ++it) {
      const Vec next = project_ball(yk + step * (g - m_mat * yk), ry);
      if ((next - yk).norm() < 1e-13) {
        yk = next;
        break;
      }
      yk = next;
    }
    const double max_part = g.dot(yk) - 0.5 * yk.dot(m_mat * yk);

    // Inner min of a linear function over the theta ball, by projected descent.
    const Vec lin = -s.moments.a_mat.transpose() * y;  // gradient w.r.t. theta
    Vec tk = Vec::Zero(8);
    for (int it = 0; it < 200000; ++it) {
      const Vec next = project_ball(tk - 0.5 * lin, rt);
      if ((next - tk).norm() < 1e-13) {
        tk = next;
        break;
      }
      tk = next;
    }
    const double min_part = s.moments.b_vec.dot(y) - 0.5 * y.dot(m_mat * y) + lin.dot(tk);

    REQUIRE(s.objective.err(theta, y) == Approx(max_part - min_part).margin(1e-6));
  }
}

TEST_CASE("error function is nonnegative wherever the saddle point is feasible") {
  SplitMixRng rng(8);
  for (MMode mode : {MMode::Identity, MMode::Covariance}) {
    Setup s = make_setup(domains::energy(), mode);
    for (int i = 0; i < 50; ++i) {
      const Vec theta = random_in_ball(rng, s.objective.dim(), 2.0 * s.objective.radius_theta());
      const Vec y = random_in_ball(rng, s.objective.dim(), 2.0 * s.objective.radius_y());
      REQUIRE(s.objective.err(theta, y) >= -1e-9);
    }
  }
}

TEST_CASE("gradient field matches central finite differences of L") {
  SplitMixRng rng(9);
  Setup setups[] = {make_setup(domains::baird(), MMode::Identity),
                    make_setup(domains::chain50(), MMode::Covariance),
                    make_setup(domains::energy(), MMode::Covariance)};
  const double h = 1e-6;
  for (Setup& s : setups) {
    const int d = s.objective.dim();
    const Mat m_mat = s.objective.m_matrix();
    for (int pt = 0; pt < 20; ++pt) {
      const Vec theta = random_in_ball(rng, d, s.objective.radius_theta() / 10.0);
      const Vec y = random_in_ball(rng, d, s.objective.radius_y() / 10.0);
      const Vec grad_theta = -s.moments.a_mat.transpose() * y;
      const Vec grad_y = s.moments.b_vec - s.moments.a_mat * theta - m_mat * y;
      for (int i = 0; i < d; ++i) {
        Vec e = Vec::Zero(d);
        e[i] = h;
        const double fd_theta =
            (s.objective.lagrangian(theta + e, y) - s.objective.lagrangian(theta - e, y)) /
            (2 * h);
        const double fd_y =
            (s.objective.lagrangian(theta, y + e) - s.objective.lagrangian(theta, y - e)) /
            (2 * h);
        REQUIRE(fd_theta == Approx(grad_theta[i]).margin(1e-5));
        REQUIRE(fd_y == Approx(grad_y[i]).margin(1e-5));
      }
    }
  }
}

TEST_CASE("expected per-sample update direction equals the deterministic field") {
  SplitMixRng rng(10);
  for (MMode mode : {MMode::Identity, MMode::Covariance}) {
    Setup s = make_setup(domains::chain50(), mode);
    const auto& b = s.bundle;
    const int d = s.objective.dim();
    const Mat m_mat = s.objective.m_matrix();
    const bool covariance = mode == MMode::Covariance;
    for (int pt = 0; pt < 5; ++pt) {
      const Vec theta = random_in_ball(rng, d, s.objective.radius_theta());
      const Vec y = random_in_ball(rng, d, s.objective.radius_y());
      Vec mean_y_dir = Vec::Zero(d), mean_theta_dir = Vec::Zero(d);
      for (int st = 0; st < b.mdp.num_states; ++st)
        for (int a = 0; a < b.mdp.num_actions; ++a)
          for (int nx = 0; nx < b.mdp.num_states; ++nx) {
            const double w = b.xi.weights[st] * b.behavior.probs(st, a) *
                             b.mdp.transition[a](st, nx);
            if (w == 0.0) continue;
            const double rho = b.target.probs(st, a) / b.behavior.probs(st, a);
            const Vec phi = b.basis.row(st);
            const Vec dphi = phi - b.mdp.discount * b.basis.row(nx);
            const double delta = b.mdp.reward(st, a) - dphi.dot(theta);
            mean_y_dir += w * (covariance ? Vec((rho * delta - phi.dot(y)) * phi)
                                          : Vec(rho * delta * phi - y));
            mean_theta_dir += w * rho * phi.dot(y) * dphi;
          }
      const Vec field_y = s.moments.b_vec - s.moments.a_mat * theta - m_mat * y;
      const Vec field_theta = s.moments.a_mat.transpose() * y;
      REQUIRE((mean_y_dir - field_y).norm() < 1e-10);
      REQUIRE((mean_theta_dir - field_theta).norm() < 1e-10);
    }
  }
}

TEST_CASE("the quadratic dual penalty is tau-smooth") {
  Setup s = make_setup(domains::chain50(), MMode::Covariance);
  const Mat m_mat = s.objective.m_matrix();
  const double tau = s.objective.tau();
  SplitMixRng rng(11);
  auto k = [&](const Vec& y) { return 0.5 * y.dot(m_mat * y); };
  for (int i = 0; i < 1000; ++i) {
    const Vec x = random_in_ball(rng, s.objective.dim(), 10.0);
    const Vec y = random_in_ball(rng, s.objective.dim(), 10.0);
    const Vec grad = m_mat * x;
    REQUIRE(k(y) - k(x) - grad.dot(y - x) <= 0.5 * tau * (y - x).squaredNorm() + 1e-9);
  }
}

TEST_CASE("saddle point solve: theta* solves the system, y* vanishes") {
  Setup s = make_setup(domains::energy(), MMode::Covariance);
  const SaddlePoint sp = solve_saddle_point(s.objective);
  REQUIRE((s.moments.a_mat * sp.theta_star - s.moments.b_vec).norm() < 1e-8);
  REQUIRE(sp.y_star.norm() < 1e-8);
}
