#include <doctest.h>

#include <cmath>

#include "osc/learner.hpp"

using namespace osc;

namespace {

FilterBank unit_bank_m1() {
  FilterBank bank;
  bank.m = 1;
  bank.h = 1;
  bank.gamma = 0.5;
  bank.sigmas = Vec::Ones(1);
  bank.phis = Mat::Ones(1, 1);
  bank.sigma_quarter = Vec::Ones(1);
  return bank;
}

LdsSystem scalar_system(double a, double b, double gamma) {
  Mat am(1, 1), bm(1, 1);
  am << a;
  bm << b;
  return make_system(am, bm, 1.0, std::max(1.0, std::abs(b)), 1.0, gamma, false);
}

std::vector<Vec> clipped_stream(int T, int d, std::uint64_t seed, double clip = 1.0) {
  DetRng rng(seed);
  std::vector<Vec> out;
  for (int t = 0; t < T; ++t) {
    Vec w = rng.normal_vec(d);
    if (w.norm() > clip) w *= clip / w.norm();
    out.push_back(std::move(w));
  }
  return out;
}

SpectralParams random_params_in_ball(int slices, int n, int d, double radius, DetRng& rng,
                                     double fill = 0.9) {
  SpectralParams p = SpectralParams::zero(slices, n, d, radius);
  for (Mat& s : p.M) s = rng.normal_mat(n, d);
  const double norm = p.frob_norm();
  for (Mat& s : p.M) s *= fill * radius / norm;
  return p;
}

}  // namespace

TEST_CASE("theoretical_schedule: unit-constant values") {
  const Schedule s = theoretical_schedule(10000, 0.1, 1.0, 1.0, 1.0, 1.0, 2);
  CHECK(s.C1 == doctest::Approx(1.0));
  CHECK(s.C2 == doctest::Approx(std::sqrt(2.0) / 3.0).epsilon(1e-12));
  CHECK(s.m == 136);           // ceil(10 ln(8e5))
  CHECK(s.h_uncapped == 870);  // ceil(4 ln(1e4) ln(1.8e10))
  CHECK(s.h == 136);           // capped at m
  const double eta_expected = (std::sqrt(2.0) / 3.0) * std::sqrt(1e-3 / (1e4 * 136.0 * 136.0));
  CHECK(s.eta == doctest::Approx(eta_expected).epsilon(1e-12));
  CHECK(s.radius == doctest::Approx(std::sqrt(2.0 * 136 / 0.1)).epsilon(1e-12));
}

TEST_CASE("theoretical_schedule: input validation") {
  CHECK_THROWS_AS(theoretical_schedule(5, 0.1, 1, 1, 1, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(theoretical_schedule(100, 0.8, 1, 1, 1, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(theoretical_schedule(100, 0.1, 0.5, 1, 1, 1, 1), std::invalid_argument);
}

TEST_CASE("memoryless_state") {
  SUBCASE("zero history gives (0, 0)") {
    const LdsSystem sys = scalar_system(0.5, 1.0, 0.5);
    const FilterBank bank = unit_bank_m1();
    const CostFunction cost =
        CostFunction::quadratic(Mat::Identity(1, 1), Mat::Identity(1, 1));
    MemorylessContext ctx = spectral_context_from_history(sys, bank, &cost, {}, 4);
    SpectralParams m = SpectralParams::zero(1, 1, 1, 10.0);
    m.M[0](0, 0) = 2.0;
    const auto [x, u] = ctx.state_control(m);
    CHECK(x.norm() == 0.0);
    CHECK(u.norm() == 0.0);
  }
  SUBCASE("hand unroll: a=0.5, b=1, m=1, M=[2], history {1, 0}, t=2") {
    const LdsSystem sys = scalar_system(0.5, 1.0, 0.5);
    const FilterBank bank = unit_bank_m1();
    const CostFunction cost =
        CostFunction::quadratic(Mat::Identity(1, 1), Mat::Identity(1, 1));
    SpectralParams m = SpectralParams::zero(1, 1, 1, 10.0);
    m.M[0](0, 0) = 2.0;

    // At t=1 (history {w0=1}): u_1(M) = 2 w0 = 2.
    MemorylessContext at1 = spectral_context_from_history(
        sys, bank, &cost, {Vec::Constant(1, 1.0)}, 4);
    CHECK(at1.state_control(m).second(0) == doctest::Approx(2.0));

    // At t=2 (history {w0=1, w1=0}): u_2(M)=0, x_2(M) = a w0 + b u_1(M) = 2.5.
    MemorylessContext at2 = spectral_context_from_history(
        sys, bank, &cost, {Vec::Constant(1, 1.0), Vec::Zero(1)}, 4);
    const auto [x, u] = at2.state_control(m);
    CHECK(u(0) == doctest::Approx(0.0));
    CHECK(x(0) == doctest::Approx(2.5));
  }
  SUBCASE("M = 0 reduces to the open-loop state") {
    const LdsSystem sys = generate_system(3, 2, 0.6, 4);
    const FilterBank bank = eigendecompose_top(build_hankel(6, sys.gamma), 3);
    const CostFunction cost =
        CostFunction::quadratic(Mat::Identity(3, 3), Mat::Identity(2, 2));
    const std::vector<Vec> history = clipped_stream(10, 3, 9);
    const int m_x = 8;
    MemorylessContext ctx = spectral_context_from_history(sys, bank, &cost, history, m_x);
    const SpectralParams zero = SpectralParams::zero(3, 2, 3, 1.0);
    const auto [x, u] = ctx.state_control(zero);
    CHECK(u.norm() == 0.0);
    Vec expect = Vec::Zero(3);
    Mat apow = Mat::Identity(3, 3);
    const int t = static_cast<int>(history.size());
    for (int i = 1; i <= std::min(m_x, t); ++i) {
      expect += apow * history[t - i];
      apow = sys.A * apow;
    }
    CHECK((x - expect).norm() <= 1e-12);
  }
}

TEST_CASE("memoryless loss and gradient") {
  SUBCASE("quadratic, zero history: loss 0, grad 0") {
    const LdsSystem sys = scalar_system(0.5, 1.0, 0.5);
    const FilterBank bank = unit_bank_m1();
    const CostFunction cost =
        CostFunction::quadratic(Mat::Identity(1, 1), Mat::Identity(1, 1));
    MemorylessContext ctx = spectral_context_from_history(sys, bank, &cost, {}, 4);
    const SpectralParams zero = SpectralParams::zero(1, 1, 1, 1.0);
    const LossGrad lg = ctx.loss_and_grad(zero);
    CHECK(lg.loss == 0.0);
    CHECK(grad_frob_norm(lg.grad) == 0.0);
  }
  SUBCASE("analytic gradient vs central differences, scalar") {
    const LdsSystem sys = scalar_system(0.5, 1.0, 0.5);
    const FilterBank bank = eigendecompose_top(build_hankel(4, 0.5), 3);
    const CostFunction cost =
        CostFunction::quadratic(Mat::Identity(1, 1), Mat::Identity(1, 1));
    MemorylessContext ctx =
        spectral_context_from_history(sys, bank, &cost, clipped_stream(12, 1, 3), 6);
    DetRng rng(21);
    const double eps = 1e-6;
    for (int trial = 0; trial < 20; ++trial) {
      SpectralParams p = random_params_in_ball(3, 1, 1, 3.0, rng);
      const LossGrad lg = ctx.loss_and_grad(p);
      for (int j = 0; j < 3; ++j) {
        SpectralParams pp = p, pm = p;
        pp.M[j](0, 0) += eps;
        pm.M[j](0, 0) -= eps;
        const double fd = (ctx.loss_of(pp) - ctx.loss_of(pm)) / (2 * eps);
        const double err = std::abs(fd - lg.grad[j](0, 0));
        CHECK(err <= 1e-5 * std::max(1.0, std::abs(fd)));
      }
    }
  }
  SUBCASE("convexity in the parameters") {
    const LdsSystem sys = generate_system(2, 2, 0.5, 6);
    const FilterBank bank = eigendecompose_top(build_hankel(5, sys.gamma), 3);
    const CostFunction cost =
        CostFunction::quadratic(Mat::Identity(2, 2), Mat::Identity(2, 2));
    MemorylessContext ctx =
        spectral_context_from_history(sys, bank, &cost, clipped_stream(9, 2, 8), 7);
    DetRng rng(14);
    for (int trial = 0; trial < 50; ++trial) {
      const SpectralParams a = random_params_in_ball(3, 2, 2, 2.0, rng);
      const SpectralParams b = random_params_in_ball(3, 2, 2, 2.0, rng);
      const double lambda = rng.next_double();
      SpectralParams mix = a;
      for (int j = 0; j < 3; ++j) mix.M[j] = lambda * a.M[j] + (1.0 - lambda) * b.M[j];
      CHECK(ctx.loss_of(mix) <=
            lambda * ctx.loss_of(a) + (1.0 - lambda) * ctx.loss_of(b) + 1e-9);
    }
  }
  SUBCASE("truncation bound is reported") {
    const LdsSystem sys = scalar_system(0.5, 1.0, 0.5);
    const FilterBank bank = unit_bank_m1();
    const CostFunction cost =
        CostFunction::quadratic(Mat::Identity(1, 1), Mat::Identity(1, 1));
    MemorylessContext ctx =
        spectral_context_from_history(sys, bank, &cost, clipped_stream(5, 1, 2), 3);
    const LossGrad lg = ctx.loss_and_grad(SpectralParams::zero(1, 1, 1, 1.0));
    CHECK(lg.trunc_bound == doctest::Approx(std::pow(0.5, 3) * 1.0 / 0.5));
  }
}

TEST_CASE("empirical Lipschitz constant stays under the lemma bound") {
  // Unit constants: kappa = kappa_B = W = 1; cost 0.5(x^2 + u^2) has G = 1.
  const double gamma = 0.5;
  const int m = 8, h = 4;
  const LdsSystem sys = scalar_system(0.45, 1.0, gamma);
  const FilterBank bank = eigendecompose_top(build_hankel(m, gamma), h);
  const CostFunction cost = CostFunction::quadratic(0.5 * Mat::Identity(1, 1),
                                                    0.5 * Mat::Identity(1, 1));
  MemorylessContext ctx =
      spectral_context_from_history(sys, bank, &cost, clipped_stream(30, 1, 10), m);
  const double radius = std::sqrt(2.0 * h / gamma);
  const double bound = 6.0 * std::sqrt(static_cast<double>(m)) * h / (gamma * gamma) *
                       std::pow(std::log(2.0 / gamma), 0.25);
  DetRng rng(33);
  for (int trial = 0; trial < 100; ++trial) {
    const SpectralParams a = random_params_in_ball(h, 1, 1, radius, rng, rng.next_double());
    const SpectralParams b = random_params_in_ball(h, 1, 1, radius, rng, rng.next_double());
    double diff = 0.0;
    for (int j = 0; j < h; ++j) diff += (a.M[j] - b.M[j]).squaredNorm();
    diff = std::sqrt(diff);
    if (diff < 1e-12) continue;
    const double ratio = std::abs(ctx.loss_of(a) - ctx.loss_of(b)) / diff;
    CHECK(ratio <= bound);
  }
}

TEST_CASE("ogd_step and project_frobenius") {
  DetRng rng(3);
  SUBCASE("zero gradient leaves params unchanged") {
    const SpectralParams p = random_params_in_ball(3, 2, 2, 5.0, rng);
    const SpectralParams q = ogd_step(p, ParamGrad(3, Mat::Zero(2, 2)), 0.1);
    for (int j = 0; j < 3; ++j) CHECK((p.M[j] - q.M[j]).norm() == 0.0);
  }
  SUBCASE("interior step is exact") {
    const SpectralParams zero = SpectralParams::zero(2, 1, 2, 1.0);
    ParamGrad g(2, Mat::Zero(1, 2));
    g[0] << 1.0, 2.0;
    g[1] << -1.0, 0.5;
    double gnorm = grad_frob_norm(g);
    const double eta = 0.3 / gnorm;  // lands strictly inside the ball
    const SpectralParams q = ogd_step(zero, g, eta);
    for (int j = 0; j < 2; ++j) CHECK((q.M[j] + eta * g[j]).norm() <= 1e-15);
  }
  SUBCASE("radial projection: norm pinned, direction preserved") {
    SpectralParams p = random_params_in_ball(2, 2, 3, 1.0, rng);
    const double rescale = 2.0 / p.frob_norm();  // norm 2, radius 1
    for (Mat& s : p.M) s *= rescale;
    const SpectralParams q = project_frobenius(p, 1.0);
    CHECK(q.frob_norm() == doctest::Approx(1.0).epsilon(1e-12));
    for (int j = 0; j < 2; ++j) CHECK((q.M[j] - 0.5 * p.M[j]).norm() <= 1e-12);
  }
  SUBCASE("projection is idempotent and non-expansive") {
    for (int trial = 0; trial < 100; ++trial) {
      const double radius = rng.uniform(0.5, 2.0);
      SpectralParams a = random_params_in_ball(2, 2, 2, 1.0, rng, rng.uniform(0.1, 3.0));
      SpectralParams b = random_params_in_ball(2, 2, 2, 1.0, rng, rng.uniform(0.1, 3.0));
      const SpectralParams pa = project_frobenius(a, radius);
      const SpectralParams pb = project_frobenius(b, radius);
      const SpectralParams paa = project_frobenius(pa, radius);
      double d_ab = 0.0, d_pab = 0.0, d_papaa = 0.0;
      for (int j = 0; j < 2; ++j) {
        d_ab += (a.M[j] - b.M[j]).squaredNorm();
        d_pab += (pa.M[j] - pb.M[j]).squaredNorm();
        d_papaa += (pa.M[j] - paa.M[j]).squaredNorm();
      }
      CHECK(std::sqrt(d_pab) <= std::sqrt(d_ab) + 1e-12);
      CHECK(std::sqrt(d_papaa) <= 1e-15);
    }
  }
}

TEST_CASE("context push ordering is enforced") {
  const LdsSystem sys = scalar_system(0.5, 1.0, 0.5);
  const CostFunction cost = CostFunction::quadratic(Mat::Identity(1, 1), Mat::Identity(1, 1));
  MemorylessContext ctx(sys.A, sys.B, &cost, Vec::Ones(1), 2, 1.0, 1.0, 0.5, 1.0);
  CHECK_THROWS_AS(ctx.push_disturbance(Vec::Zero(1)), NumericalFailure);
  ctx.push_features(Mat::Zero(1, 1));
  CHECK_THROWS_AS(ctx.push_features(Mat::Zero(1, 1)), NumericalFailure);
  ctx.push_disturbance(Vec::Zero(1));
}

TEST_CASE("spectral params snapshot: JSON round trip") {
  DetRng rng(9);
  SpectralParams p = SpectralParams::zero(3, 2, 4, 7.5);
  for (Mat& s : p.M) s = rng.normal_mat(2, 4);
  const SpectralParams back = params_from_json(params_to_json(p));
  CHECK(back.slices() == 3);
  CHECK(back.n() == 2);
  CHECK(back.d() == 4);
  CHECK(back.radius == p.radius);
  for (int j = 0; j < 3; ++j) CHECK((back.M[j] - p.M[j]).cwiseAbs().maxCoeff() == 0.0);
}
