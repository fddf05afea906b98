#include <doctest.h>

#include <cmath>

#include "osc/lds.hpp"

using namespace osc;

namespace {

LdsSystem scalar_system(double a, double b, double gamma, double kappa = 1.0,
                        bool check = true, double w = 1.0) {
  Mat am(1, 1), bm(1, 1);
  am << a;
  bm << b;
  return make_system(am, bm, kappa, std::max(1.0, std::abs(b)), w, gamma, check);
}

// Spy that counts how many observations had arrived before each control call.
class SpyController : public Controller {
 public:
  explicit SpyController(int n) : n_(n) {}
  Vec control(const Vec&) override {
    observed_at_control.push_back(observe_count);
    return Vec::Zero(n_);
  }
  void observe(const Vec&, const Vec&, const Vec&) override { ++observe_count; }
  int observe_count = 0;
  std::vector<int> observed_at_control;

 private:
  int n_;
};

}  // namespace

TEST_CASE("step: the dynamics equation") {
  SUBCASE("pure disturbance") {
    Mat a = Mat::Zero(2, 2), b = Mat::Zero(2, 1);
    const LdsSystem sys = make_system(a, b, 1.0, 1.0, 2.5, 0.5, true);
    Vec x(2), u(1), w(2);
    x << 3.0, -1.0;
    u << 7.0;
    w << 1.0, 2.0;
    const Vec next = step(sys, x, u, w);
    CHECK(next(0) == 1.0);
    CHECK(next(1) == 2.0);
  }
  SUBCASE("scalar") {
    const LdsSystem sys = scalar_system(0.5, 1.0, 0.5);
    Vec x(1), u(1), w(1);
    x << 2.0;
    u << 1.0;
    w << 0.0;
    CHECK(step(sys, x, u, w)(0) == doctest::Approx(2.0));
  }
  SUBCASE("hand matrix arithmetic") {
    Mat a = Mat::Identity(2, 2);
    Mat b(2, 1);
    b << 1.0, 0.0;
    const LdsSystem sys = make_system(a, b, 1.0, 1.0, 1.0, 0.1, false);
    Vec x(2), u(1), w(2);
    x << 1.0, 1.0;
    u << 3.0;
    w << 0.5, -0.5;
    const Vec next = step(sys, x, u, w);
    CHECK(next(0) == doctest::Approx(4.5));
    CHECK(next(1) == doctest::Approx(0.5));
  }
  SUBCASE("dimension mismatch") {
    const LdsSystem sys = scalar_system(0.5, 1.0, 0.5);
    CHECK_THROWS_AS(step(sys, Vec::Zero(2), Vec::Zero(1), Vec::Zero(1)), DimensionMismatch);
    CHECK_THROWS_AS(step(sys, Vec::Zero(1), Vec::Zero(2), Vec::Zero(1)), DimensionMismatch);
  }
}

TEST_CASE("recover_disturbance inverts step") {
  const LdsSystem sys = scalar_system(0.5, 1.0, 0.5);
  Vec x(1), u(1), xn(1);
  x << 2.0;
  u << 1.0;
  xn << 3.0;
  CHECK(recover_disturbance(sys, x, u, xn)(0) == doctest::Approx(1.0));

  DetRng rng(11);
  const LdsSystem sys2 = generate_system(4, 2, 0.8, 3);
  for (int i = 0; i < 25; ++i) {
    const Vec xr = rng.normal_vec(4), wr = rng.normal_vec(4), ur = rng.normal_vec(2);
    const Vec w_back = recover_disturbance(sys2, xr, ur, step(sys2, xr, ur, wr));
    CHECK((w_back - wr).norm() <= 1e-12);
  }
}

TEST_CASE("oversized disturbances flag the trace, not the run") {
  const LdsSystem sys = scalar_system(0.5, 1.0, 0.5);  // W = 1
  ZeroController zero(1);
  DisturbanceSignal sig;
  sig.kind = DisturbanceSignal::Kind::Constant;
  sig.constant_value = Vec::Constant(1, 2.0);
  sig.w_clip = 2.0;  // twice the declared bound W = 1
  const CostFunction cost = CostFunction::quadratic(Mat::Identity(1, 1), Mat::Identity(1, 1));
  const EpisodeTrace trace = simulate(sys, zero, sig, cost, 10);
  const TraceValidation v = validate_trace(trace, sys);
  CHECK(v.replay_ok);
  CHECK(v.disturbance_bound_violations == 10);
}

TEST_CASE("eval_cost") {
  SUBCASE("identity quadratic") {
    const CostFunction c = CostFunction::quadratic(Mat::Identity(2, 2), Mat::Identity(1, 1));
    Vec x(2), u(1);
    x << 1.0, 0.0;
    u << 1.0;
    const CostEval e = c.eval(x, u);
    CHECK(e.value == doctest::Approx(2.0));
    CHECK(e.grad_x(0) == doctest::Approx(2.0));
    CHECK(e.grad_x(1) == doctest::Approx(0.0));
    CHECK(e.grad_u(0) == doctest::Approx(2.0));
  }
  SUBCASE("minimum at the origin") {
    const CostFunction c = CostFunction::quadratic(Mat::Identity(3, 3), Mat::Identity(2, 2));
    const CostEval e = c.eval(Vec::Zero(3), Vec::Zero(2));
    CHECK(e.value == 0.0);
    CHECK(e.grad_x.norm() == 0.0);
    CHECK(e.grad_u.norm() == 0.0);
  }
  SUBCASE("hinge-state demo cost") {
    const CostFunction c = CostFunction::hinge_state();
    Vec u = Vec::Zero(1);
    CHECK(c.eval(Vec::Constant(1, 0.5), u).value == doctest::Approx(-0.5));
    CHECK(c.eval(Vec::Constant(1, 0.5), u).grad_x(0) == doctest::Approx(-1.0));
    CHECK(c.eval(Vec::Constant(1, 3.0), u).value == doctest::Approx(-1.0));
    CHECK(c.eval(Vec::Constant(1, 3.0), u).grad_x(0) == 0.0);
  }
  SUBCASE("analytic gradient matches central differences") {
    DetRng rng(5);
    Mat qroot = rng.normal_mat(3, 3);
    Mat rroot = rng.normal_mat(2, 2);
    const CostFunction c = CostFunction::quadratic(qroot * qroot.transpose(),
                                                   rroot * rroot.transpose());
    const double eps = 1e-6;
    for (int trial = 0; trial < 10; ++trial) {
      const Vec x = rng.normal_vec(3), u = rng.normal_vec(2);
      const CostEval e = c.eval(x, u);
      for (int i = 0; i < 3; ++i) {
        Vec xp = x, xm = x;
        xp(i) += eps;
        xm(i) -= eps;
        const double fd = (c.eval(xp, u).value - c.eval(xm, u).value) / (2 * eps);
        CHECK(std::abs(fd - e.grad_x(i)) <= 1e-5 * std::max(1.0, std::abs(fd)));
      }
      for (int i = 0; i < 2; ++i) {
        Vec up = u, um = u;
        up(i) += eps;
        um(i) -= eps;
        const double fd = (c.eval(x, up).value - c.eval(x, um).value) / (2 * eps);
        CHECK(std::abs(fd - e.grad_u(i)) <= 1e-5 * std::max(1.0, std::abs(fd)));
      }
    }
  }
  SUBCASE("PSD validation") {
    Mat bad(2, 2);
    bad << 1.0, 0.0, 0.0, -1.0;
    CHECK_THROWS_AS(CostFunction::quadratic(bad, Mat::Identity(1, 1)), std::invalid_argument);
  }
}

TEST_CASE("generate_system") {
  SUBCASE("scalar pins the top eigenvalue") {
    const LdsSystem sys = generate_system(1, 1, 0.9, 0);
    CHECK(sys.A(0, 0) == doctest::Approx(0.9).epsilon(1e-12));
  }
  SUBCASE("spectral radius hits rho_max") {
    const LdsSystem sys = generate_system(10, 4, 0.9, 42);
    // Power iteration as the independent check.
    DetRng rng(1);
    Vec v = rng.normal_vec(10).normalized();
    double lambda = 0.0;
    const Mat sym = sys.A;  // A is symmetric by construction (orthogonal H)
    for (int it = 0; it < 2000; ++it) {
      const Vec nv = sym * v;
      lambda = nv.norm();
      v = nv / lambda;
    }
    CHECK(lambda == doctest::Approx(0.9).epsilon(1e-9));
    CHECK(operator_norm(sys.B) <= sys.kappa_B + 1e-9);
  }
  SUBCASE("same seed, bit-identical systems") {
    const LdsSystem a = generate_system(6, 3, 0.85, 7);
    const LdsSystem b = generate_system(6, 3, 0.85, 7);
    CHECK((a.A - b.A).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.B - b.B).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("rho_max >= 1 rejected") {
    CHECK_THROWS_AS(generate_system(2, 1, 1.0, 0), std::invalid_argument);
  }
}

TEST_CASE("generate_signal") {
  const LdsSystem sys = generate_system(3, 2, 0.5, 9);
  SUBCASE("constant") {
    DisturbanceSignal sig;
    sig.kind = DisturbanceSignal::Kind::Constant;
    sig.constant_value = Vec::Constant(3, 0.25);
    sig.w_clip = 10.0;
    const auto ws = generate_signal(sig, sys, 5);
    for (const Vec& w : ws) CHECK((w - Vec::Constant(3, 0.25)).norm() == 0.0);
  }
  SUBCASE("gaussian respects the clip") {
    DisturbanceSignal sig;
    sig.kind = DisturbanceSignal::Kind::Gaussian;
    sig.scale = 5.0;
    sig.w_clip = 1.0;
    sig.seed = 3;
    for (const Vec& w : generate_signal(sig, sys, 200)) CHECK(w.norm() <= 1.0 + 1e-12);
  }
  SUBCASE("relu residual vanishes on nonnegative trajectories") {
    Mat a(2, 2), b(2, 1);
    a << 0.5, 0.1, 0.2, 0.3;
    b << 1.0, 0.0;
    const LdsSystem pos = make_system(a, b, 1.0, 1.0, 1.0, 0.3, false);
    DisturbanceSignal sig;
    sig.kind = DisturbanceSignal::Kind::ReluResidual;
    const auto ws = generate_signal(sig, pos, 20, Vec::Constant(2, 1.0));
    for (const Vec& w : ws) CHECK(w.norm() == 0.0);
  }
  SUBCASE("stu-like is deterministic and clipped") {
    DisturbanceSignal sig;
    sig.kind = DisturbanceSignal::Kind::StuLike;
    sig.seed = 17;
    sig.w_clip = 2.0;
    const auto a = generate_signal(sig, sys, 50);
    const auto b = generate_signal(sig, sys, 50);
    for (int t = 0; t < 50; ++t) {
      CHECK((a[t] - b[t]).norm() == 0.0);
      CHECK(a[t].norm() <= 2.0 + 1e-12);
    }
  }
}

TEST_CASE("simulate") {
  SUBCASE("zero controller, zero signal") {
    const LdsSystem sys = scalar_system(0.5, 1.0, 0.5);
    ZeroController zero(1);
    DisturbanceSignal sig;
    sig.kind = DisturbanceSignal::Kind::Constant;
    sig.constant_value = Vec::Zero(1);
    const CostFunction cost =
        CostFunction::quadratic(Mat::Identity(1, 1), Mat::Identity(1, 1));
    const EpisodeTrace trace = simulate(sys, zero, sig, cost, 25);
    CHECK(trace.total_cost() == 0.0);
    for (const Vec& x : trace.x) CHECK(x.norm() == 0.0);
  }
  SUBCASE("geometric series replay") {
    const LdsSystem sys = scalar_system(0.9, 1.0, 0.1);
    ZeroController zero(1);
    DisturbanceSignal sig;
    sig.kind = DisturbanceSignal::Kind::Constant;
    sig.constant_value = Vec::Constant(1, 1.0);
    const CostFunction cost =
        CostFunction::quadratic(Mat::Identity(1, 1), Mat::Identity(1, 1));
    const EpisodeTrace trace = simulate(sys, zero, sig, cost, 300);
    for (int t = 0; t <= 300; ++t) {
      const double expected = (1.0 - std::pow(0.9, t)) / 0.1;
      CHECK(trace.x[t](0) == doctest::Approx(expected).epsilon(1e-12));
    }
    CHECK(trace.x[300](0) == doctest::Approx(10.0).epsilon(1e-9));
  }
  SUBCASE("replay consistency on a random episode") {
    const LdsSystem sys = generate_system(4, 2, 0.8, 21);
    ZeroController zero(2);
    DisturbanceSignal sig;
    sig.kind = DisturbanceSignal::Kind::Gaussian;
    sig.seed = 5;
    const CostFunction cost =
        CostFunction::quadratic(Mat::Identity(4, 4), Mat::Identity(2, 2));
    const EpisodeTrace trace = simulate(sys, zero, sig, cost, 200);
    CHECK(validate_trace(trace, sys).replay_ok);
  }
  SUBCASE("causality: controller never sees w_t before choosing u_t") {
    const LdsSystem sys = generate_system(2, 1, 0.5, 2);
    SpyController spy(1);
    DisturbanceSignal sig;
    sig.kind = DisturbanceSignal::Kind::Gaussian;
    sig.seed = 1;
    const CostFunction cost =
        CostFunction::quadratic(Mat::Identity(2, 2), Mat::Identity(1, 1));
    simulate(sys, spy, sig, cost, 50);
    for (int t = 0; t < 50; ++t) CHECK(spy.observed_at_control[t] == t);
  }
  SUBCASE("bounded trajectories under zero control") {
    const LdsSystem sys = generate_system(4, 2, 0.8, 31);  // kappa=1, gamma=0.2, W=1
    ZeroController zero(2);
    DisturbanceSignal sig;
    sig.kind = DisturbanceSignal::Kind::Gaussian;
    sig.seed = 8;
    sig.w_clip = 1.0;
    const CostFunction cost =
        CostFunction::quadratic(Mat::Identity(4, 4), Mat::Identity(2, 2));
    const EpisodeTrace trace = simulate(sys, zero, sig, cost, 500);
    const double bound = sys.kappa * sys.kappa * sys.W / sys.gamma + 1e-6;
    for (const Vec& x : trace.x) CHECK(x.norm() <= bound);
  }
  SUBCASE("determinism: identical runs, identical bytes") {
    const LdsSystem sys = generate_system(3, 1, 0.7, 13);
    DisturbanceSignal sig;
    sig.kind = DisturbanceSignal::Kind::Sinusoidal;
    sig.seed = 4;
    const CostFunction cost =
        CostFunction::quadratic(Mat::Identity(3, 3), Mat::Identity(1, 1));
    ZeroController z1(1), z2(1);
    const std::string csv1 = trace_to_csv(simulate(sys, z1, sig, cost, 100));
    const std::string csv2 = trace_to_csv(simulate(sys, z2, sig, cost, 100));
    CHECK(csv1 == csv2);
  }
}

TEST_CASE("make_system validates the zero-policy decay bound") {
  Mat a(1, 1), b(1, 1);
  a << 0.9;
  b << 1.0;
  // gamma = 0.5 claims ||A^i|| <= (1-gamma)^i = 0.5^i, violated by 0.9^i.
  CHECK_THROWS_AS(make_system(a, b, 1.0, 1.0, 1.0, 0.5, true), std::invalid_argument);
  CHECK_NOTHROW(make_system(a, b, 1.0, 1.0, 1.0, 0.5, false));
  CHECK_NOTHROW(make_system(a, b, 1.0, 1.0, 1.0, 0.1, true));
}

TEST_CASE("system JSON round trip") {
  const LdsSystem sys = generate_system(3, 2, 0.6, 77);
  const LdsSystem back = system_from_json(system_to_json(sys));
  CHECK((back.A - sys.A).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.B - sys.B).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.kappa == sys.kappa);
  CHECK(back.gamma == sys.gamma);
}

TEST_CASE("relu signal realizes x_{t+1} = relu(A x_t) + B u_t") {
  const LdsSystem sys = generate_system(3, 2, 0.8, 17, 1.0, 10.0);
  DisturbanceSignal sig;
  sig.kind = DisturbanceSignal::Kind::ReluResidual;
  sig.w_clip = 10.0;  // generous: no clipping on this run
  Mat k(2, 3);
  k << 0.1, 0.0, -0.1, 0.0, 0.1, 0.0;
  struct FixedGain : Controller {
    Mat k;
    explicit FixedGain(Mat kk) : k(std::move(kk)) {}
    Vec control(const Vec& x) override { return k * x; }
    void observe(const Vec&, const Vec&, const Vec&) override {}
  } policy(k);
  const CostFunction cost =
      CostFunction::quadratic(Mat::Identity(3, 3), Mat::Identity(2, 2));
  SimulateOptions opt;
  opt.x0 = Vec::Constant(3, 1.0);
  const EpisodeTrace tr = simulate(sys, policy, sig, cost, 30, opt);
  for (int t = 0; t < 30; ++t) {
    const Vec expect = (sys.A * tr.x[t]).cwiseMax(0.0) + sys.B * tr.u[t];
    CHECK((tr.x[t + 1] - expect).norm() <= 1e-12);
  }
}

TEST_CASE("simulate attaches the failing step to cost errors") {
  const LdsSystem sys = generate_system(1, 1, 0.5, 3);
  ZeroController zero(1);
  DisturbanceSignal sig;
  sig.kind = DisturbanceSignal::Kind::Constant;
  sig.constant_value = Vec::Ones(1);
  int countdown = 7;
  const CostFunction bomb = CostFunction::plugin(
      [&countdown](const Vec& x, const Vec& u) -> CostEval {
        if (--countdown < 0) throw std::runtime_error("boom");
        return {0.0, Vec::Zero(x.size()), Vec::Zero(u.size())};
      },
      1.0);
  try {
    simulate(sys, zero, sig, bomb, 100);
    FAIL("expected NumericalFailure");
  } catch (const NumericalFailure& e) {
    CHECK(std::string(e.what()).find("step 7") != std::string::npos);
  }
}
