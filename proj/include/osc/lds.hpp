#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "osc/common.hpp"

namespace osc {

// ---------------------------------------------------------------------------
// Linear dynamical system  x_{t+1} = A x_t + B u_t + w_t  with the bound
// metadata used by the schedules and the trajectory-bound checks.
// ---------------------------------------------------------------------------

struct LdsSystem {
  Mat A;  // d x d
  Mat B;  // d x n
  int d = 0;
  int n = 0;
  double kappa_B = 1.0;  // ||B|| <= kappa_B
  double W = 1.0;        // ||w_t|| <= W
  double kappa = 1.0;
  double gamma = 0.1;                // stability margin, (0, 2/3]
  bool zero_policy_stable = false;   // the zero policy lies in the stable class
};

// Validates dimension/bound invariants; when check_zero_policy is set, also
// checks ||A^i|| <= kappa^2 (1-gamma)^i for i = 1..ceil(3/gamma).
LdsSystem make_system(Mat a, Mat b, double kappa, double kappa_b, double w,
                      double gamma, bool check_zero_policy);

// Random diagonalizable system: A = H diag(lambda) H^T with H orthogonal,
// lambda uniform in [0, rho_max] and max forced to rho_max; B gaussian,
// rescaled when its spectral norm exceeds kappa_b.
LdsSystem generate_system(int d, int n, double rho_max, std::uint64_t seed,
                          double kappa_b = 1.0, double w = 1.0,
                          double kappa_floor = 1.0);

Vec step(const LdsSystem& sys, const Vec& x, const Vec& u, const Vec& w);
Vec recover_disturbance(const LdsSystem& sys, const Vec& x_t, const Vec& u_t,
                        const Vec& x_next);

std::string system_to_json(const LdsSystem& sys);
LdsSystem system_from_json(const std::string& text);

// ---------------------------------------------------------------------------
// Cost functions: convex, with analytic gradients.
// ---------------------------------------------------------------------------

struct CostEval {
  double value = 0.0;
  Vec grad_x;
  Vec grad_u;
};

class CostFunction {
 public:
  enum class Kind { Quadratic, HingeState, Plugin };
  using PluginFn = std::function<CostEval(const Vec&, const Vec&)>;

  // c(x, u) = x'Qx + u'Ru with Q, R symmetric PSD.
  static CostFunction quadratic(Mat q, Mat r);
  // c(x, u) = max{-x_0, -1}; the scalar demo cost. Subgradient 0 at the kink.
  static CostFunction hinge_state();
  static CostFunction plugin(PluginFn fn, double lipschitz_scale);

  CostEval eval(const Vec& x, const Vec& u) const;
  Kind kind() const { return kind_; }
  double lipschitz_scale() const { return g_; }  // the G of the gradient bound
  const Mat& q() const { return q_; }
  const Mat& r() const { return r_; }

 private:
  CostFunction() = default;
  Kind kind_ = Kind::Quadratic;
  Mat q_, r_;
  PluginFn fn_;
  double g_ = 1.0;
};

inline CostEval eval_cost(const CostFunction& c, const Vec& x, const Vec& u) {
  return c.eval(x, u);
}

// ---------------------------------------------------------------------------
// Disturbance signals. Every emitted w_t satisfies ||w_t|| <= w_clip; the
// seeded kinds are pure functions of (kind, seed, t). The relu kind is
// trajectory-dependent and is emitted online during simulation.
// ---------------------------------------------------------------------------

struct DisturbanceSignal {
  enum class Kind { Gaussian, Sinusoidal, Constant, ReluResidual, StuLike };
  Kind kind = Kind::Gaussian;
  std::uint64_t seed = 0;
  double w_clip = 1.0;
  double scale = 1.0;   // pre-clip amplitude (gaussian/sinusoidal/stu)
  Vec constant_value;   // Constant kind
  int stu_hidden = 8;   // StuLike hidden dimension
};

class SignalGenerator {
 public:
  SignalGenerator(const DisturbanceSignal& spec, const LdsSystem& sys);

  // w_t, given the state x_t at which the step is taken. Must be called with
  // consecutive t starting from 0 (the stu kind carries hidden state).
  Vec emit(int t, const Vec& x_t);

 private:
  DisturbanceSignal spec_;
  const Mat a_;
  int d_;
  Vec omega_, phase_;       // sinusoidal
  Mat stu_a_, stu_c_;       // stu-like hidden system
  Vec stu_state_;
  int stu_t_ = 0;
  Vec clip(Vec w) const;
};

// Materializes the signal along the zero-control trajectory from x0.
std::vector<Vec> generate_signal(const DisturbanceSignal& spec, const LdsSystem& sys,
                                 int T, const Vec& x0);
std::vector<Vec> generate_signal(const DisturbanceSignal& spec, const LdsSystem& sys,
                                 int T);

// ---------------------------------------------------------------------------
// Controllers see x_t, choose u_t, then observe x_{t+1}; w_t is revealed only
// through that observation.
// ---------------------------------------------------------------------------

class Controller {
 public:
  virtual ~Controller() = default;
  virtual Vec control(const Vec& x) = 0;
  virtual void observe(const Vec& x, const Vec& u, const Vec& x_next) = 0;
  // Memory-less loss at the parameters used this step, when the controller
  // tracks one (OSC/GPC); recorded into the trace.
  virtual std::optional<double> last_memoryless_loss() const { return std::nullopt; }
};

class ZeroController : public Controller {
 public:
  explicit ZeroController(int n) : n_(n) {}
  Vec control(const Vec&) override { return Vec::Zero(n_); }
  void observe(const Vec&, const Vec&, const Vec&) override {}

 private:
  int n_;
};

// ---------------------------------------------------------------------------
// Episode traces.
// ---------------------------------------------------------------------------

struct EpisodeTrace {
  int T = 0;
  std::vector<Vec> x;  // T+1 states
  std::vector<Vec> u;  // T controls
  std::vector<Vec> w;  // T disturbances
  std::vector<double> cost;
  std::vector<double> memoryless_loss;  // NaN when not tracked
  std::vector<std::int64_t> step_ns;    // zero unless timing was requested

  double total_cost() const;
  double mean_cost() const;
  // Mean cost over the final quarter of the horizon.
  double final_quarter_mean_cost() const;
};

struct TraceValidation {
  bool replay_ok = false;
  double max_replay_err = 0.0;
  int disturbance_bound_violations = 0;  // steps with ||w_t|| > W
};

TraceValidation validate_trace(const EpisodeTrace& trace, const LdsSystem& sys);

struct SimulateOptions {
  Vec x0;                      // empty => zeros
  bool record_timing = false;
  bool record_memoryless = true;
};

// Runs the episode; the controller is queried strictly before w_t exists.
EpisodeTrace simulate(const LdsSystem& sys, Controller& controller,
                      const DisturbanceSignal& sig, const CostFunction& cost, int T,
                      const SimulateOptions& opt = {});

std::string trace_to_csv(const EpisodeTrace& trace);
std::string trace_summary_json(const EpisodeTrace& trace, const std::string& config_hash);

}  // namespace osc
