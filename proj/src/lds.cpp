#include "osc/lds.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <sstream>

namespace osc {

namespace {

void require_dims(const LdsSystem& sys, const Vec& x, const Vec& u, const Vec* w) {
  if (x.size() != sys.d) throw DimensionMismatch("state dimension != d");
  if (u.size() != sys.n) throw DimensionMismatch("control dimension != n");
  if (w && w->size() != sys.d) throw DimensionMismatch("disturbance dimension != d");
}

}  // namespace

LdsSystem make_system(Mat a, Mat b, double kappa, double kappa_b, double w,
                      double gamma, bool check_zero_policy) {
  if (a.rows() != a.cols()) throw std::invalid_argument("make_system: A must be square");
  if (b.rows() != a.rows()) throw DimensionMismatch("make_system: B rows != d");
  if (kappa < 1.0 || kappa_b < 1.0 || w < 1.0)
    throw std::invalid_argument("make_system: kappa, kappa_B, W must be >= 1");
  if (!(gamma > 0.0) || gamma > 2.0 / 3.0)
    throw std::invalid_argument("make_system: gamma must lie in (0, 2/3]");

  LdsSystem sys;
  sys.A = std::move(a);
  sys.B = std::move(b);
  sys.d = static_cast<int>(sys.A.rows());
  sys.n = static_cast<int>(sys.B.cols());
  sys.kappa = kappa;
  sys.kappa_B = kappa_b;
  sys.W = w;
  sys.gamma = gamma;
  sys.zero_policy_stable = check_zero_policy;

  if (operator_norm(sys.B) > kappa_b + 1e-9)
    throw std::invalid_argument("make_system: ||B|| exceeds kappa_B");
  if (check_zero_policy) {
    const int imax = static_cast<int>(std::ceil(3.0 / gamma));
    Mat pow = Mat::Identity(sys.d, sys.d);
    for (int i = 1; i <= imax; ++i) {
      pow = sys.A * pow;
      const double bound = kappa * kappa * std::pow(1.0 - gamma, i);
      if (operator_norm(pow) > bound * (1.0 + 1e-9) + 1e-12)
        throw std::invalid_argument("make_system: ||A^i|| violates the zero-policy decay bound");
    }
  }
  return sys;
}

LdsSystem generate_system(int d, int n, double rho_max, std::uint64_t seed,
                          double kappa_b, double w, double kappa_floor) {
  if (rho_max < 0.0 || rho_max >= 1.0)
    throw std::invalid_argument("generate_system: need 0 <= rho_max < 1");
  if (d < 1 || n < 1) throw std::invalid_argument("generate_system: d, n must be >= 1");

  DetRng rng(mix_seed(seed, 0x5e5));
  // Orthogonal diagonalizer from the QR of a gaussian matrix, sign-fixed.
  Mat g = rng.normal_mat(d, d);
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ();
  Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int i = 0; i < d; ++i)
    if (r(i, i) < 0.0) q.col(i) = -q.col(i);

  Vec lambda(d);
  for (int i = 0; i < d; ++i) lambda(i) = rng.uniform(0.0, rho_max);
  int arg_max = 0;
  lambda.maxCoeff(&arg_max);
  lambda(arg_max) = rho_max;
  if (d == 1) lambda(0) = rho_max;

  Mat a = q * lambda.asDiagonal() * q.transpose();

  Mat b = rng.normal_mat(d, n);
  const double bnorm = operator_norm(b);
  if (bnorm > kappa_b) b *= kappa_b / bnorm;

  const double gamma = 1.0 - rho_max;
  return make_system(std::move(a), std::move(b), std::max(1.0, kappa_floor),
                     std::max(1.0, kappa_b), std::max(1.0, w),
                     std::min(gamma, 2.0 / 3.0), /*check_zero_policy=*/true);
}

Vec step(const LdsSystem& sys, const Vec& x, const Vec& u, const Vec& w) {
  require_dims(sys, x, u, &w);
  return sys.A * x + sys.B * u + w;
}

Vec recover_disturbance(const LdsSystem& sys, const Vec& x_t, const Vec& u_t,
                        const Vec& x_next) {
  require_dims(sys, x_t, u_t, &x_next);
  return x_next - sys.A * x_t - sys.B * u_t;
}

std::string system_to_json(const LdsSystem& sys) {
  nlohmann::json j;
  j["d"] = sys.d;
  j["n"] = sys.n;
  j["kappa"] = sys.kappa;
  j["kappa_B"] = sys.kappa_B;
  j["W"] = sys.W;
  j["gamma"] = sys.gamma;
  j["zero_policy_stable"] = sys.zero_policy_stable;
  // Row-major on the wire.
  std::vector<double> a_rm, b_rm;
  a_rm.reserve(sys.A.size());
  b_rm.reserve(sys.B.size());
  for (int r = 0; r < sys.d; ++r)
    for (int c = 0; c < sys.d; ++c) a_rm.push_back(sys.A(r, c));
  for (int r = 0; r < sys.d; ++r)
    for (int c = 0; c < sys.n; ++c) b_rm.push_back(sys.B(r, c));
  j["A"] = a_rm;
  j["B"] = b_rm;
  return j.dump();
}

LdsSystem system_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  const int d = j.at("d").get<int>();
  const int n = j.at("n").get<int>();
  Mat a(d, d), b(d, n);
  const auto& aj = j.at("A");
  const auto& bj = j.at("B");
  if (static_cast<int>(aj.size()) != d * d || static_cast<int>(bj.size()) != d * n)
    throw ConfigError("system_from_json: matrix sizes do not match d/n");
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c) a(r, c) = aj.at(r * d + c).get<double>();
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < n; ++c) b(r, c) = bj.at(r * n + c).get<double>();
  return make_system(std::move(a), std::move(b), j.at("kappa").get<double>(),
                     j.at("kappa_B").get<double>(), j.at("W").get<double>(),
                     j.at("gamma").get<double>(),
                     j.value("zero_policy_stable", false));
}

// ---------------------------------------------------------------------------
// Costs
// ---------------------------------------------------------------------------

namespace {

void require_psd(const Mat& m, const char* name) {
  if (m.rows() != m.cols()) throw std::invalid_argument(std::string(name) + " must be square");
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw std::invalid_argument(std::string(name) + " must be symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(m, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-10 * std::max(m.trace(), 1.0))
    throw std::invalid_argument(std::string(name) + " must be PSD");
}

}  // namespace

CostFunction CostFunction::quadratic(Mat q, Mat r) {
  require_psd(q, "Q");
  require_psd(r, "R");
  CostFunction c;
  c.kind_ = Kind::Quadratic;
  c.g_ = std::max({1.0, 2.0 * operator_norm(q), 2.0 * operator_norm(r)});
  c.q_ = std::move(q);
  c.r_ = std::move(r);
  return c;
}

CostFunction CostFunction::hinge_state() {
  CostFunction c;
  c.kind_ = Kind::HingeState;
  c.g_ = 1.0;
  return c;
}

CostFunction CostFunction::plugin(PluginFn fn, double lipschitz_scale) {
  CostFunction c;
  c.kind_ = Kind::Plugin;
  c.fn_ = std::move(fn);
  c.g_ = std::max(1.0, lipschitz_scale);
  return c;
}

CostEval CostFunction::eval(const Vec& x, const Vec& u) const {
  CostEval out;
  switch (kind_) {
    case Kind::Quadratic: {
      if (x.size() != q_.rows() || u.size() != r_.rows())
        throw DimensionMismatch("quadratic cost: dimension mismatch");
      out.value = x.dot(q_ * x) + u.dot(r_ * u);
      out.grad_x = 2.0 * (q_ * x);
      out.grad_u = 2.0 * (r_ * u);
      return out;
    }
    case Kind::HingeState: {
      // max{-x0, -1}; below the kink the -x0 branch is active.
      out.grad_x = Vec::Zero(x.size());
      out.grad_u = Vec::Zero(u.size());
      if (x(0) < 1.0) {
        out.value = -x(0);
        out.grad_x(0) = -1.0;
      } else {
        out.value = -1.0;
      }
      return out;
    }
    case Kind::Plugin: {
      out = fn_(x, u);
      if (out.grad_x.size() != x.size() || out.grad_u.size() != u.size())
        throw NumericalFailure("plugin cost returned gradients with wrong shape");
      return out;
    }
  }
  throw NumericalFailure("unreachable cost kind");
}

// ---------------------------------------------------------------------------
// Signals
// ---------------------------------------------------------------------------

namespace {

// Per-step stream: independent of evaluation order.
DetRng step_rng(std::uint64_t seed, int t, std::uint64_t stream) {
  return DetRng(mix_seed(mix_seed(seed, stream), static_cast<std::uint64_t>(t) + 1));
}

}  // namespace

SignalGenerator::SignalGenerator(const DisturbanceSignal& spec, const LdsSystem& sys)
    : spec_(spec), a_(sys.A), d_(sys.d) {
  switch (spec_.kind) {
    case DisturbanceSignal::Kind::Sinusoidal: {
      DetRng rng(mix_seed(spec_.seed, 0x51a));
      omega_.resize(d_);
      phase_.resize(d_);
      for (int i = 0; i < d_; ++i) {
        omega_(i) = rng.uniform(0.05, 1.5);
        phase_(i) = rng.uniform(0.0, 2.0 * M_PI);
      }
      break;
    }
    case DisturbanceSignal::Kind::StuLike: {
      DetRng rng(mix_seed(spec_.seed, 0x52b));
      const int p = std::max(1, spec_.stu_hidden);
      stu_a_ = Mat::Zero(p, p);
      for (int i = 0; i < p; ++i) stu_a_(i, i) = rng.uniform(0.95, 0.9999);
      stu_c_ = rng.normal_mat(d_, p) / std::sqrt(static_cast<double>(p));
      stu_state_ = Vec::Zero(p);
      break;
    }
    case DisturbanceSignal::Kind::Constant:
      if (spec_.constant_value.size() != d_)
        throw std::invalid_argument("constant signal: value dimension != d");
      break;
    default:
      break;
  }
}

Vec SignalGenerator::clip(Vec w) const {
  const double norm = w.norm();
  if (norm > spec_.w_clip && norm > 0.0) w *= spec_.w_clip / norm;
  return w;
}

Vec SignalGenerator::emit(int t, const Vec& x_t) {
  switch (spec_.kind) {
    case DisturbanceSignal::Kind::Gaussian: {
      DetRng rng = step_rng(spec_.seed, t, 0x60c);
      return clip(spec_.scale * rng.normal_vec(d_));
    }
    case DisturbanceSignal::Kind::Sinusoidal: {
      Vec w(d_);
      for (int i = 0; i < d_; ++i)
        w(i) = spec_.scale * std::sin(omega_(i) * t + phase_(i));
      return clip(std::move(w));
    }
    case DisturbanceSignal::Kind::Constant:
      return clip(spec_.constant_value);
    case DisturbanceSignal::Kind::ReluResidual: {
      const Vec ax = a_ * x_t;
      return clip(ax.cwiseMax(0.0) - ax);
    }
    case DisturbanceSignal::Kind::StuLike: {
      if (t != stu_t_)
        throw std::invalid_argument("stu signal must be emitted with consecutive t");
      DetRng rng = step_rng(spec_.seed, t, 0x53d);
      stu_state_ = stu_a_ * stu_state_ + rng.normal_vec(stu_state_.size());
      ++stu_t_;
      return clip(spec_.scale * (stu_c_ * stu_state_));
    }
  }
  throw NumericalFailure("unreachable signal kind");
}

std::vector<Vec> generate_signal(const DisturbanceSignal& spec, const LdsSystem& sys,
                                 int T, const Vec& x0) {
  if (T < 1) throw std::invalid_argument("generate_signal: T must be >= 1");
  SignalGenerator gen(spec, sys);
  std::vector<Vec> out;
  out.reserve(T);
  Vec x = x0.size() ? x0 : Vec::Zero(sys.d);
  const Vec u = Vec::Zero(sys.n);
  for (int t = 0; t < T; ++t) {
    Vec w = gen.emit(t, x);
    x = step(sys, x, u, w);
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<Vec> generate_signal(const DisturbanceSignal& spec, const LdsSystem& sys, int T) {
  return generate_signal(spec, sys, T, Vec());
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

double EpisodeTrace::total_cost() const {
  double s = 0.0;
  for (double c : cost) s += c;
  return s;
}

double EpisodeTrace::mean_cost() const { return T > 0 ? total_cost() / T : 0.0; }

double EpisodeTrace::final_quarter_mean_cost() const {
  if (T == 0) return 0.0;
  const int start = T - std::max(1, T / 4);
  double s = 0.0;
  for (int t = start; t < T; ++t) s += cost[t];
  return s / (T - start);
}

TraceValidation validate_trace(const EpisodeTrace& trace, const LdsSystem& sys) {
  TraceValidation v;
  for (int t = 0; t < trace.T; ++t) {
    const Vec pred = sys.A * trace.x[t] + sys.B * trace.u[t] + trace.w[t];
    v.max_replay_err = std::max(v.max_replay_err, (trace.x[t + 1] - pred).norm());
    if (trace.w[t].norm() > sys.W * (1.0 + 1e-12)) ++v.disturbance_bound_violations;
  }
  v.replay_ok = v.max_replay_err <= 1e-9;
  return v;
}

EpisodeTrace simulate(const LdsSystem& sys, Controller& controller,
                      const DisturbanceSignal& sig, const CostFunction& cost, int T,
                      const SimulateOptions& opt) {
  if (T < 1) throw std::invalid_argument("simulate: T must be >= 1");
  SignalGenerator gen(sig, sys);

  EpisodeTrace trace;
  trace.T = T;
  trace.x.reserve(T + 1);
  trace.u.reserve(T);
  trace.w.reserve(T);
  trace.cost.resize(T);
  trace.memoryless_loss.assign(T, std::numeric_limits<double>::quiet_NaN());
  trace.step_ns.assign(T, 0);

  Vec x = opt.x0.size() ? opt.x0 : Vec::Zero(sys.d);
  if (x.size() != sys.d) throw DimensionMismatch("simulate: x0 dimension != d");
  trace.x.push_back(x);

  for (int t = 0; t < T; ++t) {
    const auto t0 = std::chrono::steady_clock::now();
    Vec u;
    try {
      u = controller.control(x);
    } catch (const std::exception& e) {
      throw NumericalFailure("controller failed at step " + std::to_string(t) + ": " + e.what());
    }
    if (u.size() != sys.n) throw DimensionMismatch("controller returned wrong control dimension");

    Vec w = gen.emit(t, x);  // revealed only after u_t is chosen
    Vec x_next = sys.A * x + sys.B * u + w;

    CostEval ce;
    try {
      ce = cost.eval(x, u);
    } catch (const std::exception& e) {
      throw NumericalFailure("cost failed at step " + std::to_string(t) + ": " + e.what());
    }
    trace.cost[t] = ce.value;

    controller.observe(x, u, x_next);
    if (opt.record_memoryless) {
      if (auto ml = controller.last_memoryless_loss()) trace.memoryless_loss[t] = *ml;
    }
    if (opt.record_timing) {
      const auto t1 = std::chrono::steady_clock::now();
      trace.step_ns[t] =
          std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
    }

    trace.u.push_back(std::move(u));
    trace.w.push_back(std::move(w));
    trace.x.push_back(x_next);
    x = std::move(x_next);
  }
  return trace;
}

std::string trace_to_csv(const EpisodeTrace& trace) {
  std::ostringstream out;
  const int d = trace.T > 0 ? static_cast<int>(trace.w[0].size()) : 0;
  const int n = trace.T > 0 ? static_cast<int>(trace.u[0].size()) : 0;
  out << "t";
  for (int i = 0; i < d; ++i) out << ",x_" << i;
  for (int i = 0; i < n; ++i) out << ",u_" << i;
  for (int i = 0; i < d; ++i) out << ",w_" << i;
  out << ",cost,memoryless_loss,step_ns\n";
  for (int t = 0; t < trace.T; ++t) {
    out << t;
    for (int i = 0; i < d; ++i) out << "," << format_double(trace.x[t](i));
    for (int i = 0; i < n; ++i) out << "," << format_double(trace.u[t](i));
    for (int i = 0; i < d; ++i) out << "," << format_double(trace.w[t](i));
    out << "," << format_double(trace.cost[t]) << ",";
    if (!std::isnan(trace.memoryless_loss[t])) out << format_double(trace.memoryless_loss[t]);
    out << "," << trace.step_ns[t] << "\n";
  }
  return out.str();
}

std::string trace_summary_json(const EpisodeTrace& trace, const std::string& config_hash) {
  std::ostringstream out;
  out << "{\"total_cost\":" << format_double(trace.total_cost())
      << ",\"mean_cost\":" << format_double(trace.mean_cost()) << ",\"T\":" << trace.T
      << ",\"config_hash\":\"" << config_hash << "\"}";
  return out.str();
}

}  // namespace osc
