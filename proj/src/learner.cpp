#include "osc/learner.hpp"

#include <cmath>
#include <sstream>

namespace osc {

Schedule theoretical_schedule(long long T, double gamma, double kappa, double kappa_b,
                              double w, double g, int d) {
  if (T < 10) throw std::invalid_argument("theoretical_schedule: T must be >= 10");
  if (!(gamma > 0.0) || gamma > 2.0 / 3.0)
    throw std::invalid_argument("theoretical_schedule: gamma must lie in (0, 2/3]");
  if (kappa < 1.0 || kappa_b < 1.0 || w < 1.0 || g < 1.0)
    throw std::invalid_argument("theoretical_schedule: kappa, kappa_B, W, G must be >= 1");
  if (d < 1) throw std::invalid_argument("theoretical_schedule: d must be >= 1");

  Schedule s;
  s.T = T;
  s.gamma = gamma;
  s.kappa = kappa;
  s.kappa_B = kappa_b;
  s.W = w;
  s.G = g;
  s.C1 = g * kappa_b * std::pow(kappa, 8) * w * w;
  s.C2 = std::sqrt(2.0) * std::pow(kappa, 5) / (3.0 * s.C1);

  const double g3 = gamma * gamma * gamma;
  const double td = static_cast<double>(T);
  s.m = static_cast<int>(std::ceil(std::log(8.0 * s.C1 * std::sqrt(td) / g3) / gamma));
  s.h_uncapped = static_cast<int>(
      std::ceil(4.0 * std::log(td) * std::log(900.0 * s.C1 * d * td / g3)));
  s.h = std::min(s.h_uncapped, s.m);
  s.eta = s.C2 * std::sqrt(g3 / (td * s.m * s.h));
  s.radius = std::pow(kappa, 3) * std::sqrt(2.0 * s.h / gamma);
  return s;
}

std::string schedule_to_json(const Schedule& s) {
  std::ostringstream out;
  out << "{\"m\":" << s.m << ",\"h\":" << s.h << ",\"h_uncapped\":" << s.h_uncapped
      << ",\"eta\":" << format_double(s.eta) << ",\"radius\":" << format_double(s.radius)
      << ",\"C1\":" << format_double(s.C1) << ",\"C2\":" << format_double(s.C2) << "}";
  return out.str();
}

// ---------------------------------------------------------------------------
// MemorylessContext
// ---------------------------------------------------------------------------

MemorylessContext::MemorylessContext(Mat a, Mat b, const CostFunction* cost, Vec weights,
                                     int m_x, double kappa, double kappa_b, double gamma,
                                     double w_bound)
    : a_(std::move(a)),
      b_(std::move(b)),
      cost_(cost),
      weights_(std::move(weights)),
      m_x_(m_x),
      kappa_(kappa),
      kappa_b_(kappa_b),
      gamma_(gamma),
      w_bound_(w_bound) {
  if (a_.rows() != a_.cols()) throw DimensionMismatch("MemorylessContext: A must be square");
  if (b_.rows() != a_.rows()) throw DimensionMismatch("MemorylessContext: B rows != d");
  if (m_x_ < 1) throw std::invalid_argument("MemorylessContext: m_x must be >= 1");
  d_ = static_cast<int>(a_.rows());
  n_ = static_cast<int>(b_.cols());
}

void MemorylessContext::push_features(Mat f) {
  if (f.rows() != d_ || f.cols() != weights_.size())
    throw DimensionMismatch("push_features: expected d x P feature matrix");
  if (has_pending_features_)
    throw NumericalFailure("push_features: called twice without push_disturbance");
  features_.push_front(std::move(f));
  if (static_cast<int>(features_.size()) > m_x_ + 1) features_.pop_back();
  has_pending_features_ = true;
}

void MemorylessContext::push_disturbance(Vec w) {
  if (w.size() != d_) throw DimensionMismatch("push_disturbance: wrong dimension");
  if (!has_pending_features_)
    throw NumericalFailure("push_disturbance: push_features must come first");
  dist_.push_front(std::move(w));
  if (static_cast<int>(dist_.size()) > m_x_) dist_.pop_back();
  has_pending_features_ = false;
}

Vec MemorylessContext::apply(const SpectralParams& params, const Mat& f) const {
  Vec u = Vec::Zero(n_);
  for (int j = 0; j < params.slices(); ++j) {
    u.noalias() += weights_(j) * (params.M[j] * f.col(j));
  }
  return u;
}

Vec MemorylessContext::control_of(const SpectralParams& params) const {
  if (features_.empty()) return Vec::Zero(n_);
  return apply(params, features_.front());
}

std::pair<Vec, Vec> MemorylessContext::state_control(const SpectralParams& params) const {
  if (!has_pending_features_)
    throw NumericalFailure("state_control: no features for the current step");
  if (params.slices() != weights_.size())
    throw DimensionMismatch("state_control: slice count != feature count");
  const Vec u = apply(params, features_.front());
  const int depth = std::min<int>(m_x_, static_cast<int>(dist_.size()));
  // x_t(M) = sum_{i=1..depth} A^(i-1) (w_{t-i} + B u_{t-i}(M)), by Horner.
  Vec x = Vec::Zero(d_);
  for (int i = depth; i >= 1; --i) {
    x = a_ * x;
    x += dist_[i - 1];
    x.noalias() += b_ * apply(params, features_[i]);
  }
  return {x, u};
}

double MemorylessContext::loss_of(const SpectralParams& params) const {
  const auto [x, u] = state_control(params);
  return cost_->eval(x, u).value;
}

LossGrad MemorylessContext::loss_and_grad(const SpectralParams& params) const {
  const auto [x, u] = state_control(params);
  const CostEval ce = cost_->eval(x, u);

  LossGrad out;
  out.loss = ce.value;
  out.grad.assign(params.slices(), Mat::Zero(n_, d_));

  const int P = params.slices();
  const int depth = std::min<int>(m_x_, static_cast<int>(dist_.size()));
  double max_u = u.norm();

  // d loss / d M_j = c_j [ g_u f_j(t)' + sum_i ((A^{i-1} B)' g_x) f_j(t-i)' ].
  for (int j = 0; j < P; ++j) {
    out.grad[j].noalias() = weights_(j) * ce.grad_u * features_.front().col(j).transpose();
  }
  Vec y = ce.grad_x;  // (A')^{i-1} g_x, built incrementally
  for (int i = 1; i <= depth; ++i) {
    const Vec r = b_.transpose() * y;
    const Mat& f = features_[i];
    for (int j = 0; j < P; ++j) {
      out.grad[j].noalias() += weights_(j) * r * f.col(j).transpose();
    }
    if (i < depth) y = a_.transpose() * y;
    max_u = std::max(max_u, apply(params, f).norm());
  }

  out.trunc_bound = kappa_ * kappa_ * std::pow(1.0 - gamma_, m_x_) *
                    (w_bound_ + kappa_b_ * max_u) / gamma_;
  return out;
}

Mat spectral_features(const FilterBank& bank, const DisturbanceBuffer& window) {
  Mat f(window.dim(), bank.h);
  for (int j = 0; j < bank.h; ++j) f.col(j) = window.window_dot(bank.phis.col(j));
  return f;
}

Mat lag_features(const DisturbanceBuffer& window, int mprime) {
  if (mprime > window.memory())
    throw DimensionMismatch("lag_features: mprime exceeds window memory");
  Mat f(window.dim(), mprime);
  for (int j = 0; j < mprime; ++j) f.col(j) = window.col(j);
  return f;
}

MemorylessContext spectral_context_from_history(const LdsSystem& sys, const FilterBank& bank,
                                                const CostFunction* cost,
                                                const std::vector<Vec>& history, int m_x) {
  Vec weights = bank.sigma_quarter;
  MemorylessContext ctx(sys.A, sys.B, cost, std::move(weights), m_x, sys.kappa, sys.kappa_B,
                        sys.gamma, sys.W);
  DisturbanceBuffer window(bank.m, sys.d);
  for (const Vec& w : history) {
    ctx.push_features(spectral_features(bank, window));
    ctx.push_disturbance(w);
    window.push(w);
  }
  ctx.push_features(spectral_features(bank, window));
  return ctx;
}

}  // namespace osc
