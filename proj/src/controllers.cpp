#include "osc/controllers.hpp"

#include <cmath>

namespace osc {

namespace {

Mat effective_transition(const LdsSystem& sys, const std::optional<Mat>& k0) {
  if (!k0) return sys.A;
  if (k0->rows() != sys.n || k0->cols() != sys.d)
    throw DimensionMismatch("stabilizer K0 must be n x d");
  return sys.A + sys.B * (*k0);
}

}  // namespace

OscController::OscController(const LdsSystem& sys, std::shared_ptr<const FilterBank> bank,
                             const CostFunction* cost, OscOptions opt)
    : sys_(sys),
      a_eff_(effective_transition(sys, opt.stabilizer)),
      bank_(std::move(bank)),
      cost_(cost),
      opt_(opt),
      params_(SpectralParams::zero(
          bank_->h, sys.n, sys.d,
          opt.radius.value_or(std::pow(sys.kappa, 3) *
                              std::sqrt(2.0 * bank_->h / bank_->gamma)))),
      conv_(*bank_, sys.d, opt.conv_mode),
      ctx_(a_eff_, sys.B, cost, bank_->sigma_quarter,
           opt.m_x > 0 ? opt.m_x : bank_->m, sys.kappa, sys.kappa_B, sys.gamma, sys.W) {}

void OscController::set_params(SpectralParams p) {
  if (p.slices() != bank_->h || p.n() != sys_.n || p.d() != sys_.d)
    throw DimensionMismatch("set_params: shape mismatch");
  params_ = std::move(p);
}

Vec OscController::control(const Vec& x) {
  if (x.size() != sys_.d) throw DimensionMismatch("osc_control: state dimension != d");
  if (awaiting_observe_) throw NumericalFailure("osc_control: observe was not called");
  Mat f(sys_.d, bank_->h);
  for (int j = 0; j < bank_->h; ++j) f.col(j) = conv_.query(j);
  ctx_.push_features(std::move(f));
  Vec u = ctx_.control_of(params_);
  if (opt_.stabilizer) u.noalias() += (*opt_.stabilizer) * x;
  awaiting_observe_ = true;
  return u;
}

void OscController::observe(const Vec& x, const Vec& u, const Vec& x_next) {
  if (!awaiting_observe_) throw NumericalFailure("osc_observe: control was not called");
  awaiting_observe_ = false;
  // Recover w_t against the effective (stabilized) transition, using the
  // spectral part of the control; identical to x_next - A x - B u.
  Vec u_spec = u;
  if (opt_.stabilizer) u_spec.noalias() -= (*opt_.stabilizer) * x;
  const Vec w = x_next - a_eff_ * x - sys_.B * u_spec;

  const LossGrad lg = ctx_.loss_and_grad(params_);
  last_loss_ = lg.loss;
  last_trunc_ = lg.trunc_bound;
  if (opt_.eta != 0.0) params_ = ogd_step(params_, lg.grad, opt_.eta);

  ctx_.push_disturbance(w);
  conv_.push(w);
}

// ---------------------------------------------------------------------------

Vec oloc_control(const Mat& k, const LdsSystem& sys, const DisturbanceBuffer& buffer, int m) {
  if (k.rows() != sys.n || k.cols() != sys.d)
    throw DimensionMismatch("oloc_control: K must be n x d");
  if (m < 1 || m > buffer.memory())
    throw DimensionMismatch("oloc_control: m exceeds buffer memory");
  const Mat a_cl = sys.A + sys.B * k;
  Vec acc = Vec::Zero(sys.d);
  for (int i = m; i >= 1; --i) {
    acc = a_cl * acc;
    acc += buffer.col(i - 1);
  }
  return k * acc;
}

OlocController::OlocController(const LdsSystem& sys, Mat k, int m)
    : sys_(sys), k_(std::move(k)), m_(m), buffer_(m, sys.d) {
  if (k_.rows() != sys.n || k_.cols() != sys.d)
    throw DimensionMismatch("OlocController: K must be n x d");
  a_cl_ = sys.A + sys.B * k_;
}

Vec OlocController::control(const Vec&) {
  Vec acc = Vec::Zero(sys_.d);
  for (int i = m_; i >= 1; --i) {
    acc = a_cl_ * acc;
    acc += buffer_.col(i - 1);
  }
  return k_ * acc;
}

void OlocController::observe(const Vec& x, const Vec& u, const Vec& x_next) {
  buffer_.push(recover_disturbance(sys_, x, u, x_next));
}

// ---------------------------------------------------------------------------

GpcController::GpcController(const LdsSystem& sys, int mprime, const CostFunction* cost,
                             GpcOptions opt)
    : sys_(sys),
      cost_(cost),
      mprime_(mprime),
      opt_(opt),
      params_(SpectralParams::zero(
          mprime, sys.n, sys.d,
          opt.radius.value_or(std::pow(sys.kappa, 3) * std::sqrt(2.0 * mprime / sys.gamma)))),
      buffer_(mprime, sys.d),
      ctx_(sys.A, sys.B, cost, Vec::Ones(mprime), opt.m_x > 0 ? opt.m_x : mprime,
           sys.kappa, sys.kappa_B, sys.gamma, sys.W) {
  if (mprime < 1) throw std::invalid_argument("GpcController: mprime must be >= 1");
}

void GpcController::set_params(SpectralParams p) {
  if (p.slices() != mprime_ || p.n() != sys_.n || p.d() != sys_.d)
    throw DimensionMismatch("set_params: shape mismatch");
  params_ = std::move(p);
}

Vec GpcController::control(const Vec& x) {
  if (x.size() != sys_.d) throw DimensionMismatch("gpc_control: state dimension != d");
  if (awaiting_observe_) throw NumericalFailure("gpc_control: observe was not called");
  ctx_.push_features(lag_features(buffer_, mprime_));
  awaiting_observe_ = true;
  return ctx_.control_of(params_);
}

void GpcController::observe(const Vec& x, const Vec& u, const Vec& x_next) {
  if (!awaiting_observe_) throw NumericalFailure("gpc_observe: control was not called");
  awaiting_observe_ = false;
  const Vec w = recover_disturbance(sys_, x, u, x_next);
  const LossGrad lg = ctx_.loss_and_grad(params_);
  last_loss_ = lg.loss;
  if (opt_.eta != 0.0) params_ = ogd_step(params_, lg.grad, opt_.eta);
  ctx_.push_disturbance(w);
  buffer_.push(w);
}

// ---------------------------------------------------------------------------
// Pole placement
// ---------------------------------------------------------------------------

namespace {

// Gain row for a single-input pair via Ackermann's formula; closed loop
// A + b k_row has the given poles.
Vec ackermann_row(const Mat& a, const Vec& b, const Vec& poles) {
  const int d = static_cast<int>(a.rows());
  Mat ctrb(d, d);
  Vec col = b;
  for (int i = 0; i < d; ++i) {
    ctrb.col(i) = col;
    col = a * col;
  }
  Eigen::ColPivHouseholderQR<Mat> qr(ctrb);
  qr.setThreshold(1e-8);
  if (qr.rank() < d) throw NotControllable("single-input pair is not controllable");

  Mat p = Mat::Identity(d, d);
  for (int i = 0; i < d; ++i) p = p * (a - poles(i) * Mat::Identity(d, d));

  Vec e_d = Vec::Zero(d);
  e_d(d - 1) = 1.0;
  const Vec y = Eigen::ColPivHouseholderQR<Mat>(ctrb.transpose()).solve(e_d);
  return -(p.transpose() * y);  // k_row = -e_d' ctrb^{-1} p(A), transposed
}

Vec spread_poles(int d, double target) {
  Vec poles(d);
  for (int i = 0; i < d; ++i) poles(i) = target * (i + 1) / d;
  return poles;
}

}  // namespace

Mat pole_placement_k0(const LdsSystem& sys, double target_radius) {
  if (target_radius < 0.0 || target_radius >= 1.0)
    throw std::invalid_argument("pole_placement_k0: need 0 <= target_radius < 1");
  if (sys.d > 20)
    throw std::invalid_argument("pole_placement_k0: supported only for d <= 20");

  if (spectral_radius(sys.A) <= target_radius + 1e-6) return Mat::Zero(sys.n, sys.d);

  // Controllability of the full pair.
  Mat ctrb(sys.d, sys.d * sys.n);
  Mat blk = sys.B;
  for (int i = 0; i < sys.d; ++i) {
    ctrb.middleCols(i * sys.n, sys.n) = blk;
    blk = sys.A * blk;
  }
  Eigen::ColPivHouseholderQR<Mat> qr(ctrb);
  qr.setThreshold(1e-8);
  if (qr.rank() < sys.d)
    throw NotControllable("pole_placement_k0: controllability matrix is rank-deficient");

  const Vec poles = spread_poles(sys.d, target_radius);

  if (sys.n == 1) {
    const Vec k_row = ackermann_row(sys.A, sys.B.col(0), poles);
    Mat k0(1, sys.d);
    k0.row(0) = k_row.transpose();
    if (spectral_radius(sys.A + sys.B * k0) > target_radius + 1e-6)
      throw NumericalFailure("pole_placement_k0: placed radius misses the target");
    return k0;
  }

  // Multi-input: project onto a synthetic single input B v, deterministic
  // candidate sequence, verified per candidate.
  std::vector<Vec> candidates;
  candidates.push_back(Vec::Ones(sys.n) / std::sqrt(static_cast<double>(sys.n)));
  for (int i = 0; i < sys.n; ++i) candidates.push_back(Vec::Unit(sys.n, i));
  DetRng rng(0x9c0de);
  for (int i = 0; i < 16; ++i) {
    Vec v = rng.normal_vec(sys.n);
    candidates.push_back(v / v.norm());
  }
  for (const Vec& v : candidates) {
    const Vec bv = sys.B * v;
    try {
      const Vec k_row = ackermann_row(sys.A, bv, poles);
      const Mat k0 = v * k_row.transpose();
      if (spectral_radius(sys.A + sys.B * k0) <= target_radius + 1e-6) return k0;
    } catch (const NotControllable&) {
      continue;
    }
  }
  throw NumericalFailure("pole_placement_k0: no projection candidate achieved the target");
}

}  // namespace osc
