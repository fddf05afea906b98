#pragma once

#include <deque>
#include <utility>

#include "osc/common.hpp"
#include "osc/disturbance_buffer.hpp"
#include "osc/hankel.hpp"
#include "osc/lds.hpp"
#include "osc/spectral_params.hpp"

namespace osc {

// ---------------------------------------------------------------------------
// Parameter schedule (natural log throughout):
//   C1 = G kappa_B kappa^8 W^2
//   m  = ceil((1/gamma) ln(8 C1 sqrt(T) / gamma^3))
//   h  = ceil(4 ln T ln(900 C1 d T / gamma^3)), capped at m
//   C2 = sqrt(2) kappa^5 / (3 C1)
//   eta = C2 sqrt(gamma^3 / (T m h))
// ---------------------------------------------------------------------------

struct Schedule {
  long long T = 0;
  double gamma = 0.0, kappa = 1.0, kappa_B = 1.0, W = 1.0, G = 1.0;
  int m = 0;
  int h = 0;           // capped at m
  int h_uncapped = 0;
  double eta = 0.0;
  double C1 = 0.0, C2 = 0.0;
  double radius = 0.0;  // kappa^3 sqrt(2h/gamma), with the capped h
};

Schedule theoretical_schedule(long long T, double gamma, double kappa, double kappa_b,
                              double w, double g, int d);

std::string schedule_to_json(const Schedule& s);

// ---------------------------------------------------------------------------
// Memory-less loss: the cost of the counterfactual trajectory obtained by
// replaying recent history with the parameters frozen.
//
// The per-step control is a weighted sum of matrix-vector products,
//   u_t(M) = sum_j c_j M_j f_j(t),
// where f_j are "features": filter projections W~ phi_j with weights
// c_j = sigma_j^(1/4) for the spectral controller, and raw lagged
// disturbances with unit weights for GPC. The counterfactual state unrolls
//   x_t(M) = sum_{i=1..mx} A^(i-1) (w_{t-i} + B u_{t-i}(M)),
// truncated at the context's horizon m_x; the truncation error bound
// kappa^2 (1-gamma)^{m_x} (W + kappa_B max||u||)/gamma is reported with every
// evaluation.
//
// The context holds the feature matrices F(t), F(t-1), ..., F(t-m_x) (columns
// f_j, recorded as the stream advances) and the disturbances w_{t-1}, ...,
// w_{t-m_x}, so one evaluation costs O(m_x (d^2 + P n d)) with no re-scan of
// the stream.
// ---------------------------------------------------------------------------

struct LossGrad {
  double loss = 0.0;
  ParamGrad grad;
  double trunc_bound = 0.0;
};

class MemorylessContext {
 public:
  // a is the effective transition (A + B K0 in stabilized mode), weights has
  // one entry per feature/parameter slice.
  MemorylessContext(Mat a, Mat b, const CostFunction* cost, Vec weights, int m_x,
                    double kappa, double kappa_b, double gamma, double w_bound);

  int feature_count() const { return static_cast<int>(weights_.size()); }
  int m_x() const { return m_x_; }

  // Features for the step about to be played; call before push_disturbance.
  void push_features(Mat f);
  // w_t, once the step's loss has been consumed.
  void push_disturbance(Vec w);

  // u_t(M) = sum_j c_j M_j f_j with the newest features.
  Vec control_of(const SpectralParams& params) const;
  // Counterfactual (x_t(M), u_t(M)) at the current step.
  std::pair<Vec, Vec> state_control(const SpectralParams& params) const;
  double loss_of(const SpectralParams& params) const;
  LossGrad loss_and_grad(const SpectralParams& params) const;

 private:
  Vec apply(const SpectralParams& params, const Mat& f) const;

  Mat a_, b_;
  const CostFunction* cost_;
  Vec weights_;
  int m_x_, d_, n_;
  double kappa_, kappa_b_, gamma_, w_bound_;
  std::deque<Mat> features_;  // [0] = F(t)
  std::deque<Vec> dist_;      // [0] = w_{t-1}
  bool has_pending_features_ = false;
};

// Spectral feature matrix for the current window: column j = W~ phi_j.
Mat spectral_features(const FilterBank& bank, const DisturbanceBuffer& window);
// GPC feature matrix: column j = w_{t-1-j}, j = 0..mprime-1.
Mat lag_features(const DisturbanceBuffer& window, int mprime);

// Builds a spectral-controller context positioned after the given history,
// ready to evaluate the memory-less loss of the upcoming step.
MemorylessContext spectral_context_from_history(const LdsSystem& sys, const FilterBank& bank,
                                                const CostFunction* cost,
                                                const std::vector<Vec>& history, int m_x);

}  // namespace osc
