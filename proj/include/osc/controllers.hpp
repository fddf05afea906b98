#pragma once

#include <memory>
#include <optional>

#include "osc/common.hpp"
#include "osc/disturbance_buffer.hpp"
#include "osc/fastconv.hpp"
#include "osc/hankel.hpp"
#include "osc/lds.hpp"
#include "osc/learner.hpp"
#include "osc/spectral_params.hpp"

namespace osc {

// ---------------------------------------------------------------------------
// Online Spectral Control:  u_t = sum_i sigma_i^(1/4) M_i W~_{t-1:t-m} phi_i,
// plus K0 x_t when a stabilizer is set; parameters updated each step by
// projected OGD on the memory-less loss.
// ---------------------------------------------------------------------------

struct OscOptions {
  double eta = 0.0;
  int m_x = -1;                    // counterfactual unroll depth; default bank.m
  ConvMode conv_mode = ConvMode::Auto;
  std::optional<Mat> stabilizer;   // K0: n x d
  std::optional<double> radius;    // default kappa^3 sqrt(2h/gamma)
};

class OscController : public Controller {
 public:
  OscController(const LdsSystem& sys, std::shared_ptr<const FilterBank> bank,
                const CostFunction* cost, OscOptions opt);

  Vec control(const Vec& x) override;
  void observe(const Vec& x, const Vec& u, const Vec& x_next) override;
  std::optional<double> last_memoryless_loss() const override { return last_loss_; }

  const SpectralParams& params() const { return params_; }
  void set_params(SpectralParams p);
  double last_trunc_bound() const { return last_trunc_; }
  std::uint64_t conv_ops() const { return conv_.ops(); }
  const FilterBank& bank() const { return *bank_; }

 private:
  LdsSystem sys_;
  Mat a_eff_;  // A + B K0 in stabilized mode, else A
  std::shared_ptr<const FilterBank> bank_;
  const CostFunction* cost_;
  OscOptions opt_;
  SpectralParams params_;
  StreamConvolver conv_;
  MemorylessContext ctx_;
  std::optional<double> last_loss_;
  double last_trunc_ = 0.0;
  bool awaiting_observe_ = false;
};

// ---------------------------------------------------------------------------
// Baselines.
// ---------------------------------------------------------------------------

inline Vec linear_policy_control(const Mat& k, const Vec& x) {
  if (k.cols() != x.size()) throw DimensionMismatch("linear_policy_control: K cols != d");
  return k * x;
}

class LinearPolicy : public Controller {
 public:
  explicit LinearPolicy(Mat k) : k_(std::move(k)) {}
  Vec control(const Vec& x) override { return linear_policy_control(k_, x); }
  void observe(const Vec&, const Vec&, const Vec&) override {}
  const Mat& k() const { return k_; }

 private:
  Mat k_;
};

// Open-loop optimal control: u_t = K sum_{i=1..m} (A+BK)^{i-1} w_{t-i}.
Vec oloc_control(const Mat& k, const LdsSystem& sys, const DisturbanceBuffer& buffer, int m);

class OlocController : public Controller {
 public:
  OlocController(const LdsSystem& sys, Mat k, int m);
  Vec control(const Vec& x) override;
  void observe(const Vec& x, const Vec& u, const Vec& x_next) override;

 private:
  LdsSystem sys_;
  Mat k_, a_cl_;
  int m_;
  DisturbanceBuffer buffer_;
};

// Gradient perturbation controller: u_t = sum_{i=1..mprime} N_i w_{t-i},
// learned by projected OGD on its memory-less loss.
struct GpcOptions {
  double eta = 0.0;
  int m_x = -1;  // default mprime
  std::optional<double> radius;  // default kappa^3 sqrt(2 mprime / gamma)
};

class GpcController : public Controller {
 public:
  GpcController(const LdsSystem& sys, int mprime, const CostFunction* cost, GpcOptions opt);

  Vec control(const Vec& x) override;
  void observe(const Vec& x, const Vec& u, const Vec& x_next) override;
  std::optional<double> last_memoryless_loss() const override { return last_loss_; }

  const SpectralParams& params() const { return params_; }
  void set_params(SpectralParams p);
  int memory() const { return mprime_; }

 private:
  LdsSystem sys_;
  const CostFunction* cost_;
  int mprime_;
  GpcOptions opt_;
  SpectralParams params_;
  DisturbanceBuffer buffer_;
  MemorylessContext ctx_;
  std::optional<double> last_loss_;
  bool awaiting_observe_ = false;
};

// ---------------------------------------------------------------------------
// Pole placement for the stabilized wrapper. Single-input systems go through
// controllable-canonical-form placement; multi-input systems are reduced to a
// synthetic single input B v over a deterministic sequence of v. The result
// is always verified by an explicit eigenvalue check.
// ---------------------------------------------------------------------------

Mat pole_placement_k0(const LdsSystem& sys, double target_radius);

}  // namespace osc
