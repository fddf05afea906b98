#pragma once

#include <string>
#include <vector>

#include "osc/common.hpp"

namespace osc {

// The learnable tensor M_{1:h}: h matrices of shape n x d plus the radius of
// its feasible Frobenius ball. GPC reuses the same shape with its own slice
// count and radius.
struct SpectralParams {
  std::vector<Mat> M;
  double radius = 0.0;

  static SpectralParams zero(int slices, int n, int d, double radius) {
    SpectralParams p;
    p.M.assign(slices, Mat::Zero(n, d));
    p.radius = radius;
    return p;
  }

  int slices() const { return static_cast<int>(M.size()); }
  int n() const { return M.empty() ? 0 : static_cast<int>(M[0].rows()); }
  int d() const { return M.empty() ? 0 : static_cast<int>(M[0].cols()); }

  // Frobenius norm of the full stacked tensor.
  double frob_norm() const {
    double sq = 0.0;
    for (const Mat& s : M) sq += s.squaredNorm();
    return std::sqrt(sq);
  }
};

using ParamGrad = std::vector<Mat>;

double grad_frob_norm(const ParamGrad& g);

// Radial projection onto the Frobenius ball; identity inside, idempotent,
// non-expansive.
SpectralParams project_frobenius(SpectralParams params, double radius);

// One projected OGD step: project(M - eta * grad) onto the params' own ball.
SpectralParams ogd_step(const SpectralParams& params, const ParamGrad& grad, double eta);

// Snapshot for checkpoint/restore: {h, n, d, radius, m: flattened row-major}.
std::string params_to_json(const SpectralParams& params);
SpectralParams params_from_json(const std::string& text);

}  // namespace osc
