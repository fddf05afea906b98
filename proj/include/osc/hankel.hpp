#pragma once

#include <string>
#include <vector>

#include "osc/common.hpp"

namespace osc {

// ---------------------------------------------------------------------------
// Universal spectral filters: the m x m Hankel matrix
//
//   H(i, j) = (1 - gamma)^(i+j-1) / (i + j - 1)     (1-based i, j)
//
// and its top eigenpairs. The filters depend only on (m, gamma), never on the
// system being controlled.
// ---------------------------------------------------------------------------

struct HankelMatrix {
  int m = 0;
  double gamma = 0.0;
  Mat entries;  // symmetric m x m

  double trace() const { return entries.trace(); }
};

struct FilterBank {
  int m = 0;
  double gamma = 0.0;
  int h = 0;
  Vec sigmas;         // h eigenvalues, descending, clamped at 0
  Mat phis;           // m x h, column i = phi_i, orthonormal
  Vec sigma_quarter;  // sigmas^(1/4)
};

struct MuVector {
  double alpha = 0.0;
  int m = 0;
  Vec values;  // [1, alpha, ..., alpha^(m-1)]
};

// gamma in (0, 2/3], m >= 1; throws std::invalid_argument otherwise.
HankelMatrix build_hankel(int m, double gamma);

// Full symmetric eigendecomposition, top h pairs retained by eigenvalue.
// Eigenvalues in [-1e-12 * sigma_1, 0) are clamped to 0. Sign convention:
// the first coordinate of each phi_i with |value| > 1e-12 is made positive.
FilterBank eigendecompose_top(const HankelMatrix& h_mat, int h);

// values[i] = alpha^i (0-based); requires 0 <= alpha <= 1.
MuVector mu_vector(double alpha, int m);

// ---------------------------------------------------------------------------
// Verification reports for the spectral tail bounds.
// ---------------------------------------------------------------------------

struct TailBoundEntry {
  int j = 0;            // 1-based filter index
  double sigma = 0.0;
  double bound = 0.0;   // 156800 * ln(2/gamma) * exp(-pi^2 j / (4 ln T))
  double ratio = 0.0;   // sigma / bound
  bool pass = false;           // sigma <= bound and sigma <= 0.5*ln(2/gamma)
  bool pass_strong = false;    // same with exponent -pi^2 j / (2 ln T)
};

struct TailBoundReport {
  long long horizon = 0;
  std::vector<TailBoundEntry> entries;
  bool all_pass = true;
};

// Checks sigma_j <= 156800*ln(2/gamma)*exp(-pi^2 j/(4 ln T)) and the trace
// bound sigma_j <= 0.5*ln(2/gamma) for every j <= h. Requires T >= 10.
TailBoundReport verify_tail_bound(const FilterBank& bank, long long T);

struct InnerProductReport {
  int grid_size = 0;
  double worst_slack = 0.0;  // min over (alpha, j) of bound - |mu' phi|
  double max_ratio = 0.0;    // max over (alpha, j) of |mu' phi| / bound
  double worst_alpha = 0.0;
  int worst_j = 0;  // 1-based
  bool all_pass = true;
};

// Checks |mu_alpha' phi_j| <= sqrt(2/gamma) * sigma_j^(1/4) + 1e-9 for every
// grid alpha and every j <= h. Grid values must lie in [0, 1 - gamma].
InnerProductReport verify_inner_product_bound(const FilterBank& bank,
                                              const std::vector<double>& alpha_grid);

// Equispaced grid over [0, 1 - gamma] with `points` nodes.
std::vector<double> alpha_grid(double gamma, int points);

// ---------------------------------------------------------------------------
// Gauss-Legendre quadrature (used by the mu-integral identity check: H_m
// equals the integral of mu_alpha mu_alpha' over [0, 1-gamma]).
// ---------------------------------------------------------------------------

struct QuadratureRule {
  std::vector<double> nodes;    // on [-1, 1]
  std::vector<double> weights;
};

QuadratureRule gauss_legendre(int n);

// Integral of mu_alpha mu_alpha^T over alpha in [0, 1-gamma], 256-node GL.
Mat hankel_by_quadrature(int m, double gamma, int nodes = 256);

// ---------------------------------------------------------------------------
// JSON export/import: {m, gamma, h, sigmas: [...], phis: [[...]]} with floats
// at 17 significant digits for exact round trips.
// ---------------------------------------------------------------------------

std::string filter_bank_to_json(const FilterBank& bank);
FilterBank filter_bank_from_json(const std::string& text);

}  // namespace osc
