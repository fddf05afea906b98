#include "osc/hankel.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace osc {

HankelMatrix build_hankel(int m, double gamma) {
  if (m < 1) throw std::invalid_argument("build_hankel: m must be >= 1");
  if (!(gamma > 0.0) || gamma > 2.0 / 3.0)
    throw std::invalid_argument("build_hankel: gamma must lie in (0, 2/3]");

  HankelMatrix h;
  h.m = m;
  h.gamma = gamma;
  h.entries.resize(m, m);
  const double base = 1.0 - gamma;
  // Entries depend on i+j only; fill by anti-diagonal so symmetry is exact.
  for (int s = 2; s <= 2 * m; ++s) {
    const double v = std::pow(base, s - 1) / static_cast<double>(s - 1);
    for (int i = std::max(1, s - m); i <= std::min(m, s - 1); ++i) {
      h.entries(i - 1, s - i - 1) = v;
    }
  }
  return h;
}

FilterBank eigendecompose_top(const HankelMatrix& h_mat, int h) {
  const int m = h_mat.m;
  if (h < 1 || h > m)
    throw std::invalid_argument("eigendecompose_top: need 1 <= h <= m");

  Eigen::SelfAdjointEigenSolver<Mat> solver(h_mat.entries);
  if (solver.info() != Eigen::Success)
    throw NumericalFailure("eigendecompose_top: eigensolver did not converge");

  // Eigen returns ascending order; take the top h from the back.
  const Vec& vals = solver.eigenvalues();
  const Mat& vecs = solver.eigenvectors();

  FilterBank bank;
  bank.m = m;
  bank.gamma = h_mat.gamma;
  bank.h = h;
  bank.sigmas.resize(h);
  bank.phis.resize(m, h);
  bank.sigma_quarter.resize(h);

  const double sigma1 = std::max(vals(m - 1), 0.0);
  for (int i = 0; i < h; ++i) {
    double s = vals(m - 1 - i);
    if (s < 0.0 && s >= -1e-12 * std::max(sigma1, 1.0)) s = 0.0;
    bank.sigmas(i) = s;
    Vec phi = vecs.col(m - 1 - i);
    // Deterministic sign: first coordinate of magnitude > 1e-12 positive.
    for (int r = 0; r < m; ++r) {
      if (std::abs(phi(r)) > 1e-12) {
        if (phi(r) < 0.0) phi = -phi;
        break;
      }
    }
    bank.phis.col(i) = phi;
    bank.sigma_quarter(i) = s > 0.0 ? std::pow(s, 0.25) : 0.0;
  }
  return bank;
}

MuVector mu_vector(double alpha, int m) {
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("mu_vector: alpha must lie in [0, 1]");
  if (m < 1) throw std::invalid_argument("mu_vector: m must be >= 1");
  MuVector mu;
  mu.alpha = alpha;
  mu.m = m;
  mu.values.resize(m);
  double p = 1.0;
  for (int i = 0; i < m; ++i) {
    mu.values(i) = p;
    p *= alpha;
  }
  return mu;
}

TailBoundReport verify_tail_bound(const FilterBank& bank, long long T) {
  if (T < 10) throw std::invalid_argument("verify_tail_bound: requires T >= 10");
  const double log_t = std::log(static_cast<double>(T));
  const double log_2g = std::log(2.0 / bank.gamma);
  const double trace_bound = 0.5 * log_2g;
  const double pi2 = M_PI * M_PI;

  TailBoundReport report;
  report.horizon = T;
  report.entries.reserve(bank.h);
  for (int i = 0; i < bank.h; ++i) {
    TailBoundEntry e;
    e.j = i + 1;
    e.sigma = bank.sigmas(i);
    e.bound = 156800.0 * log_2g * std::exp(-pi2 * e.j / (4.0 * log_t));
    e.ratio = e.sigma / e.bound;
    e.pass = e.sigma <= e.bound && e.sigma <= trace_bound + 1e-12;
    const double strong = 156800.0 * log_2g * std::exp(-pi2 * e.j / (2.0 * log_t));
    e.pass_strong = e.sigma <= strong && e.sigma <= trace_bound + 1e-12;
    report.all_pass = report.all_pass && e.pass;
    report.entries.push_back(e);
  }
  return report;
}

InnerProductReport verify_inner_product_bound(const FilterBank& bank,
                                              const std::vector<double>& alpha_grid) {
  const double hi = 1.0 - bank.gamma;
  for (double a : alpha_grid) {
    if (a < 0.0 || a > hi + 1e-12)
      throw std::invalid_argument("verify_inner_product_bound: alpha outside [0, 1-gamma]");
  }
  const double scale = std::sqrt(2.0 / bank.gamma);

  InnerProductReport report;
  report.grid_size = static_cast<int>(alpha_grid.size());
  report.worst_slack = std::numeric_limits<double>::infinity();
  for (double a : alpha_grid) {
    const MuVector mu = mu_vector(a, bank.m);
    for (int j = 0; j < bank.h; ++j) {
      const double ip = std::abs(mu.values.dot(bank.phis.col(j)));
      const double bound = scale * bank.sigma_quarter(j) + 1e-9;
      const double slack = bound - ip;
      const double ratio = ip / bound;
      if (slack < report.worst_slack) {
        report.worst_slack = slack;
        report.worst_alpha = a;
        report.worst_j = j + 1;
      }
      report.max_ratio = std::max(report.max_ratio, ratio);
      if (slack < 0.0) report.all_pass = false;
    }
  }
  return report;
}

std::vector<double> alpha_grid(double gamma, int points) {
  std::vector<double> grid(points);
  const double hi = 1.0 - gamma;
  for (int i = 0; i < points; ++i)
    grid[i] = points == 1 ? 0.0 : hi * static_cast<double>(i) / (points - 1);
  return grid;
}

QuadratureRule gauss_legendre(int n) {
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  // Newton iteration on P_n, symmetric nodes; standard cosine initial guess.
  for (int k = 0; k < (n + 1) / 2; ++k) {
    double x = std::cos(M_PI * (k + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int j = 2; j <= n; ++j) {
        const double p2 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / j;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[k] = -x;
    rule.nodes[n - 1 - k] = x;
    rule.weights[k] = w;
    rule.weights[n - 1 - k] = w;
  }
  return rule;
}

Mat hankel_by_quadrature(int m, double gamma, int nodes) {
  const QuadratureRule rule = gauss_legendre(nodes);
  const double hi = 1.0 - gamma;
  Mat acc = Mat::Zero(m, m);
  for (int k = 0; k < nodes; ++k) {
    const double alpha = 0.5 * hi * (rule.nodes[k] + 1.0);
    const double w = 0.5 * hi * rule.weights[k];
    const Vec mu = mu_vector(alpha, m).values;
    acc.noalias() += w * mu * mu.transpose();
  }
  return acc;
}

std::string filter_bank_to_json(const FilterBank& bank) {
  std::ostringstream out;
  out << "{\"m\":" << bank.m << ",\"gamma\":" << format_double(bank.gamma)
      << ",\"h\":" << bank.h << ",\"sigmas\":[";
  for (int i = 0; i < bank.h; ++i) {
    if (i) out << ",";
    out << format_double(bank.sigmas(i));
  }
  out << "],\"phis\":[";
  for (int i = 0; i < bank.h; ++i) {
    if (i) out << ",";
    out << "[";
    for (int r = 0; r < bank.m; ++r) {
      if (r) out << ",";
      out << format_double(bank.phis(r, i));
    }
    out << "]";
  }
  out << "]}";
  return out.str();
}

FilterBank filter_bank_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  FilterBank bank;
  bank.m = j.at("m").get<int>();
  bank.gamma = j.at("gamma").get<double>();
  bank.h = j.at("h").get<int>();
  if (bank.m < 1 || bank.h < 1 || bank.h > bank.m)
    throw ConfigError("filter_bank_from_json: inconsistent m/h");
  bank.sigmas.resize(bank.h);
  bank.phis.resize(bank.m, bank.h);
  bank.sigma_quarter.resize(bank.h);
  const auto& sig = j.at("sigmas");
  const auto& phis = j.at("phis");
  if (static_cast<int>(sig.size()) != bank.h || static_cast<int>(phis.size()) != bank.h)
    throw ConfigError("filter_bank_from_json: array sizes do not match h");
  for (int i = 0; i < bank.h; ++i) {
    bank.sigmas(i) = sig.at(i).get<double>();
    bank.sigma_quarter(i) = bank.sigmas(i) > 0.0 ? std::pow(bank.sigmas(i), 0.25) : 0.0;
    const auto& col = phis.at(i);
    if (static_cast<int>(col.size()) != bank.m)
      throw ConfigError("filter_bank_from_json: phi length does not match m");
    for (int r = 0; r < bank.m; ++r) bank.phis(r, i) = col.at(r).get<double>();
  }
  return bank;
}

}  // namespace osc
