#include "osc/spectral_params.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <sstream>

namespace osc {

double grad_frob_norm(const ParamGrad& g) {
  double sq = 0.0;
  for (const Mat& s : g) sq += s.squaredNorm();
  return std::sqrt(sq);
}

SpectralParams project_frobenius(SpectralParams params, double radius) {
  if (radius <= 0.0) throw std::invalid_argument("project_frobenius: radius must be > 0");
  const double norm = params.frob_norm();
  if (norm > radius) {
    const double scale = radius / norm;
    for (Mat& s : params.M) s *= scale;
  }
  return params;
}

SpectralParams ogd_step(const SpectralParams& params, const ParamGrad& grad, double eta) {
  if (grad.size() != params.M.size())
    throw DimensionMismatch("ogd_step: gradient slice count mismatch");
  SpectralParams next = params;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (grad[i].rows() != next.M[i].rows() || grad[i].cols() != next.M[i].cols())
      throw DimensionMismatch("ogd_step: gradient shape mismatch");
    next.M[i] -= eta * grad[i];
  }
  return project_frobenius(std::move(next), params.radius);
}

std::string params_to_json(const SpectralParams& params) {
  std::ostringstream out;
  out << "{\"h\":" << params.slices() << ",\"n\":" << params.n() << ",\"d\":" << params.d()
      << ",\"radius\":" << format_double(params.radius) << ",\"m\":[";
  bool first = true;
  for (const Mat& s : params.M) {
    for (int r = 0; r < s.rows(); ++r) {
      for (int c = 0; c < s.cols(); ++c) {
        if (!first) out << ",";
        out << format_double(s(r, c));
        first = false;
      }
    }
  }
  out << "]}";
  return out.str();
}

SpectralParams params_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  const int h = j.at("h").get<int>();
  const int n = j.at("n").get<int>();
  const int d = j.at("d").get<int>();
  SpectralParams params = SpectralParams::zero(h, n, d, j.at("radius").get<double>());
  const auto& flat = j.at("m");
  if (static_cast<int>(flat.size()) != h * n * d)
    throw ConfigError("params_from_json: flattened size does not match h*n*d");
  int idx = 0;
  for (Mat& s : params.M)
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < d; ++c) s(r, c) = flat.at(idx++).get<double>();
  return params;
}

}  // namespace osc
