#include "osc/common.hpp"

namespace osc {

double operator_norm(const Mat& m) {
  if (m.rows() == 0 || m.cols() == 0) return 0.0;
  if (m.rows() <= 16 && m.cols() <= 16) return m.jacobiSvd().singularValues()(0);
  return Eigen::BDCSVD<Mat>(m).singularValues()(0);
}

double spectral_radius(const Mat& a) {
  Eigen::EigenSolver<Mat> es(a, /*computeEigenvectors=*/false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace osc
