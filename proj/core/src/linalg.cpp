#include "simofdm/wavemath/linalg.hpp"

#include <cmath>
#include <string>

#include "simofdm/error.hpp"

namespace simofdm::wave {

CMat cmatmul(const CMat& a, const CMat& b) {
  if (a.cols() != b.rows()) {
    throw ConfigError("cmatmul: dimension mismatch " + std::to_string(a.rows()) + "x" +
                      std::to_string(a.cols()) + " * " + std::to_string(b.rows()) + "x" +
                      std::to_string(b.cols()));
  }
  CMat out(a.rows(), b.cols());
  out.noalias() = a * b;
  return out;
}

CMat block_diag(const CMat& a, const CMat& b) {
  CMat out = CMat::Zero(a.rows() + b.rows(), a.cols() + b.cols());
  out.topLeftCorner(a.rows(), a.cols()) = a;
  out.bottomRightCorner(b.rows(), b.cols()) = b;
  return out;
}

bool all_finite(const CMat& m) { return m.allFinite(); }
bool all_finite(const RMat& m) { return m.allFinite(); }

double relative_frobenius_error(const CMat& a, const CMat& ref) {
  const double diff = (a - ref).norm();
  const double scale = ref.norm();
  return scale > 0.0 ? diff / scale : diff;
}

double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }
double watts_to_dbm(double watts) { return 10.0 * std::log10(watts) + 30.0; }

}  // namespace simofdm::wave
