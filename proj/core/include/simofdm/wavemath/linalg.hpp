#pragma once

#include <complex>
#include <numbers>

#include <Eigen/Dense>

namespace simofdm::wave {

using cdouble = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using RMat = Eigen::MatrixXd;

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr double kSpeedOfLight = 299792458.0;

/// Exact complex product a*b. Throws ConfigError when a.cols() != b.rows().
CMat cmatmul(const CMat& a, const CMat& b);

/// [[a, 0], [0, b]]
CMat block_diag(const CMat& a, const CMat& b);

bool all_finite(const CMat& m);
bool all_finite(const RMat& m);

/// ||a - ref||_F / ||ref||_F (absolute error when ref is zero).
double relative_frobenius_error(const CMat& a, const CMat& ref);

double db_to_linear(double db);
double dbm_to_watts(double dbm);
double watts_to_dbm(double watts);

}  // namespace simofdm::wave
