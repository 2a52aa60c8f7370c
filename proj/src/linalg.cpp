#include "hybridcast/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace hybridcast {

SymEig3 eig_sym3(const Mat3& input) {
  Mat3 a = input;
  Mat3 v = Mat3::Identity();
  const double scale = std::max(a.cwiseAbs().maxCoeff(), 1e-300);
  constexpr std::array<std::array<int, 2>, 3> pairs{{{0, 1}, {0, 2}, {1, 2}}};
  for (int sweep = 0; sweep < 64; ++sweep) {
    const double off = std::abs(a(0, 1)) + std::abs(a(0, 2)) + std::abs(a(1, 2));
    if (off <= 1e-18 * scale) break;
    for (const auto& [p, q] : pairs) {
      const double apq = a(p, q);
      if (std::abs(apq) <= 1e-300) continue;
      const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
      const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
      const double c = 1.0 / std::sqrt(t * t + 1.0);
      const double s = t * c;
      Mat3 rot = Mat3::Identity();
      rot(p, p) = c;
      rot(q, q) = c;
      rot(p, q) = s;
      rot(q, p) = -s;
      a = rot.transpose() * a * rot;
      a(p, q) = 0.0;
      a(q, p) = 0.0;
      v = v * rot;
    }
  }
  return SymEig3{Vec3(a(0, 0), a(1, 1), a(2, 2)), v};
}

double asymmetry(const Mat3& a) { return (a - a.transpose()).cwiseAbs().maxCoeff(); }

double exp_divided_difference(double a, double b) {
  if (a == b) return std::exp(a);
  const double d = a - b;
  return std::exp(b) * std::expm1(d) / d;
}

Mat3 expm_sym(const Mat3& s, double sym_tol) {
  const double tol = sym_tol * std::max(1.0, s.cwiseAbs().maxCoeff());
  if (asymmetry(s) > tol) throw ContractViolation("expm_sym: input is not symmetric");
  const SymEig3 eig = eig_sym3(0.5 * (s + s.transpose()));
  const Vec3 e = eig.values.array().exp();
  return eig.vectors * e.asDiagonal() * eig.vectors.transpose();
}

Mat3 logm_spd(const Mat3& a) {
  const SymEig3 eig = eig_sym3(0.5 * (a + a.transpose()));
  if (eig.values.minCoeff() <= 0.0) throw NumericError("logm_spd: matrix is not positive definite");
  const Vec3 l = eig.values.array().log();
  return eig.vectors * l.asDiagonal() * eig.vectors.transpose();
}

Mat3 expm_sym_adjoint(const SymEig3& eig, const Mat3& upstream) {
  const Mat3& v = eig.vectors;
  Mat3 g = v.transpose() * upstream * v;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) g(i, j) *= exp_divided_difference(eig.values[i], eig.values[j]);
  return v * g * v.transpose();
}

SoftclipFactor softclip_factor(double norm, double limit) {
  const double x = norm / limit;
  if (x < 1e-4) {
    const double x2 = x * x;
    return {1.0 - x2 / 3.0 + 2.0 * x2 * x2 / 15.0, (-2.0 / 3.0 + 8.0 * x2 / 15.0) / (limit * limit)};
  }
  const double th = std::tanh(x);
  const double sech2 = 1.0 - th * th;
  const double g = th / x;
  const double dg = (x * sech2 - th) / (x * x);
  return {g, dg / (limit * limit * x)};
}

Mat3 softclip(const Mat3& s, double limit) {
  require(limit > 0.0, "softclip: limit must be positive");
  return softclip_factor(s.norm(), limit).factor * s;
}

Tensor expm_sym(const Tensor& s) {
  require(s.rows() == 3 && s.cols() == 3, "expm_sym: expected a 3x3 tensor, got " + shape_string(s));
  const Mat3 out = expm_sym(Mat3(s));
  return Tensor(out);
}

Tensor softclip(const Tensor& s, double limit) {
  require(s.rows() == 3 && s.cols() == 3, "softclip: expected a 3x3 tensor, got " + shape_string(s));
  return Tensor(softclip(Mat3(s), limit));
}

}  // namespace hybridcast
