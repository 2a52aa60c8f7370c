#pragma once

#include <array>

#include "hybridcast/tensor.hpp"

namespace hybridcast {

/// Eigendecomposition of a symmetric 3x3 matrix: A = V diag(values) V^T.
struct SymEig3 {
  Vec3 values;
  Mat3 vectors;  // columns are eigenvectors
};

/// Cyclic Jacobi rotations; converges to machine precision for 3x3 inputs.
SymEig3 eig_sym3(const Mat3& a);

/// Largest |A - A^T| entry.
double asymmetry(const Mat3& a);

/// Matrix exponential of a symmetric 3x3 matrix via its eigenbasis.
/// Throws ContractViolation when `s` is not symmetric within `sym_tol`.
Mat3 expm_sym(const Mat3& s, double sym_tol = 1e-12);

/// Principal logarithm of a symmetric positive definite 3x3 matrix.
Mat3 logm_spd(const Mat3& a);

/// Adjoint of the Frechet derivative of expm at a symmetric point:
/// returns dL/dS given G = dL/dexpm(S) (Daleckii-Krein divided differences).
Mat3 expm_sym_adjoint(const SymEig3& eig, const Mat3& upstream);

/// Divided difference (e^a - e^b)/(a - b), continuous at a == b.
double exp_divided_difference(double a, double b);

/// Frobenius-norm tanh clipping: s * L*tanh(|s|_F/L)/|s|_F (identity at s = 0).
Mat3 softclip(const Mat3& s, double limit);

/// Scale factor L*tanh(n/L)/n and its derivative divided by n, both stable near n = 0.
struct SoftclipFactor {
  double factor;
  double dfactor_over_n;
};
SoftclipFactor softclip_factor(double norm, double limit);

/// Tensor-facing wrappers (3x3 tensors).
Tensor expm_sym(const Tensor& s);
Tensor softclip(const Tensor& s, double limit);

}  // namespace hybridcast
