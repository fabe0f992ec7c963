#pragma once

#include "drda/tensor.hpp"

namespace drda {

// Square rotation/reflection layer constrained to the Stiefel manifold
// (column-orthonormal d x d matrix). Applied to row vectors as z * delta.
struct StiefelParam {
  Tensor matrix;  // d x d
  double learning_rate_scale = 10.0;

  std::size_t dim() const { return matrix.rank() == 2 ? matrix.rows() : 0; }
};

StiefelParam stiefel_init_identity(std::size_t d);

// z * delta for a single row vector {d} or a batch {n, d}.
Tensor stiefel_apply(const StiefelParam& param, const Tensor& z);

// max |delta^T delta - I|
double orthonormality_drift(const Tensor& m);

// Q factor of the Householder QR, with the positive-diagonal sign convention.
Tensor qr_orthonormalize(const Tensor& m);

// Project the Euclidean gradient onto the tangent space at delta, take an
// SGD step, retract back via QR. A zero gradient returns the parameter
// unchanged. Re-orthonormalizes once more if drift exceeds 1e-8.
StiefelParam riemannian_step(const StiefelParam& param, const Tensor& euclidean_grad,
                             double lr);

}  // namespace drda
