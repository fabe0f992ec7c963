#include "drda/stiefel.hpp"

#include <algorithm>
#include <cmath>

#include "drda/error.hpp"

namespace drda {

namespace {

constexpr double kDriftTolerance = 1e-8;

bool all_zero(const Tensor& t) {
  for (std::size_t i = 0; i < t.numel(); ++i) {
    if (t[i] != 0.0) return false;
  }
  return true;
}

}  // namespace

StiefelParam stiefel_init_identity(std::size_t d) {
  if (d < 1) throw contract_error("stiefel_init_identity: d must be >= 1");
  return StiefelParam{Tensor::identity(d), 10.0};
}

Tensor stiefel_apply(const StiefelParam& param, const Tensor& z) {
  const Tensor& m = param.matrix;
  const std::size_t d = m.rows();
  if (z.rank() == 1) {
    if (z.numel() != d) {
      throw contract_error("stiefel_apply: vector length " + std::to_string(z.numel()) +
                           " does not match dimension " + std::to_string(d));
    }
    Tensor out({d});
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t l = 0; l < d; ++l) s += z[l] * m.at(l, j);
      out[j] = s;
    }
    return out;
  }
  if (z.rank() != 2 || z.cols() != d) {
    throw contract_error("stiefel_apply: batch shape " + z.shape_str() +
                         " does not match dimension " + std::to_string(d));
  }
  Tensor out({z.rows(), d});
  for (std::size_t i = 0; i < z.rows(); ++i) {
    for (std::size_t l = 0; l < d; ++l) {
      const double zv = z.at(i, l);
      if (zv == 0.0) continue;
      for (std::size_t j = 0; j < d; ++j) out.at(i, j) += zv * m.at(l, j);
    }
  }
  return out;
}

double orthonormality_drift(const Tensor& m) {
  const std::size_t d = m.rows();
  double worst = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t l = 0; l < d; ++l) s += m.at(l, i) * m.at(l, j);
      worst = std::max(worst, std::abs(s - (i == j ? 1.0 : 0.0)));
    }
  }
  return worst;
}

Tensor qr_orthonormalize(const Tensor& m) {
  if (m.rank() != 2 || m.rows() != m.cols()) {
    throw contract_error("qr_orthonormalize: need a square matrix");
  }
  const std::size_t d = m.rows();
  Tensor r = m;
  Tensor q = Tensor::identity(d);
  std::vector<double> v(d);
  for (std::size_t j = 0; j < d; ++j) {
    double norm = 0.0;
    for (std::size_t i = j; i < d; ++i) norm += r.at(i, j) * r.at(i, j);
    norm = std::sqrt(norm);
    if (norm == 0.0) continue;
    const double alpha = r.at(j, j) >= 0.0 ? -norm : norm;
    double vnorm = 0.0;
    for (std::size_t i = j; i < d; ++i) {
      v[i] = r.at(i, j) - (i == j ? alpha : 0.0);
      vnorm += v[i] * v[i];
    }
    if (vnorm == 0.0) continue;
    vnorm = std::sqrt(vnorm);
    for (std::size_t i = j; i < d; ++i) v[i] /= vnorm;
    // R <- (I - 2 v v^T) R, applied to the trailing block
    for (std::size_t c = j; c < d; ++c) {
      double dot = 0.0;
      for (std::size_t i = j; i < d; ++i) dot += v[i] * r.at(i, c);
      for (std::size_t i = j; i < d; ++i) r.at(i, c) -= 2.0 * v[i] * dot;
    }
    // Q <- Q (I - 2 v v^T)
    for (std::size_t i = 0; i < d; ++i) {
      double dot = 0.0;
      for (std::size_t c = j; c < d; ++c) dot += q.at(i, c) * v[c];
      for (std::size_t c = j; c < d; ++c) q.at(i, c) -= 2.0 * dot * v[c];
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    if (r.at(j, j) < 0.0) {
      for (std::size_t i = 0; i < d; ++i) q.at(i, j) = -q.at(i, j);
    }
  }
  return q;
}

StiefelParam riemannian_step(const StiefelParam& param, const Tensor& euclidean_grad,
                             double lr) {
  const Tensor& delta = param.matrix;
  const std::size_t d = delta.rows();
  if (lr <= 0.0) throw contract_error("riemannian_step: lr must be > 0");
  if (!euclidean_grad.same_shape(delta)) {
    throw contract_error("riemannian_step: gradient shape " + euclidean_grad.shape_str() +
                         " does not match parameter " + delta.shape_str());
  }
  require_finite(euclidean_grad, "riemannian_step gradient");
  if (all_zero(euclidean_grad)) return param;

  // sym(delta^T G)
  Tensor dtg({d, d});
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t l = 0; l < d; ++l) s += delta.at(l, i) * euclidean_grad.at(l, j);
      dtg.at(i, j) = s;
    }
  }
  Tensor sym({d, d});
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) sym.at(i, j) = 0.5 * (dtg.at(i, j) + dtg.at(j, i));
  }
  // tangent = G - delta * sym;  step and retract
  Tensor x = delta;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double corr = 0.0;
      for (std::size_t l = 0; l < d; ++l) corr += delta.at(i, l) * sym.at(l, j);
      x.at(i, j) -= lr * (euclidean_grad.at(i, j) - corr);
    }
  }
  StiefelParam next{qr_orthonormalize(x), param.learning_rate_scale};
  if (orthonormality_drift(next.matrix) > kDriftTolerance) {
    next.matrix = qr_orthonormalize(next.matrix);
  }
  return next;
}

}  // namespace drda
