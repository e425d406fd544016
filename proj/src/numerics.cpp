#include "apivr/numerics.hpp"

#include <cmath>
#include <string>

namespace apivr {

bool all_finite(const Matrix& m) { return m.allFinite(); }
bool all_finite(const Vector& v) { return v.allFinite(); }

Vector stable_softmax(const Vector& v) {
  if (v.size() < 1) throw DimMismatch("stable_softmax: empty input");
  if (!v.allFinite()) throw NumericError("stable_softmax: non-finite input");
  const double shift = v.maxCoeff();
  Vector e = (v.array() - shift).exp();
  return e / e.sum();
}

Matrix cosine_similarity_graph(const Matrix& H) {
  const Eigen::Index k = H.rows();
  if (k < 1 || H.cols() < 1) throw DimMismatch("cosine_similarity_graph: empty input");
  Vector norms(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    norms(i) = H.row(i).norm();
    if (norms(i) == 0.0) {
      throw ZeroNormRow("cosine_similarity_graph: row " + std::to_string(i) +
                        " has zero norm");
    }
  }
  Matrix S(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    S(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < k; ++j) {
      double c = H.row(i).dot(H.row(j)) / (norms(i) * norms(j));
      if (c < 0.0) c = 0.0;
      if (c > 1.0) c = 1.0;
      S(i, j) = c;
      S(j, i) = c;  // mirrored, so symmetry is exact
    }
  }
  return S;
}

Matrix normalize_adjacency(const Matrix& S) {
  const Eigen::Index k = S.rows();
  if (k < 1 || S.cols() != k) throw DimMismatch("normalize_adjacency: square matrix required");
  Vector dinv(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double degree = S.row(i).sum() + 1.0;  // self loop
    dinv(i) = 1.0 / std::sqrt(degree);
  }
  Matrix out(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    out(i, i) = (S(i, i) + 1.0) * dinv(i) * dinv(i);
    for (Eigen::Index j = i + 1; j < k; ++j) {
      const double v = S(i, j) * dinv(i) * dinv(j);
      out(i, j) = v;
      out(j, i) = v;
    }
  }
  return out;
}

Matrix subspace_projector(const Matrix& Vp, double ridge) {
  if (Vp.rows() < 1 || Vp.cols() < 1) throw DimMismatch("subspace_projector: empty input");
  const Eigen::Index b = Vp.cols();
  Matrix gram = Vp.transpose() * Vp;
  gram.diagonal().array() += ridge;
  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() != Eigen::Success) {
    throw SingularGram("subspace_projector: ridged Gram factorization failed (b=" +
                       std::to_string(b) + ", ridge=" + std::to_string(ridge) + ")");
  }
  Matrix P = Vp * llt.solve(Vp.transpose());
  P = 0.5 * (P + P.transpose()).eval();  // exact symmetry
  return P;
}

double finite_difference_check(const std::function<double(const Vector&)>& f,
                               const Vector& x0, const Vector& analytic_grad,
                               double h) {
  if (x0.size() != analytic_grad.size()) {
    throw DimMismatch("finite_difference_check: gradient size mismatch");
  }
  if (!(h > 0.0)) throw NumericError("finite_difference_check: h must be positive");
  Vector x = x0;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    const double xi = x0(i);
    x(i) = xi + h;
    const double fp = f(x);
    x(i) = xi - h;
    const double fm = f(x);
    x(i) = xi;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NonFiniteLoss("finite_difference_check: non-finite loss at coordinate " +
                          std::to_string(i));
    }
    const double fd = (fp - fm) / (2.0 * h);
    const double g = analytic_grad(i);
    const double err = std::abs(fd - g) / std::max(1.0, std::abs(g));
    if (err > worst) worst = err;
  }
  return worst;
}

}  // namespace apivr
