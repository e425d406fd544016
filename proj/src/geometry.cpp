#include "apivr/geometry.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace apivr {

TruncatedBag truncate_bag(const Matrix& Vbar, const Vector& weights, int b) {
  const int k = static_cast<int>(Vbar.cols());
  if (weights.size() != k) throw DimMismatch("truncate_bag: weight count mismatch");
  if (b < 1 || b > k) {
    throw BadTruncation("truncate_bag: b=" + std::to_string(b) +
                        " out of range for k=" + std::to_string(k));
  }
  std::vector<int> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&weights](int a, int c) {
    if (weights(a) != weights(c)) return weights(a) > weights(c);
    return a < c;
  });
  std::vector<int> chosen(order.begin(), order.begin() + b);
  std::sort(chosen.begin(), chosen.end());
  TruncatedBag bag;
  bag.indices = std::move(chosen);
  bag.Vprime.resize(Vbar.rows(), b);
  for (int j = 0; j < b; ++j) bag.Vprime.col(j) = Vbar.col(bag.indices[j]);
  return bag;
}

SubspaceCache make_subspace_cache(const Matrix& Vprime, double ridge) {
  if (Vprime.rows() < 1 || Vprime.cols() < 1) {
    throw DimMismatch("subspace: empty basis");
  }
  SubspaceCache cache;
  cache.V = Vprime;
  Matrix gram = Vprime.transpose() * Vprime;
  gram.diagonal().array() += ridge;
  cache.llt.compute(gram);
  if (cache.llt.info() != Eigen::Success) {
    throw SingularGram("subspace: ridged Gram factorization failed (b=" +
                       std::to_string(Vprime.cols()) + ")");
  }
  return cache;
}

double subspace_distance(const SubspaceCache& cache, const Vector& u) {
  if (u.size() != cache.V.rows()) throw DimMismatch("subspace_distance: dim mismatch");
  Vector w = cache.llt.solve(cache.V.transpose() * u);
  Vector e = u - cache.V * w;
  const double d = e.squaredNorm();
  return d < 0.0 ? 0.0 : d;
}

DistanceGrad subspace_distance_gradient(const SubspaceCache& cache, const Vector& u) {
  if (u.size() != cache.V.rows()) throw DimMismatch("distance_gradient: dim mismatch");
  const Matrix& V = cache.V;
  Vector w = cache.llt.solve(V.transpose() * u);
  Vector e = u - V * w;
  Vector q = cache.llt.solve(V.transpose() * e);
  Vector vq = V * q;
  DistanceGrad g;
  g.du = 2.0 * (e - vq);
  g.dV = -2.0 * e * (w + q).transpose() + 2.0 * vq * w.transpose();
  return g;
}

double point_to_subspace_distance(const Vector& u, const TruncatedBag& bag,
                                  double ridge) {
  return subspace_distance(make_subspace_cache(bag.Vprime, ridge), u);
}

DistanceGrad distance_gradient(const Vector& u, const TruncatedBag& bag,
                               double ridge) {
  return subspace_distance_gradient(make_subspace_cache(bag.Vprime, ridge), u);
}

double d_tilde(const Vector& u, const Matrix& projector) {
  if (projector.rows() != projector.cols() || projector.rows() != u.size()) {
    throw DimMismatch("d_tilde: projector shape mismatch");
  }
  return u.dot(projector * u);
}

}  // namespace apivr
