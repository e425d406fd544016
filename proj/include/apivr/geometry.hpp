#ifndef APIVR_GEOMETRY_HPP_
#define APIVR_GEOMETRY_HPP_

#include <vector>

#include "apivr/numerics.hpp"

namespace apivr {

// The b columns of a projected bag with the largest attention weights,
// in ascending original index order. `indices` points back into the bag.
struct TruncatedBag {
  Matrix Vprime;             // r x b
  std::vector<int> indices;  // ascending, size b
};

// Select the top-b columns of Vbar by weight; ties keep the lower index.
// Throws BadTruncation if b is out of range.
TruncatedBag truncate_bag(const Matrix& Vbar, const Vector& weights, int b);

// Reusable ridged-Gram factorization of one subspace; build once per bag and
// evaluate distances to many points against it.
struct SubspaceCache {
  Matrix V;                // r x b
  Eigen::LLT<Matrix> llt;  // of V^T V + ridge * I
};

SubspaceCache make_subspace_cache(const Matrix& Vprime, double ridge);

// Squared distance from u to its (ridged) orthogonal projection onto
// span(V): ||u - V (V^T V + ridge I)^{-1} V^T u||^2. Always >= 0.
double subspace_distance(const SubspaceCache& cache, const Vector& u);

struct DistanceGrad {
  Vector du;  // r
  Matrix dV;  // r x b
};

// Analytic gradient of subspace_distance w.r.t. u and every entry of V,
// via the inverse differential d(A^{-1}) = -A^{-1} dA A^{-1}. The discrete
// column selection that produced V is treated as constant.
DistanceGrad subspace_distance_gradient(const SubspaceCache& cache, const Vector& u);

// Convenience wrappers over the cache-based kernels.
double point_to_subspace_distance(const Vector& u, const TruncatedBag& bag,
                                  double ridge);
DistanceGrad distance_gradient(const Vector& u, const TruncatedBag& bag,
                               double ridge);

// <vec(P), vec(u u^T)> = u^T P u for a symmetric projector P; complements
// the distance via d = u^T u - d_tilde when P is idempotent.
double d_tilde(const Vector& u, const Matrix& projector);

}  // namespace apivr

#endif  // APIVR_GEOMETRY_HPP_
