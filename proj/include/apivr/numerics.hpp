#ifndef APIVR_NUMERICS_HPP_
#define APIVR_NUMERICS_HPP_

#include <Eigen/Dense>
#include <functional>

#include "apivr/errors.hpp"

namespace apivr {

// All arithmetic is dense 64-bit floating point. Kernels are pure functions
// of their inputs and bit-deterministic for a fixed evaluation order; they
// are safe to call concurrently.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

bool all_finite(const Matrix& m);
bool all_finite(const Vector& v);

// Softmax with max-shift so arbitrarily large finite inputs cannot overflow.
// Output sums to 1; softmax(v + c*1) == softmax(v) up to rounding.
// Throws NumericError on non-finite input.
Vector stable_softmax(const Vector& v);

// Pairwise cosine similarity between the rows of H, clamped to [0, 1] so the
// degree matrix of the graph stays positive. Exactly symmetric, unit diagonal.
// Throws ZeroNormRow if some row has zero norm.
Matrix cosine_similarity_graph(const Matrix& H);

// Renormalized adjacency D^{-1/2} (S + I) D^{-1/2} with D the degree matrix
// of S + I. Expects S symmetric with entries in [0, 1]; the +I shift keeps
// every degree >= 1. Output is exactly symmetric.
Matrix normalize_adjacency(const Matrix& S);

// Ridge-regularized orthogonal projector onto the column span of Vp:
//   P = Vp (Vp^T Vp + ridge * I)^{-1} Vp^T,
// computed with a Cholesky factorization of the ridged Gram matrix and then
// symmetrized exactly. Throws SingularGram if the factorization fails.
Matrix subspace_projector(const Matrix& Vp, double ridge);

// Central-difference gradient check: returns
//   max_i |fd_i - analytic_i| / max(1, |analytic_i|).
// Throws NonFiniteLoss if f evaluates to NaN/Inf at any probe point.
double finite_difference_check(const std::function<double(const Vector&)>& f,
                               const Vector& x0, const Vector& analytic_grad,
                               double h);

}  // namespace apivr

#endif  // APIVR_NUMERICS_HPP_
