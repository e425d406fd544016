#ifndef APIVR_MODEL_HPP_
#define APIVR_MODEL_HPP_

#include <array>
#include <cstdint>
#include <string>

#include "apivr/numerics.hpp"

namespace apivr {

// Fixed interior widths of the two projection branches and the modality
// discriminator. Input dims (d1, d2) and the common-space dim r vary.
inline constexpr int kVideoHidden1 = 500;
inline constexpr int kVideoHidden2 = 200;
inline constexpr int kImageHidden1 = 100;
inline constexpr int kImageHidden2 = 80;
inline constexpr int kDiscriminatorHidden = 32;

// Probability floor used before every log() and by discriminate().
inline constexpr double kProbEps = 1e-12;

enum class Activation { Tanh, Linear };

struct AffineLayer {
  Matrix W;  // out x in
  Vector b;  // out
};

// theta_p: two 3-layer MLPs mapping d1 -> 500 -> 200 -> r (video, applied
// per proposal) and d2 -> 100 -> 80 -> r (image). Hidden layers use
// `hidden_activation`; the final layer is linear.
struct ProjectionParams {
  std::array<AffineLayer, 3> video;
  std::array<AffineLayer, 3> image;
  Activation hidden_activation = Activation::Tanh;
};

// theta_m: attention scoring stack, logits = tanh(X L1) L2 per instance.
struct GMILParams {
  Matrix L1;  // r x r'
  Vector L2;  // r'
};

// theta_c: shared semantic classifier, logits = W^T x + b.
struct ClassifierParams {
  Matrix W;  // r x C
  Vector b;  // C
};

// theta_d: modality discriminator r -> 32 (tanh) -> 1 (sigmoid).
struct DiscriminatorParams {
  AffineLayer hidden;  // 32 x r
  AffineLayer out;     // 1 x 32
};

struct ModelDims {
  int d1 = 0, d2 = 0, r = 0, r_prime = 0, C = 0;
};

struct ModelState {
  ProjectionParams proj;
  GMILParams gmil;
  ClassifierParams cls;
  DiscriminatorParams disc;
  std::uint64_t rng_seed = 0;
};

ModelDims dims_of(const ModelState& m);

// ---------------------------------------------------------------------------
// Forward evaluation (per-sample public surface)
// ---------------------------------------------------------------------------

// V is one bag as a k x d1 matrix (rows are proposals); output is r x k with
// column j depending only on proposal j.
Matrix project_video(const Matrix& V, const ProjectionParams& p);
Vector project_image(const Vector& u, const ProjectionParams& p);

// Attention weights over the k columns of Vbar (r x k). gmil_weights smooths
// both the pre-activation features and the logits with the bag's normalized
// adjacency; with Sbar = I it reduces exactly to mil_weights.
Vector mil_weights(const Matrix& Vbar, const GMILParams& p);
Vector gmil_weights(const Matrix& Vbar, const Matrix& Sbar, const GMILParams& p);

// Weighted average of the columns of Vbar; w must lie on the simplex.
Vector aggregate(const Matrix& Vbar, const Vector& w);

// Class probabilities (softmax over logits W^T x + b).
Vector classify(const Vector& x, const ClassifierParams& p);

// Probability that x came from the video modality, clamped away from {0, 1}.
double discriminate(const Vector& x, const DiscriminatorParams& p);

// Deterministic initialization: weights ~ U[-s, s] with
// s = sqrt(6 / (fan_in + fan_out)), biases zero. Fixed draw order.
ModelState init_params(const ModelDims& dims, Activation hidden_activation,
                       std::uint64_t seed);

// ---------------------------------------------------------------------------
// Cached forward / analytic backward building blocks
// ---------------------------------------------------------------------------
// These operate on column-batched inputs so a whole mini-batch goes through
// a handful of GEMMs. Gradients accumulate (+=) into caller-owned buffers.

struct MlpCache {
  Matrix X;       // in  x N, layer input
  Matrix H1, H2;  // hidden activations
  Matrix Y;       // out x N, linear output
};

Matrix mlp_forward(const std::array<AffineLayer, 3>& layers, Activation act,
                   const Matrix& X, MlpCache* cache);
void mlp_backward(const std::array<AffineLayer, 3>& layers, Activation act,
                  const MlpCache& cache, const Matrix& dY,
                  std::array<AffineLayer, 3>& grads, Matrix* dX);

struct AttentionCache {
  Matrix B;   // k x r, smoothed (or raw) instance features
  Matrix T;   // k x r', tanh activation
  Vector g;   // k, per-instance logits before graph smoothing
  Vector s;   // k, softmax input
  Vector w;   // k, weights
  bool graph = false;
};

// Shared implementation of mil_weights / gmil_weights; Sbar may be null.
Vector attention_weights(const Matrix& Vbar, const Matrix* Sbar,
                         const GMILParams& p, AttentionCache* cache);
// dL/dw -> accumulates dL/dL1, dL/dL2 and dL/dVbar. Includes the softmax
// Jacobian, so pass the gradient w.r.t. the weights themselves.
void attention_backward(const Matrix& Vbar, const Matrix* Sbar,
                        const GMILParams& p, const AttentionCache& cache,
                        const Vector& dw, GMILParams& grads,
                        Eigen::Ref<Matrix> dVbar);

struct ClassifierCache {
  Matrix X;  // r x N
  Matrix P;  // C x N, probabilities
};

Matrix classifier_forward(const ClassifierParams& p, const Matrix& X,
                          ClassifierCache* cache);
void classifier_backward(const ClassifierParams& p, const ClassifierCache& cache,
                         const Matrix& dLogits, ClassifierParams& grads,
                         Matrix* dX);

struct DiscriminatorCache {
  Matrix X;  // r x N
  Matrix H;  // 32 x N
  Eigen::RowVectorXd delta;  // sigmoid outputs
};

Eigen::RowVectorXd discriminator_forward(const DiscriminatorParams& p,
                                         const Matrix& X,
                                         DiscriminatorCache* cache);
// dOut is the gradient w.r.t. the pre-sigmoid scalar outputs.
void discriminator_backward(const DiscriminatorParams& p,
                            const DiscriminatorCache& cache,
                            const Eigen::RowVectorXd& dOut,
                            DiscriminatorParams& grads, Matrix* dX);

// ---------------------------------------------------------------------------
// Parameter bookkeeping
// ---------------------------------------------------------------------------

enum class ParamGroup { Projection, Gmil, Classifier, Discriminator };

inline constexpr std::array<ParamGroup, 4> kAllGroups = {
    ParamGroup::Projection, ParamGroup::Gmil, ParamGroup::Classifier,
    ParamGroup::Discriminator};

const char* group_name(ParamGroup g);

ModelState zeros_like(const ModelState& m);
// x += a * g for one parameter group.
void axpy_group(ModelState& x, ParamGroup group, double a, const ModelState& g);
Eigen::Index group_param_count(const ModelState& m, ParamGroup group);
// Row-major flattening in checkpoint tensor order.
Vector flatten_group(const ModelState& m, ParamGroup group);
void assign_group(ModelState& m, ParamGroup group, const Vector& flat);
bool params_equal_bits(const ModelState& a, const ModelState& b);
bool params_all_finite(const ModelState& m);

// ---------------------------------------------------------------------------
// Checkpoint container: "APVR" magic, u32 version, u32 dims (d1,d2,r,r',C),
// then 20 tensors (video layers, image layers, L1, L2, classifier W/b,
// discriminator layers), each a u64 element count followed by row-major
// float64 values. Native byte order. Round trips are bit-exact.
// ---------------------------------------------------------------------------

void save_checkpoint(const ModelState& m, const std::string& path);
ModelState load_checkpoint(const std::string& path,
                           Activation hidden_activation = Activation::Tanh);

}  // namespace apivr

#endif  // APIVR_MODEL_HPP_
