#include "apivr/model.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <random>
#include <vector>

namespace apivr {

namespace {

void check(bool ok, const char* msg) {
  if (!ok) throw DimMismatch(msg);
}

Matrix apply_activation(const Matrix& A, Activation act) {
  if (act == Activation::Linear) return A;
  return A.array().tanh();
}

}  // namespace

ModelDims dims_of(const ModelState& m) {
  ModelDims d;
  d.d1 = static_cast<int>(m.proj.video[0].W.cols());
  d.d2 = static_cast<int>(m.proj.image[0].W.cols());
  d.r = static_cast<int>(m.proj.video[2].W.rows());
  d.r_prime = static_cast<int>(m.gmil.L1.cols());
  d.C = static_cast<int>(m.cls.W.cols());
  return d;
}

Matrix mlp_forward(const std::array<AffineLayer, 3>& layers, Activation act,
                   const Matrix& X, MlpCache* cache) {
  check(X.rows() == layers[0].W.cols(), "mlp_forward: input dim mismatch");
  Matrix h1 = apply_activation(
      (layers[0].W * X).colwise() + layers[0].b, act);
  Matrix h2 = apply_activation(
      (layers[1].W * h1).colwise() + layers[1].b, act);
  Matrix y = (layers[2].W * h2).colwise() + layers[2].b;
  if (cache) {
    cache->X = X;
    cache->H1 = h1;
    cache->H2 = h2;
    cache->Y = y;
  }
  return y;
}

void mlp_backward(const std::array<AffineLayer, 3>& layers, Activation act,
                  const MlpCache& cache, const Matrix& dY,
                  std::array<AffineLayer, 3>& grads, Matrix* dX) {
  check(dY.rows() == cache.Y.rows() && dY.cols() == cache.Y.cols(),
        "mlp_backward: upstream gradient shape mismatch");
  grads[2].W.noalias() += dY * cache.H2.transpose();
  grads[2].b.noalias() += dY.rowwise().sum();
  Matrix dH2 = layers[2].W.transpose() * dY;
  Matrix dA2 = (act == Activation::Tanh)
                   ? Matrix(dH2.array() * (1.0 - cache.H2.array().square()))
                   : dH2;
  grads[1].W.noalias() += dA2 * cache.H1.transpose();
  grads[1].b.noalias() += dA2.rowwise().sum();
  Matrix dH1 = layers[1].W.transpose() * dA2;
  Matrix dA1 = (act == Activation::Tanh)
                   ? Matrix(dH1.array() * (1.0 - cache.H1.array().square()))
                   : dH1;
  grads[0].W.noalias() += dA1 * cache.X.transpose();
  grads[0].b.noalias() += dA1.rowwise().sum();
  if (dX) *dX = layers[0].W.transpose() * dA1;
}

Matrix project_video(const Matrix& V, const ProjectionParams& p) {
  check(V.cols() == p.video[0].W.cols(), "project_video: proposal dim mismatch");
  return mlp_forward(p.video, p.hidden_activation, V.transpose(), nullptr);
}

Vector project_image(const Vector& u, const ProjectionParams& p) {
  check(u.size() == p.image[0].W.cols(), "project_image: image dim mismatch");
  return mlp_forward(p.image, p.hidden_activation, u, nullptr).col(0);
}

Vector attention_weights(const Matrix& Vbar, const Matrix* Sbar,
                         const GMILParams& p, AttentionCache* cache) {
  check(Vbar.rows() == p.L1.rows(), "attention_weights: feature dim mismatch");
  const Eigen::Index k = Vbar.cols();
  if (Sbar) {
    check(Sbar->rows() == k && Sbar->cols() == k,
          "attention_weights: adjacency shape mismatch");
  }
  Matrix B = Sbar ? Matrix((*Sbar) * Vbar.transpose()) : Matrix(Vbar.transpose());
  Matrix T = (B * p.L1).array().tanh();
  Vector g = T * p.L2;
  Vector s = Sbar ? Vector((*Sbar) * g) : g;
  Vector w = stable_softmax(s);
  if (cache) {
    cache->B = B;
    cache->T = T;
    cache->g = g;
    cache->s = s;
    cache->w = w;
    cache->graph = (Sbar != nullptr);
  }
  return w;
}

void attention_backward(const Matrix& Vbar, const Matrix* Sbar,
                        const GMILParams& p, const AttentionCache& cache,
                        const Vector& dw, GMILParams& grads,
                        Eigen::Ref<Matrix> dVbar) {
  // softmax Jacobian: ds = w .* dw - (w . dw) w
  const Vector& w = cache.w;
  const double dot = w.dot(dw);
  Vector ds = w.cwiseProduct(dw) - dot * w;
  Vector dg = Sbar ? Vector(Sbar->transpose() * ds) : ds;
  grads.L2.noalias() += cache.T.transpose() * dg;
  Matrix dT = dg * p.L2.transpose();
  Matrix dM = dT.array() * (1.0 - cache.T.array().square());
  grads.L1.noalias() += cache.B.transpose() * dM;
  Matrix dB = dM * p.L1.transpose();
  if (Sbar) {
    dVbar.noalias() += dB.transpose() * (*Sbar);
  } else {
    dVbar.noalias() += dB.transpose();
  }
}

Vector mil_weights(const Matrix& Vbar, const GMILParams& p) {
  return attention_weights(Vbar, nullptr, p, nullptr);
}

Vector gmil_weights(const Matrix& Vbar, const Matrix& Sbar, const GMILParams& p) {
  return attention_weights(Vbar, &Sbar, p, nullptr);
}

Vector aggregate(const Matrix& Vbar, const Vector& w) {
  check(Vbar.cols() == w.size(), "aggregate: weight count mismatch");
  return Vbar * w;
}

Matrix classifier_forward(const ClassifierParams& p, const Matrix& X,
                          ClassifierCache* cache) {
  check(X.rows() == p.W.rows(), "classifier_forward: input dim mismatch");
  Matrix logits = (p.W.transpose() * X).colwise() + p.b;
  Matrix P(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    P.col(j) = stable_softmax(logits.col(j));
  }
  if (cache) {
    cache->X = X;
    cache->P = P;
  }
  return P;
}

void classifier_backward(const ClassifierParams& p, const ClassifierCache& cache,
                         const Matrix& dLogits, ClassifierParams& grads,
                         Matrix* dX) {
  grads.W.noalias() += cache.X * dLogits.transpose();
  grads.b.noalias() += dLogits.rowwise().sum();
  if (dX) dX->noalias() += p.W * dLogits;
}

Vector classify(const Vector& x, const ClassifierParams& p) {
  return classifier_forward(p, x, nullptr).col(0);
}

Eigen::RowVectorXd discriminator_forward(const DiscriminatorParams& p,
                                         const Matrix& X,
                                         DiscriminatorCache* cache) {
  check(X.rows() == p.hidden.W.cols(), "discriminator_forward: input dim mismatch");
  Matrix H = ((p.hidden.W * X).colwise() + p.hidden.b).array().tanh();
  Eigen::RowVectorXd o = (p.out.W * H).row(0).array() + p.out.b(0);
  Eigen::RowVectorXd delta = 1.0 / (1.0 + (-o.array()).exp());
  if (cache) {
    cache->X = X;
    cache->H = H;
    cache->delta = delta;
  }
  return delta;
}

void discriminator_backward(const DiscriminatorParams& p,
                            const DiscriminatorCache& cache,
                            const Eigen::RowVectorXd& dOut,
                            DiscriminatorParams& grads, Matrix* dX) {
  grads.out.W.noalias() += dOut * cache.H.transpose();
  grads.out.b(0) += dOut.sum();
  Matrix dH = p.out.W.transpose() * dOut;
  Matrix dA = dH.array() * (1.0 - cache.H.array().square());
  grads.hidden.W.noalias() += dA * cache.X.transpose();
  grads.hidden.b.noalias() += dA.rowwise().sum();
  if (dX) dX->noalias() += p.hidden.W.transpose() * dA;
}

double discriminate(const Vector& x, const DiscriminatorParams& p) {
  const double d = discriminator_forward(p, x, nullptr)(0);
  return std::min(std::max(d, kProbEps), 1.0 - kProbEps);
}

namespace {

AffineLayer init_affine(int out, int in, std::mt19937_64& rng) {
  const double s = std::sqrt(6.0 / (in + out));
  std::uniform_real_distribution<double> dist(-s, s);
  AffineLayer layer;
  layer.W.resize(out, in);
  for (int i = 0; i < out; ++i)
    for (int j = 0; j < in; ++j) layer.W(i, j) = dist(rng);
  layer.b = Vector::Zero(out);
  return layer;
}

Matrix init_matrix(int rows, int cols, std::mt19937_64& rng) {
  const double s = std::sqrt(6.0 / (rows + cols));
  std::uniform_real_distribution<double> dist(-s, s);
  Matrix W(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) W(i, j) = dist(rng);
  return W;
}

}  // namespace

ModelState init_params(const ModelDims& dims, Activation hidden_activation,
                       std::uint64_t seed) {
  if (dims.d1 < 1 || dims.d2 < 1 || dims.r < 1 || dims.r_prime < 1 || dims.C < 2) {
    throw ConfigError("init_params: invalid model dimensions");
  }
  std::mt19937_64 rng(seed);
  ModelState m;
  m.rng_seed = seed;
  m.proj.hidden_activation = hidden_activation;
  m.proj.video[0] = init_affine(kVideoHidden1, dims.d1, rng);
  m.proj.video[1] = init_affine(kVideoHidden2, kVideoHidden1, rng);
  m.proj.video[2] = init_affine(dims.r, kVideoHidden2, rng);
  m.proj.image[0] = init_affine(kImageHidden1, dims.d2, rng);
  m.proj.image[1] = init_affine(kImageHidden2, kImageHidden1, rng);
  m.proj.image[2] = init_affine(dims.r, kImageHidden2, rng);
  m.gmil.L1 = init_matrix(dims.r, dims.r_prime, rng);
  m.gmil.L2 = init_matrix(dims.r_prime, 1, rng).col(0);
  m.cls.W = init_matrix(dims.r, dims.C, rng);
  m.cls.b = Vector::Zero(dims.C);
  m.disc.hidden = init_affine(kDiscriminatorHidden, dims.r, rng);
  m.disc.out = init_affine(1, kDiscriminatorHidden, rng);
  return m;
}

// ---------------------------------------------------------------------------
// Parameter bookkeeping
// ---------------------------------------------------------------------------

namespace {

// Tensor enumeration shared by flattening and checkpoint IO.
template <typename Fn>
void for_each_tensor_in_group(ModelState& m, ParamGroup g, Fn&& fn) {
  switch (g) {
    case ParamGroup::Projection:
      for (auto& l : m.proj.video) {
        fn(l.W);
        fn(l.b);
      }
      for (auto& l : m.proj.image) {
        fn(l.W);
        fn(l.b);
      }
      break;
    case ParamGroup::Gmil:
      fn(m.gmil.L1);
      fn(m.gmil.L2);
      break;
    case ParamGroup::Classifier:
      fn(m.cls.W);
      fn(m.cls.b);
      break;
    case ParamGroup::Discriminator:
      fn(m.disc.hidden.W);
      fn(m.disc.hidden.b);
      fn(m.disc.out.W);
      fn(m.disc.out.b);
      break;
  }
}

struct TensorRef {
  double* data;
  Eigen::Index rows, cols;  // cols == 1 for vectors
};

std::vector<TensorRef> tensors_in_group(ModelState& m, ParamGroup g) {
  std::vector<TensorRef> out;
  for_each_tensor_in_group(m, g, [&out](auto& t) {
    out.push_back(TensorRef{t.data(), t.rows(), t.cols()});
  });
  return out;
}

}  // namespace

const char* group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::Projection: return "projection";
    case ParamGroup::Gmil: return "gmil";
    case ParamGroup::Classifier: return "classifier";
    case ParamGroup::Discriminator: return "discriminator";
  }
  return "?";
}

ModelState zeros_like(const ModelState& m) {
  ModelState z = m;
  for (ParamGroup g : kAllGroups) {
    for (auto& t : tensors_in_group(z, g)) {
      std::memset(t.data, 0, sizeof(double) * t.rows * t.cols);
    }
  }
  return z;
}

void axpy_group(ModelState& x, ParamGroup group, double a, const ModelState& g) {
  auto xt = tensors_in_group(x, group);
  auto gt = tensors_in_group(const_cast<ModelState&>(g), group);
  for (size_t i = 0; i < xt.size(); ++i) {
    const Eigen::Index n = xt[i].rows * xt[i].cols;
    Eigen::Map<Vector>(xt[i].data, n) += a * Eigen::Map<const Vector>(gt[i].data, n);
  }
}

Eigen::Index group_param_count(const ModelState& m, ParamGroup group) {
  Eigen::Index n = 0;
  for (auto& t : tensors_in_group(const_cast<ModelState&>(m), group)) {
    n += t.rows * t.cols;
  }
  return n;
}

Vector flatten_group(const ModelState& m, ParamGroup group) {
  Vector out(group_param_count(m, group));
  Eigen::Index pos = 0;
  for (auto& t : tensors_in_group(const_cast<ModelState&>(m), group)) {
    for (Eigen::Index i = 0; i < t.rows; ++i) {
      for (Eigen::Index j = 0; j < t.cols; ++j) {
        out(pos++) = t.data[j * t.rows + i];  // row-major walk of col-major data
      }
    }
  }
  return out;
}

void assign_group(ModelState& m, ParamGroup group, const Vector& flat) {
  if (flat.size() != group_param_count(m, group)) {
    throw DimMismatch("assign_group: flat size mismatch");
  }
  Eigen::Index pos = 0;
  for (auto& t : tensors_in_group(m, group)) {
    for (Eigen::Index i = 0; i < t.rows; ++i) {
      for (Eigen::Index j = 0; j < t.cols; ++j) {
        t.data[j * t.rows + i] = flat(pos++);
      }
    }
  }
}

bool params_equal_bits(const ModelState& a, const ModelState& b) {
  for (ParamGroup g : kAllGroups) {
    auto at = tensors_in_group(const_cast<ModelState&>(a), g);
    auto bt = tensors_in_group(const_cast<ModelState&>(b), g);
    if (at.size() != bt.size()) return false;
    for (size_t i = 0; i < at.size(); ++i) {
      if (at[i].rows != bt[i].rows || at[i].cols != bt[i].cols) return false;
      if (std::memcmp(at[i].data, bt[i].data,
                      sizeof(double) * at[i].rows * at[i].cols) != 0) {
        return false;
      }
    }
  }
  return true;
}

bool params_all_finite(const ModelState& m) {
  for (ParamGroup g : kAllGroups) {
    for (auto& t : tensors_in_group(const_cast<ModelState&>(m), g)) {
      const Eigen::Index n = t.rows * t.cols;
      if (!Eigen::Map<const Vector>(t.data, n).allFinite()) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Checkpoint IO
// ---------------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'A', 'P', 'V', 'R'};
constexpr std::uint32_t kCheckpointVersion = 1;

void write_u32(std::FILE* f, std::uint32_t v) {
  if (std::fwrite(&v, sizeof(v), 1, f) != 1) throw FormatError("checkpoint: write failed");
}

void write_u64(std::FILE* f, std::uint64_t v) {
  if (std::fwrite(&v, sizeof(v), 1, f) != 1) throw FormatError("checkpoint: write failed");
}

std::uint32_t read_u32(std::FILE* f, const std::string& path) {
  std::uint32_t v;
  if (std::fread(&v, sizeof(v), 1, f) != 1) {
    throw FormatError("checkpoint: truncated header in " + path);
  }
  return v;
}

std::uint64_t read_u64(std::FILE* f, const std::string& path) {
  std::uint64_t v;
  if (std::fread(&v, sizeof(v), 1, f) != 1) {
    throw FormatError("checkpoint: truncated tensor header in " + path);
  }
  return v;
}

class FileCloser {
 public:
  explicit FileCloser(std::FILE* f) : f_(f) {}
  ~FileCloser() {
    if (f_) std::fclose(f_);
  }

 private:
  std::FILE* f_;
};

void write_tensor(std::FILE* f, const double* data, Eigen::Index rows,
                  Eigen::Index cols) {
  write_u64(f, static_cast<std::uint64_t>(rows * cols));
  std::vector<double> row(cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) row[j] = data[j * rows + i];
    if (std::fwrite(row.data(), sizeof(double), row.size(), f) != row.size()) {
      throw FormatError("checkpoint: tensor write failed");
    }
  }
}

void read_tensor(std::FILE* f, double* data, Eigen::Index rows, Eigen::Index cols,
                 const std::string& path) {
  const std::uint64_t n = read_u64(f, path);
  if (n != static_cast<std::uint64_t>(rows * cols)) {
    throw FormatError("checkpoint: tensor size mismatch in " + path);
  }
  std::vector<double> row(cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (std::fread(row.data(), sizeof(double), row.size(), f) != row.size()) {
      throw FormatError("checkpoint: truncated tensor data in " + path);
    }
    for (Eigen::Index j = 0; j < cols; ++j) data[j * rows + i] = row[j];
  }
}

}  // namespace

void save_checkpoint(const ModelState& m, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw FormatError("checkpoint: cannot open " + path + " for writing");
  FileCloser closer(f);
  if (std::fwrite(kCheckpointMagic, 1, 4, f) != 4) {
    throw FormatError("checkpoint: write failed");
  }
  write_u32(f, kCheckpointVersion);
  const ModelDims d = dims_of(m);
  write_u32(f, static_cast<std::uint32_t>(d.d1));
  write_u32(f, static_cast<std::uint32_t>(d.d2));
  write_u32(f, static_cast<std::uint32_t>(d.r));
  write_u32(f, static_cast<std::uint32_t>(d.r_prime));
  write_u32(f, static_cast<std::uint32_t>(d.C));
  for (ParamGroup g : kAllGroups) {
    for (auto& t : tensors_in_group(const_cast<ModelState&>(m), g)) {
      write_tensor(f, t.data, t.rows, t.cols);
    }
  }
}

ModelState load_checkpoint(const std::string& path, Activation hidden_activation) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw FormatError("checkpoint: cannot open " + path);
  FileCloser closer(f);
  char magic[4];
  if (std::fread(magic, 1, 4, f) != 4 ||
      std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic in " + path);
  }
  const std::uint32_t version = read_u32(f, path);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version in " + path);
  }
  ModelDims d;
  d.d1 = static_cast<int>(read_u32(f, path));
  d.d2 = static_cast<int>(read_u32(f, path));
  d.r = static_cast<int>(read_u32(f, path));
  d.r_prime = static_cast<int>(read_u32(f, path));
  d.C = static_cast<int>(read_u32(f, path));
  if (d.d1 < 1 || d.d2 < 1 || d.r < 1 || d.r_prime < 1 || d.C < 2) {
    throw FormatError("checkpoint: invalid dimension header in " + path);
  }
  ModelState m = init_params(d, hidden_activation, 0);
  for (ParamGroup g : kAllGroups) {
    for (auto& t : tensors_in_group(m, g)) {
      read_tensor(f, t.data, t.rows, t.cols, path);
    }
  }
  if (std::fgetc(f) != EOF) {
    throw FormatError("checkpoint: trailing bytes in " + path);
  }
  if (!params_all_finite(m)) {
    throw FormatError("checkpoint: non-finite parameters in " + path);
  }
  m.rng_seed = 0;
  return m;
}

}  // namespace apivr
