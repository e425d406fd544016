#include "apivr/losses.hpp"

#include <cmath>
#include <limits>
#include <set>
#include <string>

namespace apivr {

namespace {

enum class WMode { Gmil, Mil, Uniform };

WMode weight_mode_of(const LossConfig& cfg) {
  if (cfg.wo_gmil) return WMode::Uniform;
  if (cfg.wo_graph) return WMode::Mil;
  return WMode::Gmil;
}

double clamp_prob(double p) {
  return std::min(std::max(p, kProbEps), 1.0 - kProbEps);
}

// Whole-batch forward pass. Both projection branches run as single
// column-batched GEMMs; attention, aggregation and the truncated-bag
// factorizations are per item. Each bag's column block is padded (with zero
// columns) to a multiple of 8 so that identical bags produce bit-identical
// projections at any batch position: the GEMM kernel's rounding depends on
// the column phase within its register panel.
struct BatchForward {
  Eigen::Index n = 0, k = 0, kpad = 0, r = 0;
  MlpCache video;  // X: d1 x (n*kpad), Y: r x (n*kpad)
  MlpCache image;  // X: d2 x n,        Y: r x n
  std::vector<AttentionCache> att;
  Matrix weights;  // k x n
  Matrix z;        // r x n
  std::vector<TruncatedBag> trunc;
  std::vector<SubspaceCache> sub;

  Eigen::Ref<Matrix> vbar(int i) { return video.Y.middleCols(i * kpad, k); }
  Eigen::Ref<const Matrix> vbar(int i) const {
    return video.Y.middleCols(i * kpad, k);
  }
};

BatchForward forward_batch(const Batch& batch, const ModelState& m,
                           const LossConfig& cfg, const Selections* frozen,
                           bool need_geometry) {
  const ModelDims dims = dims_of(m);
  BatchForward fw;
  fw.n = static_cast<Eigen::Index>(batch.items.size());
  fw.k = batch.k;
  fw.kpad = (fw.k + 7) / 8 * 8;
  fw.r = dims.r;
  if (batch.items.empty()) throw DimMismatch("forward_batch: empty batch");
  if (batch.items[0]->bag.features.cols() != dims.d1 ||
      batch.items[0]->image.size() != dims.d2) {
    throw DimMismatch("forward_batch: batch dims do not match model dims");
  }

  Matrix xv = Matrix::Zero(dims.d1, fw.n * fw.kpad);
  Matrix xu(dims.d2, fw.n);
  for (Eigen::Index i = 0; i < fw.n; ++i) {
    const PairedItem& item = *batch.items[i];
    xv.middleCols(i * fw.kpad, fw.k) = item.bag.features.transpose();
    xu.col(i) = item.image;
  }
  mlp_forward(m.proj.video, m.proj.hidden_activation, xv, &fw.video);
  mlp_forward(m.proj.image, m.proj.hidden_activation, xu, &fw.image);
  if (!fw.video.Y.allFinite() || !fw.image.Y.allFinite()) {
    throw NonFiniteLoss("forward_batch: non-finite projected features");
  }

  const WMode mode = weight_mode_of(cfg);
  fw.weights.resize(fw.k, fw.n);
  fw.z.resize(fw.r, fw.n);
  if (mode != WMode::Uniform) fw.att.resize(fw.n);
  for (Eigen::Index i = 0; i < fw.n; ++i) {
    const Matrix vbar = fw.vbar(static_cast<int>(i));
    Vector w;
    switch (mode) {
      case WMode::Gmil:
        w = attention_weights(vbar, &batch.items[i]->bag.sbar, m.gmil, &fw.att[i]);
        break;
      case WMode::Mil:
        w = attention_weights(vbar, nullptr, m.gmil, &fw.att[i]);
        break;
      case WMode::Uniform:
        w = Vector::Constant(fw.k, 1.0 / static_cast<double>(fw.k));
        break;
    }
    fw.weights.col(i) = w;
    fw.z.col(i).noalias() = vbar * w;
  }

  if (need_geometry) {
    fw.trunc.reserve(fw.n);
    fw.sub.reserve(fw.n);
    const int b_eff = cfg.wo_gmil ? static_cast<int>(fw.k) : cfg.b;
    for (Eigen::Index i = 0; i < fw.n; ++i) {
      TruncatedBag bag;
      if (frozen && !frozen->truncation.empty()) {
        bag.indices = frozen->truncation.at(i);
        bag.Vprime.resize(fw.r, static_cast<Eigen::Index>(bag.indices.size()));
        for (size_t j = 0; j < bag.indices.size(); ++j) {
          bag.Vprime.col(static_cast<Eigen::Index>(j)) =
              fw.vbar(static_cast<int>(i)).col(bag.indices[j]);
        }
      } else {
        bag = truncate_bag(fw.vbar(static_cast<int>(i)), fw.weights.col(i), b_eff);
      }
      fw.sub.push_back(make_subspace_cache(bag.Vprime, cfg.ridge));
      fw.trunc.push_back(std::move(bag));
    }
  }
  return fw;
}

// Gradient accumulation buffers shared by the loss terms. dz collects every
// contribution that reaches the bag feature Z; it is pushed through the
// attention/aggregation path once, in flush_backward.
struct PathGrads {
  Matrix dvbar;  // r x (n*k)
  Matrix dubar;  // r x n
  Matrix dz;     // r x n
  bool z_used = false;

  PathGrads(Eigen::Index r, Eigen::Index n, Eigen::Index k)
      : dvbar(Matrix::Zero(r, n * k)),
        dubar(Matrix::Zero(r, n)),
        dz(Matrix::Zero(r, n)) {}
};

void flush_backward(const Batch& batch, const BatchForward& fw,
                    const ModelState& m, const LossConfig& cfg, PathGrads& pg,
                    ModelState& grads) {
  const WMode mode = weight_mode_of(cfg);
  Matrix dvbar = pg.dvbar;
  if (pg.z_used) {
    for (Eigen::Index i = 0; i < fw.n; ++i) {
      const Vector dzi = pg.dz.col(i);
      const Vector wi = fw.weights.col(i);
      dvbar.middleCols(i * fw.kpad, fw.k).noalias() += dzi * wi.transpose();
      if (mode != WMode::Uniform) {
        const Matrix vbar = fw.vbar(static_cast<int>(i));
        const Vector dw = vbar.transpose() * dzi;
        const Matrix* sbar =
            (mode == WMode::Gmil) ? &batch.items[i]->bag.sbar : nullptr;
        attention_backward(vbar, sbar, m.gmil, fw.att[i], dw, grads.gmil,
                           dvbar.middleCols(i * fw.kpad, fw.k));
      }
    }
  }
  mlp_backward(m.proj.video, m.proj.hidden_activation, fw.video, dvbar,
               grads.proj.video, nullptr);
  mlp_backward(m.proj.image, m.proj.hidden_activation, fw.image, pg.dubar,
               grads.proj.image, nullptr);
}

struct TripletEval {
  double loss = 0.0;
  std::vector<int> hardest;       // per anchor
  std::vector<std::uint8_t> active;  // hinge strictly positive
};

TripletEval triplet_forward(const Batch& batch, const BatchForward& fw,
                            const LossConfig& cfg, const Selections* frozen) {
  const Eigen::Index n = fw.n;
  TripletEval ev;
  ev.hardest.assign(n, -1);
  ev.active.assign(n, 0);
  // Pairwise anchor-to-bag distances under the active metric.
  Matrix dist(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector u = fw.image.Y.col(i);
    for (Eigen::Index j = 0; j < n; ++j) {
      dist(i, j) = cfg.wo_ga ? (u - fw.z.col(j)).squaredNorm()
                             : subspace_distance(fw.sub[j], u);
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    int best = -1;
    if (frozen && !frozen->hardest.empty()) {
      best = frozen->hardest.at(i);
    } else {
      double best_d = std::numeric_limits<double>::infinity();
      int first_valid = -1;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (batch.items[j]->label == batch.items[i]->label) continue;
        if (first_valid < 0) first_valid = static_cast<int>(j);
        if (dist(i, j) < best_d) {
          best_d = dist(i, j);
          best = static_cast<int>(j);
        }
      }
      if (first_valid < 0) {
        throw NoNegativeAvailable("triplet_loss: anchor " + std::to_string(i) +
                                  " has no differently-labeled candidate");
      }
      if (best < 0) best = first_valid;  // all candidate distances were NaN
    }
    ev.hardest[i] = best;
    const double arg = dist(i, i) - dist(i, best) + cfg.margin;
    if (std::isnan(arg)) {
      ev.loss = std::numeric_limits<double>::quiet_NaN();
    } else if (arg > 0.0) {
      ev.active[i] = 1;
      ev.loss += arg;
    }
  }
  return ev;
}

void triplet_backward(const BatchForward& fw, const LossConfig& cfg,
                      const TripletEval& ev, double coef, PathGrads& pg) {
  const Eigen::Index n = fw.n;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!ev.active[i]) continue;
    const Vector u = fw.image.Y.col(i);
    const int j = ev.hardest[i];
    if (cfg.wo_ga) {
      const Vector rp = u - fw.z.col(i);
      const Vector rn = u - fw.z.col(j);
      pg.dubar.col(i) += coef * 2.0 * (rp - rn);
      pg.dz.col(i) -= coef * 2.0 * rp;
      pg.dz.col(j) += coef * 2.0 * rn;
      pg.z_used = true;
    } else {
      const DistanceGrad gp = subspace_distance_gradient(fw.sub[i], u);
      const DistanceGrad gn = subspace_distance_gradient(fw.sub[j], u);
      pg.dubar.col(i) += coef * (gp.du - gn.du);
      const auto scatter = [&](const TruncatedBag& bag, const Matrix& dV,
                               Eigen::Index item, double c) {
        for (size_t col = 0; col < bag.indices.size(); ++col) {
          pg.dvbar.col(item * fw.kpad + bag.indices[col]) +=
              c * dV.col(static_cast<Eigen::Index>(col));
        }
      };
      scatter(fw.trunc[i], gp.dV, i, coef);
      scatter(fw.trunc[j], gn.dV, j, -coef);
    }
  }
}

// Returns the unscaled loss; gradient contributions are scaled by coef.
double classification_contrib(const Batch& batch, const BatchForward& fw,
                              const ModelState& m, double coef,
                              ModelState* grads, PathGrads* pg) {
  const Eigen::Index n = fw.n;
  const double inv_n = 1.0 / static_cast<double>(n);
  ClassifierCache cz, cu;
  const Matrix pz = classifier_forward(m.cls, fw.z, grads ? &cz : nullptr);
  const Matrix pu = classifier_forward(m.cls, fw.image.Y, grads ? &cu : nullptr);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = batch.items[i]->label;
    loss -= std::log(std::max(pz(y, i), kProbEps));
    loss -= std::log(std::max(pu(y, i), kProbEps));
  }
  loss *= inv_n;
  if (grads) {
    const Eigen::Index C = pz.rows();
    Matrix dlz = Matrix::Zero(C, n), dlu = Matrix::Zero(C, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int y = batch.items[i]->label;
      if (pz(y, i) > kProbEps) {
        dlz.col(i) = coef * inv_n * pz.col(i);
        dlz(y, i) -= coef * inv_n;
      }
      if (pu(y, i) > kProbEps) {
        dlu.col(i) = coef * inv_n * pu.col(i);
        dlu(y, i) -= coef * inv_n;
      }
    }
    classifier_backward(m.cls, cz, dlz, grads->cls, &pg->dz);
    classifier_backward(m.cls, cu, dlu, grads->cls, &pg->dubar);
    pg->z_used = true;
  }
  return loss;
}

double adversarial_contrib(const Batch& batch, const BatchForward& fw,
                           const ModelState& m, double coef, ModelState* grads,
                           PathGrads* pg) {
  (void)batch;
  const Eigen::Index n = fw.n;
  const double inv_n = 1.0 / static_cast<double>(n);
  DiscriminatorCache dz_cache, du_cache;
  const Eigen::RowVectorXd delta_z =
      discriminator_forward(m.disc, fw.z, grads ? &dz_cache : nullptr);
  const Eigen::RowVectorXd delta_u =
      discriminator_forward(m.disc, fw.image.Y, grads ? &du_cache : nullptr);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    loss -= std::log(clamp_prob(delta_z(i)));
    loss -= std::log(1.0 - clamp_prob(delta_u(i)));
  }
  loss *= inv_n;
  if (grads) {
    Eigen::RowVectorXd doz = Eigen::RowVectorXd::Zero(n);
    Eigen::RowVectorXd dou = Eigen::RowVectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double dz = delta_z(i);
      if (dz > kProbEps && dz < 1.0 - kProbEps) {
        doz(i) = -coef * inv_n * (1.0 - dz);  // d/do of -log(sigmoid(o))
      }
      const double du = delta_u(i);
      if (du > kProbEps && du < 1.0 - kProbEps) {
        dou(i) = coef * inv_n * du;  // d/do of -log(1 - sigmoid(o))
      }
    }
    discriminator_backward(m.disc, dz_cache, doz, grads->disc, &pg->dz);
    discriminator_backward(m.disc, du_cache, dou, grads->disc, &pg->dubar);
    pg->z_used = true;
  }
  return loss;
}

void fill_selections(const BatchForward& fw, const TripletEval& ev,
                     Selections* out) {
  if (!out) return;
  out->truncation.clear();
  for (const TruncatedBag& bag : fw.trunc) out->truncation.push_back(bag.indices);
  out->hardest = ev.hardest;
}

}  // namespace

Batch make_batch(const PairedDataset& ds, const std::vector<int>& indices) {
  if (indices.size() < 2) throw DataError("make_batch: need at least 2 items");
  Batch batch;
  batch.C = ds.C;
  batch.k = ds.k;
  std::set<int> labels;
  for (int idx : indices) {
    if (idx < 0 || idx >= static_cast<int>(ds.items.size())) {
      throw DataError("make_batch: index " + std::to_string(idx) + " out of range");
    }
    const PairedItem& item = ds.items[idx];
    if (item.label < 0 || item.label >= ds.C) {
      throw LabelOutOfRange("make_batch: label out of range");
    }
    if (item.bag.features.rows() != ds.k || item.bag.sbar.rows() != ds.k) {
      throw DimMismatch("make_batch: bag size mismatch");
    }
    labels.insert(item.label);
    batch.items.push_back(&item);
  }
  if (labels.size() < 2) {
    throw InsufficientDiversity("make_batch: batch has a single label");
  }
  return batch;
}

LossReport make_report(double alpha, double beta, double triplet,
                       double classification, double adversarial) {
  LossReport r;
  r.triplet = triplet;
  r.classification = classification;
  r.adversarial = adversarial;
  r.total = alpha * triplet + beta * classification - adversarial;
  return r;
}

int hardest_negative(const Vector& anchor_embed,
                     const std::vector<TruncatedBag>& candidates,
                     const std::vector<int>& labels, int anchor_label,
                     double ridge) {
  if (candidates.size() != labels.size()) {
    throw DimMismatch("hardest_negative: candidate/label count mismatch");
  }
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (size_t j = 0; j < candidates.size(); ++j) {
    if (labels[j] == anchor_label) continue;
    const double d = point_to_subspace_distance(anchor_embed, candidates[j], ridge);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(j);
    }
  }
  if (best < 0) {
    throw NoNegativeAvailable("hardest_negative: no differently-labeled candidate");
  }
  return best;
}

double triplet_loss(const Batch& batch, const ModelState& model,
                    const LossConfig& cfg, ModelState* grads,
                    const Selections* frozen, Selections* selections_out) {
  BatchForward fw = forward_batch(batch, model, cfg, frozen, !cfg.wo_ga);
  const TripletEval ev = triplet_forward(batch, fw, cfg, frozen);
  fill_selections(fw, ev, selections_out);
  if (grads) {
    PathGrads pg(fw.r, fw.n, fw.kpad);
    triplet_backward(fw, cfg, ev, 1.0, pg);
    flush_backward(batch, fw, model, cfg, pg, *grads);
  }
  return ev.loss;
}

double classification_loss(const Batch& batch, const ModelState& model,
                           const LossConfig& cfg, ModelState* grads) {
  BatchForward fw = forward_batch(batch, model, cfg, nullptr, false);
  PathGrads pg(fw.r, fw.n, fw.kpad);
  const double loss =
      classification_contrib(batch, fw, model, 1.0, grads, grads ? &pg : nullptr);
  if (grads) flush_backward(batch, fw, model, cfg, pg, *grads);
  return loss;
}

double adversarial_loss(const Batch& batch, const ModelState& model,
                        const LossConfig& cfg, ModelState* grads) {
  BatchForward fw = forward_batch(batch, model, cfg, nullptr, false);
  PathGrads pg(fw.r, fw.n, fw.kpad);
  const double loss =
      adversarial_contrib(batch, fw, model, 1.0, grads, grads ? &pg : nullptr);
  if (grads) flush_backward(batch, fw, model, cfg, pg, *grads);
  return loss;
}

LossReport total_loss(const Batch& batch, const ModelState& model,
                      const LossConfig& cfg, ModelState* grads,
                      const Selections* frozen) {
  double t = 0.0, c = 0.0, a = 0.0;
  const auto accumulate = [&](double coef, const ModelState& g) {
    for (ParamGroup group : kAllGroups) axpy_group(*grads, group, coef, g);
  };
  if (!cfg.wo_tl) {
    if (grads) {
      ModelState g = zeros_like(model);
      t = triplet_loss(batch, model, cfg, &g, frozen);
      accumulate(cfg.alpha, g);
    } else {
      t = triplet_loss(batch, model, cfg, nullptr, frozen);
    }
  }
  if (!cfg.wo_cl) {
    if (grads) {
      ModelState g = zeros_like(model);
      c = classification_loss(batch, model, cfg, &g);
      accumulate(cfg.beta, g);
    } else {
      c = classification_loss(batch, model, cfg);
    }
  }
  if (!cfg.wo_al) {
    if (grads) {
      ModelState g = zeros_like(model);
      a = adversarial_loss(batch, model, cfg, &g);
      accumulate(-1.0, g);
    } else {
      a = adversarial_loss(batch, model, cfg);
    }
  }
  return make_report(cfg.alpha, cfg.beta, t, c, a);
}

LossReport total_loss_fused(const Batch& batch, const ModelState& model,
                            const LossConfig& cfg, ModelState* grads,
                            const Selections* frozen) {
  const bool need_geometry = !cfg.wo_tl && !cfg.wo_ga;
  BatchForward fw = forward_batch(batch, model, cfg, frozen, need_geometry);
  PathGrads pg(fw.r, fw.n, fw.kpad);
  double t = 0.0, c = 0.0, a = 0.0;
  if (!cfg.wo_tl) {
    const TripletEval ev = triplet_forward(batch, fw, cfg, frozen);
    t = ev.loss;
    if (grads) triplet_backward(fw, cfg, ev, cfg.alpha, pg);
  }
  if (!cfg.wo_cl) {
    c = classification_contrib(batch, fw, model, cfg.beta, grads,
                               grads ? &pg : nullptr);
  }
  if (!cfg.wo_al) {
    a = adversarial_contrib(batch, fw, model, -1.0, grads, grads ? &pg : nullptr);
  }
  if (grads) flush_backward(batch, fw, model, cfg, pg, *grads);
  return make_report(cfg.alpha, cfg.beta, t, c, a);
}

void embed_batch(const Batch& batch, const ModelState& model,
                 const LossConfig& cfg, Matrix* z, Matrix* ubar,
                 Matrix* weights) {
  BatchForward fw = forward_batch(batch, model, cfg, nullptr, false);
  if (z) *z = fw.z;
  if (ubar) *ubar = fw.image.Y;
  if (weights) *weights = fw.weights;
}

}  // namespace apivr
