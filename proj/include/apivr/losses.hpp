#ifndef APIVR_LOSSES_HPP_
#define APIVR_LOSSES_HPP_

#include <vector>

#include "apivr/data.hpp"
#include "apivr/geometry.hpp"
#include "apivr/model.hpp"

namespace apivr {

// A mini-batch of paired items. Invariants: n >= 2, labels < C, at least two
// distinct labels (triplet mining needs a negative), uniform bag size.
struct Batch {
  std::vector<const PairedItem*> items;
  int C = 0;
  int k = 0;
};

Batch make_batch(const PairedDataset& ds, const std::vector<int>& indices);

// Loss-side knobs plus the ablation switches:
//   wo_tl    drop the triplet term
//   wo_al    drop the adversarial term (and discriminator updates)
//   wo_cl    drop the classification term
//   wo_ga    replace the point-to-subspace distance with ||ubar - Z||^2
//   wo_graph score attention without graph smoothing
//   wo_gmil  uniform weights and intact bags
struct LossConfig {
  double alpha = 0.1;
  double beta = 10.0;
  double margin = 0.1;
  int b = 50;
  double ridge = 1e-6;
  bool wo_tl = false, wo_al = false, wo_cl = false;
  bool wo_ga = false, wo_gmil = false, wo_graph = false;
};

struct LossReport {
  double triplet = 0.0;
  double classification = 0.0;
  double adversarial = 0.0;
  double total = 0.0;
};

// total = alpha * triplet + beta * classification - adversarial.
LossReport make_report(double alpha, double beta, double triplet,
                       double classification, double adversarial);

// Discrete choices made while evaluating the triplet term. They are treated
// as constants of the step: gradients do not flow through the top-b column
// selection or the hardest-negative choice. Freezing them keeps the loss
// differentiable for finite-difference probes.
struct Selections {
  std::vector<std::vector<int>> truncation;  // per item, ascending indices
  std::vector<int> hardest;                  // per anchor
};

// The differently-labeled candidate closest to the anchor in the
// point-to-subspace sense; ties keep the lowest index.
// Throws NoNegativeAvailable when every candidate shares the anchor label.
int hardest_negative(const Vector& anchor_embed,
                     const std::vector<TruncatedBag>& candidates,
                     const std::vector<int>& labels, int anchor_label,
                     double ridge);

// Each loss optionally accumulates analytic gradients for every parameter
// group it touches into *grads (which must be zeros_like(model)-shaped).
double triplet_loss(const Batch& batch, const ModelState& model,
                    const LossConfig& cfg, ModelState* grads = nullptr,
                    const Selections* frozen = nullptr,
                    Selections* selections_out = nullptr);
double classification_loss(const Batch& batch, const ModelState& model,
                           const LossConfig& cfg, ModelState* grads = nullptr);
double adversarial_loss(const Batch& batch, const ModelState& model,
                        const LossConfig& cfg, ModelState* grads = nullptr);

// Component-wise evaluation: gradients are the exact linear combination
// alpha * g_triplet + beta * g_class - g_adv of separately computed
// component gradients.
LossReport total_loss(const Batch& batch, const ModelState& model,
                      const LossConfig& cfg, ModelState* grads = nullptr,
                      const Selections* frozen = nullptr);

// Single-backward evaluation used by the trainer; loss values are identical
// to total_loss, gradients agree up to rounding.
LossReport total_loss_fused(const Batch& batch, const ModelState& model,
                            const LossConfig& cfg, ModelState* grads = nullptr,
                            const Selections* frozen = nullptr);

// Forward-only embedding of a batch (no gradient caches): projected images,
// bag features Z, and the attention weights (k x n).
void embed_batch(const Batch& batch, const ModelState& model,
                 const LossConfig& cfg, Matrix* z, Matrix* ubar,
                 Matrix* weights);

}  // namespace apivr

#endif  // APIVR_LOSSES_HPP_
