#ifndef APIVR_TRAINING_HPP_
#define APIVR_TRAINING_HPP_

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "apivr/losses.hpp"

namespace apivr {

// All hyperparameters of one run. k must match the dataset's bag size.
// The loss preset picks the (alpha, beta) trade-off pair: "main" is
// (0.1, 10), "supplementary" is (10, 0.01); explicitly set values win.
struct TrainConfig {
  double alpha = 0.1;
  double beta = 10.0;
  double margin = 0.1;
  int k = 60;
  int b = 50;
  int r = 64;
  int r_prime = 32;
  int batch_size = 64;
  int generator_steps = 50;
  int outer_iterations = 200;
  double learning_rate = 1e-4;
  double ridge = 1e-6;
  std::uint64_t seed = 0;
  Activation hidden_activation = Activation::Tanh;
  bool wo_tl = false, wo_al = false, wo_cl = false;
  bool wo_ga = false, wo_gmil = false, wo_graph = false;
  std::string loss_preset = "main";
  bool reuse_generator_batch = false;  // discriminator sees a fresh batch by default
  bool early_stop = false;             // optional total-loss plateau stop
  double early_stop_tol = 1e-6;
  int early_stop_patience = 10;
};

// Overwrites alpha/beta from the preset name; "custom" leaves them alone.
void apply_loss_preset(TrainConfig& cfg);
LossConfig loss_config(const TrainConfig& cfg);
void validate_config(const TrainConfig& cfg);

struct IterationRecord {
  int iter = 0;
  LossReport loss;         // from the last generator step of the iteration
  double disc_accuracy = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;  // kept in memory only, never serialized
  bool has_weight_stats = false;
  double clean_weight_mean = 0.0;  // mean attention weight on flagged-clean
  double noisy_weight_mean = 0.0;  // and flagged-noisy proposals
};

struct TrainLog {
  std::vector<IterationRecord> records;
};

// One line per outer iteration, fields in a fixed order, floats printed with
// 17 significant digits so reruns are byte-identical. Wall-clock time is
// deliberately not part of the serialized record.
std::string format_train_log(const TrainLog& log);
void write_train_log(const TrainLog& log, const std::string& path,
                     const std::string& footer = "");

// Epoch-style sampling without replacement: a shuffled pool of train indices
// consumed n at a time, reshuffled when fewer than n remain. Batches are
// re-drawn (bounded retries) until they contain two distinct labels.
class BatchSampler {
 public:
  BatchSampler(const PairedDataset& ds, int batch_size, std::uint64_t seed);
  std::vector<int> next();
  int batch_size() const { return n_; }

 private:
  const PairedDataset* ds_;
  std::vector<int> pool_;
  std::size_t pos_ = 0;
  int n_ = 0;
  std::mt19937_64 rng_;
};

// One descent step on theta_g = {projection, attention, classifier} with the
// total objective; theta_d is untouched. Throws NonFiniteLoss if the loss or
// an update stops being finite.
LossReport generator_step(ModelState& model, const Batch& batch,
                          const TrainConfig& cfg);

// One ascent step on theta_d of the minimax objective, which only the
// adversarial term touches, so this descends that term; theta_g is untouched.
// No-op when the adversarial loss is ablated.
void discriminator_step(ModelState& model, const Batch& batch,
                        const TrainConfig& cfg);

// Fraction of modality calls the discriminator gets right on a batch
// (videos scored >= 0.5, images < 0.5).
double discriminator_accuracy(const Batch& batch, const ModelState& model,
                              const TrainConfig& cfg);

// Alternating minimax: per outer iteration, `generator_steps` generator
// updates followed by one discriminator update, for a fixed budget of outer
// iterations. Deterministic for a fixed (dataset, config). The log is filled
// in place, so partial records survive an aborting exception.
ModelState train(const PairedDataset& ds, const TrainConfig& cfg, TrainLog& log);

struct GradCheckEntry {
  std::string loss;
  std::string group;
  bool structural_zero = false;  // group provably outside this loss's graph
  double max_rel_err = 0.0;
  Eigen::Index coords_checked = 0;
  bool passed = false;
};

struct GradCheckOptions {
  int max_coords_per_group = 250;  // deterministic strided subsample beyond this
  double tolerance = 1e-5;
  double h = 1e-5;
  bool corrupt = false;  // test fixture: scale one analytic gradient by 2
};

// Finite-difference audit of every (loss x parameter group) pair, with
// triplet selections frozen so the probed function is differentiable.
// Structurally-zero pairs are verified to have exactly-zero gradients.
std::vector<GradCheckEntry> grad_check_all(const ModelState& model,
                                           const Batch& batch,
                                           const TrainConfig& cfg,
                                           const GradCheckOptions& opts = {});

}  // namespace apivr

#endif  // APIVR_TRAINING_HPP_
