#include "apivr/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>

namespace apivr {

namespace {

std::string fmt_double(double v) {
  if (std::isnan(v)) return "na";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

bool report_finite(const LossReport& r) {
  return std::isfinite(r.triplet) && std::isfinite(r.classification) &&
         std::isfinite(r.adversarial) && std::isfinite(r.total);
}

}  // namespace

void apply_loss_preset(TrainConfig& cfg) {
  if (cfg.loss_preset == "main") {
    cfg.alpha = 0.1;
    cfg.beta = 10.0;
  } else if (cfg.loss_preset == "supplementary") {
    cfg.alpha = 10.0;
    cfg.beta = 0.01;
  } else if (cfg.loss_preset != "custom") {
    throw ConfigError("unknown loss preset \"" + cfg.loss_preset + "\"");
  }
}

LossConfig loss_config(const TrainConfig& cfg) {
  LossConfig lc;
  lc.alpha = cfg.alpha;
  lc.beta = cfg.beta;
  lc.margin = cfg.margin;
  lc.b = cfg.b;
  lc.ridge = cfg.ridge;
  lc.wo_tl = cfg.wo_tl;
  lc.wo_al = cfg.wo_al;
  lc.wo_cl = cfg.wo_cl;
  lc.wo_ga = cfg.wo_ga;
  lc.wo_gmil = cfg.wo_gmil;
  lc.wo_graph = cfg.wo_graph;
  return lc;
}

void validate_config(const TrainConfig& cfg) {
  if (cfg.k < 1) throw ConfigError("config: k must be >= 1");
  if (cfg.b < 1 || cfg.b > cfg.k) throw ConfigError("config: need 1 <= b <= k");
  if (cfg.r < 1 || cfg.r_prime < 1) throw ConfigError("config: r and r_prime must be >= 1");
  if (cfg.batch_size < 2) throw ConfigError("config: batch_size must be >= 2");
  if (cfg.generator_steps < 1) throw ConfigError("config: generator_steps must be >= 1");
  if (cfg.outer_iterations < 0) throw ConfigError("config: outer_iterations must be >= 0");
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("config: learning_rate must be > 0");
  if (cfg.ridge < 0.0) throw ConfigError("config: ridge must be >= 0");
  if (cfg.margin < 0.0) throw ConfigError("config: margin must be >= 0");
  if (cfg.early_stop && cfg.early_stop_patience < 1) {
    throw ConfigError("config: early_stop_patience must be >= 1");
  }
  if (cfg.loss_preset != "main" && cfg.loss_preset != "supplementary" &&
      cfg.loss_preset != "custom") {
    throw ConfigError("config: unknown loss preset \"" + cfg.loss_preset + "\"");
  }
}

std::string format_train_log(const TrainLog& log) {
  std::string out =
      "# iter triplet classification adversarial total disc_accuracy "
      "clean_weight noisy_weight\n";
  for (const IterationRecord& rec : log.records) {
    out += std::to_string(rec.iter);
    out += ' ';
    out += fmt_double(rec.loss.triplet);
    out += ' ';
    out += fmt_double(rec.loss.classification);
    out += ' ';
    out += fmt_double(rec.loss.adversarial);
    out += ' ';
    out += fmt_double(rec.loss.total);
    out += ' ';
    out += fmt_double(rec.disc_accuracy);
    out += ' ';
    out += rec.has_weight_stats ? fmt_double(rec.clean_weight_mean) : "na";
    out += ' ';
    out += rec.has_weight_stats ? fmt_double(rec.noisy_weight_mean) : "na";
    out += '\n';
  }
  return out;
}

void write_train_log(const TrainLog& log, const std::string& path,
                     const std::string& footer) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("train log: cannot write " + path);
  out << format_train_log(log);
  if (!footer.empty()) out << footer;
  out.close();
  if (!out) throw FormatError("train log: write failed for " + path);
}

BatchSampler::BatchSampler(const PairedDataset& ds, int batch_size,
                           std::uint64_t seed)
    : ds_(&ds), n_(batch_size), rng_(seed) {
  pool_ = ds.train_indices();
  if (n_ < 2) throw ConfigError("sampler: batch size must be >= 2");
  if (static_cast<int>(pool_.size()) < n_) {
    throw DataError("sampler: batch size " + std::to_string(n_) +
                    " exceeds training pool of " + std::to_string(pool_.size()));
  }
  std::set<int> labels;
  for (int i : pool_) labels.insert(ds.items[i].label);
  if (labels.size() < 2) {
    throw InsufficientDiversity("sampler: training pool has a single label");
  }
  std::shuffle(pool_.begin(), pool_.end(), rng_);
}

std::vector<int> BatchSampler::next() {
  constexpr int kMaxRetries = 100;
  for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
    if (pos_ + static_cast<std::size_t>(n_) > pool_.size()) {
      std::shuffle(pool_.begin(), pool_.end(), rng_);
      pos_ = 0;
    }
    const int first = ds_->items[pool_[pos_]].label;
    bool diverse = false;
    for (int j = 1; j < n_; ++j) {
      if (ds_->items[pool_[pos_ + j]].label != first) {
        diverse = true;
        break;
      }
    }
    if (diverse) {
      std::vector<int> batch(pool_.begin() + pos_, pool_.begin() + pos_ + n_);
      pos_ += n_;
      return batch;
    }
    // Re-deal. If the unconsumed tail is single-label a local reshuffle
    // cannot help, so reshuffle the whole pool.
    std::set<int> tail_labels;
    for (std::size_t j = pos_; j < pool_.size(); ++j) {
      tail_labels.insert(ds_->items[pool_[j]].label);
    }
    if (tail_labels.size() < 2) {
      std::shuffle(pool_.begin(), pool_.end(), rng_);
      pos_ = 0;
    } else {
      std::shuffle(pool_.begin() + pos_, pool_.end(), rng_);
    }
  }
  throw InsufficientDiversity("sampler: failed to draw a two-label batch after " +
                              std::to_string(kMaxRetries) + " retries");
}

LossReport generator_step(ModelState& model, const Batch& batch,
                          const TrainConfig& cfg) {
  const LossConfig lc = loss_config(cfg);
  ModelState grads = zeros_like(model);
  const LossReport rep = total_loss_fused(batch, model, lc, &grads);
  if (!report_finite(rep)) {
    throw NonFiniteLoss("generator_step: non-finite loss (triplet=" +
                        fmt_double(rep.triplet) + ", classification=" +
                        fmt_double(rep.classification) + ", adversarial=" +
                        fmt_double(rep.adversarial) + ")");
  }
  axpy_group(model, ParamGroup::Projection, -cfg.learning_rate, grads);
  axpy_group(model, ParamGroup::Gmil, -cfg.learning_rate, grads);
  axpy_group(model, ParamGroup::Classifier, -cfg.learning_rate, grads);
  return rep;
}

void discriminator_step(ModelState& model, const Batch& batch,
                        const TrainConfig& cfg) {
  if (cfg.wo_al) return;
  const LossConfig lc = loss_config(cfg);
  ModelState grads = zeros_like(model);
  const double adv = adversarial_loss(batch, model, lc, &grads);
  if (!std::isfinite(adv)) {
    throw NonFiniteLoss("discriminator_step: non-finite adversarial loss");
  }
  // Ascending the total objective in theta_d is descending the adversarial
  // term; the other terms have exactly zero theta_d gradient.
  axpy_group(model, ParamGroup::Discriminator, -cfg.learning_rate, grads);
}

double discriminator_accuracy(const Batch& batch, const ModelState& model,
                              const TrainConfig& cfg) {
  Matrix z, ubar;
  embed_batch(batch, model, loss_config(cfg), &z, &ubar, nullptr);
  const Eigen::RowVectorXd dz = discriminator_forward(model.disc, z, nullptr);
  const Eigen::RowVectorXd du = discriminator_forward(model.disc, ubar, nullptr);
  int correct = 0;
  for (Eigen::Index i = 0; i < dz.size(); ++i) {
    if (dz(i) >= 0.5) ++correct;
    if (du(i) < 0.5) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(2 * dz.size());
}

namespace {

void add_weight_stats(const Batch& batch, const ModelState& model,
                      const LossConfig& lc, IterationRecord& rec) {
  for (const PairedItem* item : batch.items) {
    if (item->bag.clean_flags.empty()) return;
  }
  Matrix weights;
  embed_batch(batch, model, lc, nullptr, nullptr, &weights);
  double clean_sum = 0.0, noisy_sum = 0.0;
  long clean_n = 0, noisy_n = 0;
  for (Eigen::Index i = 0; i < weights.cols(); ++i) {
    const auto& flags = batch.items[i]->bag.clean_flags;
    for (Eigen::Index j = 0; j < weights.rows(); ++j) {
      if (flags[j]) {
        clean_sum += weights(j, i);
        ++clean_n;
      } else {
        noisy_sum += weights(j, i);
        ++noisy_n;
      }
    }
  }
  if (clean_n == 0 || noisy_n == 0) return;
  rec.has_weight_stats = true;
  rec.clean_weight_mean = clean_sum / static_cast<double>(clean_n);
  rec.noisy_weight_mean = noisy_sum / static_cast<double>(noisy_n);
}

}  // namespace

ModelState train(const PairedDataset& ds, const TrainConfig& cfg, TrainLog& log) {
  validate_config(cfg);
  if (ds.C < 2) throw DataError("train: dataset needs >= 2 categories");
  if (cfg.k != ds.k) {
    throw ConfigError("train: config k=" + std::to_string(cfg.k) +
                      " does not match dataset k=" + std::to_string(ds.k));
  }
  const std::vector<int> train_idx = ds.train_indices();
  if (static_cast<int>(train_idx.size()) < 2) {
    throw DataError("train: need at least 2 training pairs");
  }
  const int n = std::min(cfg.batch_size, static_cast<int>(train_idx.size()));
  const LossConfig lc = loss_config(cfg);

  const ModelDims dims{ds.d1, ds.d2, cfg.r, cfg.r_prime, ds.C};
  ModelState model = init_params(dims, cfg.hidden_activation, cfg.seed);
  BatchSampler sampler(ds, n, cfg.seed + 1);

  double prev_total = std::numeric_limits<double>::quiet_NaN();
  int plateau = 0;
  for (int iter = 1; iter <= cfg.outer_iterations; ++iter) {
    const auto t0 = std::chrono::steady_clock::now();
    LossReport rep;
    std::vector<int> last_idx;
    for (int step = 0; step < cfg.generator_steps; ++step) {
      last_idx = sampler.next();
      const Batch batch = make_batch(ds, last_idx);
      try {
        rep = generator_step(model, batch, cfg);
      } catch (const NonFiniteLoss& e) {
        throw NonFiniteLoss(std::string(e.what()) + " at outer iteration " +
                            std::to_string(iter) + ", generator step " +
                            std::to_string(step + 1));
      }
    }
    IterationRecord rec;
    rec.iter = iter;
    rec.loss = rep;
    if (!cfg.wo_al) {
      const std::vector<int> didx =
          cfg.reuse_generator_batch ? last_idx : sampler.next();
      const Batch dbatch = make_batch(ds, didx);
      discriminator_step(model, dbatch, cfg);
      rec.disc_accuracy = discriminator_accuracy(dbatch, model, cfg);
    }
    add_weight_stats(make_batch(ds, last_idx), model, lc, rec);
    rec.wall_seconds =
        std::chrono::duration_cast<std::chrono::duration<double>>(
            std::chrono::steady_clock::now() - t0)
            .count();
    log.records.push_back(rec);
    if (!params_all_finite(model)) {
      throw NonFiniteLoss("train: non-finite parameters after outer iteration " +
                          std::to_string(iter));
    }
    if (cfg.early_stop) {
      if (std::isfinite(prev_total) &&
          std::abs(rep.total - prev_total) < cfg.early_stop_tol) {
        if (++plateau >= cfg.early_stop_patience) break;
      } else {
        plateau = 0;
      }
      prev_total = rep.total;
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Gradient audit
// ---------------------------------------------------------------------------

namespace {

std::vector<Eigen::Index> subsample_coords(Eigen::Index size, int budget) {
  std::vector<Eigen::Index> coords;
  if (size <= budget) {
    coords.resize(size);
    for (Eigen::Index i = 0; i < size; ++i) coords[i] = i;
  } else {
    coords.resize(budget);
    for (int i = 0; i < budget; ++i) {
      coords[i] = (static_cast<Eigen::Index>(i) * size) / budget;
    }
  }
  return coords;
}

}  // namespace

std::vector<GradCheckEntry> grad_check_all(const ModelState& model,
                                           const Batch& batch,
                                           const TrainConfig& cfg,
                                           const GradCheckOptions& opts) {
  const LossConfig lc = loss_config(cfg);
  Selections sel;
  triplet_loss(batch, model, lc, nullptr, nullptr, &sel);

  struct LossSpec {
    std::string name;
    std::function<double(const ModelState&)> eval;
    std::function<void(const ModelState&, ModelState&)> grad;
    std::array<bool, 4> active;  // projection, gmil, classifier, discriminator
  };
  const bool gmil_learns = !lc.wo_gmil;
  std::vector<LossSpec> specs;
  specs.push_back(
      {"triplet",
       [&](const ModelState& m) { return triplet_loss(batch, m, lc, nullptr, &sel); },
       [&](const ModelState& m, ModelState& g) {
         triplet_loss(batch, m, lc, &g, &sel);
       },
       {true, lc.wo_ga && gmil_learns, false, false}});
  specs.push_back(
      {"classification",
       [&](const ModelState& m) { return classification_loss(batch, m, lc); },
       [&](const ModelState& m, ModelState& g) { classification_loss(batch, m, lc, &g); },
       {true, gmil_learns, true, false}});
  specs.push_back(
      {"adversarial",
       [&](const ModelState& m) { return adversarial_loss(batch, m, lc); },
       [&](const ModelState& m, ModelState& g) { adversarial_loss(batch, m, lc, &g); },
       {true, gmil_learns, false, true}});
  const bool any_term = !(lc.wo_tl && lc.wo_cl && lc.wo_al);
  specs.push_back(
      {"total",
       [&](const ModelState& m) { return total_loss(batch, m, lc, nullptr, &sel).total; },
       [&](const ModelState& m, ModelState& g) { total_loss(batch, m, lc, &g, &sel); },
       {any_term,
        gmil_learns && ((!lc.wo_cl || !lc.wo_al) || (!lc.wo_tl && lc.wo_ga)),
        !lc.wo_cl, !lc.wo_al}});

  std::vector<GradCheckEntry> entries;
  for (const LossSpec& spec : specs) {
    ModelState analytic = zeros_like(model);
    spec.grad(model, analytic);
    if (opts.corrupt && spec.name == "classification") {
      const ModelState copy = analytic;
      axpy_group(analytic, ParamGroup::Classifier, 1.0, copy);  // x2
    }
    for (size_t gi = 0; gi < kAllGroups.size(); ++gi) {
      const ParamGroup group = kAllGroups[gi];
      GradCheckEntry entry;
      entry.loss = spec.name;
      entry.group = group_name(group);
      entry.structural_zero = !spec.active[gi];

      const Vector base_flat = flatten_group(model, group);
      const Vector grad_flat = flatten_group(analytic, group);
      const int budget = entry.structural_zero
                             ? std::min<int>(8, static_cast<int>(base_flat.size()))
                             : opts.max_coords_per_group;
      const std::vector<Eigen::Index> coords =
          subsample_coords(base_flat.size(), budget);
      Vector x0(coords.size()), g0(coords.size());
      for (size_t i = 0; i < coords.size(); ++i) {
        x0(static_cast<Eigen::Index>(i)) = base_flat(coords[i]);
        g0(static_cast<Eigen::Index>(i)) = grad_flat(coords[i]);
      }
      const auto f = [&](const Vector& xs) {
        Vector flat = base_flat;
        for (size_t i = 0; i < coords.size(); ++i) {
          flat(coords[i]) = xs(static_cast<Eigen::Index>(i));
        }
        ModelState probe = model;
        assign_group(probe, group, flat);
        return spec.eval(probe);
      };
      entry.max_rel_err = finite_difference_check(f, x0, g0, opts.h);
      entry.coords_checked = static_cast<Eigen::Index>(coords.size());
      const bool grad_is_zero = grad_flat.lpNorm<Eigen::Infinity>() == 0.0;
      entry.passed = entry.structural_zero
                         ? (grad_is_zero && entry.max_rel_err <= opts.tolerance)
                         : entry.max_rel_err <= opts.tolerance;
      entries.push_back(std::move(entry));
    }
  }
  return entries;
}

}  // namespace apivr
