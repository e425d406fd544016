#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "apivr/losses.hpp"
#include "apivr/retrieval.hpp"
#include "test_util.hpp"

using namespace apivr;
using apivr_test::random_matrix;
using apivr_test::random_vector;
using apivr_test::tiny_dataset;

namespace {

const ModelDims kDims{5, 4, 6, 4, 3};  // d1, d2, r, r', C

LossConfig small_loss_config() {
  LossConfig cfg;
  cfg.b = 2;
  cfg.ridge = 1e-6;
  return cfg;
}

struct Fixture {
  PairedDataset ds;
  ModelState model;
  Batch batch;

  explicit Fixture(std::uint64_t seed, int n = 5) {
    std::mt19937_64 rng(seed);
    ds = tiny_dataset(n, kDims.C, 4, kDims.d1, kDims.d2, rng);
    model = init_params(kDims, Activation::Tanh, seed);
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    batch = make_batch(ds, idx);
  }
};

// Axis-aligned two-class dataset paired with an identity-slice projection:
// class-c bags and images live on coordinate axis c, so their embeddings in
// r=2 space are known exactly.
struct AxisWorld {
  PairedDataset ds;
  ModelState model;

  AxisWorld() {
    ds.C = 2;
    ds.d1 = 4;
    ds.d2 = 4;
    ds.k = 2;
    for (int rep = 0; rep < 2; ++rep) {
      for (int c = 0; c < 2; ++c) {
        PairedItem item;
        item.label = c;
        item.bag.features = Matrix::Zero(2, 4);
        item.bag.features(0, c) = 1.0;
        item.bag.features(1, c) = 0.9 - 0.1 * rep;
        item.bag.sbar = bag_adjacency(item.bag.features);
        item.image = Vector::Zero(4);
        item.image(c) = 1.0 - 0.05 * rep;
        ds.items.push_back(std::move(item));
      }
    }
    model = init_params({4, 4, 2, 3, 2}, Activation::Linear, 3);
    auto make_ident = [](AffineLayer& l) {
      l.W.setZero();
      for (int i = 0; i < std::min(l.W.rows(), l.W.cols()); ++i) l.W(i, i) = 1.0;
      l.b.setZero();
    };
    for (auto& l : model.proj.video) make_ident(l);
    for (auto& l : model.proj.image) make_ident(l);
  }
};

// Least-squares distance oracle, no ridge.
double lsq_distance(const Vector& u, const Matrix& v) {
  const Vector c = v.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(u);
  return (u - v * c).squaredNorm();
}

// Hand evaluation of the geometry triplet term via module-level forward ops
// and the least-squares oracle.
double oracle_triplet(const Fixture& f, const LossConfig& cfg) {
  const int n = static_cast<int>(f.batch.items.size());
  std::vector<Matrix> vprime(n);
  std::vector<Vector> ubar(n);
  for (int i = 0; i < n; ++i) {
    const PairedItem& item = *f.batch.items[i];
    const Matrix vbar = project_video(item.bag.features, f.model.proj);
    Vector w;
    if (cfg.wo_gmil) {
      w = Vector::Constant(vbar.cols(), 1.0 / static_cast<double>(vbar.cols()));
    } else if (cfg.wo_graph) {
      w = mil_weights(vbar, f.model.gmil);
    } else {
      w = gmil_weights(vbar, item.bag.sbar, f.model.gmil);
    }
    const int b = cfg.wo_gmil ? static_cast<int>(vbar.cols()) : cfg.b;
    std::vector<int> order(vbar.cols());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int c) {
      if (w(a) != w(c)) return w(a) > w(c);
      return a < c;
    });
    order.resize(b);
    std::sort(order.begin(), order.end());
    vprime[i].resize(vbar.rows(), b);
    for (int j = 0; j < b; ++j) vprime[i].col(j) = vbar.col(order[j]);
    ubar[i] = project_image(item.image, f.model.proj);
  }
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (f.batch.items[j]->label == f.batch.items[i]->label) continue;
      best = std::min(best, lsq_distance(ubar[i], vprime[j]));
    }
    const double arg = lsq_distance(ubar[i], vprime[i]) - best + cfg.margin;
    if (arg > 0.0) loss += arg;
  }
  return loss;
}

}  // namespace

TEST_CASE("make_batch enforces size and label diversity") {
  std::mt19937_64 rng(1);
  PairedDataset ds = tiny_dataset(6, 3, 4, kDims.d1, kDims.d2, rng);
  CHECK_THROWS_AS(make_batch(ds, {0}), DataError);
  CHECK_THROWS_AS(make_batch(ds, {0, 3}), InsufficientDiversity);  // same label
  CHECK(make_batch(ds, {0, 1, 2}).items.size() == 3);
}

TEST_CASE("hardest_negative basic cases and brute-force agreement") {
  std::mt19937_64 rng(2);
  const int r = 6;
  Vector anchor = random_vector(r, rng);

  // Single valid negative.
  std::vector<TruncatedBag> bags;
  bags.push_back({random_matrix(r, 2, rng), {0, 1}});
  bags.push_back({random_matrix(r, 2, rng), {0, 1}});
  CHECK(hardest_negative(anchor, bags, {0, 1}, 0, 1e-10) == 1);

  // A negative containing the anchor in its span wins with distance zero.
  Matrix span(r, 2);
  span.col(0) = anchor;
  span.col(1) = random_vector(r, rng);
  bags.push_back({span, {0, 1}});
  CHECK(hardest_negative(anchor, bags, {0, 1, 1}, 0, 1e-10) == 2);

  // All candidates share the anchor label.
  CHECK_THROWS_AS(hardest_negative(anchor, bags, {0, 0, 0}, 0, 1e-10),
                  NoNegativeAvailable);

  // Brute force over a larger pool.
  std::vector<TruncatedBag> pool;
  std::vector<int> labels;
  for (int j = 0; j < 6; ++j) {
    pool.push_back({random_matrix(r, 3, rng), {0, 1, 2}});
    labels.push_back(j % 3);
  }
  const int got = hardest_negative(anchor, pool, labels, 1, 1e-10);
  int expect = -1;
  double best = std::numeric_limits<double>::infinity();
  for (int j = 0; j < 6; ++j) {
    if (labels[j] == 1) continue;
    const double d = point_to_subspace_distance(anchor, pool[j], 1e-10);
    if (d < best) {
      best = d;
      expect = j;
    }
  }
  CHECK(got == expect);
}

TEST_CASE("triplet loss vanishes when anchors sit in their positive span") {
  // Linear identity projection; class-0 data lives on e1, class-1 on e2.
  PairedDataset ds;
  ds.C = 2;
  ds.d1 = 4;
  ds.d2 = 4;
  ds.k = 2;
  for (int c = 0; c < 2; ++c) {
    PairedItem item;
    item.label = c;
    item.bag.features = Matrix::Zero(2, 4);
    item.bag.features(0, c) = 1.0;
    item.bag.features(1, c) = 0.9;
    item.bag.sbar = bag_adjacency(item.bag.features);
    item.image = Vector::Zero(4);
    item.image(c) = 1.0;
    ds.items.push_back(std::move(item));
  }
  ModelState m = init_params({4, 4, 2, 3, 2}, Activation::Linear, 3);
  // Identity-slice layers.
  auto make_ident = [](AffineLayer& l) {
    l.W.setZero();
    for (int i = 0; i < std::min(l.W.rows(), l.W.cols()); ++i) l.W(i, i) = 1.0;
    l.b.setZero();
  };
  for (auto& l : m.proj.video) make_ident(l);
  for (auto& l : m.proj.image) make_ident(l);

  LossConfig cfg = small_loss_config();
  cfg.b = 1;
  cfg.ridge = 1e-10;
  const Batch batch = make_batch(ds, {0, 1});
  CHECK(triplet_loss(batch, m, cfg) == 0.0);
}

TEST_CASE("identical positive and negative bags contribute exactly the margin") {
  std::mt19937_64 rng(4);
  PairedDataset ds;
  ds.C = 2;
  ds.d1 = kDims.d1;
  ds.d2 = kDims.d2;
  ds.k = 3;
  const Matrix shared = random_matrix(3, kDims.d1, rng);
  for (int c = 0; c < 2; ++c) {
    PairedItem item;
    item.label = c;
    item.bag.features = shared;
    item.bag.sbar = bag_adjacency(shared);
    item.image = random_vector(kDims.d2, rng);
    ds.items.push_back(std::move(item));
  }
  ModelState m = init_params(kDims, Activation::Tanh, 4);
  LossConfig cfg = small_loss_config();
  cfg.margin = 0.1;
  const Batch batch = make_batch(ds, {0, 1});
  CHECK(std::abs(triplet_loss(batch, m, cfg) - 2 * cfg.margin) <= 1e-9);
  cfg.margin = 0.0;
  CHECK(triplet_loss(batch, m, cfg) == 0.0);
}

TEST_CASE("triplet loss matches the least-squares hand evaluation") {
  Fixture f(5, 4);
  LossConfig cfg = small_loss_config();
  cfg.ridge = 1e-10;
  const double expect = oracle_triplet(f, cfg);
  CHECK(triplet_loss(f.batch, f.model, cfg) == doctest::Approx(expect).epsilon(1e-7));
}

TEST_CASE("classification loss analytic values") {
  Fixture f(6);
  LossConfig cfg = small_loss_config();

  ModelState zero = zeros_like(f.model);
  zero.proj = f.model.proj;  // only the classifier matters here
  zero.gmil = f.model.gmil;
  CHECK(std::abs(classification_loss(f.batch, zero, cfg) - 2.0 * std::log(3.0)) <=
        1e-9);

  // A classifier that nails every label drives the loss to ~0. With the
  // axis-aligned world, class-c embeddings sit on axis c, so a diagonal
  // weight matrix with a large scale saturates the true-class probability.
  AxisWorld world;
  world.model.cls.W = Matrix::Zero(2, 2);
  world.model.cls.W(0, 0) = 200.0;
  world.model.cls.W(1, 1) = 200.0;
  world.model.cls.b.setZero();
  const Batch axis_batch = make_batch(world.ds, {0, 1, 2, 3});
  CHECK(classification_loss(axis_batch, world.model, cfg) <= 1e-6);
}

TEST_CASE("classification loss matches a per-item oracle") {
  Fixture f(9);
  LossConfig cfg = small_loss_config();
  double expect = 0.0;
  for (const PairedItem* item : f.batch.items) {
    const Matrix vbar = project_video(item->bag.features, f.model.proj);
    const Vector w = gmil_weights(vbar, item->bag.sbar, f.model.gmil);
    const Vector z = aggregate(vbar, w);
    const Vector ubar = project_image(item->image, f.model.proj);
    expect -= std::log(classify(z, f.model.cls)(item->label));
    expect -= std::log(classify(ubar, f.model.cls)(item->label));
  }
  expect /= static_cast<double>(f.batch.items.size());
  CHECK(classification_loss(f.batch, f.model, cfg) ==
        doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("adversarial loss analytic values and oracle") {
  Fixture f(10);
  LossConfig cfg = small_loss_config();

  ModelState zero_disc = f.model;
  zero_disc.disc.hidden.W.setZero();
  zero_disc.disc.hidden.b.setZero();
  zero_disc.disc.out.W.setZero();
  zero_disc.disc.out.b.setZero();
  CHECK(std::abs(adversarial_loss(f.batch, zero_disc, cfg) - 2.0 * std::log(2.0)) <=
        1e-9);

  double expect = 0.0;
  for (const PairedItem* item : f.batch.items) {
    const Matrix vbar = project_video(item->bag.features, f.model.proj);
    const Vector z = aggregate(vbar, gmil_weights(vbar, item->bag.sbar, f.model.gmil));
    const Vector ubar = project_image(item->image, f.model.proj);
    expect -= std::log(discriminate(z, f.model.disc));
    expect -= std::log(1.0 - discriminate(ubar, f.model.disc));
  }
  expect /= static_cast<double>(f.batch.items.size());
  CHECK(adversarial_loss(f.batch, f.model, cfg) ==
        doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("a perfectly discriminating model drives the adversarial loss to zero") {
  // Axis world, but shift the images onto a dedicated axis so videos and
  // images are linearly separated in embedding space.
  AxisWorld world;
  for (PairedItem& item : world.ds.items) {
    item.image.setZero();
    item.image(1) = -1.0;  // embeds to (0, -1); videos embed to (+a, 0) or (0, +a)
  }
  ModelState m = world.model;
  m.disc.hidden.W.setZero();
  m.disc.hidden.W(0, 0) = 30.0;
  m.disc.hidden.W(0, 1) = 30.0;  // h0 = tanh(30 (x0 + x1))
  m.disc.hidden.b.setZero();
  m.disc.out.W.setZero();
  m.disc.out.W(0, 0) = 25.0;
  m.disc.out.b.setZero();
  const Batch batch = make_batch(world.ds, {0, 1, 2, 3});
  CHECK(adversarial_loss(batch, m, small_loss_config()) <= 1e-3);
}

TEST_CASE("loss report combination arithmetic") {
  const LossReport r = make_report(0.1, 10.0, 1.0, 2.0, 0.5);
  CHECK(r.total == doctest::Approx(19.6).epsilon(1e-15));
  const LossReport r2 = make_report(0.0, 0.0, 3.0, 4.0, 0.7);
  CHECK(r2.total == doctest::Approx(-0.7).epsilon(1e-15));
}

TEST_CASE("total loss obeys the report invariant and flag semantics") {
  Fixture f(12);
  LossConfig cfg = small_loss_config();
  const LossReport rep = total_loss(f.batch, f.model, cfg);
  CHECK(std::abs(rep.total - (cfg.alpha * rep.triplet + cfg.beta * rep.classification -
                              rep.adversarial)) <= 1e-12);
  CHECK(rep.triplet >= 0.0);
  CHECK(rep.classification >= 0.0);
  CHECK(rep.adversarial >= 0.0);

  LossConfig no_tl = cfg;
  no_tl.wo_tl = true;
  const LossReport rep_tl = total_loss(f.batch, f.model, no_tl);
  CHECK(rep_tl.triplet == 0.0);
  CHECK(rep_tl.classification == rep.classification);

  LossConfig no_al = cfg;
  no_al.wo_al = true;
  const LossReport rep_al = total_loss(f.batch, f.model, no_al);
  CHECK(rep_al.adversarial == 0.0);
  CHECK(rep_al.total == doctest::Approx(cfg.alpha * rep.triplet +
                                        cfg.beta * rep.classification)
                            .epsilon(1e-15));

  LossConfig no_cl = cfg;
  no_cl.wo_cl = true;
  const LossReport rep_cl = total_loss(f.batch, f.model, no_cl);
  CHECK(rep_cl.classification == 0.0);
}

TEST_CASE("total gradient is the exact linear combination of component gradients") {
  Fixture f(13);
  LossConfig cfg = small_loss_config();

  Selections sel;
  triplet_loss(f.batch, f.model, cfg, nullptr, nullptr, &sel);

  ModelState total_g = zeros_like(f.model);
  total_loss(f.batch, f.model, cfg, &total_g, &sel);

  ModelState gt = zeros_like(f.model), gc = zeros_like(f.model),
             ga = zeros_like(f.model);
  triplet_loss(f.batch, f.model, cfg, &gt, &sel);
  classification_loss(f.batch, f.model, cfg, &gc);
  adversarial_loss(f.batch, f.model, cfg, &ga);
  ModelState combo = zeros_like(f.model);
  for (ParamGroup g : kAllGroups) {
    axpy_group(combo, g, cfg.alpha, gt);
    axpy_group(combo, g, cfg.beta, gc);
    axpy_group(combo, g, -1.0, ga);
  }
  for (ParamGroup g : kAllGroups) {
    const Vector a = flatten_group(total_g, g);
    const Vector b = flatten_group(combo, g);
    CHECK((a - b).lpNorm<Eigen::Infinity>() <= 1e-12);
  }
}

TEST_CASE("fused evaluation matches the component path") {
  Fixture f(14);
  LossConfig cfg = small_loss_config();
  Selections sel;
  triplet_loss(f.batch, f.model, cfg, nullptr, nullptr, &sel);

  ModelState g1 = zeros_like(f.model), g2 = zeros_like(f.model);
  const LossReport a = total_loss(f.batch, f.model, cfg, &g1, &sel);
  const LossReport b = total_loss_fused(f.batch, f.model, cfg, &g2, &sel);
  CHECK(a.triplet == b.triplet);
  CHECK(a.classification == b.classification);
  CHECK(a.adversarial == b.adversarial);
  CHECK(a.total == b.total);
  for (ParamGroup g : kAllGroups) {
    const Vector x = flatten_group(g1, g);
    const Vector y = flatten_group(g2, g);
    CHECK((x - y).lpNorm<Eigen::Infinity>() <= 1e-12);
  }
}

namespace {

// Finite-difference audit of one loss w.r.t. one parameter group on a
// strided coordinate subset.
double fd_group_error(const Fixture& f, const LossConfig& cfg, ParamGroup group,
                      const std::function<double(const ModelState&)>& eval,
                      const ModelState& grads, int budget = 160) {
  const Vector base = flatten_group(f.model, group);
  const Vector grad = flatten_group(grads, group);
  std::vector<Eigen::Index> coords;
  if (base.size() <= budget) {
    for (Eigen::Index i = 0; i < base.size(); ++i) coords.push_back(i);
  } else {
    for (int i = 0; i < budget; ++i) {
      coords.push_back((static_cast<Eigen::Index>(i) * base.size()) / budget);
    }
  }
  Vector x0(coords.size()), g0(coords.size());
  for (size_t i = 0; i < coords.size(); ++i) {
    x0(i) = base(coords[i]);
    g0(i) = grad(coords[i]);
  }
  auto fsub = [&](const Vector& xs) {
    Vector flat = base;
    for (size_t i = 0; i < coords.size(); ++i) flat(coords[i]) = xs(i);
    ModelState probe = f.model;
    assign_group(probe, group, flat);
    return eval(probe);
  };
  return finite_difference_check(fsub, x0, g0, 1e-5);
}

}  // namespace

TEST_CASE("analytic gradients pass finite differences for every loss") {
  Fixture f(15);
  LossConfig cfg = small_loss_config();
  Selections sel;
  triplet_loss(f.batch, f.model, cfg, nullptr, nullptr, &sel);

  SUBCASE("triplet vs projection") {
    ModelState g = zeros_like(f.model);
    triplet_loss(f.batch, f.model, cfg, &g, &sel);
    auto eval = [&](const ModelState& m) {
      return triplet_loss(f.batch, m, cfg, nullptr, &sel);
    };
    CHECK(fd_group_error(f, cfg, ParamGroup::Projection, eval, g) <= 1e-5);
    CHECK(flatten_group(g, ParamGroup::Gmil).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK(flatten_group(g, ParamGroup::Classifier).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK(flatten_group(g, ParamGroup::Discriminator).lpNorm<Eigen::Infinity>() == 0.0);
  }

  SUBCASE("classification vs projection, attention, classifier") {
    ModelState g = zeros_like(f.model);
    classification_loss(f.batch, f.model, cfg, &g);
    auto eval = [&](const ModelState& m) { return classification_loss(f.batch, m, cfg); };
    CHECK(fd_group_error(f, cfg, ParamGroup::Projection, eval, g) <= 1e-5);
    CHECK(fd_group_error(f, cfg, ParamGroup::Gmil, eval, g) <= 1e-5);
    CHECK(fd_group_error(f, cfg, ParamGroup::Classifier, eval, g) <= 1e-5);
    CHECK(flatten_group(g, ParamGroup::Discriminator).lpNorm<Eigen::Infinity>() == 0.0);
  }

  SUBCASE("adversarial vs projection, attention, discriminator") {
    ModelState g = zeros_like(f.model);
    adversarial_loss(f.batch, f.model, cfg, &g);
    auto eval = [&](const ModelState& m) { return adversarial_loss(f.batch, m, cfg); };
    CHECK(fd_group_error(f, cfg, ParamGroup::Projection, eval, g) <= 1e-5);
    CHECK(fd_group_error(f, cfg, ParamGroup::Gmil, eval, g) <= 1e-5);
    CHECK(fd_group_error(f, cfg, ParamGroup::Discriminator, eval, g) <= 1e-5);
    CHECK(flatten_group(g, ParamGroup::Classifier).lpNorm<Eigen::Infinity>() == 0.0);
  }

  SUBCASE("fused total vs every group") {
    ModelState g = zeros_like(f.model);
    total_loss_fused(f.batch, f.model, cfg, &g, &sel);
    auto eval = [&](const ModelState& m) {
      return total_loss_fused(f.batch, m, cfg, nullptr, &sel).total;
    };
    for (ParamGroup group : kAllGroups) {
      CHECK(fd_group_error(f, cfg, group, eval, g) <= 1e-5);
    }
  }
}

TEST_CASE("gradients flow through attention when the loss uses Z distances") {
  Fixture f(16);
  LossConfig cfg = small_loss_config();
  cfg.wo_ga = true;
  Selections sel;
  triplet_loss(f.batch, f.model, cfg, nullptr, nullptr, &sel);
  ModelState g = zeros_like(f.model);
  triplet_loss(f.batch, f.model, cfg, &g, &sel);
  CHECK(flatten_group(g, ParamGroup::Gmil).lpNorm<Eigen::Infinity>() > 0.0);
  auto eval = [&](const ModelState& m) {
    return triplet_loss(f.batch, m, cfg, nullptr, &sel);
  };
  CHECK(fd_group_error(f, cfg, ParamGroup::Gmil, eval, g) <= 1e-5);
  CHECK(fd_group_error(f, cfg, ParamGroup::Projection, eval, g) <= 1e-5);
}

TEST_CASE("ablations change the forward semantics as advertised") {
  Fixture f(17);
  LossConfig cfg = small_loss_config();

  SUBCASE("plain distance replaces the subspace distance") {
    LossConfig ga = cfg;
    ga.wo_ga = true;
    Matrix z, ubar;
    embed_batch(f.batch, f.model, ga, &z, &ubar, nullptr);
    const int n = static_cast<int>(f.batch.items.size());
    double expect = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int j = 0; j < n; ++j) {
        if (f.batch.items[j]->label == f.batch.items[i]->label) continue;
        best = std::min(best, (ubar.col(i) - z.col(j)).squaredNorm());
      }
      const double arg =
          (ubar.col(i) - z.col(i)).squaredNorm() - best + ga.margin;
      if (arg > 0.0) expect += arg;
    }
    CHECK(triplet_loss(f.batch, f.model, ga) ==
          doctest::Approx(expect).epsilon(1e-12));
  }

  SUBCASE("graph ablation scores with plain attention") {
    LossConfig graph = cfg;
    graph.wo_graph = true;
    Matrix weights;
    embed_batch(f.batch, f.model, graph, nullptr, nullptr, &weights);
    for (int i = 0; i < static_cast<int>(f.batch.items.size()); ++i) {
      const Matrix vbar =
          project_video(f.batch.items[i]->bag.features, f.model.proj);
      const Vector expect = mil_weights(vbar, f.model.gmil);
      CHECK((weights.col(i) - expect).lpNorm<Eigen::Infinity>() <= 1e-14);
    }
  }

  SUBCASE("attention ablation uses uniform weights and intact bags") {
    LossConfig gm = cfg;
    gm.wo_gmil = true;
    Matrix weights;
    embed_batch(f.batch, f.model, gm, nullptr, nullptr, &weights);
    CHECK((weights.array() - 0.25).abs().maxCoeff() == 0.0);  // k == 4
    const double loss = triplet_loss(f.batch, f.model, gm);
    const double expect = oracle_triplet(f, gm);
    CHECK(loss == doctest::Approx(expect).epsilon(1e-6));
    ModelState g = zeros_like(f.model);
    classification_loss(f.batch, f.model, gm, &g);
    CHECK(flatten_group(g, ParamGroup::Gmil).lpNorm<Eigen::Infinity>() == 0.0);
  }
}

TEST_CASE("the classifier can fit a separable embedded batch") {
  AxisWorld world;  // class-c embeddings live on axis c for both modalities
  ModelState m = world.model;
  const Batch batch = make_batch(world.ds, {0, 1, 2, 3});
  LossConfig cfg = small_loss_config();
  const double initial = classification_loss(batch, m, cfg);
  for (int step = 0; step < 2000; ++step) {
    ModelState g = zeros_like(m);
    classification_loss(batch, m, cfg, &g);
    axpy_group(m, ParamGroup::Classifier, -1.0, g);
  }
  const double fitted = classification_loss(batch, m, cfg);
  CHECK(fitted < 0.05);
  CHECK(fitted < initial / 10.0);
}
