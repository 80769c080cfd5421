#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "geostack/synthesis.hpp"
#include "geostack/training.hpp"
#include "test_util.hpp"

using namespace geostack;
using testutil::random_matrix;
using testutil::random_upper;

namespace {

// Dataset with one row per class, rows equal to their anchors.
EmbeddingDataset anchor_dataset(Eigen::Index d, std::int32_t classes,
                                std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  EmbeddingDataset data;
  data.text_anchors = random_matrix(classes, d, rng);
  data.domain_id = "anchors";
  data.normalize_anchors();
  data.image_features = data.text_anchors;
  for (std::int32_t c = 0; c < classes; ++c) {
    data.labels.push_back(c);
  }
  return data;
}

EmbeddingDataset random_batch(Eigen::Index d, Eigen::Index n,
                              std::int32_t classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  EmbeddingDataset data;
  data.text_anchors = random_matrix(classes, d, rng);
  data.normalize_anchors();
  data.image_features = random_matrix(n, d, rng);
  for (Eigen::Index j = 0; j < n; ++j) {
    data.labels.push_back(static_cast<std::int32_t>(rng() % classes));
  }
  data.domain_id = "batch";
  return data;
}

SyntheticDomainSpec small_domain_spec() {
  SyntheticDomainSpec spec;
  spec.dim = 32;
  spec.classes = 6;
  spec.samples_per_class = 24;
  spec.kappa = 2.0;
  spec.seed = 9;
  return spec;
}

}  // namespace

TEST_CASE("few_shot_sample counts and determinism") {
  SyntheticDomainSpec spec;
  spec.dim = 16;
  spec.classes = 4;
  spec.samples_per_class = 50;
  spec.seed = 1;
  const EmbeddingDataset data = generate_domain(spec);

  const EmbeddingDataset a = few_shot_sample(data, 16, 0);
  CHECK(a.num_samples() == 64);
  for (std::int32_t c = 0; c < 4; ++c) {
    Eigen::Index count = 0;
    for (std::int32_t l : a.labels) {
      count += (l == c) ? 1 : 0;
    }
    CHECK(count == 16);
  }

  const EmbeddingDataset b = few_shot_sample(data, 16, 0);
  CHECK(a.image_features == b.image_features);
  CHECK(a.labels == b.labels);

  // Saturation returns the full dataset in class order.
  const EmbeddingDataset all = few_shot_sample(data, 1000, 5);
  CHECK(all.num_samples() == data.num_samples());
  CHECK(all.image_features == data.image_features);
}

TEST_CASE("align_loss degenerate and hand-computed cases") {
  // N = 1: single-term softmax, exactly zero.
  EmbeddingDataset one;
  one.text_anchors = Eigen::MatrixXd::Identity(2, 4).eval();
  one.image_features = Eigen::MatrixXd::Identity(1, 4).eval();
  one.labels = {0};
  CHECK(align_loss(UpperTriangular::Identity(4), one, 1.0) == 0.0);

  // N = 2 with orthogonal cross pairs: both softmax directions give
  // log(1 + e^{-1}).
  EmbeddingDataset two;
  two.text_anchors = Eigen::MatrixXd::Identity(2, 2).eval();
  two.image_features = Eigen::MatrixXd::Identity(2, 2).eval();
  two.labels = {0, 1};
  const double expected = std::log(1.0 + std::exp(-1.0));
  CHECK(align_loss(UpperTriangular::Identity(2), two, 1.0) ==
        doctest::Approx(expected).epsilon(1e-12));

  CHECK_THROWS_AS(align_loss(UpperTriangular::Identity(2), two, 0.0),
                  InvalidInput);
}

TEST_CASE("align_loss collapse limit is log N") {
  // All rows identical and all labels shared: every logit is the same, so
  // both softmax directions are uniform over N.
  const Eigen::Index n = 8;
  EmbeddingDataset data = random_batch(6, n, 4, 21);
  data.image_features = Eigen::MatrixXd::Ones(n, 6).eval();
  std::fill(data.labels.begin(), data.labels.end(), 0);
  const double loss = align_loss(UpperTriangular::Identity(6), data, 0.5);
  CHECK(loss == doctest::Approx(std::log(double(n))).epsilon(1e-9));
}

TEST_CASE("ortho_loss shares the OE implementation") {
  CHECK(ortho_loss(UpperTriangular::Identity(5)) == 0.0);

  auto w = UpperTriangular::Identity(2);
  w.set(0, 1, 0.1);
  CHECK(ortho_loss(w) == doctest::Approx(0.0201).epsilon(1e-12));

  // Sign-flipped diagonal stays orthogonal.
  Eigen::MatrixXd signs = Eigen::MatrixXd::Identity(4, 4);
  signs(1, 1) = -1.0;
  signs(3, 3) = -1.0;
  CHECK(ortho_loss(UpperTriangular::FromDense(signs)) == 0.0);
}

TEST_CASE("coa_loss endpoints and convex arithmetic") {
  const EmbeddingDataset batch = random_batch(8, 6, 3, 33);
  std::mt19937_64 rng(34);
  const auto w = add_identity(random_upper(8, rng, 0.05));

  TrainConfig cfg;
  cfg.lambda = 1.0;
  CHECK(coa_loss(w, batch, cfg).total == ortho_loss(w));
  cfg.lambda = 0.0;
  CHECK(coa_loss(w, batch, cfg).total == align_loss(w, batch, cfg.tau));

  cfg.lambda = 0.95;
  const CoaValue v = coa_loss(w, batch, cfg);
  CHECK(v.total == doctest::Approx(0.05 * v.align + 0.95 * v.ortho)
                       .epsilon(1e-15));
}

TEST_CASE("coa_gradient: stationary point, masking, finite differences") {
  const EmbeddingDataset batch = random_batch(8, 10, 4, 55);
  TrainConfig cfg;
  cfg.lambda = 1.0;
  const auto grad_at_identity =
      coa_gradient(UpperTriangular::Identity(8), batch, cfg);
  CHECK(grad_at_identity.matrix().isZero(0.0));

  std::mt19937_64 rng(56);
  for (double lambda : {0.0, 0.5, 0.95, 1.0}) {
    for (Eigen::Index d : {4, 8, 16}) {
      const EmbeddingDataset b = random_batch(
          d, 8, 3, 100 + static_cast<std::uint64_t>(d) +
                       static_cast<std::uint64_t>(lambda * 100));
      const auto w = add_identity(random_upper(d, rng, 0.05));
      TrainConfig c;
      c.lambda = lambda;
      const auto grad = coa_gradient(w, b, c);

      for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = 0; j < i; ++j) {
          CHECK(grad(i, j) == 0.0);  // mask contract
        }
      }

      const double h = 1e-5;
      double max_rel = 0.0;
      for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = i; j < d; ++j) {
          auto wp = w;
          auto wm = w;
          wp.set(i, j, w(i, j) + h);
          wm.set(i, j, w(i, j) - h);
          const double fd =
              (coa_loss(wp, b, c).total - coa_loss(wm, b, c).total) /
              (2.0 * h);
          const double denom = std::max(std::abs(fd), 1e-6);
          max_rel = std::max(max_rel, std::abs(grad(i, j) - fd) / denom);
        }
      }
      CHECK(max_rel <= 1e-4);
    }
  }
}

TEST_CASE("adamw_step basics") {
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  const auto w = UpperTriangular::Identity(3);
  const auto state = AdamState::Init(3);

  // Zero gradient, zero decay: no movement.
  const auto [s1, w1] = adamw_step(state, w, UpperTriangular::Zero(3), cfg);
  CHECK(w1.matrix() == w.matrix());

  // First step with a constant gradient approximates -lr * sign(g).
  auto g = UpperTriangular::Zero(3);
  g.set(0, 1, 0.25);
  const auto [s2, w2] = adamw_step(state, w, g, cfg);
  CHECK(w2(0, 1) ==
        doctest::Approx(-cfg.learning_rate).epsilon(1e-3));
  CHECK(w2(0, 0) == 1.0);

  CHECK_THROWS_AS(adamw_step(state, UpperTriangular::Identity(4), g, cfg),
                  DimensionError);
}

TEST_CASE("adamw converges on a quadratic toy objective") {
  // Minimize sum of (w_ij - target_ij)^2 over the upper triangle.
  std::mt19937_64 rng(77);
  const auto target = random_upper(4, rng, 0.5);
  auto w = UpperTriangular::Identity(4);
  auto state = AdamState::Init(4);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  for (int step = 0; step < 600; ++step) {
    const auto grad = UpperTriangular::FromDense(
        2.0 * (w.matrix() - target.matrix()));
    auto [next_state, next_w] = adamw_step(state, w, grad, cfg);
    state = std::move(next_state);
    w = std::move(next_w);
  }
  CHECK((w.matrix() - target.matrix()).lpNorm<Eigen::Infinity>() <= 1e-3);
}

TEST_CASE("train_geolayer: epochs=0, determinism, lambda endpoints") {
  const EmbeddingDataset domain = generate_domain(small_domain_spec());
  const EmbeddingDataset shots = few_shot_sample(domain, 16, 3);

  TrainConfig cfg;
  cfg.epochs = 0;
  const auto [identity_layer, empty_report] = train_geolayer(shots, cfg);
  CHECK(identity_layer.weight.matrix() ==
        Eigen::MatrixXd(Eigen::MatrixXd::Identity(32, 32)));
  CHECK(identity_layer.raw_oe == 0.0);
  CHECK(empty_report.epochs.empty());

  cfg.epochs = 5;
  const auto [a, ra] = train_geolayer(shots, cfg);
  const auto [b, rb] = train_geolayer(shots, cfg);
  CHECK(a.weight.matrix() == b.weight.matrix());
  for (std::size_t e = 0; e < ra.epochs.size(); ++e) {
    CHECK(ra.epochs[e].ortho_loss ==
          doctest::Approx(rb.epochs[e].ortho_loss).epsilon(1e-15));
  }

  // lambda = 1: identity is stationary, weights never move.
  cfg.lambda = 1.0;
  cfg.epochs = 3;
  const auto [frozen, fr] = train_geolayer(shots, cfg);
  CHECK(frozen.weight.matrix() ==
        Eigen::MatrixXd(Eigen::MatrixXd::Identity(32, 32)));
  CHECK(frozen.raw_oe == 0.0);
}

TEST_CASE("report ortho matches recomputed OE per epoch") {
  const EmbeddingDataset domain = generate_domain(small_domain_spec());
  const EmbeddingDataset shots = few_shot_sample(domain, 8, 0);
  TrainConfig cfg;
  cfg.epochs = 4;
  const auto [layer, report] = train_geolayer(shots, cfg);
  REQUIRE(report.epochs.size() == 4);
  CHECK(report.epochs.back().ortho_loss ==
        doctest::Approx(layer.raw_oe).epsilon(1e-10));
  CHECK(layer.normalized_oe * layer.normalized_oe * 32.0 * 32.0 ==
        doctest::Approx(layer.raw_oe).epsilon(1e-12));
}

TEST_CASE("constrained training keeps OE below the unconstrained run") {
  const EmbeddingDataset domain = generate_domain(small_domain_spec());
  const EmbeddingDataset shots = few_shot_sample(domain, 16, 3);

  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.lambda = 0.95;
  const auto [constrained, rc] = train_geolayer(shots, cfg);

  cfg.lambda = 0.0;
  const auto [unconstrained, ru] = train_geolayer(shots, cfg);

  CHECK(constrained.normalized_oe < unconstrained.normalized_oe);
}

TEST_CASE("near-isometry after constrained training") {
  const EmbeddingDataset domain = generate_domain(small_domain_spec());
  const EmbeddingDataset shots = few_shot_sample(domain, 16, 3);
  TrainConfig cfg;
  cfg.epochs = 15;
  const auto [layer, report] = train_geolayer(shots, cfg);
  for (Eigen::Index j = 0; j < domain.num_samples(); ++j) {
    const double before = domain.image_features.row(j).norm();
    const double after =
        (domain.image_features.row(j) * layer.weight.matrix()).norm();
    CHECK(after / before >= 0.9);
    CHECK(after / before <= 1.1);
  }
}
