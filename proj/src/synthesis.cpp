#include "geostack/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "geostack/evaluation.hpp"

namespace geostack {

void SyntheticDomainSpec::validate() const {
  if (dim < 1) {
    throw InvalidInput("SyntheticDomainSpec: dim must be >= 1");
  }
  if (classes < 2) {
    throw InvalidInput("SyntheticDomainSpec: need at least 2 classes");
  }
  if (samples_per_class < 1) {
    throw InvalidInput("SyntheticDomainSpec: samples_per_class must be >= 1");
  }
  if (!(kappa > 0.0)) {
    throw InvalidInput("SyntheticDomainSpec: kappa must be > 0");
  }
  if (anchor_mode == AnchorMode::orthonormal && classes > dim) {
    throw InvalidInput(
        "SyntheticDomainSpec: orthonormal anchors need classes <= dim");
  }
}

EmbeddingDataset generate_domain(const SyntheticDomainSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Eigen::MatrixXd anchors(spec.classes, spec.dim);
  for (Eigen::Index c = 0; c < spec.classes; ++c) {
    for (Eigen::Index k = 0; k < spec.dim; ++k) {
      anchors(c, k) = gauss(rng);
    }
  }
  if (spec.anchor_mode == AnchorMode::orthonormal) {
    // Modified Gram-Schmidt on the seeded Gaussian draws.
    for (Eigen::Index c = 0; c < spec.classes; ++c) {
      for (Eigen::Index p = 0; p < c; ++p) {
        anchors.row(c) -= anchors.row(c).dot(anchors.row(p)) * anchors.row(p);
      }
      const double norm = anchors.row(c).norm();
      if (norm < 1e-12) {
        throw NumericalError("generate_domain: degenerate anchor draw");
      }
      anchors.row(c) /= norm;
    }
  } else {
    for (Eigen::Index c = 0; c < spec.classes; ++c) {
      anchors.row(c) /= anchors.row(c).norm();
    }
  }

  const Eigen::Index n = spec.classes * spec.samples_per_class;
  const double noise_scale = 1.0 / spec.kappa;
  EmbeddingDataset data;
  data.image_features.resize(n, spec.dim);
  data.labels.reserve(static_cast<std::size_t>(n));
  Eigen::RowVectorXd noise(spec.dim);
  Eigen::Index row = 0;
  for (std::int32_t c = 0; c < spec.classes; ++c) {
    for (Eigen::Index s = 0; s < spec.samples_per_class; ++s, ++row) {
      for (Eigen::Index k = 0; k < spec.dim; ++k) {
        noise(k) = gauss(rng);
      }
      Eigen::RowVectorXd v = anchors.row(c) + noise_scale * noise;
      data.image_features.row(row) = v / v.norm();
      data.labels.push_back(c);
    }
  }
  data.text_anchors = std::move(anchors);
  for (std::int32_t c = 0; c < spec.classes; ++c) {
    data.class_names.push_back("class_" + std::to_string(c));
  }
  data.domain_id = spec.domain_id;
  data.validate();
  return data;
}

UpperTriangular synthesize_expert_with_oe(Eigen::Index d, double gamma,
                                          std::uint64_t seed) {
  if (d < 1) {
    throw InvalidInput("synthesize_expert_with_oe: dim must be >= 1");
  }
  if (gamma < 0.0) {
    throw InvalidInput("synthesize_expert_with_oe: gamma must be >= 0");
  }
  if (gamma == 0.0) {
    return UpperTriangular::Identity(d);
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = i; j < d; ++j) {
      q(i, j) = gauss(rng);
    }
  }
  q /= q.norm();

  const auto oe_at = [&](double alpha) {
    return orthogonality_error(
               Eigen::MatrixXd(Eigen::MatrixXd::Identity(d, d) + alpha * q))
        .normalized;
  };
  constexpr double kTol = 1e-4;
  constexpr int kMaxIters = 200;

  double lo = 0.0;
  double hi = 1.0;
  int iters = 0;
  while (oe_at(hi) < gamma) {
    lo = hi;
    hi *= 2.0;
    if (++iters >= kMaxIters) {
      throw NumericalError(
          "synthesize_expert_with_oe: target OE unreachable for this seed");
    }
  }
  double alpha = hi;
  for (; iters < kMaxIters; ++iters) {
    alpha = 0.5 * (lo + hi);
    const double s = oe_at(alpha);
    if (std::abs(s - gamma) <= kTol) {
      return UpperTriangular::FromDense(
          Eigen::MatrixXd::Identity(d, d) + alpha * q);
    }
    if (s < gamma) {
      lo = alpha;
    } else {
      hi = alpha;
    }
  }
  throw NumericalError(
      "synthesize_expert_with_oe: bisection did not converge to target OE");
}

void StressGrid::validate() const {
  if (gamma_targets.empty()) {
    throw InvalidInput("StressGrid: no gamma targets");
  }
  if (!std::is_sorted(gamma_targets.begin(), gamma_targets.end())) {
    throw InvalidInput("StressGrid: gamma targets must be sorted ascending");
  }
  for (double g : gamma_targets) {
    if (g < 0.0) {
      throw InvalidInput("StressGrid: gamma targets must be >= 0");
    }
  }
  if (trials_per_target < 1) {
    throw InvalidInput("StressGrid: trials_per_target must be >= 1");
  }
}

std::vector<StressPoint> stress_test(const EmbeddingDataset& backbone_domain,
                                     const StressGrid& grid) {
  backbone_domain.validate();
  grid.validate();
  std::vector<StressPoint> points;
  for (std::size_t g = 0; g < grid.gamma_targets.size(); ++g) {
    const double gamma = grid.gamma_targets[g];
    std::vector<double> accs;
    for (int trial = 0; trial < grid.trials_per_target; ++trial) {
      const std::uint64_t trial_seed = grid.seed +
                                       1000003ULL * static_cast<std::uint64_t>(g) +
                                       static_cast<std::uint64_t>(trial);
      const UpperTriangular expert =
          synthesize_expert_with_oe(backbone_domain.dim(), gamma, trial_seed);
      accs.push_back(accuracy(backbone_domain, expert));
    }
    StressPoint p;
    p.gamma = gamma;
    p.mean_accuracy = 0.0;
    for (double a : accs) {
      p.mean_accuracy += a;
    }
    p.mean_accuracy /= static_cast<double>(accs.size());
    double var = 0.0;
    for (double a : accs) {
      var += (a - p.mean_accuracy) * (a - p.mean_accuracy);
    }
    p.stddev = std::sqrt(var / static_cast<double>(accs.size()));
    points.push_back(p);
  }
  return points;
}

std::vector<LambdaSweepPoint> lambda_sweep(const EmbeddingDataset& domain,
                                           const std::vector<double>& lambdas,
                                           const TrainConfig& cfg) {
  domain.validate();
  const EmbeddingDataset shots =
      few_shot_sample(domain, cfg.shots, cfg.seed);
  std::vector<LambdaSweepPoint> points;
  for (double lambda : lambdas) {
    if (lambda < 0.0 || lambda > 1.0) {
      throw InvalidInput("lambda_sweep: lambda must be in [0, 1]");
    }
    TrainConfig run_cfg = cfg;
    run_cfg.lambda = lambda;
    auto [layer, report] = train_geolayer(shots, run_cfg);
    LambdaSweepPoint p;
    p.lambda = lambda;
    p.final_normalized_oe = layer.normalized_oe;
    p.accuracy = accuracy(domain, layer.weight);
    points.push_back(p);
  }
  return points;
}

}  // namespace geostack
