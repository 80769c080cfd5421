#pragma once

#include <cstdint>
#include <vector>

#include "geostack/dataset.hpp"
#include "geostack/geometry.hpp"
#include "geostack/training.hpp"

namespace geostack {

enum class AnchorMode { orthonormal, random_unit };

/// Parameters for a synthetic embedding domain. Image rows cluster around
/// their class anchor with angular spread controlled by kappa (larger
/// kappa, tighter clusters).
struct SyntheticDomainSpec {
  Eigen::Index dim = 64;
  std::int32_t classes = 10;
  Eigen::Index samples_per_class = 20;
  double kappa = 4.0;
  AnchorMode anchor_mode = AnchorMode::random_unit;
  std::uint64_t seed = 0;
  std::string domain_id = "synthetic";

  void validate() const;
};

/// Targets for the controlled-OE stress sweep.
struct StressGrid {
  std::vector<double> gamma_targets;  // sorted ascending, each > 0
  int trials_per_target = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct StressPoint {
  double gamma = 0.0;
  double mean_accuracy = 0.0;
  double stddev = 0.0;
};

struct LambdaSweepPoint {
  double lambda = 0.0;
  double final_normalized_oe = 0.0;
  double accuracy = 0.0;
};

/// Deterministic synthetic domain: seeded anchors (Gram-Schmidt
/// orthonormalized on request), rows = normalize(anchor + noise / kappa).
EmbeddingDataset generate_domain(const SyntheticDomainSpec& spec);

/// W = I + alpha * Q for a seeded unit-Frobenius upper-triangular Q, with
/// alpha bisected until the normalized OE lands within 1e-4 of gamma.
UpperTriangular synthesize_expert_with_oe(Eigen::Index d, double gamma,
                                          std::uint64_t seed);

/// Accuracy of the backbone domain under synthetic experts of controlled
/// OE, aggregated per gamma target.
std::vector<StressPoint> stress_test(const EmbeddingDataset& backbone_domain,
                                     const StressGrid& grid);

/// Trains one GeoLayer per lambda on the same data and seed, recording
/// final OE and domain accuracy.
std::vector<LambdaSweepPoint> lambda_sweep(const EmbeddingDataset& domain,
                                           const std::vector<double>& lambdas,
                                           const TrainConfig& cfg);

}  // namespace geostack
