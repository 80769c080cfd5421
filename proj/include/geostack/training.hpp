#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "geostack/dataset.hpp"
#include "geostack/geometry.hpp"

namespace geostack {

struct EpochRecord {
  double align_loss = 0.0;
  double ortho_loss = 0.0;
  double coa_loss = 0.0;
  double raw_oe = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  double wall_seconds = 0.0;
};

/// Draws min(shots, available) samples per class without replacement,
/// deterministically for a given (data, shots, seed).
EmbeddingDataset few_shot_sample(const EmbeddingDataset& data, int shots,
                                 std::uint64_t seed);

/// Symmetric InfoNCE over cosine similarities between transformed image
/// rows and each row's own class anchor, with the -1/(2N) prefactor.
double align_loss(const UpperTriangular& w, const EmbeddingDataset& batch,
                  double tau);

/// ||W^T W - I||_F^2; shares the orthogonality_error implementation.
double ortho_loss(const UpperTriangular& w);

struct CoaValue {
  double total = 0.0;
  double align = 0.0;
  double ortho = 0.0;
};

/// total = (1 - lambda) * align + lambda * ortho.
CoaValue coa_loss(const UpperTriangular& w, const EmbeddingDataset& batch,
                  const TrainConfig& cfg);

/// Analytic gradient of the COA objective with strictly-lower entries
/// masked to exactly zero.
UpperTriangular coa_gradient(const UpperTriangular& w,
                             const EmbeddingDataset& batch,
                             const TrainConfig& cfg);

struct AdamState {
  Eigen::MatrixXd m;
  Eigen::MatrixXd v;
  std::int64_t step = 0;

  static AdamState Init(Eigen::Index dim);
};

/// One decoupled-weight-decay Adam update restricted to the upper
/// triangle. Returns the updated (state, weights).
std::pair<AdamState, UpperTriangular> adamw_step(const AdamState& state,
                                                 const UpperTriangular& w,
                                                 const UpperTriangular& grad,
                                                 const TrainConfig& cfg);

/// Trains a GeoLayer from identity with seeded-shuffled minibatches.
/// Deterministic for fixed (data, cfg). The caller applies any few-shot
/// subsampling beforehand.
std::pair<GeoLayer, TrainReport> train_geolayer(const EmbeddingDataset& data,
                                                const TrainConfig& cfg);

}  // namespace geostack
