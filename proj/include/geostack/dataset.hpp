#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "geostack/error.hpp"

namespace geostack {

/// Per-domain bundle of image feature rows, integer labels and one unit
/// text anchor row per class, all in a shared d-dimensional space.
struct EmbeddingDataset {
  Eigen::MatrixXd image_features;      // N x d
  std::vector<std::int32_t> labels;    // N entries in [0, C)
  Eigen::MatrixXd text_anchors;        // C x d, unit rows after load
  std::vector<std::string> class_names;
  std::string domain_id;

  Eigen::Index dim() const { return image_features.cols(); }
  Eigen::Index num_samples() const { return image_features.rows(); }
  Eigen::Index num_classes() const { return text_anchors.rows(); }

  /// Scales every anchor row to unit norm. Zero rows are an error.
  void normalize_anchors();

  /// Checks all type invariants; throws InvalidInput on violation.
  void validate() const;
};

/// Optimizer and protocol hyperparameters.
struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 32;
  int epochs = 30;
  double lambda = 0.95;
  double tau = 0.07;
  int shots = 16;
  std::uint64_t seed = 0;
  double weight_decay = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

}  // namespace geostack
