#include "geostack/dataset.hpp"

#include <cmath>

namespace geostack {

void EmbeddingDataset::normalize_anchors() {
  for (Eigen::Index c = 0; c < text_anchors.rows(); ++c) {
    const double norm = text_anchors.row(c).norm();
    if (norm == 0.0 || !std::isfinite(norm)) {
      throw InvalidInput("EmbeddingDataset: anchor row " + std::to_string(c) +
                         " has zero or non-finite norm");
    }
    text_anchors.row(c) /= norm;
  }
}

void EmbeddingDataset::validate() const {
  if (num_samples() < 1) {
    throw InvalidInput("EmbeddingDataset: no samples");
  }
  if (num_classes() < 2) {
    throw InvalidInput("EmbeddingDataset: need at least 2 classes");
  }
  if (text_anchors.cols() != dim()) {
    throw DimensionError("EmbeddingDataset: anchor/feature dim mismatch");
  }
  if (static_cast<Eigen::Index>(labels.size()) != num_samples()) {
    throw InvalidInput("EmbeddingDataset: label count mismatch");
  }
  if (!image_features.allFinite() || !text_anchors.allFinite()) {
    throw InvalidInput("EmbeddingDataset: non-finite entries");
  }
  for (std::int32_t label : labels) {
    if (label < 0 || label >= num_classes()) {
      throw InvalidInput("EmbeddingDataset: label out of range");
    }
  }
  for (Eigen::Index c = 0; c < num_classes(); ++c) {
    if (std::abs(text_anchors.row(c).norm() - 1.0) > 1e-6) {
      throw InvalidInput("EmbeddingDataset: anchor row " + std::to_string(c) +
                         " is not unit-norm");
    }
  }
  if (!class_names.empty() &&
      static_cast<Eigen::Index>(class_names.size()) != num_classes()) {
    throw InvalidInput("EmbeddingDataset: class_names count mismatch");
  }
}

void TrainConfig::validate() const {
  if (lambda < 0.0 || lambda > 1.0) {
    throw InvalidInput("TrainConfig: lambda must be in [0, 1]");
  }
  if (tau <= 0.0) {
    throw InvalidInput("TrainConfig: tau must be > 0");
  }
  if (shots < 1) {
    throw InvalidInput("TrainConfig: shots must be >= 1");
  }
  if (batch_size < 2) {
    throw InvalidInput("TrainConfig: batch_size must be >= 2");
  }
  if (epochs < 0) {
    throw InvalidInput("TrainConfig: epochs must be >= 0");
  }
  if (learning_rate <= 0.0) {
    throw InvalidInput("TrainConfig: learning_rate must be > 0");
  }
}

}  // namespace geostack
