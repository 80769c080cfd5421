#pragma once

#include <Eigen/Dense>
#include <string>
#include <tuple>
#include <vector>

#include "geostack/dataset.hpp"
#include "geostack/geometry.hpp"
#include "geostack/training.hpp"

namespace geostack {

/// Similarity convention for margin computations. Classification always
/// uses cosine; the dot form exists to test the interference expansion
/// literally.
enum class SimilarityMode { cosine, dot };

struct MarginRecord {
  Eigen::Index sample_id = 0;
  double margin = 0.0;  // true-class similarity minus best wrong class
  bool correct = false;
};

/// Per-stack diagnostic record.
struct StabilityReport {
  std::string stack_description;
  std::vector<std::string> domain_ids;
  std::vector<double> domain_accuracy;
  std::vector<double> domain_mean_margin;
  double composite_raw_oe = 0.0;
  double composite_normalized_oe = 0.0;
  double quasi_additive_deviation = 0.0;
  // (i, j, ||W_i W_j - W_j W_i||_F) for all layer pairs i < j.
  std::vector<std::tuple<int, int, double>> commutator_deviations;
};

/// Disjoint class-index sets for class-incremental training.
struct CilSchedule {
  std::vector<std::vector<std::int32_t>> task_classes;
  int shots = 16;
  std::uint64_t seed = 0;

  /// n contiguous equal blocks over [0, num_classes); the remainder goes
  /// to the earliest tasks.
  static CilSchedule Contiguous(std::int32_t num_classes, int tasks,
                                int shots, std::uint64_t seed);

  void validate(std::int32_t num_classes) const;
};

struct CilResult {
  std::vector<double> global_accuracy;   // after each task
  std::vector<double> task0_retention;   // after each task
};

struct PermutationStats {
  std::string domain_id;
  double mean = 0.0;
  double stddev = 0.0;
  double range = 0.0;
};

/// argmax_c cos(I_row * W, T_c); ties break toward the lowest index.
std::int32_t classify(const Eigen::RowVectorXd& i_row, const UpperTriangular& w,
                      const Eigen::MatrixXd& anchors);

/// Fraction of rows classified to their own label.
double accuracy(const EmbeddingDataset& data, const UpperTriangular& w);

/// sim(I_row * W, t_pos) - sim(I_row * W, t_neg).
double margin(const Eigen::RowVectorXd& i_row, const UpperTriangular& w,
              const Eigen::RowVectorXd& t_pos, const Eigen::RowVectorXd& t_neg,
              SimilarityMode mode = SimilarityMode::cosine);

/// First-order interference eps = I_row * delta_b * (t_pos - t_neg)^T,
/// in the raw dot-product form.
double interference(const Eigen::RowVectorXd& i_row,
                    const UpperTriangular& delta_b,
                    const Eigen::RowVectorXd& t_pos,
                    const Eigen::RowVectorXd& t_neg);

/// One margin record per sample against the dataset's own anchors.
std::vector<MarginRecord> margin_records(const EmbeddingDataset& data,
                                         const UpperTriangular& w);

struct ErosionRecord {
  int depth = 0;
  double accuracy = 0.0;
  double mean_margin = 0.0;
  double cumulative_normalized_oe = 0.0;
};

/// Evaluates the base domain under each stack prefix W_0..W_k.
std::vector<ErosionRecord> erosion_profile(const EmbeddingDataset& base_domain,
                                           const GeoStack& stack);

/// Composes the layers in the given order and evaluates every domain
/// under the composite.
StabilityReport run_mda(const std::vector<EmbeddingDataset>& domains,
                        const std::vector<GeoLayer>& layers,
                        const std::vector<int>& order);

/// Class-incremental protocol: trains one layer per task on that task's
/// classes (few-shot), extends the stack, and scores all seen classes
/// plus task-0 retention against the seen-anchor set.
CilResult run_cil(const EmbeddingDataset& data, const CilSchedule& schedule,
                  const TrainConfig& cfg);

/// Accuracy dispersion over stack orderings: exhaustive when the layer
/// count admits at most 24 orders, seeded sampling of k otherwise.
std::vector<PermutationStats> permutation_test(
    const std::vector<EmbeddingDataset>& domains,
    const std::vector<GeoLayer>& layers, int k_permutations,
    std::uint64_t seed);

}  // namespace geostack
