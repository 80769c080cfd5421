#include "geostack/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

namespace geostack {

namespace {

// Cosine scores of one transformed row against every anchor row.
Eigen::VectorXd cosine_scores(const Eigen::RowVectorXd& i_row,
                              const UpperTriangular& w,
                              const Eigen::MatrixXd& anchors) {
  if (i_row.cols() != w.dim() || anchors.cols() != w.dim()) {
    throw DimensionError("classify: row/weight/anchor dim mismatch");
  }
  Eigen::RowVectorXd u = i_row * w.matrix();
  const double norm = u.norm();
  if (norm == 0.0 || !std::isfinite(norm)) {
    throw NumericalError("classify: transformed row has zero norm, "
                         "classification undefined");
  }
  u /= norm;
  Eigen::VectorXd scores(anchors.rows());
  for (Eigen::Index c = 0; c < anchors.rows(); ++c) {
    const double anorm = anchors.row(c).norm();
    if (anorm == 0.0) {
      throw NumericalError("classify: zero-norm anchor");
    }
    scores(c) = u.dot(anchors.row(c)) / anorm;
  }
  return scores;
}

std::int32_t argmax_lowest(const Eigen::VectorXd& scores) {
  std::int32_t best = 0;
  for (Eigen::Index c = 1; c < scores.size(); ++c) {
    if (scores(c) > scores(best)) {
      best = static_cast<std::int32_t>(c);
    }
  }
  return best;
}

double population_std(const std::vector<double>& xs, double mean) {
  double acc = 0.0;
  for (double x : xs) {
    acc += (x - mean) * (x - mean);
  }
  return std::sqrt(acc / static_cast<double>(xs.size()));
}

}  // namespace

std::int32_t classify(const Eigen::RowVectorXd& i_row, const UpperTriangular& w,
                      const Eigen::MatrixXd& anchors) {
  return argmax_lowest(cosine_scores(i_row, w, anchors));
}

double accuracy(const EmbeddingDataset& data, const UpperTriangular& w) {
  if (data.num_samples() < 1) {
    throw InvalidInput("accuracy: empty dataset");
  }
  Eigen::Index correct = 0;
  for (Eigen::Index j = 0; j < data.num_samples(); ++j) {
    if (classify(data.image_features.row(j), w, data.text_anchors) ==
        data.labels[j]) {
      ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.num_samples());
}

double margin(const Eigen::RowVectorXd& i_row, const UpperTriangular& w,
              const Eigen::RowVectorXd& t_pos, const Eigen::RowVectorXd& t_neg,
              SimilarityMode mode) {
  if (i_row.cols() != w.dim() || t_pos.cols() != w.dim() ||
      t_neg.cols() != w.dim()) {
    throw DimensionError("margin: dim mismatch");
  }
  const Eigen::RowVectorXd u = i_row * w.matrix();
  if (mode == SimilarityMode::dot) {
    return u.dot(t_pos) - u.dot(t_neg);
  }
  const double un = u.norm();
  const double pn = t_pos.norm();
  const double nn = t_neg.norm();
  if (un == 0.0 || pn == 0.0 || nn == 0.0) {
    throw NumericalError("margin: zero-norm input");
  }
  return u.dot(t_pos) / (un * pn) - u.dot(t_neg) / (un * nn);
}

double interference(const Eigen::RowVectorXd& i_row,
                    const UpperTriangular& delta_b,
                    const Eigen::RowVectorXd& t_pos,
                    const Eigen::RowVectorXd& t_neg) {
  if (i_row.cols() != delta_b.dim() || t_pos.cols() != delta_b.dim() ||
      t_neg.cols() != delta_b.dim()) {
    throw DimensionError("interference: dim mismatch");
  }
  const Eigen::RowVectorXd v = i_row * delta_b.matrix();
  return v.dot(t_pos) - v.dot(t_neg);
}

std::vector<MarginRecord> margin_records(const EmbeddingDataset& data,
                                         const UpperTriangular& w) {
  std::vector<MarginRecord> records;
  records.reserve(static_cast<std::size_t>(data.num_samples()));
  for (Eigen::Index j = 0; j < data.num_samples(); ++j) {
    const Eigen::VectorXd scores =
        cosine_scores(data.image_features.row(j), w, data.text_anchors);
    const std::int32_t label = data.labels[j];
    double best_wrong = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < scores.size(); ++c) {
      if (c != label) {
        best_wrong = std::max(best_wrong, scores(c));
      }
    }
    MarginRecord rec;
    rec.sample_id = j;
    rec.margin = scores(label) - best_wrong;
    rec.correct = rec.margin > 0.0;
    records.push_back(rec);
  }
  return records;
}

std::vector<ErosionRecord> erosion_profile(const EmbeddingDataset& base_domain,
                                           const GeoStack& stack) {
  if (stack.empty()) {
    throw InvalidInput("erosion_profile: stack is empty");
  }
  std::vector<ErosionRecord> profile;
  GeoStack prefix(stack.dim());
  for (std::size_t k = 0; k < stack.size(); ++k) {
    prefix.push(stack[k]);
    const UpperTriangular composite = compose(prefix);
    const auto records = margin_records(base_domain, composite);
    double margin_sum = 0.0;
    Eigen::Index correct = 0;
    for (const auto& rec : records) {
      margin_sum += rec.margin;
      correct += rec.correct ? 1 : 0;
    }
    ErosionRecord out;
    out.depth = static_cast<int>(k);
    out.accuracy =
        static_cast<double>(correct) / static_cast<double>(records.size());
    out.mean_margin = margin_sum / static_cast<double>(records.size());
    out.cumulative_normalized_oe = orthogonality_error(composite).normalized;
    profile.push_back(out);
  }
  return profile;
}

StabilityReport run_mda(const std::vector<EmbeddingDataset>& domains,
                        const std::vector<GeoLayer>& layers,
                        const std::vector<int>& order) {
  if (domains.size() != layers.size() || domains.empty()) {
    throw InvalidInput("run_mda: need one layer per domain");
  }
  {
    std::set<std::string> ids;
    for (const auto& d : domains) {
      if (!ids.insert(d.domain_id).second) {
        throw InvalidInput("run_mda: duplicate domain id '" + d.domain_id +
                           "'");
      }
    }
  }
  std::vector<int> perm = order;
  if (perm.empty()) {
    perm.resize(layers.size());
    std::iota(perm.begin(), perm.end(), 0);
  }
  if (perm.size() != layers.size()) {
    throw InvalidInput("run_mda: order size mismatch");
  }

  GeoStack stack(layers.front().weight.dim());
  std::string description;
  for (int idx : perm) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= layers.size()) {
      throw InvalidInput("run_mda: order index out of range");
    }
    stack.push(layers[static_cast<std::size_t>(idx)]);
    if (!description.empty()) {
      description += " -> ";
    }
    description += layers[static_cast<std::size_t>(idx)].domain_id;
  }
  const UpperTriangular composite = compose(stack);

  StabilityReport report;
  report.stack_description = description;
  const OrthogonalityError oe = orthogonality_error(composite);
  report.composite_raw_oe = oe.raw;
  report.composite_normalized_oe = oe.normalized;
  report.quasi_additive_deviation = quasi_additive_approx(stack).second;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for (std::size_t j = i + 1; j < layers.size(); ++j) {
      report.commutator_deviations.emplace_back(
          static_cast<int>(i), static_cast<int>(j),
          commutator_deviation(layers[i], layers[j]));
    }
  }
  for (const auto& domain : domains) {
    const auto records = margin_records(domain, composite);
    double margin_sum = 0.0;
    Eigen::Index correct = 0;
    for (const auto& rec : records) {
      margin_sum += rec.margin;
      correct += rec.correct ? 1 : 0;
    }
    report.domain_ids.push_back(domain.domain_id);
    report.domain_accuracy.push_back(static_cast<double>(correct) /
                                     static_cast<double>(records.size()));
    report.domain_mean_margin.push_back(margin_sum /
                                        static_cast<double>(records.size()));
  }
  return report;
}

CilSchedule CilSchedule::Contiguous(std::int32_t num_classes, int tasks,
                                    int shots, std::uint64_t seed) {
  if (tasks < 1 || num_classes < tasks) {
    throw InvalidInput("CilSchedule: need at least one class per task");
  }
  CilSchedule schedule;
  schedule.shots = shots;
  schedule.seed = seed;
  const std::int32_t base = num_classes / tasks;
  const std::int32_t remainder = num_classes % tasks;
  std::int32_t next = 0;
  for (int t = 0; t < tasks; ++t) {
    const std::int32_t count = base + (t < remainder ? 1 : 0);
    std::vector<std::int32_t> classes(static_cast<std::size_t>(count));
    std::iota(classes.begin(), classes.end(), next);
    next += count;
    schedule.task_classes.push_back(std::move(classes));
  }
  return schedule;
}

void CilSchedule::validate(std::int32_t num_classes) const {
  if (task_classes.empty()) {
    throw InvalidInput("CilSchedule: no tasks");
  }
  std::set<std::int32_t> seen;
  for (const auto& task : task_classes) {
    if (task.empty()) {
      throw InvalidInput("CilSchedule: empty task");
    }
    for (std::int32_t c : task) {
      if (c < 0 || c >= num_classes) {
        throw InvalidInput("CilSchedule: class index out of range");
      }
      if (!seen.insert(c).second) {
        throw InvalidInput("CilSchedule: class sets are not disjoint");
      }
    }
  }
}

namespace {

// Restriction of a dataset to a class subset, labels remapped to
// consecutive ids in the order given by `classes`.
EmbeddingDataset restrict_classes(const EmbeddingDataset& data,
                                  const std::vector<std::int32_t>& classes) {
  std::vector<std::int32_t> remap(
      static_cast<std::size_t>(data.num_classes()), -1);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    remap[static_cast<std::size_t>(classes[i])] = static_cast<std::int32_t>(i);
  }
  std::vector<Eigen::Index> rows;
  for (Eigen::Index j = 0; j < data.num_samples(); ++j) {
    if (remap[static_cast<std::size_t>(data.labels[j])] >= 0) {
      rows.push_back(j);
    }
  }
  if (rows.empty()) {
    throw InvalidInput("run_cil: task has no samples");
  }
  EmbeddingDataset subset;
  subset.image_features.resize(static_cast<Eigen::Index>(rows.size()),
                               data.dim());
  subset.text_anchors.resize(static_cast<Eigen::Index>(classes.size()),
                             data.dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    subset.image_features.row(static_cast<Eigen::Index>(i)) =
        data.image_features.row(rows[i]);
    subset.labels.push_back(
        remap[static_cast<std::size_t>(data.labels[rows[i]])]);
  }
  for (std::size_t i = 0; i < classes.size(); ++i) {
    subset.text_anchors.row(static_cast<Eigen::Index>(i)) =
        data.text_anchors.row(classes[i]);
    if (!data.class_names.empty()) {
      subset.class_names.push_back(
          data.class_names[static_cast<std::size_t>(classes[i])]);
    }
  }
  subset.domain_id = data.domain_id;
  return subset;
}

// Accuracy over rows whose label is in `eval_classes`, scored against the
// anchors of `seen_classes` only (unseen anchors are masked out).
double masked_accuracy(const EmbeddingDataset& data,
                       const UpperTriangular& composite,
                       const std::vector<std::int32_t>& seen_classes,
                       const std::set<std::int32_t>& eval_classes) {
  Eigen::MatrixXd anchors(static_cast<Eigen::Index>(seen_classes.size()),
                          data.dim());
  std::vector<std::int32_t> remap(
      static_cast<std::size_t>(data.num_classes()), -1);
  for (std::size_t i = 0; i < seen_classes.size(); ++i) {
    anchors.row(static_cast<Eigen::Index>(i)) =
        data.text_anchors.row(seen_classes[i]);
    remap[static_cast<std::size_t>(seen_classes[i])] =
        static_cast<std::int32_t>(i);
  }
  Eigen::Index total = 0;
  Eigen::Index correct = 0;
  for (Eigen::Index j = 0; j < data.num_samples(); ++j) {
    if (!eval_classes.count(data.labels[j])) {
      continue;
    }
    ++total;
    const std::int32_t predicted =
        classify(data.image_features.row(j), composite, anchors);
    if (predicted == remap[static_cast<std::size_t>(data.labels[j])]) {
      ++correct;
    }
  }
  if (total == 0) {
    throw InvalidInput("run_cil: no evaluation samples for class subset");
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace

CilResult run_cil(const EmbeddingDataset& data, const CilSchedule& schedule,
                  const TrainConfig& cfg) {
  data.validate();
  schedule.validate(static_cast<std::int32_t>(data.num_classes()));
  cfg.validate();

  CilResult result;
  GeoStack stack(data.dim());
  std::vector<std::int32_t> seen_classes;
  std::set<std::int32_t> task0(schedule.task_classes.front().begin(),
                               schedule.task_classes.front().end());

  for (std::size_t k = 0; k < schedule.task_classes.size(); ++k) {
    const auto& classes = schedule.task_classes[k];
    EmbeddingDataset task_data = restrict_classes(data, classes);
    const std::uint64_t task_seed =
        schedule.seed + static_cast<std::uint64_t>(k);
    EmbeddingDataset shots =
        few_shot_sample(task_data, schedule.shots, task_seed);
    TrainConfig task_cfg = cfg;
    task_cfg.seed = cfg.seed + static_cast<std::uint64_t>(k);
    auto [layer, report] = train_geolayer(shots, task_cfg);
    layer.domain_id = data.domain_id + "/task" + std::to_string(k);
    stack.push(std::move(layer));

    seen_classes.insert(seen_classes.end(), classes.begin(), classes.end());
    std::sort(seen_classes.begin(), seen_classes.end());
    const UpperTriangular composite = compose(stack);
    const std::set<std::int32_t> seen_set(seen_classes.begin(),
                                          seen_classes.end());
    result.global_accuracy.push_back(
        masked_accuracy(data, composite, seen_classes, seen_set));
    result.task0_retention.push_back(
        masked_accuracy(data, composite, seen_classes, task0));
  }
  return result;
}

std::vector<PermutationStats> permutation_test(
    const std::vector<EmbeddingDataset>& domains,
    const std::vector<GeoLayer>& layers, int k_permutations,
    std::uint64_t seed) {
  if (layers.size() < 2) {
    throw InvalidInput("permutation_test: need at least 2 layers");
  }
  if (domains.size() != layers.size()) {
    throw InvalidInput("permutation_test: one domain per layer");
  }

  const std::size_t n = layers.size();
  std::vector<std::vector<int>> orders;
  double factorial = 1.0;
  for (std::size_t i = 2; i <= n; ++i) {
    factorial *= static_cast<double>(i);
  }
  std::vector<int> base(n);
  std::iota(base.begin(), base.end(), 0);
  if (factorial <= 24.0) {
    std::vector<int> perm = base;
    do {
      orders.push_back(perm);
    } while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    if (k_permutations < 1) {
      throw InvalidInput("permutation_test: k_permutations must be >= 1");
    }
    std::mt19937_64 rng(seed);
    for (int t = 0; t < k_permutations; ++t) {
      std::vector<int> perm = base;
      std::shuffle(perm.begin(), perm.end(), rng);
      orders.push_back(std::move(perm));
    }
  }

  std::vector<std::vector<double>> per_domain_acc(n);
  for (const auto& order : orders) {
    const StabilityReport report = run_mda(domains, layers, order);
    for (std::size_t d = 0; d < n; ++d) {
      per_domain_acc[d].push_back(report.domain_accuracy[d]);
    }
  }

  std::vector<PermutationStats> stats;
  for (std::size_t d = 0; d < n; ++d) {
    PermutationStats s;
    s.domain_id = domains[d].domain_id;
    const auto& xs = per_domain_acc[d];
    s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) /
             static_cast<double>(xs.size());
    s.stddev = population_std(xs, s.mean);
    s.range = *std::max_element(xs.begin(), xs.end()) -
              *std::min_element(xs.begin(), xs.end());
    stats.push_back(std::move(s));
  }
  return stats;
}

}  // namespace geostack
