#include "geostack/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace geostack {

namespace {

// Per-row anchor matrix: row j is the anchor of labels[j].
Eigen::MatrixXd row_anchors(const EmbeddingDataset& data) {
  Eigen::MatrixXd t(data.num_samples(), data.dim());
  for (Eigen::Index j = 0; j < data.num_samples(); ++j) {
    t.row(j) = data.text_anchors.row(data.labels[j]);
  }
  return t;
}

double logsumexp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

// Row-normalized copy of u; throws on zero rows.
Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& u,
                               Eigen::VectorXd& norms) {
  Eigen::MatrixXd z = u;
  norms.resize(u.rows());
  for (Eigen::Index j = 0; j < u.rows(); ++j) {
    const double n = u.row(j).norm();
    if (n == 0.0 || !std::isfinite(n)) {
      throw NumericalError("align_loss: transformed row has zero or "
                           "non-finite norm");
    }
    norms(j) = n;
    z.row(j) /= n;
  }
  return z;
}

double align_loss_xt(const Eigen::MatrixXd& w, const Eigen::MatrixXd& x,
                     const Eigen::MatrixXd& t, double tau) {
  if (tau <= 0.0) {
    throw InvalidInput("align_loss: tau must be > 0");
  }
  if (!x.allFinite()) {
    throw InvalidInput("align_loss: non-finite features");
  }
  const Eigen::Index n = x.rows();
  if (n == 0) {
    throw InvalidInput("align_loss: empty batch");
  }
  Eigen::VectorXd norms;
  const Eigen::MatrixXd z = normalize_rows(x * w, norms);
  const Eigen::MatrixXd s = (z * t.transpose()) / tau;  // n x n
  double loss = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    loss -= s(j, j) - logsumexp(s.row(j).transpose());
    loss -= s(j, j) - logsumexp(s.col(j));
  }
  return loss / (2.0 * static_cast<double>(n));
}

// Dense (unmasked) gradient of align_loss_xt with respect to w.
Eigen::MatrixXd align_grad_xt(const Eigen::MatrixXd& w,
                              const Eigen::MatrixXd& x,
                              const Eigen::MatrixXd& t, double tau) {
  const Eigen::Index n = x.rows();
  Eigen::VectorXd norms;
  const Eigen::MatrixXd z = normalize_rows(x * w, norms);
  const Eigen::MatrixXd s = (z * t.transpose()) / tau;

  // dL/dS combines the row-softmax and column-softmax directions.
  Eigen::MatrixXd ds(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double row_lse = logsumexp(s.row(j).transpose());
    for (Eigen::Index k = 0; k < n; ++k) {
      ds(j, k) = std::exp(s(j, k) - row_lse);
    }
  }
  for (Eigen::Index k = 0; k < n; ++k) {
    const double col_lse = logsumexp(s.col(k));
    for (Eigen::Index j = 0; j < n; ++j) {
      ds(j, k) += std::exp(s(j, k) - col_lse);
    }
    ds(k, k) -= 2.0;
  }
  ds /= 2.0 * static_cast<double>(n);

  const Eigen::MatrixXd dz = (ds * t) / tau;  // n x d
  Eigen::MatrixXd du(n, x.cols());
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::RowVectorXd zj = z.row(j);
    const Eigen::RowVectorXd gj = dz.row(j);
    du.row(j) = (gj - (gj.dot(zj)) * zj) / norms(j);
  }
  return x.transpose() * du;
}

// Dense gradient of ||W^T W - I||_F^2.
Eigen::MatrixXd ortho_grad(const Eigen::MatrixXd& w) {
  const Eigen::Index d = w.rows();
  return 4.0 * w * (w.transpose() * w - Eigen::MatrixXd::Identity(d, d));
}

Eigen::MatrixXd coa_grad_xt(const Eigen::MatrixXd& w, const Eigen::MatrixXd& x,
                            const Eigen::MatrixXd& t, const TrainConfig& cfg) {
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(w.rows(), w.cols());
  if (cfg.lambda < 1.0) {
    g += (1.0 - cfg.lambda) * align_grad_xt(w, x, t, cfg.tau);
  }
  if (cfg.lambda > 0.0) {
    g += cfg.lambda * ortho_grad(w);
  }
  return g;
}

}  // namespace

EmbeddingDataset few_shot_sample(const EmbeddingDataset& data, int shots,
                                 std::uint64_t seed) {
  data.validate();
  if (shots < 1) {
    throw InvalidInput("few_shot_sample: shots must be >= 1");
  }
  std::mt19937_64 rng(seed);
  std::vector<Eigen::Index> chosen;
  for (std::int32_t c = 0; c < data.num_classes(); ++c) {
    std::vector<Eigen::Index> members;
    for (Eigen::Index j = 0; j < data.num_samples(); ++j) {
      if (data.labels[j] == c) {
        members.push_back(j);
      }
    }
    std::shuffle(members.begin(), members.end(), rng);
    const std::size_t take =
        std::min<std::size_t>(members.size(), static_cast<std::size_t>(shots));
    members.resize(take);
    std::sort(members.begin(), members.end());
    chosen.insert(chosen.end(), members.begin(), members.end());
  }
  EmbeddingDataset subset;
  subset.image_features.resize(static_cast<Eigen::Index>(chosen.size()),
                               data.dim());
  subset.labels.reserve(chosen.size());
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    subset.image_features.row(static_cast<Eigen::Index>(i)) =
        data.image_features.row(chosen[i]);
    subset.labels.push_back(data.labels[chosen[i]]);
  }
  subset.text_anchors = data.text_anchors;
  subset.class_names = data.class_names;
  subset.domain_id = data.domain_id;
  return subset;
}

double align_loss(const UpperTriangular& w, const EmbeddingDataset& batch,
                  double tau) {
  return align_loss_xt(w.matrix(), batch.image_features, row_anchors(batch),
                       tau);
}

double ortho_loss(const UpperTriangular& w) {
  return orthogonality_error(w).raw;
}

CoaValue coa_loss(const UpperTriangular& w, const EmbeddingDataset& batch,
                  const TrainConfig& cfg) {
  cfg.validate();
  CoaValue v;
  v.align = align_loss(w, batch, cfg.tau);
  v.ortho = ortho_loss(w);
  v.total = (1.0 - cfg.lambda) * v.align + cfg.lambda * v.ortho;
  return v;
}

UpperTriangular coa_gradient(const UpperTriangular& w,
                             const EmbeddingDataset& batch,
                             const TrainConfig& cfg) {
  cfg.validate();
  return UpperTriangular::FromDense(coa_grad_xt(
      w.matrix(), batch.image_features, row_anchors(batch), cfg));
}

AdamState AdamState::Init(Eigen::Index dim) {
  AdamState s;
  s.m = Eigen::MatrixXd::Zero(dim, dim);
  s.v = Eigen::MatrixXd::Zero(dim, dim);
  s.step = 0;
  return s;
}

std::pair<AdamState, UpperTriangular> adamw_step(const AdamState& state,
                                                 const UpperTriangular& w,
                                                 const UpperTriangular& grad,
                                                 const TrainConfig& cfg) {
  if (state.m.rows() != w.dim() || grad.dim() != w.dim()) {
    throw DimensionError("adamw_step: state/weight/gradient dim mismatch");
  }
  AdamState next;
  next.step = state.step + 1;
  next.m = cfg.adam_beta1 * state.m + (1.0 - cfg.adam_beta1) * grad.matrix();
  next.v = cfg.adam_beta2 * state.v +
           (1.0 - cfg.adam_beta2) * grad.matrix().cwiseProduct(grad.matrix());
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, double(next.step));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, double(next.step));
  const Eigen::MatrixXd m_hat = next.m / bc1;
  const Eigen::MatrixXd v_hat = next.v / bc2;
  Eigen::MatrixXd updated =
      w.matrix() -
      cfg.learning_rate *
          (m_hat.array() / (v_hat.array().sqrt() + cfg.adam_eps)).matrix() -
      cfg.learning_rate * cfg.weight_decay * w.matrix();
  return {std::move(next), UpperTriangular::FromDense(std::move(updated))};
}

std::pair<GeoLayer, TrainReport> train_geolayer(const EmbeddingDataset& data,
                                                const TrainConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  cfg.validate();
  data.validate();

  const Eigen::Index d = data.dim();
  UpperTriangular w = UpperTriangular::Identity(d);
  AdamState state = AdamState::Init(d);
  TrainReport report;
  std::mt19937_64 rng(cfg.seed);

  const Eigen::MatrixXd anchors_by_row = row_anchors(data);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(data.num_samples()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(
          order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      const Eigen::Index n = static_cast<Eigen::Index>(end - begin);
      if (n < 2) {
        continue;  // a singleton remainder carries no alignment signal
      }
      Eigen::MatrixXd xb(n, d);
      Eigen::MatrixXd tb(n, d);
      for (Eigen::Index r = 0; r < n; ++r) {
        const Eigen::Index src = order[begin + static_cast<std::size_t>(r)];
        xb.row(r) = data.image_features.row(src);
        tb.row(r) = anchors_by_row.row(src);
      }
      const UpperTriangular grad =
          UpperTriangular::FromDense(coa_grad_xt(w.matrix(), xb, tb, cfg));
      auto [next_state, next_w] = adamw_step(state, w, grad, cfg);
      state = std::move(next_state);
      w = std::move(next_w);
    }
    EpochRecord rec;
    rec.align_loss = align_loss_xt(w.matrix(), data.image_features,
                                   anchors_by_row, cfg.tau);
    rec.ortho_loss = ortho_loss(w);
    rec.raw_oe = rec.ortho_loss;
    rec.coa_loss =
        (1.0 - cfg.lambda) * rec.align_loss + cfg.lambda * rec.ortho_loss;
    if (!std::isfinite(rec.coa_loss)) {
      throw NumericalError("train_geolayer: non-finite loss at epoch " +
                           std::to_string(epoch));
    }
    report.epochs.push_back(rec);
  }

  GeoLayer layer = GeoLayer::FromWeight(
      std::move(w), data.domain_id, cfg.lambda, cfg.tau,
      static_cast<std::int64_t>(cfg.seed), cfg.epochs);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return {std::move(layer), std::move(report)};
}

}  // namespace geostack
