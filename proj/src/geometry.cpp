#include "geostack/geometry.hpp"

#include <cmath>

namespace geostack {

namespace {

void check_same_dim(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": dimension mismatch (" +
                         std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

void zero_strict_lower(Eigen::MatrixXd& m) {
  const Eigen::Index d = m.rows();
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index i = j + 1; i < d; ++i) {
      m(i, j) = 0.0;
    }
  }
}

}  // namespace

UpperTriangular UpperTriangular::Identity(Eigen::Index d) {
  if (d < 1) {
    throw InvalidInput("UpperTriangular::Identity: dim must be >= 1");
  }
  return UpperTriangular(Eigen::MatrixXd::Identity(d, d));
}

UpperTriangular UpperTriangular::Zero(Eigen::Index d) {
  if (d < 1) {
    throw InvalidInput("UpperTriangular::Zero: dim must be >= 1");
  }
  return UpperTriangular(Eigen::MatrixXd::Zero(d, d));
}

UpperTriangular UpperTriangular::FromDense(Eigen::MatrixXd m) {
  if (m.rows() != m.cols() || m.rows() < 1) {
    throw InvalidInput("UpperTriangular::FromDense: matrix must be square, dim >= 1");
  }
  if (!m.allFinite()) {
    throw InvalidInput("UpperTriangular::FromDense: non-finite entries");
  }
  zero_strict_lower(m);
  return UpperTriangular(std::move(m));
}

void UpperTriangular::set(Eigen::Index i, Eigen::Index j, double v) {
  if (i > j) {
    throw InvalidInput("UpperTriangular::set: write below the diagonal");
  }
  if (!std::isfinite(v)) {
    throw InvalidInput("UpperTriangular::set: non-finite value");
  }
  mat_(i, j) = v;
}

UpperTriangular UpperTriangular::operator*(const UpperTriangular& rhs) const {
  check_same_dim(dim(), rhs.dim(), "UpperTriangular::operator*");
  Eigen::MatrixXd prod = mat_ * rhs.mat_;
  // The product of upper-triangular matrices is upper-triangular in exact
  // arithmetic; re-zero the strict lower triangle so the invariant is
  // structural rather than numeric.
  zero_strict_lower(prod);
  return UpperTriangular(std::move(prod));
}

UpperTriangular UpperTriangular::operator+(const UpperTriangular& rhs) const {
  check_same_dim(dim(), rhs.dim(), "UpperTriangular::operator+");
  return UpperTriangular(mat_ + rhs.mat_);
}

UpperTriangular UpperTriangular::operator-(const UpperTriangular& rhs) const {
  check_same_dim(dim(), rhs.dim(), "UpperTriangular::operator-");
  return UpperTriangular(mat_ - rhs.mat_);
}

UpperTriangular UpperTriangular::operator*(double s) const {
  return UpperTriangular(mat_ * s);
}

UpperTriangular perturbation(const UpperTriangular& w) {
  return UpperTriangular::FromDense(
      w.matrix() - Eigen::MatrixXd::Identity(w.dim(), w.dim()));
}

UpperTriangular add_identity(const UpperTriangular& delta) {
  return UpperTriangular::FromDense(
      delta.matrix() + Eigen::MatrixXd::Identity(delta.dim(), delta.dim()));
}

GeoLayer GeoLayer::FromWeight(UpperTriangular w, std::string domain_id,
                              double lambda, double tau, std::int64_t seed,
                              std::int64_t epochs) {
  GeoLayer layer;
  const OrthogonalityError oe = orthogonality_error(w);
  layer.weight = std::move(w);
  layer.domain_id = std::move(domain_id);
  layer.lambda = lambda;
  layer.tau = tau;
  layer.raw_oe = oe.raw;
  layer.normalized_oe = oe.normalized;
  layer.train_seed = seed;
  layer.epochs_trained = epochs;
  return layer;
}

GeoLayer GeoLayer::IdentityLayer(Eigen::Index d, std::string domain_id) {
  return FromWeight(UpperTriangular::Identity(d), std::move(domain_id));
}

GeoStack::GeoStack(Eigen::Index dim) : dim_(dim) {
  if (dim < 1) {
    throw InvalidInput("GeoStack: dim must be >= 1");
  }
}

GeoStack::GeoStack(std::vector<GeoLayer> layers) : dim_(0) {
  if (layers.empty()) {
    throw InvalidInput("GeoStack: use GeoStack(dim) for empty stacks");
  }
  dim_ = layers.front().weight.dim();
  for (const auto& layer : layers) {
    check_same_dim(dim_, layer.weight.dim(), "GeoStack");
  }
  layers_ = std::move(layers);
}

void GeoStack::push(GeoLayer layer) {
  check_same_dim(dim_, layer.weight.dim(), "GeoStack::push");
  layers_.push_back(std::move(layer));
}

UpperTriangular compose(const GeoStack& stack) {
  UpperTriangular result = UpperTriangular::Identity(stack.dim());
  if (stack.size() == 1) {
    return stack[0].weight;  // bit-exact singleton
  }
  for (const auto& layer : stack.layers()) {
    result = result * layer.weight;
  }
  return result;
}

std::pair<UpperTriangular, double> quasi_additive_approx(const GeoStack& stack) {
  if (stack.empty()) {
    throw InvalidInput("quasi_additive_approx: stack is empty");
  }
  Eigen::MatrixXd sum =
      Eigen::MatrixXd::Identity(stack.dim(), stack.dim());
  for (const auto& layer : stack.layers()) {
    sum += layer.weight.matrix() -
           Eigen::MatrixXd::Identity(stack.dim(), stack.dim());
  }
  UpperTriangular approx = UpperTriangular::FromDense(std::move(sum));
  const double deviation =
      (compose(stack).matrix() - approx.matrix()).norm();
  return {std::move(approx), deviation};
}

double commutator_deviation(const GeoLayer& a, const GeoLayer& b) {
  check_same_dim(a.weight.dim(), b.weight.dim(), "commutator_deviation");
  const Eigen::MatrixXd& wa = a.weight.matrix();
  const Eigen::MatrixXd& wb = b.weight.matrix();
  return (wa * wb - wb * wa).norm();
}

Projection fold(const Projection& p, const GeoStack& stack) {
  check_same_dim(p.cols(), stack.dim(), "fold");
  if (stack.empty()) {
    return p;
  }
  return Projection{p.entries * compose(stack).matrix()};
}

OrthogonalityError orthogonality_error(const Eigen::MatrixXd& w) {
  const Eigen::Index d = w.rows();
  const Eigen::MatrixXd gram_dev =
      w.transpose() * w - Eigen::MatrixXd::Identity(d, d);
  OrthogonalityError oe;
  oe.raw = gram_dev.squaredNorm();
  oe.normalized = std::sqrt(oe.raw) / static_cast<double>(d);
  return oe;
}

OrthogonalityError orthogonality_error(const UpperTriangular& w) {
  return orthogonality_error(w.matrix());
}

double spectral_norm(const Eigen::MatrixXd& m, double tol, int max_iters) {
  if (tol <= 0.0) {
    throw InvalidInput("spectral_norm: tol must be > 0");
  }
  if (max_iters < 1) {
    throw InvalidInput("spectral_norm: max_iters must be >= 1");
  }
  if (m.size() == 0) {
    return 0.0;
  }
  const Eigen::MatrixXd gram = m.transpose() * m;
  const Eigen::Index n = gram.rows();
  Eigen::VectorXd v = Eigen::VectorXd::Ones(n) / std::sqrt(double(n));
  double estimate = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    Eigen::VectorXd next = gram * v;
    const double norm = next.norm();
    if (norm == 0.0) {
      return 0.0;  // start vector is in the kernel of a zero/nilpotent gram
    }
    next /= norm;
    const double rayleigh = next.dot(gram * next);
    const double sigma = std::sqrt(std::max(rayleigh, 0.0));
    const double prev = estimate;
    estimate = sigma;
    v = std::move(next);
    if (it > 0 && std::abs(estimate - prev) <=
                      tol * std::max(std::abs(estimate), 1e-300)) {
      return estimate;
    }
  }
  throw ConvergenceError("spectral_norm: power iteration did not converge",
                         estimate);
}

std::pair<double, double> symmetric_part_identity_check(
    const UpperTriangular& delta) {
  const Eigen::MatrixXd& d = delta.matrix();
  const double lhs = (d + d.transpose()).squaredNorm();
  const double rhs =
      2.0 * d.squaredNorm() + 2.0 * d.diagonal().squaredNorm();
  return {lhs, rhs};
}

}  // namespace geostack
