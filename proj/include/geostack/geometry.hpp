#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "geostack/error.hpp"

namespace geostack {

/// Square operator with all strictly-lower entries structurally zero.
/// The zero pattern is enforced on every construction path, never by
/// tolerance checks.
class UpperTriangular {
 public:
  UpperTriangular() = default;

  /// I_d. Throws InvalidInput for d = 0.
  static UpperTriangular Identity(Eigen::Index d);

  /// Zero matrix of size d.
  static UpperTriangular Zero(Eigen::Index d);

  /// Adopts a dense square matrix, zeroing the strictly-lower triangle.
  static UpperTriangular FromDense(Eigen::MatrixXd m);

  Eigen::Index dim() const { return mat_.rows(); }
  const Eigen::MatrixXd& matrix() const { return mat_; }

  double operator()(Eigen::Index i, Eigen::Index j) const { return mat_(i, j); }

  /// Sets entry (i, j); writing below the diagonal is an error.
  void set(Eigen::Index i, Eigen::Index j, double v);

  UpperTriangular operator*(const UpperTriangular& rhs) const;
  UpperTriangular operator+(const UpperTriangular& rhs) const;
  UpperTriangular operator-(const UpperTriangular& rhs) const;
  UpperTriangular operator*(double s) const;

  double frobenius_norm() const { return mat_.norm(); }

 private:
  explicit UpperTriangular(Eigen::MatrixXd m) : mat_(std::move(m)) {}

  Eigen::MatrixXd mat_;
};

/// W - I, the learned perturbation of an identity-initialized operator.
UpperTriangular perturbation(const UpperTriangular& w);

/// I + delta; exact inverse of perturbation().
UpperTriangular add_identity(const UpperTriangular& delta);

/// One trained domain expert plus its training metadata.
struct GeoLayer {
  UpperTriangular weight;
  std::string domain_id;
  double lambda = 0.95;
  double tau = 0.07;
  double raw_oe = 0.0;
  double normalized_oe = 0.0;
  std::int64_t train_seed = 0;
  std::int64_t epochs_trained = 0;

  /// Builds a layer from a weight, computing both OE forms.
  static GeoLayer FromWeight(UpperTriangular w, std::string domain_id = "",
                             double lambda = 0.95, double tau = 0.07,
                             std::int64_t seed = 0, std::int64_t epochs = 0);

  static GeoLayer IdentityLayer(Eigen::Index d, std::string domain_id = "");
};

/// Ordered sequence of layers sharing one dimension. layers[0] is the
/// base, applied leftmost in the product. Empty stacks denote identity.
class GeoStack {
 public:
  explicit GeoStack(Eigen::Index dim);
  explicit GeoStack(std::vector<GeoLayer> layers);

  void push(GeoLayer layer);

  Eigen::Index dim() const { return dim_; }
  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  const GeoLayer& operator[](std::size_t i) const { return layers_[i]; }
  const std::vector<GeoLayer>& layers() const { return layers_; }

 private:
  Eigen::Index dim_;
  std::vector<GeoLayer> layers_;
};

/// d' x d linear head that the stack folds into.
struct Projection {
  Eigen::MatrixXd entries;  // d' rows, d cols

  Eigen::Index rows() const { return entries.rows(); }
  Eigen::Index cols() const { return entries.cols(); }
};

/// Product of all layer weights in stack order (base first). Empty stack
/// yields I.
UpperTriangular compose(const GeoStack& stack);

/// First-order composition I + sum(delta_i) together with the Frobenius
/// norm of its deviation from the exact product.
std::pair<UpperTriangular, double> quasi_additive_approx(const GeoStack& stack);

/// ||W_a W_b - W_b W_a||_F.
double commutator_deviation(const GeoLayer& a, const GeoLayer& b);

/// P_eff = P * compose(stack).
Projection fold(const Projection& p, const GeoStack& stack);

struct OrthogonalityError {
  double raw = 0.0;         // ||W^T W - I||_F^2
  double normalized = 0.0;  // sqrt(raw) / d
};

OrthogonalityError orthogonality_error(const UpperTriangular& w);
OrthogonalityError orthogonality_error(const Eigen::MatrixXd& w);

/// Largest singular value via power iteration on M^T M with a fixed
/// all-ones start vector. Throws ConvergenceError (carrying the last
/// estimate) if the relative change does not fall below tol in time.
double spectral_norm(const Eigen::MatrixXd& m, double tol = 1e-9,
                     int max_iters = 10000);

/// Both sides of the exact identity
/// ||delta + delta^T||_F^2 = 2 ||delta||_F^2 + 2 sum_i d_ii^2.
std::pair<double, double> symmetric_part_identity_check(
    const UpperTriangular& delta);

}  // namespace geostack
