#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace greedydml {

using Index = Eigen::Index;

// Column-major throughout: the greedy selection loop scans whole columns.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

template <class Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LengthMismatch : Error { using Error::Error; };
struct NonFiniteValue : Error { using Error::Error; };
struct EmptyData : Error { using Error::Error; };
struct DegenerateSize : Error { using Error::Error; };
struct AllColumnsZero : Error { using Error::Error; };
struct NumericalBreakdown : Error { using Error::Error; };
struct SingularGram : Error { using Error::Error; };
struct TooFewObservations : Error { using Error::Error; };
struct DegenerateTreatmentVariation : Error { using Error::Error; };
struct WeakIdentification : Error { using Error::Error; };
struct EmptyList : Error { using Error::Error; };
struct DegreeTooLarge : Error { using Error::Error; };
struct ReplicationFailureRate : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct MissingColumn : Error { using Error::Error; };
struct MissingBinding : Error { using Error::Error; };
struct UsageError : Error { using Error::Error; };

/// Greedy-selection tuning knobs. Ties in the argmax/argmin are always
/// broken toward the lowest index.
struct SelectionConfig {
  double c_star = 2.0;     // penalty constant in the information criterion
  double delta_bar = 5.0;  // multiplier in the path-length bound
  std::optional<Index> max_steps_override;
  double ridge_eps = 0.0;  // Gram regularization for the refit
};

struct DmlConfig {
  int k_folds = 5;
  std::uint64_t seed = 0;
  SelectionConfig selection;
  int repetitions = 1;  // split repetitions aggregated by the median rule
  double alpha_level = 0.05;
};

/// Immutable regression sample. X is n x p column-major; y (outcome) and
/// d (treatment) have length n; z (instrument) is optional.
class Dataset {
 public:
  Index n() const { return x_.rows(); }
  Index p() const { return x_.cols(); }
  const Matrix& x() const { return x_; }
  const Vector& y() const { return y_; }
  const Vector& d() const { return d_; }
  const std::optional<Vector>& z() const { return z_; }
  bool has_instrument() const { return z_.has_value(); }

  friend Dataset validate_dataset(Matrix x, Vector y, Vector d,
                                  std::optional<Vector> z);

 private:
  Dataset(Matrix x, Vector y, Vector d, std::optional<Vector> z)
      : x_(std::move(x)), y_(std::move(y)), d_(std::move(d)), z_(std::move(z)) {}

  Matrix x_;
  Vector y_;
  Vector d_;
  std::optional<Vector> z_;
};

/// Checks shapes and finiteness; the only way to construct a Dataset.
inline Dataset validate_dataset(Matrix x, Vector y, Vector d,
                                std::optional<Vector> z = std::nullopt) {
  if (x.rows() == 0 || y.size() == 0 || d.size() == 0)
    throw EmptyData("dataset: empty column");
  if (x.rows() < 2) throw EmptyData("dataset: need at least 2 observations");
  if (x.cols() < 1) throw EmptyData("dataset: need at least 1 regressor");
  const Index n = x.rows();
  if (y.size() != n || d.size() != n || (z && z->size() != n))
    throw LengthMismatch("dataset: column lengths differ");
  if (!x.allFinite() || !y.allFinite() || !d.allFinite() ||
      (z && !z->allFinite()))
    throw NonFiniteValue("dataset: non-finite entry");
  return Dataset(std::move(x), std::move(y), std::move(d), std::move(z));
}

/// Same, building X from separate regressor columns.
inline Dataset validate_dataset(const std::vector<Vector>& x_cols, Vector y,
                                Vector d,
                                std::optional<Vector> z = std::nullopt) {
  if (x_cols.empty()) throw EmptyData("dataset: no regressor columns");
  const Index n = x_cols.front().size();
  for (const Vector& c : x_cols)
    if (c.size() != n) throw LengthMismatch("dataset: column lengths differ");
  Matrix x(n, static_cast<Index>(x_cols.size()));
  for (Index j = 0; j < x.cols(); ++j) x.col(j) = x_cols[static_cast<size_t>(j)];
  return validate_dataset(std::move(x), std::move(y), std::move(d), std::move(z));
}

/// Fitted nuisance regression: greedy support, refit coefficients (dense,
/// zero off support), and the per-size criterion/variance paths.
template <class Scalar>
struct NuisanceFitT {
  std::vector<Index> support;     // selection order, truncated at m_hat
  VectorX<Scalar> coefficients;   // length p
  Index m_hat = 0;
  VectorX<Scalar> hdaic_values;   // one per candidate size
  VectorX<Scalar> sigma_sq_path;  // residual variance per candidate size
};

using NuisanceFit = NuisanceFitT<double>;

/// Per-fold nuisance fits: beta from the treatment (or instrument)
/// projection, gamma from the outcome, zeta from the treatment when an
/// instrument is used.
struct FoldNuisances {
  NuisanceFit beta;
  NuisanceFit gamma;
  std::optional<NuisanceFit> zeta;
};

struct EstimateResult {
  double theta_hat = 0.0;
  double omega_hat = 0.0;
  double std_err = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  Index n_used = 0;
  double alpha_level = 0.05;
  std::optional<std::vector<FoldNuisances>> per_fold_nuisances;
  std::optional<std::vector<int>> fold_assignments;
};

}  // namespace greedydml
