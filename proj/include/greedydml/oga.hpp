#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "greedydml/types.hpp"

namespace greedydml {

// Forward greedy regression: order columns by normalized residual
// correlation, pick the model size by a dimension-penalized information
// criterion, refit least squares on the chosen support. Residuals are
// maintained incrementally through a thin orthonormal factorization;
// no n x n projection matrix is ever formed here (the dense-projection
// variant lives in the test suite as the reference oracle).

/// Relative residual-norm floor below which a candidate column is treated
/// as numerically dependent on the selected ones and dropped from the
/// candidate set for the rest of the path.
inline constexpr double kCollinearityRtol = 1e-12;

template <class Scalar>
struct SelectionPathT {
  std::vector<Index> order;     // selected coordinates, in selection order
  VectorX<Scalar> sigma_sq;     // residual variance after each step
  Scalar sigma_sq_0 = 0;        // ||target||^2 / n before any selection
  VectorX<Scalar> step_gain;    // variance absorbed at each step

  // Thin QR of the selected columns: X[, order] = Q R with Q discarded;
  // R and Q'target are enough to refit any prefix in O(m^2).
  MatrixX<Scalar> r_factor;
  VectorX<Scalar> qt_target;

  Index steps() const { return static_cast<Index>(order.size()); }

  /// Least-squares coefficients of the first m selected columns, scattered
  /// into a dense length-p vector.
  VectorX<Scalar> refit(Index m, Index p) const {
    VectorX<Scalar> beta = VectorX<Scalar>::Zero(p);
    if (m == 0) return beta;
    VectorX<Scalar> b = r_factor.topLeftCorner(m, m)
                            .template triangularView<Eigen::Upper>()
                            .solve(qt_target.head(m));
    for (Index i = 0; i < m; ++i) beta[order[static_cast<size_t>(i)]] = b[i];
    return beta;
  }
};

using SelectionPath = SelectionPathT<double>;

/// Path-length bound: floor(delta_bar * sqrt(n / log p)), clamped to
/// [1, min(p, n-1)]. An explicit override is validated against the same
/// interval and passed through.
inline Index compute_m_star(Index n, Index p, double delta_bar,
                            std::optional<Index> override_steps = std::nullopt) {
  const Index upper = std::min<Index>(p, n - 1);
  if (upper < 1) throw DegenerateSize("compute_m_star: no feasible model size");
  if (override_steps) {
    if (*override_steps < 1 || *override_steps > upper)
      throw DegenerateSize("compute_m_star: override outside [1, min(p, n-1)]");
    return *override_steps;
  }
  const double log_p = std::log(static_cast<double>(p));
  if (!(log_p > 0.0)) return upper;  // p == 1
  const double raw =
      std::floor(delta_bar * std::sqrt(static_cast<double>(n) / log_p));
  if (!(raw < static_cast<double>(upper))) return upper;
  return std::max<Index>(1, static_cast<Index>(raw));
}

/// Greedy ordering of the columns of x against `target`.
///
/// Step m picks the unselected column maximizing |x_j' r| / (sqrt(n) ||x_j||)
/// where r is the current residual (ties to the lowest index), then
/// orthogonalizes and updates the residual. Zero-norm columns never enter;
/// columns that collapse under orthogonalization are dropped and the path
/// may end before m_star steps.
template <class DerivedX, class DerivedT>
SelectionPathT<typename DerivedX::Scalar> oga_order(
    const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedT>& target,
    Index m_star, const SelectionConfig& /*cfg*/ = {}) {
  using Scalar = typename DerivedX::Scalar;
  const Index n = x.rows();
  const Index p = x.cols();
  if (m_star < 1 || m_star > p)
    throw DegenerateSize("oga_order: m_star outside [1, p]");

  VectorX<Scalar> norms(p);
  std::vector<char> eligible(static_cast<size_t>(p));
  bool any_eligible = false;
  for (Index j = 0; j < p; ++j) {
    norms[j] = x.derived().col(j).norm();
    eligible[static_cast<size_t>(j)] = norms[j] > Scalar(0);
    any_eligible |= (norms[j] > Scalar(0));
  }
  if (!any_eligible) throw AllColumnsZero("oga_order: every column has zero norm");

  SelectionPathT<Scalar> path;
  path.sigma_sq_0 = target.squaredNorm() / Scalar(n);
  path.sigma_sq.resize(m_star);
  path.step_gain.resize(m_star);
  path.qt_target.resize(m_star);
  path.r_factor = MatrixX<Scalar>::Zero(m_star, m_star);
  path.order.reserve(static_cast<size_t>(m_star));

  MatrixX<Scalar> q_basis(n, m_star);
  VectorX<Scalar> residual = target;
  VectorX<Scalar> scores(p);
  VectorX<Scalar> column(n), head_coeffs(m_star);
  const Scalar inv_sqrt_n = Scalar(1) / std::sqrt(Scalar(n));

  Index m = 0;
  while (m < m_star) {
    scores.noalias() = x.derived().transpose() * residual;
    for (Index j = 0; j < p; ++j)
      scores[j] = eligible[static_cast<size_t>(j)]
                      ? std::abs(scores[j]) * inv_sqrt_n / norms[j]
                      : Scalar(-1);

    bool accepted = false;
    while (!accepted) {
      Index best = -1;
      Scalar best_score = Scalar(-1);
      for (Index j = 0; j < p; ++j) {
        if (scores[j] > best_score) {
          best_score = scores[j];
          best = j;
        }
      }
      if (best < 0 || best_score < Scalar(0)) break;  // candidates exhausted

      // Orthogonalize against the current basis; a second pass keeps the
      // basis orthonormal to working precision.
      column = x.derived().col(best);
      head_coeffs.head(m).setZero();
      for (int pass = 0; pass < 2; ++pass) {
        for (Index l = 0; l < m; ++l) {
          const Scalar proj = q_basis.col(l).dot(column);
          column.noalias() -= proj * q_basis.col(l);
          head_coeffs[l] += proj;
        }
      }
      const Scalar res_norm = column.norm();
      if (!(res_norm > kCollinearityRtol * norms[best])) {
        eligible[static_cast<size_t>(best)] = false;  // numerically dependent
        scores[best] = Scalar(-1);
        continue;
      }

      q_basis.col(m) = column / res_norm;
      path.r_factor.col(m).head(m) = head_coeffs.head(m);
      path.r_factor(m, m) = res_norm;
      const Scalar absorbed = q_basis.col(m).dot(residual);
      residual.noalias() -= absorbed * q_basis.col(m);
      path.qt_target[m] = absorbed;
      path.step_gain[m] = absorbed * absorbed / Scalar(n);
      path.sigma_sq[m] = residual.squaredNorm() / Scalar(n);
      path.order.push_back(best);
      eligible[static_cast<size_t>(best)] = false;
      accepted = true;
      ++m;
    }
    if (!accepted) break;  // truncated path
  }

  if (m == 0) throw AllColumnsZero("oga_order: no selectable column");
  path.sigma_sq.conservativeResize(m);
  path.step_gain.conservativeResize(m);
  path.qt_target.conservativeResize(m);
  path.r_factor.conservativeResize(m, m);
  return path;
}

/// Criterion values (1 + c_star * m * log(p) / n) * sigma_sq[m-1] for
/// m = 1..steps; natural log, n = size of the sample the path was fit on.
template <class Scalar>
VectorX<Scalar> hdaic_values(const SelectionPathT<Scalar>& path, Index p, Index n,
                             double c_star) {
  if (path.steps() == 0) throw EmptyList("hdaic_values: empty path");
  const Scalar log_p = std::log(static_cast<Scalar>(p));
  VectorX<Scalar> values(path.steps());
  for (Index m = 1; m <= path.steps(); ++m)
    values[m - 1] =
        (Scalar(1) + Scalar(c_star) * Scalar(m) * log_p / Scalar(n)) *
        path.sigma_sq[m - 1];
  return values;
}

/// 1-based argmin; ties resolve to the smaller model.
template <class Scalar>
Index select_model(const VectorX<Scalar>& values) {
  if (values.size() == 0) throw EmptyList("select_model: no criterion values");
  Index best = 0;
  for (Index i = 1; i < values.size(); ++i)
    if (values[i] < values[best]) best = i;
  return best + 1;
}

/// Least squares of `target` on the columns listed in `support`, scattered
/// into a dense length-p vector. ridge_eps > 0 switches to a regularized
/// normal-equations solve.
template <class DerivedX, class DerivedT>
VectorX<typename DerivedX::Scalar> ols_refit(
    const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedT>& target,
    const std::vector<Index>& support, double ridge_eps = 0.0) {
  using Scalar = typename DerivedX::Scalar;
  const Index n = x.rows();
  const Index p = x.cols();
  const Index m = static_cast<Index>(support.size());
  VectorX<Scalar> beta = VectorX<Scalar>::Zero(p);
  if (m == 0) return beta;
  if (m > n) throw SingularGram("ols_refit: more columns than observations");

  MatrixX<Scalar> xs(n, m);
  for (Index i = 0; i < m; ++i)
    xs.col(i) = x.derived().col(support[static_cast<size_t>(i)]);

  VectorX<Scalar> b(m);
  if (ridge_eps == 0.0) {
    Eigen::ColPivHouseholderQR<MatrixX<Scalar>> qr(xs);
    if (qr.rank() < m) throw SingularGram("ols_refit: rank-deficient support");
    b = qr.solve(target.derived());
  } else {
    MatrixX<Scalar> gram = xs.transpose() * xs;
    gram.diagonal().array() += Scalar(ridge_eps);
    Eigen::LDLT<MatrixX<Scalar>> ldlt(gram);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
      throw SingularGram("ols_refit: Gram factorization failed");
    b = ldlt.solve(xs.transpose() * target.derived());
  }
  for (Index i = 0; i < m; ++i) beta[support[static_cast<size_t>(i)]] = b[i];
  return beta;
}

/// Full nuisance fit: path length, greedy ordering, criterion minimization,
/// refit on the chosen prefix.
template <class DerivedX, class DerivedT>
NuisanceFitT<typename DerivedX::Scalar> fit_nuisance(
    const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedT>& target,
    const SelectionConfig& cfg = {}) {
  using Scalar = typename DerivedX::Scalar;
  const Index n = x.rows();
  const Index p = x.cols();
  const Index m_star = compute_m_star(n, p, cfg.delta_bar, cfg.max_steps_override);
  SelectionPathT<Scalar> path = oga_order(x, target, m_star, cfg);
  NuisanceFitT<Scalar> fit;
  fit.hdaic_values = hdaic_values(path, p, n, cfg.c_star);
  fit.m_hat = select_model(fit.hdaic_values);
  fit.support.assign(path.order.begin(),
                     path.order.begin() + static_cast<size_t>(fit.m_hat));
  fit.coefficients = cfg.ridge_eps == 0.0
                         ? path.refit(fit.m_hat, p)
                         : ols_refit(x, target, fit.support, cfg.ridge_eps);
  fit.sigma_sq_path = path.sigma_sq;
  return fit;
}

}  // namespace greedydml
