#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

#include "greedydml/oga.hpp"
#include "greedydml/rng.hpp"
#include "greedydml/stats.hpp"
#include "greedydml/types.hpp"

namespace greedydml {

enum class ScoreKind { Plr, Iv };

/// Deterministic balanced partition of observations into folds.
struct FoldPlan {
  std::vector<int> assignments;  // fold id per observation
  int k_folds = 0;

  std::vector<Index> fold_indices(int k) const {
    std::vector<Index> out;
    for (Index i = 0; i < static_cast<Index>(assignments.size()); ++i)
      if (assignments[static_cast<size_t>(i)] == k) out.push_back(i);
    return out;
  }
  std::vector<Index> complement_indices(int k) const {
    std::vector<Index> out;
    for (Index i = 0; i < static_cast<Index>(assignments.size()); ++i)
      if (assignments[static_cast<size_t>(i)] != k) out.push_back(i);
    return out;
  }
};

/// Random balanced split: Fisher-Yates shuffle, then round-robin fold ids.
/// Sizes differ by at most one; the plan is a pure function of (n, k, seed).
inline FoldPlan make_folds(Index n_obs, int k_folds, std::uint64_t seed) {
  if (k_folds < 2) throw TooFewObservations("make_folds: need at least 2 folds");
  if (n_obs < 2 * static_cast<Index>(k_folds))
    throw TooFewObservations("make_folds: need at least 2 observations per fold");
  std::vector<Index> perm(static_cast<size_t>(n_obs));
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng(derive_seed(seed, 0x666F6C64ull));  // dedicated fold stream
  fisher_yates(perm, rng);
  FoldPlan plan;
  plan.k_folds = k_folds;
  plan.assignments.resize(static_cast<size_t>(n_obs));
  for (Index t = 0; t < n_obs; ++t)
    plan.assignments[static_cast<size_t>(perm[static_cast<size_t>(t)])] =
        static_cast<int>(t % k_folds);
  return plan;
}

/// Orthogonal score for the partially linear model:
/// (y - x'gamma - theta (d - x'beta)) (d - x'beta).
inline double score_plr(double y, double d, double x_gamma, double x_beta,
                        double theta) {
  const double v = d - x_beta;
  return (y - x_gamma - theta * v) * v;
}

/// Orthogonal score for the linear IV model:
/// (y - x'gamma - theta (d - x'zeta)) (z - x'beta).
inline double score_iv(double y, double d, double z, double x_gamma,
                       double x_zeta, double x_beta, double theta) {
  return (y - x_gamma - theta * (d - x_zeta)) * (z - x_beta);
}

namespace detail {

inline EstimateResult finish_result(double theta, double omega, Index n_used,
                                    double alpha) {
  EstimateResult res;
  res.theta_hat = theta;
  res.omega_hat = omega;
  res.n_used = n_used;
  res.alpha_level = alpha;
  res.std_err = std::sqrt(omega / static_cast<double>(n_used));
  const double half_width = normal_quantile(1.0 - alpha / 2.0) * res.std_err;
  res.ci_low = theta - half_width;
  res.ci_high = theta + half_width;
  return res;
}

inline void check_fold_feasibility(const FoldPlan& plan, Index n_obs, Index p,
                                   const SelectionConfig& sel) {
  for (int k = 0; k < plan.k_folds; ++k) {
    Index fold_size = 0;
    for (int a : plan.assignments) fold_size += (a == k);
    if (fold_size < 20)
      throw TooFewObservations("cross-fitting: fold size below 20");
    const Index nc = n_obs - fold_size;
    const Index m_star = compute_m_star(nc, p, sel.delta_bar, sel.max_steps_override);
    if (nc < 2 * m_star)
      throw TooFewObservations(
          "cross-fitting: complement sample smaller than twice the path bound");
  }
}

}  // namespace detail

/// Pooled score-root stage shared by the cross-fitted and full-sample
/// estimators: theta solves sum((e - theta v) v) = 0 in closed form, and
/// the variance is the plug-in sandwich of the score.
inline EstimateResult estimate_from_residuals(const Vector& e_hat,
                                              const Vector& v_hat,
                                              double alpha) {
  const Index n = v_hat.size();
  const double v_sq_sum = v_hat.squaredNorm();
  if (v_sq_sum <= 1e-12 * static_cast<double>(n))
    throw DegenerateTreatmentVariation(
        "estimate: residualized treatment has no variation");
  const double theta = v_hat.dot(e_hat) / v_sq_sum;
  const double m_hat = v_sq_sum / static_cast<double>(n);
  const double psi_sq_mean =
      ((e_hat - theta * v_hat).cwiseProduct(v_hat)).squaredNorm() /
      static_cast<double>(n);
  const double omega = psi_sq_mean / (m_hat * m_hat);
  return detail::finish_result(theta, omega, n, alpha);
}

/// IV analogue: theta = sum(w u_y) / sum(w u_d), sandwich with
/// M = mean(u_d w).
inline EstimateResult estimate_from_iv_residuals(const Vector& u_y,
                                                 const Vector& u_d,
                                                 const Vector& w_hat,
                                                 double alpha) {
  const Index n = w_hat.size();
  const double wd_sum = w_hat.dot(u_d);
  if (std::abs(wd_sum) <= 1e-12 * static_cast<double>(n))
    throw WeakIdentification("iv estimate: instrument-treatment moment near zero");
  const double theta = w_hat.dot(u_y) / wd_sum;
  const double m_hat = wd_sum / static_cast<double>(n);
  const double psi_sq_mean =
      ((u_y - theta * u_d).cwiseProduct(w_hat)).squaredNorm() /
      static_cast<double>(n);
  const double omega = psi_sq_mean / (m_hat * m_hat);
  return detail::finish_result(theta, omega, n, alpha);
}

/// Cross-fitted estimate for the partially linear model. Nuisances are fit
/// on each fold's complement and evaluated on the held-out fold; the pooled
/// held-out residuals give the score root and its sandwich variance.
inline EstimateResult plr_estimate(const Dataset& data, const DmlConfig& cfg) {
  const Index n = data.n();
  const Index p = data.p();
  const FoldPlan plan = make_folds(n, cfg.k_folds, cfg.seed);
  detail::check_fold_feasibility(plan, n, p, cfg.selection);

  Vector v_hat(n), e_hat(n);
  std::vector<FoldNuisances> per_fold;
  per_fold.reserve(static_cast<size_t>(cfg.k_folds));
  for (int k = 0; k < cfg.k_folds; ++k) {
    const std::vector<Index> comp = plan.complement_indices(k);
    const std::vector<Index> held = plan.fold_indices(k);
    const Matrix x_comp = data.x()(comp, Eigen::all);
    FoldNuisances fits;
    fits.beta = fit_nuisance(x_comp, data.d()(comp), cfg.selection);
    fits.gamma = fit_nuisance(x_comp, data.y()(comp), cfg.selection);
    const Matrix x_held = data.x()(held, Eigen::all);
    const Vector v_held = data.d()(held) - x_held * fits.beta.coefficients;
    const Vector e_held = data.y()(held) - x_held * fits.gamma.coefficients;
    for (size_t i = 0; i < held.size(); ++i) {
      v_hat[held[i]] = v_held[static_cast<Index>(i)];
      e_hat[held[i]] = e_held[static_cast<Index>(i)];
    }
    per_fold.push_back(std::move(fits));
  }

  EstimateResult res = estimate_from_residuals(e_hat, v_hat, cfg.alpha_level);
  res.per_fold_nuisances = std::move(per_fold);
  res.fold_assignments = plan.assignments;
  return res;
}

/// Cross-fitted estimate for the linear IV model: beta from the instrument
/// projection, zeta from the treatment, gamma from the outcome.
inline EstimateResult iv_estimate(const Dataset& data, const DmlConfig& cfg) {
  if (!data.has_instrument())
    throw MissingBinding("iv estimate: dataset has no instrument column");
  const Index n = data.n();
  const Index p = data.p();
  const Vector& z = *data.z();
  const FoldPlan plan = make_folds(n, cfg.k_folds, cfg.seed);
  detail::check_fold_feasibility(plan, n, p, cfg.selection);

  Vector w_hat(n), u_d(n), u_y(n);
  std::vector<FoldNuisances> per_fold;
  per_fold.reserve(static_cast<size_t>(cfg.k_folds));
  for (int k = 0; k < cfg.k_folds; ++k) {
    const std::vector<Index> comp = plan.complement_indices(k);
    const std::vector<Index> held = plan.fold_indices(k);
    const Matrix x_comp = data.x()(comp, Eigen::all);
    FoldNuisances fits;
    fits.beta = fit_nuisance(x_comp, z(comp), cfg.selection);
    fits.zeta = fit_nuisance(x_comp, data.d()(comp), cfg.selection);
    fits.gamma = fit_nuisance(x_comp, data.y()(comp), cfg.selection);
    const Matrix x_held = data.x()(held, Eigen::all);
    const Vector w_held = z(held) - x_held * fits.beta.coefficients;
    const Vector d_held = data.d()(held) - x_held * fits.zeta->coefficients;
    const Vector y_held = data.y()(held) - x_held * fits.gamma.coefficients;
    for (size_t i = 0; i < held.size(); ++i) {
      w_hat[held[i]] = w_held[static_cast<Index>(i)];
      u_d[held[i]] = d_held[static_cast<Index>(i)];
      u_y[held[i]] = y_held[static_cast<Index>(i)];
    }
    per_fold.push_back(std::move(fits));
  }

  EstimateResult res =
      estimate_from_iv_residuals(u_y, u_d, w_hat, cfg.alpha_level);
  res.per_fold_nuisances = std::move(per_fold);
  res.fold_assignments = plan.assignments;
  return res;
}

/// Full-sample variant: both nuisances fit once on all observations, no
/// splitting. The variance uses the same plug-in sandwich as the
/// cross-fitted estimator, evaluated with full-sample residuals.
inline EstimateResult plr_estimate_nocf(const Dataset& data,
                                        const DmlConfig& cfg) {
  const Index n = data.n();
  const Index p = data.p();
  const Index m_star =
      compute_m_star(n, p, cfg.selection.delta_bar, cfg.selection.max_steps_override);
  if (n < 2 * m_star)
    throw TooFewObservations("estimate: sample smaller than twice the path bound");

  FoldNuisances fits;
  fits.beta = fit_nuisance(data.x(), data.d(), cfg.selection);
  fits.gamma = fit_nuisance(data.x(), data.y(), cfg.selection);
  const Vector v_hat = data.d() - data.x() * fits.beta.coefficients;
  const Vector e_hat = data.y() - data.x() * fits.gamma.coefficients;

  EstimateResult res = estimate_from_residuals(e_hat, v_hat, cfg.alpha_level);
  res.per_fold_nuisances = std::vector<FoldNuisances>{std::move(fits)};
  return res;
}

/// Median aggregation over repeated sample splits: the point estimate is
/// the median of the split estimates and the variance is the median of
/// Omega_s + (theta_s - theta_med)^2, with the interval rebuilt from it.
inline EstimateResult median_adjust(const std::vector<EstimateResult>& results,
                                    Index n_used) {
  if (results.empty()) throw EmptyList("median_adjust: no results");
  if (results.size() == 1) return results.front();
  std::vector<double> thetas, omegas;
  thetas.reserve(results.size());
  omegas.reserve(results.size());
  for (const EstimateResult& r : results) thetas.push_back(r.theta_hat);
  const double theta_med = median(thetas);
  for (const EstimateResult& r : results) {
    const double dev = r.theta_hat - theta_med;
    omegas.push_back(r.omega_hat + dev * dev);
  }
  const double omega_med = median(omegas);
  return detail::finish_result(theta_med, omega_med, n_used,
                               results.front().alpha_level);
}

/// Runs the requested estimator cfg.repetitions times with derived split
/// seeds and median-aggregates. A single repetition uses cfg.seed as-is and
/// returns the raw result untouched.
inline EstimateResult estimate_repeated(const Dataset& data, const DmlConfig& cfg,
                                        ScoreKind kind, bool cross_fit = true) {
  if (!cross_fit && kind == ScoreKind::Iv)
    throw UsageError("estimate: full-sample IV variant is not supported");
  const auto run_one = [&](const DmlConfig& c) {
    if (!cross_fit) return plr_estimate_nocf(data, c);
    return kind == ScoreKind::Plr ? plr_estimate(data, c) : iv_estimate(data, c);
  };
  if (cfg.repetitions <= 1) return run_one(cfg);
  std::vector<EstimateResult> results;
  results.reserve(static_cast<size_t>(cfg.repetitions));
  for (int s = 0; s < cfg.repetitions; ++s) {
    DmlConfig c = cfg;
    c.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(s));
    results.push_back(run_one(c));
  }
  return median_adjust(results, data.n());
}

}  // namespace greedydml
