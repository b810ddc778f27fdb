#pragma once

#include <atomic>
#include <cmath>
#include <functional>
#include <thread>
#include <vector>

#include "greedydml/dml.hpp"
#include "greedydml/rng.hpp"
#include "greedydml/types.hpp"

namespace greedydml {

/// Coefficient profile for a nuisance parameter vector of length p.
struct CoefficientDesign {
  enum class Kind { Sparse, ExpDecay, PolyDecay };
  Kind kind = Kind::Sparse;
  Index p = 0;
  Index active = 10;    // Sparse: leading nonzero count
  double value = 1.0;   // Sparse: nonzero value
  double alpha = 2.0;   // PolyDecay: j^-alpha

  static CoefficientDesign sparse(Index p, Index active = 10, double value = 1.0) {
    return {Kind::Sparse, p, active, value, 0.0};
  }
  static CoefficientDesign exp_decay(Index p) {
    return {Kind::ExpDecay, p, 0, 0.0, 0.0};
  }
  static CoefficientDesign poly_decay(Index p, double alpha) {
    return {Kind::PolyDecay, p, 0, 0.0, alpha};
  }
};

inline Vector gen_coefficients(const CoefficientDesign& design) {
  if (design.p < 1) throw DegenerateSize("gen_coefficients: p must be >= 1");
  Vector coef = Vector::Zero(design.p);
  switch (design.kind) {
    case CoefficientDesign::Kind::Sparse:
      if (design.active > design.p)
        throw DegenerateSize("gen_coefficients: active count exceeds p");
      coef.head(design.active).setConstant(design.value);
      break;
    case CoefficientDesign::Kind::ExpDecay:
      for (Index j = 0; j < design.p; ++j)
        coef[j] = std::exp(-static_cast<double>(j + 1));
      break;
    case CoefficientDesign::Kind::PolyDecay:
      for (Index j = 0; j < design.p; ++j)
        coef[j] = std::pow(static_cast<double>(j + 1), -design.alpha);
      break;
  }
  return coef;
}

enum class SimModel { Plr, Iv, PlrNoCrossFit };

struct SimSpec {
  SimModel model = SimModel::Plr;
  Index n = 1000;
  Index p = 500;
  double theta0 = 0.5;
  CoefficientDesign beta_design;   // treatment projection (Plr models)
  CoefficientDesign gamma_design;  // outcome projection
  CoefficientDesign zeta_design;   // treatment projection (Iv model)
  double rho = 0.5;                // AR(1) column correlation
  double mu_iv = 1.0;              // instrument strength
  int replications = 1000;
  DmlConfig dml;
  std::uint64_t base_seed = 0;
};

struct RepRecord {
  double theta_hat = 0.0;
  bool covered = false;
  bool ok = false;
};

struct SimStats {
  double bias = 0.0;
  double sd = 0.0;
  double rmse = 0.0;
  double coverage = 0.0;
  int replications_used = 0;
  bool sd_defined = false;  // false when fewer than two usable replications
  std::vector<RepRecord> per_rep;
};

/// Rows i.i.d. N(0, S) with S_jk = rho^|k-j|, generated by the stationary
/// AR(1) recursion across coordinates (exact for this covariance, O(np)).
inline Matrix gen_ar1_gaussian(Index n, Index p, double rho, Rng& rng) {
  Matrix x(n, p);
  const double innovation_sd = std::sqrt(1.0 - rho * rho);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = rng.normal();
    for (Index j = 1; j < p; ++j)
      x(i, j) = rho * x(i, j - 1) + innovation_sd * rng.normal();
  }
  return x;
}

/// Deterministic assembly of the partially linear sample from its pieces;
/// the noise vectors are injectable so identities can be checked exactly.
inline Dataset assemble_plr(const Matrix& x, const Vector& v, const Vector& u,
                            const Vector& beta, const Vector& gamma,
                            double theta0) {
  const Vector d = x * beta + v;
  const Vector y = theta0 * v + x * gamma + u;
  return validate_dataset(x, y, d);
}

/// IV sample: d = mu z + x'zeta + e, y = theta0 (d - x'zeta) + x'gamma + u,
/// with corr(u, e) = 0.5 built from the independent normals u and eta.
inline Dataset assemble_iv(const Matrix& x, const Vector& z, const Vector& u,
                           const Vector& eta, const Vector& zeta,
                           const Vector& gamma, double theta0, double mu) {
  const Vector e = 0.5 * u + std::sqrt(0.75) * eta;
  const Vector d = mu * z + x * zeta + e;
  const Vector y = theta0 * (mu * z + e) + x * gamma + u;
  return validate_dataset(x, y, d, z);
}

namespace detail {

inline Vector draw_normals(Index n, Rng& rng) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

}  // namespace detail

/// Replication seeds derive from (base_seed, rep_index) so any single
/// replication is reproducible in isolation.
inline Dataset gen_plr_sample(const SimSpec& spec, int rep_index) {
  Rng rng(derive_seed(spec.base_seed, static_cast<std::uint64_t>(rep_index)));
  const Matrix x = gen_ar1_gaussian(spec.n, spec.p, spec.rho, rng);
  const Vector v = detail::draw_normals(spec.n, rng);
  const Vector u = detail::draw_normals(spec.n, rng);
  return assemble_plr(x, v, u, gen_coefficients(spec.beta_design),
                      gen_coefficients(spec.gamma_design), spec.theta0);
}

inline Dataset gen_iv_sample(const SimSpec& spec, int rep_index) {
  Rng rng(derive_seed(spec.base_seed, static_cast<std::uint64_t>(rep_index)));
  const Matrix x = gen_ar1_gaussian(spec.n, spec.p, spec.rho, rng);
  const Vector z = detail::draw_normals(spec.n, rng);
  const Vector u = detail::draw_normals(spec.n, rng);
  const Vector eta = detail::draw_normals(spec.n, rng);
  return assemble_iv(x, z, u, eta, gen_coefficients(spec.zeta_design),
                     gen_coefficients(spec.gamma_design), spec.theta0,
                     spec.mu_iv);
}

using Estimator = std::function<EstimateResult(const Dataset&, const DmlConfig&)>;

/// Monte Carlo loop with an injectable estimator (the production entry
/// point below wires the model's own estimator). Replications run
/// independently across `jobs` workers; the reduction is a fixed-order
/// pass over replication indices, so results do not depend on scheduling.
inline SimStats run_monte_carlo_with(const SimSpec& spec, const Estimator& estimator,
                                     int jobs = 1) {
  if (spec.replications < 1)
    throw DegenerateSize("run_monte_carlo: need at least one replication");
  const int reps = spec.replications;
  std::vector<RepRecord> records(static_cast<size_t>(reps));

  const auto run_rep = [&](int r) {
    RepRecord rec;
    try {
      const Dataset data = spec.model == SimModel::Iv ? gen_iv_sample(spec, r)
                                                      : gen_plr_sample(spec, r);
      DmlConfig cfg = spec.dml;
      cfg.seed = derive_seed(derive_seed(spec.base_seed, static_cast<std::uint64_t>(r)), 1);
      const EstimateResult res = estimator(data, cfg);
      rec.theta_hat = res.theta_hat;
      rec.covered = res.ci_low <= spec.theta0 && spec.theta0 <= res.ci_high;
      rec.ok = true;
    } catch (const std::exception&) {
      rec.ok = false;
    }
    records[static_cast<size_t>(r)] = rec;
  };

  const int workers = std::max(1, std::min(jobs, reps));
  if (workers == 1) {
    for (int r = 0; r < reps; ++r) run_rep(r);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (int r = next.fetch_add(1); r < reps; r = next.fetch_add(1)) run_rep(r);
      });
    for (std::thread& t : pool) t.join();
  }

  int failures = 0;
  for (const RepRecord& rec : records) failures += !rec.ok;
  if (failures > 0 &&
      static_cast<double>(failures) >= 0.01 * static_cast<double>(reps))
    throw ReplicationFailureRate("run_monte_carlo: more than 1% of replications failed");

  const int used = reps - failures;
  double mean = 0.0, mean_sq_err = 0.0, covered = 0.0;
  for (const RepRecord& rec : records) {
    if (!rec.ok) continue;
    mean += rec.theta_hat;
    const double err = rec.theta_hat - spec.theta0;
    mean_sq_err += err * err;
    covered += rec.covered ? 1.0 : 0.0;
  }
  mean /= used;
  mean_sq_err /= used;
  covered /= used;

  SimStats stats;
  stats.replications_used = used;
  stats.bias = mean - spec.theta0;
  stats.rmse = std::sqrt(mean_sq_err);
  stats.coverage = covered;
  if (used >= 2) {
    double ss = 0.0;
    for (const RepRecord& rec : records) {
      if (!rec.ok) continue;
      const double dev = rec.theta_hat - mean;
      ss += dev * dev;
    }
    stats.sd = std::sqrt(ss / (used - 1));
    stats.sd_defined = true;
  }
  stats.per_rep = std::move(records);
  return stats;
}

inline SimStats run_monte_carlo(const SimSpec& spec, int jobs = 1) {
  const Estimator estimator = [&spec](const Dataset& data, const DmlConfig& cfg) {
    switch (spec.model) {
      case SimModel::Iv:
        return estimate_repeated(data, cfg, ScoreKind::Iv);
      case SimModel::PlrNoCrossFit:
        return estimate_repeated(data, cfg, ScoreKind::Plr, /*cross_fit=*/false);
      case SimModel::Plr:
      default:
        return estimate_repeated(data, cfg, ScoreKind::Plr);
    }
  };
  return run_monte_carlo_with(spec, estimator, jobs);
}

}  // namespace greedydml
