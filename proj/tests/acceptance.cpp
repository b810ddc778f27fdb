#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "greedydml/cli.hpp"
#include "greedydml/dml.hpp"
#include "greedydml/simulate.hpp"
#include "greedydml/table.hpp"
#include "oracle.hpp"

using namespace greedydml;

// End-to-end acceptance runs. Each criterion prints a single PASS/FAIL line
// with the measured quantities; the Monte Carlo scenarios run at their full
// replication counts, so this binary takes a while.

namespace {

constexpr std::uint64_t kAcceptanceSeed = 20260809ull;

int default_jobs() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 2 : static_cast<int>(hw);
}

struct SimKey {
  std::string scenario;
  double c_star;
  int jobs;
  bool operator<(const SimKey& o) const {
    return std::tie(scenario, c_star, jobs) < std::tie(o.scenario, o.c_star, o.jobs);
  }
};

const SimStats& cached_sim(const std::string& scenario, double c_star, int jobs) {
  static std::map<SimKey, SimStats> cache;
  const SimKey key{scenario, c_star, jobs};
  const auto found = cache.find(key);
  if (found != cache.end()) return found->second;

  SimSpec spec = scenario_spec(scenario);
  spec.base_seed = kAcceptanceSeed;
  spec.dml.selection.c_star = c_star;
  const auto start = std::chrono::steady_clock::now();
  SimStats stats = run_monte_carlo(spec, jobs);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cerr << "  [sim] " << scenario << " c*=" << c_star << " jobs=" << jobs
            << " reps=" << stats.replications_used << " took " << secs << "s\n";
  return cache.emplace(key, std::move(stats)).first->second;
}

void report(const std::string& label, bool pass, const std::string& detail) {
  std::cout << "[" << label << "] " << (pass ? "PASS" : "FAIL") << " : " << detail
            << "\n"
            << std::flush;
}

void report(int criterion, bool pass, const std::string& detail) {
  report("criterion " + std::to_string(criterion), pass, detail);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

Matrix random_matrix(Index n, Index p, Rng& rng) {
  Matrix x(n, p);
  for (Index j = 0; j < p; ++j)
    for (Index i = 0; i < n; ++i) x(i, j) = rng.normal();
  return x;
}

Vector random_vector(Index n, Rng& rng) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

}  // namespace

TEST_CASE("criterion 1: cross-fitted sparse design at n=1000") {
  const SimStats& s = cached_sim("table1-sparse-n1000", 2.0, default_jobs());
  const bool bias_ok = std::abs(s.bias) <= 0.005;
  const bool sd_ok = s.sd >= 0.027 && s.sd <= 0.037;
  const bool cov_ok = s.coverage >= 0.925 && s.coverage <= 0.965;
  report(1, bias_ok && sd_ok && cov_ok,
         "bias=" + fmt(s.bias) + " sd=" + fmt(s.sd) + " coverage=" + fmt(s.coverage));
  CHECK(bias_ok);
  CHECK(sd_ok);
  CHECK(cov_ok);
}

TEST_CASE("criterion 2: polynomial-decay bias trend at n=1000") {
  const int jobs = default_jobs();
  const SimStats& s2 = cached_sim("table1-j2-n1000", 2.0, jobs);
  const SimStats& s15 = cached_sim("table1-j1.5-n1000", 2.0, jobs);
  const SimStats& s1 = cached_sim("table1-j1-n1000", 2.0, jobs);

  const bool b2 = std::abs(s2.bias - 0.001) <= 0.006;
  const bool b15 = std::abs(s15.bias - 0.002) <= 0.006;
  const bool b1 = std::abs(s1.bias - 0.014) <= 0.006;
  const bool degradation = s1.coverage < s2.coverage;
  report(2, b2 && b15 && b1 && degradation,
         "bias(j2)=" + fmt(s2.bias) + " bias(j1.5)=" + fmt(s15.bias) +
             " bias(j1)=" + fmt(s1.bias) + " coverage(j1)=" + fmt(s1.coverage) +
             " < coverage(j2)=" + fmt(s2.coverage));
  CHECK(b2);
  CHECK(b15);
  CHECK(b1);
  CHECK(degradation);
}

TEST_CASE("criterion 3: full-sample sparse design at n=1000") {
  const SimStats& s = cached_sim("tableD2-sparse-n1000", 2.0, default_jobs());
  const bool bias_ok = std::abs(s.bias) <= 0.005;
  const bool cov_ok = s.coverage >= 0.92 && s.coverage <= 0.965;
  report(3, bias_ok && cov_ok,
         "bias=" + fmt(s.bias) + " coverage=" + fmt(s.coverage));
  CHECK(bias_ok);
  CHECK(cov_ok);
}

TEST_CASE("criterion 4: instrumental-variable sparse design at n=1000") {
  const SimStats& s = cached_sim("tableD3-sparse-n1000", 2.0, default_jobs());
  const bool bias_ok = std::abs(s.bias) <= 0.006;
  const bool cov_ok = s.coverage >= 0.92 && s.coverage <= 0.97;
  report(4, bias_ok && cov_ok,
         "bias=" + fmt(s.bias) + " coverage=" + fmt(s.coverage));
  CHECK(bias_ok);
  CHECK(cov_ok);
}

TEST_CASE("criterion 5: penalty-constant sensitivity") {
  const int jobs = default_jobs();
  const SimStats& low = cached_sim("table1-j1.5-n1000", 1.8, jobs);
  const SimStats& mid = cached_sim("table1-j1.5-n1000", 2.0, jobs);
  const SimStats& high = cached_sim("table1-j1.5-n1000", 2.2, jobs);

  bool cov_ok = true;
  for (const SimStats* s : {&low, &mid, &high})
    cov_ok = cov_ok && s->coverage >= 0.91 && s->coverage <= 0.965;
  const double spread =
      std::max({low.bias, mid.bias, high.bias}) - std::min({low.bias, mid.bias, high.bias});
  const bool bias_ok = spread <= 0.01;
  report(5, cov_ok && bias_ok,
         "bias={" + fmt(low.bias) + ", " + fmt(mid.bias) + ", " + fmt(high.bias) +
             "} coverage={" + fmt(low.coverage) + ", " + fmt(mid.coverage) + ", " +
             fmt(high.coverage) + "}");
  CHECK(cov_ok);
  CHECK(bias_ok);
}

TEST_CASE("criterion 6: incremental path equals the dense projection oracle") {
  Rng meta(606);
  bool all_ok = true;
  for (int trial = 0; trial < 200; ++trial) {
    const Index n = 20 + static_cast<Index>(meta.bounded(41));  // up to 60
    const Index p = 2 + static_cast<Index>(meta.bounded(9));    // up to 10
    Rng rng(derive_seed(607, static_cast<std::uint64_t>(trial)));
    const Matrix x = random_matrix(n, p, rng);
    const Vector target = random_vector(n, rng);
    const Index m_star = std::min<Index>(p, n - 1);

    const SelectionPath path = oga_order(x, target, m_star);
    const oracle::NaivePath ref = oracle::naive_oga(x, target, m_star);
    bool ok = path.order.size() == ref.order.size();
    for (size_t m = 0; ok && m < ref.order.size(); ++m)
      ok = path.order[m] == ref.order[m];
    for (Index m = 0; ok && m < ref.sigma_sq.size(); ++m)
      ok = std::abs(path.sigma_sq[m] - ref.sigma_sq[m]) <=
           1e-8 * std::max(1.0, std::abs(ref.sigma_sq[m]));
    all_ok = all_ok && ok;
    CHECK(ok);
  }
  report(6, all_ok, "200 random instances, identical order, variances within 1e-8");
}

TEST_CASE("criterion 7: the mean score vanishes at every returned estimate") {
  double worst = 0.0;
  bool all_ok = true;

  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(derive_seed(707, static_cast<std::uint64_t>(trial)));
    const Index n = 80, p = 6;
    const Matrix x = gen_ar1_gaussian(n, p, 0.5, rng);
    Vector beta = random_vector(p, rng) * 0.4;
    Vector gamma = random_vector(p, rng) * 0.4;
    const Vector v = random_vector(n, rng);
    const Vector u = random_vector(n, rng);
    const Vector eta = random_vector(n, rng);
    const Vector z = random_vector(n, rng);

    DmlConfig cfg;
    cfg.k_folds = 2;
    cfg.seed = static_cast<std::uint64_t>(trial);

    const auto relative_score = [&](double num, double den) {
      return den > 0.0 ? std::abs(num) / den : std::abs(num);
    };

    // cross-fitted partially linear
    {
      const Dataset data = assemble_plr(x, v, u, beta, gamma, 0.5);
      const EstimateResult res = plr_estimate(data, cfg);
      double sum = 0.0, abs_sum = 0.0;
      for (Index i = 0; i < n; ++i) {
        const FoldNuisances& fits =
            (*res.per_fold_nuisances)[static_cast<size_t>((*res.fold_assignments)[static_cast<size_t>(i)])];
        const double s = score_plr(data.y()[i], data.d()[i],
                                   x.row(i).dot(fits.gamma.coefficients),
                                   x.row(i).dot(fits.beta.coefficients), res.theta_hat);
        sum += s;
        abs_sum += std::abs(s);
      }
      worst = std::max(worst, relative_score(sum, abs_sum));
    }
    // full-sample variant
    {
      const Dataset data = assemble_plr(x, v, u, beta, gamma, 0.5);
      const EstimateResult res = plr_estimate_nocf(data, cfg);
      const FoldNuisances& fits = (*res.per_fold_nuisances)[0];
      double sum = 0.0, abs_sum = 0.0;
      for (Index i = 0; i < n; ++i) {
        const double s = score_plr(data.y()[i], data.d()[i],
                                   x.row(i).dot(fits.gamma.coefficients),
                                   x.row(i).dot(fits.beta.coefficients), res.theta_hat);
        sum += s;
        abs_sum += std::abs(s);
      }
      worst = std::max(worst, relative_score(sum, abs_sum));
    }
    // instrumental variable
    {
      const Dataset data = assemble_iv(x, z, u, eta, beta, gamma, 0.5, 1.0);
      const EstimateResult res = iv_estimate(data, cfg);
      double sum = 0.0, abs_sum = 0.0;
      for (Index i = 0; i < n; ++i) {
        const FoldNuisances& fits =
            (*res.per_fold_nuisances)[static_cast<size_t>((*res.fold_assignments)[static_cast<size_t>(i)])];
        const double s =
            score_iv(data.y()[i], data.d()[i], (*data.z())[i],
                     x.row(i).dot(fits.gamma.coefficients),
                     x.row(i).dot(fits.zeta->coefficients),
                     x.row(i).dot(fits.beta.coefficients), res.theta_hat);
        sum += s;
        abs_sum += std::abs(s);
      }
      worst = std::max(worst, relative_score(sum, abs_sum));
    }
  }
  all_ok = worst <= 1e-10;
  report(7, all_ok, "worst relative mean score " + fmt(worst * 1e10) + "e-10 over 100 instances x 3 estimators");
  CHECK(all_ok);
}

TEST_CASE("criterion 8: full-support estimate equals partialled-out least squares") {
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(derive_seed(808, static_cast<std::uint64_t>(trial)));
    const Index n = 200, p = 10;
    const Matrix x = gen_ar1_gaussian(n, p, 0.5, rng);
    const Vector beta = random_vector(p, rng) * 0.3;
    const Vector gamma = random_vector(p, rng) * 0.3;
    const Dataset data =
        assemble_plr(x, random_vector(n, rng), random_vector(n, rng), beta, gamma, 0.5);

    DmlConfig cfg;
    cfg.selection.c_star = 0.0;
    cfg.selection.max_steps_override = p;
    const EstimateResult res = plr_estimate_nocf(data, cfg);

    // partial X out of both y and d, then take the simple slope
    const Eigen::ColPivHouseholderQR<Matrix> qr(x);
    const Vector y_res = data.y() - x * qr.solve(data.y());
    const Vector d_res = data.d() - x * qr.solve(data.d());
    const double ref = d_res.dot(y_res) / d_res.squaredNorm();
    worst = std::max(worst, std::abs(res.theta_hat - ref));
  }
  const bool ok = worst <= 1e-8;
  report(8, ok, "max |difference| " + fmt(worst * 1e9) + "e-9 over 100 instances");
  CHECK(ok);
}

TEST_CASE("criterion 9: hermite recurrence versus closed form") {
  // extended-precision accumulation: the alternating closed form cancels
  // catastrophically in double near k = 20
  const auto closed_form = [](int k, double x) {
    long double sum = 0.0L;
    for (int kappa = 0; kappa <= k / 2; ++kappa) {
      long double term = (kappa % 2 == 0 ? 1.0L : -1.0L);
      term /= std::tgamma(kappa + 1.0L) * std::tgamma(k - 2 * kappa + 1.0L);
      term *= std::pow(static_cast<long double>(x), k - 2 * kappa) / std::pow(2.0L, kappa);
      sum += term;
    }
    return static_cast<double>(std::tgamma(k + 1.0L) * sum);
  };

  double worst_rel = 0.0;
  for (int k = 0; k <= 20; ++k) {
    for (int g = 0; g <= 200; ++g) {
      const double x = -5.0 + 10.0 * g / 200.0;
      const double ref = closed_form(k, x);
      const double got = hermite_poly(k, x);
      worst_rel = std::max(worst_rel,
                           std::abs(got - ref) / std::max(1.0, std::abs(ref)));
    }
  }
  double worst_parity = 0.0;
  for (int k = 0; k <= 20; ++k)
    for (int g = 0; g <= 200; ++g) {
      const double x = -5.0 + 10.0 * g / 200.0;
      const double sign = k % 2 == 0 ? 1.0 : -1.0;
      worst_parity = std::max(worst_parity,
                              std::abs(hermite_fn(k, -x) - sign * hermite_fn(k, x)));
    }
  const bool ok = worst_rel <= 1e-9 && worst_parity <= 1e-12;
  report(9, ok, "max relative deviation " + fmt(worst_rel * 1e10) + "e-10, parity gap " +
                    fmt(worst_parity * 1e13) + "e-13");
  CHECK(worst_rel <= 1e-9);
  CHECK(worst_parity <= 1e-12);
}

TEST_CASE("criterion 10: simulation output is independent of the worker count") {
  const int jobs = default_jobs();
  const SimStats& a = cached_sim("table1-sparse-n1000", 2.0, jobs);
  const SimStats& b = cached_sim("table1-sparse-n1000", 2.0, jobs + 3);

  bool identical = a.bias == b.bias && a.sd == b.sd && a.rmse == b.rmse &&
                   a.coverage == b.coverage &&
                   a.per_rep.size() == b.per_rep.size();
  if (identical)
    for (size_t r = 0; r < a.per_rep.size(); ++r)
      identical = identical && a.per_rep[r].theta_hat == b.per_rep[r].theta_hat &&
                  a.per_rep[r].covered == b.per_rep[r].covered;
  report(10, identical, "bit-identical statistics across jobs=" +
                            std::to_string(jobs) + " and jobs=" +
                            std::to_string(jobs + 3));
  CHECK(identical);
}

TEST_CASE("csv round trip: file-based estimate equals the in-memory estimate") {
  // synthetic sample written at full precision, read back through the CSV
  // layer and through the command-line binary
  SimSpec spec;
  spec.n = 120;
  spec.p = 10;
  spec.theta0 = 0.5;
  spec.beta_design = CoefficientDesign::sparse(10, 3, 1.0);
  spec.gamma_design = CoefficientDesign::sparse(10, 3, 0.5);
  spec.zeta_design = spec.beta_design;
  spec.base_seed = 4242;
  const Dataset data = gen_plr_sample(spec, 0);

  const auto csv_path = std::filesystem::temp_directory_path() / "greedydml_accept.csv";
  {
    std::vector<std::string> header = {"y", "d"};
    Matrix cells(data.n(), 2 + data.p());
    cells.col(0) = data.y();
    cells.col(1) = data.d();
    for (Index j = 0; j < data.p(); ++j) {
      header.push_back("x" + std::to_string(j + 1));
      cells.col(2 + j) = data.x().col(j);
    }
    write_csv_file(csv_path.string(), header, cells);
  }

  ColumnBindings bindings;
  bindings.outcome = "y";
  bindings.treatment = "d";
  bindings.control_patterns = {"x*"};
  const Dataset from_file = read_csv(csv_path.string(), bindings);

  const bool bytes_equal = (from_file.x().array() == data.x().array()).all() &&
                           (from_file.y().array() == data.y().array()).all() &&
                           (from_file.d().array() == data.d().array()).all();
  CHECK(bytes_equal);

  DmlConfig cfg;
  cfg.k_folds = 2;
  cfg.seed = 5;
  const EstimateResult mem = plr_estimate(data, cfg);
  const EstimateResult file = plr_estimate(from_file, cfg);
  const bool estimates_equal =
      mem.theta_hat == file.theta_hat && mem.omega_hat == file.omega_hat &&
      mem.ci_low == file.ci_low && mem.ci_high == file.ci_high;
  CHECK(estimates_equal);

  // the installed binary must agree bit-for-bit through its JSON output
  const auto json_path = std::filesystem::temp_directory_path() / "greedydml_accept.json";
  const std::string cmd = std::string(GREEDYDML_CLI_PATH) + " fit --data " +
                          csv_path.string() +
                          " --y y --d d --controls 'x*' --k-folds 2 --seed 5" +
                          " --format json --out " + json_path.string();
  const int code = std::system(cmd.c_str());
  REQUIRE(code == 0);
  std::ifstream in(json_path);
  REQUIRE(in.good());
  const EstimateResult cli_res = nlohmann::json::parse(in).get<EstimateResult>();
  const bool cli_equal = cli_res.theta_hat == mem.theta_hat &&
                         cli_res.omega_hat == mem.omega_hat &&
                         cli_res.ci_low == mem.ci_low &&
                         cli_res.ci_high == mem.ci_high;
  CHECK(cli_equal);
  report("csv-e2e", bytes_equal && estimates_equal && cli_equal,
         "csv ingestion and CLI fit reproduce the in-memory estimate bit-exactly");

  std::filesystem::remove(csv_path);
  std::filesystem::remove(json_path);
}
