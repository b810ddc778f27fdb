#pragma once

#include <cstdio>
#include <sstream>
#include <string>

#include <json.hpp>

#include "greedydml/simulate.hpp"
#include "greedydml/types.hpp"

namespace greedydml {

enum class OutputFormat { Csv, Markdown, Json };

namespace detail {

inline std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

inline std::string mhat_summary(const std::vector<FoldNuisances>& folds) {
  std::string beta, gamma, zeta;
  bool has_zeta = false;
  for (size_t k = 0; k < folds.size(); ++k) {
    const char* sep = k ? "/" : "";
    beta += sep + std::to_string(folds[k].beta.m_hat);
    gamma += sep + std::to_string(folds[k].gamma.m_hat);
    if (folds[k].zeta) {
      has_zeta = true;
      zeta += sep + std::to_string(folds[k].zeta->m_hat);
    }
  }
  std::string out = "beta " + beta + "; gamma " + gamma;
  if (has_zeta) out += "; zeta " + zeta;
  return out;
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const SimStats& s) {
  j = nlohmann::json{{"bias", s.bias},
                     {"sd", s.sd},
                     {"rmse", s.rmse},
                     {"coverage", s.coverage},
                     {"replications_used", s.replications_used},
                     {"sd_defined", s.sd_defined}};
}

inline void from_json(const nlohmann::json& j, SimStats& s) {
  j.at("bias").get_to(s.bias);
  j.at("sd").get_to(s.sd);
  j.at("rmse").get_to(s.rmse);
  j.at("coverage").get_to(s.coverage);
  j.at("replications_used").get_to(s.replications_used);
  j.at("sd_defined").get_to(s.sd_defined);
}

inline void to_json(nlohmann::json& j, const EstimateResult& r) {
  j = nlohmann::json{{"theta_hat", r.theta_hat}, {"omega_hat", r.omega_hat},
                     {"std_err", r.std_err},     {"ci_low", r.ci_low},
                     {"ci_high", r.ci_high},     {"n_used", r.n_used},
                     {"alpha_level", r.alpha_level}};
  if (r.per_fold_nuisances) {
    nlohmann::json folds = nlohmann::json::array();
    for (const FoldNuisances& f : *r.per_fold_nuisances) {
      nlohmann::json entry{{"m_hat_beta", f.beta.m_hat},
                           {"m_hat_gamma", f.gamma.m_hat}};
      if (f.zeta) entry["m_hat_zeta"] = f.zeta->m_hat;
      folds.push_back(entry);
    }
    j["fold_model_sizes"] = folds;
  }
}

inline void from_json(const nlohmann::json& j, EstimateResult& r) {
  j.at("theta_hat").get_to(r.theta_hat);
  j.at("omega_hat").get_to(r.omega_hat);
  j.at("std_err").get_to(r.std_err);
  j.at("ci_low").get_to(r.ci_low);
  j.at("ci_high").get_to(r.ci_high);
  Index n = 0;
  j.at("n_used").get_to(n);
  r.n_used = n;
  j.at("alpha_level").get_to(r.alpha_level);
}

/// Simulation summary in the four-column layout (3-decimal fixed for the
/// text formats; JSON carries full precision).
inline std::string emit_table(const SimStats& s, OutputFormat format) {
  std::ostringstream out;
  switch (format) {
    case OutputFormat::Csv:
      out << "bias,sd,rmse,coverage\n"
          << detail::fixed3(s.bias) << "," << detail::fixed3(s.sd) << ","
          << detail::fixed3(s.rmse) << "," << detail::fixed3(s.coverage) << "\n";
      break;
    case OutputFormat::Markdown:
      out << "| Bias | SD | RMSE | Coverage |\n|---|---|---|---|\n"
          << "| " << detail::fixed3(s.bias) << " | " << detail::fixed3(s.sd)
          << " | " << detail::fixed3(s.rmse) << " | "
          << detail::fixed3(s.coverage) << " |\n";
      break;
    case OutputFormat::Json:
      out << nlohmann::json(s).dump(2) << "\n";
      break;
  }
  return out.str();
}

inline std::string emit_table(const EstimateResult& r, OutputFormat format) {
  std::ostringstream out;
  const std::string sizes = r.per_fold_nuisances
                                ? detail::mhat_summary(*r.per_fold_nuisances)
                                : std::string();
  switch (format) {
    case OutputFormat::Csv:
      out << "estimate,se,ci_low,ci_high,n\n"
          << detail::fixed3(r.theta_hat) << "," << detail::fixed3(r.std_err)
          << "," << detail::fixed3(r.ci_low) << "," << detail::fixed3(r.ci_high)
          << "," << r.n_used << "\n";
      break;
    case OutputFormat::Markdown:
      out << "| Estimate (SE) | CI low | CI high | Model sizes |\n"
          << "|---|---|---|---|\n"
          << "| " << detail::fixed3(r.theta_hat) << " ("
          << detail::fixed3(r.std_err) << ") | " << detail::fixed3(r.ci_low)
          << " | " << detail::fixed3(r.ci_high) << " | " << sizes << " |\n";
      break;
    case OutputFormat::Json:
      out << nlohmann::json(r).dump(2) << "\n";
      break;
  }
  return out.str();
}

}  // namespace greedydml
