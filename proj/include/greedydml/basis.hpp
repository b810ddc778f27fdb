#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "greedydml/types.hpp"

namespace greedydml {

enum class BasisKind { PolynomialPower, HermiteFunction };

/// Basis family for a tensor-product control expansion. For PolynomialPower
/// the degree counts raw powers x^1..x^degree; for HermiteFunction it is the
/// top index of psi_0..psi_degree. Hermite inputs are centered and scaled to
/// unit variance first (the Gaussian weight underflows on raw log-scale
/// data); set standardize = false to feed values through untouched.
struct BasisSpec {
  BasisKind kind = BasisKind::HermiteFunction;
  int degree = 9;
  bool include_interactions = false;
  bool standardize = true;
};

/// Probabilists' Hermite polynomial via the three-term recurrence
/// H_{k+1}(x) = x H_k(x) - k H_{k-1}(x).
template <class Scalar>
Scalar hermite_poly(int k, Scalar x) {
  if (k < 0 || k > 30) throw DegreeTooLarge("hermite_poly: degree outside [0, 30]");
  if (k == 0) return Scalar(1);
  Scalar prev = Scalar(1);
  Scalar curr = x;
  for (int i = 1; i < k; ++i) {
    const Scalar next = x * curr - Scalar(i) * prev;
    prev = curr;
    curr = next;
  }
  return curr;
}

/// Hermite function psi_k(x) = exp(-x^2/2) H_k(x).
template <class Scalar>
Scalar hermite_fn(int k, Scalar x) {
  return std::exp(-x * x / Scalar(2)) * hermite_poly(k, x);
}

struct NamedColumn {
  std::string name;
  Vector values;
};

struct BasisExpansion {
  Matrix columns;
  std::vector<std::string> names;
};

namespace detail {

inline Vector standardized(const Vector& v) {
  const double mean = v.mean();
  Vector c = v.array() - mean;
  const double var = c.squaredNorm() / static_cast<double>(c.size());
  if (var > 1e-300) c /= std::sqrt(var);
  return c;
}

// Univariate family for one input column, one output column per term.
inline std::vector<Vector> family_terms(const Vector& raw, const BasisSpec& spec,
                                        std::vector<std::string>& names,
                                        const std::string& base_name) {
  std::vector<Vector> terms;
  if (spec.kind == BasisKind::PolynomialPower) {
    Vector power = Vector::Ones(raw.size());
    for (int d = 1; d <= spec.degree; ++d) {
      power = power.cwiseProduct(raw);
      terms.push_back(power);
      names.push_back(base_name + "^" + std::to_string(d));
    }
  } else {
    const Vector x = spec.standardize ? standardized(raw) : raw;
    for (int k = 0; k <= spec.degree; ++k) {
      Vector col(x.size());
      for (Index i = 0; i < x.size(); ++i) col[i] = hermite_fn(k, x[i]);
      terms.push_back(std::move(col));
      names.push_back("psi" + std::to_string(k) + "(" + base_name + ")");
    }
  }
  return terms;
}

}  // namespace detail

/// Tensor-product design matrix: passthrough columns, dummies, one
/// univariate family per expansion column, then (optionally) all pairwise
/// products between the two families, first-family-major. Interactions
/// require exactly two expansion columns.
inline BasisExpansion expand(const std::vector<NamedColumn>& expansion,
                             const BasisSpec& spec,
                             const std::vector<NamedColumn>& passthrough = {},
                             const std::vector<NamedColumn>& dummies = {}) {
  if (spec.degree < 1) throw DegenerateSize("expand: degree must be >= 1");
  if (expansion.empty()) throw EmptyData("expand: no expansion columns");
  if (spec.include_interactions && expansion.size() != 2)
    throw UsageError("expand: interactions need exactly two expansion columns");

  const Index n = expansion.front().values.size();
  const auto check_len = [&](const std::vector<NamedColumn>& cols) {
    for (const NamedColumn& c : cols)
      if (c.values.size() != n) throw LengthMismatch("expand: column lengths differ");
  };
  check_len(expansion);
  check_len(passthrough);
  check_len(dummies);

  std::vector<std::string> names;
  std::vector<Vector> cols;
  for (const NamedColumn& c : passthrough) {
    cols.push_back(c.values);
    names.push_back(c.name);
  }
  for (const NamedColumn& c : dummies) {
    cols.push_back(c.values);
    names.push_back(c.name);
  }

  std::vector<std::vector<Vector>> families;
  for (const NamedColumn& c : expansion) {
    families.push_back(detail::family_terms(c.values, spec, names, c.name));
    for (Vector& t : families.back()) cols.push_back(t);
  }

  if (spec.include_interactions) {
    const auto& fam_a = families[0];
    const auto& fam_b = families[1];
    const Index base_a = static_cast<Index>(names.size()) -
                         static_cast<Index>(fam_a.size() + fam_b.size());
    for (size_t a = 0; a < fam_a.size(); ++a) {
      for (size_t b = 0; b < fam_b.size(); ++b) {
        cols.push_back(fam_a[a].cwiseProduct(fam_b[b]));
        names.push_back(names[static_cast<size_t>(base_a) + a] + "*" +
                        names[static_cast<size_t>(base_a) + fam_a.size() + b]);
      }
    }
  }

  BasisExpansion out;
  out.columns.resize(n, static_cast<Index>(cols.size()));
  for (size_t j = 0; j < cols.size(); ++j)
    out.columns.col(static_cast<Index>(j)) = cols[j];
  out.names = std::move(names);
  return out;
}

}  // namespace greedydml
