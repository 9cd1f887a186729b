#pragma once

#include <optional>
#include <string>
#include <vector>

#include "strata/sph_harm.hpp"
#include "strata/types.hpp"

namespace strata {

// ---------------------------------------------------------------------------
// Background sound speed c0(y): piecewise polynomial in y on [-y_M, y_M],
// constant c_minus / c_plus outside, with c_minus >= c_plus.
// ---------------------------------------------------------------------------
struct Layer {
  double y_lo = 0, y_hi = 0;
  std::vector<double> poly_coeffs;  // speed(y) = sum_k a_k y^k

  double speed(double y) const {
    double acc = 0.0;
    for (auto it = poly_coeffs.rbegin(); it != poly_coeffs.rend(); ++it)
      acc = acc * y + *it;
    return acc;
  }
  bool is_constant() const { return poly_coeffs.size() <= 1; }
};

struct StratifiedProfile {
  double c_plus = 1.0;
  double c_minus = 1.0;
  double y_M = 0.0;
  std::vector<Layer> layers;  // ordered, partition [-y_M, y_M]

  double c_m = 0.0, c_M = 0.0;  // declared global bounds (computed on build)

  static StratifiedProfile constant(double c);
  // layers given as (y_lo, y_hi, coeffs); validates partition & bounds
  static StratifiedProfile make(double c_plus, double c_minus, double y_M,
                                std::vector<Layer> layers);

  bool is_constant_profile() const;
  double critical_omega_n() const {  // sqrt(1 - c+^2/c-^2)
    double r = 1.0 - (c_plus * c_plus) / (c_minus * c_minus);
    return r > 0 ? std::sqrt(r) : 0.0;
  }
};

double eval_c0(const StratifiedProfile& p, double y);

// ---------------------------------------------------------------------------
// Homogeneous expansion of c - c0 at infinity: terms gamma_j on the two open
// hemispheres, stored as band-limited real spherical-harmonic tables.
// ---------------------------------------------------------------------------
enum class Hemisphere { Upper, Lower };

struct AngularTerm {
  int order = 0;           // j >= J, homogeneity |z|^{-j}
  Hemisphere hemisphere = Hemisphere::Upper;
  ShTable coeffs;
};

enum class Hypothesis { H1, H2 };

struct PerturbationExpansion {
  int leading_order = 4;  // J
  int dimension = 3;      // n
  std::vector<AngularTerm> terms;

  double r0 = 0.0;        // expansion radius; default 10 * y_M set by caller
  double delta_eq = 0.05; // equator exclusion half-width for evaluations

  // Sum of all stored terms of the given order on the given hemisphere
  // evaluated at direction dir; 0 if no term stored.
  double gamma(int order, const Vec3& dir) const;
  double gamma(int order, Hemisphere h, double mu, double phi) const;
  // d^k/dmu^k of gamma_j at the equator limit from one side
  double gamma_dmu_at_equator(int order, Hemisphere h, double phi, int k) const;
  int max_order() const;
  bool empty() const { return terms.empty(); }
  double sup_abs(int order) const;  // crude sup bound over sample grid
};

struct HypothesisReport {
  std::vector<std::string> violations;
  bool admissible() const { return violations.empty(); }
};

HypothesisReport validate_hypotheses(const StratifiedProfile& profile,
                                     const PerturbationExpansion& pert,
                                     Hypothesis hyp);

// c(z) = c0(y) + sum_{j=J}^{N} gamma_j(z/|z|) |z|^{-j}
double eval_c(const StratifiedProfile& profile, const PerturbationExpansion& pert,
              const Vec3& z, int truncation_order);

struct EffectivePotential {
  const StratifiedProfile* profile = nullptr;
  const PerturbationExpansion* pert = nullptr;
  double lambda = 0.0;
  int truncation_order = 0;

  // V = lambda^2 (c^{-2} - c0^{-2})
  double operator()(const Vec3& z) const;
};

EffectivePotential make_potential(const StratifiedProfile& profile,
                                  const PerturbationExpansion& pert, double lambda,
                                  int truncation_order);

}  // namespace strata
