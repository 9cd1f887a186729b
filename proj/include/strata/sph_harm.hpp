#pragma once

#include <vector>

#include "strata/types.hpp"

namespace strata {

// Real orthonormal spherical harmonics on S^2.
//
// Convention: Y_{l,0} = N_{l0} P_l(cos th),
//   Y_{l,m} = sqrt(2) N_{lm} P_l^m(cos th) cos(m ph)   (m > 0)
//   Y_{l,-m} = sqrt(2) N_{lm} P_l^m(cos th) sin(m ph)  (m > 0)
// with N_lm = sqrt((2l+1)/(4pi) (l-m)!/(l+m)!), so the family is
// orthonormal in L^2(S^2).
double real_sph_harm(int l, int m, double mu, double phi);  // mu = cos(polar)
double real_sph_harm_dir(int l, int m, const Vec3& dir);

inline int sh_index(int l, int m) { return l * l + l + m; }
inline int sh_count(int band_limit) { return (band_limit + 1) * (band_limit + 1); }

// Dense coefficient table up to a band limit.
struct ShTable {
  int band_limit = 0;
  std::vector<double> coeffs;  // size sh_count(band_limit), sh_index layout

  ShTable() = default;
  explicit ShTable(int L) : band_limit(L), coeffs(sh_count(L), 0.0) {}

  double& at(int l, int m) { return coeffs[sh_index(l, m)]; }
  double at(int l, int m) const { return coeffs[sh_index(l, m)]; }

  double eval(double mu, double phi) const;
  double eval_dir(const Vec3& dir) const;
  // d/dmu and higher derivatives at fixed azimuth, central differences on the
  // analytic evaluation (band-limited, so smooth).
  double eval_dmu(double mu, double phi, int order) const;

  double max_abs_coeff() const;
  double l2_norm() const;  // sqrt(sum of squares) = L^2(S^2) norm
};

}  // namespace strata
