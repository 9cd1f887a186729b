#include "strata/sph_harm.hpp"

#include <algorithm>

namespace strata {

namespace {

// P_l^m(mu) for all l <= L at fixed m, standard stable recurrence
// (no Condon-Shortley phase folded into the normalization below).
void assoc_legendre_column(int L, int m, double mu, std::vector<double>& out) {
  out.assign(L + 1, 0.0);
  if (m > L) return;
  double somx2 = std::sqrt(std::max(0.0, (1.0 - mu) * (1.0 + mu)));
  double pmm = 1.0;
  for (int i = 1; i <= m; ++i) pmm *= (2.0 * i - 1.0) * somx2;
  out[m] = pmm;
  if (m == L) return;
  double pmmp1 = mu * (2.0 * m + 1.0) * pmm;
  out[m + 1] = pmmp1;
  for (int l = m + 2; l <= L; ++l) {
    double p = (mu * (2.0 * l - 1.0) * pmmp1 - (l + m - 1.0) * pmm) / (l - m);
    pmm = pmmp1;
    pmmp1 = p;
    out[l] = p;
  }
}

double norm_lm(int l, int m) {
  double v = (2.0 * l + 1.0) / (4.0 * kPi);
  for (int k = l - m + 1; k <= l + m; ++k) v /= k;
  return std::sqrt(v);
}

}  // namespace

double real_sph_harm(int l, int m, double mu, double phi) {
  int am = std::abs(m);
  std::vector<double> col;
  assoc_legendre_column(l, am, mu, col);
  double base = norm_lm(l, am) * col[l];
  if (m == 0) return base;
  double sq2 = std::sqrt(2.0);
  return m > 0 ? sq2 * base * std::cos(am * phi) : sq2 * base * std::sin(am * phi);
}

double real_sph_harm_dir(int l, int m, const Vec3& dir) {
  Vec3 u = dir.normalized();
  return real_sph_harm(l, m, u.z, std::atan2(u.y, u.x));
}

double ShTable::eval(double mu, double phi) const {
  double acc = 0.0;
  std::vector<double> col;
  double sq2 = std::sqrt(2.0);
  for (int m = 0; m <= band_limit; ++m) {
    assoc_legendre_column(band_limit, m, mu, col);
    double cm = std::cos(m * phi), sm = std::sin(m * phi);
    for (int l = m; l <= band_limit; ++l) {
      double base = norm_lm(l, m) * col[l];
      if (m == 0) {
        acc += at(l, 0) * base;
      } else {
        acc += sq2 * base * (at(l, m) * cm + at(l, -m) * sm);
      }
    }
  }
  return acc;
}

double ShTable::eval_dir(const Vec3& dir) const {
  Vec3 u = dir.normalized();
  return eval(u.z, std::atan2(u.y, u.x));
}

double ShTable::eval_dmu(double mu, double phi, int order) const {
  if (order == 0) return eval(mu, phi);
  // 8th-order central stencil applied recursively; h chosen so the stencil
  // stays inside [-1,1] near the poles.
  double h = 1e-2;
  h = std::min(h, (1.0 - std::abs(mu)) / 5.0 + 1e-3);
  static const double c[4] = {4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0};
  double acc = 0.0;
  for (int k = 1; k <= 4; ++k) {
    acc += c[k - 1] * (eval_dmu(std::min(1.0, mu + k * h), phi, order - 1) -
                       eval_dmu(std::max(-1.0, mu - k * h), phi, order - 1));
  }
  return acc / h;
}

double ShTable::max_abs_coeff() const {
  double m = 0.0;
  for (double c : coeffs) m = std::max(m, std::abs(c));
  return m;
}

double ShTable::l2_norm() const {
  double s = 0.0;
  for (double c : coeffs) s += c * c;
  return std::sqrt(s);
}

}  // namespace strata
