#include "strata/inverse.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Dense>

namespace strata {

namespace {

double ipow(double b, int e) {
  double r = 1.0;
  for (int i = 0; i < e; ++i) r *= b;
  return r;
}

// periodic cardinal interpolation on a uniform grid over [0, 2pi)
Complex trig_interp(const std::vector<Complex>& f, double xq) {
  int n = (int)f.size();
  double h = 2.0 * kPi / n;
  Complex acc{0, 0};
  for (int j = 0; j < n; ++j) {
    double d = std::remainder(xq - j * h, 2.0 * kPi);
    double ker;
    if (std::abs(d) < 1e-12) {
      ker = 1.0;
    } else {
      ker = std::sin(0.5 * n * d) / (n * std::tan(0.5 * d));
    }
    acc += f[j] * ker;
  }
  return acc;
}

int odd_coeff_count(int L) {
  int c = 0;
  for (int l = 1; l <= L; l += 2) c += 2 * l + 1;
  return c;
}

}  // namespace

double AngularLayer::eval(const Vec3& dir) const {
  Vec3 u = dir.normalized();
  return u.z >= 0 ? upper.eval_dir(u) : lower.eval_dir(u);
}

double weighted_ray_integral(const AngularLayer& W, const Vec3& omega,
                             double theta_tilde, int k, bool folded,
                             int n_nodes) {
  if (k < 2) throw ConfigInvalid("weight exponent k - 2 must be nonnegative");
  GeodesicFrame fr = geodesic_frame(omega.normalized());
  // the fold kinks the integrand where the geodesic meets the equator, so
  // quadrature runs per smooth segment
  std::vector<double> cuts = {0.0, kPi};
  if (folded) {
    try {
      Vec3 tan0 = geodesic_tangent(fr, theta_tilde, 0.0);
      cuts.insert(cuts.begin() + 1,
                  equator_crossing(fr.omega, tan0).s0);
    } catch (const NoCrossing&) {
    }
  }
  double acc = 0.0;
  for (size_t seg = 0; seg + 1 < cuts.size(); ++seg) {
    std::vector<double> xs, ws;
    gauss_legendre_ab(n_nodes, cuts[seg], cuts[seg + 1], xs, ws);
    for (int i = 0; i < n_nodes; ++i) {
      double s = xs[i];
      Vec3 dir = geodesic_point(fr, theta_tilde, s);
      if (folded) dir = fold_even_extension(dir);
      acc += ws[i] * W.eval(dir) * ipow(std::sin(s), k - 2);
    }
  }
  return acc;
}

Vec3 circle_anchor(const Vec3& pole, double t) {
  double h = std::hypot(pole.x, pole.y);
  if (h < 1e-12)
    throw EquatorialEvaluation("circle pole on the vertical axis");
  Vec3 a1{pole.y / h, -pole.x / h, 0.0};
  Vec3 a2 = a1.cross(pole);  // z component +h
  return std::cos(t) * a1 + std::sin(t) * a2;
}

Vec3 circle_tangent(const Vec3& pole, double t) {
  double h = std::hypot(pole.x, pole.y);
  if (h < 1e-12)
    throw EquatorialEvaluation("circle pole on the vertical axis");
  Vec3 a1{pole.y / h, -pole.x / h, 0.0};
  Vec3 a2 = a1.cross(pole);
  return -std::sin(t) * a1 + std::cos(t) * a2;
}

std::vector<Complex> reduce_order(const std::vector<Complex>& I_family, int k) {
  if (k < 4) throw ConfigInvalid("order reduction needs k >= 4");
  int n = (int)I_family.size();
  if (n < 8)
    throw InsufficientFamilyResolution("need at least 8 anchors on the circle");
  // Fourier coefficients by direct DFT (uniform anchors assumed)
  int mmax = n / 2;
  std::vector<Complex> c(2 * mmax + 1);
  double maxc = 0.0;
  for (int m = -mmax; m <= mmax; ++m) {
    Complex acc{0, 0};
    for (int j = 0; j < n; ++j)
      acc += I_family[j] * std::exp(-kI * (m * 2.0 * kPi * j / n));
    c[m + mmax] = acc / double(n);
    maxc = std::max(maxc, std::abs(c[m + mmax]));
  }
  if (n % 2 == 0) {  // split the shared Nyquist mode between +-mmax
    c[0] *= 0.5;
    c[2 * mmax] *= 0.5;
  }
  double tail = std::max(std::abs(c[0]), std::abs(c[2 * mmax]));
  if (maxc > 0 && tail > 1e-3 * maxc)
    throw InsufficientFamilyResolution(
        "family spectrum not resolved at the anchor count");
  double a = double(k - 2), denom = a * (k - 3);
  std::vector<Complex> out(n);
  for (int j = 0; j < n; ++j) {
    Complex acc{0, 0};
    for (int m = -mmax; m <= mmax; ++m) {
      double fac = (a * a - double(m) * m) / denom;
      acc += fac * c[m + mmax] * std::exp(kI * (m * 2.0 * kPi * j / n));
    }
    out[j] = acc;
  }
  return out;
}

Vec3 PoleGrid::dir(int i) const {
  int np = n_phi();
  double m = mu[i / np], p = phi[i % np];
  double h = std::sqrt(std::max(0.0, 1.0 - m * m));
  return {h * std::cos(p), h * std::sin(p), m};
}

double PoleGrid::weight(int i) const {
  return wmu[i / n_phi()] * (2.0 * kPi / n_phi());
}

PoleGrid make_pole_grid(int n_mu, int n_phi) {
  if (n_mu < 1 || n_phi < 1) throw ConfigInvalid("pole grid sizes must be positive");
  PoleGrid g;
  gauss_legendre(n_mu, g.mu, g.wmu);
  g.phi.resize(n_phi);
  for (int i = 0; i < n_phi; ++i) g.phi[i] = 2.0 * kPi * i / n_phi;
  return g;
}

double funk_transform(const ShTable& f, const Vec3& pole, int n_nodes) {
  Vec3 p = pole.normalized();
  double h = std::hypot(p.x, p.y);
  Vec3 a1, a2;
  if (h < 1e-12) {
    a1 = {1, 0, 0};
    a2 = {0, 1, 0};
  } else {
    a1 = {p.y / h, -p.x / h, 0.0};
    a2 = a1.cross(p);
  }
  // trapezoid on the periodic integrand: spectrally accurate
  double acc = 0.0;
  for (int i = 0; i < n_nodes; ++i) {
    double al = 2.0 * kPi * i / n_nodes;
    Vec3 pos = std::cos(al) * a1 + std::sin(al) * a2;
    acc += f.eval_dir(pos);
  }
  return acc * (2.0 * kPi / n_nodes);
}

ShTable funk_invert_even(const PoleGrid& g, const std::vector<double>& G,
                         int band_limit) {
  if ((int)G.size() != g.n()) throw ConfigInvalid("pole grid / data size mismatch");
  if (g.n_mu() < band_limit + 1 || g.n_phi() < 2 * band_limit + 1)
    throw ConfigInvalid("pole grid too coarse for the band limit");
  int n = g.n();
  ShTable out(band_limit);
  int n_circle = std::max(128, 8 * band_limit + 16);
  for (int l = 0; l <= band_limit; l += 2) {
    // multiplier measured on the m = 0 basis harmonic
    ShTable basis(l);
    basis.at(l, 0) = 1.0;
    double num = 0.0, den = 0.0;
    for (int i = 0; i < n; ++i) {
      Vec3 p = g.dir(i);
      double y = real_sph_harm(l, 0, p.z, std::atan2(p.y, p.x));
      num += g.weight(i) * funk_transform(basis, p, n_circle) * y;
      den += g.weight(i) * y * y;
    }
    double mult = num / den;
    if (std::abs(mult) < 1e-12)
      throw DegenerateMultiplier("vanishing transform multiplier at degree " +
                                 std::to_string(l));
    for (int m = -l; m <= l; ++m) {
      double proj = 0.0;
      for (int i = 0; i < n; ++i) {
        Vec3 p = g.dir(i);
        proj += g.weight(i) * G[i] * real_sph_harm(l, m, p.z, std::atan2(p.y, p.x));
      }
      out.at(l, m) = proj / mult;
    }
  }
  return out;
}

ShTable recover_odd_part(const PoleGrid& g, const std::vector<double>& I1,
                         int band_limit, double delta_eq) {
  if ((int)I1.size() != g.n()) throw ConfigInvalid("pole grid / data size mismatch");
  // V = (z_n/|z|) W is even of degree band_limit + 1; its great-circle
  // integral is 2 h Itilde with h the circle's peak height
  std::vector<double> GV(g.n());
  for (int i = 0; i < g.n(); ++i) {
    double m = g.mu[i / g.n_phi()];
    GV[i] = 2.0 * std::sqrt(std::max(0.0, 1.0 - m * m)) * I1[i];
  }
  ShTable V = funk_invert_even(g, GV, band_limit + 1);
  // divide by z_n/|z| off the band and refit the odd harmonics
  int nm = band_limit + 8, np = 2 * band_limit + 7;
  std::vector<double> mus, wmus;
  gauss_legendre(nm, mus, wmus);
  double cut = std::sin(delta_eq);
  int ncoef = odd_coeff_count(band_limit);
  std::vector<std::pair<int, int>> lm;
  for (int l = 1; l <= band_limit; l += 2)
    for (int m = -l; m <= l; ++m) lm.push_back({l, m});
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(ncoef, ncoef);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(ncoef);
  std::vector<double> row(ncoef);
  for (int im = 0; im < nm; ++im) {
    if (std::abs(mus[im]) < cut + 0.02) continue;
    for (int ip = 0; ip < np; ++ip) {
      double ph = 2.0 * kPi * ip / np;
      double w = wmus[im] * (2.0 * kPi / np);
      double val = V.eval(mus[im], ph) / mus[im];
      for (int c = 0; c < ncoef; ++c)
        row[c] = real_sph_harm(lm[c].first, lm[c].second, mus[im], ph);
      for (int c = 0; c < ncoef; ++c) {
        b(c) += w * row[c] * val;
        for (int d = 0; d < ncoef; ++d) A(c, d) += w * row[c] * row[d];
      }
    }
  }
  Eigen::VectorXd sol = A.ldlt().solve(b);
  ShTable out(band_limit);
  for (int c = 0; c < ncoef; ++c) out.at(lm[c].first, lm[c].second) = sol(c);
  return out;
}

RayIntegralData extract_leading_symbol(const ScatteringSymbolData& S,
                                       Complex calibration) {
  RayIntegralData out;
  out.order = S.order;
  Complex base = kI / (2.0 * S.lambda * S.c_branch) * calibration;
  for (size_t fi = 0; fi < S.families.size(); ++fi) {
    const RayFamily& f = S.families[fi];
    RayFamily r;
    r.pole = f.pole;
    r.t = f.t;
    r.I.resize(f.I.size());
    std::vector<char> masked(f.I.size(), 0);
    int usable = 0;
    for (size_t a = 0; a < f.I.size(); ++a) {
      Complex pre = S.prefactor[fi][a];
      if (std::abs(pre) < 1e-10) {
        masked[a] = 1;
        continue;
      }
      r.I[a] = f.I[a] / (pre * base);
      ++usable;
    }
    if (usable == 0)
      throw VanishingCoefficient(
          "every anchor of a circle family lost to a prefactor zero");
    // refill masked anchors by continuity along the family
    for (size_t a = 0; a < f.I.size(); ++a) {
      if (!masked[a]) continue;
      int lo = -1, hi = -1;
      for (int j = (int)a - 1; j >= 0; --j)
        if (!masked[j]) {
          lo = j;
          break;
        }
      for (int j = (int)a + 1; j < (int)f.I.size(); ++j)
        if (!masked[j]) {
          hi = j;
          break;
        }
      if (lo >= 0 && hi >= 0) {
        double u = (f.t[a] - f.t[lo]) / (f.t[hi] - f.t[lo]);
        r.I[a] = (1.0 - u) * r.I[lo] + u * r.I[hi];
      } else {
        r.I[a] = lo >= 0 ? r.I[lo] : r.I[hi];
      }
    }
    out.families.push_back(std::move(r));
  }
  return out;
}

SymbolGrid make_symbol_grid(int n_mu, int n_phi, int n_anchor) {
  if (n_anchor < 1) throw ConfigInvalid("need at least one anchor per circle");
  SymbolGrid g;
  g.poles = make_pole_grid(n_mu, n_phi);
  g.anchor_t.resize(n_anchor);
  // anchors in (0, pi): positive z component, away from the equator band
  for (int a = 0; a < n_anchor; ++a)
    g.anchor_t[a] =
        n_anchor == 1 ? 1.2 : 0.9 + 0.9 * a / double(n_anchor - 1);
  return g;
}

std::vector<ScatteringSymbolData> synthesize_symbols(
    const StratifiedProfile& profile, const PerturbationExpansion& pert,
    double lambda, const SymbolGrid& grid, const std::vector<int>& orders,
    const Numerics& num) {
  std::vector<ScatteringSymbolData> out(orders.size());
  int n_fam = grid.poles.n();
  int n_anc = (int)grid.anchor_t.size();
  for (size_t oi = 0; oi < orders.size(); ++oi) {
    out[oi].order = orders[oi];
    out[oi].prefactor_tag = grid.mode == Branch::T ? 'T' : 'R';
    out[oi].lambda = lambda;
    out[oi].c_branch =
        grid.mode == Branch::T ? profile.c_minus : profile.c_plus;
    out[oi].families.resize(n_fam);
    out[oi].prefactor.assign(n_fam, std::vector<Complex>(n_anc));
    for (int fi = 0; fi < n_fam; ++fi) {
      out[oi].families[fi].pole = grid.poles.dir(fi);
      out[oi].families[fi].t = grid.anchor_t;
      out[oi].families[fi].I.assign(n_anc, Complex{0, 0});
    }
  }
  if (pert.terms.empty()) {
    // no layers, no symbols; still report the branch coefficients so the
    // extraction step can divide them out
    for (int fi = 0; fi < n_fam; ++fi) {
      Vec3 pole = grid.poles.dir(fi);
      for (int a = 0; a < n_anc; ++a) {
        Vec3 omega = circle_anchor(pole, grid.anchor_t[a]);
        PlaneWave1D phi = solve_phi_plus(profile, lambda, omega.z, num);
        Complex pre =
            grid.mode == Branch::T ? phi.coeffs().T : phi.coeffs().R;
        for (size_t oi = 0; oi < orders.size(); ++oi)
          out[oi].prefactor[fi][a] = pre;
      }
    }
    return out;
  }
  int kmax = *std::max_element(orders.begin(), orders.end());
  // matching constants through order kmax - 1 feed the order-kmax symbol
  int N = kmax - pert.leading_order + 1;
  if (N < 1) N = 1;
  for (int fi = 0; fi < n_fam; ++fi) {
    Vec3 pole = grid.poles.dir(fi);
    for (int a = 0; a < n_anc; ++a) {
      Vec3 omega = circle_anchor(pole, grid.anchor_t[a]);
      Vec3 tangent = circle_tangent(pole, grid.anchor_t[a]);
      // the fan compresses azimuthally near grazing incidence; scale the
      // azimuth count with 1/omega_n to keep the interpolation spectral
      Numerics num2 = num;
      int want = (int)std::ceil(48.0 / std::max(omega.z, 0.15));
      want = ((want + 7) / 8) * 8;
      num2.n_psi = std::max(num.n_psi, std::min(want, 320));
      Parametrix st =
          assemble_parametrix(profile, pert, lambda, omega, N, num2);
      double psi_q = equator_crossing(omega, tangent).psi;
      for (size_t oi = 0; oi < orders.size(); ++oi) {
        SymbolFan sf = symbol_fan(st, grid.mode, orders[oi]);
        out[oi].families[fi].I[a] = trig_interp(sf.value, psi_q);
        out[oi].prefactor[fi][a] =
            grid.mode == Branch::T ? st.T_plus : st.R_plus;
      }
    }
  }
  return out;
}

ScatteringSymbolData synthesize_symbol(const StratifiedProfile& profile,
                                       const PerturbationExpansion& pert,
                                       double lambda, const SymbolGrid& grid,
                                       int k, const Numerics& num) {
  return synthesize_symbols(profile, pert, lambda, grid, {k}, num)[0];
}

namespace {

// predicted ray data of a recovered layer, for the per-order residual
double family_misfit(const RayIntegralData& I, const AngularLayer& W, int k) {
  double num = 0.0, den = 0.0;
  for (const RayFamily& f : I.families) {
    for (size_t a = 0; a < f.t.size(); ++a) {
      Vec3 omega = circle_anchor(f.pole, f.t[a]);
      Vec3 tangent = circle_tangent(f.pole, f.t[a]);
      GeodesicFrame fr = geodesic_frame(omega);
      double tt = std::atan2(tangent.dot(fr.e2), tangent.dot(fr.e1));
      double pred = weighted_ray_integral(W, omega, tt, k);
      num += std::norm(f.I[a] - pred);
      den += std::norm(f.I[a]);
    }
  }
  return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

}  // namespace

StripResult layer_strip(const std::vector<ScatteringSymbolData>& S,
                        const StratifiedProfile& profile, double lambda,
                        const SymbolGrid& grid, int band_limit,
                        const Numerics& num, double halt_tol) {
  std::vector<const ScatteringSymbolData*> sorted;
  for (const auto& s : S) sorted.push_back(&s);
  std::sort(sorted.begin(), sorted.end(),
            [](const ScatteringSymbolData* a, const ScatteringSymbolData* b) {
              return a->order < b->order;
            });
  StripResult res;
  res.gamma.dimension = 3;
  res.gamma.r0 = 10.0 * std::max(1.0, profile.y_M);
  res.gamma.delta_eq = num.delta_eq;
  for (const ScatteringSymbolData* sp : sorted) {
    int k = sp->order;
    ScatteringSymbolData data = *sp;
    if (!res.gamma.terms.empty()) {
      // remove what the already-recovered layers contribute at this order
      ScatteringSymbolData synth =
          synthesize_symbol(profile, res.gamma, lambda, grid, k, num);
      for (size_t fi = 0; fi < data.families.size(); ++fi)
        for (size_t a = 0; a < data.families[fi].I.size(); ++a)
          data.families[fi].I[a] -= synth.families[fi].I[a];
    }
    RayIntegralData I = extract_leading_symbol(data, res.calibration);
    int expo = k - 2;
    std::vector<RayFamily>& fams = I.families;
    int kk = k;
    while (expo > 1) {
      for (auto& f : fams) f.I = reduce_order(f.I, kk);
      kk -= 2;
      expo -= 2;
    }
    AngularLayer layer;
    layer.order = k;
    if (expo == 0) {
      // even channel: full-circle integral is twice the half integral
      std::vector<double> G(grid.poles.n());
      for (int fi = 0; fi < grid.poles.n(); ++fi) {
        Complex acc{0, 0};
        for (Complex v : fams[fi].I) acc += v;
        G[fi] = 2.0 * (acc / double(fams[fi].I.size())).real();
      }
      layer.upper = funk_invert_even(grid.poles, G, band_limit);
    } else {
      // odd channel: re-anchor the sin-weighted integral to the equator
      std::vector<double> It(grid.poles.n());
      for (int fi = 0; fi < grid.poles.n(); ++fi) {
        const RayFamily& f = fams[fi];
        if (f.t.size() < 2)
          throw InsufficientFamilyResolution(
              "odd channel needs two anchors per circle");
        double t1 = f.t[0], t2 = f.t[1];
        double det = std::sin(t2 - t1);
        if (std::abs(det) < 1e-6)
          throw InsufficientFamilyResolution("anchors nearly parallel");
        Complex As =
            2.0 * (f.I[0] * std::sin(t2) - f.I[1] * std::sin(t1)) / det;
        It[fi] = 0.5 * As.real();
      }
      layer.upper = recover_odd_part(grid.poles, It, band_limit, num.delta_eq);
    }
    layer.lower = layer.upper;
    double misfit = family_misfit(I, layer, k);
    res.layers.push_back(layer);
    res.order_residual.push_back(misfit);
    // linearized speed relation: W = 2 lambda^2 gamma / c
    AngularTerm term;
    term.order = k;
    term.coeffs = layer.upper;
    double fac = sp->c_branch / (2.0 * lambda * lambda);
    for (double& c : term.coeffs.coeffs) c *= fac;
    term.hemisphere = Hemisphere::Upper;
    res.gamma.terms.push_back(term);
    term.hemisphere = Hemisphere::Lower;
    res.gamma.terms.push_back(term);
    if (res.gamma.terms.size() == 2) res.gamma.leading_order = k;
    if (misfit > halt_tol) break;
  }
  return res;
}

// ---------------------------------------------------------------------------
// 1D Marchenko
// ---------------------------------------------------------------------------

namespace {

struct KernelTable {
  double x0 = 0, h = 0;
  std::vector<double> v;

  double operator()(double x) const {
    double u = (x - x0) / h;
    int i = (int)std::floor(u);
    if (i < 0) i = 0;
    if (i > (int)v.size() - 2) i = (int)v.size() - 2;
    double f = u - i;
    // cubic through four neighbors where available
    if (i >= 1 && i + 2 < (int)v.size()) {
      double a = v[i - 1], b = v[i], c = v[i + 1], d = v[i + 2];
      return b + 0.5 * f * (c - a +
                            f * (2.0 * a - 5.0 * b + 4.0 * c - d +
                                 f * (3.0 * (b - c) + d - a)));
    }
    return v[i] * (1.0 - f) + v[i + 1] * f;
  }
};

}  // namespace

Potential1D marchenko_invert_1d(const std::vector<double>& k,
                                const std::vector<Complex>& R,
                                const std::vector<BoundState>& bound,
                                double y_max, int nystrom) {
  if (k.size() != R.size() || k.empty())
    throw ConfigInvalid("reflection data and k grid sizes must match");
  for (const BoundState& b : bound)
    if (b.kappa <= 0 || b.norming <= 0)
      throw ConfigInvalid("bound-state data must have kappa > 0, norming > 0");
  double Z = 2.0 * y_max + 6.0;
  // kernel F on [2*(-y_max), 2*(y_max + Z)]
  KernelTable F;
  F.x0 = -2.0 * y_max - 1e-9;
  double xe = 2.0 * (y_max + Z);
  double kmax = 0.0;
  for (double ki : k) kmax = std::max(kmax, std::abs(ki));
  int nf = std::max(4096, (int)(24.0 * (xe - F.x0) * kmax / (2.0 * kPi)));
  F.h = (xe - F.x0) / (nf - 1);
  F.v.resize(nf);
  for (int i = 0; i < nf; ++i) {
    double x = F.x0 + i * F.h;
    Complex acc{0, 0};
    for (size_t j = 0; j + 1 < k.size(); ++j) {
      double dk = k[j + 1] - k[j];
      acc += 0.5 * dk *
             (R[j] * std::exp(kI * (k[j] * x)) +
              R[j + 1] * std::exp(kI * (k[j + 1] * x)));
    }
    F.v[i] = acc.real() / (2.0 * kPi);
  }
  // the bound-state exponentials stay analytic: tabulating them would put
  // interpolation ripple on the largest entries of the system
  auto Fe = [&](double x) {
    double f = F(x);
    for (const BoundState& b : bound) f += b.norming * std::exp(-b.kappa * x);
    return f;
  };
  // two guard points per side keep the derivative stencil centered everywhere
  int n_out = 241, pad = 2;
  int n_tot = n_out + 2 * pad;
  double hx = 2.0 * y_max / (n_out - 1);
  std::vector<double> xg(n_tot), diag(n_tot);
  for (int i = 0; i < n_tot; ++i) xg[i] = -y_max + hx * (i - pad);
  int n = nystrom | 1;  // Simpson weights need an odd node count
  Eigen::MatrixXd A(n, n);
  Eigen::VectorXd rhs(n);
  bool cond_checked = false;
  for (int ix = 0; ix < n_tot; ++ix) {
    double x = xg[ix];
    double hs = Z / (n - 1);
    auto wj = [&](int j) {
      if (j == 0 || j == n - 1) return hs / 3.0;
      return (j % 2 == 1) ? 4.0 * hs / 3.0 : 2.0 * hs / 3.0;
    };
    for (int i = 0; i < n; ++i) {
      double si = x + i * hs;
      for (int j = 0; j < n; ++j)
        A(i, j) = (i == j ? 1.0 : 0.0) + wj(j) * Fe(si + (x + j * hs));
      rhs(i) = -Fe(x + si);
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
    if (!cond_checked) {
      cond_checked = true;
      double anorm = A.cwiseAbs().rowwise().sum().maxCoeff();
      double ainv = 0.0;
      std::mt19937 rng(7);
      std::uniform_real_distribution<double> U(-1.0, 1.0);
      for (int trial = 0; trial < 4; ++trial) {
        Eigen::VectorXd b(n);
        for (int i = 0; i < n; ++i) b(i) = U(rng);
        Eigen::VectorXd s = lu.solve(b);
        ainv = std::max(ainv, s.lpNorm<Eigen::Infinity>() /
                                  b.lpNorm<Eigen::Infinity>());
      }
      if (anorm * ainv > 1e10)
        throw IllPosedKernel("layer-equation system condition above 1e10");
    }
    Eigen::VectorXd K = lu.solve(rhs);
    diag[ix] = K(0);
  }
  Potential1D out;
  out.y.resize(n_out);
  out.q.resize(n_out);
  for (int i = 0; i < n_out; ++i) {
    int j = i + pad;
    out.y[i] = xg[j];
    double d = (-diag[j + 2] + 8.0 * diag[j + 1] - 8.0 * diag[j - 1] +
                diag[j - 2]) /
               (12.0 * hx);
    out.q[i] = -2.0 * d;
  }
  double qmax = 0.0;
  for (double q : out.q) qmax = std::max(qmax, std::abs(q));
  out.support_radius = 0.0;
  for (int i = 0; i < n_out; ++i)
    if (std::abs(out.q[i]) > 1e-3 * qmax)
      out.support_radius = std::max(out.support_radius, std::abs(out.y[i]));
  out.bound = bound;
  return out;
}

ProfileEstimate recover_c0_from_coefficients(
    const std::vector<double>& omega_n, const std::vector<Complex>& R_plus,
    double lambda, double c_plus, double c_minus, double y_max, int nystrom) {
  if (c_plus != c_minus)
    throw SteplikeUnsupported(
        "1D recovery implemented for the compact-support case only");
  if (omega_n.size() != R_plus.size() || omega_n.empty())
    throw ConfigInvalid("omega_n grid and R samples must match");
  // symmetric k grid; the layer-equation convention uses the conjugate of the
  // stored reflection coefficient, and R(-k) = conj(R(k))
  size_t m = omega_n.size();
  std::vector<double> k(2 * m);
  std::vector<Complex> R(2 * m);
  for (size_t i = 0; i < m; ++i) {
    double ki = lambda * omega_n[i] / c_plus;
    k[m + i] = ki;
    R[m + i] = std::conj(R_plus[i]);
    k[m - 1 - i] = -ki;
    R[m - 1 - i] = R_plus[i];
  }
  Potential1D pot = marchenko_invert_1d(k, R, {}, y_max, nystrom);
  ProfileEstimate est;
  est.y = pot.y;
  est.c0.resize(pot.y.size());
  for (size_t i = 0; i < pot.y.size(); ++i) {
    double rad = 1.0 / (c_plus * c_plus) - pot.q[i] / (lambda * lambda);
    est.c0[i] = rad > 1e-12 ? 1.0 / std::sqrt(rad) : c_plus;
  }
  est.potential = std::move(pot);
  return est;
}

}  // namespace strata
