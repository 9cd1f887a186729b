#include "strata/spectral1d.hpp"

#include <algorithm>
#include <sstream>

namespace strata {

namespace {

// One exact step of -f'' = k2 f: state (v, d) advanced by h.
void apply_step(double k2, double h, Complex& v, Complex& d) {
  double c, s;
  if (k2 > 1e-14) {
    double q = std::sqrt(k2);
    c = std::cos(q * h);
    s = std::sin(q * h) / q;
  } else if (k2 < -1e-14) {
    double a = std::sqrt(-k2);
    c = std::cosh(a * h);
    s = std::sinh(a * h) / a;
  } else {
    c = 1.0;
    s = h;
  }
  Complex nv = c * v + s * d;
  Complex nd = -k2 * s * v + c * d;
  v = nv;
  d = nd;
}

int substeps_for(const Layer& L, double k2_scale) {
  if (L.is_constant()) return 1;
  double len = L.y_hi - L.y_lo;
  double q = std::sqrt(std::max(1.0, std::abs(k2_scale)));
  return std::max(200, int(std::ceil(4.0 * q * len)));
}

// Advance within one layer from ya to yb (either order), substeps anchored at
// the layer's own uniform grid so that forward and backward traversals use the
// same midpoints. Optionally counts real-part sign changes at node boundaries.
void propagate_layer(const Layer& L, double lambda2, double tau2, double ya,
                     double yb, Complex& v, Complex& d, int nsub,
                     int* sign_flips = nullptr,
                     std::vector<double>* ys = nullptr,
                     std::vector<Complex>* vs = nullptr) {
  auto k2_at = [&](double y) {
    double c = L.speed(y);
    return lambda2 / (c * c) - tau2;
  };
  if (L.is_constant()) {
    double k2 = k2_at(0.5 * (L.y_lo + L.y_hi));
    // exact step, but split for zero counting / sampling when requested
    int n = (sign_flips || ys) ? std::max(8, nsub) : 1;
    double h = (yb - ya) / n;
    for (int i = 0; i < n; ++i) {
      double prev = v.real();
      apply_step(k2, h, v, d);
      if (sign_flips && prev * v.real() < 0.0) ++*sign_flips;
      if (ys) {
        ys->push_back(ya + (i + 1) * h);
        vs->push_back(v);
      }
    }
    return;
  }
  double h_full = (L.y_hi - L.y_lo) / nsub;
  bool fwd = yb >= ya;
  // index range of full substeps between ya and yb on the anchored grid
  auto node = [&](int i) { return L.y_lo + i * h_full; };
  double y = ya;
  int i = fwd ? int(std::ceil((ya - L.y_lo) / h_full - 1e-12))
              : int(std::floor((ya - L.y_lo) / h_full + 1e-12));
  while (true) {
    double ynext;
    if (fwd) {
      ynext = (i < nsub && node(i) < yb - 1e-14) ? std::min(node(i), yb) : yb;
    } else {
      ynext = (i > 0 && node(i) > yb + 1e-14) ? std::max(node(i), yb) : yb;
    }
    if (std::abs(ynext - y) > 1e-15) {
      double prev = v.real();
      apply_step(k2_at(0.5 * (y + ynext)), ynext - y, v, d);
      if (sign_flips && prev * v.real() < 0.0) ++*sign_flips;
      if (ys) {
        ys->push_back(ynext);
        vs->push_back(v);
      }
    }
    y = ynext;
    if (std::abs(y - yb) < 1e-15) break;
    i += fwd ? 1 : -1;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Gridded1D
// ---------------------------------------------------------------------------

namespace {
size_t bracket_index(const std::vector<double>& xs, double x) {
  auto it = std::upper_bound(xs.begin(), xs.end(), x);
  size_t i = it == xs.begin() ? 0 : size_t(it - xs.begin()) - 1;
  return std::min(i, xs.size() - 2);
}
}  // namespace

Complex Gridded1D::interp(double yq) const {
  size_t i = bracket_index(y, yq);
  double h = y[i + 1] - y[i], t = (yq - y[i]) / h;
  double t2 = t * t, t3 = t2 * t;
  return (2 * t3 - 3 * t2 + 1) * value[i] + (t3 - 2 * t2 + t) * h * deriv[i] +
         (-2 * t3 + 3 * t2) * value[i + 1] + (t3 - t2) * h * deriv[i + 1];
}

Complex Gridded1D::interp_deriv(double yq) const {
  size_t i = bracket_index(y, yq);
  double h = y[i + 1] - y[i], t = (yq - y[i]) / h;
  double t2 = t * t;
  return ((6 * t2 - 6 * t) * value[i] / h + (3 * t2 - 4 * t + 1) * deriv[i] +
          (-6 * t2 + 6 * t) * value[i + 1] / h + (3 * t2 - 2 * t) * deriv[i + 1]);
}

// ---------------------------------------------------------------------------
// Plane-wave solutions
// ---------------------------------------------------------------------------

PlaneWave1D solve_phi_impl(const StratifiedProfile& p, double lambda,
                           double omega_n, bool from_above, const Numerics& num) {
  if (lambda <= 0.0) throw NonzeroLambdaRequired("lambda > 0 required");
  if (omega_n <= 0.0 || omega_n > 1.0 + 1e-12)
    throw ConfigInvalid("omega_n must lie in (0, 1]");
  if (omega_n < num.delta_crit)
    throw CriticalAngle("omega_n inside the exclusion band around 0");
  double wc = p.critical_omega_n();
  if (from_above && wc > 0.0 && std::abs(omega_n - wc) < num.delta_crit)
    throw CriticalAngle("omega_n inside the exclusion band around the critical value");

  PlaneWave1D w;
  w.profile_ = p;
  w.lambda_ = lambda;
  w.from_above_ = from_above;
  double ci = from_above ? p.c_plus : p.c_minus;  // incident-side speed
  double cf = from_above ? p.c_minus : p.c_plus;
  w.tau2_ = lambda * lambda * (1.0 - omega_n * omega_n) / (ci * ci);
  double l2 = lambda * lambda;
  double q_inc = lambda * omega_n / ci;
  w.k_inc_ = Complex(q_inc, 0.0);
  double kfar2 = l2 / (cf * cf) - w.tau2_;
  Regime regime = Regime::Propagating;
  if (kfar2 >= 0.0) {
    w.k_far_ = Complex(std::sqrt(kfar2), 0.0);
  } else {
    // decaying branch: lambda s_- = -i sqrt(.) so exp(i lambda s_- y) -> 0
    w.k_far_ = Complex(0.0, -std::sqrt(-kfar2));
    regime = Regime::Evanescent;
  }

  double yM = p.y_M;
  Complex v, d;
  std::vector<Complex> bv, bd;
  std::vector<double> by;
  if (from_above) {
    v = std::exp(kI * w.k_far_ * (-yM));
    d = kI * w.k_far_ * v;
    by.push_back(-yM);
    bv.push_back(v);
    bd.push_back(d);
    for (const auto& L : p.layers) {
      propagate_layer(L, l2, w.tau2_, L.y_lo, L.y_hi, v, d,
                      substeps_for(L, l2 / (p.c_m * p.c_m)));
      by.push_back(L.y_hi);
      bv.push_back(v);
      bd.push_back(d);
    }
  } else {
    v = std::exp(-kI * w.k_far_ * yM);
    d = -kI * w.k_far_ * v;
    by.push_back(yM);
    bv.push_back(v);
    bd.push_back(d);
    for (auto it = p.layers.rbegin(); it != p.layers.rend(); ++it) {
      propagate_layer(*it, l2, w.tau2_, it->y_hi, it->y_lo, v, d,
                      substeps_for(*it, l2 / (p.c_m * p.c_m)));
      by.push_back(it->y_lo);
      bv.push_back(v);
      bd.push_back(d);
    }
    std::reverse(by.begin(), by.end());
    std::reverse(bv.begin(), bv.end());
    std::reverse(bd.begin(), bd.end());
  }

  Complex iq = kI * q_inc, A, B;
  if (from_above) {
    A = std::exp(-iq * yM) * 0.5 * (v + d / iq);
    B = std::exp(iq * yM) * 0.5 * (v - d / iq);
  } else {
    A = std::exp(-iq * yM) * 0.5 * (v - d / iq);
    B = std::exp(iq * yM) * 0.5 * (v + d / iq);
  }
  if (std::abs(A) < 1e-300) throw SingularBoundarySystem("vanishing incident amplitude");
  w.rt_.R = B / A;
  w.rt_.T = 1.0 / A;
  w.rt_.omega_n = omega_n;
  w.rt_.lambda = lambda;
  w.rt_.regime = regime;
  for (auto& x : bv) x /= A;
  for (auto& x : bd) x /= A;
  w.break_y_ = std::move(by);
  w.break_v_ = std::move(bv);
  w.break_d_ = std::move(bd);

  double pad = yM > 0 ? 0.5 * yM + 0.5 : 1.0;
  int n = std::max(64, num.n_y);
  w.grid_.y.resize(n);
  w.grid_.value.resize(n);
  w.grid_.deriv.resize(n);
  for (int i = 0; i < n; ++i) {
    double yq = -yM - pad + (2 * yM + 2 * pad) * i / (n - 1);
    w.grid_.y[i] = yq;
    w.grid_.value[i] = w.value(yq);
    w.grid_.deriv[i] = w.deriv(yq);
  }
  return w;
}

PlaneWave1D solve_phi_plus(const StratifiedProfile& p, double lambda,
                           double omega_n, const Numerics& num) {
  return solve_phi_impl(p, lambda, omega_n, true, num);
}

PlaneWave1D solve_phi_minus(const StratifiedProfile& p, double lambda,
                            double omega_n, const Numerics& num) {
  return solve_phi_impl(p, lambda, omega_n, false, num);
}

namespace {
// value and derivative in closed form outside the layered region
void outer_state(const PlaneWave1D& w, const RTCoefficients& rt, Complex k_inc,
                 Complex k_far, bool from_above, double yM, double y, Complex& v,
                 Complex& d) {
  if (from_above) {
    if (y >= yM) {
      Complex e1 = std::exp(kI * k_inc * y), e2 = std::exp(-kI * k_inc * y);
      v = e1 + rt.R * e2;
      d = kI * k_inc * (e1 - rt.R * e2);
    } else {
      Complex e = std::exp(kI * k_far * y);
      v = rt.T * e;
      d = kI * k_far * v;
    }
  } else {
    if (y <= -yM) {
      Complex e1 = std::exp(-kI * k_inc * y), e2 = std::exp(kI * k_inc * y);
      v = e1 + rt.R * e2;
      d = kI * k_inc * (rt.R * e2 - e1);
    } else {
      Complex e = std::exp(-kI * k_far * y);
      v = rt.T * e;
      d = -kI * k_far * v;
    }
  }
}
}  // namespace

Complex PlaneWave1D::value(double y) const {
  Complex v, d;
  double yM = profile_.y_M;
  if (y >= yM - 1e-14 || y <= -yM + 1e-14) {
    outer_state(*this, rt_, k_inc_, k_far_, from_above_, yM, y, v, d);
    return v;
  }
  for (size_t li = 0; li < profile_.layers.size(); ++li) {
    const Layer& L = profile_.layers[li];
    if (y <= L.y_hi + 1e-14) {
      v = break_v_[li];
      d = break_d_[li];
      propagate_layer(L, lambda_ * lambda_, tau2_, L.y_lo, y, v, d,
                      substeps_for(L, lambda_ * lambda_ / (profile_.c_m * profile_.c_m)));
      return v;
    }
  }
  return break_v_.back();
}

Complex PlaneWave1D::deriv(double y) const {
  Complex v, d;
  double yM = profile_.y_M;
  if (y >= yM - 1e-14 || y <= -yM + 1e-14) {
    outer_state(*this, rt_, k_inc_, k_far_, from_above_, yM, y, v, d);
    return d;
  }
  for (size_t li = 0; li < profile_.layers.size(); ++li) {
    const Layer& L = profile_.layers[li];
    if (y <= L.y_hi + 1e-14) {
      v = break_v_[li];
      d = break_d_[li];
      propagate_layer(L, lambda_ * lambda_, tau2_, L.y_lo, y, v, d,
                      substeps_for(L, lambda_ * lambda_ / (profile_.c_m * profile_.c_m)));
      return d;
    }
  }
  return break_d_.back();
}

// ---------------------------------------------------------------------------
// Guided modes
// ---------------------------------------------------------------------------

namespace {

struct ShootResult {
  double W = 0;       // u'(y_M) + alpha_plus u(y_M) after rescaling
  int zeros = 0;      // sign changes of u on (-y_M, y_M)
  Complex u_top, du_top;
};

// Left-decaying shooting solution for -u'' = (E/c0^2 - kappa^2) u.
ShootResult shoot(const StratifiedProfile& p, double kappa, double E,
                  std::vector<double>* ys = nullptr,
                  std::vector<Complex>* us = nullptr) {
  double am = std::sqrt(std::max(0.0, kappa * kappa - E / (p.c_minus * p.c_minus)));
  double ap = std::sqrt(std::max(0.0, kappa * kappa - E / (p.c_plus * p.c_plus)));
  Complex v(1.0, 0.0), d(am, 0.0);
  ShootResult r;
  if (ys) {
    ys->push_back(-p.y_M);
    us->push_back(v);
  }
  // substeps fine enough that q h < 0.5 so at most one zero per node interval
  double q_max = std::sqrt(std::max(1.0, E / (p.c_m * p.c_m)));
  for (const auto& L : p.layers) {
    int nsub = std::max(64, int(std::ceil(8.0 * q_max * (L.y_hi - L.y_lo))));
    if (ys) nsub = 16 * nsub + (nsub & 1 ? 16 : 0);  // dense, even count for Simpson
    propagate_layer(L, E, kappa * kappa, L.y_lo, L.y_hi, v, d, nsub, &r.zeros, ys, us);
    double scale = std::max(std::abs(v), std::abs(d));
    if (scale > 1e100) {
      v /= scale;
      d /= scale;
      if (us)
        for (auto& x : *us) x /= scale;
    }
  }
  r.u_top = v;
  r.du_top = d;
  r.W = d.real() + ap * v.real();
  return r;
}

// Simpson on uniform runs of the grid, trapezoid at spacing changes
double integrate_grid(const std::vector<double>& y, const std::vector<double>& f) {
  double s = 0.0;
  size_t i = 0;
  while (i + 1 < y.size()) {
    double h1 = y[i + 1] - y[i];
    if (i + 2 < y.size() && std::abs((y[i + 2] - y[i + 1]) - h1) < 1e-12 * (1 + h1)) {
      s += h1 / 3.0 * (f[i] + 4.0 * f[i + 1] + f[i + 2]);
      i += 2;
    } else {
      s += 0.5 * h1 * (f[i] + f[i + 1]);
      i += 1;
    }
  }
  return s;
}

std::vector<double> eigenvalues_only(const StratifiedProfile& p, double kappa,
                                     const Numerics& num,
                                     std::vector<int>* zero_counts = nullptr) {
  double E_hi = p.c_plus * p.c_plus * kappa * kappa * (1.0 - 1e-11);
  double E_lo = p.c_m * p.c_m * kappa * kappa * (1.0 + 1e-11);
  std::vector<double> out;
  if (zero_counts) zero_counts->clear();
  if (E_lo >= E_hi || p.layers.empty()) return out;

  // WKB estimate of the count to size the scan grid
  double phase = 0.0;
  int ns = 400;
  for (int i = 0; i < ns; ++i) {
    double y = -p.y_M + (2 * p.y_M) * (i + 0.5) / ns;
    double c = eval_c0(p, y);
    double k2 = E_hi / (c * c) - kappa * kappa;
    if (k2 > 0) phase += std::sqrt(k2) * (2 * p.y_M) / ns;
  }
  int expected = int(phase / kPi) + 2;

  for (int attempt = 0; attempt < 5; ++attempt) {
    int grid = std::max(160, 16 * expected) << attempt;
    out.clear();
    if (zero_counts) zero_counts->clear();
    double prevE = E_lo, prevW = shoot(p, kappa, prevE).W;
    for (int i = 1; i <= grid; ++i) {
      double E = E_lo + (E_hi - E_lo) * double(i) / grid;
      double W = shoot(p, kappa, E).W;
      if (prevW == 0.0 || prevW * W < 0.0) {
        double a = prevE, b = E, Wa = prevW;
        for (int it = 0; it < 200; ++it) {
          double m = 0.5 * (a + b);
          double Wm = shoot(p, kappa, m).W;
          if (Wa * Wm <= 0.0) {
            b = m;
          } else {
            a = m;
            Wa = Wm;
          }
          if ((b - a) <= num.eig_tol_rel * std::abs(m)) break;
        }
        double Ej = 0.5 * (a + b);
        out.push_back(Ej);
        if (zero_counts) zero_counts->push_back(shoot(p, kappa, Ej).zeros);
      }
      prevE = E;
      prevW = W;
    }
    // certification: j-th eigenfunction must have j interior zeros
    std::vector<int> zc;
    if (!zero_counts) {
      for (double Ej : out) zc.push_back(shoot(p, kappa, Ej).zeros);
    } else {
      zc = *zero_counts;
    }
    bool ok = true;
    for (size_t j = 0; j < zc.size(); ++j)
      if (zc[j] != int(j)) ok = false;
    if (ok) return out;
  }
  throw GridResolutionExceeded("eigenvalue scan failed oscillation certification");
}

}  // namespace

int guided_mode_count(const StratifiedProfile& p, double kappa, const Numerics& num) {
  if (kappa <= 0) throw ConfigInvalid("kappa > 0 required");
  return int(eigenvalues_only(p, kappa, num).size());
}

ModeSpectrum guided_modes(const StratifiedProfile& p, double kappa,
                          const Numerics& num) {
  if (kappa <= 0) throw ConfigInvalid("kappa > 0 required");
  ModeSpectrum spec;
  spec.kappa = kappa;
  spec.eigenvalues = eigenvalues_only(p, kappa, num);
  for (double E : spec.eigenvalues) {
    std::vector<double> ys;
    std::vector<Complex> us;
    shoot(p, kappa, E, &ys, &us);
    ModeFunction f;
    f.y = ys;
    f.value.resize(us.size());
    for (size_t i = 0; i < us.size(); ++i) f.value[i] = us[i].real();
    f.decay_plus = std::sqrt(std::max(0.0, kappa * kappa - E / (p.c_plus * p.c_plus)));
    f.decay_minus =
        std::sqrt(std::max(0.0, kappa * kappa - E / (p.c_minus * p.c_minus)));
    // norm in L^2(c0^{-2} dy): quadrature across the layers plus analytic tails
    std::vector<double> integrand(f.y.size());
    for (size_t i = 0; i < f.y.size(); ++i) {
      double c = eval_c0(p, f.y[i]);
      integrand[i] = f.value[i] * f.value[i] / (c * c);
    }
    double s = integrate_grid(f.y, integrand);
    s += f.value.front() * f.value.front() /
         (2.0 * f.decay_minus * p.c_minus * p.c_minus);
    s += f.value.back() * f.value.back() / (2.0 * f.decay_plus * p.c_plus * p.c_plus);
    double nrm = std::sqrt(s);
    for (auto& v : f.value) v /= nrm;
    spec.mode_functions.push_back(std::move(f));
  }
  return spec;
}

double ModeFunction::interp(double yq) const {
  if (yq <= y.front()) return value.front() * std::exp(decay_minus * (yq - y.front()));
  if (yq >= y.back()) return value.back() * std::exp(-decay_plus * (yq - y.back()));
  size_t i = bracket_index(y, yq);
  double t = (yq - y[i]) / (y[i + 1] - y[i]);
  return (1 - t) * value[i] + t * value[i + 1];
}

double mode_inner_product(const StratifiedProfile& p, const ModeFunction& f,
                          const ModeFunction& g) {
  bool same_grid = f.y.size() == g.y.size() && f.y.front() == g.y.front() &&
                   f.y.back() == g.y.back();
  std::vector<double> integrand(f.y.size());
  for (size_t i = 0; i < f.y.size(); ++i) {
    double c = eval_c0(p, f.y[i]);
    double gv = same_grid ? g.value[i] : g.interp(f.y[i]);
    integrand[i] = f.value[i] * gv / (c * c);
  }
  double s = integrate_grid(f.y, integrand);
  s += f.value.front() * g.interp(f.y.front()) /
       ((f.decay_minus + g.decay_minus) * p.c_minus * p.c_minus);
  s += f.value.back() * g.interp(f.y.back()) /
       ((f.decay_plus + g.decay_plus) * p.c_plus * p.c_plus);
  return s;
}

double kappa_of_lambda(const StratifiedProfile& p, double lambda, int j,
                       const Numerics& num) {
  if (lambda <= 0) throw NonzeroLambdaRequired("lambda > 0 required");
  if (j < 1) throw ConfigInvalid("branch index j >= 1 required");
  double l2 = lambda * lambda;
  auto F = [&](double kappa) {
    auto ev = eigenvalues_only(p, kappa, num);
    if (int(ev.size()) >= j) return ev[j - 1] - l2;
    return p.c_plus * p.c_plus * kappa * kappa - l2;
  };
  double ka = lambda / p.c_plus * (1.0 - 1e-9);
  double kb = lambda / p.c_m * (1.0 + 1e-9);
  {
    auto ev = eigenvalues_only(p, kb, num);
    if (int(ev.size()) < j)
      throw BelowThreshold("lambda below the threshold of the requested branch");
  }
  double Fa = F(ka);
  if (Fa > 0) throw BelowThreshold("lambda below the threshold of the requested branch");
  for (int it = 0; it < 200; ++it) {
    double m = 0.5 * (ka + kb);
    if (F(m) <= 0.0) {
      ka = m;
    } else {
      kb = m;
    }
    if ((kb - ka) <= num.eig_tol_rel * m) break;
  }
  return 0.5 * (ka + kb);
}

Thresholds thresholds(const StratifiedProfile& p, double lambda,
                      const Numerics& num) {
  if (lambda <= 0) throw NonzeroLambdaRequired("lambda > 0 required");
  Thresholds out;
  double k_at = lambda / p.c_plus;
  int count = int(eigenvalues_only(p, k_at, num).size());
  out.channel_count = count;
  for (int j = 1; j <= count; ++j) {
    // branch birth kappa*: smallest kappa with at least j eigenvalues
    double ka = 1e-8 * k_at, kb = k_at;
    if (int(eigenvalues_only(p, ka, num).size()) >= j) {
      out.t.push_back(p.c_plus * p.c_plus * ka * ka);
      continue;
    }
    for (int it = 0; it < 120; ++it) {
      double m = 0.5 * (ka + kb);
      if (int(eigenvalues_only(p, m, num).size()) >= j) {
        kb = m;
      } else {
        ka = m;
      }
      if ((kb - ka) <= 1e-10 * m) break;
    }
    double ks = 0.5 * (ka + kb);
    out.t.push_back(p.c_plus * p.c_plus * ks * ks);
  }
  std::sort(out.t.begin(), out.t.end());
  return out;
}

// ---------------------------------------------------------------------------
// Generic Schrodinger reflection for compactly supported potentials
// ---------------------------------------------------------------------------

Complex schrodinger_reflection(const std::function<double(double)>& q, double y_lo,
                               double y_hi, double k, int steps) {
  if (k <= 0) throw NonzeroLambdaRequired("wavenumber k > 0 required");
  Complex v = std::exp(kI * k * y_lo);
  Complex d = kI * k * v;
  double h = (y_hi - y_lo) / steps;
  for (int i = 0; i < steps; ++i) {
    double ym = y_lo + (i + 0.5) * h;
    apply_step(k * k - q(ym), h, v, d);
  }
  Complex iq = kI * k;
  Complex A = std::exp(-iq * y_hi) * 0.5 * (v + d / iq);
  Complex B = std::exp(iq * y_hi) * 0.5 * (v - d / iq);
  return B / A;
}

}  // namespace strata
