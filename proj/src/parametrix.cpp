#include "strata/parametrix.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>

#include <Eigen/Dense>

namespace strata {

namespace {

struct Quad {
  std::vector<double> x, w;
};

const Quad& gl_cached(int n) {
  static Quad q32, q64;
  Quad& q = (n == 32) ? q32 : q64;
  if (q.x.empty()) gauss_legendre_ab(n, 0.0, 1.0, q.x, q.w);
  return q;
}

double ipow(double b, int e) {
  double r = 1.0;
  for (int i = 0; i < e; ++i) r *= b;
  return r;
}

double wrap2pi(double a) {
  while (a < 0) a += 2 * kPi;
  while (a >= 2 * kPi) a -= 2 * kPi;
  return a;
}

// C-infinity cutoff: 1 for |t| <= 1, 0 for |t| >= 2.
double bump_leg(double u) { return u > 0 ? std::exp(-1.0 / u) : 0.0; }
double chi_cut(double t) {
  double a = std::abs(t);
  if (a <= 1.0) return 1.0;
  if (a >= 2.0) return 0.0;
  double hi = bump_leg(2.0 - a), lo = bump_leg(a - 1.0);
  return hi / (hi + lo);
}

// Barycentric weights for arbitrary nodes.
std::vector<double> bary_weights(const std::vector<double>& x) {
  int n = (int)x.size();
  std::vector<double> w(n, 1.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (j != i) w[i] /= (x[i] - x[j]);
  return w;
}

template <class T>
T bary_eval(const std::vector<double>& x, const std::vector<double>& w,
            const T* f, int stride, double xq) {
  int n = (int)x.size();
  T num{};
  double den = 0.0;
  for (int i = 0; i < n; ++i) {
    double d = xq - x[i];
    if (std::abs(d) < 1e-14) return f[(size_t)i * stride];
    double c = w[i] / d;
    num += c * f[(size_t)i * stride];
    den += c;
  }
  return num * (1.0 / den);
}

// Trigonometric interpolation on an even number of uniform nodes on [0, 2pi).
template <class T>
T trig_eval(int n, const T* f, int stride, double xq) {
  T acc{};
  double h = 2 * kPi / n;
  for (int j = 0; j < n; ++j) {
    double d = xq - j * h;
    // periodic cardinal function sin(n d / 2) / (n tan(d / 2))
    double dm = std::remainder(d, 2 * kPi);
    double k;
    if (std::abs(dm) < 1e-13) {
      k = 1.0;
    } else {
      k = std::sin(0.5 * n * dm) / (n * std::tan(0.5 * dm));
    }
    acc += k * f[(size_t)j * stride];
  }
  return acc;
}

// Dense differentiation matrix from barycentric data (row-major n x n).
std::vector<double> diff_matrix(const std::vector<double>& x,
                                const std::vector<double>& w) {
  int n = (int)x.size();
  std::vector<double> D((size_t)n * n, 0.0);
  for (int i = 0; i < n; ++i) {
    double diag = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      double v = (w[j] / w[i]) / (x[i] - x[j]);
      D[(size_t)i * n + j] = v;
      diag -= v;
    }
    D[(size_t)i * n + i] = diag;
  }
  return D;
}

// Spectral differentiation matrix for an even uniform periodic grid.
std::vector<double> periodic_diff_matrix(int n) {
  std::vector<double> D((size_t)n * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      int k = i - j;
      double s = (k % 2 == 0) ? 1.0 : -1.0;
      D[(size_t)i * n + j] = 0.5 * s / std::tan(0.5 * k * 2 * kPi / n);
    }
  return D;
}

// 4th-order cumulative integral of uniformly gridded values, G[0] = 0.
std::vector<Complex> cumint4(const std::vector<Complex>& g, double h) {
  int n = (int)g.size();
  std::vector<Complex> G(n, Complex{0, 0});
  if (n < 4) {  // trapezoid fallback for tiny grids
    for (int i = 1; i < n; ++i) G[i] = G[i - 1] + 0.5 * h * (g[i - 1] + g[i]);
    return G;
  }
  for (int i = 0; i + 1 < n; ++i) {
    Complex inc;
    if (i == 0) {
      inc = (h / 24.0) * (9.0 * g[0] + 19.0 * g[1] - 5.0 * g[2] + g[3]);
    } else if (i == n - 2) {
      inc = (h / 24.0) *
            (9.0 * g[n - 1] + 19.0 * g[n - 2] - 5.0 * g[n - 3] + g[n - 4]);
    } else {
      inc = (h / 24.0) * (-g[i - 1] + 13.0 * g[i] + 13.0 * g[i + 1] - g[i + 2]);
    }
    G[i + 1] = G[i] + inc;
  }
  return G;
}

// Polynomial fit through samples at u = 1/r; returns the linear coefficient
// (Lagrange derivative at 0 of the interpolant through (u_i, f_i)).
Complex fit_linear_in_u(int n, const double* u, const Complex* f) {
  Complex acc{0, 0};
  for (int i = 0; i < n; ++i) {
    double denom = 1.0;
    for (int j = 0; j < n; ++j)
      if (j != i) denom *= u[i] - u[j];
    // d/du prod_{j!=i}(u - u_j) at 0
    double dnum = 0.0;
    for (int k = 0; k < n; ++k) {
      if (k == i) continue;
      double term = 1.0;
      for (int j = 0; j < n; ++j)
        if (j != i && j != k) term *= -u[j];
      dnum += term;
    }
    acc += f[i] * (dnum / denom);
  }
  return acc;
}

// Physical amplitude and geodesic derivatives from the stored kernel values:
// b = F (sin s)^{-e}.
void phys_derivs(int e, double s, Complex F, Complex Fs, Complex Fss,
                 Complex Ftt, Complex& b, Complex& bs, Complex& lap) {
  double sn = std::sin(s), cs = std::cos(s);
  if (e == 0) {
    b = F;
    bs = Fs;
    lap = Fss + (cs / sn) * Fs + Ftt / (sn * sn);
    return;
  }
  double ph = ipow(1.0 / sn, e);
  double php = -e * (cs / sn) * ph;
  double phpp = (e / (sn * sn) + double(e) * e * (cs * cs) / (sn * sn)) * ph;
  b = F * ph;
  bs = Fs * ph + F * php;
  Complex bss = Fss * ph + 2.0 * Fs * php + F * phpp;
  lap = bss + (cs / sn) * bs + Ftt * ph / (sn * sn);
}

}  // namespace

// ---------------------------------------------------------------------------
// BranchFan
// ---------------------------------------------------------------------------

Vec3 BranchFan::dir_at_s(int ip, double s) const {
  Vec3 t = frame.e1 * std::cos(theta_t[ip]) + frame.e2 * std::sin(theta_t[ip]);
  return source * std::cos(s) + t * std::sin(s);
}

Vec3 BranchFan::dir_at(int ip, int ic) const { return dir_at_s(ip, s_at(ip, ic)); }

void BranchFan::locate(const Vec3& dir, double& sig_out, double& psi_out) const {
  Vec3 u = dir.normalized();
  double cs = std::clamp(source.dot(u), -1.0, 1.0);
  double s = std::atan2(source.cross(u).norm(), cs);
  if (s > kPi - 1e-9) {
    if (branch != Branch::I)
      throw AntipodeProximity("direction inside the excluded antipodal disk");
    throw Error("direction outside the branch fan");
  }
  double ps;
  if (s < 1e-9) {
    ps = psi[0];
  } else {
    Vec3 t = (u - source * cs) * (1.0 / std::sin(s));
    auto ec = equator_crossing(source, t.normalized());
    ps = wrap2pi(ec.psi);
  }
  int np = (int)psi.size();
  double lo = trig_eval<double>(np, s_lo.data(), 1, ps);
  double hi = trig_eval<double>(np, s_hi.data(), 1, ps);
  double sig = (s - lo) / (hi - lo);
  if (branch != Branch::I && sig > 1.0 + 1e-9)
    throw AntipodeProximity("direction inside the excluded antipodal disk");
  if (sig < -1e-6 || sig > 1.0 + 1e-6)
    throw Error("direction outside the branch fan");
  sig_out = std::clamp(sig, 0.0, 1.0);
  psi_out = ps;
}

// ---------------------------------------------------------------------------
// Incident wave
// ---------------------------------------------------------------------------

Complex IncidentWave::operator()(const Vec3& z) const {
  double xw = z.x * omega.x + z.y * omega.y;
  return std::exp(kI * (lambda * xw / profile.c_plus)) * phi.value(z.z);
}

IncidentWave incident_wave(const StratifiedProfile& profile, double lambda,
                           const Vec3& omega, const Numerics& num) {
  IncidentWave iw;
  iw.profile = profile;
  iw.omega = omega.normalized();
  iw.lambda = lambda;
  iw.phi = solve_phi_plus(profile, lambda, iw.omega.z, num);
  return iw;
}

// ---------------------------------------------------------------------------
// Parametrix accessors
// ---------------------------------------------------------------------------

const BranchFan& Parametrix::fan(Branch b) const {
  switch (b) {
    case Branch::I: return fan_I;
    case Branch::R: return fan_R;
    case Branch::T: return fan_T;
    default: throw ConfigInvalid("middle branch has no fan");
  }
}

const std::vector<SphericalAmplitude>& Parametrix::amps(Branch b) const {
  switch (b) {
    case Branch::I: return amp_I;
    case Branch::R: return amp_R;
    case Branch::T: return amp_T;
    default: throw ConfigInvalid("middle branch amplitudes are gridded in y");
  }
}

const std::vector<Parametrix::DerivCache>& Parametrix::caches(Branch b) const {
  switch (b) {
    case Branch::I: return dc_I;
    case Branch::R: return dc_R;
    case Branch::T: return dc_T;
    default: throw ConfigInvalid("middle branch has no angular cache");
  }
}

Complex Parametrix::order_zero_amp(Branch b) const {
  switch (b) {
    case Branch::I: return Complex{1, 0};
    case Branch::R: return R_plus;
    case Branch::T: return T_plus;
    default: throw ConfigInvalid("middle order zero is phi_+(y)");
  }
}

// 2D interpolation of a kernel grid at fan coordinates.
static Complex interp2(const BranchFan& fan, const std::vector<double>& sigma,
                       const std::vector<double>& bw, const GridC& g, double sig,
                       double ps) {
  int np = g.n_rows;
  std::vector<Complex> tmp(np);
  for (int ip = 0; ip < np; ++ip)
    tmp[ip] = bary_eval<Complex>(sigma, bw, &g.v[(size_t)ip * g.n_cols], 1, sig);
  (void)fan;
  return trig_eval<Complex>(np, tmp.data(), 1, ps);
}

void Parametrix::amp_derivs(Branch br, int idx, const Vec3& dir, Complex& val,
                            Complex& ds, Complex& lap) const {
  const BranchFan& f = fan(br);
  const SphericalAmplitude& a = amps(br)[idx];
  const DerivCache& dc = caches(br)[idx];
  double sig, ps;
  f.locate(dir, sig, ps);
  int np = (int)f.psi.size();
  double lo = trig_eval<double>(np, f.s_lo.data(), 1, ps);
  double hi = trig_eval<double>(np, f.s_hi.data(), 1, ps);
  double s = lo + sig * (hi - lo);
  Complex F = interp2(f, sigma_nodes_, bary_w, a.vals, sig, ps);
  Complex Fs = interp2(f, sigma_nodes_, bary_w, dc.Fs, sig, ps);
  Complex Fss = interp2(f, sigma_nodes_, bary_w, dc.Fss, sig, ps);
  Complex Ftt = interp2(f, sigma_nodes_, bary_w, dc.Ftt, sig, ps);
  phys_derivs(a.sin_exponent, s, F, Fs, Fss, Ftt, val, ds, lap);
}

Complex Parametrix::amp_value(Branch br, int idx, const Vec3& dir) const {
  const BranchFan& f = fan(br);
  const SphericalAmplitude& a = amps(br)[idx];
  double sig, ps;
  f.locate(dir, sig, ps);
  Complex F = interp2(f, sigma_nodes_, bary_w, a.vals, sig, ps);
  if (a.sin_exponent == 0) return F;
  int np = (int)f.psi.size();
  double lo = trig_eval<double>(np, f.s_lo.data(), 1, ps);
  double hi = trig_eval<double>(np, f.s_hi.data(), 1, ps);
  double s = lo + sig * (hi - lo);
  return F * ipow(1.0 / std::sin(s), a.sin_exponent);
}

void Parametrix::middle_eval(int idx, double psi_q, double yq, Complex& val,
                             Complex& dval) const {
  const MiddleSolution& m = middles[idx];
  int ny = (int)ygrid.size();
  double h = ygrid[1] - ygrid[0];
  int i0 = std::clamp((int)std::floor((yq - ygrid[0]) / h), 0, ny - 2);
  double t = (yq - ygrid[i0]) / h;
  int np = m.b.n_rows;
  Complex b0 = trig_eval<Complex>(np, &m.b.v[i0], m.b.n_cols, psi_q);
  Complex b1 = trig_eval<Complex>(np, &m.b.v[i0 + 1], m.b.n_cols, psi_q);
  Complex d0 = trig_eval<Complex>(np, &m.b_prime.v[i0], m.b_prime.n_cols, psi_q);
  Complex d1 =
      trig_eval<Complex>(np, &m.b_prime.v[i0 + 1], m.b_prime.n_cols, psi_q);
  // cubic Hermite
  double t2 = t * t, t3 = t2 * t;
  double h00 = 2 * t3 - 3 * t2 + 1, h10 = t3 - 2 * t2 + t;
  double h01 = -2 * t3 + 3 * t2, h11 = t3 - t2;
  val = h00 * b0 + h10 * h * d0 + h01 * b1 + h11 * h * d1;
  double g00 = (6 * t2 - 6 * t) / h, g10 = 3 * t2 - 4 * t + 1;
  double g01 = (-6 * t2 + 6 * t) / h, g11 = 3 * t2 - 2 * t;
  dval = g00 * b0 + g10 * d0 + g01 * b1 + g11 * d1;
}

// ---------------------------------------------------------------------------
// init
// ---------------------------------------------------------------------------

static BranchFan make_fan(Branch br, const Vec3& source, double c_speed,
                          const std::vector<double>& psi,
                          const std::vector<double>& sigma,
                          const std::vector<double>& Dpsi, double delta_ant) {
  BranchFan f;
  f.branch = br;
  f.source = source.normalized();
  f.c_speed = c_speed;
  f.frame = geodesic_frame(f.source);
  f.psi = psi;
  f.sigma = sigma;
  int np = (int)psi.size();
  f.s_lo.resize(np);
  f.s_hi.resize(np);
  f.theta_t.resize(np);
  for (int ip = 0; ip < np; ++ip) {
    Vec3 q{std::cos(psi[ip]), std::sin(psi[ip]), 0.0};
    double cs0 = std::clamp(f.source.dot(q), -1.0, 1.0);
    double s0 = std::acos(cs0);
    Vec3 t = (q - f.source * cs0).normalized();
    f.theta_t[ip] = std::atan2(t.dot(f.frame.e2), t.dot(f.frame.e1));
    if (br == Branch::I) {
      f.s_lo[ip] = 0.0;
      f.s_hi[ip] = s0;
    } else {
      f.s_lo[ip] = s0;
      f.s_hi[ip] = kPi - delta_ant;
    }
  }
  // unwrap theta_t and differentiate: theta = wind * psi + periodic part
  std::vector<double> unw(np), per(np);
  unw[0] = f.theta_t[0];
  double tot = 0.0;
  for (int i = 0; i < np; ++i) {
    int j = (i + 1) % np;
    double d = std::remainder(f.theta_t[j] - f.theta_t[i], 2 * kPi);
    tot += d;
    if (i + 1 < np) unw[i + 1] = unw[i] + d;
  }
  int wind = (int)std::lround(tot / (2 * kPi));
  for (int i = 0; i < np; ++i) per[i] = unw[i] - wind * psi[i];
  auto apply_D = [&](const std::vector<double>& g) {
    std::vector<double> out(np, 0.0);
    for (int i = 0; i < np; ++i)
      for (int j = 0; j < np; ++j) out[i] += Dpsi[(size_t)i * np + j] * g[j];
    return out;
  };
  std::vector<double> dper = apply_D(per);
  f.s_lo_p = apply_D(f.s_lo);
  std::vector<double> len(np);
  for (int i = 0; i < np; ++i) len[i] = f.s_hi[i] - f.s_lo[i];
  f.len_p = apply_D(len);
  f.dpsi_dtheta.resize(np);
  for (int i = 0; i < np; ++i) {
    double dtheta = wind + dper[i];
    if (std::abs(dtheta) < 1e-10)
      throw Error("degenerate fan parametrization");
    f.dpsi_dtheta[i] = 1.0 / dtheta;
    f.theta_t[i] = unw[i];
  }
  return f;
}

Parametrix init_parametrix(const StratifiedProfile& profile,
                           const PerturbationExpansion& pert, double lambda,
                           const Vec3& omega, const Numerics& num) {
  if (lambda <= 0) throw NonzeroLambdaRequired("lambda must be positive");
  Parametrix st;
  st.profile = profile;
  st.pert = pert;
  st.lambda = lambda;
  st.num = num;
  st.omega = omega.normalized();
  double wn = st.omega.z;
  if (wn <= 0) throw ConfigInvalid("incidence must come from above (omega_n > 0)");
  if (wn < num.delta_eq)
    throw EquatorialInput("incident direction inside the equator band");
  double wc = profile.critical_omega_n();
  if (wc > 0 && std::abs(wn - wc) < num.delta_crit)
    throw CriticalAngle("incident direction inside the critical band");
  st.omega_n = wn;
  st.abs_omega_bar = std::hypot(st.omega.x, st.omega.y);
  st.psi_omega =
      st.abs_omega_bar > 1e-14 ? std::atan2(st.omega.y, st.omega.x) : 0.0;
  double cp = profile.c_plus, cm = profile.c_minus;
  st.mu = lambda * st.abs_omega_bar / cp;
  double sm2 = 1.0 / (cm * cm) - (st.abs_omega_bar * st.abs_omega_bar) / (cp * cp);
  st.lower_propagating = sm2 > 0;
  st.s_minus = std::sqrt(std::max(0.0, sm2));
  st.phi = solve_phi_plus(profile, lambda, wn, num);
  st.R_plus = st.phi.coeffs().R;
  st.T_plus = st.phi.coeffs().T;
  if (st.pert.r0 <= 0) st.pert.r0 = 10.0 * std::max(1.0, profile.y_M);

  int np = num.n_psi, ns = num.n_s;
  std::vector<double> psi(np), sw;
  for (int i = 0; i < np; ++i) psi[i] = 2 * kPi * i / np;
  std::vector<double> sig;
  gauss_legendre_ab(ns, 0.0, 1.0, sig, sw);
  st.sigma_nodes_ = sig;
  st.bary_w = bary_weights(sig);
  st.Dsig = diff_matrix(sig, st.bary_w);
  st.Dpsi = periodic_diff_matrix(np);

  st.fan_I = make_fan(Branch::I, st.omega, cp, psi, sig, st.Dpsi, num.delta_ant);
  Vec3 vR{st.omega.x, st.omega.y, -wn};
  st.fan_R = make_fan(Branch::R, vR, cp, psi, sig, st.Dpsi, num.delta_ant);
  if (st.lower_propagating) {
    Vec3 vT{cm / cp * st.omega.x, cm / cp * st.omega.y, cm * st.s_minus};
    st.fan_T = make_fan(Branch::T, vT, cm, psi, sig, st.Dpsi, num.delta_ant);
  }
  double yM = profile.y_M;
  int ny = num.n_y;
  st.ygrid.resize(ny + 1);
  for (int i = 0; i <= ny; ++i) st.ygrid[i] = -yM + 2.0 * yM * i / ny;
  return st;
}

// ---------------------------------------------------------------------------
// Error coefficients
// ---------------------------------------------------------------------------

static std::vector<int> pert_orders(const PerturbationExpansion& p) {
  std::set<int> s;
  for (const auto& t : p.terms) s.insert(t.order);
  return {s.begin(), s.end()};
}

ErrorCoefficient error_coefficients(const Parametrix& st, Branch branch,
                                    int order) {
  const double lam = st.lambda;
  std::vector<int> K = pert_orders(st.pert);
  ErrorCoefficient out;
  out.branch = branch;
  out.order = order;

  if (branch == Branch::M) {
    // middle region: carrier e^{i lam x.w/c+}, pieces |x|^{-m} b(psi, y)
    int np = st.num.n_psi, ny = (int)st.ygrid.size();
    out.vals = GridC(np, ny);
    double cp = st.profile.c_plus;
    double ab = st.abs_omega_bar;
    // equatorial Taylor tables d^b/dmu^b gamma_a(psi, 0^{+-})
    std::vector<std::vector<std::vector<double>>> tabU, tabL;  // [a][b][ip]
    for (size_t ia = 0; ia < K.size(); ++ia) {
      tabU.emplace_back();
      tabL.emplace_back();
      for (int b = 0; b <= std::max(0, order - K[ia]); ++b) {
        std::vector<double> rowU(np), rowL(np);
        for (int ip = 0; ip < np; ++ip) {
          double ph = 2 * kPi * ip / np;
          rowU[ip] = st.pert.gamma_dmu_at_equator(K[ia], Hemisphere::Upper, ph, b);
          rowL[ip] = st.pert.gamma_dmu_at_equator(K[ia], Hemisphere::Lower, ph, b);
        }
        tabU.back().push_back(std::move(rowU));
        tabL.back().push_back(std::move(rowL));
      }
    }
    auto e_of = [&](int k, int ip, double y) {
      double acc = 0.0;
      for (size_t ia = 0; ia < K.size(); ++ia) {
        int b = k - K[ia];
        if (b < 0 || b >= (int)tabU[ia].size()) continue;
        double fact = 1.0;
        for (int q = 2; q <= b; ++q) fact *= q;
        double base = (y >= 0 ? tabU : tabL)[ia][b][ip];
        acc += ipow(y, b) / fact * base;
      }
      return acc;
    };
    // psi derivatives of stored middle layers
    int nmid = (int)st.middles.size();
    std::vector<GridC> Bp(nmid), Bpp(nmid);
    for (int im = 0; im < nmid; ++im) {
      const GridC& B = st.middles[im].b;
      Bp[im] = GridC(np, ny);
      Bpp[im] = GridC(np, ny);
      for (int ip = 0; ip < np; ++ip)
        for (int ic = 0; ic < ny; ++ic) {
          Complex a1{0, 0};
          for (int jp = 0; jp < np; ++jp)
            a1 += st.Dpsi[(size_t)ip * np + jp] * B.at(jp, ic);
          Bp[im].at(ip, ic) = a1;
        }
      for (int ip = 0; ip < np; ++ip)
        for (int ic = 0; ic < ny; ++ic) {
          Complex a2{0, 0};
          for (int jp = 0; jp < np; ++jp)
            a2 += st.Dpsi[(size_t)ip * np + jp] * Bp[im].at(jp, ic);
          Bpp[im].at(ip, ic) = a2;
        }
    }
    for (int ip = 0; ip < np; ++ip) {
      double ps = 2 * kPi * ip / np;
      double cD = std::cos(ps - st.psi_omega), sD = std::sin(ps - st.psi_omega);
      for (int ic = 0; ic < ny; ++ic) {
        double y = st.ygrid[ic];
        double c0 = eval_c0(st.profile, y);
        Complex acc{0, 0};
        // E_k = 2 c0 e_k + sum_{p+q=k} e_p e_q
        int Jmin = K.empty() ? 0 : K.front();
        auto E_of = [&](int k) {
          double e = e_of(k, ip, y);
          double prod = 0.0;
          for (int p = Jmin; p <= k - Jmin; ++p)
            prod += e_of(p, ip, y) * e_of(k - p, ip, y);
          return 2.0 * c0 * e + prod;
        };
        // order-0 layer phi_+
        {
          Complex b0 = st.phi.value(y);
          Complex d2 = lam * lam * b0 / (c0 * c0);  // (D_y^2 + mu^2) phi_+
          if (order >= 0) acc += E_of(order) * d2;
        }
        for (int im = 0; im < nmid; ++im) {
          int m = st.middles[im].order;
          Complex b = st.middles[im].b.at(ip, ic);
          Complex src = st.middles[im].source.at(ip, ic);
          Complex d2 = (lam * lam * b + src) / (c0 * c0);
          Complex bp = Bp[im].at(ip, ic), bpp = Bpp[im].at(ip, ic);
          if (order - m >= 0) acc += E_of(order - m) * d2;
          Complex tr = double(m) * cD * b + sD * bp;
          if (m + 1 == order) acc += 2.0 * kI * c0 * c0 * (lam / cp) * ab * tr;
          if (order - m - 1 >= 0)
            acc += 2.0 * kI * (lam / cp) * ab * E_of(order - m - 1) * tr;
          Complex cv = double(m) * double(m) * b + bpp;
          if (m + 2 == order) acc += -c0 * c0 * cv;
          if (order - m - 2 >= 0) acc += -E_of(order - m - 2) * cv;
        }
        out.vals.at(ip, ic) = acc;
      }
    }
    return out;
  }

  // branch grids
  const BranchFan& f = st.fan(branch);
  double cb = f.c_speed;
  int np = (int)f.psi.size(), ns = (int)f.sigma.size();
  out.vals = GridC(np, ns);
  const auto& av = st.amps(branch);
  const auto& cv = st.caches(branch);
  Complex A0 = st.order_zero_amp(branch);
  for (int ip = 0; ip < np; ++ip) {
    for (int ic = 0; ic < ns; ++ic) {
      double s = f.s_at(ip, ic);
      Vec3 dir = f.dir_at(ip, ic);
      double sn = std::sin(s), cs = std::cos(s);
      std::vector<double> g(K.size());
      for (size_t i = 0; i < K.size(); ++i) g[i] = st.pert.gamma(K[i], dir);
      // coefficient of |z|^{-k} in c^2 - c_b^2
      auto dc2_of = [&](int k) {
        double p = 0.0;
        for (size_t a = 0; a < K.size(); ++a) {
          if (K[a] == k) p += 2.0 * cb * g[a];
          for (size_t b = 0; b < K.size(); ++b)
            if (K[a] + K[b] == k) p += g[a] * g[b];
        }
        return p;
      };
      Complex acc = (lam * lam / (cb * cb)) * dc2_of(order) * A0;
      for (size_t ii = 0; ii < av.size(); ++ii) {
        int m = av[ii].order;
        Complex b, bs, lap;
        phys_derivs(av[ii].sin_exponent, s, av[ii].vals.at(ip, ic),
                    cv[ii].Fs.at(ip, ic), cv[ii].Fss.at(ip, ic),
                    cv[ii].Ftt.at(ip, ic), b, bs, lap);
        Complex tr = double(m) * cs * b + sn * bs;
        Complex cvt = double(m) * double(m - 1) * b + lap;
        if (order - m >= 1)
          acc += (lam * lam / (cb * cb)) * dc2_of(order - m) * b;
        if (order - m - 1 >= 1)
          acc += 2.0 * kI * (lam / cb) * dc2_of(order - m - 1) * tr;
        if (order - m - 2 >= 1) acc += -dc2_of(order - m - 2) * cvt;
        if (m + 1 == order) acc += 2.0 * kI * cb * lam * tr;
        if (m + 2 == order) acc += -cb * cb * cvt;
      }
      out.vals.at(ip, ic) = acc;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Transport steps
// ---------------------------------------------------------------------------

SphericalAmplitude transport_step_incident(const Parametrix& st,
                                           const ErrorCoefficient& d) {
  if (d.branch != Branch::I)
    throw ConfigInvalid("incident transport expects a branch-I source");
  int j = d.order;
  if (j < 2) throw ConfigInvalid("transport needs order >= 2");
  const BranchFan& f = st.fan_I;
  int np = (int)f.psi.size(), ns = (int)f.sigma.size();
  const Quad& q = gl_cached(32);
  SphericalAmplitude a;
  a.branch = Branch::I;
  a.order = j - 1;
  a.sin_exponent = 0;
  a.vals = GridC(np, ns);
  a.equator_vals.resize(np);
  Complex pref = kI / (2.0 * st.lambda * f.c_speed);
  for (int ip = 0; ip < np; ++ip) {
    const Complex* row = &d.vals.v[(size_t)ip * ns];
    double shi = f.s_hi[ip];
    auto b_at = [&](double s) -> Complex {
      Complex H{0, 0};
      for (size_t t = 0; t < q.x.size(); ++t) {
        double u = s * q.x[t];
        double sinc = u > 1e-8 ? std::sin(u) / u : 1.0 - u * u / 6.0;
        Complex dv =
            bary_eval<Complex>(st.sigma_nodes_, st.bary_w, row, 1, u / shi);
        H += q.w[t] * ipow(q.x[t], j - 2) * ipow(sinc, j - 2) * dv;
      }
      double ratio = s > 1e-8 ? s / std::sin(s) : 1.0 + s * s / 6.0;
      return pref * ipow(ratio, j - 1) * H;
    };
    for (int ic = 0; ic < ns; ++ic) a.vals.at(ip, ic) = b_at(f.s_at(ip, ic));
    a.equator_vals[ip] = b_at(shi);
  }
  return a;
}

SphericalAmplitude transport_step_offset(const Parametrix& st,
                                         const ErrorCoefficient& d,
                                         const std::vector<Complex>& C) {
  if (d.branch != Branch::R && d.branch != Branch::T)
    throw ConfigInvalid("offset transport expects branch R or T");
  int j = d.order;
  if (j < 2) throw ConfigInvalid("transport needs order >= 2");
  const BranchFan& f = st.fan(d.branch);
  int np = (int)f.psi.size(), ns = (int)f.sigma.size();
  const Quad& q = gl_cached(32);
  SphericalAmplitude a;
  a.branch = d.branch;
  a.order = j - 1;
  a.sin_exponent = j - 1;
  a.vals = GridC(np, ns);
  a.equator_vals.resize(np);
  Complex pref = kI / (2.0 * st.lambda * f.c_speed);
  for (int ip = 0; ip < np; ++ip) {
    const Complex* row = &d.vals.v[(size_t)ip * ns];
    double lo = f.s_lo[ip], len = f.len(ip);
    auto seg = [&](double sa, double sb) -> Complex {
      Complex acc{0, 0};
      for (size_t t = 0; t < q.x.size(); ++t) {
        double s = sa + (sb - sa) * q.x[t];
        Complex dv = bary_eval<Complex>(st.sigma_nodes_, st.bary_w, row, 1,
                                        (s - lo) / len);
        acc += q.w[t] * (sb - sa) * ipow(std::sin(s), j - 2) * dv;
      }
      return acc;
    };
    Complex I = seg(lo, f.s_at(ip, 0));
    a.vals.at(ip, 0) = pref * (I + C[ip]);
    for (int ic = 1; ic < ns; ++ic) {
      I += seg(f.s_at(ip, ic - 1), f.s_at(ip, ic));
      a.vals.at(ip, ic) = pref * (I + C[ip]);
    }
    a.equator_vals[ip] = pref * C[ip] * ipow(1.0 / std::sin(lo), j - 1);
  }
  return a;
}

// ---------------------------------------------------------------------------
// Middle / evanescent boundary-value problems
// ---------------------------------------------------------------------------

namespace {

struct HomSolves {
  std::vector<Complex> u1, u1p, u2, u2p;
  Complex W;
};

// b'' = q(y) b, RK4 with the complex state (u, u').
void rk4_hom(const std::function<double(double)>& q, const std::vector<double>& y,
             bool upward, Complex u0, Complex up0, std::vector<Complex>& u,
             std::vector<Complex>& up) {
  int n = (int)y.size();
  u.assign(n, Complex{0, 0});
  up.assign(n, Complex{0, 0});
  int i0 = upward ? 0 : n - 1;
  int di = upward ? 1 : -1;
  u[i0] = u0;
  up[i0] = up0;
  for (int i = i0; i != (upward ? n - 1 : 0); i += di) {
    double h = y[i + di] - y[i];
    double ya = y[i], ym = y[i] + 0.5 * h, yb = y[i + di];
    Complex v = u[i], w = up[i];
    auto f = [&](double yy, Complex vv, Complex ww, Complex& dv, Complex& dw) {
      dv = ww;
      dw = q(yy) * vv;
    };
    Complex k1v, k1w, k2v, k2w, k3v, k3w, k4v, k4w;
    f(ya, v, w, k1v, k1w);
    f(ym, v + 0.5 * h * k1v, w + 0.5 * h * k1w, k2v, k2w);
    f(ym, v + 0.5 * h * k2v, w + 0.5 * h * k2w, k3v, k3w);
    f(yb, v + h * k3v, w + h * k3w, k4v, k4w);
    u[i + di] = v + (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
    up[i + di] = w + (h / 6.0) * (k1w + 2.0 * k2w + 2.0 * k3w + k4w);
  }
}

MiddleBvpResult robin_solve(const StratifiedProfile& profile, double lambda,
                            double mu, double omega_n,
                            const std::vector<double>& y,
                            const std::vector<Complex>& f, Complex alpha1,
                            Complex alpha2, Complex lower_slope) {
  int n = (int)y.size();
  if (n < 5 || (int)f.size() != n)
    throw ConfigInvalid("middle solve needs a matching grid of length >= 5");
  double h = y[1] - y[0];
  auto q = [&](double yy) {
    double c0 = eval_c0(profile, yy);
    return mu * mu - lambda * lambda / (c0 * c0);
  };
  HomSolves hs;
  rk4_hom(q, y, true, Complex{1, 0}, lower_slope, hs.u1, hs.u1p);
  double cp = profile.c_plus;
  Complex top_slope = -kI * lambda * omega_n / cp;
  rk4_hom(q, y, false, Complex{1, 0}, top_slope, hs.u2, hs.u2p);
  int mid = n / 2;
  hs.W = hs.u1[mid] * hs.u2p[mid] - hs.u1p[mid] * hs.u2[mid];
  if (std::abs(hs.W) < 1e-250)
    throw SingularBoundarySystem("vanishing Wronskian of the homogeneous pair");

  // variation of parameters: b'' - q b = H with H = -f / c0^2
  std::vector<Complex> g1(n), g2(n);
  for (int i = 0; i < n; ++i) {
    double c0 = eval_c0(profile, y[i]);
    Complex H = -f[i] / (c0 * c0);
    g1[i] = hs.u1[i] * H;
    g2[i] = hs.u2[i] * H;
  }
  std::vector<Complex> I1 = cumint4(g1, h);
  std::vector<Complex> rev(g2.rbegin(), g2.rend());
  std::vector<Complex> I2r = cumint4(rev, h);
  MiddleBvpResult out;
  out.b.resize(n);
  out.b_prime.resize(n);
  for (int i = 0; i < n; ++i) {
    Complex I2 = I2r[n - 1 - i];
    out.b[i] = (hs.u2[i] * I1[i] + hs.u1[i] * I2) / hs.W;
    out.b_prime[i] = (hs.u2p[i] * I1[i] + hs.u1p[i] * I2) / hs.W;
  }
  Complex Ru1 = -(kI * lambda * omega_n / cp * hs.u1[n - 1] + hs.u1p[n - 1]);
  double scale = lambda * (1.0 + std::abs(hs.u1[n - 1]));
  if (std::abs(Ru1) < 1e-12 * scale)
    throw SingularBoundarySystem("boundary determinant below tolerance");
  out.boundary_det = Ru1;
  Complex A = alpha1 / Ru1;
  Complex B{0, 0};
  if (std::abs(alpha2) > 0) {
    Complex Lu2 = lower_slope * hs.u2[0] - hs.u2p[0];
    if (std::abs(Lu2) < 1e-12 * scale)
      throw SingularBoundarySystem("lower boundary functional below tolerance");
    B = alpha2 / Lu2;
  }
  for (int i = 0; i < n; ++i) {
    out.b[i] += A * hs.u1[i] + B * hs.u2[i];
    out.b_prime[i] += A * hs.u1p[i] + B * hs.u2p[i];
  }
  return out;
}

}  // namespace

MiddleBvpResult middle_bvp_solve(const StratifiedProfile& profile, double lambda,
                                 double abs_omega_bar, double omega_n,
                                 const std::vector<double>& y,
                                 const std::vector<Complex>& f, Complex alpha1,
                                 Complex alpha2) {
  double cp = profile.c_plus, cm = profile.c_minus;
  double sm2 =
      1.0 / (cm * cm) - (abs_omega_bar * abs_omega_bar) / (cp * cp);
  if (sm2 <= 0)
    throw ConfigInvalid(
        "lower side evanescent for this direction; use evanescent_lower_solve");
  double mu = lambda * abs_omega_bar / cp;
  Complex lower_slope = kI * lambda * std::sqrt(sm2);
  return robin_solve(profile, lambda, mu, omega_n, y, f, alpha1, alpha2,
                     lower_slope);
}

MiddleBvpResult evanescent_lower_solve(const StratifiedProfile& profile,
                                       double lambda, double abs_omega_bar,
                                       double omega_n,
                                       const std::vector<double>& y,
                                       const std::vector<Complex>& f,
                                       Complex alpha1) {
  double cp = profile.c_plus, cm = profile.c_minus;
  double mu = lambda * abs_omega_bar / cp;
  double k2 = mu * mu - lambda * lambda / (cm * cm);
  if (k2 <= 0)
    throw ConfigInvalid("lower side propagating; use middle_bvp_solve");
  Complex lower_slope{std::sqrt(k2), 0.0};  // decaying branch as y -> -inf
  return robin_solve(profile, lambda, mu, omega_n, y, f, alpha1, Complex{0, 0},
                     lower_slope);
}

// ---------------------------------------------------------------------------
// Matching and C^1 glue
// ---------------------------------------------------------------------------

MatchingConstants match_layers(const Parametrix& st, int order,
                               const std::vector<Complex>& B_I,
                               const MiddleSolution& mid) {
  int np = st.num.n_psi;
  double yM = st.profile.y_M;
  double cp = st.profile.c_plus, cm = st.profile.c_minus;
  Complex eip = std::exp(kI * (st.lambda * st.omega_n * yM / cp));
  MatchingConstants mc;
  mc.order = order;
  mc.B_R.resize(np);
  mc.C_R.resize(np);
  int last = mid.b.n_cols - 1;
  for (int ip = 0; ip < np; ++ip) {
    Complex BR = (mid.b.at(ip, last) - B_I[ip] * eip) * eip;
    mc.B_R[ip] = BR;
    mc.C_R[ip] =
        -2.0 * kI * st.lambda * cp * ipow(std::sin(st.fan_R.s_lo[ip]), order) * BR;
  }
  if (st.lower_propagating) {
    mc.B_T.resize(np);
    mc.C_T.resize(np);
    Complex et = std::exp(kI * (st.lambda * st.s_minus * yM));
    for (int ip = 0; ip < np; ++ip) {
      Complex BT = mid.b.at(ip, 0) * et;
      mc.B_T[ip] = BT;
      mc.C_T[ip] = -2.0 * kI * st.lambda * cm *
                   ipow(std::sin(st.fan_T.s_lo[ip]), order) * BT;
    }
  }
  return mc;
}

C1Correction c1_correction(const Parametrix& st, int order) {
  int idx = -1;
  for (size_t i = 0; i < st.orders.size(); ++i)
    if (st.orders[i] == order) idx = (int)i;
  if (idx < 0) throw ConfigInvalid("order not assembled");
  int np = st.num.n_psi;
  double yM = st.profile.y_M;
  double cp = st.profile.c_plus;
  double rb = std::max(1.0, yM);
  constexpr int nr = 4;
  double radii[nr] = {1e5 * rb, 2e5 * rb, 4e5 * rb, 8e5 * rb};
  double u[nr];
  for (int k = 0; k < nr; ++k) u[k] = 1.0 / radii[k];
  double fdh = 0.01 * std::max(yM, 0.25);
  C1Correction c;
  c.order = order;
  c.beta_U.assign(np, Complex{0, 0});
  c.gamma_U.assign(np, Complex{0, 0});
  c.beta_L.assign(np, Complex{0, 0});
  c.gamma_L.assign(np, Complex{0, 0});
  const MiddleSolution& mid = st.middles[idx];
  int last = mid.b.n_cols - 1;
  for (int ip = 0; ip < np; ++ip) {
    double ps = st.fan_I.psi[ip];
    auto brU = [&](double r, double y) -> Complex {
      double rz = std::sqrt(r * r + y * y);
      Vec3 dir{r * std::cos(ps) / rz, r * std::sin(ps) / rz, y / rz};
      double fac = ipow(r / rz, order);
      Complex bi = st.amp_value(Branch::I, idx, dir);
      Complex br = st.amp_value(Branch::R, idx, dir);
      Complex eu = std::exp(kI * (st.lambda * st.omega_n * y / cp));
      return fac * (bi * eu + br / eu);
    };
    Complex Jv[nr], Jd[nr];
    for (int k = 0; k < nr; ++k) {
      double r = radii[k];
      Jv[k] = brU(r, yM) - mid.b.at(ip, last);
      Complex der = (-25.0 * brU(r, yM) + 48.0 * brU(r, yM + fdh) -
                     36.0 * brU(r, yM + 2 * fdh) + 16.0 * brU(r, yM + 3 * fdh) -
                     3.0 * brU(r, yM + 4 * fdh)) /
                    (12.0 * fdh);
      Jd[k] = der - mid.b_prime.at(ip, last);
    }
    c.beta_U[ip] = fit_linear_in_u(nr, u, Jv);
    c.gamma_U[ip] = fit_linear_in_u(nr, u, Jd);
    if (st.lower_propagating) {
      auto brL = [&](double r, double y) -> Complex {
        double rz = std::sqrt(r * r + y * y);
        Vec3 dir{r * std::cos(ps) / rz, r * std::sin(ps) / rz, y / rz};
        double fac = ipow(r / rz, order);
        Complex bt = st.amp_value(Branch::T, idx, dir);
        return fac * bt * std::exp(kI * (st.lambda * st.s_minus * y));
      };
      for (int k = 0; k < nr; ++k) {
        double r = radii[k];
        Jv[k] = brL(r, -yM) - mid.b.at(ip, 0);
        double d = -fdh;
        Complex der = (-25.0 * brL(r, -yM) + 48.0 * brL(r, -yM + d) -
                       36.0 * brL(r, -yM + 2 * d) + 16.0 * brL(r, -yM + 3 * d) -
                       3.0 * brL(r, -yM + 4 * d)) /
                      (12.0 * d);
        Jd[k] = der - mid.b_prime.at(ip, 0);
      }
      c.beta_L[ip] = fit_linear_in_u(nr, u, Jv);
      c.gamma_L[ip] = fit_linear_in_u(nr, u, Jd);
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Mode channels
// ---------------------------------------------------------------------------

namespace {

double simpson_weight(int i, int n) {  // n nodes, n odd preferred
  if (i == 0 || i == n - 1) return 1.0 / 3.0;
  return (i % 2 == 1) ? 4.0 / 3.0 : 2.0 / 3.0;
}

}  // namespace

ModeChannelSplit mode_channel_decompose(const GridC& d, const ModeFunction& fm,
                                        const StratifiedProfile& profile,
                                        const std::vector<double>& y) {
  int np = d.n_rows, ny = d.n_cols;
  if ((int)y.size() != ny)
    throw ConfigInvalid("grid mismatch in mode decomposition");
  double h = y[1] - y[0];
  std::vector<double> fv(ny), wgt(ny);
  double nrm = 0.0;
  for (int i = 0; i < ny; ++i) {
    fv[i] = fm.interp(y[i]);
    double c0 = eval_c0(profile, y[i]);
    wgt[i] = simpson_weight(i, ny) * h / (c0 * c0);
    nrm += wgt[i] * fv[i] * fv[i];
  }
  ModeChannelSplit out;
  out.d_perp = GridC(np, ny);
  out.coeff.resize(np);
  for (int ip = 0; ip < np; ++ip) {
    Complex c{0, 0};
    for (int i = 0; i < ny; ++i) c += wgt[i] * fv[i] * d.at(ip, i);
    c /= nrm;
    out.coeff[ip] = c;
    for (int i = 0; i < ny; ++i)
      out.d_perp.at(ip, i) = d.at(ip, i) - c * fv[i];
  }
  return out;
}

GridC mode_channel_solve(const StratifiedProfile& profile, double lambda,
                         double kappa_j, const ModeFunction& fm,
                         const GridC& d_perp, const std::vector<double>& y,
                         const Numerics& num) {
  (void)num;
  int np = d_perp.n_rows, ny = d_perp.n_cols;
  if ((int)y.size() != ny) throw ConfigInvalid("grid mismatch in mode solve");
  double h = y[1] - y[0];
  std::vector<double> fv(ny), wgt(ny);
  double nrm = 0.0;
  for (int i = 0; i < ny; ++i) {
    fv[i] = fm.interp(y[i]);
    double c0 = eval_c0(profile, y[i]);
    wgt[i] = simpson_weight(i, ny) * h / (c0 * c0);
    nrm += wgt[i] * fv[i] * fv[i];
  }
  for (int ip = 0; ip < np; ++ip) {
    Complex c{0, 0};
    double dn = 0.0;
    for (int i = 0; i < ny; ++i) {
      c += wgt[i] * fv[i] * d_perp.at(ip, i);
      dn += wgt[i] * std::norm(d_perp.at(ip, i));
    }
    if (std::abs(c) / std::sqrt(nrm) > 1e-8 * (std::sqrt(dn) + 1e-30))
      throw NonOrthogonalSource("source has a component along the resonant mode");
  }
  // L = -diag(c0^2) D2 + diag(c0^2 kappa^2 - lambda^2), Dirichlet ends,
  // rank-one shift along the discrete mode direction to lift the kernel.
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(ny, ny);
  for (int i = 0; i < ny; ++i) {
    double c0 = eval_c0(profile, y[i]);
    double c2 = c0 * c0;
    if (i == 0 || i == ny - 1) {
      L(i, i) = 1.0;
      continue;
    }
    if (i >= 2 && i <= ny - 3) {
      double k = -c2 / (12.0 * h * h);
      L(i, i - 2) += k * -1.0;
      L(i, i - 1) += k * 16.0;
      L(i, i) += k * -30.0;
      L(i, i + 1) += k * 16.0;
      L(i, i + 2) += k * -1.0;
    } else {
      double k = -c2 / (h * h);
      L(i, i - 1) += k;
      L(i, i) += -2.0 * k;
      L(i, i + 1) += k;
    }
    L(i, i) += c2 * kappa_j * kappa_j - lambda * lambda;
  }
  double sigma = lambda * lambda + 1.0;
  for (int a = 0; a < ny; ++a)
    for (int b = 0; b < ny; ++b)
      L(a, b) += sigma * fv[a] * (wgt[b] * fv[b] / nrm);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(L);
  GridC g(np, ny);
  Eigen::VectorXd re(ny), im(ny);
  for (int ip = 0; ip < np; ++ip) {
    for (int i = 0; i < ny; ++i) {
      Complex v = (i == 0 || i == ny - 1) ? Complex{0, 0} : d_perp.at(ip, i);
      re(i) = v.real();
      im(i) = v.imag();
    }
    Eigen::VectorXd xr = lu.solve(re), xi = lu.solve(im);
    // project out any leftover mode component
    Complex c{0, 0};
    for (int i = 0; i < ny; ++i) c += wgt[i] * fv[i] * Complex{xr(i), xi(i)};
    c /= nrm;
    for (int i = 0; i < ny; ++i)
      g.at(ip, i) = Complex{xr(i), xi(i)} - c * fv[i];
  }
  return g;
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

namespace {

GridC apply_Dsig(const Parametrix& st, const GridC& F) {
  int np = F.n_rows, ns = F.n_cols;
  GridC out(np, ns);
  for (int ip = 0; ip < np; ++ip)
    for (int ic = 0; ic < ns; ++ic) {
      Complex a{0, 0};
      for (int c = 0; c < ns; ++c)
        a += st.Dsig[(size_t)ic * ns + c] * F.at(ip, c);
      out.at(ip, ic) = a;
    }
  return out;
}

GridC apply_Dpsi(const Parametrix& st, const GridC& F) {
  int np = F.n_rows, ns = F.n_cols;
  GridC out(np, ns);
  for (int ip = 0; ip < np; ++ip)
    for (int ic = 0; ic < ns; ++ic) {
      Complex a{0, 0};
      for (int p = 0; p < np; ++p)
        a += st.Dpsi[(size_t)ip * np + p] * F.at(p, ic);
      out.at(ip, ic) = a;
    }
  return out;
}

GridC apply_Dtheta(const Parametrix& st, const BranchFan& f, const GridC& F) {
  GridC Fp = apply_Dpsi(st, F);
  GridC Fsg = apply_Dsig(st, F);
  int np = F.n_rows, ns = F.n_cols;
  GridC out(np, ns);
  for (int ip = 0; ip < np; ++ip) {
    double len = f.len(ip);
    for (int ic = 0; ic < ns; ++ic) {
      Complex Gs = Fsg.at(ip, ic) / len;
      double shift = f.s_lo_p[ip] + f.sigma[ic] * f.len_p[ip];
      out.at(ip, ic) = f.dpsi_dtheta[ip] * (Fp.at(ip, ic) - shift * Gs);
    }
  }
  return out;
}

Parametrix::DerivCache make_cache(const Parametrix& st, const BranchFan& f,
                                  const GridC& F) {
  Parametrix::DerivCache dc;
  GridC Fsg = apply_Dsig(st, F);
  GridC Fsg2 = apply_Dsig(st, Fsg);
  int np = F.n_rows, ns = F.n_cols;
  dc.Fs = GridC(np, ns);
  dc.Fss = GridC(np, ns);
  for (int ip = 0; ip < np; ++ip) {
    double len = f.len(ip);
    for (int ic = 0; ic < ns; ++ic) {
      dc.Fs.at(ip, ic) = Fsg.at(ip, ic) / len;
      dc.Fss.at(ip, ic) = Fsg2.at(ip, ic) / (len * len);
    }
  }
  GridC Ft = apply_Dtheta(st, f, F);
  dc.Ftt = apply_Dtheta(st, f, Ft);
  return dc;
}

}  // namespace

Parametrix assemble_parametrix(const StratifiedProfile& profile,
                               const PerturbationExpansion& pert, double lambda,
                               const Vec3& omega, int N, const Numerics& num) {
  if (N < 0) throw ConfigInvalid("truncation order must be nonnegative");
  if (N > num.order_cap)
    throw GridResolutionExceeded(
        "requested truncation order exceeds the configured stencil accuracy");
  Parametrix st = init_parametrix(profile, pert, lambda, omega, num);
  if (!st.lower_propagating) {
    // extend the middle grid downward so the evanescent tail is resolved
    double mu = st.mu;
    double kap = std::sqrt(mu * mu - lambda * lambda /
                                         (profile.c_minus * profile.c_minus));
    double yM = profile.y_M;
    double ext = std::max(4.0 * yM, 15.0 / kap);
    double h = 2.0 * yM / num.n_y;
    int next = (int)std::ceil(ext / h);
    std::vector<double> yg(num.n_y + 1 + next);
    for (int i = 0; i < (int)yg.size(); ++i)
      yg[i] = yM - h * double((int)yg.size() - 1 - i);
    st.ygrid = yg;
  }
  int J = pert.leading_order;
  double cp = profile.c_plus;
  double yM = profile.y_M;
  Complex eip = std::exp(kI * (lambda * st.omega_n * yM / cp));
  for (int n = 0; n < N; ++n) {
    int j = J + n, m = j - 1;
    ErrorCoefficient dI = error_coefficients(st, Branch::I, j);
    ErrorCoefficient dR = error_coefficients(st, Branch::R, j);
    ErrorCoefficient dT;
    if (st.lower_propagating) dT = error_coefficients(st, Branch::T, j);
    ErrorCoefficient dM = error_coefficients(st, Branch::M, m);

    SphericalAmplitude bI = transport_step_incident(st, dI);
    MiddleSolution mid;
    mid.order = m;
    int np = st.num.n_psi, ny = (int)st.ygrid.size();
    mid.b = GridC(np, ny);
    mid.b_prime = GridC(np, ny);
    mid.source = GridC(np, ny);
    for (int ip = 0; ip < np; ++ip) {
      std::vector<Complex> f(ny);
      for (int i = 0; i < ny; ++i) {
        f[i] = -dM.vals.at(ip, i);
        mid.source.at(ip, i) = f[i];
      }
      Complex alpha1 =
          -2.0 * kI * lambda * st.omega_n / cp * eip * bI.equator_vals[ip];
      MiddleBvpResult r =
          st.lower_propagating
              ? middle_bvp_solve(profile, lambda, st.abs_omega_bar, st.omega_n,
                                 st.ygrid, f, alpha1, Complex{0, 0})
              : evanescent_lower_solve(profile, lambda, st.abs_omega_bar,
                                       st.omega_n, st.ygrid, f, alpha1);
      for (int i = 0; i < ny; ++i) {
        mid.b.at(ip, i) = r.b[i];
        mid.b_prime.at(ip, i) = r.b_prime[i];
      }
    }
    MatchingConstants mc = match_layers(st, m, bI.equator_vals, mid);
    SphericalAmplitude bR = transport_step_offset(st, dR, mc.C_R);
    st.orders.push_back(m);
    st.err_I.push_back(std::move(dI));
    st.err_R.push_back(std::move(dR));
    st.err_M.push_back(std::move(dM));
    st.dc_I.push_back(make_cache(st, st.fan_I, bI.vals));
    st.amp_I.push_back(std::move(bI));
    st.dc_R.push_back(make_cache(st, st.fan_R, bR.vals));
    st.amp_R.push_back(std::move(bR));
    if (st.lower_propagating) {
      SphericalAmplitude bT = transport_step_offset(st, dT, mc.C_T);
      st.err_T.push_back(std::move(dT));
      st.dc_T.push_back(make_cache(st, st.fan_T, bT.vals));
      st.amp_T.push_back(std::move(bT));
    }
    st.middles.push_back(std::move(mid));
    st.matchings.push_back(std::move(mc));
    st.c1.push_back(c1_correction(st, m));
  }
  return st;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

namespace {

Complex corrector_sum(const Parametrix& st, const Vec3& z, bool upper) {
  if (st.c1.empty()) return {0, 0};
  double yM = st.profile.y_M;
  double y = z.z;
  double t = upper ? 3.0 * (y - yM) / yM : 3.0 * (y + yM) / yM;
  double chi = chi_cut(t);
  if (chi == 0.0) return {0, 0};
  double rxy = std::hypot(z.x, z.y);
  double ps = std::atan2(z.y, z.x);
  int np = st.num.n_psi;
  Complex acc{0, 0};
  for (size_t i = 0; i < st.c1.size(); ++i) {
    int m = st.c1[i].order;
    const auto& c = st.c1[i];
    Complex beta = trig_eval<Complex>(np, upper ? c.beta_U.data() : c.beta_L.data(),
                                      1, ps);
    Complex gam = trig_eval<Complex>(
        np, upper ? c.gamma_U.data() : c.gamma_L.data(), 1, ps);
    double dy = upper ? (y - yM) : (y + yM);
    acc += ipow(1.0 / rxy, m + 1) * chi * (beta + dy * gam);
  }
  double xw = z.x * st.omega.x + z.y * st.omega.y;
  return acc * std::exp(kI * (st.lambda * xw / st.profile.c_plus));
}

Complex upper_eval(const Parametrix& st, const Vec3& z, bool with_corr) {
  double rz = z.norm();
  Vec3 dir = z * (1.0 / rz);
  double cp = st.profile.c_plus;
  double xw = z.x * st.omega.x + z.y * st.omega.y;
  Complex eI = std::exp(kI * (st.lambda * (xw + z.z * st.omega_n) / cp));
  Complex eR = std::exp(kI * (st.lambda * (xw - z.z * st.omega_n) / cp));
  Complex aI{1, 0}, aR = st.R_plus;
  for (size_t i = 0; i < st.orders.size(); ++i) {
    double f = ipow(1.0 / rz, st.orders[i]);
    aI += f * st.amp_value(Branch::I, (int)i, dir);
    aR += f * st.amp_value(Branch::R, (int)i, dir);
  }
  Complex v = eI * aI + eR * aR;
  if (with_corr) v -= corrector_sum(st, z, true);
  return v;
}

Complex lower_eval(const Parametrix& st, const Vec3& z, bool with_corr) {
  double rz = z.norm();
  Vec3 dir = z * (1.0 / rz);
  double xw = z.x * st.omega.x + z.y * st.omega.y;
  Complex eT = std::exp(
      kI * (st.lambda * xw / st.profile.c_plus + st.lambda * st.s_minus * z.z));
  Complex aT = st.T_plus;
  for (size_t i = 0; i < st.orders.size(); ++i)
    aT += ipow(1.0 / rz, st.orders[i]) * st.amp_value(Branch::T, (int)i, dir);
  Complex v = eT * aT;
  if (with_corr) v -= corrector_sum(st, z, false);
  return v;
}

void middle_full(const Parametrix& st, const Vec3& z, Complex& val,
                 Complex& dval) {
  double rxy = std::hypot(z.x, z.y);
  double ps = std::atan2(z.y, z.x);
  double xw = z.x * st.omega.x + z.y * st.omega.y;
  Complex eM = std::exp(kI * (st.lambda * xw / st.profile.c_plus));
  Complex a = st.phi.value(z.z), da = st.phi.deriv(z.z);
  for (size_t i = 0; i < st.middles.size(); ++i) {
    Complex v, d;
    st.middle_eval((int)i, ps, z.z, v, d);
    double f = ipow(1.0 / rxy, st.middles[i].order);
    a += f * v;
    da += f * d;
  }
  val = eM * a;
  dval = eM * da;
}

}  // namespace

Complex Parametrix::value(const Vec3& z) const {
  double yM = profile.y_M;
  if (z.z > yM) return upper_eval(*this, z, true);
  if (lower_propagating && z.z < -yM) return lower_eval(*this, z, true);
  if (!ygrid.empty() && z.z < ygrid.front() - 1e-12)
    throw Error("below the resolved evanescent tail");
  Complex v, d;
  middle_full(*this, z, v, d);
  return v;
}

Complex Parametrix::residual(const Vec3& z) const {
  double yM = profile.y_M;
  double y = z.z;
  double band = (5.0 / 3.0) * yM + 1e-9;
  if (std::abs(y) <= band)
    throw Error("residual is evaluated outside the interface collar");
  if (y < 0 && !lower_propagating)
    throw Error("lower half space is evanescent for this direction");
  double rz = z.norm();
  Vec3 dir = z * (1.0 / rz);
  eval_c(profile, pert, z, pert.max_order());  // expansion-domain guards
  // outside the slab c - c_b is the bare perturbation sum; build it directly
  // so the potential term keeps full relative precision
  double pval = 0.0;
  {
    std::set<int> ks;
    for (const auto& t : pert.terms) ks.insert(t.order);
    for (int j : ks) pval += pert.gamma(j, dir) * ipow(1.0 / rz, j);
  }
  double lam = lambda;
  auto branch_sum = [&](Branch br, Complex carrier_A0) -> Complex {
    const BranchFan& f = fan(br);
    double cb = f.c_speed;
    double delta = (2.0 * cb * pval + pval * pval) / (cb * cb);
    double c2 = cb * cb * (1.0 + delta);
    Complex acc = lam * lam * delta * carrier_A0;
    for (size_t i = 0; i < orders.size(); ++i) {
      int m = orders[i];
      Complex b, bs, lap;
      amp_derivs(br, (int)i, dir, b, bs, lap);
      double cs = dir.dot(f.source);
      double sn = std::sqrt(std::max(0.0, 1.0 - cs * cs));
      acc += -c2 * ipow(1.0 / rz, m + 2) * (double(m) * (m - 1) * b + lap);
      acc += 2.0 * kI * c2 * (lam / cb) * ipow(1.0 / rz, m + 1) *
             (double(m) * cs * b + sn * bs);
      acc += lam * lam * delta * ipow(1.0 / rz, m) * b;
    }
    return acc;
  };
  double cp = profile.c_plus;
  double xw = z.x * omega.x + z.y * omega.y;
  if (y > 0) {
    Complex eI = std::exp(kI * (lam * (xw + y * omega_n) / cp));
    Complex eR = std::exp(kI * (lam * (xw - y * omega_n) / cp));
    return eI * branch_sum(Branch::I, Complex{1, 0}) +
           eR * branch_sum(Branch::R, R_plus);
  }
  Complex eT = std::exp(kI * (lam * xw / cp + lam * s_minus * y));
  return eT * branch_sum(Branch::T, T_plus);
}

Parametrix::TraceJumps Parametrix::trace_jumps(double psi_q, double r,
                                               bool with_corrector) const {
  // all three regions share the carrier e^{i lam x.w_bar/c+}; divide it out so
  // the finite differences below only see O(lam y_M) phases
  double yM = profile.y_M;
  double cp = profile.c_plus;
  double cps = std::cos(psi_q), sps = std::sin(psi_q);
  auto corr_red = [&](double y, bool upper) -> Complex {
    if (!with_corrector || c1.empty()) return {0, 0};
    double t = upper ? 3.0 * (y - yM) / yM : 3.0 * (y + yM) / yM;
    double chi = chi_cut(t);
    if (chi == 0.0) return {0, 0};
    int np = num.n_psi;
    Complex acc{0, 0};
    for (size_t i = 0; i < c1.size(); ++i) {
      const auto& c = c1[i];
      Complex beta = trig_eval<Complex>(
          np, upper ? c.beta_U.data() : c.beta_L.data(), 1, psi_q);
      Complex gam = trig_eval<Complex>(
          np, upper ? c.gamma_U.data() : c.gamma_L.data(), 1, psi_q);
      double dy = upper ? (y - yM) : (y + yM);
      acc += ipow(1.0 / r, c.order + 1) * chi * (beta + dy * gam);
    }
    return acc;
  };
  auto up_red = [&](double y) -> Complex {
    double rz = std::sqrt(r * r + y * y);
    Vec3 dir{r * cps / rz, r * sps / rz, y / rz};
    Complex eu = std::exp(kI * (lambda * omega_n * y / cp));
    Complex aI{1, 0}, aR = R_plus;
    for (size_t i = 0; i < orders.size(); ++i) {
      double fct = ipow(1.0 / rz, orders[i]);
      aI += fct * amp_value(Branch::I, (int)i, dir);
      aR += fct * amp_value(Branch::R, (int)i, dir);
    }
    return aI * eu + aR / eu - corr_red(y, true);
  };
  auto lo_red = [&](double y) -> Complex {
    double rz = std::sqrt(r * r + y * y);
    Vec3 dir{r * cps / rz, r * sps / rz, y / rz};
    Complex aT = T_plus;
    for (size_t i = 0; i < orders.size(); ++i)
      aT += ipow(1.0 / rz, orders[i]) * amp_value(Branch::T, (int)i, dir);
    return aT * std::exp(kI * (lambda * s_minus * y)) - corr_red(y, false);
  };
  auto mid_red = [&](double y, Complex& v, Complex& d) {
    v = phi.value(y);
    d = phi.deriv(y);
    for (size_t i = 0; i < middles.size(); ++i) {
      Complex mv, md;
      middle_eval((int)i, psi_q, y, mv, md);
      double fct = ipow(1.0 / r, middles[i].order);
      v += fct * mv;
      d += fct * md;
    }
  };
  TraceJumps tj;
  double h = 0.004 * std::max(yM, 0.25);
  Complex mv, md;
  mid_red(yM, mv, md);
  tj.val_U = up_red(yM) - mv;
  Complex der = (-25.0 * up_red(yM) + 48.0 * up_red(yM + h) -
                 36.0 * up_red(yM + 2 * h) + 16.0 * up_red(yM + 3 * h) -
                 3.0 * up_red(yM + 4 * h)) /
                (12.0 * h);
  tj.der_U = der - md;
  if (lower_propagating) {
    mid_red(-yM, mv, md);
    tj.val_L = lo_red(-yM) - mv;
    double d = -h;
    Complex derl = (-25.0 * lo_red(-yM) + 48.0 * lo_red(-yM + d) -
                    36.0 * lo_red(-yM + 2 * d) + 16.0 * lo_red(-yM + 3 * d) -
                    3.0 * lo_red(-yM + 4 * d)) /
                   (12.0 * d);
    tj.der_L = derl - md;
  }
  return tj;
}

// ---------------------------------------------------------------------------
// Residual decay fit
// ---------------------------------------------------------------------------

DecayFit residual_decay_check(const Parametrix& st,
                              const std::vector<double>& radii,
                              const std::vector<Vec3>& dirs) {
  if (radii.size() < 3)
    throw ConfigInvalid("need at least three radii for a decay fit");
  DecayFit out;
  double nU = 0, nL = 0, sU = 0, sL = 0;
  int cntU = 0, cntL = 0;
  for (const Vec3& d0 : dirs) {
    Vec3 d = d0.normalized();
    if (std::abs(d.z) < st.num.delta_eq) continue;
    if (d.z < 0 && !st.lower_propagating) continue;
    std::vector<double> lx, ly;
    bool floored = false;
    for (double r : radii) {
      Vec3 z = d * r;
      if (std::abs(z.z) <= (5.0 / 3.0) * st.profile.y_M + 1e-9) continue;
      Complex res;
      try {
        res = st.residual(z);
      } catch (const AntipodeProximity&) {
        lx.clear();
        break;
      }
      double a = std::abs(res);
      if (a < 1e-250) {
        floored = true;
        continue;
      }
      lx.push_back(std::log(r));
      ly.push_back(std::log(a));
    }
    if (lx.size() < 3) {
      if (floored) {
        if (d.z > 0) cntU++; else cntL++;
        if (d.z > 0) nU++; else nL++;
      }
      continue;
    }
    double mx = 0, my = 0;
    for (size_t i = 0; i < lx.size(); ++i) {
      mx += lx[i];
      my += ly[i];
    }
    mx /= lx.size();
    my /= lx.size();
    double num = 0, den = 0;
    for (size_t i = 0; i < lx.size(); ++i) {
      num += (lx[i] - mx) * (ly[i] - my);
      den += (lx[i] - mx) * (lx[i] - mx);
    }
    double slope = num / den;
    out.dirs.push_back(d);
    out.slopes.push_back(slope);
    if (d.z > 0) {
      sU += slope;
      cntU++;
    } else {
      sL += slope;
      cntL++;
    }
  }
  out.floor_upper = cntU > 0 && nU == cntU;
  out.floor_lower = cntL > 0 && nL == cntL;
  int realU = cntU - (int)nU, realL = cntL - (int)nL;
  out.slope_upper = realU > 0 ? sU / realU : 0.0;
  out.slope_lower = realL > 0 ? sL / realL : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Leading conormal symbol
// ---------------------------------------------------------------------------

SymbolFan symbol_fan(const Parametrix& st, Branch branch, int k) {
  if (branch != Branch::R && branch != Branch::T)
    throw ConfigInvalid("symbol data is carried by the offset branches");
  if (branch == Branch::T && !st.lower_propagating)
    throw ConfigInvalid("no transmitted branch below the critical angle");
  const std::vector<Complex>* C = nullptr;
  for (const auto& mc : st.matchings)
    if (mc.order == k - 1) C = branch == Branch::R ? &mc.C_R : &mc.C_T;
  if (!C) throw ConfigInvalid("order not assembled");
  const BranchFan& f = st.fan(branch);
  double cb = f.c_speed;
  double lam = st.lambda;
  Complex A0 = st.order_zero_amp(branch);
  std::vector<int> K = pert_orders(st.pert);
  const Quad& q = gl_cached(64);
  SymbolFan out;
  out.branch = branch;
  out.order = k;
  out.psi = f.psi;
  out.theta_t = f.theta_t;
  out.value.resize(f.psi.size());
  for (size_t ip = 0; ip < f.psi.size(); ++ip) {
    double lo = f.s_lo[ip];
    Complex I{0, 0};
    for (size_t t = 0; t < q.x.size(); ++t) {
      double s = lo + (kPi - lo) * q.x[t];
      Vec3 dir = f.dir_at_s((int)ip, s);
      double dc2 = 0.0;
      for (size_t a = 0; a < K.size(); ++a) {
        double ga = st.pert.gamma(K[a], dir);
        if (K[a] == k) dc2 += 2.0 * cb * ga;
        for (size_t b = 0; b < K.size(); ++b)
          if (K[a] + K[b] == k) dc2 += ga * st.pert.gamma(K[b], dir);
      }
      I += q.w[t] * (kPi - lo) * ipow(std::sin(s), k - 2) *
           (lam * lam / (cb * cb)) * dc2 * A0;
    }
    out.value[ip] = kI / (2.0 * lam * cb) * (I + (*C)[ip]);
  }
  return out;
}

}  // namespace strata
