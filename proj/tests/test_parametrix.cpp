#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "strata/parametrix.hpp"

using namespace strata;

namespace {

PerturbationExpansion smooth_pert(int J, double amp) {
  PerturbationExpansion p;
  p.leading_order = J;
  p.dimension = 3;
  ShTable t;
  t.band_limit = 2;
  t.coeffs.assign(9, 0.0);
  t.coeffs[sh_index(0, 0)] = amp;
  t.coeffs[sh_index(2, 0)] = 0.4 * amp;
  t.coeffs[sh_index(2, 1)] = 0.15 * amp;
  for (auto h : {Hemisphere::Upper, Hemisphere::Lower})
    p.terms.push_back({J, h, t});
  p.r0 = 10.0;
  return p;
}

StratifiedProfile trivial_slab() {
  return StratifiedProfile::make(1.0, 1.0, 0.5, {Layer{-0.5, 0.5, {1.0}}});
}

StratifiedProfile linear_slab() {
  return StratifiedProfile::make(1.0, 1.4, 0.5, {Layer{-0.5, 0.5, {1.2, -0.4}}});
}

// assembled states shared between test cases (construction dominates runtime)
const Parametrix& trivial_N1() {
  static Parametrix st = assemble_parametrix(
      trivial_slab(), smooth_pert(2, 0.5), 2.0, Vec3{0.3, 0.1, 0.8}.normalized(),
      1, Numerics{});
  return st;
}

const Parametrix& slab_N1() {
  static Parametrix st = assemble_parametrix(
      linear_slab(), smooth_pert(2, 0.5), 2.0, Vec3{0.45, 0.15, 0.9}.normalized(),
      1, Numerics{});
  return st;
}

const Parametrix& slab_N2() {
  static Parametrix st = assemble_parametrix(
      linear_slab(), smooth_pert(2, 0.5), 2.0, Vec3{0.45, 0.15, 0.9}.normalized(),
      2, Numerics{});
  return st;
}

const Parametrix& evan_N1() {
  static Parametrix st = assemble_parametrix(
      linear_slab(), smooth_pert(2, 0.5), 2.0, Vec3{0.9, 0.25, 0.36}.normalized(),
      1, Numerics{});
  return st;
}

Complex fd_operator(const Parametrix& st, const Vec3& z, double h) {
  auto u = [&](Vec3 p) { return st.value(p); };
  Complex lap{0, 0};
  for (Vec3 e : {Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}}) {
    lap += (-u(z + e * (2 * h)) + 16.0 * u(z + e * h) - 30.0 * u(z) +
            16.0 * u(z - e * h) - u(z - e * (2 * h))) /
           (12.0 * h * h);
  }
  double c = eval_c(st.profile, st.pert, z, st.pert.max_order());
  return -c * c * lap - st.lambda * st.lambda * u(z);
}

}  // namespace

TEST_CASE("incident wave solves the background equation") {
  StratifiedProfile prof = linear_slab();
  double lambda = 2.0;
  Vec3 omega = Vec3{0.45, 0.15, 0.9}.normalized();
  IncidentWave iw = incident_wave(prof, lambda, omega);
  // FD Laplacian at points in all three regions
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  double h = 2e-3;
  int checked = 0;
  while (checked < 100) {
    Vec3 z{3 * U(rng), 3 * U(rng), 2.5 * U(rng)};
    // stay outside the slab: inside, phi is a gridded interpolant whose
    // interpolation error dominates the FD stencil
    if (std::abs(z.z) < prof.y_M + 0.1) continue;
    auto u = [&](Vec3 p) { return iw(p); };
    Complex lap{0, 0};
    for (Vec3 e : {Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}}) {
      lap += (-u(z + e * (2 * h)) + 16.0 * u(z + e * h) - 30.0 * u(z) +
              16.0 * u(z - e * h) - u(z - e * (2 * h))) /
             (12.0 * h * h);
    }
    double c0 = eval_c0(prof, z.z);
    Complex res = -c0 * c0 * lap - lambda * lambda * u(z);
    CHECK(std::abs(res) / std::abs(u(z)) < 1e-6);
    ++checked;
  }
  // far field above the slab: plane wave plus reflected plane wave
  RTCoefficients rt = iw.phi.coeffs();
  Vec3 z{1.7, -0.4, 2.2};
  double cp = prof.c_plus;
  Complex expect =
      std::exp(kI * (lambda * z.dot(omega) / cp)) +
      rt.R * std::exp(kI * (lambda *
                            (z.x * omega.x + z.y * omega.y - z.z * omega.z) / cp));
  CHECK(std::abs(iw(z) - expect) < 1e-8);
  // below: transmitted plane wave
  double ab = std::hypot(omega.x, omega.y);
  double sm = std::sqrt(1.0 / (prof.c_minus * prof.c_minus) -
                        ab * ab / (cp * cp));
  Vec3 zb{0.3, 0.9, -1.9};
  Complex expb = rt.T * std::exp(kI * (lambda * (zb.x * omega.x + zb.y * omega.y) /
                                           cp +
                                       lambda * sm * zb.z));
  CHECK(std::abs(iw(zb) - expb) < 1e-8);
}

TEST_CASE("incident transport reproduces the constant-source closed form") {
  const Parametrix& st0 = trivial_N1();
  Parametrix st = init_parametrix(st0.profile, st0.pert, st0.lambda, st0.omega);
  int j = 2;
  ErrorCoefficient d;
  d.branch = Branch::I;
  d.order = j;
  int np = st.num.n_psi, ns = st.num.n_s;
  d.vals = GridC(np, ns);
  Complex dc{0.7, -0.3};
  for (auto& v : d.vals.v) v = dc;
  SphericalAmplitude b = transport_step_incident(st, d);
  CHECK(b.order == 1);
  CHECK(b.sin_exponent == 0);
  double c = st.profile.c_plus;
  for (int ip = 0; ip < np; ip += 7)
    for (int ic = 0; ic < ns; ic += 11) {
      double s = st.fan_I.s_at(ip, ic);
      Complex expect = kI * dc * s / (2.0 * st.lambda * c * std::sin(s));
      CHECK(std::abs(b.vals.at(ip, ic) - expect) < 1e-12 * std::abs(expect));
    }
  // equator value
  for (int ip = 0; ip < np; ip += 5) {
    double s = st.fan_I.s_hi[ip];
    Complex expect = kI * dc * s / (2.0 * st.lambda * c * std::sin(s));
    CHECK(std::abs(b.equator_vals[ip] - expect) < 1e-12);
  }
}

TEST_CASE("transport identity holds with second-order convergence") {
  const Parametrix& st = trivial_N1();
  int J = st.pert.leading_order;
  int m = J - 1;
  double cb = st.profile.c_plus;
  Vec3 v = st.fan_I.source;
  Vec3 z = Vec3{0.25, -0.2, 0.85}.normalized() * 50.0;
  auto w = [&](Vec3 p) {
    double rz = p.norm();
    return std::pow(rz, -double(m)) * st.amp_value(Branch::I, 0, p * (1.0 / rz));
  };
  // independent oracle for the source: leading potential coefficient only
  double rz = z.norm();
  Vec3 dir = z * (1.0 / rz);
  double dJ_or = st.lambda * st.lambda / (cb * cb) * 2.0 * cb *
                 st.pert.gamma(J, dir);
  Complex target = -Complex(dJ_or, 0) * std::pow(rz, -double(J));
  std::vector<double> lh, le;
  for (double h : {0.8, 0.4, 0.2, 0.1}) {
    Complex D = (w(z + v * h) - w(z - v * h)) / (2.0 * h);
    Complex err = -2.0 * kI * cb * st.lambda * D - target;
    lh.push_back(std::log(h));
    le.push_back(std::log(std::abs(err)));
  }
  // least-squares slope
  double mx = 0, my = 0;
  for (size_t i = 0; i < lh.size(); ++i) {
    mx += lh[i];
    my += le[i];
  }
  mx /= lh.size();
  my /= lh.size();
  double num = 0, den = 0;
  for (size_t i = 0; i < lh.size(); ++i) {
    num += (lh[i] - mx) * (le[i] - my);
    den += (lh[i] - mx) * (lh[i] - mx);
  }
  double slope = num / den;
  CHECK(slope > 1.7);
  CHECK(slope < 2.3);
}

TEST_CASE("middle solve satisfies the equation and both boundary functionals") {
  StratifiedProfile prof = linear_slab();
  double lambda = 2.3, ab = 0.45, wn = std::sqrt(1 - ab * ab);
  double cp = prof.c_plus, cm = prof.c_minus;
  double sm = std::sqrt(1.0 / (cm * cm) - ab * ab / (cp * cp));
  int n = 1201;
  std::vector<double> y(n);
  for (int i = 0; i < n; ++i) y[i] = -prof.y_M + 2 * prof.y_M * i / (n - 1);
  std::vector<Complex> f(n);
  for (int i = 0; i < n; ++i)
    f[i] = std::exp(kI * (1.3 * y[i])) * (1.0 + y[i] * y[i]);
  Complex a1{0.4, -1.1}, a2{-0.2, 0.6};
  MiddleBvpResult r =
      middle_bvp_solve(prof, lambda, ab, wn, y, f, a1, a2);
  double h = y[1] - y[0];
  double mu = lambda * ab / cp;
  double worst = 0;
  for (int i = 2; i < n - 2; ++i) {
    Complex bpp = (-r.b[i - 2] + 16.0 * r.b[i - 1] - 30.0 * r.b[i] +
                   16.0 * r.b[i + 1] - r.b[i + 2]) /
                  (12.0 * h * h);
    double c0 = eval_c0(prof, y[i]);
    Complex lhs =
        -c0 * c0 * bpp + (c0 * c0 * mu * mu - lambda * lambda) * r.b[i] - f[i];
    worst = std::max(worst, std::abs(lhs));
  }
  CHECK(worst < 1e-6);
  // derivative grid is consistent
  for (int i = 2; i < n - 2; i += 97) {
    Complex bp = (r.b[i - 2] - 8.0 * r.b[i - 1] + 8.0 * r.b[i + 1] -
                  r.b[i + 2]) /
                 (12.0 * h);
    CHECK(std::abs(bp - r.b_prime[i]) < 1e-8);
  }
  // boundary functionals
  Complex up = -(kI * lambda * wn / cp * r.b[n - 1] + r.b_prime[n - 1]);
  Complex lo = kI * lambda * sm * r.b[0] - r.b_prime[0];
  CHECK(std::abs(up - a1) < 1e-9);
  CHECK(std::abs(lo - a2) < 1e-9);
  // zero data gives the zero solution
  std::vector<Complex> zf(n, Complex{0, 0});
  MiddleBvpResult z =
      middle_bvp_solve(prof, lambda, ab, wn, y, zf, Complex{0, 0}, Complex{0, 0});
  for (int i = 0; i < n; i += 111) CHECK(std::abs(z.b[i]) < 1e-14);
}

TEST_CASE("evanescent solve decays at the analytic rate") {
  StratifiedProfile prof = linear_slab();
  double lambda = 2.0, ab = 0.93, wn = std::sqrt(1 - ab * ab);
  double cp = prof.c_plus, cm = prof.c_minus;
  double mu = lambda * ab / cp;
  double kap = std::sqrt(mu * mu - lambda * lambda / (cm * cm));
  int n = 4001;
  std::vector<double> y(n);
  double ylo = -12.0, yhi = prof.y_M;
  for (int i = 0; i < n; ++i) y[i] = ylo + (yhi - ylo) * i / (n - 1);
  std::vector<Complex> f(n, Complex{0, 0});
  for (int i = 0; i < n; ++i)
    if (std::abs(y[i]) < prof.y_M) f[i] = Complex{1.0, 0.5} * std::cos(2 * y[i]);
  MiddleBvpResult r = evanescent_lower_solve(prof, lambda, ab, wn, y, f,
                                             Complex{0.8, -0.2});
  // resubstitution
  double h = y[1] - y[0];
  double worst = 0;
  for (int i = 2; i < n - 2; i += 13) {
    // skip the c0 kink and the source jump at -y_M, and the top boundary row
    if (std::abs(y[i] + prof.y_M) < 0.03 || y[i] > yhi - 0.02) continue;
    Complex bpp = (-r.b[i - 2] + 16.0 * r.b[i - 1] - 30.0 * r.b[i] +
                   16.0 * r.b[i + 1] - r.b[i + 2]) /
                  (12.0 * h * h);
    double c0 = eval_c0(prof, y[i]);
    Complex lhs =
        -c0 * c0 * bpp + (c0 * c0 * mu * mu - lambda * lambda) * r.b[i] - f[i];
    worst = std::max(worst, std::abs(lhs));
  }
  CHECK(worst < 1e-6);
  // in the source-free tail the decay rate is kappa
  int i1 = (int)((-6.0 - ylo) / h), i2 = (int)((-3.0 - ylo) / h);
  double rate = (std::log(std::abs(r.b[i2])) - std::log(std::abs(r.b[i1]))) /
                (y[i2] - y[i1]);
  CHECK(std::abs(rate - kap) / kap < 0.01);
}

TEST_CASE("interface matching reinserts into all four trace equations") {
  const Parametrix& st = slab_N1();
  int np = st.num.n_psi;
  double yM = st.profile.y_M, cp = st.profile.c_plus;
  Complex eip = std::exp(kI * (st.lambda * st.omega_n * yM / cp));
  Complex etm = std::exp(kI * (-st.lambda * st.s_minus * yM));
  const auto& mc = st.matchings[0];
  const auto& mid = st.middles[0];
  const auto& bI = st.amp_I[0];
  int last = mid.b.n_cols - 1;
  for (int ip = 0; ip < np; ++ip) {
    Complex BI = bI.equator_vals[ip], BR = mc.B_R[ip], BT = mc.B_T[ip];
    // upper trace: value and derivative continuity
    Complex e1 = BI * eip + BR / eip - mid.b.at(ip, last);
    Complex e2 = kI * st.lambda * st.omega_n / cp * (BI * eip - BR / eip) -
                 mid.b_prime.at(ip, last);
    // lower trace
    Complex e3 = BT * etm - mid.b.at(ip, 0);
    Complex e4 = kI * st.lambda * st.s_minus * BT * etm - mid.b_prime.at(ip, 0);
    double scale = 1.0 + std::abs(BI) + std::abs(BR) + std::abs(BT);
    CHECK(std::abs(e1) / scale < 1e-9);
    CHECK(std::abs(e2) / scale < 1e-8);
    CHECK(std::abs(e3) / scale < 1e-9);
    CHECK(std::abs(e4) / scale < 1e-8);
  }
  // the offset amplitudes take the matched boundary values at the equator
  for (int ip = 0; ip < np; ip += 5) {
    CHECK(std::abs(st.amp_R[0].equator_vals[ip] - mc.B_R[ip]) <
          1e-10 * (1.0 + std::abs(mc.B_R[ip])));
    CHECK(std::abs(st.amp_T[0].equator_vals[ip] - mc.B_T[ip]) <
          1e-10 * (1.0 + std::abs(mc.B_T[ip])));
  }
}

TEST_CASE("semi-symbolic residual matches a finite-difference application") {
  struct Case {
    const Parametrix* st;
    Vec3 dir;
    double tol;
  };
  std::vector<Case> cases = {
      {&trivial_N1(), Vec3{0.2, -0.3, 0.9}.normalized(), 1e-3},
      {&slab_N1(), Vec3{0.2, -0.3, 0.9}.normalized(), 1e-3},
      {&slab_N1(), Vec3{0.4, 0.2, -0.8}.normalized(), 1e-3},
      {&evan_N1(), Vec3{0.2, -0.3, 0.9}.normalized(), 2e-2},
  };
  for (const auto& c : cases) {
    Vec3 z = c.dir * 40.0;
    Complex fd = fd_operator(*c.st, z, 3e-3);
    Complex sym = c.st->residual(z);
    CHECK(std::abs(fd - sym) / std::abs(sym) < c.tol);
  }
  // N = 0 state: residual is the bare potential mismatch
  Parametrix st0 = assemble_parametrix(trivial_slab(), smooth_pert(2, 0.5), 2.0,
                                       Vec3{0.3, 0.1, 0.8}.normalized(), 0);
  Vec3 z = Vec3{0.2, -0.3, 0.9}.normalized() * 40.0;
  Complex fd = fd_operator(st0, z, 3e-3);
  Complex sym = st0.residual(z);
  CHECK(std::abs(fd - sym) / std::abs(sym) < 1e-4);
}

TEST_CASE("residual extraction agrees with the closed-form leading coefficient") {
  Parametrix st0 = assemble_parametrix(trivial_slab(), smooth_pert(2, 0.5), 2.0,
                                       Vec3{0.3, 0.1, 0.8}.normalized(), 0);
  int J = st0.pert.leading_order;
  double lam = st0.lambda;
  for (Vec3 d : {Vec3{0.1, 0.2, 0.95}, Vec3{-0.6, 0.3, 0.65}}) {
    d = d.normalized();
    for (double r : {1e3, 2e3}) {
      Vec3 z = d * r;
      Complex ph = std::exp(kI * (lam * z.dot(st0.omega) / st0.profile.c_plus));
      Complex f = st0.residual(z) / ph * std::pow(r, double(J));
      double g = st0.pert.gamma(J, d);
      Complex expect = lam * lam * (2.0 * g + g * g * std::pow(r, -double(J)));
      CHECK(std::abs(f - expect) < 1e-10 * std::abs(expect));
    }
  }
}

TEST_CASE("residual decay improves with each correction order") {
  std::vector<double> radii = {1e2, 3e2, 1e3, 3e3, 1e4};
  std::vector<Vec3> dirs = {Vec3{0.2, -0.3, 0.9}.normalized(),
                            Vec3{-0.5, 0.1, 0.75}.normalized(),
                            Vec3{0.4, 0.2, -0.8}.normalized(),
                            Vec3{-0.1, -0.6, -0.7}.normalized()};
  Parametrix s0 = assemble_parametrix(linear_slab(), smooth_pert(2, 0.5), 2.0,
                                      Vec3{0.45, 0.15, 0.9}.normalized(), 0);
  DecayFit f0 = residual_decay_check(s0, radii, dirs);
  CHECK(f0.slope_upper < -2.0 + 0.3);
  CHECK(f0.slope_upper > -2.0 - 0.3);
  CHECK(f0.slope_lower < -2.0 + 0.3);
  DecayFit f1 = residual_decay_check(slab_N1(), radii, dirs);
  CHECK(f1.slope_upper < -3.0 + 0.3);
  CHECK(f1.slope_lower < -3.0 + 0.3);
  DecayFit f2 = residual_decay_check(slab_N2(), radii, dirs);
  CHECK(f2.slope_upper < -4.0 + 0.3);
  CHECK(f2.slope_lower < -4.0 + 0.3);
}

TEST_CASE("zero perturbation gives the incident wave and a floored residual") {
  PerturbationExpansion none;
  none.leading_order = 2;
  none.r0 = 10.0;
  StratifiedProfile prof = linear_slab();
  Vec3 omega = Vec3{0.45, 0.15, 0.9}.normalized();
  Parametrix st = assemble_parametrix(prof, none, 2.0, omega, 1);
  IncidentWave iw = incident_wave(prof, 2.0, omega);
  for (Vec3 z : {Vec3{40, -20, 30}, Vec3{5, 80, -60}, Vec3{100, 3, 0.1}}) {
    CHECK(std::abs(st.value(z) - iw(z)) < 1e-12);
  }
  std::vector<double> radii = {1e2, 1e3, 1e4};
  std::vector<Vec3> dirs = {Vec3{0.2, -0.3, 0.9}.normalized(),
                            Vec3{0.4, 0.2, -0.8}.normalized()};
  DecayFit f = residual_decay_check(st, radii, dirs);
  CHECK(f.floor_upper);
  CHECK(f.floor_lower);
}

TEST_CASE("corrected traces are C^1 across both interfaces") {
  // large range so the uncorrected quadratic 1/r^2 tail sits below tolerance
  for (const Parametrix* st : {&slab_N1(), &slab_N2(), &evan_N1()}) {
    for (double ps : {0.0, 0.9, 2.4, 4.4}) {
      auto tj = st->trace_jumps(ps, 1e6, true);
      CHECK(std::abs(tj.val_U) < 1e-9);
      CHECK(std::abs(tj.der_U) < 1e-9);
      if (st->lower_propagating) {
        CHECK(std::abs(tj.val_L) < 1e-9);
        CHECK(std::abs(tj.der_L) < 1e-9);
      }
    }
  }
}

TEST_CASE("transmitted symbol equals the full-geodesic integral when c is constant") {
  // with c+ = c- the transmitted carrier continues the incident one, so the
  // matching constant must complete the partial integral to the full geodesic
  const Parametrix& st = trivial_N1();
  int J = st.pert.leading_order;
  SymbolFan sf = symbol_fan(st, Branch::T, J);
  double cb = st.fan_T.c_speed, lam = st.lambda;
  std::vector<double> gx, gw;
  gauss_legendre_ab(200, 0.0, kPi, gx, gw);
  for (size_t ip = 0; ip < sf.psi.size(); ip += 3) {
    Complex full{0, 0};
    for (size_t t = 0; t < gx.size(); ++t) {
      Vec3 dir = st.fan_T.dir_at_s((int)ip, gx[t]);
      double dc2 = 2.0 * cb * st.pert.gamma(J, dir);
      full += gw[t] * std::pow(std::sin(gx[t]), double(J - 2)) *
              (lam * lam / (cb * cb)) * dc2 * st.T_plus;
    }
    Complex expect = kI / (2.0 * lam * cb) * full;
    CHECK(std::abs(sf.value[ip] - expect) < 1e-6 * (1.0 + std::abs(expect)));
  }
}

TEST_CASE("mode channel projection and constrained solve") {
  // a profile with guided modes: depressed speed inside the slab
  StratifiedProfile prof =
      StratifiedProfile::make(1.0, 1.0, 1.0, {Layer{-1.0, 1.0, {0.6}}});
  double lambda = 6.0;
  double kap = kappa_of_lambda(prof, lambda, 1);
  ModeSpectrum sp = guided_modes(prof, kap);
  REQUIRE(sp.mode_functions.size() >= 2);
  // resonance: the first branch passes through lambda^2 at this kappa
  CHECK(std::abs(sp.eigenvalues[0] - lambda * lambda) < 1e-6 * lambda * lambda);
  const ModeFunction& fk = sp.mode_functions[0];
  int ny = 801;
  std::vector<double> y(ny);
  for (int i = 0; i < ny; ++i) y[i] = -1.0 + 2.0 * i / (ny - 1);
  int np = 8;
  const ModeFunction& fj = sp.mode_functions[1];
  GridC d(np, ny);
  for (int ip = 0; ip < np; ++ip) {
    Complex a{0.3 + 0.1 * ip, -0.2}, b{1.0, 0.4 * ip};
    for (int i = 0; i < ny; ++i)
      d.at(ip, i) = a * fk.interp(y[i]) + b * fj.interp(y[i]);
  }
  ModeChannelSplit split = mode_channel_decompose(d, fk, prof, y);
  // weighted inner products with the resonant mode vanish after splitting
  double h = y[1] - y[0];
  for (int ip = 0; ip < np; ++ip) {
    Complex ipr{0, 0};
    double nrm = 0;
    for (int i = 0; i < ny; ++i) {
      double w = (i == 0 || i == ny - 1) ? 0.5 : 1.0;
      double c0 = eval_c0(prof, y[i]);
      ipr += w * h / (c0 * c0) * fk.interp(y[i]) * split.d_perp.at(ip, i);
      nrm += w * h / (c0 * c0) * std::norm(split.d_perp.at(ip, i));
    }
    CHECK(std::abs(ipr) / std::sqrt(nrm) < 1e-6);
    // coefficient recovers the planted mode load
    Complex a{0.3 + 0.1 * ip, -0.2};
    CHECK(std::abs(split.coeff[ip] - a) < 1e-6);
  }
  GridC g = mode_channel_solve(prof, lambda, kap, fk, split.d_perp, y);
  // resubstitution away from the ends
  for (int ip = 0; ip < np; ip += 3) {
    double worst = 0;
    for (int i = 20; i < ny - 20; ++i) {
      Complex gpp = (-g.at(ip, i - 2) + 16.0 * g.at(ip, i - 1) -
                     30.0 * g.at(ip, i) + 16.0 * g.at(ip, i + 1) -
                     g.at(ip, i + 2)) /
                    (12.0 * h * h);
      double c0 = eval_c0(prof, y[i]);
      Complex lhs = -c0 * c0 * gpp +
                    (c0 * c0 * kap * kap - lambda * lambda) * g.at(ip, i) -
                    split.d_perp.at(ip, i);
      worst = std::max(worst, std::abs(lhs));
    }
    CHECK(worst < 1e-4);
  }
  // a source with a resonant component is rejected
  CHECK_THROWS_AS(mode_channel_solve(prof, lambda, kap, fk, d, y),
                  NonOrthogonalSource);
}

TEST_CASE("guards") {
  StratifiedProfile prof = linear_slab();
  PerturbationExpansion pert = smooth_pert(2, 0.5);
  CHECK_THROWS_AS(init_parametrix(prof, pert, 2.0, Vec3{0.3, 0.1, -0.8}),
                  ConfigInvalid);
  CHECK_THROWS_AS(init_parametrix(prof, pert, 2.0, Vec3{0.9, 0.43, 0.02}),
                  EquatorialInput);
  double wc = prof.critical_omega_n();
  double hb = std::sqrt(1 - wc * wc);
  CHECK_THROWS_AS(init_parametrix(prof, pert, 2.0, Vec3{hb, 0, wc}),
                  CriticalAngle);
  CHECK_THROWS_AS(init_parametrix(prof, pert, -1.0, Vec3{0.3, 0.1, 0.8}),
                  NonzeroLambdaRequired);
  Numerics num;
  CHECK_THROWS_AS(assemble_parametrix(prof, pert, 2.0, Vec3{0.3, 0.1, 0.9},
                                      num.order_cap + 1, num),
                  GridResolutionExceeded);
  // antipode of the reflected carrier is excluded
  const Parametrix& st = slab_N1();
  Vec3 anti = (st.fan_R.source * -1.0);
  CHECK_THROWS_AS(st.residual(anti * 1e3), AntipodeProximity);
  // residual is undefined inside the interface collar
  CHECK_THROWS_AS(st.residual(Vec3{50.0, 2.0, 0.3}), Error);
}

TEST_CASE("assembly is deterministic") {
  Parametrix a = assemble_parametrix(linear_slab(), smooth_pert(2, 0.5), 2.0,
                                     Vec3{0.45, 0.15, 0.9}.normalized(), 1);
  Parametrix b = assemble_parametrix(linear_slab(), smooth_pert(2, 0.5), 2.0,
                                     Vec3{0.45, 0.15, 0.9}.normalized(), 1);
  for (size_t i = 0; i < a.amp_I[0].vals.v.size(); i += 53)
    CHECK(a.amp_I[0].vals.v[i] == b.amp_I[0].vals.v[i]);
  for (size_t i = 0; i < a.middles[0].b.v.size(); i += 211)
    CHECK(a.middles[0].b.v[i] == b.middles[0].b.v[i]);
  Vec3 z{40, -20, 30};
  CHECK(a.value(z) == b.value(z));
}
