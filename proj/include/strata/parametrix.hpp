#pragma once

#include <vector>

#include "strata/geometry.hpp"
#include "strata/media.hpp"
#include "strata/spectral1d.hpp"
#include "strata/types.hpp"

namespace strata {

// ---------------------------------------------------------------------------
// Order-by-order construction of an approximate outgoing wave for the
// perturbed medium: homogeneous amplitude corrections transported along
// great circles in the two half spaces, a Robin boundary-value problem across
// the slab, matching constants at the interface traces, and C^1 glue.
// ---------------------------------------------------------------------------

enum class Branch { I, R, T, M };

// Dense complex grid; rows indexed by azimuth node, columns by the branch
// coordinate (sigma along the geodesic, or y for the middle region).
struct GridC {
  int n_rows = 0, n_cols = 0;
  std::vector<Complex> v;

  GridC() = default;
  GridC(int nr, int nc) : n_rows(nr), n_cols(nc), v((size_t)nr * nc) {}
  Complex& at(int ir, int ic) { return v[(size_t)ir * n_cols + ic]; }
  Complex at(int ir, int ic) const { return v[(size_t)ir * n_cols + ic]; }
};

// Geodesic fan out of a source direction, one geodesic per equatorial
// azimuth psi; the geodesic through azimuth psi meets the equator at
// (cos psi, sin psi, 0). Grid columns are shared Gauss-Legendre nodes
// sigma in (0,1) mapped to [s_lo(psi), s_hi(psi)].
struct BranchFan {
  Branch branch = Branch::I;
  Vec3 source;            // fan vertex
  double c_speed = 1.0;   // speed of the carrier exponential e^{i lam z.v/c}
  GeodesicFrame frame;

  std::vector<double> psi;               // uniform on [0, 2pi)
  std::vector<double> sigma;             // Gauss-Legendre nodes on (0,1)
  std::vector<double> s_lo, s_hi;        // per-psi arclength range
  std::vector<double> theta_t;           // fan angle of the psi geodesic (unwrapped)
  std::vector<double> s_lo_p, len_p;     // d/dpsi of s_lo and of (s_hi - s_lo)
  std::vector<double> dpsi_dtheta;       // 1 / (d theta_t / d psi)

  double len(int ip) const { return s_hi[ip] - s_lo[ip]; }
  double s_at(int ip, int ic) const { return s_lo[ip] + sigma[ic] * len(ip); }
  Vec3 dir_at(int ip, int ic) const;
  Vec3 dir_at_s(int ip, double s) const;

  // Fan coordinates of an arbitrary direction. sigma is clamped to [0,1]
  // within a small tolerance; AntipodeProximity beyond the upper end.
  void locate(const Vec3& dir, double& sig_out, double& psi_out) const;
};

// Amplitude of one homogeneity order on one branch. The stored kernel F
// relates to the amplitude by b = F / (sin s)^{sin_exponent}; offset branches
// keep the smooth kernel so interpolation never sees the antipode growth.
struct SphericalAmplitude {
  Branch branch = Branch::I;
  int order = 0;         // homogeneity |z|^{-order}
  int sin_exponent = 0;
  GridC vals;                         // kernel F at (psi, sigma)
  std::vector<Complex> equator_vals;  // amplitude b at the equator crossing
};

struct ErrorCoefficient {
  Branch branch = Branch::I;
  int order = 0;  // coefficient of |z|^{-order} (|x|^{-order} for M)
  GridC vals;     // (psi, sigma) for I/R/T; (psi, y) for M
};

struct MatchingConstants {
  int order = 0;  // amplitude order the constants belong to
  std::vector<Complex> C_R, C_T;  // offset-transport constants, per psi
  std::vector<Complex> B_R, B_T;  // boundary amplitudes they encode
};

struct C1Correction {
  int order = 0;
  // 1/|x| coefficients of the value / y-derivative trace mismatches
  std::vector<Complex> beta_U, gamma_U, beta_L, gamma_L;
};

struct MiddleSolution {
  int order = 0;
  GridC b, b_prime;  // (psi, y) over the middle y grid
  GridC source;      // right-hand side used in the solve
};

// ---------------------------------------------------------------------------
// Background incident wave Phi(z) = e^{i lam x.w_bar/c+} phi_+(y).
// ---------------------------------------------------------------------------
struct IncidentWave {
  StratifiedProfile profile;
  PlaneWave1D phi;
  Vec3 omega;
  double lambda = 0;

  Complex operator()(const Vec3& z) const;
};

IncidentWave incident_wave(const StratifiedProfile& profile, double lambda,
                           const Vec3& omega, const Numerics& num = {});

// ---------------------------------------------------------------------------
// Assembled state. Public data so the per-step operations below can be driven
// (and inspected) one at a time; assemble_parametrix runs the standard loop.
// ---------------------------------------------------------------------------
struct Parametrix {
  StratifiedProfile profile;
  PerturbationExpansion pert;
  double lambda = 0;
  Vec3 omega;
  Numerics num;

  PlaneWave1D phi;
  Complex R_plus{0, 0}, T_plus{0, 0};
  double omega_n = 0, abs_omega_bar = 0, psi_omega = 0;
  double mu = 0;        // horizontal wavenumber lam |w_bar| / c+
  double s_minus = 0;   // lower vertical slowness sqrt(1/c-^2 - |w_bar|^2/c+^2)
  bool lower_propagating = true;

  BranchFan fan_I, fan_R, fan_T;
  std::vector<double> ygrid;  // uniform on [-y_M, y_M]

  std::vector<int> orders;    // processed amplitude orders (J-1, J, ...)
  std::vector<SphericalAmplitude> amp_I, amp_R, amp_T;
  std::vector<MiddleSolution> middles;
  std::vector<MatchingConstants> matchings;
  std::vector<C1Correction> c1;
  std::vector<ErrorCoefficient> err_I, err_R, err_T, err_M;

  // kernel-space derivative grids per stored amplitude:
  // d/ds, d2/ds2 at fixed theta_t; Dt = d/dtheta_t at fixed s, applied twice
  struct DerivCache {
    GridC Fs, Fss, Ftt;
  };
  std::vector<DerivCache> dc_I, dc_R, dc_T;

  // shared differentiation machinery
  std::vector<double> sigma_nodes_;    // Gauss-Legendre nodes on (0,1)
  std::vector<double> bary_w;          // barycentric weights for sigma nodes
  std::vector<double> Dsig, Dpsi;      // dense (n_s x n_s), (n_psi x n_psi)

  const BranchFan& fan(Branch b) const;
  const std::vector<SphericalAmplitude>& amps(Branch b) const;
  const std::vector<DerivCache>& caches(Branch b) const;
  Complex order_zero_amp(Branch b) const;  // 1, R_plus or T_plus

  // amplitude and its geodesic derivatives at an arbitrary direction
  void amp_derivs(Branch b, int idx, const Vec3& dir, Complex& val, Complex& ds,
                  Complex& lap) const;
  Complex amp_value(Branch b, int idx, const Vec3& dir) const;

  // middle layer interpolated in (psi, y); returns value and d/dy
  void middle_eval(int idx, double psi_q, double yq, Complex& val,
                   Complex& dval) const;

  Complex value(const Vec3& z) const;

  // (c^2 Delta - lam^2) applied to the ansatz, exact in |z| given the stored
  // angular grids; defined off the equator band / corrector band and away
  // from the branch antipodes.
  Complex residual(const Vec3& z) const;

  // value / y-derivative jumps of the assembled ansatz across y = +-y_M at
  // horizontal range r (upper minus middle, lower minus middle)
  struct TraceJumps {
    Complex val_U, der_U, val_L, der_L;
  };
  TraceJumps trace_jumps(double psi_q, double r, bool with_corrector) const;
};

Parametrix init_parametrix(const StratifiedProfile& profile,
                           const PerturbationExpansion& pert, double lambda,
                           const Vec3& omega, const Numerics& num = {});

// Coefficient of |z|^{-order} (branch carrier factored out) produced by the
// operator applied to the amplitudes assembled so far.
ErrorCoefficient error_coefficients(const Parametrix& st, Branch branch,
                                    int order);

// b(s) = i/(2 lam c (sin s)^{j-1}) * int_0^s (sin)^{j-2} d, smooth at s = 0.
SphericalAmplitude transport_step_incident(const Parametrix& st,
                                           const ErrorCoefficient& d);

// Offset variant integrating from the equator crossing with constant C.
SphericalAmplitude transport_step_offset(const Parametrix& st,
                                         const ErrorCoefficient& d,
                                         const std::vector<Complex>& C);

struct MiddleBvpResult {
  std::vector<Complex> b, b_prime;
  Complex boundary_det{0, 0};
};

// c0^2 (D_y^2 + (lam |w_bar|/c+)^2) b - lam^2 b = f on [-y_M, y_M] with
//   -(i lam w_n/c+) b(y_M) - b'(y_M) = alpha1
//    (i lam s_-)    b(-y_M) - b'(-y_M) = alpha2
MiddleBvpResult middle_bvp_solve(const StratifiedProfile& profile, double lambda,
                                 double abs_omega_bar, double omega_n,
                                 const std::vector<double>& y,
                                 const std::vector<Complex>& f, Complex alpha1,
                                 Complex alpha2);

// Evanescent lower side: same ODE on (-inf, y_M] truncated to the given grid,
// decaying branch selected at the bottom, upper Robin condition alpha1.
MiddleBvpResult evanescent_lower_solve(const StratifiedProfile& profile,
                                       double lambda, double abs_omega_bar,
                                       double omega_n,
                                       const std::vector<double>& y,
                                       const std::vector<Complex>& f,
                                       Complex alpha1);

// Extract the offset constants of order `order` from the interface traces.
MatchingConstants match_layers(const Parametrix& st, int order,
                               const std::vector<Complex>& B_I,
                               const MiddleSolution& mid);

// 1/|x| coefficients of the trace mismatches of the order-`order` layer,
// fitted from several large radii.
C1Correction c1_correction(const Parametrix& st, int order);

// Weighted projection onto a guided mode in L^2(c0^{-2} dy).
struct ModeChannelSplit {
  GridC d_perp;                 // component orthogonal to the mode
  std::vector<Complex> coeff;   // mode coefficient per azimuth
};

ModeChannelSplit mode_channel_decompose(const GridC& d, const ModeFunction& f,
                                        const StratifiedProfile& profile,
                                        const std::vector<double>& y);

// Solve (c0^2 (D_y^2 + kappa_j^2) - lam^2) g = d_perp columnwise, g orthogonal
// to the resonant mode. Throws NonOrthogonalSource beyond 1e-8.
GridC mode_channel_solve(const StratifiedProfile& profile, double lambda,
                         double kappa_j, const ModeFunction& f,
                         const GridC& d_perp, const std::vector<double>& y,
                         const Numerics& num = {});

Parametrix assemble_parametrix(const StratifiedProfile& profile,
                               const PerturbationExpansion& pert, double lambda,
                               const Vec3& omega, int N,
                               const Numerics& num = {});

struct DecayFit {
  std::vector<Vec3> dirs;
  std::vector<double> slopes;      // per direction, log|res| vs log r
  double slope_upper = 0, slope_lower = 0;  // means per half space
  bool floor_upper = false, floor_lower = false;
};

DecayFit residual_decay_check(const Parametrix& st,
                              const std::vector<double>& radii,
                              const std::vector<Vec3>& dirs);

// Full-geodesic weighted integral of the order-k potential source plus the
// matching constant of order k-1: the conormal coefficient carried to the
// branch antipode, per equatorial azimuth.
struct SymbolFan {
  Branch branch = Branch::T;
  int order = 0;
  std::vector<double> psi, theta_t;
  std::vector<Complex> value;
};

SymbolFan symbol_fan(const Parametrix& st, Branch branch, int k);

}  // namespace strata
