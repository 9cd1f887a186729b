#pragma once

#include <vector>

#include "strata/geometry.hpp"
#include "strata/media.hpp"
#include "strata/parametrix.hpp"
#include "strata/sph_harm.hpp"
#include "strata/spectral1d.hpp"
#include "strata/types.hpp"

namespace strata {

// ---------------------------------------------------------------------------
// Recovery of the angular layers of the perturbation from the leading symbols
// of the scattering data: weighted ray transforms along great circles, order
// reduction, even-function inversion, the odd-channel trick, sequential layer
// stripping, and the 1D background recovery from reflection data.
// ---------------------------------------------------------------------------

// One angular layer: real spherical-harmonic table per hemisphere, a jump
// across the equator is allowed.
struct AngularLayer {
  int order = 0;
  ShTable upper, lower;

  double eval(const Vec3& dir) const;
};

// Weighted integral along the geodesic leaving omega with fan angle
// theta_tilde, weight (sin s)^{k-2} over s in [0, pi]. The folded variant
// integrates the even extension of the upper-hemisphere values.
double weighted_ray_integral(const AngularLayer& W, const Vec3& omega,
                             double theta_tilde, int k, bool folded = false,
                             int n_nodes = 64);

// Family of anchors on one great circle. Anchor angles t parameterize the
// circle as cos(t) a1 + sin(t) a2 where a1 is horizontal; the z component
// along the circle is then sqrt(1 - pole_z^2) sin(t).
struct RayFamily {
  Vec3 pole;
  std::vector<double> t;
  std::vector<Complex> I;
};

Vec3 circle_anchor(const Vec3& pole, double t);
Vec3 circle_tangent(const Vec3& pole, double t);  // d(anchor)/dt, unit

struct RayIntegralData {
  int order = 0;  // weight exponent is order - 2
  std::vector<RayFamily> families;
};

// I_k on a uniform full-circle anchor family determines I_{k-2} on the same
// anchors: differentiate twice along the family and eliminate the cos^2
// factor. Requires k >= 4 and enough anchors to resolve the angular content.
std::vector<Complex> reduce_order(const std::vector<Complex>& I_family, int k);

// Quadrature grid of circle poles: Gauss-Legendre in mu, uniform azimuth.
struct PoleGrid {
  std::vector<double> mu, wmu;
  std::vector<double> phi;

  int n_mu() const { return (int)mu.size(); }
  int n_phi() const { return (int)phi.size(); }
  int n() const { return n_mu() * n_phi(); }
  Vec3 dir(int i) const;
  double weight(int i) const;  // quadrature weight on S^2
};

PoleGrid make_pole_grid(int n_mu, int n_phi);

// Great-circle integral of a band-limited table; dense-quadrature forward
// transform used both by the inversion multipliers and by test oracles.
double funk_transform(const ShTable& f, const Vec3& pole, int n_nodes = 128);

// Even-degree inversion of great-circle integrals G sampled on a pole grid.
// Multipliers are measured numerically on the basis harmonics; odd-degree
// output coefficients are zero.
ShTable funk_invert_even(const PoleGrid& g, const std::vector<double>& G,
                         int band_limit);

// Odd layers: input is the sin-weighted half-circle integral anchored at the
// equator crossing, one value per pole. The integrand is multiplied by
// z_n/|z|, inverted as an even problem, and divided back off the equator band.
ShTable recover_odd_part(const PoleGrid& g, const std::vector<double>& I1,
                         int band_limit, double delta_eq = 0.05);

// Raw symbol samples of one order plus the known prefactors per anchor.
struct ScatteringSymbolData {
  int order = 0;
  char prefactor_tag = 'T';  // 'T' or 'R'
  double lambda = 0;
  double c_branch = 1.0;  // speed in the i/(2 lambda c) constant
  std::vector<RayFamily> families;
  std::vector<std::vector<Complex>> prefactor;  // per family, per anchor
};

// Divides the symbol samples by prefactor * i/(2 lambda c) * calibration.
// Anchors whose prefactor magnitude is below 1e-10 are masked and refilled by
// continuity along the family; a family with no usable anchor throws
// VanishingCoefficient.
RayIntegralData extract_leading_symbol(const ScatteringSymbolData& S,
                                       Complex calibration = Complex{1, 0});

// Layout of the symbol data used by synthesis and stripping.
struct SymbolGrid {
  PoleGrid poles;
  std::vector<double> anchor_t;  // shared anchor angles, all in (0, pi)
  Branch mode = Branch::T;
};

SymbolGrid make_symbol_grid(int n_mu, int n_phi, int n_anchor = 2);

// Forward generation of the order-k symbol samples on the grid, one
// parametrix per (pole, anchor) incident direction.
ScatteringSymbolData synthesize_symbol(const StratifiedProfile& profile,
                                       const PerturbationExpansion& pert,
                                       double lambda, const SymbolGrid& grid,
                                       int k, const Numerics& num = {});

// All orders at once; assembles each incident direction once.
std::vector<ScatteringSymbolData> synthesize_symbols(
    const StratifiedProfile& profile, const PerturbationExpansion& pert,
    double lambda, const SymbolGrid& grid, const std::vector<int>& orders,
    const Numerics& num = {});

struct StripResult {
  std::vector<AngularLayer> layers;
  PerturbationExpansion gamma;          // converted perturbation terms
  std::vector<double> order_residual;   // rel. data misfit after each order
  Complex calibration{1, 0};
};

// Sequential recovery over ascending orders: subtract the synthesized
// contribution of the layers already recovered, extract the ray data, reduce
// the weight exponent to 0 or 1, invert (even or odd channel), convert to a
// perturbation term by the linearized speed relation, continue.
StripResult layer_strip(const std::vector<ScatteringSymbolData>& S,
                        const StratifiedProfile& profile, double lambda,
                        const SymbolGrid& grid, int band_limit,
                        const Numerics& num = {}, double halt_tol = 5e-2);

// ---------------------------------------------------------------------------
// 1D recovery: -phi'' + q phi = k^2 phi with compactly supported q.
// ---------------------------------------------------------------------------

struct BoundState {
  double kappa = 0;    // energy -kappa^2
  double norming = 0;  // coefficient of e^{-kappa x} in the kernel, > 0
};

struct Potential1D {
  std::vector<double> y, q;
  double support_radius = 0;
  std::vector<BoundState> bound;
};

// Reflection data R(k) on a symmetric k grid for incidence from +infinity
// (phi ~ e^{-iky} + R e^{iky} as y -> +infinity). Builds the kernel
// F(x) = (1/2pi) int R(k) e^{ikx} dk + sum_j c_j e^{-kappa_j x}, solves the
// layer equation K(x,.) by Nystrom discretization per x, and reconstructs
// q = -2 d/dx K(x, x).
Potential1D marchenko_invert_1d(const std::vector<double>& k,
                                const std::vector<Complex>& R,
                                const std::vector<BoundState>& bound,
                                double y_max, int nystrom = 512);

struct ProfileEstimate {
  std::vector<double> y, c0;
  Potential1D potential;
};

// R_plus(omega_n) at fixed lambda becomes reflection data at k = lambda
// omega_n / c_plus; the recovered potential maps back to c0 through
// q = lambda^2 (1/c_plus^2 - 1/c0^2). Compact-support case only.
ProfileEstimate recover_c0_from_coefficients(
    const std::vector<double>& omega_n, const std::vector<Complex>& R_plus,
    double lambda, double c_plus, double c_minus, double y_max,
    int nystrom = 512);

}  // namespace strata
