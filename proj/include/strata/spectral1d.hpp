#pragma once

#include <functional>
#include <vector>

#include "strata/media.hpp"
#include "strata/types.hpp"

namespace strata {

// ---------------------------------------------------------------------------
// 1D reduced problems for the stratified background.
//
// Convention flag: D_y = -i d/dy, so D_y^2 = -d^2/dy^2 and the generalized
// plane-wave equation reads  -phi'' = (lambda^2/c0^2 - tau^2) phi  with
// tau^2 = lambda^2 (1 - omega_n^2)/c_+^2.
// ---------------------------------------------------------------------------

enum class Regime { Propagating, Evanescent };

struct RTCoefficients {
  Complex R{0, 0};
  Complex T{0, 0};
  double omega_n = 0;
  double lambda = 0;
  Regime regime = Regime::Propagating;
};

struct Gridded1D {
  std::vector<double> y;
  std::vector<Complex> value;
  std::vector<Complex> deriv;

  Complex interp(double yq) const;        // cubic Hermite from (value, deriv)
  Complex interp_deriv(double yq) const;  // derivative of the interpolant
};

// Exact-in-constant-layers evaluator for a plane-wave solution phi. Stores the
// state at every layer boundary and re-propagates inside a layer on demand.
class PlaneWave1D {
 public:
  PlaneWave1D() = default;
  Complex value(double y) const;
  Complex deriv(double y) const;

  const RTCoefficients& coeffs() const { return rt_; }
  const Gridded1D& grid() const { return grid_; }

 private:
  friend PlaneWave1D solve_phi_impl(const StratifiedProfile&, double, double, bool,
                                    const Numerics&);
  StratifiedProfile profile_;
  double lambda_ = 0, tau2_ = 0;
  bool from_above_ = true;
  RTCoefficients rt_;
  Complex k_inc_{0, 0}, k_far_{0, 0};  // vertical wavenumbers, incident/far side
  std::vector<double> break_y_;
  std::vector<Complex> break_v_, break_d_;  // state at each break, ascending y
  Gridded1D grid_;
};

// phi_+ : incidence from y = +infinity (Eqs. of the guided construction);
// phi_- : incidence from y = -infinity with the roles of c_+/c_- exchanged.
PlaneWave1D solve_phi_plus(const StratifiedProfile& profile, double lambda,
                           double omega_n, const Numerics& num = {});
PlaneWave1D solve_phi_minus(const StratifiedProfile& profile, double lambda,
                            double omega_n, const Numerics& num = {});

// ---------------------------------------------------------------------------
// Guided modes: eigenvalues lambda_j^2(kappa) < c_+^2 kappa^2 of
// c0^2 (kappa^2 + D_y^2) on L^2(R, c0^{-2} dy).
// ---------------------------------------------------------------------------
struct ModeFunction {
  std::vector<double> y;
  std::vector<double> value;  // normalized in L^2(c0^{-2} dy), real
  double decay_plus = 0;      // sqrt(kappa^2 - lambda_j^2/c_+^2)
  double decay_minus = 0;

  double interp(double yq) const;
};

struct ModeSpectrum {
  double kappa = 0;
  std::vector<double> eigenvalues;  // lambda_j^2, ascending
  std::vector<ModeFunction> mode_functions;
};

ModeSpectrum guided_modes(const StratifiedProfile& profile, double kappa,
                          const Numerics& num = {});

// Number of eigenvalues below c_+^2 kappa^2 (Sturm count of the shooting
// solution); shared by the threshold search.
int guided_mode_count(const StratifiedProfile& profile, double kappa,
                      const Numerics& num = {});

// kappa_j(lambda): inverse of lambda_j(kappa) for the j-th branch (1-based j).
double kappa_of_lambda(const StratifiedProfile& profile, double lambda, int j,
                       const Numerics& num = {});

struct Thresholds {
  int channel_count = 0;          // T(lambda)
  std::vector<double> t;          // all thresholds found below lambda^2
};

Thresholds thresholds(const StratifiedProfile& profile, double lambda,
                      const Numerics& num = {});

// Weighted inner product <f, g>_{c0^{-2} dy} over the mode grid plus analytic
// exponential tails.
double mode_inner_product(const StratifiedProfile& profile, const ModeFunction& f,
                          const ModeFunction& g);

// ---------------------------------------------------------------------------
// Generic Schrodinger half-line scattering used by the inverse module:
// -phi'' + q(y) phi = k^2 phi with q compactly supported in [y_lo, y_hi].
// Returns the reflection coefficient for incidence from +infinity.
// ---------------------------------------------------------------------------
Complex schrodinger_reflection(const std::function<double(double)>& q, double y_lo,
                               double y_hi, double k, int steps = 4000);

}  // namespace strata
