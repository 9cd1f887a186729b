#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

namespace strata {

using Complex = std::complex<double>;
inline constexpr Complex kI{0.0, 1.0};
inline constexpr double kPi = 3.14159265358979323846;

// ---------------------------------------------------------------------------
// Small fixed vector on S^2 / R^3. n = 3 is the concrete dimension here;
// formulas that depend on n keep it symbolic at the call site.
// ---------------------------------------------------------------------------
struct Vec3 {
  double x = 0, y = 0, z = 0;

  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double a) const { return {a * x, a * y, a * z}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  Vec3 normalized() const {
    double n = norm();
    return {x / n, y / n, z / n};
  }
};

inline Vec3 operator*(double a, const Vec3& v) { return v * a; }

// ---------------------------------------------------------------------------
// Error types. One exception class per contract violation named in the
// operation specs; all derive from Error so callers can catch coarsely.
// ---------------------------------------------------------------------------
struct Error : std::runtime_error {
  explicit Error(const std::string& m) : std::runtime_error(m) {}
};

struct EquatorialEvaluation : Error {
  explicit EquatorialEvaluation(const std::string& m) : Error(m) {}
};
struct BelowExpansionRadius : Error {
  explicit BelowExpansionRadius(const std::string& m) : Error(m) {}
};
struct CriticalAngle : Error {
  explicit CriticalAngle(const std::string& m) : Error(m) {}
};
struct NonzeroLambdaRequired : Error {
  explicit NonzeroLambdaRequired(const std::string& m) : Error(m) {}
};
struct BelowThreshold : Error {
  explicit BelowThreshold(const std::string& m) : Error(m) {}
};
struct EquatorialInput : Error {
  explicit EquatorialInput(const std::string& m) : Error(m) {}
};
struct TotalInternalReflection : Error {
  explicit TotalInternalReflection(const std::string& m) : Error(m) {}
};
struct NoCrossing : Error {
  explicit NoCrossing(const std::string& m) : Error(m) {}
};
struct AntipodeProximity : Error {
  explicit AntipodeProximity(const std::string& m) : Error(m) {}
};
struct GridResolutionExceeded : Error {
  explicit GridResolutionExceeded(const std::string& m) : Error(m) {}
};
struct SingularBoundarySystem : Error {
  explicit SingularBoundarySystem(const std::string& m) : Error(m) {}
};
struct NonOrthogonalSource : Error {
  explicit NonOrthogonalSource(const std::string& m) : Error(m) {}
};
struct InsufficientFamilyResolution : Error {
  explicit InsufficientFamilyResolution(const std::string& m) : Error(m) {}
};
struct DegenerateMultiplier : Error {
  explicit DegenerateMultiplier(const std::string& m) : Error(m) {}
};
struct VanishingCoefficient : Error {
  explicit VanishingCoefficient(const std::string& m) : Error(m) {}
};
struct SteplikeUnsupported : Error {
  explicit SteplikeUnsupported(const std::string& m) : Error(m) {}
};
struct IllPosedKernel : Error {
  explicit IllPosedKernel(const std::string& m) : Error(m) {}
};
struct ConfigInvalid : Error {
  explicit ConfigInvalid(const std::string& m) : Error(m) {}
};
struct IoFailure : Error {
  explicit IoFailure(const std::string& m) : Error(m) {}
};

// ---------------------------------------------------------------------------
// Shared numeric knobs. Defaults match the conventions recorded in the
// run manifest; every tolerance used by the pipeline lives here.
// ---------------------------------------------------------------------------
struct Numerics {
  double delta_eq = 0.05;     // equator exclusion half-width (radians)
  double delta_crit = 1e-3;   // exclusion band around omega_n = 0 and critical
  double delta_ant = 0.1;     // excluded disk radius around singular points
  int n_s = 96;               // Gauss-Legendre nodes along geodesics
  int n_psi = 48;             // uniform azimuth nodes
  int n_y = 1200;             // 1D grid points across [-y_max, y_max]
  int order_cap = 2;          // truncation orders supported by error stencils
  double eig_tol_rel = 1e-12; // eigenvalue bisection tolerance
};

// Gauss-Legendre nodes/weights on [-1,1], Newton iteration on P_n.
void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights);

// Nodes/weights mapped to [a,b].
void gauss_legendre_ab(int n, double a, double b, std::vector<double>& nodes,
                       std::vector<double>& weights);

}  // namespace strata
