#pragma once

#include <stdexcept>

namespace safemr {

/// Distances below this are clamped before power and log terms.
inline constexpr double kDistanceFloor = 1e-3;

/// Parametric energy function phi(s) = (sigma + d_min)^n - d^n - k * d_dot.
/// sigma, k, n are learned; d_min and eta_D are fixed per task.
struct SafetyIndexParams {
  double sigma = 0.5;
  double k = 1.0;
  double n = 2.0;
  double d_min = 0.1;
  double eta_D = 0.05;

  /// Throws std::invalid_argument unless sigma >= 0, k >= 0, n >= 1,
  /// d_min > 0 and eta_D > 0 (all finite).
  void validate() const;
  double margin_base() const { return sigma + d_min; }
};

struct DistanceFeature {
  double d = 0.0;      // distance to the nearest obstacle surface
  double d_dot = 0.0;  // its time derivative
};

struct MagRegWeights {
  double a = 0.0;
  double b = 0.0;

  void validate() const;
  bool is_zero() const { return a == 0.0 && b == 0.0; }
};

/// Gradient with respect to (sigma, k, n).
struct ZetaGradient {
  double sigma = 0.0;
  double k = 0.0;
  double n = 0.0;

  ZetaGradient& operator+=(const ZetaGradient& o) {
    sigma += o.sigma;
    k += o.k;
    n += o.n;
    return *this;
  }
  ZetaGradient operator*(double s) const { return {sigma * s, k * s, n * s}; }
  double norm() const;
};

double phi(const SafetyIndexParams& p, const DistanceFeature& f);

/// phi(next) - max(phi(now) - eta_D, 0). Negative iff the energy-descent
/// constraint holds.
double residual(const SafetyIndexParams& p, const DistanceFeature& now, const DistanceFeature& next);

/// a * (sigma + d_min)^n + b * k
double mag_reg(const SafetyIndexParams& p, const MagRegWeights& w);

ZetaGradient phi_grad(const SafetyIndexParams& p, const DistanceFeature& f);

/// Gradient of residual(). The max branch contributes only when
/// phi(now) - eta_D > 0; the tie goes to the zero branch.
ZetaGradient residual_grad(const SafetyIndexParams& p, const DistanceFeature& now,
                           const DistanceFeature& next);

ZetaGradient mag_reg_grad(const SafetyIndexParams& p, const MagRegWeights& w);

}  // namespace safemr
