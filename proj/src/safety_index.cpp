#include "safemr/safety_index.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace safemr {

namespace {

double clamped(double d) { return std::max(d, kDistanceFloor); }

bool finite_all(std::initializer_list<double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

void SafetyIndexParams::validate() const {
  if (!finite_all({sigma, k, n, d_min, eta_D})) {
    throw std::invalid_argument("safety index parameters must be finite");
  }
  if (sigma < 0.0) throw std::invalid_argument("sigma must be >= 0, got " + std::to_string(sigma));
  if (k < 0.0) throw std::invalid_argument("k must be >= 0, got " + std::to_string(k));
  if (n < 1.0) throw std::invalid_argument("n must be >= 1, got " + std::to_string(n));
  if (d_min <= 0.0) throw std::invalid_argument("d_min must be > 0");
  if (eta_D <= 0.0) throw std::invalid_argument("eta_D must be > 0");
}

void MagRegWeights::validate() const {
  if (!finite_all({a, b}) || a < 0.0 || b < 0.0) {
    throw std::invalid_argument("magnitude regularization weights must be finite and >= 0");
  }
}

double ZetaGradient::norm() const { return std::sqrt(sigma * sigma + k * k + n * n); }

double phi(const SafetyIndexParams& p, const DistanceFeature& f) {
  return std::pow(p.margin_base(), p.n) - std::pow(clamped(f.d), p.n) - p.k * f.d_dot;
}

double residual(const SafetyIndexParams& p, const DistanceFeature& now, const DistanceFeature& next) {
  return phi(p, next) - std::max(phi(p, now) - p.eta_D, 0.0);
}

double mag_reg(const SafetyIndexParams& p, const MagRegWeights& w) {
  return w.a * std::pow(p.margin_base(), p.n) + w.b * p.k;
}

ZetaGradient phi_grad(const SafetyIndexParams& p, const DistanceFeature& f) {
  const double c = p.margin_base();
  const double d = clamped(f.d);
  const double cn = std::pow(c, p.n);
  const double dn = std::pow(d, p.n);
  return {p.n * std::pow(c, p.n - 1.0), -f.d_dot, cn * std::log(c) - dn * std::log(d)};
}

ZetaGradient residual_grad(const SafetyIndexParams& p, const DistanceFeature& now,
                           const DistanceFeature& next) {
  ZetaGradient g = phi_grad(p, next);
  if (phi(p, now) - p.eta_D > 0.0) g += phi_grad(p, now) * -1.0;
  return g;
}

ZetaGradient mag_reg_grad(const SafetyIndexParams& p, const MagRegWeights& w) {
  const double c = p.margin_base();
  const double cn = std::pow(c, p.n);
  return {w.a * p.n * std::pow(c, p.n - 1.0), w.b, w.a * cn * std::log(c)};
}

}  // namespace safemr
