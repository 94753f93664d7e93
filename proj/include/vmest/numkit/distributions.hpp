#pragma once

#include <cmath>
#include <limits>
#include <utility>
#include <variant>

#include "vmest/error.hpp"

namespace vmest {

struct Normal {};
struct StudentT {
  double df;
};
struct FDist {
  double d1;
  double d2;
};
struct ChiSquared {
  double df;
};
struct GammaDist {
  double shape;
  double rate;
};

using Distribution = std::variant<Normal, StudentT, FDist, ChiSquared, GammaDist>;

namespace detail {

inline constexpr double kTiny = 1e-300;
inline constexpr double kEps = std::numeric_limits<double>::epsilon();

/// (P(a, x), Q(a, x)), the regularized lower/upper incomplete gamma pair.
/// Whichever tail is small is computed directly.
inline std::pair<double, double> incomplete_gamma(double a, double x) {
  if (x <= 0.0) return {0.0, 1.0};
  const double log_front = a * std::log(x) - x - std::lgamma(a);
  if (x < a + 1.0) {
    double ap = a;
    double del = 1.0 / a;
    double sum = del;
    for (int n = 0; n < 100000; ++n) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * kEps) break;
    }
    const double p = sum * std::exp(log_front);
    return {p, 1.0 - p};
  }
  // Modified Lentz continued fraction for Q.
  double b = x + 1.0 - a;
  double c = 1.0 / kTiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 100000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < kTiny) d = kTiny;
    c = b + an / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  const double q = std::exp(log_front) * h;
  return {1.0 - q, q};
}

inline double beta_cf(double a, double b, double x) {
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m < 200000; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

/// (I_x(a, b), 1 - I_x(a, b)), the regularized incomplete beta pair.
inline std::pair<double, double> incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return {0.0, 1.0};
  if (x >= 1.0) return {1.0, 0.0};
  const double log_front =
      a * std::log(x) + b * std::log1p(-x) - (std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b));
  if (x < (a + 1.0) / (a + b + 2.0)) {
    const double i = std::exp(log_front) * beta_cf(a, b, x) / a;
    return {i, 1.0 - i};
  }
  const double ic = std::exp(log_front) * beta_cf(b, a, 1.0 - x) / b;
  return {1.0 - ic, ic};
}

inline void check_params(const Distribution& dist) {
  const bool ok = std::visit(
      [](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Normal>) {
          return true;
        } else if constexpr (std::is_same_v<T, StudentT> || std::is_same_v<T, ChiSquared>) {
          return d.df > 0.0;
        } else if constexpr (std::is_same_v<T, FDist>) {
          return d.d1 > 0.0 && d.d2 > 0.0;
        } else {
          return d.shape > 0.0 && d.rate > 0.0;
        }
      },
      dist);
  if (!ok) throw Error(ErrorKind::DomainError, "distribution parameters must be positive");
}

inline bool on_real_line(const Distribution& dist) {
  return std::holds_alternative<Normal>(dist) || std::holds_alternative<StudentT>(dist);
}

}  // namespace detail

/// (cdf(x), 1 - cdf(x)) with the smaller tail evaluated directly, so upper
/// tail probabilities far below machine epsilon keep their precision.
inline std::pair<double, double> cdf_pair(const Distribution& dist, double x) {
  detail::check_params(dist);
  return std::visit(
      [x](const auto& d) -> std::pair<double, double> {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Normal>) {
          return {0.5 * std::erfc(-x / std::sqrt(2.0)), 0.5 * std::erfc(x / std::sqrt(2.0))};
        } else if constexpr (std::is_same_v<T, StudentT>) {
          // Near the centre df / (df + x^2) rounds to 1, so use P(|T| < |x|) there.
          const double z = x * x / (d.df + x * x);
          const double tail = z < 0.5 ? 0.5 * detail::incomplete_beta(0.5, d.df / 2.0, z).second
                                      : 0.5 * detail::incomplete_beta(d.df / 2.0, 0.5, d.df / (d.df + x * x)).first;
          return x > 0.0 ? std::pair{1.0 - tail, tail} : std::pair{tail, 1.0 - tail};
        } else if constexpr (std::is_same_v<T, FDist>) {
          if (x <= 0.0) return {0.0, 1.0};
          const double upper = detail::incomplete_beta(d.d2 / 2.0, d.d1 / 2.0, d.d2 / (d.d2 + d.d1 * x)).first;
          const double lower = detail::incomplete_beta(d.d1 / 2.0, d.d2 / 2.0, d.d1 * x / (d.d1 * x + d.d2)).first;
          return {lower, upper};
        } else if constexpr (std::is_same_v<T, ChiSquared>) {
          return detail::incomplete_gamma(d.df / 2.0, x / 2.0);
        } else {
          return detail::incomplete_gamma(d.shape, d.rate * x);
        }
      },
      dist);
}

inline double cdf(const Distribution& dist, double x) { return cdf_pair(dist, x).first; }

/// Upper tail probability P(X > x).
inline double sf(const Distribution& dist, double x) { return cdf_pair(dist, x).second; }

/// Inverse CDF by monotone bisection on the tail that contains p.
inline double quantile(const Distribution& dist, double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw Error(ErrorKind::DomainError, "quantile probability must lie in (0, 1)");
  }
  detail::check_params(dist);
  const bool lower_tail = p <= 0.5;
  const double target = lower_tail ? p : 1.0 - p;
  // below(x) is true while x lies left of the quantile.
  auto below = [&](double x) {
    const auto [lo, hi] = cdf_pair(dist, x);
    return lower_tail ? lo < target : hi > target;
  };

  double lo, hi;
  if (detail::on_real_line(dist)) {
    lo = -1.0;
    hi = 1.0;
    while (below(hi)) hi *= 2.0;
    while (!below(lo)) lo *= 2.0;
  } else {
    hi = 1.0;
    while (below(hi)) hi *= 2.0;
    lo = 0.5;
    while (!below(lo)) {
      lo *= 0.5;
      if (lo < 1e-300) return 0.0;
    }
  }
  for (int iter = 0; iter < 2000; ++iter) {
    double mid = (lo > 0.0 && hi > 2.0 * lo) ? std::sqrt(lo * hi) : 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (below(mid)) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo <= 2.0 * detail::kEps * std::max(std::abs(lo), std::abs(hi))) break;
  }
  return 0.5 * (lo + hi);
}

/// Two-sided z critical value for a central interval of probability `level`.
inline double z_critical(double level) {
  if (!(level > 0.0 && level < 1.0)) {
    throw Error(ErrorKind::DomainError, "confidence level must lie in (0, 1)");
  }
  return quantile(Normal{}, 0.5 * (1.0 + level));
}

}  // namespace vmest
