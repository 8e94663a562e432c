#ifndef HCRL_SPECIAL_HPP
#define HCRL_SPECIAL_HPP

#include "hcrl/common.hpp"

#include <cmath>

// Digamma / trigamma via upward recurrence into the Bernoulli asymptotic
// region. Absolute error below 1e-13 for positive arguments, which the
// ELBO terms need (they are dominated by digamma differences).

namespace hcrl {

inline double digamma(double x) {
    if (!(x > 0.0))
        throw invalid_input("digamma: argument must be positive, got " + std::to_string(x));
    double acc = 0.0;
    while (x < 10.0) {
        acc -= 1.0 / x;
        x += 1.0;
    }
    // psi(x) ~ ln x - 1/2x - sum B_2k / (2k x^2k)
    const double inv2 = 1.0 / (x * x);
    double series = inv2 * (1.0 / 12.0 +
                    inv2 * (-1.0 / 120.0 +
                    inv2 * (1.0 / 252.0 +
                    inv2 * (-1.0 / 240.0 +
                    inv2 * (1.0 / 132.0 +
                    inv2 * (-691.0 / 32760.0 +
                    inv2 * (1.0 / 12.0)))))));
    return acc + std::log(x) - 0.5 / x - series;
}

inline double trigamma(double x) {
    if (!(x > 0.0))
        throw invalid_input("trigamma: argument must be positive, got " + std::to_string(x));
    double acc = 0.0;
    while (x < 10.0) {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    // psi'(x) ~ 1/x + 1/2x^2 + sum B_2k / x^(2k+1)
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    double series = inv * (1.0 +
                    inv * (0.5 +
                    inv * (1.0 / 6.0 +
                    inv2 * (-1.0 / 30.0 +
                    inv2 * (1.0 / 42.0 +
                    inv2 * (-1.0 / 30.0 +
                    inv2 * (5.0 / 66.0 +
                    inv2 * (-691.0 / 2730.0))))))));
    return acc + series;
}

inline double log_beta(double a, double b) {
    if (!(a > 0.0) || !(b > 0.0))
        throw invalid_input("log_beta: parameters must be positive");
    return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

/// log(sum_i exp(v_i)) with max subtraction; -inf entries are allowed.
inline double logsumexp(const Vec &v) {
    if (v.size() == 0)
        throw invalid_input("logsumexp: empty input");
    double m = v.maxCoeff();
    if (!std::isfinite(m))
        return m; // all -inf (or a nan propagates)
    double s = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i)
        s += std::exp(v[i] - m);
    return m + std::log(s);
}

/// Normalized exp(v - logsumexp(v)).
inline Vec softmax_from_log(const Vec &v) {
    double lse = logsumexp(v);
    if (!std::isfinite(lse))
        throw numeric_error("softmax_from_log: all weights are -inf");
    return (v.array() - lse).exp().matrix();
}

inline double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

/// log(sigmoid(x)), stable for large |x|.
inline double log_sigmoid(double x) { return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

} // namespace hcrl

#endif
