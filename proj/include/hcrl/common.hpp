#ifndef HCRL_COMMON_HPP
#define HCRL_COMMON_HPP

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace hcrl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;  // rows = instances unless stated otherwise

/// Bad caller input (shape mismatch, out-of-range parameter, unknown path).
struct invalid_input : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Non-finite values or otherwise broken numerics at runtime.
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// File format / filesystem problems, message carries the location.
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string &msg) {
    if (!cond)
        throw invalid_input(msg);
}

inline bool all_finite(const Vec &v) { return v.allFinite(); }
inline bool all_finite(const Mat &m) { return m.allFinite(); }

/// Deterministic RNG. mt19937_64 core with explicitly coded uniform /
/// normal transforms so streams are pinned independent of the standard
/// library's distribution implementations.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

    std::uint64_t next_u64() {
        // xorshift* keeps the generator self-contained and fast
        std::uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545f4914f6cdd1dULL;
    }

    /// Uniform in [0,1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo,hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; pairs cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0)
            u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * M_PI * u2);
        have_spare_ = true;
        return r * std::cos(2.0 * M_PI * u2);
    }

    Vec normal_vec(Eigen::Index n) {
        Vec v(n);
        for (Eigen::Index i = 0; i < n; ++i)
            v[i] = normal();
        return v;
    }

    Mat normal_mat(Eigen::Index r, Eigen::Index c) {
        Mat m(r, c);
        for (Eigen::Index i = 0; i < r; ++i)
            for (Eigen::Index j = 0; j < c; ++j)
                m(i, j) = normal();
        return m;
    }

    /// Index in [0,n).
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }

    /// Sample index proportional to nonnegative weights (must not all be zero).
    std::size_t categorical(const Vec &w) {
        double total = w.sum();
        if (!(total > 0.0) || !w.allFinite())
            throw numeric_error("categorical: weights must be finite with positive sum");
        double u = uniform() * total;
        double acc = 0.0;
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            acc += w[i];
            if (u < acc)
                return static_cast<std::size_t>(i);
        }
        return static_cast<std::size_t>(w.size() - 1);
    }

    template <typename T> void shuffle(std::vector<T> &v) {
        for (std::size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[index(i)]);
    }

    /// Derive an independent stream (used to give each network / purpose
    /// its own seed so adding a component does not shift the others).
    Rng fork(std::uint64_t salt) {
        std::uint64_t s = state_ ^ (salt * 0xbf58476d1ce4e5b9ULL + 0x94d049bb133111ebULL);
        return Rng(s ? s : 1);
    }

  private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace hcrl

#endif
