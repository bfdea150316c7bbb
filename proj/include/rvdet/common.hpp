// Small shared vocabulary: 2D/3D vectors, angle wrapping, compensated
// summation, and a portable seeded RNG (std distributions are not
// reproducible across standard library implementations).
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace rvdet {

inline constexpr double kPi = 3.141592653589793238462643383279502884;
inline constexpr double kTwoPi = 2.0 * kPi;

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    Vec2& operator+=(Vec2 o) { x += o.x; y += o.y; return *this; }
    bool operator==(const Vec2&) const = default;

    double dot(Vec2 o) const { return x * o.x + y * o.y; }
    double cross(Vec2 o) const { return x * o.y - y * o.x; }
    double squared_norm() const { return x * x + y * y; }
    double norm() const { return std::hypot(x, y); }
};

struct Point3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
};

// Rotation by angle a applied to v.
inline Vec2 rotate(Vec2 v, double a) {
    const double c = std::cos(a), s = std::sin(a);
    return {c * v.x - s * v.y, s * v.x + c * v.y};
}

// Inverse rotation.
inline Vec2 rotate_back(Vec2 v, double a) {
    const double c = std::cos(a), s = std::sin(a);
    return {c * v.x + s * v.y, -s * v.x + c * v.y};
}

// Normalize an angle to (-pi, pi].
inline double wrap_angle(double a) {
    double r = std::remainder(a, kTwoPi);
    if (r <= -kPi) r = kPi;
    return r;
}

// Shortest signed angular difference a - b, in (-pi, pi].
inline double angle_diff(double a, double b) { return wrap_angle(a - b); }

// Kahan compensated accumulator; keeps reductions deterministic given a
// fixed visit order.
class KahanSum {
  public:
    void add(double v) {
        const double y = v - comp_;
        const double t = sum_ + y;
        comp_ = (t - sum_) - y;
        sum_ = t;
    }
    double value() const { return sum_; }

  private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

// mt19937_64 is fully specified by the standard; the samplers below avoid
// std::*_distribution so that streams are identical everywhere.
class SeededRng {
  public:
    explicit SeededRng(std::uint64_t seed) : gen_(seed) {}

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint64_t next_u64() { return gen_(); }
    std::uint64_t bounded(std::uint64_t n) { return gen_() % n; }

    // Standard normal via Box-Muller.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double mag = std::sqrt(-2.0 * std::log(u1));
        spare_ = mag * std::sin(kTwoPi * u2);
        has_spare_ = true;
        return mag * std::cos(kTwoPi * u2);
    }
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Zero-location Laplace with scale b, via inverse CDF.
    double laplace(double b) {
        const double u = uniform() - 0.5;
        const double t = 1.0 - 2.0 * std::abs(u);
        return b * std::copysign(std::log(t <= 0.0 ? 5e-324 : t), u);
    }

  private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

inline void require_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw std::invalid_argument(std::string("non-finite ") + what);
}

}  // namespace rvdet
