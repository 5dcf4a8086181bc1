#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <vector>

namespace hlab {

// Fixed-order pairwise summation; result does not depend on how callers
// chunk the work.
template <class T>
T pairwise_sum(std::span<const T> xs) {
    constexpr std::size_t leaf = 64;
    if (xs.size() <= leaf) {
        T acc{};
        for (const T& x : xs) acc += x;
        return acc;
    }
    std::size_t half = xs.size() / 2;
    return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

template <class T>
T pairwise_sum(const std::vector<T>& xs) {
    return pairwise_sum(std::span<const T>(xs));
}

// Sum of f(i) for i in [0, n) with pairwise blocking, without materializing.
template <class T, class F>
T pairwise_reduce(std::size_t n, F&& f) {
    constexpr std::size_t leaf = 64;
    struct Rec {
        F& f;
        T go(std::size_t lo, std::size_t hi) {
            if (hi - lo <= leaf) {
                T acc{};
                for (std::size_t i = lo; i < hi; ++i) acc += f(i);
                return acc;
            }
            std::size_t mid = lo + (hi - lo) / 2;
            return go(lo, mid) + go(mid, hi);
        }
    };
    Rec r{f};
    return r.go(0, n);
}

// Portable draws on top of mt19937_64 (the std distributions are not
// specified bit-for-bit across standard libraries).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    std::vector<double> gaussian(std::size_t n) {
        std::vector<double> v(n);
        for (auto& x : v) x = normal();
        return v;
    }

    // uniform point in the closed unit ball of R^d
    std::vector<double> in_ball(std::size_t d) {
        if (d == 0) return {};
        auto v = gaussian(d);
        double s = 0.0;
        for (double x : v) s += x * x;
        s = std::sqrt(s);
        double rad = std::pow(uniform(), 1.0 / static_cast<double>(d));
        for (auto& x : v) x *= rad / s;
        return v;
    }

    std::uint64_t next() { return eng_(); }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 step
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline std::uint64_t binomial(std::uint64_t n, std::uint64_t k) {
    if (k > n) return 0;
    if (k > n - k) k = n - k;
    std::uint64_t r = 1;
    for (std::uint64_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

} // namespace hlab
