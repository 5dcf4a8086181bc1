#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <vector>

#include "errors.hpp"

namespace hlab {

// Lattice taper for the mollifier: a(t) = (b*b)(t) / (b*b)(0) with the bump
// b(s) = exp(-1 / (1 - 4 s^2)) on |s| < 1/2. a is smooth, even, supported in
// [-1, 1], a(0) = 1, and its inverse transform |b^|^2 is nonnegative, so the
// periodized kernel is a probability density on the torus.
class Taper {
public:
    // a(k / ell) for k = 0..ell (a(1) = 0)
    static const std::vector<double>& profile(std::int64_t ell) {
        if (ell < 1) throw DomainError("taper scale must be >= 1");
        static std::mutex mu;
        static std::map<std::int64_t, std::vector<double>> cache;
        std::lock_guard lock(mu);
        auto it = cache.find(ell);
        if (it != cache.end()) return it->second;
        std::vector<double> w(ell + 1);
        const double a0 = autocorrelation(0.0);
        for (std::int64_t k = 0; k <= ell; ++k) w[k] = autocorrelation(static_cast<double>(k) / ell) / a0;
        w[0] = 1.0;
        w[ell] = 0.0;
        return cache.emplace(ell, std::move(w)).first->second;
    }

    static double bump(double s) {
        double u = 4.0 * s * s;
        return u < 1.0 ? std::exp(-1.0 / (1.0 - u)) : 0.0;
    }

    // trapezoid rule; the integrand vanishes to all orders at both ends
    static double autocorrelation(double t) {
        t = std::abs(t);
        if (t >= 1.0) return 0.0;
        const double lo = -0.5, hi = 0.5 - t;
        constexpr int n = 4096;
        const double h = (hi - lo) / n;
        double s = 0.0;
        for (int i = 1; i < n; ++i) {
            double x = lo + i * h;
            s += bump(x) * bump(x + t);
        }
        return s * h;
    }
};

} // namespace hlab
