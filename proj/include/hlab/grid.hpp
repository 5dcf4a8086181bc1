#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <fftw3.h>

#include "errors.hpp"
#include "numeric.hpp"

namespace hlab {

using cplx = std::complex<double>;

// Default memory guard: 2^24 cells (256 MiB per complex array).
inline constexpr std::size_t default_max_cells = std::size_t{1} << 24;

// Discrete torus [0,1)^n with G cells per axis. Samples sit at cell centers
// x_a = (2 i_a + 1) / (2G); frequency index i along an axis represents
// i for i < G/2 and i - G otherwise, so the lattice is [-G/2, G/2)^n.
struct TorusGrid {
    int n = 0;
    std::size_t G = 0;

    TorusGrid() = default;
    TorusGrid(int dim, std::size_t per_axis, std::size_t max_cells = default_max_cells)
        : n(dim), G(per_axis) {
        if (dim < 1 || dim > 4) throw DomainError("grid dimension must be in 1..4");
        if (per_axis < 4 || (per_axis & (per_axis - 1)) != 0)
            throw DomainError("grid size G must be a power of two >= 4, got " + std::to_string(per_axis));
        double cells = std::pow(static_cast<double>(per_axis), dim);
        if (cells > static_cast<double>(max_cells))
            throw ResourceError("grid " + std::to_string(per_axis) + "^" + std::to_string(dim) +
                                " exceeds memory guard of " + std::to_string(max_cells) + " cells");
    }

    static bool fits(int dim, std::size_t per_axis, std::size_t max_cells = default_max_cells) {
        return std::pow(static_cast<double>(per_axis), dim) <= static_cast<double>(max_cells);
    }

    std::size_t size() const {
        std::size_t s = 1;
        for (int a = 0; a < n; ++a) s *= G;
        return s;
    }

    double cell_volume() const { return 1.0 / static_cast<double>(size()); }

    std::int64_t frequency(std::size_t i) const {
        auto v = static_cast<std::int64_t>(i);
        auto g = static_cast<std::int64_t>(G);
        return v < g / 2 ? v : v - g;
    }

    // row-major, last axis fastest
    void unflatten(std::size_t flat, std::span<std::size_t> idx) const {
        for (int a = n - 1; a >= 0; --a) {
            idx[a] = flat % G;
            flat /= G;
        }
    }

    std::size_t flatten(std::span<const std::int64_t> idx) const {
        std::size_t flat = 0;
        auto g = static_cast<std::int64_t>(G);
        for (int a = 0; a < n; ++a) {
            std::int64_t r = ((idx[a] % g) + g) % g;
            flat = flat * G + static_cast<std::size_t>(r);
        }
        return flat;
    }

    std::vector<std::int64_t> frequency_vector(std::size_t flat) const {
        std::vector<std::size_t> idx(n);
        unflatten(flat, idx);
        std::vector<std::int64_t> xi(n);
        for (int a = 0; a < n; ++a) xi[a] = frequency(idx[a]);
        return xi;
    }

    std::vector<double> center(std::size_t flat) const {
        std::vector<std::size_t> idx(n);
        unflatten(flat, idx);
        std::vector<double> x(n);
        for (int a = 0; a < n; ++a) x[a] = (2.0 * idx[a] + 1.0) / (2.0 * G);
        return x;
    }

    friend bool operator==(const TorusGrid&, const TorusGrid&) = default;
};

inline void require_same_grid(const TorusGrid& a, const TorusGrid& b) {
    if (!(a == b)) throw StructuralError("grid mismatch");
}

// e(k / 2G) for k in [0, 2G), with exact zeros and units at quarter turns.
class PhaseTable {
public:
    explicit PhaseTable(std::size_t G) : G_(G), cos_(2 * G), sin_(2 * G) {
        for (std::size_t k = 0; k < 2 * G; ++k) {
            double a = std::numbers::pi * static_cast<double>(k) / static_cast<double>(G);
            cos_[k] = std::cos(a);
            sin_[k] = std::sin(a);
        }
        const std::size_t q = G / 2;
        const double c[4] = {1.0, 0.0, -1.0, 0.0};
        const double s[4] = {0.0, 1.0, 0.0, -1.0};
        for (int t = 0; t < 4; ++t) {
            cos_[t * q] = c[t];
            sin_[t * q] = s[t];
        }
    }

    std::size_t modulus() const { return 2 * G_; }
    double cos(std::size_t k) const { return cos_[k]; }
    double sin(std::size_t k) const { return sin_[k]; }
    cplx expi(std::size_t k) const { return {cos_[k], sin_[k]}; }

    // sign of cos(pi k / G): +1, -1, or 0 exactly
    int cos_sign(std::size_t k) const {
        const std::size_t q = G_ / 2;
        if (k == q || k == 3 * q) return 0;
        return (k < q || k > 3 * q) ? 1 : -1;
    }

    std::size_t reduce(std::int64_t s) const {
        auto m = static_cast<std::int64_t>(2 * G_);
        return static_cast<std::size_t>(((s % m) + m) % m);
    }

private:
    std::size_t G_;
    std::vector<double> cos_, sin_;
};

// Odd cell coordinates 2 i_a + 1 per cell, so that x . p = S / (2G) with the
// integer S = sum_a p_a (2 i_a + 1). Phases of e(p . x) are then exact.
class CellLattice {
public:
    explicit CellLattice(const TorusGrid& g) : grid_(g), table_(g.G), odd_(g.size() * g.n) {
        std::vector<std::size_t> idx(g.n);
        for (std::size_t c = 0; c < g.size(); ++c) {
            g.unflatten(c, idx);
            for (int a = 0; a < g.n; ++a) odd_[c * g.n + a] = static_cast<std::int32_t>(2 * idx[a] + 1);
        }
    }

    const TorusGrid& grid() const { return grid_; }
    const PhaseTable& table() const { return table_; }

    // S(x) mod 2G for the integer vector p
    std::size_t phase(std::span<const std::int64_t> p, std::size_t cell) const {
        std::int64_t s = 0;
        const std::int32_t* o = &odd_[cell * grid_.n];
        for (int a = 0; a < grid_.n; ++a) s += p[a] * o[a];
        return table_.reduce(s);
    }

    double cos(std::span<const std::int64_t> p, std::size_t cell) const { return table_.cos(phase(p, cell)); }
    int cos_sign(std::span<const std::int64_t> p, std::size_t cell) const { return table_.cos_sign(phase(p, cell)); }
    cplx character(std::span<const std::int64_t> p, std::size_t cell) const { return table_.expi(phase(p, cell)); }

private:
    TorusGrid grid_;
    PhaseTable table_;
    std::vector<std::int32_t> odd_;
};

class GridFunction {
public:
    GridFunction() = default;
    GridFunction(TorusGrid g, std::vector<cplx> values) : grid_(g), values_(std::move(values)) {
        if (values_.size() != grid_.size()) throw StructuralError("value array does not match grid size");
    }

    static GridFunction zeros(const TorusGrid& g) { return {g, std::vector<cplx>(g.size())}; }

    static GridFunction from_real(const TorusGrid& g, std::span<const double> v) {
        if (v.size() != g.size()) throw StructuralError("value array does not match grid size");
        std::vector<cplx> c(v.begin(), v.end());
        return {g, std::move(c)};
    }

    const TorusGrid& grid() const { return grid_; }
    std::span<const cplx> values() const { return values_; }
    const cplx& operator[](std::size_t i) const { return values_[i]; }
    std::size_t size() const { return values_.size(); }

    std::vector<double> real() const {
        std::vector<double> r(values_.size());
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = values_[i].real();
        return r;
    }

    std::vector<double> magnitude() const {
        std::vector<double> r(values_.size());
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = std::abs(values_[i]);
        return r;
    }

private:
    TorusGrid grid_;
    std::vector<cplx> values_;
};

// Lattice coefficients F(xi) for xi in [-G/2, G/2)^n, stored in the same
// row-major layout as cells (axis index i <-> frequency(i)).
struct Spectrum {
    TorusGrid grid;
    std::vector<cplx> coeffs;
};

namespace detail {

inline void fftw_inplace(const TorusGrid& g, std::vector<cplx>& a, int sign) {
    std::vector<int> dims(g.n, static_cast<int>(g.G));
    auto* p = reinterpret_cast<fftw_complex*>(a.data());
    fftw_plan plan = fftw_plan_dft(g.n, dims.data(), p, p, sign, FFTW_ESTIMATE);
    if (!plan) throw InternalError("fftw plan creation failed");
    fftw_execute(plan);
    fftw_destroy_plan(plan);
}

// multiplies coefficient xi by e(sign * (sum_a xi_a) / 2G)
inline void half_cell_shift(const TorusGrid& g, std::vector<cplx>& a, int sign) {
    PhaseTable t(g.G);
    std::vector<std::int64_t> rep(g.G);
    for (std::size_t i = 0; i < g.G; ++i) rep[i] = g.frequency(i);
    std::vector<std::size_t> idx(g.n);
    for (std::size_t c = 0; c < a.size(); ++c) {
        g.unflatten(c, idx);
        std::int64_t s = 0;
        for (int d = 0; d < g.n; ++d) s += rep[idx[d]];
        a[c] *= t.expi(t.reduce(sign * s));
    }
}

} // namespace detail

// F(xi) = G^-n sum_x f(x) e(-xi . x) over cell centers x. With this
// normalization idft(F)(x) = sum_xi F(xi) e(xi . x) and
// sum |f|^2 / G^n = sum |F|^2.
inline Spectrum dft(const GridFunction& f) {
    const auto& g = f.grid();
    std::vector<cplx> a(f.values().begin(), f.values().end());
    detail::fftw_inplace(g, a, FFTW_FORWARD);
    detail::half_cell_shift(g, a, -1);
    const double s = g.cell_volume();
    for (auto& z : a) z *= s;
    return {g, std::move(a)};
}

inline GridFunction idft(const Spectrum& F) {
    const auto& g = F.grid;
    if (F.coeffs.size() != g.size()) throw StructuralError("spectrum size does not match grid");
    std::vector<cplx> a = F.coeffs;
    detail::half_cell_shift(g, a, +1);
    detail::fftw_inplace(g, a, FFTW_BACKWARD);
    return {g, std::move(a)};
}

inline constexpr double p_infinity = std::numeric_limits<double>::infinity();

inline double lp_norm(std::span<const double> v, double p) {
    if (!(p >= 1.0)) throw DomainError("lp_norm requires p >= 1");
    if (v.empty()) return 0.0;
    if (std::isinf(p)) {
        double m = 0.0;
        for (double x : v) m = std::max(m, std::abs(x));
        return m;
    }
    double s;
    if (p == 1.0)
        s = pairwise_reduce<double>(v.size(), [&](std::size_t i) { return std::abs(v[i]); });
    else if (p == 2.0)
        s = pairwise_reduce<double>(v.size(), [&](std::size_t i) { return v[i] * v[i]; });
    else
        s = pairwise_reduce<double>(v.size(), [&](std::size_t i) { return std::pow(std::abs(v[i]), p); });
    return std::pow(s / static_cast<double>(v.size()), 1.0 / p);
}

inline double lp_norm(const GridFunction& f, double p) {
    auto m = f.magnitude();
    return lp_norm(std::span<const double>(m), p);
}

inline double superlevel_measure(std::span<const double> v, double lambda) {
    if (v.empty()) return 0.0;
    std::size_t c = 0;
    for (double x : v) c += (x >= lambda);
    return static_cast<double>(c) / static_cast<double>(v.size());
}

inline double superlevel_measure(const GridFunction& f, double lambda) {
    auto m = f.magnitude();
    return superlevel_measure(std::span<const double>(m), lambda);
}

// Binary dump: "HLGF", then uint32 {n, G, bits} with bits 64 (complex64) or
// 128 (complex128), then row-major values.
inline void write_grid_function(const std::string& path, const GridFunction& f, bool single = false) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open " + path + " for writing");
    out.write("HLGF", 4);
    std::uint32_t hdr[3] = {static_cast<std::uint32_t>(f.grid().n), static_cast<std::uint32_t>(f.grid().G),
                            single ? 64u : 128u};
    out.write(reinterpret_cast<const char*>(hdr), sizeof hdr);
    if (single) {
        for (const auto& z : f.values()) {
            float c[2] = {static_cast<float>(z.real()), static_cast<float>(z.imag())};
            out.write(reinterpret_cast<const char*>(c), sizeof c);
        }
    } else {
        out.write(reinterpret_cast<const char*>(f.values().data()),
                  static_cast<std::streamsize>(f.size() * sizeof(cplx)));
    }
}

inline GridFunction read_grid_function(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path);
    char magic[4];
    std::uint32_t hdr[3];
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(hdr), sizeof hdr);
    if (!in || std::memcmp(magic, "HLGF", 4) != 0) throw ConfigError(path + ": not a grid function dump");
    TorusGrid g(static_cast<int>(hdr[0]), hdr[1]);
    std::vector<cplx> v(g.size());
    if (hdr[2] == 64) {
        for (auto& z : v) {
            float c[2];
            in.read(reinterpret_cast<char*>(c), sizeof c);
            z = {c[0], c[1]};
        }
    } else if (hdr[2] == 128) {
        in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(cplx)));
    } else {
        throw ConfigError(path + ": unknown precision flag");
    }
    if (!in) throw ConfigError(path + ": truncated");
    return {g, std::move(v)};
}

} // namespace hlab
