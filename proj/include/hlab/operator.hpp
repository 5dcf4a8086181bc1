#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "construction.hpp"
#include "errors.hpp"
#include "geometry.hpp"
#include "grid.hpp"

namespace hlab {

enum class MultiplierKind { halfspace_projection, hilbert };
enum class ZeroSetPolicy { exclude, half_weight };

struct MultiplierSpec {
    Direction v;
    MultiplierKind kind = MultiplierKind::halfspace_projection;
    ZeroSetPolicy zero_set = ZeroSetPolicy::exclude;
};

inline constexpr double zero_set_tolerance = 1e-12;

namespace detail {

inline std::vector<double> lattice_dots(const TorusGrid& g, const Direction& v) {
    if (static_cast<int>(v.dim()) != g.n) throw StructuralError("direction dimension differs from grid");
    std::vector<double> out(g.size());
    std::vector<std::size_t> idx(g.n);
    for (std::size_t c = 0; c < out.size(); ++c) {
        g.unflatten(c, idx);
        double s = 0.0;
        for (int d = 0; d < g.n; ++d) s += static_cast<double>(g.frequency(idx[d])) * v[d];
        out[c] = s;
    }
    return out;
}

inline cplx symbol(double dotv, MultiplierKind kind, ZeroSetPolicy policy) {
    const bool zero = std::abs(dotv) <= zero_set_tolerance;
    if (kind == MultiplierKind::hilbert) {
        if (zero) return 0.0;
        return dotv > 0.0 ? cplx(0.0, -1.0) : cplx(0.0, 1.0);
    }
    if (zero) return policy == ZeroSetPolicy::half_weight ? 0.5 : 0.0;
    return dotv > 0.0 ? 1.0 : 0.0;
}

inline GridFunction apply_symbol(const Spectrum& F, const Direction& v, MultiplierKind kind, ZeroSetPolicy policy) {
    auto dots = lattice_dots(F.grid, v);
    Spectrum out{F.grid, F.coeffs};
    for (std::size_t c = 0; c < out.coeffs.size(); ++c) out.coeffs[c] *= symbol(dots[c], kind, policy);
    return idft(out);
}

} // namespace detail

// T_v f: spectrum restricted to {xi . v > 0}
inline GridFunction halfspace_projection(const GridFunction& f, const Direction& v,
                                         ZeroSetPolicy policy = ZeroSetPolicy::exclude) {
    return detail::apply_symbol(dft(f), v, MultiplierKind::halfspace_projection, policy);
}

// symbol -i sgn(xi . v), zero on the zero set
inline GridFunction directional_hilbert(const GridFunction& f, const Direction& v) {
    return detail::apply_symbol(dft(f), v, MultiplierKind::hilbert, ZeroSetPolicy::exclude);
}

inline GridFunction apply_multiplier(const GridFunction& f, const MultiplierSpec& s) {
    return detail::apply_symbol(dft(f), s.v, s.kind, s.zero_set);
}

// pointwise max over U of |T_v f| or |H_v f|
inline std::vector<double> maximal_transform(const GridFunction& f, const std::vector<Direction>& U,
                                             MultiplierKind kind = MultiplierKind::halfspace_projection,
                                             ZeroSetPolicy policy = ZeroSetPolicy::exclude) {
    if (U.empty()) throw DomainError("maximal_transform needs a nonempty direction set");
    auto F = dft(f);
    std::vector<double> out(f.size(), 0.0);
    for (const auto& v : U) {
        auto t = detail::apply_symbol(F, v, kind, policy);
        for (std::size_t c = 0; c < out.size(); ++c) out[c] = std::max(out[c], std::abs(t[c]));
    }
    return out;
}

struct PartialSumReport {
    bool pass = true;
    double worst_deviation = 0.0;
    std::size_t worst_l = 0;
    std::vector<double> deviations;  // index l - 2
    std::size_t domination_violations = 0;  // cells where T_U f < max_l |partial sum|
};

inline void to_json(nlohmann::json& j, const PartialSumReport& r) {
    j = {{"pass", r.pass},
         {"worst_relative_deviation", r.worst_deviation},
         {"worst_l", r.worst_l},
         {"deviations", r.deviations},
         {"domination_violations", r.domination_violations}};
}

// T_{u_l}(sum_N f_N) against sum_{h < l} f_sigma(h), for l = 2..2^m, plus
// T_U f >= max_l |partial sum| pointwise.
inline PartialSumReport verify_partial_sum_identity(const ConstructionState& st, double tol = 1e-9) {
    PartialSumReport r;
    const auto& ch = st.chain;
    const std::size_t M = ch.M();
    auto f = st.f_sum();
    auto F = dft(f);
    const double fnorm = lp_norm(f, 2.0);
    std::vector<cplx> partial(st.grid.size());
    std::vector<double> tu(st.grid.size(), 0.0), best_partial(st.grid.size(), 0.0);
    for (std::size_t l = 1; l <= M; ++l) {
        auto t = detail::apply_symbol(F, ch.ordering[l - 1], MultiplierKind::halfspace_projection, ZeroSetPolicy::exclude);
        for (std::size_t c = 0; c < tu.size(); ++c) tu[c] = std::max(tu[c], std::abs(t[c]));
        if (l == 1) continue;
        auto piece = st.f(st.sigma.sigma(l - 1));
        std::vector<double> diff(partial.size());
        for (std::size_t c = 0; c < partial.size(); ++c) {
            partial[c] += piece[c];
            diff[c] = std::abs(t[c] - partial[c]);
            best_partial[c] = std::max(best_partial[c], std::abs(partial[c]));
        }
        double dev = lp_norm(diff, 2.0) / (fnorm > 0.0 ? fnorm : 1.0);
        r.deviations.push_back(dev);
        if (r.worst_l == 0 || dev > r.worst_deviation) {
            r.worst_deviation = dev;
            r.worst_l = l;
        }
    }
    for (std::size_t c = 0; c < tu.size(); ++c)
        if (tu[c] < best_partial[c] - 1e-9 * (1.0 + best_partial[c])) ++r.domination_violations;
    r.pass = r.worst_deviation <= tol && r.domination_violations == 0;
    return r;
}

} // namespace hlab
