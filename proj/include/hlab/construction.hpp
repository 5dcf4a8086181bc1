#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "geometry.hpp"
#include "grid.hpp"
#include "numeric.hpp"
#include "taper.hpp"
#include "tree.hpp"

namespace hlab {

using IVec = std::vector<std::int64_t>;

inline double default_delta(int m) { return std::min(std::pow(2.0, -8.0 * m), 1e-3 / std::pow(4.0, m)); }

struct ConstructionConfig {
    int m = 2;
    int p0 = 2;
    double delta = 0.0;  // <= 0 selects default_delta(m)
    std::size_t min_child_cells = 16;
    double magnitude_growth = 1.05;
    std::int64_t ell_init = 1;
    std::int64_t ell_cap = 16;
    std::uint64_t seed = 1;
    double null_fraction = 0.01;
    int perturbation_tries = 12;
    std::uint64_t avoidance_budget = 10'000'000;
    bool enforce_delta = false;

    double target_delta() const { return delta > 0.0 ? delta : default_delta(m); }
};

struct VertexData {
    std::uint64_t N = 0;
    std::vector<std::uint8_t> mask;   // chi_N at cell centers
    std::vector<std::uint32_t> cells; // cells of E_N, increasing
    IVec pbar;
    std::int64_t ell = 0;
    std::vector<double> g;
    std::size_t sector = 0;           // X_N = S_sector
    Vec axis;
    double axis_margin = 0.0;
    double mollify_l1 = 0.0;
    double mollify_l2p = 0.0;
    bool delta_met = false;
    double integral = 0.0;            // sum over E_N of |cos(2 pi x.p)| / G^n
    std::size_t left_cells = 0, right_cells = 0;
    double sector_margin = 0.0;
    double avoidance_margin = INFINITY;
    std::int64_t headroom = 0;
    double radius = 0.0;

    double mollify_error() const { return mollify_l1 + mollify_l2p; }
};

struct ConstructionState {
    int m = 0;
    ConstructionConfig config;
    TorusGrid grid;
    std::shared_ptr<const CellLattice> lattice;
    SectorChain chain;
    TreePermutation sigma;
    std::vector<VertexData> vertices;
    std::vector<std::uint8_t> boundary;  // cells dropped by an exact cosine zero
    std::size_t boundary_cells = 0;
    double seconds = 0.0;

    std::uint64_t count() const { return vertices.size(); }
    VertexData& at(std::uint64_t N) { return vertices.at(N - 1); }
    const VertexData& at(std::uint64_t N) const { return vertices.at(N - 1); }
    double measure(std::uint64_t N) const { return at(N).cells.size() * grid.cell_volume(); }
    const Sector& sector_of(std::uint64_t N) const { return chain.sectors.at(at(N).sector - 1); }
    double boundary_fraction() const { return static_cast<double>(boundary_cells) / grid.size(); }

    // f_N = e(p.x) g_N
    GridFunction f(std::uint64_t N) const {
        const auto& v = at(N);
        std::vector<cplx> out(grid.size());
        for (std::size_t c = 0; c < out.size(); ++c) out[c] = lattice->character(v.pbar, c) * v.g[c];
        return {grid, std::move(out)};
    }

    // cos(2 pi p.x) chi_N
    std::vector<double> f_tilde(std::uint64_t N) const {
        const auto& v = at(N);
        std::vector<double> out(grid.size(), 0.0);
        for (auto c : v.cells) out[c] = lattice->cos(v.pbar, c);
        return out;
    }

    // e(p.x) chi_N
    GridFunction modulated_indicator(std::uint64_t N) const {
        const auto& v = at(N);
        std::vector<cplx> out(grid.size());
        for (auto c : v.cells) out[c] = lattice->character(v.pbar, c);
        return {grid, std::move(out)};
    }

    GridFunction f_sum() const {
        std::vector<cplx> out(grid.size());
        for (std::uint64_t N = 1; N <= count(); ++N) {
            const auto& v = at(N);
            for (std::size_t c = 0; c < out.size(); ++c) out[c] += lattice->character(v.pbar, c) * v.g[c];
        }
        return {grid, std::move(out)};
    }

    FunctionSystem ftilde_system() const {
        std::vector<std::vector<double>> members;
        for (std::uint64_t N = 1; N <= count(); ++N) members.push_back(f_tilde(N));
        return {m, grid, std::move(members)};
    }
};

// E_N = {x in E_parent : (-1)^(j-1) cos(2 pi x.p_parent) > 0}; cells where
// the cosine vanishes exactly belong to neither child.
inline void refine_E(ConstructionState& st, std::uint64_t N) {
    if (N < 2) throw DomainError("refine_E needs N >= 2");
    const auto& par = st.at(parent(N));
    if (par.pbar.empty()) throw DomainError("parent frequency not chosen yet");
    auto& v = st.at(N);
    v.N = N;
    v.mask.assign(st.grid.size(), 0);
    v.cells.clear();
    const int want = child_sign(N);
    for (auto c : par.cells) {
        int s = st.lattice->cos_sign(par.pbar, c);
        if (s == 0) {
            if (!st.boundary[c]) {
                st.boundary[c] = 1;
                ++st.boundary_cells;
            }
            continue;
        }
        if (s == want) {
            v.mask[c] = 1;
            v.cells.push_back(c);
        }
    }
    if (v.cells.size() < st.config.min_child_cells)
        throw ConstructionError(N, "sign_change", "child set has " + std::to_string(v.cells.size()) + " cells");
}

namespace detail {

inline Spectrum apply_taper(const Spectrum& X, std::int64_t ell) {
    const auto& g = X.grid;
    const auto& w = Taper::profile(ell);
    Spectrum out{g, std::vector<cplx>(X.coeffs.size())};
    std::vector<std::size_t> idx(g.n);
    for (std::size_t c = 0; c < X.coeffs.size(); ++c) {
        g.unflatten(c, idx);
        double a = 1.0;
        for (int d = 0; d < g.n && a != 0.0; ++d) {
            std::int64_t k = std::abs(g.frequency(idx[d]));
            a *= k < ell ? w[k] : 0.0;
        }
        if (a != 0.0) out.coeffs[c] = a * X.coeffs[c];
    }
    return out;
}

// Real path for idft(apply_taper(dft(chi), ell)): the taper is a real even
// multiplier, so the half-cell phases cancel and r2c / c2r transforms suffice.
inline std::vector<double> taper_real(const TorusGrid& g, const std::vector<double>& chi, std::int64_t ell) {
    const auto& w = Taper::profile(ell);
    const std::size_t G = g.G, half = G / 2 + 1;
    std::size_t outer = 1;
    for (int d = 0; d + 1 < g.n; ++d) outer *= G;
    std::vector<int> dims(g.n, static_cast<int>(G));
    std::vector<double> in(chi), out(g.size());
    std::vector<cplx> spec(outer * half);
    auto* sp = reinterpret_cast<fftw_complex*>(spec.data());
    fftw_plan fwd = fftw_plan_dft_r2c(g.n, dims.data(), in.data(), sp, FFTW_ESTIMATE);
    if (!fwd) throw InternalError("fftw plan creation failed");
    fftw_execute(fwd);
    fftw_destroy_plan(fwd);
    const double scale = g.cell_volume();
    for (std::size_t o = 0; o < outer; ++o) {
        double a = scale;
        std::size_t rest = o;
        for (int d = g.n - 2; d >= 0 && a != 0.0; --d) {
            std::int64_t k = std::abs(g.frequency(rest % G));
            rest /= G;
            a *= k < ell ? w[k] : 0.0;
        }
        for (std::size_t t = 0; t < half; ++t) {
            auto k = static_cast<std::int64_t>(t);
            spec[o * half + t] *= (a != 0.0 && k < ell) ? a * w[k] : 0.0;
        }
    }
    fftw_plan bwd = fftw_plan_dft_c2r(g.n, dims.data(), sp, out.data(), FFTW_ESTIMATE);
    if (!bwd) throw InternalError("fftw plan creation failed");
    fftw_execute(bwd);
    fftw_destroy_plan(bwd);
    return out;
}

inline std::pair<double, double> mollify_errors(const std::vector<double>& g, const std::vector<std::uint8_t>& chi,
                                                int p0) {
    std::vector<double> diff(g.size());
    for (std::size_t c = 0; c < g.size(); ++c) diff[c] = g[c] - chi[c];
    return {lp_norm(diff, 1.0), lp_norm(diff, 2.0 * p0)};
}

// largest scale for which some p with |p|_inf + ell < G/2 can still carry
// the cube inside the sector (rounding plus parity moves p by at most 1)
inline std::int64_t ell_headroom(const TorusGrid& g, double margin) {
    double half = static_cast<double>(g.G) / 2.0 - 1.0;
    return static_cast<std::int64_t>(std::floor((half * margin - 1.0) / (1.0 + margin)));
}

} // namespace detail

// ell_N is the top rung of the doubling ladder ell_init * 2^k under the cap
// and the sector headroom. The mollifier error falls along the ladder, so the
// top rung meets the error target whenever any rung does.
inline void select_ell(ConstructionState& st, std::uint64_t N, std::int64_t cap) {
    auto& v = st.at(N);
    const auto& cfg = st.config;
    auto ax = sector_axis(st.sector_of(N));
    v.axis = ax.d;
    v.axis_margin = ax.margin;
    const std::int64_t limit = std::min({cap, detail::ell_headroom(st.grid, ax.margin),
                                         static_cast<std::int64_t>(st.grid.G / 2 - 1)});
    if (limit < cfg.ell_init)
        throw ConstructionError(N, "headroom", "no room for a frequency cube of scale " + std::to_string(cfg.ell_init));
    std::int64_t ell = cfg.ell_init;
    while (2 * ell <= limit) ell *= 2;
    v.ell = ell;
}

// g_N = idft(a(xi / ell) chi^_N); values in [-1e-9, 0) are clipped, anything
// more negative throws when strict and is left for verification otherwise.
inline void mollify(ConstructionState& st, std::uint64_t N, bool strict = true) {
    auto& v = st.at(N);
    const auto& cfg = st.config;
    std::vector<double> chi(st.grid.size());
    for (auto c : v.cells) chi[c] = 1.0;
    auto g = detail::taper_real(st.grid, chi, v.ell);
    for (auto& x : g) {
        if (x < -1e-9) {
            if (strict) throw ConstructionError(N, "nonnegativity", "mollified value " + std::to_string(x));
            continue;
        }
        if (x < 0.0) x = 0.0;
    }
    auto [e1, e2] = detail::mollify_errors(g, v.mask, cfg.p0);
    v.g = std::move(g);
    v.mollify_l1 = e1;
    v.mollify_l2p = e2;
    v.delta_met = e1 + e2 <= cfg.target_delta();
}

inline void select_ell_and_mollify(ConstructionState& st, std::uint64_t N) {
    select_ell(st, N, st.config.ell_cap);
    mollify(st, N);
}

namespace detail {

struct SubsetSum {
    IVec p;
    std::int64_t ell = 0;
};

// sums of p and ell over all multisets of {1..upto} of size s, s = 0..smax
inline std::vector<std::vector<SubsetSum>> multiset_sums(const ConstructionState& st, std::uint64_t upto, int smax) {
    const int n = st.grid.n;
    std::vector<std::vector<SubsetSum>> out(smax + 1);
    out[0].push_back({IVec(n, 0), 0});
    // extend multisets in nondecreasing index order
    std::vector<std::vector<std::uint64_t>> last(smax + 1);
    last[0].push_back(1);
    for (int s = 1; s <= smax; ++s)
        for (std::size_t i = 0; i < out[s - 1].size(); ++i)
            for (std::uint64_t a = last[s - 1][i]; a <= upto; ++a) {
                SubsetSum t = out[s - 1][i];
                const auto& va = st.at(a);
                for (int d = 0; d < n; ++d) t.p[d] += va.pbar[d];
                t.ell += va.ell;
                out[s].push_back(std::move(t));
                last[s].push_back(a);
            }
    return out;
}

inline std::uint64_t avoidance_pair_count(const std::vector<std::vector<SubsetSum>>& sums, int p0) {
    std::uint64_t total = 0;
    for (int h = 1; h <= p0; ++h)
        for (int mu = 1; mu <= h; ++mu)
            for (int nu = 0; nu < mu; ++nu) total += sums[h - mu].size() * sums[h - nu].size();
    return total;
}

// min over admissible (J1, J2) with max entry N of |P1 - P2|_inf - (L1 + L2);
// positive means every Minkowski cube pair is disjoint. The pair with the
// max entry appearing mu times on the left and nu < mu times on the right
// covers the mirrored case by symmetry.
inline double avoidance_margin(const std::vector<std::vector<SubsetSum>>& sums, int p0, const IVec& p,
                               std::int64_t ell, double stop_below = -INFINITY) {
    const std::size_t n = p.size();
    double best = INFINITY;
    for (int h = 1; h <= p0; ++h)
        for (int mu = 1; mu <= h; ++mu)
            for (int nu = 0; nu < mu; ++nu) {
                const auto& A = sums[h - mu];
                const auto& B = sums[h - nu];
                const std::int64_t k = mu - nu;
                const std::int64_t base_l = (mu + nu) * ell;
                for (const auto& a : A)
                    for (const auto& b : B) {
                        std::int64_t dist = 0;
                        for (std::size_t d = 0; d < n; ++d)
                            dist = std::max(dist, std::abs(k * p[d] + a.p[d] - b.p[d]));
                        double mg = static_cast<double>(dist - (base_l + a.ell + b.ell));
                        if (mg < best) {
                            best = mg;
                            if (best <= stop_below) return best;
                        }
                    }
            }
    return best;
}

// min over the sector constraints of s (xi.v) at the cube corners
inline double cube_sector_margin(const Sector& S, const IVec& p, std::int64_t ell) {
    double best = INFINITY;
    for (const auto& c : S.constraints) {
        double center = 0.0, l1 = 0.0;
        for (std::size_t d = 0; d < p.size(); ++d) {
            center += static_cast<double>(p[d]) * c.dir[d];
            l1 += std::abs(c.dir[d]);
        }
        best = std::min(best, c.sign * center - static_cast<double>(ell) * l1);
    }
    return best;
}

inline IVec round_with_parity(const Vec& target) {
    IVec p(target.size());
    std::int64_t sum = 0;
    for (std::size_t d = 0; d < p.size(); ++d) {
        p[d] = std::llround(target[d]);
        sum += p[d];
    }
    if (sum % 2 == 0) {
        // odd coordinate sum keeps every cosine zero set off the cell centers
        std::size_t arg = 0;
        double worst = -1.0;
        for (std::size_t d = 0; d < p.size(); ++d) {
            double r = std::abs(target[d] - static_cast<double>(p[d]));
            if (r > worst) {
                worst = r;
                arg = d;
            }
        }
        p[arg] += (target[arg] >= static_cast<double>(p[arg])) ? 1 : -1;
    }
    return p;
}

struct GridScan {
    double integral = 0.0;
    std::size_t positive = 0, negative = 0;
};

inline GridScan scan_cells(const ConstructionState& st, const VertexData& v, const IVec& p) {
    GridScan s;
    const auto& lat = *st.lattice;
    s.integral = pairwise_reduce<double>(v.cells.size(), [&](std::size_t i) {
                     return std::abs(lat.cos(p, v.cells[i]));
                 }) *
                 st.grid.cell_volume();
    for (auto c : v.cells) {
        int sg = lat.cos_sign(p, c);
        s.positive += sg > 0;
        s.negative += sg < 0;
    }
    return s;
}

} // namespace detail

// p_N = round(R d) for the smallest R = growth^k admitting the sector fit,
// the integral bound, the sign change, cube avoidance and headroom.
inline void select_pbar(ConstructionState& st, std::uint64_t N) {
    auto& v = st.at(N);
    const auto& cfg = st.config;
    const auto& S = st.sector_of(N);
    const std::int64_t half = static_cast<std::int64_t>(st.grid.G / 2);
    const auto sums = detail::multiset_sums(st, N - 1, cfg.p0);
    if (detail::avoidance_pair_count(sums, cfg.p0) > cfg.avoidance_budget)
        throw ResourceError("cube avoidance enumeration at vertex " + std::to_string(N) + " exceeds budget");

    // candidate axes: the sector axis, then seeded perturbations inside the sector
    std::vector<Vec> axes{v.axis};
    Rng rng(derive_seed(cfg.seed, 1000 + N));
    for (int t = 0; t < cfg.perturbation_tries; ++t) {
        Vec d = v.axis;
        auto z = rng.gaussian(d.size());
        for (std::size_t k = 0; k < d.size(); ++k) d[k] += 0.5 * v.axis_margin * z[k];
        double len = norm2(d);
        for (auto& x : d) x /= len;
        axes.push_back(std::move(d));
    }

    const double rmin = std::max(1.0, (static_cast<double>(v.ell) - 1.5) / v.axis_margin);
    double R = 1.0;
    while (R < rmin) R *= cfg.magnitude_growth;
    std::string last_failure = "headroom";
    for (;; R *= cfg.magnitude_growth) {
        bool any_room = false;
        for (const auto& d : axes) {
            Vec target(d.size());
            for (std::size_t k = 0; k < d.size(); ++k) target[k] = R * d[k];
            IVec p = detail::round_with_parity(target);
            std::int64_t pinf = 0;
            for (auto x : p) pinf = std::max(pinf, std::abs(x));
            if (pinf + v.ell >= half) continue;
            any_room = true;
            double sm = detail::cube_sector_margin(S, p, v.ell);
            if (!(sm > membership_tolerance)) {
                last_failure = "sector";
                continue;
            }
            double am = detail::avoidance_margin(sums, cfg.p0, p, v.ell, 0.0);
            if (!(am > 0.0)) {
                last_failure = "avoidance";
                continue;
            }
            auto scan = detail::scan_cells(st, v, p);
            if (!(scan.integral > st.measure(N) / 3.0)) {
                last_failure = "integral";
                continue;
            }
            if (scan.positive < cfg.min_child_cells || scan.negative < cfg.min_child_cells) {
                last_failure = "sign_change";
                continue;
            }
            v.pbar = std::move(p);
            v.radius = R;
            v.sector_margin = sm;
            v.avoidance_margin = am;
            v.integral = scan.integral;
            v.left_cells = scan.positive;
            v.right_cells = scan.negative;
            v.headroom = half - pinf - v.ell;
            return;
        }
        if (!any_room)
            throw ConstructionError(N, "headroom",
                                    "magnitude schedule exhausted at G=" + std::to_string(st.grid.G) +
                                        " (last failing constraint: " + last_failure + ")");
    }
}

namespace detail {

inline ConstructionState empty_state(const SectorChain& chain, const TreePermutation& sigma,
                                     const ConstructionConfig& cfg, const TorusGrid& grid) {
    if (cfg.m < 1 || cfg.p0 < 1) throw DomainError("construction needs m >= 1 and p0 >= 1");
    if (sigma.m != cfg.m) throw StructuralError("permutation depth differs from config");
    if (chain.M() != (std::size_t{1} << cfg.m))
        throw StructuralError("sector chain must have 2^m directions, got " + std::to_string(chain.M()));
    if (static_cast<int>(chain.dim()) != grid.n) throw StructuralError("chain dimension differs from grid");
    ConstructionState st;
    st.m = cfg.m;
    st.config = cfg;
    st.grid = grid;
    st.lattice = std::make_shared<CellLattice>(grid);
    st.chain = chain;
    st.sigma = sigma;
    st.vertices.resize(tree_size(cfg.m));
    for (std::uint64_t N = 1; N <= st.count(); ++N) {
        st.at(N).N = N;
        st.at(N).sector = sigma.position(N);
    }
    st.boundary.assign(grid.size(), 0);
    auto& root = st.at(1);
    root.mask.assign(grid.size(), 1);
    root.cells.resize(grid.size());
    for (std::size_t c = 0; c < grid.size(); ++c) root.cells[c] = static_cast<std::uint32_t>(c);
    return st;
}

} // namespace detail

// Induction E_1 -> ell_1 -> p_1 -> E_2 -> ... in increasing N.
inline ConstructionState build_construction(const SectorChain& chain, const TreePermutation& sigma,
                                            const ConstructionConfig& cfg, const TorusGrid& grid) {
    auto t0 = std::chrono::steady_clock::now();
    auto st = detail::empty_state(chain, sigma, cfg, grid);
    for (std::uint64_t N = 1; N <= st.count(); ++N) {
        if (N >= 2) refine_E(st, N);
        // a vertex that finds no frequency retries with half the scale
        std::int64_t cap = cfg.ell_cap;
        while (true) {
            select_ell(st, N, cap);
            try {
                select_pbar(st, N);
                break;
            } catch (const ConstructionError&) {
                if (st.at(N).ell <= cfg.ell_init) throw;
                cap = st.at(N).ell / 2;
            }
        }
    }
    // g_N does not enter any selection step
    for (std::uint64_t N = 1; N <= st.count(); ++N) mollify(st, N);
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return st;
}

// Rebuild from recorded frequencies and scales without any selection (used
// for manifests and fault injection).
inline ConstructionState assemble_construction(const SectorChain& chain, const TreePermutation& sigma,
                                               const ConstructionConfig& cfg, const TorusGrid& grid,
                                               const std::vector<IVec>& pbars, const std::vector<std::int64_t>& ells) {
    auto st = detail::empty_state(chain, sigma, cfg, grid);
    if (pbars.size() != st.count() || ells.size() != st.count())
        throw StructuralError("manifest vertex count does not match 2^m - 1");
    for (std::uint64_t N = 1; N <= st.count(); ++N) {
        auto& v = st.at(N);
        if (N >= 2) {
            // keep going on small children; verification reports them
            try {
                refine_E(st, N);
            } catch (const ConstructionError&) {
            }
        }
        if (pbars[N - 1].size() != static_cast<std::size_t>(grid.n)) throw StructuralError("manifest p has wrong dimension");
        v.pbar = pbars[N - 1];
        v.ell = ells[N - 1];
        auto ax = sector_axis(st.sector_of(N));
        v.axis = ax.d;
        v.axis_margin = ax.margin;
        mollify(st, N, false);
        auto scan = detail::scan_cells(st, v, v.pbar);
        v.integral = scan.integral;
        v.left_cells = scan.positive;
        v.right_cells = scan.negative;
        v.sector_margin = detail::cube_sector_margin(st.sector_of(N), v.pbar, v.ell);
        std::int64_t pinf = 0;
        for (auto x : v.pbar) pinf = std::max(pinf, std::abs(x));
        v.headroom = static_cast<std::int64_t>(grid.G / 2) - pinf - v.ell;
    }
    for (std::uint64_t N = 1; N <= st.count(); ++N) {
        auto sums = detail::multiset_sums(st, N - 1, cfg.p0);
        st.at(N).avoidance_margin = detail::avoidance_margin(sums, cfg.p0, st.at(N).pbar, st.at(N).ell);
    }
    return st;
}

// Doubles G from g_start until the construction fits; beyond g_max or the
// memory guard this is a resource failure.
inline ConstructionState build_with_escalation(const SectorChain& chain, const TreePermutation& sigma,
                                               const ConstructionConfig& cfg, std::size_t g_start,
                                               std::size_t g_max, std::size_t max_cells = default_max_cells) {
    // largest scale cap first, then the smallest grid that fits it
    std::string last;
    bool any_grid = false;
    for (std::int64_t cap = cfg.ell_cap; cap >= cfg.ell_init; cap /= 2) {
        auto c = cfg;
        c.ell_cap = cap;
        for (std::size_t G = g_start; G <= g_max; G *= 2) {
            if (!TorusGrid::fits(static_cast<int>(chain.dim()), G, max_cells)) break;
            any_grid = true;
            try {
                return build_construction(chain, sigma, c, TorusGrid(static_cast<int>(chain.dim()), G, max_cells));
            } catch (const ConstructionError& e) {
                last = e.what();
            }
        }
        if (cap == cfg.ell_init) break;
    }
    if (!any_grid) throw ResourceError("grid " + std::to_string(g_start) + "^" + std::to_string(chain.dim()) +
                                       " exceeds the cell budget " + std::to_string(max_cells));
    throw ResourceError("construction does not fit G <= " + std::to_string(g_max) + ": " + last);
}

struct AvoidanceCertificate {
    bool pass = true;
    bool exhaustive = true;
    std::uint64_t pairs = 0;
    double min_margin = INFINITY;
    std::optional<std::uint64_t> first_bad_vertex;
};

// Every admissible pair (J1, J2) with max entry <= 2^m - 1 and sizes h <= p0.
inline AvoidanceCertificate certify_cube_avoidance(const ConstructionState& st, int p0) {
    AvoidanceCertificate cert;
    for (std::uint64_t N = 1; N <= st.count(); ++N) {
        auto sums = detail::multiset_sums(st, N - 1, p0);
        auto count = detail::avoidance_pair_count(sums, p0);
        double mg;
        if (count <= st.config.avoidance_budget) {
            mg = detail::avoidance_margin(sums, p0, st.at(N).pbar, st.at(N).ell);
            cert.pairs += count;
        } else {
            // seeded sampling of the multiset lists
            cert.exhaustive = false;
            Rng rng(derive_seed(st.config.seed, 77 + N));
            std::vector<std::vector<detail::SubsetSum>> sample(sums.size());
            const std::size_t keep = 2000;
            for (std::size_t s = 0; s < sums.size(); ++s) {
                if (sums[s].size() <= keep) {
                    sample[s] = sums[s];
                    continue;
                }
                for (std::size_t i = 0; i < keep; ++i) sample[s].push_back(sums[s][rng.next() % sums[s].size()]);
            }
            mg = detail::avoidance_margin(sample, p0, st.at(N).pbar, st.at(N).ell);
            cert.pairs += detail::avoidance_pair_count(sample, p0);
        }
        cert.min_margin = std::min(cert.min_margin, mg);
        if (!(mg > 0.0) && !cert.first_bad_vertex) cert.first_bad_vertex = N;
    }
    cert.pass = !cert.first_bad_vertex;
    return cert;
}

struct CheckResult {
    std::string name;
    bool pass = true;
    bool advisory = false;
    nlohmann::json detail;
};

struct ConstructionReport {
    bool pass = true;
    std::vector<CheckResult> checks;

    const CheckResult& check(const std::string& name) const {
        for (const auto& c : checks)
            if (c.name == name) return c;
        throw DomainError("no check named " + name);
    }
};

inline nlohmann::json checks_to_json(const std::vector<CheckResult>& checks) {
    auto arr = nlohmann::json::array();
    for (const auto& c : checks)
        arr.push_back({{"name", c.name}, {"pass", c.pass}, {"advisory", c.advisory}, {"detail", c.detail}});
    return arr;
}

inline void to_json(nlohmann::json& j, const ConstructionReport& r) {
    j = {{"pass", r.pass}, {"checks", checks_to_json(r.checks)}};
}

// Mask identities on non-boundary cells: sibling partition, sum of
// indicators equal to m, and nested levels (which is the subtree identity
// for every N0 and r).
struct MaskIdentities {
    std::size_t sibling_violations = 0;
    std::size_t sum_violations = 0;
    std::size_t subtree_violations = 0;
};

inline MaskIdentities check_mask_identities(const ConstructionState& st) {
    MaskIdentities r;
    const std::size_t cells = st.grid.size();
    for (std::uint64_t N = 1; 2 * N + 1 <= st.count(); ++N) {
        const auto &a = st.at(N).mask, &l = st.at(2 * N).mask, &rr = st.at(2 * N + 1).mask;
        for (std::size_t c = 0; c < cells; ++c)
            if (!st.boundary[c] && l[c] + rr[c] != a[c]) ++r.sibling_violations;
    }
    for (std::size_t c = 0; c < cells; ++c) {
        if (st.boundary[c]) continue;
        int total = 0;
        std::uint64_t prev = 0;
        bool nested = true;
        for (int k = 0; k < st.m; ++k) {
            int here = 0;
            std::uint64_t found = 0;
            for (std::uint64_t N = std::uint64_t{1} << k; N < (std::uint64_t{2} << k); ++N)
                if (st.at(N).mask[c]) {
                    ++here;
                    found = N;
                }
            total += here;
            if (here != 1 || (k > 0 && parent(found) != prev)) nested = false;
            prev = found;
        }
        if (total != st.m) ++r.sum_violations;
        if (!nested) ++r.subtree_violations;
    }
    return r;
}

// lattice coefficients of f_N outside Q(ell_N, p_N), relative to the largest
inline double off_cube_leakage(const ConstructionState& st, std::uint64_t N) {
    const auto& v = st.at(N);
    auto F = dft(st.f(N));
    double inside = 0.0, outside = 0.0;
    std::vector<std::size_t> idx(st.grid.n);
    for (std::size_t c = 0; c < F.coeffs.size(); ++c) {
        st.grid.unflatten(c, idx);
        bool in = true;
        for (int d = 0; d < st.grid.n; ++d)
            if (std::abs(st.grid.frequency(idx[d]) - v.pbar[d]) > v.ell) in = false;
        double a = std::abs(F.coeffs[c]);
        (in ? inside : outside) = std::max(in ? inside : outside, a);
    }
    return inside > 0.0 ? outside / inside : outside;
}

inline ConstructionReport verify_construction(const ConstructionState& st) {
    ConstructionReport rep;
    const auto& cfg = st.config;
    auto add = [&](std::string name, bool pass, nlohmann::json detail, bool advisory = false) {
        rep.checks.push_back({std::move(name), pass, advisory, std::move(detail)});
        if (!pass && !advisory) rep.pass = false;
    };

    auto ids = check_mask_identities(st);
    add("sibling_partition", ids.sibling_violations == 0, {{"violations", ids.sibling_violations}});
    add("indicator_sum_equals_m", ids.sum_violations == 0, {{"violations", ids.sum_violations}});
    add("subtree_identity", ids.subtree_violations == 0, {{"violations", ids.subtree_violations}});
    add("boundary_fraction", st.boundary_fraction() <= cfg.null_fraction,
        {{"fraction", st.boundary_fraction()}, {"null_fraction", cfg.null_fraction}});

    auto signed_rep = verify_signed_tree(st.ftilde_system(), cfg.null_fraction);
    add("ftilde_signed_tree", signed_rep.pass, signed_rep);

    std::vector<std::uint64_t> bad_integral, bad_children, bad_sector, bad_bounds;
    double worst_integral_ratio = INFINITY, worst_leak = 0.0;
    for (std::uint64_t N = 1; N <= st.count(); ++N) {
        const auto& v = st.at(N);
        auto scan = detail::scan_cells(st, v, v.pbar);
        double mE = st.measure(N);
        if (mE > 0.0) worst_integral_ratio = std::min(worst_integral_ratio, scan.integral / mE);
        if (!(scan.integral > mE / 3.0)) bad_integral.push_back(N);
        if (scan.positive < cfg.min_child_cells || scan.negative < cfg.min_child_cells) bad_children.push_back(N);
        if (!(detail::cube_sector_margin(st.sector_of(N), v.pbar, v.ell) > membership_tolerance)) bad_sector.push_back(N);
        double lo = *std::min_element(v.g.begin(), v.g.end()), hi = *std::max_element(v.g.begin(), v.g.end());
        if (lo < 0.0 || hi > 1.0 + 1e-9) bad_bounds.push_back(N);
        worst_leak = std::max(worst_leak, off_cube_leakage(st, N));
    }
    add("integral_bound", bad_integral.empty(),
        {{"failing_vertices", bad_integral}, {"min_ratio_to_measure", worst_integral_ratio}});
    add("sign_change", bad_children.empty(), {{"failing_vertices", bad_children}});
    add("cube_in_sector", bad_sector.empty(), {{"failing_vertices", bad_sector}});
    add("spectral_support", worst_leak <= 1e-11, {{"max_relative_leakage", worst_leak}});
    add("mollifier_bounds", bad_bounds.empty(), {{"failing_vertices", bad_bounds}});

    auto cert = certify_cube_avoidance(st, cfg.p0);
    add("cube_avoidance", cert.pass,
        {{"pairs", cert.pairs},
         {"exhaustive", cert.exhaustive},
         {"min_margin", cert.min_margin},
         {"first_bad_vertex", cert.first_bad_vertex ? nlohmann::json(*cert.first_bad_vertex) : nlohmann::json(nullptr)}});

    // error budget: target delta(m) and achieved errors
    double total_l1 = 0.0, worst = 0.0;
    std::size_t met = 0;
    for (const auto& v : st.vertices) {
        total_l1 += v.mollify_l1;
        worst = std::max(worst, v.mollify_error());
        met += v.delta_met;
    }
    add("mollifier_error_target", met == st.count(),
        {{"delta", cfg.target_delta()}, {"vertices_meeting_target", met}, {"worst_error", worst}},
        !cfg.enforce_delta);

    // surrogate inequalities with achieved errors in place of 2^m delta(m)
    std::vector<double> E(st.grid.size(), 0.0);
    for (std::uint64_t N = 1; N <= st.count(); ++N) {
        const auto& v = st.at(N);
        for (std::size_t c = 0; c < E.size(); ++c) {
            double ft = v.mask[c] ? st.lattice->cos(v.pbar, c) : 0.0;
            E[c] += std::abs(ft - st.lattice->cos(v.pbar, c) * v.g[c]);
        }
    }
    double level = superlevel_measure(E, 1.0);
    auto fs = st.f_sum().values();
    std::vector<cplx> modsum(st.grid.size());
    for (std::uint64_t N = 1; N <= st.count(); ++N) {
        const auto& v = st.at(N);
        for (auto c : v.cells) modsum[c] += st.lattice->character(v.pbar, c);
    }
    std::vector<double> diff(st.grid.size());
    for (std::size_t c = 0; c < diff.size(); ++c) diff[c] = std::abs(fs[c] - modsum[c]);
    double l1 = lp_norm(diff, 1.0);
    const double slack = 1e-9;
    add("error_functional_level_set", level <= total_l1 + slack, {{"measure", level}, {"bound", total_l1}});
    add("modulated_sum_l1", l1 <= total_l1 + slack, {{"l1", l1}, {"bound", total_l1}});
    return rep;
}

inline nlohmann::json manifest_json(const ConstructionState& st) {
    nlohmann::json j;
    j["m"] = st.m;
    j["n"] = st.grid.n;
    j["G"] = st.grid.G;
    j["p0"] = st.config.p0;
    j["seed"] = st.config.seed;
    j["delta"] = st.config.target_delta();
    j["ell_cap"] = st.config.ell_cap;
    j["min_child_cells"] = st.config.min_child_cells;
    j["null_fraction"] = st.config.null_fraction;
    j["magnitude_growth"] = st.config.magnitude_growth;
    j["boundary_fraction"] = st.boundary_fraction();
    auto& vs = j["vertices"] = nlohmann::json::array();
    for (const auto& v : st.vertices) {
        auto ti = decode(v.N);
        vs.push_back({{"N", v.N},
                      {"k", ti.k},
                      {"j", ti.j},
                      {"pbar", v.pbar},
                      {"ell", v.ell},
                      {"cells", v.cells.size()},
                      {"measure", st.measure(v.N)},
                      {"sector", v.sector},
                      {"integral", v.integral},
                      {"mollify_error_l1", v.mollify_l1},
                      {"mollify_error_l2p0", v.mollify_l2p},
                      {"delta_met", v.delta_met},
                      {"margins",
                       {{"sector", v.sector_margin},
                        {"avoidance", v.avoidance_margin},
                        {"headroom", v.headroom},
                        {"axis", v.axis_margin}}}});
    }
    j["chain"] = chain_to_json(st.chain);
    return j;
}

inline SectorChain chain_from_json(const nlohmann::json& j) {
    DirectionOrdering o;
    for (const auto& v : j.at("ordering").get<std::vector<Vec>>()) o.ordering.push_back({v});
    o.heights = j.at("heights").get<std::vector<double>>();
    o.base_point = j.at("base_point").get<Vec>();
    o.attempts = j.value("base_point_attempts", 1);
    auto ch = build_sector_chain(o);
    ch.seed = j.value("seed", std::uint64_t{0});
    return ch;
}

struct Manifest {
    ConstructionConfig config;
    TorusGrid grid;
    SectorChain chain;
    std::vector<IVec> pbars;
    std::vector<std::int64_t> ells;
};

inline Manifest parse_manifest(const nlohmann::json& j) {
    Manifest mf;
    mf.config.m = j.at("m").get<int>();
    mf.config.p0 = j.at("p0").get<int>();
    mf.config.seed = j.value("seed", std::uint64_t{1});
    mf.config.delta = j.value("delta", 0.0);
    mf.config.ell_cap = j.value("ell_cap", std::int64_t{16});
    mf.config.min_child_cells = j.value("min_child_cells", std::size_t{16});
    mf.config.null_fraction = j.value("null_fraction", 0.01);
    mf.config.magnitude_growth = j.value("magnitude_growth", 1.05);
    mf.grid = TorusGrid(j.at("n").get<int>(), j.at("G").get<std::size_t>());
    mf.chain = chain_from_json(j.at("chain"));
    for (const auto& v : j.at("vertices")) {
        mf.pbars.push_back(v.at("pbar").get<IVec>());
        mf.ells.push_back(v.at("ell").get<std::int64_t>());
    }
    return mf;
}

inline ConstructionState assemble_from_manifest(const Manifest& mf) {
    return assemble_construction(mf.chain, build_sigma(mf.config.m), mf.config, mf.grid, mf.pbars, mf.ells);
}

// masks as one byte per cell per vertex, vertex-major, after a small header
inline void write_masks(const std::string& path, const ConstructionState& st) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open " + path);
    out.write("HLMK", 4);
    std::uint32_t hdr[3] = {static_cast<std::uint32_t>(st.grid.n), static_cast<std::uint32_t>(st.grid.G),
                            static_cast<std::uint32_t>(st.m)};
    out.write(reinterpret_cast<const char*>(hdr), sizeof hdr);
    for (const auto& v : st.vertices)
        out.write(reinterpret_cast<const char*>(v.mask.data()), static_cast<std::streamsize>(v.mask.size()));
}

} // namespace hlab
