#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "construction.hpp"
#include "errors.hpp"
#include "numeric.hpp"
#include "tree.hpp"

namespace hlab {

using Multiplicity = std::vector<int>;

// all compositions of p into r positive parts, lexicographic
inline std::vector<Multiplicity> compositions(int p, int r) {
    if (r < 1 || p < 1) throw DomainError("compositions need p >= 1 and r >= 1");
    if (r > p) throw DomainError("compositions: r = " + std::to_string(r) + " exceeds p = " + std::to_string(p));
    std::vector<Multiplicity> out;
    Multiplicity cur;
    std::function<void(int, int)> rec = [&](int left, int parts) {
        if (parts == 1) {
            cur.push_back(left);
            out.push_back(cur);
            cur.pop_back();
            return;
        }
        for (int x = 1; x <= left - (parts - 1); ++x) {
            cur.push_back(x);
            rec(left - x, parts - 1);
            cur.pop_back();
        }
    };
    rec(p, r);
    return out;
}

inline std::uint64_t factorial(int n) {
    std::uint64_t f = 1;
    for (int i = 2; i <= n; ++i) f *= static_cast<std::uint64_t>(i);
    return f;
}

// p! / prod mu_i!
inline std::uint64_t multinomial(const Multiplicity& mu) {
    int p = 0;
    std::uint64_t d = 1;
    for (int x : mu) {
        p += x;
        d *= factorial(x);
    }
    return factorial(p) / d;
}

// strictly increasing r-tuples from {1..top}
inline void for_each_increasing(std::uint64_t top, int r, const std::function<void(const std::vector<std::uint64_t>&)>& f) {
    std::vector<std::uint64_t> t(r);
    std::function<void(int, std::uint64_t)> rec = [&](int pos, std::uint64_t from) {
        if (pos == r) {
            f(t);
            return;
        }
        for (std::uint64_t a = from; a + static_cast<std::uint64_t>(r - pos - 1) <= top; ++a) {
            t[pos] = a;
            rec(pos + 1, a + 1);
        }
    };
    rec(0, 1);
}

// Stratum (m, n, mu, nu) of the norm expansion. level is 1-based: the larger
// of m_r, n_s lies in [2^(level-1), 2^level).
struct StratumDescriptor {
    std::vector<std::uint64_t> mbar, nbar;
    Multiplicity mu, nu;
    int level = 1;
    bool ray = false;   // all entries on one ray
    bool tail = false;  // ray, m_r = n_s and mu_r = nu_s

    std::uint64_t max_entry() const { return std::max(mbar.back(), nbar.back()); }
};

inline bool on_one_ray(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
    std::vector<std::uint64_t> all(a);
    all.insert(all.end(), b.begin(), b.end());
    for (std::size_t i = 0; i < all.size(); ++i)
        for (std::size_t j = i + 1; j < all.size(); ++j)
            if (!comparable(all[i], all[j])) return false;
    return true;
}

inline StratumDescriptor make_stratum(std::vector<std::uint64_t> mbar, std::vector<std::uint64_t> nbar, Multiplicity mu,
                                      Multiplicity nu) {
    StratumDescriptor s{std::move(mbar), std::move(nbar), std::move(mu), std::move(nu)};
    s.level = height(s.max_entry()) + 1;
    s.ray = on_one_ray(s.mbar, s.nbar);
    s.tail = s.ray && s.mbar.back() == s.nbar.back() && s.mu.back() == s.nu.back();
    return s;
}

// number of strata with exponents (p, q) at a given level
inline std::uint64_t count_strata(int p, int q, int level) {
    const std::uint64_t H = (std::uint64_t{1} << level) - 1, H1 = (std::uint64_t{1} << (level - 1)) - 1;
    std::uint64_t total = 0;
    for (int r = 1; r <= p; ++r)
        for (int s = 1; s <= q; ++s)
            total += binomial(p - 1, r - 1) * binomial(q - 1, s - 1) *
                     (binomial(H, r) * binomial(H, s) - binomial(H1, r) * binomial(H1, s));
    return total;
}

inline constexpr std::uint64_t default_stratum_budget = 10'000'000;

// visits every stratum of M_level[r, mu; s, nu] over all r <= p, s <= q
inline void for_each_stratum(int p, int q, int level, int m, const std::function<void(const StratumDescriptor&)>& visit,
                             std::uint64_t budget = default_stratum_budget) {
    if (level < 1 || level > m) throw DomainError("stratum level must be in 1..m");
    if (p < 1 || q < 1) throw DomainError("exponents must be >= 1");
    if (count_strata(p, q, level) > budget)
        throw ResourceError("stratum enumeration exceeds budget of " + std::to_string(budget));
    const std::uint64_t top = (std::uint64_t{1} << level) - 1, low = std::uint64_t{1} << (level - 1);
    for (int r = 1; r <= p; ++r)
        for (const auto& mu : compositions(p, r))
            for (int s = 1; s <= q; ++s)
                for (const auto& nu : compositions(q, s))
                    for_each_increasing(top, r, [&](const std::vector<std::uint64_t>& mb) {
                        for_each_increasing(top, s, [&](const std::vector<std::uint64_t>& nb) {
                            if (std::max(mb.back(), nb.back()) < low) return;
                            visit(make_stratum(mb, nb, mu, nu));
                        });
                    });
}

inline std::vector<StratumDescriptor> enumerate_strata(int p, int q, int level, int m,
                                                       std::uint64_t budget = default_stratum_budget) {
    std::vector<StratumDescriptor> out;
    for_each_stratum(p, q, level, m, [&](const StratumDescriptor& s) { out.push_back(s); }, budget);
    return out;
}

struct PartitionReport {
    bool pass = true;
    std::uint64_t tuples = 0;
    std::map<int, std::uint64_t> tuples_by_length;  // r -> count
    std::uint64_t classes = 0;
    std::string failure;
};

// {1..2^h-1}^p splits into the permutation classes of N[m, mu]
inline PartitionReport verify_partition(int p, int h, std::uint64_t budget = 10'000'000) {
    if (p < 1 || h < 1) throw DomainError("verify_partition needs p >= 1 and h >= 1");
    const std::uint64_t H = (std::uint64_t{1} << h) - 1;
    double total = std::pow(static_cast<double>(H), p);
    if (total > static_cast<double>(budget)) throw ResourceError("partition enumeration exceeds budget");
    PartitionReport rep;
    std::map<std::pair<std::vector<std::uint64_t>, Multiplicity>, std::uint64_t> classes;
    std::vector<std::uint64_t> t(p, 1);
    while (true) {
        auto sorted = t;
        std::sort(sorted.begin(), sorted.end());
        std::vector<std::uint64_t> mb;
        Multiplicity mu;
        for (auto x : sorted) {
            if (!mb.empty() && mb.back() == x)
                ++mu.back();
            else {
                mb.push_back(x);
                mu.push_back(1);
            }
        }
        ++classes[{mb, mu}];
        ++rep.tuples;
        ++rep.tuples_by_length[static_cast<int>(mb.size())];
        int pos = p - 1;
        while (pos >= 0 && t[pos] == H) t[pos--] = 1;
        if (pos < 0) break;
        ++t[pos];
    }
    rep.classes = classes.size();
    std::map<Multiplicity, std::uint64_t> per_mu;
    for (const auto& [key, count] : classes) {
        if (count != multinomial(key.second)) {
            rep.pass = false;
            rep.failure = "class size differs from multinomial";
        }
        ++per_mu[key.second];
    }
    std::uint64_t expect = 0;
    for (int r = 1; r <= p; ++r)
        for (const auto& mu : compositions(p, r)) {
            if (per_mu[mu] != binomial(H, r)) {
                rep.pass = false;
                rep.failure = "#A_h[r, mu] differs from C(2^h - 1, r)";
            }
            expect += binomial(H, r) * multinomial(mu);
        }
    if (expect != rep.tuples) {
        rep.pass = false;
        rep.failure = "class sizes do not add up";
    }
    return rep;
}

inline void to_json(nlohmann::json& j, const PartitionReport& r) {
    j = {{"pass", r.pass}, {"tuples", r.tuples}, {"classes", r.classes}};
    for (auto [len, c] : r.tuples_by_length) j["tuples_by_length"][std::to_string(len)] = c;
    if (!r.failure.empty()) j["failure"] = r.failure;
}

namespace detail {

// prod_i f_{m_i}^{mu_i} on the grid
inline std::vector<cplx> power_product(const std::vector<GridFunction>& f, const std::vector<std::uint64_t>& mb,
                                       const Multiplicity& mu) {
    std::vector<cplx> out(f.front().size(), 1.0);
    for (std::size_t i = 0; i < mb.size(); ++i) {
        const auto& v = f[mb[i] - 1];
        for (std::size_t c = 0; c < out.size(); ++c) {
            cplx z = v[c];
            cplx w = z;
            for (int e = 1; e < mu[i]; ++e) w *= z;
            out[c] *= w;
        }
    }
    return out;
}

inline std::int64_t torus_distance(std::int64_t d, std::int64_t G) {
    std::int64_t r = ((d % G) + G) % G;
    return std::min(r, G - r);
}

} // namespace detail

// Integral of G_alpha = e(v_alpha . x) chi over the intersection mask.
inline cplx integrate_G(const ConstructionState& st, const StratumDescriptor& s, std::size_t* cells_out = nullptr) {
    const int n = st.grid.n;
    IVec v(n, 0);
    for (std::size_t i = 0; i < s.mbar.size(); ++i)
        for (int d = 0; d < n; ++d) v[d] += s.mu[i] * st.at(s.mbar[i]).pbar[d];
    for (std::size_t i = 0; i < s.nbar.size(); ++i)
        for (int d = 0; d < n; ++d) v[d] -= s.nu[i] * st.at(s.nbar[i]).pbar[d];
    std::vector<std::uint64_t> idx(s.mbar);
    idx.insert(idx.end(), s.nbar.begin(), s.nbar.end());
    // smallest set first
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return st.at(a).cells.size() < st.at(b).cells.size(); });
    const auto& base = st.at(idx.front()).cells;
    std::vector<std::uint32_t> cells;
    for (auto c : base) {
        bool in = true;
        for (std::size_t k = 1; k < idx.size() && in; ++k) in = st.at(idx[k]).mask[c] != 0;
        if (in) cells.push_back(c);
    }
    if (cells_out) *cells_out = cells.size();
    cplx sum = pairwise_reduce<cplx>(cells.size(), [&](std::size_t i) { return st.lattice->character(v, cells[i]); });
    return sum * st.grid.cell_volume();
}

struct NormExpansionReport {
    bool pass = true;
    double lhs = 0.0;
    double rhs = 0.0;
    double relative_error = 0.0;
    std::uint64_t strata = 0;
    std::uint64_t ray_strata = 0;
    std::uint64_t tail_strata = 0;
    std::uint64_t ray_support_mismatches = 0;
    std::uint64_t peel_bound_violations = 0;  // |int F - int G| above the telescoping bound
    double worst_peel_gap = 0.0;              // max |int F - int G|
    std::uint64_t vanishing_checked = 0;      // non-tail strata with cubes disjoint mod G
    std::uint64_t vanishing_aliased = 0;      // non-tail strata whose cubes meet only through wraparound
    double worst_vanishing = 0.0;             // max |int F| over the checked strata
    std::map<int, double> level_sums;         // level -> weighted sum of F_h
    nlohmann::json ledger;                    // optional per-stratum rows
};

inline void to_json(nlohmann::json& j, const NormExpansionReport& r) {
    j = {{"pass", r.pass},
         {"lhs", r.lhs},
         {"rhs", r.rhs},
         {"relative_error", r.relative_error},
         {"strata", r.strata},
         {"ray_strata", r.ray_strata},
         {"tail_strata", r.tail_strata},
         {"ray_support_mismatches", r.ray_support_mismatches},
         {"peel_bound_violations", r.peel_bound_violations},
         {"worst_peel_gap", r.worst_peel_gap},
         {"vanishing_checked", r.vanishing_checked},
         {"vanishing_aliased", r.vanishing_aliased},
         {"worst_vanishing", r.worst_vanishing}};
    for (auto [h, v] : r.level_sums) j["level_sums"][std::to_string(h)] = v;
    if (!r.ledger.is_null()) j["ledger"] = r.ledger;
}

// ||f||_{2p0}^{2p0} directly and as sum' C(mu, nu) sum_h F_h.
inline NormExpansionReport norm_expansion_oracle(const ConstructionState& st, int p0, bool keep_ledger = false,
                                                 std::uint64_t budget = default_stratum_budget, double tol = 1e-6) {
    NormExpansionReport rep;
    const int m = st.m;
    std::uint64_t total = 0;
    for (int h = 1; h <= m; ++h) total += count_strata(p0, p0, h);
    if (total > budget) throw ResourceError("norm expansion needs " + std::to_string(total) + " strata");

    std::vector<GridFunction> f;
    for (std::uint64_t N = 1; N <= st.count(); ++N) f.push_back(st.f(N));
    auto fs = st.f_sum();
    rep.lhs = lp_norm(fs, 2.0 * p0);
    rep.lhs = std::pow(rep.lhs, 2.0 * p0);

    // products P[m, mu] for every multiset of size p0
    std::map<std::pair<std::vector<std::uint64_t>, Multiplicity>, std::vector<cplx>> products;
    for (int r = 1; r <= p0; ++r)
        for (const auto& mu : compositions(p0, r))
            for_each_increasing(st.count(), r, [&](const std::vector<std::uint64_t>& mb) {
                products[{mb, mu}] = detail::power_product(f, mb, mu);
            });

    std::vector<double> err(st.count());
    for (std::uint64_t N = 1; N <= st.count(); ++N) err[N - 1] = st.at(N).mollify_l1;
    const auto G = static_cast<std::int64_t>(st.grid.G);
    const double vol = st.grid.cell_volume();
    double rhs = 0.0;
    if (keep_ledger) rep.ledger = nlohmann::json::array();
    for (int h = 1; h <= m; ++h) {
        double level_sum = 0.0;
        for_each_stratum(p0, p0, h, m, [&](const StratumDescriptor& s) {
            ++rep.strata;
            rep.ray_strata += s.ray;
            rep.tail_strata += s.tail;
            const auto& A = products.at({s.mbar, s.mu});
            const auto& B = products.at({s.nbar, s.nu});
            cplx intF = pairwise_reduce<cplx>(A.size(), [&](std::size_t c) { return A[c] * std::conj(B[c]); }) * vol;
            double w = static_cast<double>(multinomial(s.mu) * multinomial(s.nu));
            level_sum += w * intF.real();
            std::size_t cells = 0;
            cplx intG = integrate_G(st, s, &cells);
            if ((cells > 0) != s.ray) ++rep.ray_support_mismatches;
            double bound = 0.0;
            for (std::size_t i = 0; i < s.mbar.size(); ++i) bound += s.mu[i] * err[s.mbar[i] - 1];
            for (std::size_t i = 0; i < s.nbar.size(); ++i) bound += s.nu[i] * err[s.nbar[i] - 1];
            double gap = std::abs(intF - intG);
            rep.worst_peel_gap = std::max(rep.worst_peel_gap, gap);
            if (gap > bound + 1e-9) ++rep.peel_bound_violations;
            bool tail_equal = s.mbar.back() == s.nbar.back() && s.mu.back() == s.nu.back();
            if (!tail_equal) {
                // frequency cubes of the two products, compared on the torus
                IVec D(st.grid.n, 0);
                std::int64_t L = 0;
                for (std::size_t i = 0; i < s.mbar.size(); ++i) {
                    L += s.mu[i] * st.at(s.mbar[i]).ell;
                    for (int d = 0; d < st.grid.n; ++d) D[d] += s.mu[i] * st.at(s.mbar[i]).pbar[d];
                }
                for (std::size_t i = 0; i < s.nbar.size(); ++i) {
                    L += s.nu[i] * st.at(s.nbar[i]).ell;
                    for (int d = 0; d < st.grid.n; ++d) D[d] -= s.nu[i] * st.at(s.nbar[i]).pbar[d];
                }
                std::int64_t dist = 0;
                for (auto x : D) dist = std::max(dist, detail::torus_distance(x, G));
                if (dist > L) {
                    ++rep.vanishing_checked;
                    rep.worst_vanishing = std::max(rep.worst_vanishing, std::abs(intF));
                } else {
                    ++rep.vanishing_aliased;
                }
            }
            if (keep_ledger)
                rep.ledger.push_back({{"m", s.mbar},
                                      {"n", s.nbar},
                                      {"mu", s.mu},
                                      {"nu", s.nu},
                                      {"level", s.level},
                                      {"ray", s.ray},
                                      {"tail", s.tail},
                                      {"int_F", {intF.real(), intF.imag()}},
                                      {"int_G", {intG.real(), intG.imag()}},
                                      {"cells", cells}});
        }, budget);
        rep.level_sums[h] = level_sum;
        rhs += level_sum;
    }
    rep.rhs = rhs;
    rep.relative_error = std::abs(rep.lhs - rep.rhs) / std::max(std::abs(rep.lhs), 1e-300);
    rep.pass = rep.relative_error <= tol && rep.ray_support_mismatches == 0 && rep.peel_bound_violations == 0 &&
               rep.worst_vanishing <= 1e-10;
    return rep;
}

struct RaySupportReport {
    bool pass = true;
    std::uint64_t strata = 0;
    std::uint64_t mismatches = 0;
    std::optional<StratumDescriptor> first_mismatch;
};

// E_alpha nonempty exactly for the strata on one ray
inline RaySupportReport verify_ray_support(const ConstructionState& st, int p, int q, int level) {
    RaySupportReport rep;
    for_each_stratum(p, q, level, st.m, [&](const StratumDescriptor& s) {
        ++rep.strata;
        std::size_t cells = 0;
        integrate_G(st, s, &cells);
        if ((cells > 0) != s.ray) {
            ++rep.mismatches;
            if (!rep.first_mismatch) rep.first_mismatch = s;
        }
    });
    rep.pass = rep.mismatches == 0;
    return rep;
}

// sum of |E_N| over the vertices at 0-based height l
inline double unit_sum_check(const ConstructionState& st, int l) {
    if (l < 0 || l > st.m - 1) throw DomainError("height must be in 0..m-1");
    std::size_t cells = 0;
    for (std::uint64_t N = std::uint64_t{1} << l; N < (std::uint64_t{2} << l); ++N) cells += st.at(N).cells.size();
    return static_cast<double>(cells) * st.grid.cell_volume();
}

struct RecursionReport {
    bool pass = true;
    // per (level, mu) with r = s >= 2: the tail sum G*_h, the ray sum G'_h,
    // and the recursion right side sum_{h1 < h} G'_{h1}[truncated]
    struct Row {
        int level;
        Multiplicity mu, nu;
        cplx tail_sum, ray_sum, recursion;
    };
    std::vector<Row> rows;
    double worst_exact = 0.0;   // |G*_h - recursion|
    double worst_approx = 0.0;  // |G'_h - recursion|
};

// Recursion over subtrees. The tail part is an identity of the tree system,
// the remaining ray strata are the approximate part.
inline RecursionReport verify_recursion(const ConstructionState& st, int p0, double tol = 1e-6) {
    RecursionReport rep;
    const int m = st.m;
    // G'_h[r, mu; s, nu] and G*_h for all levels and shapes
    using Key = std::tuple<int, Multiplicity, Multiplicity>;
    std::map<Key, cplx> ray_sum, tail_sum;
    for (int p = 1; p <= p0; ++p)
        for (int q = 1; q <= p0; ++q)
            for (int h = 1; h <= m; ++h)
                for_each_stratum(p, q, h, m, [&](const StratumDescriptor& s) {
                    if (!s.ray) return;
                    cplx v = integrate_G(st, s);
                    ray_sum[{h, s.mu, s.nu}] += v;
                    if (s.tail) tail_sum[{h, s.mu, s.nu}] += v;
                });
    for (const auto& [key, rs] : ray_sum) {
        const auto& [h, mu, nu] = key;
        if (mu.size() < 2 || nu.size() < 2 || mu.back() != nu.back()) continue;
        Multiplicity mu1(mu.begin(), mu.end() - 1), nu1(nu.begin(), nu.end() - 1);
        cplx rec = 0.0;
        for (int h1 = 1; h1 < h; ++h1) {
            auto it = ray_sum.find({h1, mu1, nu1});
            if (it != ray_sum.end()) rec += it->second;
        }
        cplx ts = tail_sum.count(key) ? tail_sum.at(key) : cplx(0.0);
        rep.rows.push_back({h, mu, nu, ts, rs, rec});
        rep.worst_exact = std::max(rep.worst_exact, std::abs(ts - rec));
        rep.worst_approx = std::max(rep.worst_approx, std::abs(rs - rec));
    }
    rep.pass = rep.worst_exact <= 1e-9 && rep.worst_approx <= tol;
    return rep;
}

inline void to_json(nlohmann::json& j, const RecursionReport& r) {
    j = {{"pass", r.pass}, {"worst_exact", r.worst_exact}, {"worst_approx", r.worst_approx}};
    auto& rows = j["rows"] = nlohmann::json::array();
    for (const auto& x : r.rows)
        rows.push_back({{"level", x.level},
                        {"mu", x.mu},
                        {"nu", x.nu},
                        {"tail_sum", {x.tail_sum.real(), x.tail_sum.imag()}},
                        {"ray_sum", {x.ray_sum.real(), x.ray_sum.imag()}},
                        {"recursion", {x.recursion.real(), x.recursion.imag()}}});
}

} // namespace hlab
