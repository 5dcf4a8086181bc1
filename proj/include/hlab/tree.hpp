#pragma once

#include <algorithm>
#include <bit>
#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "grid.hpp"

namespace hlab {

// Vertex N of the full binary tree, N = 2^k + j - 1 with 1 <= j <= 2^k.
struct TreeIndex {
    std::uint64_t N = 1;
    int k = 0;
    std::uint64_t j = 1;
    friend bool operator==(const TreeIndex&, const TreeIndex&) = default;
};

inline int height(std::uint64_t N) { return std::bit_width(N) - 1; }

inline TreeIndex decode(std::uint64_t N) {
    if (N == 0) throw DomainError("tree index must be >= 1");
    int k = height(N);
    return {N, k, N - (std::uint64_t{1} << k) + 1};
}

inline TreeIndex decode(std::uint64_t N, int m) {
    if (m < 1 || m > 62) throw DomainError("tree depth m must be in 1..62");
    if (N == 0 || N > (std::uint64_t{1} << m) - 1)
        throw DomainError("tree index " + std::to_string(N) + " outside [1, 2^" + std::to_string(m) + " - 1]");
    return decode(N);
}

inline std::uint64_t encode(int k, std::uint64_t j) {
    if (k < 0 || k > 62) throw DomainError("height k must be in 0..62");
    if (j < 1 || j > (std::uint64_t{1} << k))
        throw DomainError("position j=" + std::to_string(j) + " outside [1, 2^" + std::to_string(k) + "]");
    return (std::uint64_t{1} << k) + j - 1;
}

inline std::uint64_t parent(std::uint64_t N) { return N / 2; }
inline std::uint64_t left_child(std::uint64_t N) { return 2 * N; }
inline std::uint64_t right_child(std::uint64_t N) { return 2 * N + 1; }
inline std::uint64_t tree_size(int m) { return (std::uint64_t{1} << m) - 1; }

// true when a == d or a is an ancestor of d
inline bool is_ancestor(std::uint64_t a, std::uint64_t d) {
    int ha = height(a), hd = height(d);
    return hd >= ha && (d >> (hd - ha)) == a;
}

inline bool comparable(std::uint64_t a, std::uint64_t b) { return is_ancestor(a, b) || is_ancestor(b, a); }

// left children carry the sign +1, right children -1: (-1)^(j-1)
inline int child_sign(std::uint64_t N) { return (N % 2 == 0) ? 1 : -1; }

struct Rational {
    std::int64_t num = 0;
    std::int64_t den = 1;

    friend bool operator==(const Rational& a, const Rational& b) {
        return static_cast<__int128>(a.num) * b.den == static_cast<__int128>(b.num) * a.den;
    }
    friend std::strong_ordering operator<=>(const Rational& a, const Rational& b) {
        __int128 l = static_cast<__int128>(a.num) * b.den, r = static_cast<__int128>(b.num) * a.den;
        return l <=> r;
    }
    double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }
};

// t_N = (2j - 1) / 2^(k+1)
inline Rational t_value(std::uint64_t N) {
    auto t = decode(N);
    if (t.k > 61) throw DomainError("t_value supports heights up to 61");
    return {static_cast<std::int64_t>(2 * t.j - 1), std::int64_t{1} << (t.k + 1)};
}

struct TreePermutation {
    int m = 0;
    std::vector<std::uint64_t> forward;  // forward[h-1] = sigma(h)
    std::vector<std::uint64_t> inverse;  // inverse[N-1] = sigma^-1(N)

    std::uint64_t sigma(std::uint64_t h) const { return forward.at(h - 1); }
    std::uint64_t position(std::uint64_t N) const { return inverse.at(N - 1); }
    std::uint64_t size() const { return forward.size(); }
};

// Sorting by t_N is the in-order traversal of the tree.
inline TreePermutation build_sigma(int m) {
    if (m < 1 || m > 30) throw DomainError("build_sigma supports 1 <= m <= 30");
    TreePermutation s;
    s.m = m;
    const std::uint64_t last = tree_size(m);
    s.forward.reserve(last);
    std::vector<std::uint64_t> stack;
    std::uint64_t cur = 1;
    while (cur <= last || !stack.empty()) {
        while (cur <= last) {
            stack.push_back(cur);
            cur = left_child(cur);
        }
        cur = stack.back();
        stack.pop_back();
        s.forward.push_back(cur);
        cur = right_child(cur);
    }
    s.inverse.assign(last, 0);
    for (std::uint64_t h = 1; h <= last; ++h) s.inverse[s.forward[h - 1] - 1] = h;
    return s;
}

// Real-valued members f_1 .. f_{2^m - 1} on a common grid.
struct FunctionSystem {
    int m = 0;
    TorusGrid grid;
    std::vector<std::vector<double>> members;

    FunctionSystem() = default;
    FunctionSystem(int depth, TorusGrid g, std::vector<std::vector<double>> f)
        : m(depth), grid(g), members(std::move(f)) {
        if (m < 1) throw DomainError("system depth must be >= 1");
        if (members.size() != tree_size(m))
            throw StructuralError("system needs 2^m - 1 members, got " + std::to_string(members.size()));
        for (const auto& v : members)
            if (v.size() != grid.size()) throw StructuralError("member does not live on the system grid");
    }

    double operator()(std::uint64_t N, std::size_t cell) const { return members[N - 1][cell]; }
    std::uint64_t count() const { return members.size(); }
};

inline constexpr double boundary_tolerance = 1e-12;

struct Violation {
    std::uint64_t vertex = 0;
    std::size_t point = 0;
    std::string kind;
    friend auto operator<=>(const Violation&, const Violation&) = default;
};

struct TreeReport {
    bool pass = true;
    std::optional<double> worst_ratio;
    std::optional<std::size_t> worst_point;
    double boundary_fraction = 0.0;
    std::size_t violation_count = 0;
    std::vector<Violation> violations;  // sorted, truncated to max_listed
    std::string note;
};

inline constexpr std::size_t max_listed_violations = 100;

inline void to_json(nlohmann::json& j, const TreeReport& r) {
    j = {{"pass", r.pass}, {"boundary_fraction", r.boundary_fraction}, {"violation_count", r.violation_count}};
    j["worst_ratio"] = r.worst_ratio ? nlohmann::json(*r.worst_ratio) : nlohmann::json(nullptr);
    auto& v = j["violations"] = nlohmann::json::array();
    for (const auto& x : r.violations) v.push_back({{"vertex", x.vertex}, {"point", x.point}, {"kind", x.kind}});
    if (!r.note.empty()) j["note"] = r.note;
}

namespace detail {

inline void finish_violations(TreeReport& r, std::vector<Violation>& v) {
    std::sort(v.begin(), v.end());
    r.violation_count = v.size();
    if (v.size() > max_listed_violations) v.resize(max_listed_violations);
    r.violations = std::move(v);
}

inline bool is_boundary_value(double v) { return v != 0.0 && std::abs(v) <= boundary_tolerance; }

inline std::vector<char> boundary_cells(const FunctionSystem& sys, std::size_t& count) {
    std::vector<char> b(sys.grid.size(), 0);
    count = 0;
    for (const auto& f : sys.members)
        for (std::size_t c = 0; c < b.size(); ++c)
            if (!b[c] && is_boundary_value(f[c])) {
                b[c] = 1;
                ++count;
            }
    return b;
}

} // namespace detail

// Definition of a signed tree system: supp f_N inside {(-1)^(j-1) f_parent > 0}
// for every N >= 2, checked at non-boundary cells.
inline TreeReport verify_signed_tree(const FunctionSystem& sys, double null_fraction = 0.01) {
    TreeReport r;
    std::size_t nb = 0;
    auto boundary = detail::boundary_cells(sys, nb);
    r.boundary_fraction = static_cast<double>(nb) / static_cast<double>(sys.grid.size());
    std::vector<Violation> v;
    for (std::uint64_t N = 2; N <= sys.count(); ++N) {
        const auto& f = sys.members[N - 1];
        const auto& fp = sys.members[parent(N) - 1];
        const int s = child_sign(N);
        for (std::size_t c = 0; c < f.size(); ++c) {
            if (boundary[c] || f[c] == 0.0) continue;
            if (!(s * fp[c] > 0.0)) v.push_back({N, c, "sign"});
        }
    }
    for (std::uint64_t N = 1; 2 * N + 1 <= sys.count(); ++N) {
        const auto& a = sys.members[2 * N - 1];
        const auto& b = sys.members[2 * N];
        for (std::size_t c = 0; c < a.size(); ++c)
            if (!boundary[c] && a[c] != 0.0 && b[c] != 0.0) v.push_back({2 * N, c, "siblings"});
    }
    detail::finish_violations(r, v);
    r.pass = r.violation_count == 0 && r.boundary_fraction <= null_fraction;
    if (r.boundary_fraction > null_fraction) r.note = "boundary fraction above null_fraction";
    return r;
}

struct RayTrace {
    std::vector<std::uint64_t> ray;
    std::vector<std::uint64_t> right_turns;
};

inline RayTrace trace_ray(const FunctionSystem& sys, std::size_t cell) {
    RayTrace t;
    if (sys(1, cell) == 0.0) return t;
    std::uint64_t N = 1;
    const std::uint64_t last = sys.count();
    while (true) {
        t.ray.push_back(N);
        std::uint64_t L = left_child(N), R = right_child(N);
        if (R > last) break;
        bool l = sys(L, cell) != 0.0, r = sys(R, cell) != 0.0;
        if (l && r)
            throw StructuralError("both children of vertex " + std::to_string(N) + " are nonzero at cell " +
                                  std::to_string(cell));
        if (!l && !r) break;
        if (r) t.right_turns.push_back(N);
        N = r ? R : L;
    }
    if (sys(N, cell) < 0.0) t.right_turns.push_back(N);
    return t;
}

// l_x = max{h : f_sigma(h)(x) < 0}, 0 if none
inline std::uint64_t locate_lx(const FunctionSystem& sys, const TreePermutation& sigma, std::size_t cell) {
    if (sigma.size() != sys.count()) throw StructuralError("permutation and system depth differ");
    for (std::uint64_t h = sigma.size(); h >= 1; --h)
        if (sys(sigma.sigma(h), cell) < 0.0) return h;
    return 0;
}

// min over cells of max_l |sum_{h<=l} f_sigma(h)| / sum_N |f_N|, together with
// the sign pattern around l_x.
inline TreeReport verify_karagulyan(const FunctionSystem& sys, const TreePermutation& sigma,
                                    double null_fraction = 0.01, double tol = 1e-9) {
    if (sigma.size() != sys.count()) throw StructuralError("permutation and system depth differ");
    auto signed_report = verify_signed_tree(sys, null_fraction);
    if (!signed_report.pass)
        throw DomainError("system is not a signed tree system (see verify_signed_tree report)");
    TreeReport r;
    r.boundary_fraction = signed_report.boundary_fraction;
    std::size_t nb = 0;
    auto boundary = detail::boundary_cells(sys, nb);
    std::vector<Violation> v;
    const std::uint64_t L = sigma.size();
    std::vector<double> vals(L);
    for (std::size_t c = 0; c < sys.grid.size(); ++c) {
        if (boundary[c]) continue;
        double total = 0.0;
        for (std::uint64_t h = 1; h <= L; ++h) {
            vals[h - 1] = sys(sigma.sigma(h), c);
            total += std::abs(vals[h - 1]);
        }
        if (total == 0.0) continue;
        double partial = 0.0, best = 0.0;
        std::uint64_t lx = 0;
        for (std::uint64_t h = 1; h <= L; ++h) {
            partial += vals[h - 1];
            best = std::max(best, std::abs(partial));
            if (vals[h - 1] < 0.0) lx = h;
        }
        for (std::uint64_t h = 1; h <= lx; ++h)
            if (vals[h - 1] > 0.0) {
                v.push_back({sigma.sigma(h), c, "pattern"});
                break;
            }
        double ratio = best / total;
        if (!r.worst_ratio || ratio < *r.worst_ratio) {
            r.worst_ratio = ratio;
            r.worst_point = c;
        }
    }
    detail::finish_violations(r, v);
    r.pass = r.violation_count == 0 && (!r.worst_ratio || *r.worst_ratio >= 1.0 / 3.0 - tol);
    return r;
}

} // namespace hlab
