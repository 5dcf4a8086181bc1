#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "numeric.hpp"

namespace hlab {

using Vec = std::vector<double>;

// unit vector with positive last coordinate
struct Direction {
    Vec v;
    std::size_t dim() const { return v.size(); }
    double operator[](std::size_t i) const { return v[i]; }
};

inline constexpr double direction_tolerance = 1e-9;
inline constexpr double membership_tolerance = 1e-12;

inline std::vector<Direction> validate_directions(const std::vector<Vec>& raw) {
    if (raw.empty()) throw DomainError("direction set is empty");
    const std::size_t n = raw.front().size();
    if (n < 2) throw DomainError("directions need dimension n >= 2");
    std::vector<Direction> out;
    out.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (raw[i].size() != n) throw DomainError("direction " + std::to_string(i) + " has the wrong dimension");
        double len = norm2(raw[i]);
        if (!(len > 0.0) || !std::isfinite(len)) throw DomainError("direction " + std::to_string(i) + " is zero or not finite");
        Vec u(n);
        for (std::size_t a = 0; a < n; ++a) u[a] = raw[i][a] / len;
        if (std::abs(u[n - 1]) <= membership_tolerance)
            throw DomainError("direction " + std::to_string(i) + " is horizontal (v.e_n = 0)");
        if (u[n - 1] < 0.0)
            for (auto& x : u) x = -x;
        out.push_back({std::move(u)});
    }
    for (std::size_t i = 0; i < out.size(); ++i)
        for (std::size_t j = i + 1; j < out.size(); ++j) {
            double d2 = 0.0;
            for (std::size_t a = 0; a < n; ++a) d2 += (out[i][a] - out[j][a]) * (out[i][a] - out[j][a]);
            if (std::sqrt(d2) < direction_tolerance)
                throw DomainError("duplicate directions " + std::to_string(i) + " and " + std::to_string(j));
        }
    return out;
}

// seeded uniform sample on the upper hemisphere
inline std::vector<Vec> random_directions(int n, std::size_t count, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Vec> out;
    while (out.size() < count) {
        auto v = rng.gaussian(n);
        double len = norm2(v);
        if (len < 1e-6 || std::abs(v[n - 1]) / len < 1e-6) continue;
        for (auto& x : v) x /= len;
        if (v[n - 1] < 0)
            for (auto& x : v) x = -x;
        out.push_back(std::move(v));
    }
    return out;
}

struct DirectionOrdering {
    std::vector<Direction> ordering;      // u_1 .. u_M
    std::vector<double> heights;          // t_1 > ... > t_M
    std::vector<std::size_t> source;      // input index of u_l
    Vec base_point;                       // x' actually used
    int attempts = 1;
};

// heights of the intersections of the vertical line over x' with the planes pi_u
inline DirectionOrdering order_directions(const std::vector<Direction>& U, Vec x_prime, std::uint64_t seed,
                                          int retry_budget = 64, double tol = direction_tolerance) {
    if (U.size() < 2) throw DomainError("ordering needs at least two directions");
    const std::size_t n = U.front().dim();
    if (x_prime.size() != n - 1) throw DomainError("base point must have dimension n - 1");
    Rng rng(seed);
    for (int attempt = 1; attempt <= retry_budget; ++attempt) {
        std::vector<std::pair<double, std::size_t>> t(U.size());
        for (std::size_t l = 0; l < U.size(); ++l) {
            double s = 0.0;
            for (std::size_t a = 0; a + 1 < n; ++a) s += x_prime[a] * U[l][a];
            t[l] = {-s / U[l][n - 1], l};
        }
        std::sort(t.begin(), t.end(), [](const auto& a, const auto& b) {
            return a.first > b.first || (a.first == b.first && a.second < b.second);
        });
        bool generic = true;
        for (std::size_t l = 0; l + 1 < t.size(); ++l)
            if (t[l].first - t[l + 1].first <= tol) generic = false;
        if (generic) {
            DirectionOrdering o;
            for (auto& [h, i] : t) {
                o.ordering.push_back(U[i]);
                o.heights.push_back(h);
                o.source.push_back(i);
            }
            o.base_point = x_prime;
            o.attempts = attempt;
            return o;
        }
        x_prime = rng.in_ball(n - 1);
    }
    throw GenericityError("no generic base point found within " + std::to_string(retry_budget) + " attempts");
}

struct Constraint {
    Direction dir;
    int sign = 1;
};

struct Sector {
    std::vector<Constraint> constraints;
    std::optional<Vec> witness;
};

enum class Membership { inside, outside, boundary };

inline Membership sector_membership(const Sector& S, std::span<const double> x, double tol = membership_tolerance) {
    bool on_boundary = false;
    for (const auto& c : S.constraints) {
        double d = c.sign * dot(c.dir.v, x);
        if (std::abs(d) <= tol)
            on_boundary = true;
        else if (d < 0.0)
            return Membership::outside;
    }
    return on_boundary ? Membership::boundary : Membership::inside;
}

struct SectorChain {
    std::vector<Direction> ordering;
    std::vector<double> heights;
    std::vector<Sector> sectors;   // S_1 .. S_{M-1}
    std::vector<Vec> witnesses;    // Q_1 .. Q_{M-1}
    Vec base_point;
    int attempts = 1;
    std::uint64_t seed = 0;

    std::size_t M() const { return ordering.size(); }
    std::size_t dim() const { return ordering.front().dim(); }
};

// S_i = {x.u_l < 0 for l <= i} and {x.u_l > 0 for l > i}, witness (x', tau_i)
inline SectorChain build_sector_chain(const DirectionOrdering& o) {
    const std::size_t M = o.ordering.size();
    for (std::size_t l = 0; l + 1 < M; ++l)
        if (!(o.heights[l] > o.heights[l + 1])) throw DomainError("heights must be strictly decreasing");
    SectorChain ch;
    ch.ordering = o.ordering;
    ch.heights = o.heights;
    ch.base_point = o.base_point;
    ch.attempts = o.attempts;
    for (std::size_t i = 1; i < M; ++i) {
        Sector S;
        for (std::size_t l = 1; l <= M; ++l) S.constraints.push_back({o.ordering[l - 1], l <= i ? -1 : 1});
        Vec w = o.base_point;
        w.push_back(0.5 * (o.heights[i - 1] + o.heights[i]));
        if (sector_membership(S, w) != Membership::inside)
            throw InternalError("witness of sector " + std::to_string(i) + " fails membership");
        S.witness = w;
        ch.witnesses.push_back(w);
        ch.sectors.push_back(std::move(S));
    }
    return ch;
}

// Direction d in S maximizing min_i s_i (d.v_i) / |v_i|_1, by projected
// subgradient ascent from the witness direction. A cube of half-side L
// centered at R d lies in S once R * margin > L.
struct SectorAxis {
    Vec d;
    double margin = 0.0;
};

inline SectorAxis sector_axis(const Sector& S, int iterations = 400) {
    if (!S.witness) throw DomainError("sector has no witness");
    const std::size_t n = S.witness->size();
    std::vector<Vec> a;
    for (const auto& c : S.constraints) {
        double l1 = 0.0;
        for (double x : c.dir.v) l1 += std::abs(x);
        Vec r(n);
        for (std::size_t k = 0; k < n; ++k) r[k] = c.sign * c.dir[k] / l1;
        a.push_back(std::move(r));
    }
    auto score = [&](const Vec& d, std::size_t& arg) {
        double best = INFINITY;
        for (std::size_t i = 0; i < a.size(); ++i) {
            double s = dot(a[i], d);
            if (s < best) {
                best = s;
                arg = i;
            }
        }
        return best;
    };
    Vec d = *S.witness;
    double len = norm2(d);
    for (auto& x : d) x /= len;
    std::size_t arg = 0;
    SectorAxis best{d, score(d, arg)};
    double step = 0.5;
    for (int it = 0; it < iterations; ++it) {
        score(d, arg);
        for (std::size_t k = 0; k < n; ++k) d[k] += step * a[arg][k];
        len = norm2(d);
        for (auto& x : d) x /= len;
        double s = score(d, arg);
        if (s > best.margin) best = {d, s};
        step *= 0.985;
    }
    return best;
}

struct SectorReport {
    bool pass = true;
    std::size_t witness_violations = 0;
    std::size_t samples = 0;
    std::size_t pattern_violations = 0;
    std::size_t overlap_violations = 0;
    std::size_t short_sectors = 0;  // sectors that did not reach the sample budget
    std::optional<Vec> bad_point;
    std::optional<std::size_t> bad_sector;
};

inline void to_json(nlohmann::json& j, const SectorReport& r) {
    j = {{"pass", r.pass},
         {"witness_violations", r.witness_violations},
         {"samples", r.samples},
         {"pattern_violations", r.pattern_violations},
         {"overlap_violations", r.overlap_violations},
         {"short_sectors", r.short_sectors}};
    if (r.bad_point) j["bad_point"] = *r.bad_point;
    if (r.bad_sector) j["bad_sector"] = *r.bad_sector;
}

inline SectorReport verify_sector_pattern(const SectorChain& ch, std::size_t samples_per_sector, std::uint64_t seed) {
    SectorReport r;
    const std::size_t M = ch.M(), n = ch.dim();
    auto record = [&](std::size_t i, const Vec& x) {
        if (!r.bad_point) {
            r.bad_point = x;
            r.bad_sector = i;
        }
    };
    // exact pattern at the witnesses
    for (std::size_t i = 1; i < M; ++i)
        for (std::size_t l = 1; l <= M; ++l) {
            double d = dot(ch.witnesses[i - 1], ch.ordering[l - 1].v);
            bool ok = (l <= i) ? d < 0.0 : d > 0.0;
            if (!ok) {
                ++r.witness_violations;
                record(i, ch.witnesses[i - 1]);
            }
        }
    // sign vector of x against the ordering matches the pattern of S_i
    // (i leading minus signs) for exactly one i
    auto pattern_index = [&](const Vec& x) -> std::optional<std::size_t> {
        std::size_t lead = 0;
        while (lead < M && dot(x, ch.ordering[lead].v) < 0.0) ++lead;
        for (std::size_t l = lead; l < M; ++l)
            if (!(dot(x, ch.ordering[l].v) > 0.0)) return std::nullopt;
        if (lead == 0 || lead == M) return std::nullopt;
        return lead;
    };
    for (std::size_t i = 1; i < M; ++i) {
        Rng rng(derive_seed(seed, i));
        Vec w = ch.witnesses[i - 1];
        double len = norm2(w);
        for (auto& x : w) x /= len;
        double reach = INFINITY;
        for (const auto& u : ch.ordering) reach = std::min(reach, std::abs(dot(w, u.v)));
        std::size_t accepted = 0, proposals = 0;
        const std::size_t cap = 1000 * samples_per_sector + 1000;
        Vec x(n);
        while (accepted < samples_per_sector && proposals < cap) {
            ++proposals;
            auto b = rng.in_ball(n);
            double t = std::exp(rng.uniform(std::log(0.01), std::log(100.0)));
            for (std::size_t k = 0; k < n; ++k) x[k] = t * (w[k] + 2.0 * reach * b[k]);
            if (sector_membership(ch.sectors[i - 1], x) != Membership::inside) continue;
            ++accepted;
            for (std::size_t l = 1; l <= M; ++l) {
                double d = dot(x, ch.ordering[l - 1].v);
                if (!((l <= i) ? d < 0.0 : d > 0.0)) {
                    ++r.pattern_violations;
                    record(i, x);
                    break;
                }
            }
            auto j = pattern_index(x);
            bool overlap = !j || *j != i;
            if (i > 1 && sector_membership(ch.sectors[i - 2], x) == Membership::inside) overlap = true;
            if (i + 1 < M && sector_membership(ch.sectors[i], x) == Membership::inside) overlap = true;
            if (overlap) {
                ++r.overlap_violations;
                record(i, x);
            }
            // conic invariance
            Vec y = x;
            for (auto& c : y) c *= 3.0;
            if (sector_membership(ch.sectors[i - 1], y) != Membership::inside) {
                ++r.pattern_violations;
                record(i, x);
            }
        }
        r.samples += accepted;
        if (accepted < samples_per_sector) ++r.short_sectors;
    }
    r.pass = r.witness_violations == 0 && r.pattern_violations == 0 && r.overlap_violations == 0 &&
             r.short_sectors == 0;
    return r;
}

// {"n": int, "vectors": [[...], ...]}
inline std::vector<Vec> parse_directions(const nlohmann::json& j) {
    if (!j.contains("n") || !j.contains("vectors")) throw ConfigError("direction file needs keys n and vectors");
    int n = j.at("n").get<int>();
    auto vs = j.at("vectors").get<std::vector<Vec>>();
    for (const auto& v : vs)
        if (static_cast<int>(v.size()) != n) throw ConfigError("direction file: vector length differs from n");
    return vs;
}

inline std::vector<Vec> load_directions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open direction file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return parse_directions(j);
}

inline nlohmann::json directions_to_json(const std::vector<Vec>& vs) {
    return {{"n", vs.empty() ? 0 : vs.front().size()}, {"vectors", vs}};
}

inline nlohmann::json chain_to_json(const SectorChain& ch) {
    nlohmann::json j;
    j["n"] = ch.dim();
    j["M"] = ch.M();
    std::vector<Vec> ord;
    for (const auto& u : ch.ordering) ord.push_back(u.v);
    j["ordering"] = ord;
    j["heights"] = ch.heights;
    j["witnesses"] = ch.witnesses;
    j["base_point"] = ch.base_point;
    j["base_point_attempts"] = ch.attempts;
    j["seed"] = ch.seed;
    j["sign_convention"] = "v flipped to -v when v.e_n < 0";
    return j;
}

} // namespace hlab
