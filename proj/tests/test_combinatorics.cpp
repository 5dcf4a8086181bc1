#include <algorithm>
#include <set>

#include <gtest/gtest.h>

#include "hlab/combinatorics.hpp"
#include "support.hpp"

using namespace hlab;
using hlab::testing::small_state;

namespace {

const ConstructionState& state_m2() {
    static const ConstructionState st = small_state(2);
    return st;
}

const ConstructionState& state_m3() {
    static const ConstructionState st = small_state(3, 7, "equispaced");
    return st;
}

// strata counted by brute force over all pairs of multisets of {1..2^h-1}
std::uint64_t brute_strata(int p, int q, int h) {
    const std::uint64_t top = (std::uint64_t{1} << h) - 1, low = std::uint64_t{1} << (h - 1);
    auto multisets = [&](int size) {
        std::set<std::vector<std::uint64_t>> out;
        std::vector<std::uint64_t> t(size, 1);
        while (true) {
            auto s = t;
            std::sort(s.begin(), s.end());
            out.insert(s);
            int pos = size - 1;
            while (pos >= 0 && t[pos] == top) t[pos--] = 1;
            if (pos < 0) break;
            ++t[pos];
        }
        return out;
    };
    std::uint64_t n = 0;
    for (const auto& a : multisets(p))
        for (const auto& b : multisets(q))
            if (std::max(a.back(), b.back()) >= low) ++n;
    return n;
}

} // namespace

TEST(Compositions, SmallCases) {
    EXPECT_EQ(compositions(3, 2), (std::vector<Multiplicity>{{1, 2}, {2, 1}}));
    for (int p = 1; p <= 6; ++p) EXPECT_EQ(compositions(p, 1), (std::vector<Multiplicity>{{p}}));
    EXPECT_THROW(compositions(2, 3), DomainError);
    EXPECT_THROW(compositions(2, 0), DomainError);
}

TEST(Compositions, CountIsBinomialAndSorted) {
    for (int p = 1; p <= 8; ++p)
        for (int r = 1; r <= p; ++r) {
            auto c = compositions(p, r);
            EXPECT_EQ(c.size(), binomial(p - 1, r - 1));
            EXPECT_TRUE(std::is_sorted(c.begin(), c.end()));
            for (const auto& mu : c) {
                EXPECT_EQ(static_cast<int>(mu.size()), r);
                int s = 0;
                for (int x : mu) {
                    EXPECT_GE(x, 1);
                    s += x;
                }
                EXPECT_EQ(s, p);
            }
        }
}

TEST(Compositions, Multinomial) {
    EXPECT_EQ(multinomial({1, 1}), 2u);
    EXPECT_EQ(multinomial({2}), 1u);
    EXPECT_EQ(multinomial({2, 1, 1}), 12u);
    EXPECT_EQ(multinomial({3, 2}), 10u);
}

TEST(Strata, CountMatchesEnumerationAndBruteForce) {
    for (int p = 1; p <= 3; ++p)
        for (int q = 1; q <= 3; ++q)
            for (int h = 1; h <= 3; ++h) {
                auto list = enumerate_strata(p, q, h, 3);
                EXPECT_EQ(list.size(), count_strata(p, q, h)) << p << " " << q << " " << h;
                // each (multiset, multiset) pair is one stratum
                EXPECT_EQ(list.size(), brute_strata(p, q, h)) << p << " " << q << " " << h;
            }
}

TEST(Strata, Invariants) {
    for (int h = 1; h <= 3; ++h)
        for (const auto& s : enumerate_strata(2, 3, h, 3)) {
            EXPECT_TRUE(std::is_sorted(s.mbar.begin(), s.mbar.end()));
            EXPECT_TRUE(std::adjacent_find(s.mbar.begin(), s.mbar.end()) == s.mbar.end());
            EXPECT_EQ(height(s.max_entry()) + 1, h);
            EXPECT_EQ(s.ray, on_one_ray(s.mbar, s.nbar));
            if (s.tail) {
                EXPECT_TRUE(s.ray);
                EXPECT_EQ(s.mbar.back(), s.nbar.back());
                EXPECT_EQ(s.mu.back(), s.nu.back());
            }
            if (s.mu.back() != s.nu.back()) { EXPECT_FALSE(s.tail); }
        }
}

TEST(Strata, LevelOutOfRangeThrows) {
    EXPECT_THROW(enumerate_strata(2, 2, 0, 3), DomainError);
    EXPECT_THROW(enumerate_strata(2, 2, 4, 3), DomainError);
    EXPECT_THROW(enumerate_strata(2, 2, 20, 20, 1000), ResourceError);
}

TEST(Strata, RayFlags) {
    // 1 -> 2 -> 5 -> 10 is a ray; 8 hangs below 4, off it
    std::vector<std::uint64_t> on{1, 2, 5, 10}, off{1, 2, 5, 8};
    Multiplicity mu{1, 1, 1, 1};
    auto a = make_stratum(on, on, mu, mu);
    EXPECT_TRUE(a.ray);
    EXPECT_TRUE(a.tail);
    EXPECT_EQ(a.level, 4);
    auto b = make_stratum(on, off, mu, mu);
    EXPECT_FALSE(b.ray);
    EXPECT_FALSE(b.tail);
    auto c = make_stratum(on, on, mu, Multiplicity{1, 1, 2, 1});
    EXPECT_TRUE(c.ray);
    EXPECT_TRUE(c.tail);
    auto d = make_stratum(on, on, Multiplicity{1, 1, 1, 2}, mu);
    EXPECT_FALSE(d.tail);
}

TEST(Partition, TwoByTwo) {
    auto r = verify_partition(2, 2);
    EXPECT_TRUE(r.pass) << r.failure;
    EXPECT_EQ(r.tuples, 9u);
    EXPECT_EQ(r.tuples_by_length.at(1), 3u);
    EXPECT_EQ(r.tuples_by_length.at(2), 6u);
    EXPECT_EQ(r.classes, 6u);
}

TEST(Partition, SmallRange) {
    for (int p = 1; p <= 3; ++p)
        for (int h = 1; h <= 4; ++h) {
            auto r = verify_partition(p, h);
            EXPECT_TRUE(r.pass) << p << " " << h << ": " << r.failure;
            EXPECT_EQ(r.tuples, static_cast<std::uint64_t>(std::pow((1 << h) - 1, p)));
            if (p == 1) { EXPECT_EQ(r.tuples_by_length.size(), 1u); }
        }
    EXPECT_THROW(verify_partition(8, 10, 1000), ResourceError);
}

TEST(RaySupport, HandStrata) {
    const auto& st = state_m3();
    std::size_t cells = 0;
    integrate_G(st, make_stratum({1}, {1}, {1}, {1}), &cells);
    EXPECT_EQ(cells, st.grid.size());
    integrate_G(st, make_stratum({2, 3}, {1}, {1, 1}, {1}), &cells);
    EXPECT_EQ(cells, 0u);
    integrate_G(st, make_stratum({1, 2, 5}, {2}, {1, 1, 1}, {1}), &cells);
    EXPECT_EQ(cells, st.at(5).cells.size());
    EXPECT_GT(cells, 0u);
}

TEST(RaySupport, AllStrataSmall) {
    const auto& st = state_m3();
    for (int p = 1; p <= 2; ++p)
        for (int q = 1; q <= 2; ++q)
            for (int h = 1; h <= 3; ++h) {
                auto r = verify_ray_support(st, p, q, h);
                EXPECT_TRUE(r.pass) << p << " " << q << " " << h;
                EXPECT_EQ(r.strata, count_strata(p, q, h));
            }
}

TEST(UnitSums, EveryLevel) {
    const auto& st = state_m3();
    EXPECT_DOUBLE_EQ(unit_sum_check(st, 0), 1.0);
    const double tol = static_cast<double>(st.boundary_cells) * st.grid.cell_volume() + 1e-12;
    for (int l = 1; l < st.m; ++l) EXPECT_NEAR(unit_sum_check(st, l), 1.0, tol);
    EXPECT_THROW(unit_sum_check(st, st.m), DomainError);
}

TEST(NormExpansion, ParsevalAtPZeroOne) {
    auto r = norm_expansion_oracle(state_m3(), 1);
    EXPECT_TRUE(r.pass);
    EXPECT_LE(r.relative_error, 1e-9);
}

TEST(NormExpansion, TwoLevelsFourthPower) {
    auto r = norm_expansion_oracle(state_m2(), 2, true);
    EXPECT_TRUE(r.pass);
    EXPECT_LE(r.relative_error, 1e-6);
    EXPECT_EQ(r.ray_support_mismatches, 0u);
    EXPECT_EQ(r.peel_bound_violations, 0u);
    EXPECT_EQ(r.ledger.size(), r.strata);
}

TEST(NormExpansion, ThreeLevelsFourthPower) {
    auto r = norm_expansion_oracle(state_m3(), 2);
    EXPECT_TRUE(r.pass);
    EXPECT_LE(r.relative_error, 1e-6);
    EXPECT_LE(r.worst_vanishing, 1e-10);
}

TEST(Recursion, TailPartIsExact) {
    auto r = verify_recursion(state_m3(), 2);
    EXPECT_FALSE(r.rows.empty());
    EXPECT_LE(r.worst_exact, 1e-9);
    RecordProperty("worst_approx", std::to_string(r.worst_approx));
}
