#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "hlab/geometry.hpp"

using namespace hlab;

namespace {

const double r2 = std::sqrt(0.5);

DirectionOrdering three_vector_example() {
    auto U = validate_directions({{-r2, r2}, {0.0, 1.0}, {r2, r2}});
    return order_directions(U, {1.0}, 1);
}

} // namespace

TEST(Validate, AcceptsUnitUpperVectors) {
    auto U = validate_directions({{0, 0, 1}, {r2, 0, r2}});
    ASSERT_EQ(U.size(), 2u);
    EXPECT_EQ(U[0].v, (Vec{0, 0, 1}));
    EXPECT_NEAR(U[1][0], r2, 1e-15);
    EXPECT_NEAR(U[1][2], r2, 1e-15);
}

TEST(Validate, FlipsAndNormalizes) {
    auto U = validate_directions({{0, -3}});
    EXPECT_EQ(U[0].v, (Vec{0, 1}));
}

TEST(Validate, Rejections) {
    EXPECT_THROW(validate_directions({{1, 0}}), DomainError);
    EXPECT_THROW(validate_directions({{0, 1}, {0, -2}}), DomainError);
    EXPECT_THROW(validate_directions({{0, 0}}), DomainError);
    EXPECT_THROW(validate_directions({{0, 1}, {0, 1, 1}}), DomainError);
    EXPECT_THROW(validate_directions({}), DomainError);
    try {
        validate_directions({{0.2, 1}, {0, 1}, {0.4, 2}});
        FAIL();
    } catch (const DomainError& e) {
        EXPECT_NE(std::string(e.what()).find("0 and 2"), std::string::npos);
    }
}

TEST(Ordering, ThreeVectorExample) {
    auto o = three_vector_example();
    ASSERT_EQ(o.ordering.size(), 3u);
    EXPECT_NEAR(o.ordering[0][0], -r2, 1e-15);
    EXPECT_EQ(o.ordering[1].v, (Vec{0.0, 1.0}));
    EXPECT_NEAR(o.ordering[2][0], r2, 1e-15);
    EXPECT_NEAR(o.heights[0], 1.0, 1e-15);
    EXPECT_NEAR(o.heights[1], 0.0, 1e-15);
    EXPECT_NEAR(o.heights[2], -1.0, 1e-15);
    EXPECT_EQ(o.attempts, 1);
}

TEST(Ordering, PairGivesDistinctHeights) {
    auto U = validate_directions(random_directions(3, 2, 4));
    auto o = order_directions(U, {0.3, -0.2}, 2);
    EXPECT_GT(o.heights[0], o.heights[1]);
}

TEST(Ordering, NonGenericBasePointIsRetried) {
    // x' = 0 puts every height at 0; the retry draws a fresh base point
    auto U = validate_directions({{-r2, r2}, {0.0, 1.0}, {r2, r2}});
    auto o = order_directions(U, {0.0}, 3);
    EXPECT_GT(o.attempts, 1);
    EXPECT_THROW(order_directions(U, {0.0}, 3, 1), GenericityError);
}

TEST(Chain, ThreeVectorWitness) {
    auto ch = build_sector_chain(three_vector_example());
    ASSERT_EQ(ch.sectors.size(), 2u);
    EXPECT_NEAR(ch.witnesses[0][0], 1.0, 1e-15);
    EXPECT_NEAR(ch.witnesses[0][1], 0.5, 1e-15);
    Vec w{1.0, 0.5};
    EXPECT_LT(dot(w, ch.ordering[0].v), 0.0);
    EXPECT_GT(dot(w, ch.ordering[1].v), 0.0);
    EXPECT_GT(dot(w, ch.ordering[2].v), 0.0);
    // S_1 inside Gamma_{u_2}; Gamma_{u_1} misses every sector
    for (const auto& x : ch.witnesses) EXPECT_LT(dot(x, ch.ordering[0].v), 0.0);
}

TEST(Chain, PairHasOneSector) {
    auto U = validate_directions({{-0.3, 1.0}, {0.4, 1.0}});
    auto ch = build_sector_chain(order_directions(U, {1.0}, 1));
    ASSERT_EQ(ch.sectors.size(), 1u);
    EXPECT_LT(ch.witnesses[0][1], ch.heights[0]);
    EXPECT_GT(ch.witnesses[0][1], ch.heights[1]);
}

TEST(Membership, WitnessAndOrigin) {
    auto ch = build_sector_chain(three_vector_example());
    EXPECT_EQ(sector_membership(ch.sectors[0], ch.witnesses[0]), Membership::inside);
    EXPECT_EQ(sector_membership(ch.sectors[0], Vec{0.0, 0.0}), Membership::boundary);
    EXPECT_EQ(sector_membership(ch.sectors[0], Vec{0.0, -1.0}), Membership::outside);
}

TEST(Property, WitnessPatternComplete) {
    for (int n : {2, 3, 4})
        for (std::size_t M : {2u, 5u, 16u, 64u}) {
            auto U = validate_directions(random_directions(n, M, 100 * n + M));
            Rng r(M);
            auto ch = build_sector_chain(order_directions(U, r.in_ball(n - 1), 9));
            for (std::size_t i = 1; i < M; ++i)
                for (std::size_t l = 2; l <= M; ++l)
                    EXPECT_EQ(dot(ch.witnesses[i - 1], ch.ordering[l - 1].v) > 0.0, i < l);
        }
}

TEST(Property, ConicInvariance) {
    auto U = validate_directions(random_directions(3, 12, 5));
    auto ch = build_sector_chain(order_directions(U, {0.1, 0.2}, 5));
    Rng r(6);
    for (int s = 0; s < 2000; ++s) {
        auto x = r.gaussian(3);
        for (const auto& S : ch.sectors) {
            auto m = sector_membership(S, x);
            for (double t : {1e-3, 0.5, 7.0, 1e4}) {
                Vec y = x;
                for (auto& c : y) c *= t;
                if (m != Membership::boundary) { EXPECT_EQ(sector_membership(S, y), m); }
            }
        }
    }
}

TEST(Property, Determinism) {
    auto U = validate_directions(random_directions(3, 20, 77));
    auto a = build_sector_chain(order_directions(U, {0.0, 0.0}, 8));
    auto b = build_sector_chain(order_directions(U, {0.0, 0.0}, 8));
    EXPECT_EQ(chain_to_json(a).dump(), chain_to_json(b).dump());
    EXPECT_EQ(random_directions(4, 10, 3), random_directions(4, 10, 3));
}

TEST(SectorPattern, SampledRandomChains) {
    for (int n : {2, 3, 4}) {
        auto U = validate_directions(random_directions(n, 16, n));
        Rng r(n);
        auto ch = build_sector_chain(order_directions(U, r.in_ball(n - 1), 1));
        auto rep = verify_sector_pattern(ch, 500, 2);
        EXPECT_TRUE(rep.pass) << "n=" << n;
        EXPECT_EQ(rep.samples, 500u * 15u);
    }
}

TEST(SectorPattern, CorruptedWitnessIsReported) {
    auto ch = build_sector_chain(three_vector_example());
    ch.witnesses[0] = {-1.0, 0.5};
    auto rep = verify_sector_pattern(ch, 10, 1);
    EXPECT_FALSE(rep.pass);
    EXPECT_GT(rep.witness_violations, 0u);
    EXPECT_EQ(rep.bad_sector, 1u);
}

TEST(SectorAxis, AxisIsInteriorWithPositiveMargin) {
    auto U = validate_directions(random_directions(2, 8, 3));
    auto ch = build_sector_chain(order_directions(U, {0.4}, 3));
    for (const auto& S : ch.sectors) {
        auto ax = sector_axis(S);
        EXPECT_GT(ax.margin, 0.0);
        EXPECT_EQ(sector_membership(S, ax.d), Membership::inside);
        EXPECT_NEAR(norm2(ax.d), 1.0, 1e-12);
    }
}

TEST(DirectionFile, RoundTripAndErrors) {
    auto vs = random_directions(3, 4, 1);
    auto path = (std::filesystem::temp_directory_path() / "hlab_dirs.json").string();
    {
        std::ofstream out(path);
        out << directions_to_json(vs).dump();
    }
    auto back = load_directions(path);
    ASSERT_EQ(back.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t a = 0; a < 3; ++a) EXPECT_DOUBLE_EQ(back[i][a], vs[i][a]);
    {
        std::ofstream out(path);
        out << R"({"vectors": [[0, 1]]})";
    }
    EXPECT_THROW(load_directions(path), ConfigError);
    EXPECT_THROW(load_directions(path + ".missing"), ConfigError);
    std::filesystem::remove(path);
}
