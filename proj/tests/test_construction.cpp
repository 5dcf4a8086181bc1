#include <numbers>

#include <gtest/gtest.h>

#include "hlab/construction.hpp"
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

} // namespace

TEST(Build, TwoLevelsThreeVertices) {
    const auto& st = state_m2();
    ASSERT_EQ(st.count(), 3u);
    EXPECT_EQ(st.at(1).cells.size(), st.grid.size());
    for (std::size_t c = 0; c < st.grid.size(); ++c)
        if (!st.boundary[c]) { EXPECT_EQ(st.at(2).mask[c] + st.at(3).mask[c], 1); }
    EXPECT_EQ(st.boundary_cells, 0u);
}

TEST(Build, LeftChildIsAboutHalf) {
    const auto& st = state_m3();
    double frac = st.measure(2);
    EXPECT_NEAR(frac, 0.5, 0.02);
    EXPECT_NEAR(st.measure(2) + st.measure(3), 1.0, 1e-15);
}

TEST(Build, VerifyConstructionPasses) {
    for (const auto* st : {&state_m2(), &state_m3()}) {
        auto rep = verify_construction(*st);
        for (const auto& c : rep.checks)
            if (!c.advisory) { EXPECT_TRUE(c.pass) << c.name << " " << c.detail.dump(); }
        EXPECT_TRUE(rep.pass);
    }
}

TEST(Build, IndicatorSumIsM) {
    const auto& st = state_m3();
    for (std::size_t c = 0; c < st.grid.size(); ++c) {
        if (st.boundary[c]) continue;
        int s = 0;
        for (std::uint64_t N = 1; N <= st.count(); ++N) s += st.at(N).mask[c];
        ASSERT_EQ(s, st.m);
    }
}

TEST(Build, SubtreeOfRootIsWholeTorus) {
    // sum over the leaves below N0 = 1 at depth r = m - 1 is chi_Q
    const auto& st = state_m3();
    for (std::size_t c = 0; c < st.grid.size(); ++c) {
        if (st.boundary[c]) continue;
        int s = 0;
        for (std::uint64_t N = 4; N <= 7; ++N) s += st.at(N).mask[c];
        ASSERT_EQ(s, 1);
    }
}

TEST(Build, RootIntegralIsTwoOverPi) {
    const auto& st = state_m3();
    ASSERT_GE(st.grid.G, 256u);
    EXPECT_NEAR(st.at(1).integral / (2.0 / std::numbers::pi), 1.0, 0.02);
    for (std::uint64_t N = 1; N <= st.count(); ++N) EXPECT_GT(st.at(N).integral, st.measure(N) / 3.0);
}

TEST(Mollify, FullTorusGivesOne) {
    const auto& st = state_m2();
    for (double g : st.at(1).g) ASSERT_NEAR(g, 1.0, 1e-12);
}

TEST(Mollify, RealPathMatchesSpectralDefinition) {
    Rng r(3);
    for (int n : {1, 2, 3}) {
        TorusGrid g(n, 16);
        std::vector<double> chi(g.size());
        for (auto& x : chi) x = r.uniform() < 0.4;
        for (std::int64_t ell : {1, 3, 7}) {
            auto a = detail::taper_real(g, chi, ell);
            auto b = idft(detail::apply_taper(dft(GridFunction::from_real(g, chi)), ell)).real();
            for (std::size_t c = 0; c < g.size(); ++c) ASSERT_NEAR(a[c], b[c], 1e-13);
        }
    }
}

TEST(Mollify, WideTaperApproachesIndicator) {
    // with ell = G/2 - 1 only the taper's attenuation of high modes remains
    TorusGrid g(1, 64);
    std::vector<double> chi(64, 0.0);
    for (std::size_t c = 10; c < 40; ++c) chi[c] = 1.0;
    auto X = dft(GridFunction::from_real(g, chi));
    auto w = Taper::profile(31);
    auto gv = detail::taper_real(g, chi, 31);
    auto Y = dft(GridFunction::from_real(g, gv));
    for (std::size_t i = 0; i < 64; ++i) {
        std::int64_t k = std::abs(g.frequency(i));
        double a = k < 31 ? w[k] : 0.0;
        EXPECT_NEAR(std::abs(Y.coeffs[i] - a * X.coeffs[i]), 0.0, 1e-13);
    }
    double err = 0.0;
    for (std::size_t c = 0; c < 64; ++c) err += std::abs(gv[c] - chi[c]) / 64.0;
    double err_small = 0.0;
    auto g4 = detail::taper_real(g, chi, 4);
    for (std::size_t c = 0; c < 64; ++c) err_small += std::abs(g4[c] - chi[c]) / 64.0;
    EXPECT_LT(err, err_small);
}

TEST(Taper, ProfileShape) {
    for (std::int64_t ell : {1, 2, 8, 16}) {
        const auto& w = Taper::profile(ell);
        EXPECT_DOUBLE_EQ(w[0], 1.0);
        for (std::size_t k = 1; k < w.size(); ++k) {
            EXPECT_LE(w[k], w[k - 1] + 1e-15);
            EXPECT_GE(w[k], 0.0);
        }
        EXPECT_NEAR(w.back(), 0.0, 1e-12);
    }
}

TEST(Mollify, ValuesInUnitInterval) {
    const auto& st = state_m3();
    for (std::uint64_t N = 1; N <= st.count(); ++N)
        for (double g : st.at(N).g) {
            ASSERT_GE(g, 0.0);
            ASSERT_LE(g, 1.0 + 1e-12);
        }
}

TEST(Spectrum, SupportInCubeAndSector) {
    const auto& st = state_m3();
    std::vector<std::size_t> idx(st.grid.n);
    for (std::uint64_t N = 1; N <= st.count(); ++N) {
        const auto& v = st.at(N);
        auto F = dft(st.f(N));
        double peak = 0.0;
        for (const auto& z : F.coeffs) peak = std::max(peak, std::abs(z));
        for (std::size_t c = 0; c < F.coeffs.size(); ++c) {
            if (std::abs(F.coeffs[c]) <= 1e-11 * peak) continue;
            st.grid.unflatten(c, idx);
            Vec xi(st.grid.n);
            for (int d = 0; d < st.grid.n; ++d) {
                xi[d] = static_cast<double>(st.grid.frequency(idx[d]));
                ASSERT_LE(std::abs(xi[d] - static_cast<double>(v.pbar[d])), static_cast<double>(v.ell));
            }
            ASSERT_EQ(sector_membership(st.sector_of(N), xi), Membership::inside);
        }
    }
}

TEST(Avoidance, CertificatePasses) {
    for (const auto* st : {&state_m2(), &state_m3()}) {
        auto cert = certify_cube_avoidance(*st, 2);
        EXPECT_TRUE(cert.pass);
        EXPECT_TRUE(cert.exhaustive);
        EXPECT_GT(cert.min_margin, 0.0);
    }
}

TEST(Avoidance, FaultInjectionIsDetected) {
    const auto& st = state_m3();
    auto mf = parse_manifest(manifest_json(st));
    // p_2 next to p_1: the pair ({2}, {1}) has overlapping cubes
    mf.pbars[1] = mf.pbars[0];
    mf.pbars[1][0] += 1;
    mf.pbars[1][1] += 1;
    auto bad = assemble_from_manifest(mf);
    auto cert = certify_cube_avoidance(bad, 2);
    EXPECT_FALSE(cert.pass);
    EXPECT_EQ(cert.first_bad_vertex, 2u);
    auto rep = verify_construction(bad);
    EXPECT_FALSE(rep.check("cube_avoidance").pass);
    EXPECT_FALSE(rep.pass);
}

TEST(Avoidance, P0OneMeansDisjointCubes) {
    const auto& st = state_m3();
    for (std::uint64_t a = 1; a <= st.count(); ++a)
        for (std::uint64_t b = a + 1; b <= st.count(); ++b) {
            std::int64_t d = 0;
            for (int k = 0; k < st.grid.n; ++k) d = std::max(d, std::abs(st.at(a).pbar[k] - st.at(b).pbar[k]));
            EXPECT_GT(d, st.at(a).ell + st.at(b).ell);
        }
}

TEST(Manifest, RoundTripReproducesState) {
    const auto& st = state_m3();
    auto back = assemble_from_manifest(parse_manifest(manifest_json(st)));
    ASSERT_EQ(back.count(), st.count());
    for (std::uint64_t N = 1; N <= st.count(); ++N) {
        EXPECT_EQ(back.at(N).pbar, st.at(N).pbar);
        EXPECT_EQ(back.at(N).mask, st.at(N).mask);
        EXPECT_EQ(back.at(N).g, st.at(N).g);
    }
}

TEST(Build, Deterministic) {
    auto a = small_state(2, 11);
    auto b = small_state(2, 11);
    EXPECT_EQ(manifest_json(a).dump(), manifest_json(b).dump());
}

TEST(Build, SingleVertex) {
    auto st = small_state(1);
    ASSERT_EQ(st.count(), 1u);
    EXPECT_EQ(st.at(1).cells.size(), st.grid.size());
    EXPECT_TRUE(verify_construction(st).pass);
    Vec p(st.at(1).pbar.begin(), st.at(1).pbar.end());
    EXPECT_EQ(sector_membership(st.sector_of(1), p), Membership::inside);
}

TEST(Build, EscalationRaisesResourceError) {
    hlab::ExperimentConfig c;
    c.m = 3;
    c.direction_kind = "equispaced";
    auto chain = experiment_chain(c, 3);
    EXPECT_THROW(build_with_escalation(chain, build_sigma(3), c.construction(3), 8, 16), ResourceError);
}

TEST(Build, ConfigErrors) {
    hlab::ExperimentConfig c;
    auto chain = experiment_chain(c, 2);
    auto cfg = c.construction(2);
    cfg.m = 3;
    EXPECT_THROW(build_construction(chain, build_sigma(2), cfg, TorusGrid(2, 64)), StructuralError);
    cfg.m = 0;
    EXPECT_THROW(build_construction(chain, build_sigma(2), cfg, TorusGrid(2, 64)), DomainError);
}

TEST(ErrorFunctional, BoundedByMollifierErrors) {
    const auto& st = state_m3();
    auto rep = verify_construction(st);
    EXPECT_TRUE(rep.check("error_functional_level_set").pass);
    EXPECT_TRUE(rep.check("modulated_sum_l1").pass);
}

TEST(ErrorFunctional, FallsWithScale) {
    // the mollifier error decreases along the doubling ladder
    const auto& st = state_m3();
    const auto& v = st.at(2);
    std::vector<double> chi(st.grid.size());
    for (auto c : v.cells) chi[c] = 1.0;
    double prev = INFINITY;
    for (std::int64_t ell : {1, 2, 4, 8, 16}) {
        auto g = detail::taper_real(st.grid, chi, ell);
        double e = detail::mollify_errors(g, v.mask, 2).first;
        EXPECT_LE(e, prev + 1e-12) << "ell " << ell;
        prev = e;
    }
}
