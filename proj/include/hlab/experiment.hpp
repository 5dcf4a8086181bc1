#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "combinatorics.hpp"
#include "construction.hpp"
#include "geometry.hpp"
#include "grid.hpp"
#include "operator.hpp"
#include "tree.hpp"

namespace hlab {

struct ExperimentConfig {
    int n = 2;
    int m = 2;      // verify / single runs; lower end of a sweep
    int m_max = 5;  // upper end of a sweep
    std::vector<double> p_list{1.0, 2.0, 4.0};
    std::size_t grid_start = 64;
    std::size_t grid_max = 1024;
    std::size_t max_cells = default_max_cells;
    std::uint64_t seed = 7;
    std::string directions_file;
    std::string direction_kind = "uniform";  // uniform | equispaced
    std::string manifest_file;
    double C2 = 1.0 / 20.0;
    double C3 = 9.0 / 100.0;
    double ftilde_level = 1.0 / 10.0;  // threshold is ftilde_level * m
    double ftilde_mass = 1.0 / 10.0;
    int p0 = 2;
    std::int64_t ell_cap = 16;
    std::size_t min_child_cells = 16;
    double delta = 0.0;
    std::size_t geometry_samples = 10000;
    int oracle_m_max = 3;
    int oracle_p0_max = 2;
    bool strict = false;
    bool timing = true;

    double tol(double base) const { return strict ? base / 10.0 : base; }

    ConstructionConfig construction(int depth) const {
        ConstructionConfig c;
        c.m = depth;
        c.p0 = p0;
        c.delta = delta;
        c.ell_cap = ell_cap;
        c.min_child_cells = min_child_cells;
        c.seed = seed;
        return c;
    }
};

inline nlohmann::json config_json(const ExperimentConfig& c) {
    return {{"n", c.n},
            {"m", c.m},
            {"m_max", c.m_max},
            {"p", c.p_list},
            {"grid_start", c.grid_start},
            {"grid_max", c.grid_max},
            {"seed", c.seed},
            {"directions", c.directions_file.empty() ? "generated:" + c.direction_kind : c.directions_file},
            {"C2", c.C2},
            {"C3", c.C3},
            {"ftilde_level", c.ftilde_level},
            {"ftilde_mass", c.ftilde_mass},
            {"p0", c.p0},
            {"ell_cap", c.ell_cap},
            {"delta", c.delta > 0.0 ? c.delta : default_delta(c.m)},
            {"strict", c.strict},
            {"zero_set_policy", "exclude"},
            {"dft_convention", "F(xi) = G^-n sum_x f(x) e(-xi.x), x = (2i+1)/(2G), xi in [-G/2, G/2)^n"}};
}

// Equispaced: angles pi (k + 1/2) / M in the plane, a Fibonacci cap otherwise.
inline std::vector<Vec> equispaced_directions(int n, std::size_t M) {
    std::vector<Vec> out;
    if (n == 2) {
        for (std::size_t k = 0; k < M; ++k) {
            double a = std::numbers::pi * (static_cast<double>(k) + 0.5) / static_cast<double>(M);
            out.push_back({std::cos(a), std::sin(a)});
        }
        return out;
    }
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (std::size_t k = 0; k < M; ++k) {
        double z = 1.0 - (static_cast<double>(k) + 0.5) / static_cast<double>(M);  // (0, 1)
        double r = std::sqrt(1.0 - z * z);
        Vec v(n, 0.0);
        v[0] = r * std::cos(golden * k);
        v[1] = r * std::sin(golden * k);
        for (int d = 2; d + 1 < n; ++d) v[d] = 0.0;
        v[n - 1] = z;
        if (n > 3) {
            // spread the middle coordinates a little so all axes are used
            for (int d = 2; d + 1 < n; ++d) v[d] = 0.3 * std::sin(golden * k * (d + 1));
            double len = norm2(v);
            for (auto& x : v) x /= len;
        }
        out.push_back(std::move(v));
    }
    return out;
}

inline std::vector<Vec> experiment_directions(const ExperimentConfig& c, int m) {
    const std::size_t M = std::size_t{1} << m;
    if (!c.directions_file.empty()) {
        auto all = load_directions(c.directions_file);
        if (all.empty() || static_cast<int>(all.front().size()) != c.n)
            throw ConfigError("direction file dimension differs from --n");
        if (all.size() < M)
            throw ConfigError("direction file has " + std::to_string(all.size()) + " vectors, need 2^m = " +
                              std::to_string(M));
        all.resize(M);
        return all;
    }
    if (c.direction_kind == "equispaced") return equispaced_directions(c.n, M);
    if (c.direction_kind == "uniform") return random_directions(c.n, M, derive_seed(c.seed, 1));
    throw ConfigError("unknown direction kind " + c.direction_kind);
}

inline SectorChain experiment_chain(const ExperimentConfig& c, int m) {
    std::vector<Direction> U;
    try {
        U = validate_directions(experiment_directions(c, m));
    } catch (const DomainError& e) {
        throw ConfigError(e.what());
    }
    Rng rng(derive_seed(c.seed, 2));
    auto x0 = rng.in_ball(c.n - 1);
    auto chain = build_sector_chain(order_directions(U, x0, derive_seed(c.seed, 3)));
    chain.seed = c.seed;
    return chain;
}

inline ConstructionState experiment_state(const ExperimentConfig& c, int m, const SectorChain& chain) {
    return build_with_escalation(chain, build_sigma(m), c.construction(m), c.grid_start, c.grid_max, c.max_cells);
}

// max over l of |sum_{h < l} f_sigma(h)|, l = 2..2^m
inline std::vector<double> max_partial_sums(const ConstructionState& st) {
    std::vector<cplx> partial(st.grid.size());
    std::vector<double> best(st.grid.size(), 0.0);
    for (std::uint64_t h = 1; h <= st.count(); ++h) {
        auto piece = st.f(st.sigma.sigma(h));
        for (std::size_t c = 0; c < partial.size(); ++c) {
            partial[c] += piece[c];
            best[c] = std::max(best[c], std::abs(partial[c]));
        }
    }
    return best;
}

inline std::vector<double> ftilde_abs_sum(const ConstructionState& st) {
    std::vector<double> s(st.grid.size(), 0.0);
    for (std::uint64_t N = 1; N <= st.count(); ++N) {
        const auto& v = st.at(N);
        for (auto c : v.cells) s[c] += std::abs(st.lattice->cos(v.pbar, c));
    }
    return s;
}

struct VerifyOutcome {
    int exit_code = 0;
    nlohmann::json report;
};

inline VerifyOutcome run_verify(const ExperimentConfig& c) {
    VerifyOutcome out;
    auto& rep = out.report;
    rep["config"] = config_json(c);
    std::vector<CheckResult> checks;
    auto add = [&](std::string name, bool pass, nlohmann::json detail, bool advisory = false) {
        checks.push_back({std::move(name), pass, advisory, std::move(detail)});
    };
    try {
        ConstructionState st;
        SectorChain chain;
        if (!c.manifest_file.empty()) {
            std::ifstream in(c.manifest_file);
            if (!in) throw ConfigError("cannot open manifest " + c.manifest_file);
            nlohmann::json j;
            in >> j;
            auto mf = parse_manifest(j);
            st = assemble_from_manifest(mf);
            chain = st.chain;
        } else {
            chain = experiment_chain(c, c.m);
            st = experiment_state(c, c.m, chain);
        }
        const int m = st.m;
        rep["m"] = m;
        rep["G"] = st.grid.G;

        auto geo = verify_sector_pattern(chain, c.geometry_samples, derive_seed(c.seed, 4));
        add("sector_pattern", geo.pass, geo);

        auto cons = verify_construction(st);
        for (auto& ch : cons.checks) checks.push_back(ch);

        auto sys = st.ftilde_system();
        auto kar = verify_karagulyan(sys, st.sigma, st.config.null_fraction, c.tol(1e-9));
        add("karagulyan", kar.pass, kar);

        auto psi = verify_partial_sum_identity(st, c.tol(1e-9));
        add("partial_sum_identity", psi.pass, psi);

        auto fsum = ftilde_abs_sum(st);
        double mass = superlevel_measure(fsum, c.ftilde_level * m);
        add("ftilde_level_set", mass >= c.ftilde_mass,
            {{"fraction", mass}, {"threshold", c.ftilde_level * m}, {"required", c.ftilde_mass}});

        auto mps = max_partial_sums(st);
        double lvl = superlevel_measure(mps, c.C2 * m);
        add("partial_sum_level_set", lvl > c.C3, {{"fraction", lvl}, {"threshold", c.C2 * m}, {"required", c.C3}},
            true);

        if (m <= c.oracle_m_max && st.config.p0 <= c.oracle_p0_max) {
            const int p0 = st.config.p0;
            auto part = verify_partition(p0, m);
            add("partition", part.pass, part);
            auto ne = norm_expansion_oracle(st, p0, false, default_stratum_budget, c.tol(1e-6));
            add("norm_expansion", ne.pass, ne);
            std::uint64_t mismatches = 0, strata = 0;
            for (int h = 1; h <= m; ++h)
                for (int p = 1; p <= p0; ++p)
                    for (int q = 1; q <= p0; ++q) {
                        auto rs = verify_ray_support(st, p, q, h);
                        mismatches += rs.mismatches;
                        strata += rs.strata;
                    }
            add("ray_support", mismatches == 0, {{"strata", strata}, {"mismatches", mismatches}});
            double worst = 0.0;
            std::vector<double> sums;
            for (int l = 0; l < m; ++l) {
                sums.push_back(unit_sum_check(st, l));
                worst = std::max(worst, std::abs(sums.back() - 1.0));
            }
            add("unit_sums", worst <= st.boundary_fraction() + 1e-12, {{"sums", sums}, {"worst_deviation", worst}});
            auto rec = verify_recursion(st, p0, c.tol(1e-6));
            add("recursion_tail_identity", rec.worst_exact <= 1e-9, {{"worst", rec.worst_exact}});
            add("recursion_ray_sums", rec.worst_approx <= c.tol(1e-6), rec, true);
        }
    } catch (const ConfigError& e) {
        rep["error"] = e.what();
        out.exit_code = 2;
        return out;
    } catch (const DomainError& e) {
        rep["error"] = e.what();
        out.exit_code = 2;
        return out;
    } catch (const GenericityError& e) {
        rep["error"] = e.what();
        out.exit_code = 2;
        return out;
    } catch (const ResourceError& e) {
        rep["error"] = e.what();
        out.exit_code = 3;
        return out;
    } catch (const nlohmann::json::exception& e) {
        rep["error"] = std::string("manifest: ") + e.what();
        out.exit_code = 2;
        return out;
    }
    bool pass = true;
    std::vector<std::string> failed;
    for (const auto& ch : checks)
        if (!ch.pass && !ch.advisory) {
            pass = false;
            failed.push_back(ch.name);
        }
    rep["checks"] = checks_to_json(checks);
    rep["pass"] = pass;
    rep["failed"] = failed;
    out.exit_code = pass ? 0 : 1;
    return out;
}

struct SweepRecord {
    int m = 0;
    std::size_t directions = 0;
    int n = 2;
    std::size_t G = 0;
    std::vector<double> p;
    std::vector<double> norm_f;
    std::vector<double> norm_tu;
    std::vector<double> ratio;
    double levelset_fraction = 0.0;
    double ftilde_fraction = 0.0;
    bool chain_consistent = true;
    double seconds = 0.0;
    bool skipped = false;
    std::string skip_reason;
};

struct SweepResult {
    std::vector<SweepRecord> records;
    std::vector<double> slopes;              // per p
    std::vector<std::string> slope_flags;    // per p
};

inline SweepRecord sweep_one(const ExperimentConfig& c, int m) {
    SweepRecord r;
    r.m = m;
    r.n = c.n;
    r.directions = std::size_t{1} << m;
    r.p = c.p_list;
    auto t0 = std::chrono::steady_clock::now();
    try {
        auto chain = experiment_chain(c, m);
        auto st = experiment_state(c, m, chain);
        r.G = st.grid.G;
        auto f = st.f_sum();
        auto tu = maximal_transform(f, chain.ordering);
        auto mps = max_partial_sums(st);
        r.levelset_fraction = superlevel_measure(mps, c.C2 * m);
        r.ftilde_fraction = superlevel_measure(ftilde_abs_sum(st), c.ftilde_level * m);
        for (double p : c.p_list) {
            double nf = lp_norm(f, p);
            double nt = lp_norm(tu, p);
            r.norm_f.push_back(nf);
            r.norm_tu.push_back(nt);
            r.ratio.push_back(nt / nf);
            if (r.levelset_fraction > c.C3 && nt < c.C2 * std::pow(c.C3, 1.0 / p) * m - 1e-9)
                r.chain_consistent = false;
        }
    } catch (const ResourceError& e) {
        r.skipped = true;
        r.skip_reason = e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

inline double least_squares_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

inline void compute_slopes(SweepResult& res, const std::vector<double>& p_list) {
    res.slopes.clear();
    res.slope_flags.clear();
    for (std::size_t k = 0; k < p_list.size(); ++k) {
        std::vector<double> x, y;
        for (const auto& r : res.records)
            if (!r.skipped) {
                x.push_back(std::log(static_cast<double>(r.m)));
                y.push_back(std::log(r.ratio[k]));
            }
        if (x.size() < 2) {
            res.slopes.push_back(NAN);
            res.slope_flags.push_back("insufficient");
            continue;
        }
        double s = least_squares_slope(x, y);
        res.slopes.push_back(s);
        res.slope_flags.push_back(s >= 0.3 && s <= 0.7 ? "in_range" : "out_of_range");
    }
}

inline SweepResult run_sweep(const ExperimentConfig& c) {
    if (c.m < 1 || c.m_max < c.m) throw ConfigError("sweep needs 1 <= m <= m_max");
    SweepResult res;
    for (int m = c.m; m <= c.m_max; ++m) res.records.push_back(sweep_one(c, m));
    compute_slopes(res, c.p_list);
    return res;
}

inline std::string format_number(double x) {
    if (std::isnan(x)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

struct EmittedReport {
    std::string summary;
    std::string csv;
    nlohmann::json json;
};

// CSV columns: m,#U,n,G,p,norm_f,levelset_fraction,ratio,slope_flag,seconds
inline EmittedReport emit_report(const SweepResult& res, const ExperimentConfig& c) {
    if (res.records.empty()) throw DomainError("emit_report needs at least one record");
    EmittedReport out;
    std::ostringstream csv, sum;
    csv << "m,#U,n,G,p,norm_f,levelset_fraction,ratio,slope_flag,seconds\n";
    for (const auto& r : res.records) {
        for (std::size_t k = 0; k < c.p_list.size(); ++k) {
            csv << r.m << ',' << r.directions << ',' << r.n << ',';
            if (r.skipped) {
                csv << ',' << format_number(c.p_list[k]) << ",,,,skipped: resource guard,";
            } else {
                csv << r.G << ',' << format_number(c.p_list[k]) << ',' << format_number(r.norm_f[k]) << ','
                    << format_number(r.levelset_fraction) << ',' << format_number(r.ratio[k]) << ','
                    << res.slope_flags[k] << ',';
            }
            if (c.timing) csv << format_number(r.seconds);
            csv << '\n';
        }
    }
    out.csv = csv.str();

    sum << "sweep n=" << c.n << " m=" << c.m << ".." << c.m_max << " seed=" << c.seed
        << " directions=" << (c.directions_file.empty() ? "generated:" + c.direction_kind : c.directions_file) << '\n';
    sum << "constants C2=" << format_number(c.C2) << " C3=" << format_number(c.C3) << '\n';
    for (const auto& r : res.records) {
        sum << "  m=" << r.m << " #U=" << r.directions;
        if (r.skipped) {
            sum << " skipped (" << r.skip_reason << ")\n";
            continue;
        }
        sum << " G=" << r.G << " levelset(m/20)=" << format_number(r.levelset_fraction)
            << (r.levelset_fraction > c.C3 ? " > " : " <= ") << format_number(c.C3);
        for (std::size_t k = 0; k < c.p_list.size(); ++k)
            sum << " | p=" << format_number(c.p_list[k]) << " |f|/sqrt(m)=" << format_number(r.norm_f[k] / std::sqrt(r.m))
                << " R=" << format_number(r.ratio[k]);
        sum << '\n';
    }
    for (std::size_t k = 0; k < c.p_list.size(); ++k)
        sum << "slope log R vs log m (p=" << format_number(c.p_list[k]) << "): " << format_number(res.slopes[k]) << " ["
            << res.slope_flags[k] << ", predicted 0.5]\n";
    out.summary = sum.str();

    auto& j = out.json;
    j["config"] = config_json(c);
    j["records"] = nlohmann::json::array();
    for (const auto& r : res.records) {
        nlohmann::json x = {{"m", r.m}, {"directions", r.directions}, {"n", r.n}, {"skipped", r.skipped}};
        if (r.skipped) {
            x["skip_reason"] = r.skip_reason;
        } else {
            x["G"] = r.G;
            x["p"] = r.p;
            x["norm_f"] = r.norm_f;
            x["norm_TU_f"] = r.norm_tu;
            x["ratio"] = r.ratio;
            x["levelset_fraction"] = r.levelset_fraction;
            x["ftilde_fraction"] = r.ftilde_fraction;
            x["lower_bound_chain_consistent"] = r.chain_consistent;
        }
        if (c.timing) x["seconds"] = r.seconds;
        j["records"].push_back(x);
    }
    j["slopes"] = nlohmann::json::array();
    for (std::size_t k = 0; k < c.p_list.size(); ++k)
        j["slopes"].push_back({{"p", c.p_list[k]},
                               {"slope", std::isnan(res.slopes[k]) ? nlohmann::json(nullptr) : nlohmann::json(res.slopes[k])},
                               {"flag", res.slope_flags[k]}});
    return out;
}

} // namespace hlab
