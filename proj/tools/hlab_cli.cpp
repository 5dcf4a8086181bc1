// hlab: build and verify the directional maximal function counterexample.
// Exit codes: 0 pass, 1 verification failure, 2 configuration error, 3 resource guard.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "hlab/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw hlab::ConfigError("cannot write " + p.string());
    out << text;
}

// Report goes to <out>/<name> when --out is given, to stdout otherwise.
void emit(const std::string& out_dir, const std::string& name, const json& j) {
    if (out_dir.empty()) {
        std::cout << j.dump(2) << '\n';
        return;
    }
    fs::create_directories(out_dir);
    write_file(fs::path(out_dir) / name, j.dump(2) + "\n");
}

int run(int argc, char** argv) {
    CLI::App app{"hlab: directional maximal function lower-bound laboratory"};
    app.require_subcommand(1);
    hlab::ExperimentConfig cfg;
    std::string out_dir;

    auto add_out = [&](CLI::App* sub) { sub->add_option("--out", out_dir, "output directory"); };
    auto add_base = [&](CLI::App* sub) {
        sub->add_option("--n", cfg.n, "spatial dimension (2..4)")->check(CLI::Range(2, 4));
        sub->add_option("--m", cfg.m, "tree depth, #U = 2^m")->check(CLI::Range(1, 12));
        sub->add_option("--grid", cfg.grid_start, "initial grid side G (power of two)");
        sub->add_option("--grid-max", cfg.grid_max, "largest grid side tried on escalation");
        sub->add_option("--seed", cfg.seed, "master seed");
        sub->add_option("--directions", cfg.directions_file, "JSON direction file");
        sub->add_option("--direction-kind", cfg.direction_kind, "generated directions: uniform | equispaced")
            ->check(CLI::IsMember({"uniform", "equispaced"}));
        sub->add_option("--p0", cfg.p0, "cube avoidance order")->check(CLI::Range(1, 4));
        sub->add_option("--ell-cap", cfg.ell_cap, "largest mollifier scale");
        sub->add_option("--delta", cfg.delta, "mollifier error target");
        sub->add_option("--max-cells", cfg.max_cells, "memory guard on G^n");
        sub->add_flag("--strict", cfg.strict, "tighten tolerances 10x");
        add_out(sub);
    };

    auto* verify = app.add_subcommand("verify", "build one (n, m) instance and run every verifier");
    add_base(verify);
    verify->add_option("--manifest", cfg.manifest_file, "verify a stored manifest instead of building");
    verify->add_option("--samples", cfg.geometry_samples, "sampled points per sector");

    auto* sweep = app.add_subcommand("sweep", "norm growth sweep over m");
    add_base(sweep);
    sweep->add_option("--m-max", cfg.m_max, "last depth of the sweep")->check(CLI::Range(1, 12));
    sweep->add_option("--p", cfg.p_list, "Lebesgue exponents")->delimiter(',');
    bool no_timing = false;
    sweep->add_flag("--no-timing", no_timing, "omit wall times so the CSV is byte-reproducible");

    auto* geometry = app.add_subcommand("geometry", "order directions and check the sector pattern");
    add_base(geometry);
    geometry->add_option("--samples", cfg.geometry_samples, "sampled points per sector");

    auto* oracle = app.add_subcommand("oracle", "exhaustive stratum checks at small m");
    add_base(oracle);
    bool ledger = false;
    oracle->add_flag("--ledger", ledger, "include per-stratum contributions");

    auto* manifest = app.add_subcommand("export-manifest", "build and write the construction manifest");
    add_base(manifest);
    bool masks = false;
    manifest->add_flag("--masks", masks, "also write the binary mask file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    cfg.timing = !no_timing;

    try {
        if (*verify) {
            auto outcome = hlab::run_verify(cfg);
            emit(out_dir, "verify.json", outcome.report);
            if (outcome.exit_code == 1) {
                std::cerr << "verification failed:";
                for (const auto& f : outcome.report["failed"]) std::cerr << ' ' << f.get<std::string>();
                std::cerr << '\n';
            } else if (outcome.exit_code != 0) {
                std::cerr << "error: " << outcome.report["error"].get<std::string>() << '\n';
            }
            return outcome.exit_code;
        }
        if (*sweep) {
            auto res = hlab::run_sweep(cfg);
            auto rep = hlab::emit_report(res, cfg);
            std::cout << rep.summary;
            if (!out_dir.empty()) {
                fs::create_directories(out_dir);
                write_file(fs::path(out_dir) / "sweep.csv", rep.csv);
                write_file(fs::path(out_dir) / "sweep.json", rep.json.dump(2) + "\n");
            } else {
                std::cout << rep.csv;
            }
            bool ok = true;
            for (const auto& r : res.records) ok = ok && !r.skipped && r.chain_consistent;
            bool all_skipped = true;
            for (const auto& r : res.records) all_skipped = all_skipped && r.skipped;
            if (all_skipped) return 3;
            return ok ? 0 : 1;
        }
        if (*geometry) {
            auto chain = hlab::experiment_chain(cfg, cfg.m);
            auto rep = hlab::verify_sector_pattern(chain, cfg.geometry_samples, hlab::derive_seed(cfg.seed, 4));
            json j;
            j["config"] = hlab::config_json(cfg);
            j["chain"] = hlab::chain_to_json(chain);
            j["report"] = rep;
            emit(out_dir, "geometry.json", j);
            return rep.pass ? 0 : 1;
        }
        if (*oracle) {
            if (cfg.m > cfg.oracle_m_max || cfg.p0 > cfg.oracle_p0_max)
                throw hlab::ConfigError("oracle runs need m <= 3 and p0 <= 2");
            auto chain = hlab::experiment_chain(cfg, cfg.m);
            auto st = hlab::experiment_state(cfg, cfg.m, chain);
            auto part = hlab::verify_partition(cfg.p0, cfg.m);
            auto ne = hlab::norm_expansion_oracle(st, cfg.p0, ledger, hlab::default_stratum_budget, cfg.tol(1e-6));
            auto rec = hlab::verify_recursion(st, cfg.p0, cfg.tol(1e-6));
            json j;
            j["config"] = hlab::config_json(cfg);
            j["G"] = st.grid.G;
            j["partition"] = part;
            j["norm_expansion"] = ne;
            j["recursion"] = rec;
            std::vector<double> sums;
            for (int l = 0; l < cfg.m; ++l) sums.push_back(hlab::unit_sum_check(st, l));
            j["unit_sums"] = sums;
            emit(out_dir, "oracle.json", j);
            return part.pass && ne.pass ? 0 : 1;
        }
        if (*manifest) {
            auto chain = hlab::experiment_chain(cfg, cfg.m);
            auto st = hlab::experiment_state(cfg, cfg.m, chain);
            emit(out_dir, "manifest.json", hlab::manifest_json(st));
            if (masks) {
                if (out_dir.empty()) throw hlab::ConfigError("--masks needs --out");
                hlab::write_masks((fs::path(out_dir) / "masks.bin").string(), st);
            }
            return 0;
        }
    } catch (const hlab::ResourceError& e) {
        std::cerr << "resource guard: " << e.what() << '\n';
        return 3;
    } catch (const hlab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const hlab::DomainError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const hlab::GenericityError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const hlab::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) { return run(argc, argv); }
