#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "fimlab/config.hpp"
#include "fimlab/errors.hpp"
#include "fimlab/montecarlo.hpp"
#include "fimlab/spectrum.hpp"
#include "fimlab/variance.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fimlab;

namespace {

constexpr const char* kVersion = "0.1.0";

EstimatorId estimator_from_string(const std::string& s) {
    if (s == "1") return EstimatorId::One;
    if (s == "2") return EstimatorId::Two;
    if (s == "combined") return EstimatorId::Combined;
    throw ValidationError("invalid_estimator", "estimator must be 1, 2, or combined");
}

void check_finite(const Eigen::MatrixXd& m, const std::string& what) {
    if (!m.allFinite())
        throw NumericalError("non-finite value encountered in " + what);
}

void check_finite(double v, const std::string& what) {
    if (!std::isfinite(v))
        throw NumericalError("non-finite value encountered in " + what);
}

json read_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("io_error", "cannot read " + path);
    try {
        return json::parse(f);
    } catch (const json::parse_error& e) {
        throw ValidationError("invalid_json", std::string("config parse error: ") + e.what());
    }
}

// Inputs shared by the network-based commands, resolved from flags or a
// manifest into a self-contained JSON blob.
struct Resolved {
    NetworkConfig net;
    std::vector<int> subset;
    EstimatorId estimator = EstimatorId::One;
    double alpha = 0.5;
    int samples = 100;
    int trials = 1000;
    std::vector<int> samples_list;
    std::vector<double> eps_list;
    int threads = 1;
    std::string format = "csv";
    json raw;  // the resolved config as stored in the manifest

    explicit Resolved(NetworkConfig n) : net(std::move(n)) {}
};

Resolved resolve_network_command(const json& cfg) {
    Resolved r(network_from_json(cfg.at("network")));
    r.subset = cfg.value("subset", std::vector<int>{});
    if (r.subset.empty()) r.subset = full_subset(r.net.params);
    validate_subset(r.net.params, r.subset);
    r.estimator = estimator_from_string(cfg.value("estimator", std::string("1")));
    r.alpha = cfg.value("alpha", 0.5);
    r.samples = cfg.value("samples", 100);
    r.trials = cfg.value("trials", 1000);
    r.samples_list = cfg.value("samples_list", std::vector<int>{});
    r.eps_list = cfg.value("eps_list", std::vector<double>{});
    r.threads = cfg.value("threads", 1);
    r.format = cfg.value("format", std::string("csv"));
    r.raw = cfg;
    return r;
}

MCConfig make_mc_config(const Resolved& r) {
    MCConfig mc{r.net.spec, r.net.params, r.net.x};
    mc.estimator = r.estimator;
    mc.alpha = r.alpha;
    mc.N = r.samples;
    mc.R = r.trials;
    mc.seed = r.net.seed;
    mc.subset = r.subset;
    mc.eps_list = r.eps_list;
    mc.threads = r.threads;
    return mc;
}

struct OutputWriter {
    fs::path dir;
    std::vector<std::string> names;

    void write(const std::string& name, const std::string& content) {
        fs::create_directories(dir);
        atomic_write((dir / name).string(), content);
        names.push_back(name);
    }
    void write_json(const std::string& name, const json& j) {
        write(name, j.dump(2) + "\n");
    }
};

void write_manifest(OutputWriter& out, const std::string& command,
                    const json& resolved, std::uint64_t seed, double seconds) {
    json m;
    m["tool"] = "fimlab";
    m["version"] = kVersion;
    m["command"] = command;
    m["config"] = resolved;
    m["master_seed"] = seed;
    m["outputs"] = out.names;
    m["wall_clock_seconds"] = seconds;
    fs::create_directories(out.dir);
    atomic_write((out.dir / "manifest.json").string(), m.dump(2) + "\n");
}

// ---------------------------------------------------------------- commands

std::vector<std::string> run_family_table(const json& cfg, const fs::path& out_dir) {
    OutputWriter out{out_dir};
    const std::string fname = cfg.at("family").get<std::string>();
    const FamilyModel family = FamilyModel::from_name(fname, 1);
    if (!family.factorized())
        throw ValidationError("invalid_config",
                              "family-table covers the univariate factorized "
                              "families (bernoulli, normal, poisson)");
    const std::vector<double> grid = cfg.at("grid_points").get<std::vector<double>>();
    const std::string format = cfg.value("format", std::string("csv"));

    std::string csv = csv_row(
        {"mean_param", "h", "F", "d2F", "d4F", "K", "K_minus_Var2", "status"});
    json rows = json::array();
    for (double p : grid) {
        json jr;
        jr["mean_param"] = p;
        Eigen::VectorXd mp(1);
        mp << p;
        try {
            const Eigen::VectorXd h = natural_from_mean(family, mp);
            const double F = log_partition(family, h);
            const MomentSet mo = moments(family, h);
            const double d2 = mo.fim_head(0, 0);
            const double d4 = mo.cum4(0, 0, 0, 0);
            const double K = mo.cmom4(0, 0, 0, 0);
            const double kmv = K - d2 * d2;
            check_finite(F, "family table");
            csv += csv_row({format_f64(p), format_f64(h[0]), format_f64(F),
                            format_f64(d2), format_f64(d4), format_f64(K),
                            format_f64(kmv), "ok"});
            jr["h"] = h[0];
            jr["F"] = F;
            jr["d2F"] = d2;
            jr["d4F"] = d4;
            jr["K"] = K;
            jr["K_minus_Var2"] = kmv;
            jr["status"] = "ok";
        } catch (const ValidationError&) {
            csv += csv_row({format_f64(p), "", "", "", "", "", "",
                            "skipped_out_of_range"});
            jr["status"] = "skipped_out_of_range";
        }
        rows.push_back(std::move(jr));
    }
    if (format == "json")
        out.write_json("family_table.json", rows);
    else
        out.write("family_table.csv", csv);
    return out.names;
}

std::vector<std::string> run_exact(const json& cfg, const fs::path& out_dir) {
    OutputWriter out{out_dir};
    const Resolved r = resolve_network_command(cfg);
    const FimMatrix fim = exact_fim(r.net.spec, r.net.params, r.net.x, r.subset);
    check_finite(fim.values, "exact FIM");
    if (r.format == "json")
        out.write_json("exact.json", matrix_json(fim.values));
    else
        out.write("exact.csv", matrix_csv(fim.values));
    return out.names;
}

std::vector<std::string> run_estimate(const json& cfg, const fs::path& out_dir) {
    OutputWriter out{out_dir};
    const Resolved r = resolve_network_command(cfg);
    const Eigen::VectorXd h =
        forward(r.net.spec, r.net.params, r.net.x).h.back();
    const SampleBatch batch = draw_batch(r.net.spec.family, h, r.samples,
                                         RngStream(r.net.seed).child(0), r.net.seed);
    FimMatrix est;
    switch (r.estimator) {
        case EstimatorId::One:
            est = estimate_fim1(r.net.spec, r.net.params, r.net.x, batch, r.subset);
            break;
        case EstimatorId::Two:
            est = estimate_fim2(r.net.spec, r.net.params, r.net.x, batch, r.subset);
            break;
        case EstimatorId::Combined:
            est = estimate_fim_combined(r.alpha, r.net.spec, r.net.params, r.net.x,
                                        batch, r.subset);
            break;
    }
    check_finite(est.values, "estimate");
    if (r.format == "json")
        out.write_json("estimate.json", matrix_json(est.values));
    else
        out.write("estimate.csv", matrix_csv(est.values));

    const FimMatrix exact = exact_fim(r.net.spec, r.net.params, r.net.x, r.subset);
    json summary;
    summary["estimator"] = cfg.value("estimator", std::string("1"));
    summary["alpha"] = r.alpha;
    summary["samples"] = r.samples;
    summary["seed"] = r.net.seed;
    summary["frobenius_error_vs_exact"] = (est.values - exact.values).norm();
    out.write_json("estimate_summary.json", summary);
    return out.names;
}

std::vector<std::string> run_variance(const json& cfg, const fs::path& out_dir) {
    OutputWriter out{out_dir};
    const Resolved r = resolve_network_command(cfg);
    const ForwardTrace tr = forward(r.net.spec, r.net.params, r.net.x);
    const MomentSet mo = moments(r.net.spec.family, tr.h.back());
    const Eigen::MatrixXd jac = jacobian_hL(r.net.spec, r.net.params, r.net.x, r.subset);
    std::vector<Eigen::MatrixXd> hess;
    if (r.estimator != EstimatorId::One)
        hess = hessian_hL(r.net.spec, r.net.params, r.net.x, r.subset);

    CovTensor cov;
    switch (r.estimator) {
        case EstimatorId::One:
            cov = cov_estimator1(jac, mo, r.samples);
            break;
        case EstimatorId::Two:
            cov = cov_estimator2(hess, mo, r.samples);
            break;
        case EstimatorId::Combined:
            cov = cov_combined(r.alpha, jac, hess, mo, r.samples);
            break;
    }
    cov.subset = r.subset;
    for (double v : cov.values.data()) check_finite(v, "covariance tensor");

    write_cov_csv(cov, (out.dir / "cov.csv").string());
    out.names.push_back("cov.csv");
    write_cov_binary(cov, (out.dir / "cov.bin").string());
    out.names.push_back("cov.bin");

    const VarMatrix var = var_matrix(cov);
    if (r.format == "json")
        out.write_json("var.json", matrix_json(var.values));
    else
        out.write("var.csv", matrix_csv(var.values));

    json summary;
    summary["estimator"] = estimator_name(cov.estimator);
    summary["alpha"] = cov.alpha;
    summary["samples"] = cov.N;
    summary["frobenius_norm"] = cov.values.frobenius();
    summary["offdiag_symmetrized"] = cov.offdiag_symmetrized;
    if (cov.estimator == EstimatorId::Combined)
        summary["offdiag_note"] =
            "cross term symmetrized over the (ij)<->(kl) exchange";
    out.write_json("variance_summary.json", summary);
    return out.names;
}

std::vector<std::string> run_bounds(const json& cfg, const fs::path& out_dir) {
    OutputWriter out{out_dir};
    const Resolved r = resolve_network_command(cfg);
    const ForwardTrace tr = forward(r.net.spec, r.net.params, r.net.x);
    const MomentSet mo = moments(r.net.spec.family, tr.h.back());
    const Eigen::MatrixXd jac = jacobian_hL(r.net.spec, r.net.params, r.net.x, r.subset);
    const std::vector<Eigen::MatrixXd> hess =
        hessian_hL(r.net.spec, r.net.params, r.net.x, r.subset);

    std::string csv = csv_row({"kind", "i", "j", "k", "l", "lhs", "rhs", "slack"});
    const auto add_global = [&](const BoundReport& b) {
        check_finite(b.lhs, "bound lhs");
        check_finite(b.rhs, "bound rhs");
        csv += csv_row({bound_kind_name(b.kind), "", "", "", "", format_f64(b.lhs),
                        format_f64(b.rhs), format_f64(b.slack())});
    };
    add_global(bound_frobenius(EstimatorId::One, jac, hess, mo, r.samples));
    add_global(bound_frobenius(EstimatorId::Two, jac, hess, mo, r.samples));
    add_global(bound_linf(EstimatorId::One, jac, hess, mo, r.samples));
    add_global(bound_linf(EstimatorId::Two, jac, hess, mo, r.samples));
    const auto [bk, bi] = bound_moments(mo);
    add_global(bk);
    add_global(bi);
    const int ps = static_cast<int>(r.subset.size());
    for (int i = 0; i < ps; ++i)
        for (int j = i; j < ps; ++j)
            for (EstimatorId which : {EstimatorId::One, EstimatorId::Two}) {
                const BoundReport b =
                    bound_elementwise(which, i, j, i, j, jac, hess, mo, r.samples);
                csv += csv_row({bound_kind_name(b.kind), std::to_string(i),
                                std::to_string(j), std::to_string(i),
                                std::to_string(j), format_f64(b.lhs),
                                format_f64(b.rhs), format_f64(b.slack())});
            }
    out.write("bounds.csv", csv);
    return out.names;
}

std::vector<std::string> run_spectrum(const json& cfg, const fs::path& out_dir) {
    OutputWriter out{out_dir};
    Resolved r = resolve_network_command(cfg);
    if (!cfg.contains("estimator")) r.estimator = EstimatorId::Two;

    MCConfig mc = make_mc_config(r);
    mc.want_spectrum = true;
    const TrialSummary summary = run_trials(mc);
    write_trials_csv(summary, (out.dir / "spectrum_trials.csv").string());
    out.names.push_back("spectrum_trials.csv");

    const std::optional<double> psd_bound = psd_probability_bound(
        r.net.spec, r.net.params, r.net.x, r.samples, r.subset);

    int violations = 0;
    for (std::size_t i = 0; i < summary.min_eig_bounds.size(); ++i)
        if (summary.lambda_mins[i] < summary.min_eig_bounds[i] - 1e-10) ++violations;

    const FimMatrix exact = exact_fim(r.net.spec, r.net.params, r.net.x, r.subset);
    const std::vector<Eigen::MatrixXd> hess =
        hessian_hL(r.net.spec, r.net.params, r.net.x, r.subset);
    const SpectrumReport rep = spectrum_report(exact.values, &hess);

    json j;
    if (psd_bound)
        j["psd_probability_bound"] = *psd_bound;
    else
        j["psd_probability_bound"] = "uninformative";
    j["psd_frequency"] = summary.psd_frequency;
    j["min_eig_bound_violations"] = violations;
    j["trials"] = summary.R;
    j["samples"] = summary.N;
    j["exact_fim_spectrum"] = {
        {"lambda_min", rep.lambda_min},
        {"lambda_max", rep.lambda_max},
        {"is_psd", rep.is_psd},
        {"rho_per_output", std::vector<double>(rep.rho_per_output.data(),
                                               rep.rho_per_output.data() +
                                                   rep.rho_per_output.size())}};
    out.write_json("spectrum.json", j);
    return out.names;
}

std::vector<std::string> run_convergence(const json& cfg, const fs::path& out_dir) {
    OutputWriter out{out_dir};
    const Resolved r = resolve_network_command(cfg);
    if (r.samples_list.empty())
        throw ValidationError("invalid_config", "convergence needs samples_list");
    const SlopeFit fit = convergence_sweep(make_mc_config(r), r.samples_list);

    std::string csv = csv_row({"samples", "mean_frobenius_error", "trials"});
    for (std::size_t i = 0; i < r.samples_list.size(); ++i)
        csv += csv_row({std::to_string(r.samples_list[i]),
                        format_f64(fit.mean_errors[i]), std::to_string(r.trials)});
    out.write("convergence.csv", csv);

    json j;
    j["defined"] = fit.defined;
    if (fit.defined) {
        j["slope"] = fit.slope;
        j["stderr"] = fit.stderr_slope;
    } else {
        j["slope"] = "undefined";
    }
    out.write_json("convergence_fit.json", j);
    return out.names;
}

std::vector<std::string> run_ratios(const json& cfg, const fs::path& out_dir) {
    OutputWriter out{out_dir};
    const Resolved r = resolve_network_command(cfg);
    const RatioHistograms rh = ratio_histograms(make_mc_config(r));

    std::string csv = csv_row({"estimator", "entry", "ratio"});
    for (const auto& [key, ratios] : rh.empirical_entry_ratios)
        for (std::size_t e = 0; e < ratios.size(); ++e)
            csv += csv_row({key, std::to_string(e), format_f64(ratios[e])});
    out.write("ratios.csv", csv);

    std::string hist = csv_row({"estimator", "bin_lo", "bin_hi", "count"});
    for (const auto& [key, bins] : rh.histograms)
        for (const auto& b : bins)
            hist += csv_row({key, format_f64(b.lo), format_f64(b.hi),
                             std::to_string(b.count)});
    out.write("ratio_histograms.csv", hist);

    json j;
    j["medians"] = rh.medians;
    j["closed_form_ratios"] = rh.closed_form_ratios;
    out.write_json("ratios_summary.json", j);
    return out.names;
}

using CommandFn = std::vector<std::string> (*)(const json&, const fs::path&);

CommandFn command_fn(const std::string& name) {
    if (name == "family-table") return &run_family_table;
    if (name == "exact") return &run_exact;
    if (name == "estimate") return &run_estimate;
    if (name == "variance") return &run_variance;
    if (name == "bounds") return &run_bounds;
    if (name == "spectrum") return &run_spectrum;
    if (name == "convergence") return &run_convergence;
    if (name == "ratios") return &run_ratios;
    throw ValidationError("unknown_command", "unknown command in manifest: " + name);
}

void execute(const std::string& command, const json& resolved,
             const fs::path& out_dir) {
    const auto start = std::chrono::steady_clock::now();
    OutputWriter out{out_dir};
    out.names = command_fn(command)(resolved, out_dir);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    const std::uint64_t seed =
        resolved.contains("network")
            ? resolved.at("network").value("seed", static_cast<std::uint64_t>(0))
            : resolved.value("seed", static_cast<std::uint64_t>(0));
    write_manifest(out, command, resolved, seed, seconds);
}

int resolve_threads(int flag_value) {
    if (const char* env = std::getenv("FIMLAB_THREADS")) {
        try {
            return std::max(1, std::stoi(env));
        } catch (...) {
            throw ValidationError("invalid_config", "FIMLAB_THREADS must be an integer");
        }
    }
    return std::max(1, flag_value);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fisher information estimators for exponential-family networks"};
    app.require_subcommand(1);

    std::string config_path, out_dir = ".", estimator = "1", subset_text,
                format = "csv", family_name, grid_text, samples_list_text,
                manifest_path;
    std::uint64_t seed = 0;
    bool seed_given = false;
    double alpha = 0.5;
    int samples = 100, trials = 1000, threads = 1;
    std::vector<double> eps_list;

    const auto add_common = [&](CLI::App* cmd, bool needs_config) {
        auto* copt = cmd->add_option("--config", config_path, "network config JSON");
        if (needs_config) copt->required();
        cmd->add_option("--seed", seed, "master seed (overrides config)")
            ->each([&](const std::string&) { seed_given = true; });
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--estimator", estimator, "1, 2, or combined");
        cmd->add_option("--alpha", alpha, "combined-estimator weight in [0,1]");
        cmd->add_option("--subset", subset_text,
                        "parameter subset: layerK, a-b ranges, indices, or all");
        cmd->add_option("--trials", trials, "number of Monte Carlo trials R");
        cmd->add_option("--samples", samples, "samples per estimator N");
        cmd->add_option("--format", format, "csv or json")
            ->check(CLI::IsMember({"csv", "json"}));
        cmd->add_option("--threads", threads, "worker threads");
        cmd->add_option("--eps", eps_list, "epsilon list for coverage radii");
    };

    auto* c_table = app.add_subcommand("family-table",
                                       "cumulant table over a mean-parameter grid");
    c_table->add_option("--family", family_name, "bernoulli, normal, or poisson")
        ->required();
    c_table->add_option("--grid", grid_text, "lo:hi:count or comma list")->required();
    c_table->add_option("--out", out_dir, "output directory");
    c_table->add_option("--format", format, "csv or json")
        ->check(CLI::IsMember({"csv", "json"}));

    add_common(app.add_subcommand("exact", "exact FIM by pullback"), true);
    add_common(app.add_subcommand("estimate", "sample-based FIM estimate"), true);
    add_common(app.add_subcommand("variance", "closed-form covariance tensor"), true);
    add_common(app.add_subcommand("bounds", "covariance norm bounds"), true);
    add_common(app.add_subcommand("spectrum", "p.s.d. guarantees and spectra"), true);
    auto* c_conv = app.add_subcommand("convergence", "error vs sample count sweep");
    add_common(c_conv, true);
    c_conv->add_option("--samples-list", samples_list_text, "comma list of N values")
        ->required();
    add_common(app.add_subcommand("ratios", "variance-to-bound ratio histograms"),
               true);
    auto* c_rerun = app.add_subcommand("rerun", "re-run a command from its manifest");
    c_rerun->add_option("--manifest", manifest_path, "manifest JSON")->required();
    c_rerun->add_option("--out", out_dir, "output directory");
    c_rerun->add_option("--threads", threads, "worker threads");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        const std::string cmd = app.get_subcommands().front()->get_name();
        if (cmd == "rerun") {
            const json manifest = read_json_file(manifest_path);
            json resolved = manifest.at("config");
            resolved["threads"] = resolve_threads(threads);
            execute(manifest.at("command").get<std::string>(), resolved, out_dir);
            return 0;
        }

        json resolved;
        if (cmd == "family-table") {
            resolved["family"] = family_name;
            std::vector<double> grid;
            if (grid_text.find(':') != std::string::npos) {
                double lo, hi;
                int count;
                if (std::sscanf(grid_text.c_str(), "%lf:%lf:%d", &lo, &hi, &count) != 3 ||
                    count < 1)
                    throw ValidationError("invalid_config", "grid must be lo:hi:count");
                for (int i = 0; i < count; ++i)
                    grid.push_back(count == 1 ? lo
                                              : lo + (hi - lo) * i / (count - 1));
            } else {
                std::size_t pos = 0;
                while (pos < grid_text.size()) {
                    std::size_t comma = grid_text.find(',', pos);
                    if (comma == std::string::npos) comma = grid_text.size();
                    grid.push_back(std::stod(grid_text.substr(pos, comma - pos)));
                    pos = comma + 1;
                }
            }
            resolved["grid_points"] = grid;
            resolved["format"] = format;
            execute(cmd, resolved, out_dir);
            return 0;
        }

        json net_json = read_json_file(config_path);
        if (seed_given) net_json["seed"] = seed;
        // Resolve weights and x now so the manifest reproduces them bit-exactly.
        const NetworkConfig net = network_from_json(net_json);
        resolved["network"] = network_to_json(net);
        resolved["estimator"] = estimator;
        resolved["alpha"] = alpha;
        resolved["samples"] = samples;
        resolved["trials"] = trials;
        resolved["format"] = format;
        resolved["threads"] = resolve_threads(threads);
        if (!subset_text.empty())
            resolved["subset"] = parse_subset(subset_text, net.params);
        else if (net_json.contains("subset") && net_json["subset"].is_string())
            resolved["subset"] =
                parse_subset(net_json["subset"].get<std::string>(), net.params);
        if (!eps_list.empty()) resolved["eps_list"] = eps_list;
        if (cmd == "convergence") {
            std::vector<int> ns;
            std::size_t pos = 0;
            while (pos < samples_list_text.size()) {
                std::size_t comma = samples_list_text.find(',', pos);
                if (comma == std::string::npos) comma = samples_list_text.size();
                ns.push_back(std::stoi(samples_list_text.substr(pos, comma - pos)));
                pos = comma + 1;
            }
            resolved["samples_list"] = ns;
        }
        execute(cmd, resolved, out_dir);
        return 0;
    } catch (const ValidationError& e) {
        json err;
        err["error"] = {{"code", e.code()}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return 1;
    } catch (const NumericalError& e) {
        json err;
        err["error"] = {{"code", "non_finite"}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return 2;
    } catch (const std::exception& e) {
        json err;
        err["error"] = {{"code", "internal"}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return 1;
    }
}
