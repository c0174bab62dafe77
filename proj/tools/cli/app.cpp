#include "cli/app.hpp"

#include <filesystem>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cli/config.hpp"
#include "cli/experiments.hpp"
#include "cli/output.hpp"
#include "qfilt/errors.hpp"

namespace qcli {

namespace {

void print_list(std::ostream& out) {
    for (const auto& e : experiments()) {
        out << schema_template(e.schema) << "\n";
    }
}

int run_experiment(const std::string& name, const std::string& config_path, const std::vector<std::string>& sets,
                   const std::string* seed, int workers, const std::string* out_dir, std::ostream& out,
                   std::ostream& err) {
    const Experiment* exp = find_experiment(name);
    if (!exp) {
        err << "error: unknown experiment '" << name << "' (see 'list')\n";
        return exit_config;
    }
    std::map<std::string, std::string> overrides;
    for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
        auto trim = [](std::string v) {
            v.erase(0, v.find_first_not_of(' '));
            v.erase(v.find_last_not_of(' ') + 1);
            return v;
        };
        overrides[trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
    }
    if (seed) overrides["run.seed"] = *seed;
    if (out_dir) overrides[kOutputKey] = *out_dir;
    if (workers < 1) throw ConfigError("--workers must be at least 1");

    const Config cfg = resolve(exp->schema, parse_config_file(config_path), overrides);
    cfg.seed();
    std::string dir = cfg.text(kOutputKey);
    if (dir.empty()) dir = (std::filesystem::path("out") / name).string();
    RunContext ctx(cfg, dir, workers);
    try {
        exp->run(ctx);
    } catch (const qfilt::NumericFailure& e) {
        const std::string msg = e.step() >= 0 ? e.what() : std::string(e.what()) + " (step index unavailable)";
        ctx.write_manifest("numeric-failure", msg);
        err << "numeric failure: " << msg << "\n";
        return exit_numeric;
    } catch (const qfilt::SingularPropagation& e) {
        ctx.write_manifest("numeric-failure", e.what());
        err << "numeric failure: " << e.what() << "\n";
        return exit_numeric;
    } catch (const qfilt::DegenerateEnsemble& e) {
        ctx.write_manifest("numeric-failure", e.what());
        err << "numeric failure: " << e.what() << "\n";
        return exit_numeric;
    }
    ctx.write_manifest("ok");
    out << "wrote " << (std::filesystem::path(dir) / kManifestName).string() << "\n";
    return exit_ok;
}

int run_ialpha(const std::string& weights, double alpha, const std::string* out_path, std::ostream& out) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("--alpha must lie in (0, 1)");
    const auto rows = ialpha_from_weights(weights, alpha);
    const std::filesystem::path dest =
        out_path ? std::filesystem::path(*out_path) : std::filesystem::path(weights).parent_path() / "ialpha.csv";
    {
        CsvWriter w(dest, {"time", "I_alpha"});
        for (const auto& [t, v] : rows) w.row({t, v});
        w.close();
    }
    out << "wrote " << dest.string() << " (alpha = " << format_number(alpha) << ")\n";
    return exit_ok;
}

}  // namespace

int run_app(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Continuous-measurement filtering experiments"};
    app.require_subcommand(1);
    app.set_version_flag("--version", tool_version());

    CLI::App* list = app.add_subcommand("list", "print every experiment as a config template with defaults");

    CLI::App* run = app.add_subcommand("run", "run an experiment");
    std::string experiment, config_path, seed, out_dir;
    int workers = 1;
    std::vector<std::string> sets;
    run->add_option("experiment", experiment, "experiment name")->required();
    run->add_option("--config", config_path, "config file")->required();
    CLI::Option* seed_opt = run->add_option("--seed", seed, "override run.seed");
    run->add_option("--workers", workers, "worker threads; outputs do not depend on it");
    CLI::Option* out_opt = run->add_option("--out", out_dir, "output directory, overrides run.out");
    run->add_option("--set", sets, "override any key: --set section.key=value");

    CLI::App* ialpha = app.add_subcommand("ialpha", "convergence rate I_alpha from a param-ensemble weights.csv");
    std::string weights, ialpha_out;
    double alpha = 0.95;
    ialpha->add_option("weights", weights, "weights.csv from param-ensemble")->required();
    ialpha->add_option("--alpha", alpha, "weight threshold (default 0.95)");
    CLI::Option* ialpha_out_opt = ialpha->add_option("--out", ialpha_out, "output CSV, default ialpha.csv beside input");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return exit_config;
    }

    try {
        if (*list) {
            print_list(out);
            return exit_ok;
        }
        if (*run)
            return run_experiment(experiment, config_path, sets, *seed_opt ? &seed : nullptr, workers,
                                  *out_opt ? &out_dir : nullptr, out, err);
        if (*ialpha) return run_ialpha(weights, alpha, *ialpha_out_opt ? &ialpha_out : nullptr, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return exit_config;
    } catch (const qfilt::InvalidArgument& e) {
        err << "config error: " << e.what() << "\n";
        return exit_config;
    } catch (const qfilt::UnsupportedConfiguration& e) {
        err << "config error: " << e.what() << "\n";
        return exit_config;
    } catch (const qfilt::ConstructionError& e) {
        err << "config error: " << e.what() << "\n";
        return exit_config;
    } catch (const qfilt::NumericFailure& e) {
        err << "numeric failure: " << e.what() << "\n";
        return exit_numeric;
    }
    return exit_config;
}

}  // namespace qcli
