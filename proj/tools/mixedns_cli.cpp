// mixedns command-line front end.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mixedns/experiments.hpp"

namespace fs = std::filesystem;
using namespace mixedns;

namespace {

enum ExitCode { kOk = 0, kNumerical = 1, kConfig = 2 };

RunConfig load_config(const std::string& path) {
    if (path.empty()) return RunConfig{};
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config: parse error: ") + e.what());
    }
    return config_from_json(j);
}

// Writes to a temporary file, then renames.
void write_atomic(const fs::path& file, const std::string& text) {
    const fs::path tmp = file.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write " + tmp.string());
        os << text;
        if (!os) throw std::runtime_error("write failed for " + tmp.string());
    }
    fs::rename(tmp, file);
}

int finish(const std::string& name, const fs::path& dir, const RunConfig& cfg, const ExperimentOutput& out) {
    fs::create_directories(dir);
    write_atomic(dir / "config.json", dump_report(to_json(cfg)));
    for (const auto& [file, text] : out.files) write_atomic(dir / file, text);
    write_atomic(dir / (name + "_report.json"), dump_report(out.report));
    std::cout << name << ": " << (out.pass ? "pass" : "FAIL") << " (" << (dir / (name + "_report.json")).string() << ")\n";
    return out.pass ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mixed boundary Navier-Stokes experiments on a 2D channel"};
    app.require_subcommand(1);
    std::string config_path, out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<int> refine_levels;
    app.add_option("--config", config_path, "JSON run configuration (see `defaults`)");
    app.add_option("--out", out_dir, "output directory (default: run_<command>)");
    app.add_option("--seed", seed, "random seed override");
    app.add_option("--refine", refine_levels, "uniform refinement levels override");
    app.fallthrough();

    struct Command {
        const char* name;
        const char* help;
    };
    const Command commands[] = {
        {"mesh", "build the channel mesh and write JSON/VTK"},
        {"eig", "compute the Stokes eigenbasis and its orthogonality report"},
        {"steady", "solve steady Stokes with a constant body force and fit the corner expansion"},
        {"stokes", "spectral Stokes evolution and energy inequalities"},
        {"ns", "Newton solve of the evolution Navier-Stokes problem"},
        {"perturb", "data-perturbation experiment around a small solution"},
        {"corner", "corner pencil roots, determinant grid and singular fit"},
        {"defaults", "print the default configuration"},
    };
    for (const auto& c : commands) app.add_subcommand(c.name, c.help);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }
    const std::string cmd = app.get_subcommands().front()->get_name();

    try {
        RunConfig cfg = load_config(config_path);
        if (seed) cfg.seed = *seed;
        if (refine_levels) cfg.refine = *refine_levels;
        cfg.validate();
        if (cmd == "defaults") {
            std::cout << dump_report(to_json(cfg));
            return kOk;
        }
        const fs::path dir = out_dir.empty() ? fs::path("run_" + cmd) : fs::path(out_dir);
        const auto t0 = std::chrono::steady_clock::now();
        ExperimentOutput out;
        if (cmd == "mesh") out = run_mesh(cfg);
        else if (cmd == "eig") out = run_eig(cfg);
        else if (cmd == "steady") out = run_steady(cfg);
        else if (cmd == "stokes") out = run_stokes(cfg);
        else if (cmd == "ns") out = run_ns(cfg);
        else if (cmd == "perturb") out = run_perturb(cfg);
        else out = run_corner(cfg);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cerr << cmd << " finished in " << secs << " s\n";
        return finish(cmd, dir, cfg, out);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kConfig;
    } catch (const InvalidArgument& e) {
        std::cerr << "error: invalid input: " << e.what() << '\n';
        return kConfig;
    } catch (const NumericalError& e) {
        std::cerr << "error: numerical failure: " << e.what() << '\n';
        return kNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kNumerical;
    }
}
