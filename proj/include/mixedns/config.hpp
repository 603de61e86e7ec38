#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixedns/common.hpp"
#include "mixedns/corner_spectra.hpp"
#include "mixedns/mesh.hpp"
#include "mixedns/navier_stokes.hpp"

namespace mixedns {

/// Invalid or malformed run configuration.
class ConfigError : public Error {
 public:
    using Error::Error;
};

struct TimeConfig {
    double t_end = 1.0;
    int intervals = 64;
    int gauss_points = 4;
};

struct SteadyConfig {
    double force_x = 1.0;  ///< constant body force
    double force_y = 0.0;
    double fit_radius = 0.3;
    int fit_degree = 2;
};

struct StokesConfig {
    std::string forcing = "random";  ///< "random" or "zero"
    double amplitude = 1.0;
    bool dt_halving = false;
};

struct NsConfig {
    std::string preset = "manufactured";  ///< "manufactured" or "forcing"
    double target_norm = 100.0;           ///< X-norm of the manufactured solution
    double amplitude = 1.0;               ///< forcing preset: Stokes X-norm of the data
};

struct PerturbConfig {
    double base_norm = 0.1;
    std::vector<double> scales{1e-3, 1e-2};
    int trials = 10;
    double agreement = 0.2;
};

struct CornerConfig {
    Rect window{};
    int grid_re = 161;
    int grid_im = 43;
    bool fit = true;
};

struct RunConfig {
    ChannelGeometry geometry{};
    int refine = 0;
    int n_modes = 24;
    std::string eigen_method = "auto";
    TimeConfig time{};
    int newton_max_iters = 20;
    double newton_abs_tol = 1e-11;
    double newton_damping = 1.0;
    std::uint64_t seed = 20240521;
    SteadyConfig steady{};
    StokesConfig stokes{};
    NsConfig ns{};
    PerturbConfig perturb{};
    CornerConfig corner{};

    NewtonOptions newton() const {
        NewtonOptions o;
        o.max_iters = newton_max_iters;
        o.abs_tol = newton_abs_tol;
        o.damping = newton_damping;
        return o;
    }

    EigenOptions eigen() const {
        EigenOptions o;
        o.method = eigen_method == "dense" ? EigenMethod::DenseNullspace
                   : eigen_method == "lanczos" ? EigenMethod::ShiftInvertLanczos
                                               : EigenMethod::Auto;
        return o;
    }

    TimeGrid time_grid() const { return TimeGrid::uniform(time.t_end, time.intervals, time.gauss_points); }

    void validate() const {
        auto check = [](bool ok, const std::string& msg) {
            if (!ok) throw ConfigError("config: " + msg);
        };
        check(geometry.length > 0.0 && geometry.height > 0.0, "geometry length and height must be positive");
        check(geometry.nx >= 1 && geometry.ny >= 1 && geometry.nx <= 2048 && geometry.ny <= 2048, "geometry nx, ny must lie in [1, 2048]");
        check(geometry.grading >= 1.0 && geometry.grading <= 10.0, "geometry grading must lie in [1, 10]");
        check(refine >= 0 && refine <= 4, "refine must lie in [0, 4]");
        check(n_modes >= 1 && n_modes <= 400, "n_modes must lie in [1, 400]");
        check(eigen_method == "auto" || eigen_method == "dense" || eigen_method == "lanczos", "eigen_method must be auto, dense or lanczos");
        check(time.t_end > 0.0, "time.T must be positive");
        check(time.intervals >= 1 && time.intervals <= 4096, "time.intervals must lie in [1, 4096]");
        check(time.gauss_points >= 1 && time.gauss_points <= 12, "time.gauss_points must lie in [1, 12]");
        check(newton_max_iters >= 1 && newton_max_iters <= 200, "newton.max_iters must lie in [1, 200]");
        check(newton_abs_tol > 0.0, "newton.abs_tol must be positive");
        check(newton_damping > 0.0 && newton_damping <= 1.0, "newton.damping must lie in (0, 1]");
        check(steady.fit_radius > 0.0, "steady.fit_radius must be positive");
        check(steady.fit_degree >= 2 && steady.fit_degree <= 6, "steady.fit_degree must lie in [2, 6]");
        check(stokes.forcing == "random" || stokes.forcing == "zero", "stokes.forcing must be random or zero");
        check(stokes.amplitude >= 0.0, "stokes.amplitude must be non-negative");
        check(ns.preset == "manufactured" || ns.preset == "forcing", "ns.preset must be manufactured or forcing");
        check(ns.target_norm > 0.0 && ns.amplitude > 0.0, "ns norms must be positive");
        check(perturb.base_norm > 0.0, "perturb.base_norm must be positive");
        check(!perturb.scales.empty(), "perturb.scales must be nonempty");
        for (double s : perturb.scales) check(s > 0.0, "perturb.scales must be positive");
        check(perturb.trials >= 1 && perturb.trials <= 1000, "perturb.trials must lie in [1, 1000]");
        check(perturb.agreement > 0.0, "perturb.agreement must be positive");
        const Rect& w = corner.window;
        check(w.re_lo < w.re_hi && w.im_lo < w.im_hi, "corner window must be a nonempty rectangle");
        check(corner.grid_re >= 2 && corner.grid_im >= 2, "corner grid needs at least 2 x 2 samples");
    }
};

inline nlohmann::json to_json(const RunConfig& c) {
    using nlohmann::json;
    return json{
        {"schema", "mixedns.config/1"},
        {"geometry", {{"length", c.geometry.length}, {"height", c.geometry.height}, {"nx", c.geometry.nx},
                      {"ny", c.geometry.ny}, {"grading", c.geometry.grading}}},
        {"refine", c.refine},
        {"n_modes", c.n_modes},
        {"eigen_method", c.eigen_method},
        {"time", {{"T", c.time.t_end}, {"intervals", c.time.intervals}, {"gauss_points", c.time.gauss_points}}},
        {"newton", {{"max_iters", c.newton_max_iters}, {"abs_tol", c.newton_abs_tol}, {"damping", c.newton_damping}}},
        {"seed", c.seed},
        {"steady", {{"force_x", c.steady.force_x}, {"force_y", c.steady.force_y}, {"fit_radius", c.steady.fit_radius},
                    {"fit_degree", c.steady.fit_degree}}},
        {"stokes", {{"forcing", c.stokes.forcing}, {"amplitude", c.stokes.amplitude}, {"dt_halving", c.stokes.dt_halving}}},
        {"ns", {{"preset", c.ns.preset}, {"target_norm", c.ns.target_norm}, {"amplitude", c.ns.amplitude}}},
        {"perturb", {{"base_norm", c.perturb.base_norm}, {"scales", c.perturb.scales}, {"trials", c.perturb.trials},
                     {"agreement", c.perturb.agreement}}},
        {"corner", {{"re_lo", c.corner.window.re_lo}, {"re_hi", c.corner.window.re_hi}, {"im_lo", c.corner.window.im_lo},
                    {"im_hi", c.corner.window.im_hi}, {"grid_re", c.corner.grid_re}, {"grid_im", c.corner.grid_im},
                    {"fit", c.corner.fit}}},
    };
}

namespace detail {

class ConfigReader {
 public:
    ConfigReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("config: " + where() + " must be an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("config: " + where(key) + " has the wrong type");
        }
    }

    ConfigReader section(const char* key) {
        static const nlohmann::json empty = nlohmann::json::object();
        seen_.insert(key);
        return ConfigReader(j_.contains(key) ? j_.at(key) : empty, where(key));
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) throw ConfigError("config: unknown key " + where(k.c_str()));
    }

 private:
    std::string where(const char* key = nullptr) const {
        std::string p = path_.empty() ? "" : path_;
        if (key) p += (p.empty() ? "" : ".") + std::string(key);
        return p.empty() ? "top level" : p;
    }

    const nlohmann::json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

}  // namespace detail

/// Reads a config; missing keys keep their defaults, unknown keys and
/// out-of-range values throw ConfigError.
inline RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig c;
    detail::ConfigReader top(j, "");
    std::string schema = "mixedns.config/1";
    top.get("schema", schema);
    if (schema != "mixedns.config/1") throw ConfigError("config: unsupported schema " + schema);
    {
        auto g = top.section("geometry");
        g.get("length", c.geometry.length);
        g.get("height", c.geometry.height);
        g.get("nx", c.geometry.nx);
        g.get("ny", c.geometry.ny);
        g.get("grading", c.geometry.grading);
        g.finish();
    }
    top.get("refine", c.refine);
    top.get("n_modes", c.n_modes);
    top.get("eigen_method", c.eigen_method);
    {
        auto t = top.section("time");
        t.get("T", c.time.t_end);
        t.get("intervals", c.time.intervals);
        t.get("gauss_points", c.time.gauss_points);
        t.finish();
    }
    {
        auto n = top.section("newton");
        n.get("max_iters", c.newton_max_iters);
        n.get("abs_tol", c.newton_abs_tol);
        n.get("damping", c.newton_damping);
        n.finish();
    }
    top.get("seed", c.seed);
    {
        auto s = top.section("steady");
        s.get("force_x", c.steady.force_x);
        s.get("force_y", c.steady.force_y);
        s.get("fit_radius", c.steady.fit_radius);
        s.get("fit_degree", c.steady.fit_degree);
        s.finish();
    }
    {
        auto s = top.section("stokes");
        s.get("forcing", c.stokes.forcing);
        s.get("amplitude", c.stokes.amplitude);
        s.get("dt_halving", c.stokes.dt_halving);
        s.finish();
    }
    {
        auto s = top.section("ns");
        s.get("preset", c.ns.preset);
        s.get("target_norm", c.ns.target_norm);
        s.get("amplitude", c.ns.amplitude);
        s.finish();
    }
    {
        auto s = top.section("perturb");
        s.get("base_norm", c.perturb.base_norm);
        s.get("scales", c.perturb.scales);
        s.get("trials", c.perturb.trials);
        s.get("agreement", c.perturb.agreement);
        s.finish();
    }
    {
        auto s = top.section("corner");
        s.get("re_lo", c.corner.window.re_lo);
        s.get("re_hi", c.corner.window.re_hi);
        s.get("im_lo", c.corner.window.im_lo);
        s.get("im_hi", c.corner.window.im_hi);
        s.get("grid_re", c.corner.grid_re);
        s.get("grid_im", c.corner.grid_im);
        s.get("fit", c.corner.fit);
        s.finish();
    }
    top.finish();
    c.validate();
    return c;
}

}  // namespace mixedns
