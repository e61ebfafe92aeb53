#include "eopulse/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <yaml-cpp/yaml.h>

#include "eopulse/errors.hpp"

namespace eopulse::config {

namespace {

using quantum::kTwoPi;

struct ExperimentInfo {
    ExperimentKind kind;
    const char* name;
    const char* description;
};

const ExperimentInfo kExperiments[] = {
    {ExperimentKind::Wavepacket, "Wavepacket", "biphoton amplitude f(t1, t2) on the stored-state grid"},
    {ExperimentKind::SchmidtModes, "SchmidtModes", "temporal Schmidt spectrum, mode functions and entropy"},
    {ExperimentKind::CoincidenceVsTau, "CoincidenceVsTau", "coincidence rate against optical-microwave delay"},
    {ExperimentKind::CountsVsBeta, "CountsVsBeta", "time-bin coincidence counts against beta"},
    {ExperimentKind::ChshSweep, "ChshSweep", "CHSH S against beta for each pump"},
    {ExperimentKind::ChshWithHeating, "ChshWithHeating", "CHSH S with laser-heating noise, per pump width"},
    {ExperimentKind::HeatingCompare, "HeatingCompare", "CW vs pulsed heating curves and equal-average peak powers"},
    {ExperimentKind::HeatingFit, "HeatingFit", "least-squares heating parameters from a temperature trace"},
};

class Reader {
public:
    std::vector<std::string> violations;

    void fail(const std::string& where, const std::string& what) { violations.push_back(where + ": " + what); }

    // Rejects keys outside `allowed`; returns false if the node is not a map.
    bool check_map(const YAML::Node& node, const std::string& where, const std::set<std::string>& allowed)
    {
        if (!node.IsMap()) {
            fail(where, "expected a mapping");
            return false;
        }
        for (const auto& kv : node) {
            const auto key = kv.first.as<std::string>();
            if (!allowed.count(key)) fail(where, "unknown key '" + key + "'");
        }
        return true;
    }

    template <class T>
    std::optional<T> get(const YAML::Node& node, const std::string& key, const std::string& where)
    {
        const YAML::Node value = node[key];
        if (!value) return std::nullopt;
        try {
            return value.as<T>();
        } catch (const YAML::Exception&) {
            fail(where + "." + key, "cannot read value '" + YAML::Dump(value) + "'");
            return std::nullopt;
        }
    }

    // Reads `key` into `out` scaled by `factor` when present.
    void number(const YAML::Node& node, const std::string& key, const std::string& where, double& out, double factor = 1.0)
    {
        if (auto v = get<double>(node, key, where)) {
            if (!std::isfinite(*v)) fail(where + "." + key, "must be finite");
            out = *v * factor;
        }
    }

    void count(const YAML::Node& node, const std::string& key, const std::string& where, std::size_t& out,
               std::size_t minimum)
    {
        if (auto v = get<long long>(node, key, where)) {
            if (*v < static_cast<long long>(minimum))
                fail(where + "." + key, "must be >= " + std::to_string(minimum));
            else
                out = static_cast<std::size_t>(*v);
        }
    }

    std::vector<double> numbers(const YAML::Node& node, const std::string& key, const std::string& where,
                                std::vector<double> fallback)
    {
        const YAML::Node value = node[key];
        if (!value) return fallback;
        if (!value.IsSequence() || value.size() == 0) {
            fail(where + "." + key, "expected a non-empty list of numbers");
            return fallback;
        }
        std::vector<double> out;
        for (std::size_t i = 0; i < value.size(); ++i) {
            try {
                out.push_back(value[i].as<double>());
            } catch (const YAML::Exception&) {
                fail(where + "." + key, "entry " + std::to_string(i) + " is not a number");
            }
        }
        return out;
    }

    template <class F>
    void validate(const std::string& where, F&& check)
    {
        try {
            check();
        } catch (const std::invalid_argument& e) {
            fail(where, e.what());
        }
    }
};

void read_system(Reader& r, const YAML::Node& node, quantum::SystemParams& p)
{
    const std::string where = "system";
    if (!r.check_map(node, where,
                     {"g_em_mhz_over_2pi", "g0_khz_over_2pi", "kappa_o_i_ghz_over_2pi", "kappa_o_c_ghz_over_2pi",
                      "kappa_m_khz_over_2pi", "kappa_e_i_mhz_over_2pi", "kappa_e_c_mhz_over_2pi",
                      "omega_o_thz_over_2pi", "omega_m_ghz_over_2pi", "omega_e_ghz_over_2pi", "n_th_b", "n_th_c"}))
        return;
    r.number(node, "g_em_mhz_over_2pi", where, p.g_em, kTwoPi * 1e6);
    r.number(node, "g0_khz_over_2pi", where, p.g_0, kTwoPi * 1e3);
    r.number(node, "kappa_o_i_ghz_over_2pi", where, p.kappa_o_i, kTwoPi * 1e9);
    r.number(node, "kappa_o_c_ghz_over_2pi", where, p.kappa_o_c, kTwoPi * 1e9);
    r.number(node, "kappa_m_khz_over_2pi", where, p.kappa_m, kTwoPi * 1e3);
    r.number(node, "kappa_e_i_mhz_over_2pi", where, p.kappa_e_i, kTwoPi * 1e6);
    r.number(node, "kappa_e_c_mhz_over_2pi", where, p.kappa_e_c, kTwoPi * 1e6);
    r.number(node, "omega_o_thz_over_2pi", where, p.omega_o, kTwoPi * 1e12);
    r.number(node, "omega_m_ghz_over_2pi", where, p.omega_m, kTwoPi * 1e9);
    r.number(node, "omega_e_ghz_over_2pi", where, p.omega_e, kTwoPi * 1e9);
    double n_b = p.n_th_b.at(0.0);
    double n_c = p.n_th_c.at(0.0);
    r.number(node, "n_th_b", where, n_b);
    r.number(node, "n_th_c", where, n_c);
    p.n_th_b = quantum::OccupancyProfile::constant(n_b);
    p.n_th_c = quantum::OccupancyProfile::constant(n_c);
}

quantum::PumpPulse read_pump(Reader& r, const YAML::Node& node, const std::string& where)
{
    quantum::PumpPulse pulse;
    if (!r.check_map(node, where, {"gain_factor", "intracavity_photons", "t0_ns", "sigma_ns"})) return pulse;
    const bool gain = static_cast<bool>(node["gain_factor"]);
    const bool photons = static_cast<bool>(node["intracavity_photons"]);
    if (gain == photons) r.fail(where, "give exactly one of gain_factor or intracavity_photons");
    if (gain) {
        pulse.mode = quantum::PumpMode::GainFactor;
        r.number(node, "gain_factor", where, pulse.amplitude);
    } else if (photons) {
        pulse.mode = quantum::PumpMode::IntracavityPhoton;
        r.number(node, "intracavity_photons", where, pulse.amplitude);
    }
    if (!node["t0_ns"]) r.fail(where, "missing t0_ns");
    if (!node["sigma_ns"]) r.fail(where, "missing sigma_ns");
    r.number(node, "t0_ns", where, pulse.t0, 1e-9);
    r.number(node, "sigma_ns", where, pulse.sigma, 1e-9);
    r.validate(where, [&] { pulse.validate(); });
    return pulse;
}

void read_detector(Reader& r, const YAML::Node& node, detection::DetectorModel& det, bool& rate_given)
{
    const std::string where = "detector";
    if (!r.check_map(node, where,
                     {"eta_o", "eta_e", "T_o", "T_e", "D_o_hz", "D_e_hz", "t_w_ns", "r_d_hz", "t_c_s",
                      "interferometer_loss"}))
        return;
    r.number(node, "eta_o", where, det.eta_o);
    r.number(node, "eta_e", where, det.eta_e);
    r.number(node, "T_o", where, det.T_o);
    r.number(node, "T_e", where, det.T_e);
    r.number(node, "D_o_hz", where, det.D_o);
    r.number(node, "D_e_hz", where, det.D_e);
    r.number(node, "t_w_ns", where, det.t_w, 1e-9);
    rate_given = static_cast<bool>(node["r_d_hz"]);
    r.number(node, "r_d_hz", where, det.r_D);
    r.number(node, "t_c_s", where, det.t_c);
    if (auto v = r.get<bool>(node, "interferometer_loss", where)) det.interferometer_loss = *v;
}

void read_heating(Reader& r, const YAML::Node& node, ExperimentConfig& cfg)
{
    const std::string where = "heating";
    if (!r.check_map(node, where,
                     {"a_per_us", "b_prime_k_per_us", "d_k_per_us", "T0_k", "eta_k", "gamma", "t_per_us", "profile",
                      "reference_without_heating"}))
        return;
    auto& h = cfg.heating;
    r.number(node, "a_per_us", where, h.a);
    r.number(node, "b_prime_k_per_us", where, h.b_prime);
    r.number(node, "d_k_per_us", where, h.d);
    r.number(node, "T0_k", where, h.T0);
    r.number(node, "eta_k", where, h.eta);
    r.number(node, "gamma", where, h.gamma);
    r.number(node, "t_per_us", where, h.t_per, 1e-6);
    if (auto v = r.get<std::string>(node, "profile", where)) {
        if (*v == "pulse_matched")
            cfg.heating_profile = HeatingProfile::PulseMatched;
        else if (*v == "tabulated")
            cfg.heating_profile = HeatingProfile::Tabulated;
        else
            r.fail(where + ".profile", "expected pulse_matched or tabulated, got '" + *v + "'");
    }
    if (auto v = r.get<bool>(node, "reference_without_heating", where)) cfg.heating_reference = *v;
}

void read_grids(Reader& r, const YAML::Node& node, GridSpec& g)
{
    const std::string where = "grids";
    if (!r.check_map(node, where,
                     {"dt_fraction", "align_ns", "t_end_ns", "t_stride", "axis_stride", "tau_max_ns", "tau_step_ns"}))
        return;
    r.number(node, "dt_fraction", where, g.dt_fraction);
    if (!(g.dt_fraction > 0.0 && g.dt_fraction <= 1.0)) r.fail(where + ".dt_fraction", "must be in (0, 1]");
    r.number(node, "align_ns", where, g.align, 1e-9);
    if (!(g.align > 0.0)) r.fail(where + ".align_ns", "must be > 0");
    if (node["t_end_ns"]) {
        double t_end = 0.0;
        r.number(node, "t_end_ns", where, t_end, 1e-9);
        if (!(t_end > 0.0)) r.fail(where + ".t_end_ns", "must be > 0");
        g.t_end = t_end;
    }
    r.count(node, "t_stride", where, g.t_stride, 1);
    r.count(node, "axis_stride", where, g.axis_stride, 1);
    r.number(node, "tau_max_ns", where, g.tau_max, 1e-9);
    if (!(g.tau_max > 0.0)) r.fail(where + ".tau_max_ns", "must be > 0");
    r.number(node, "tau_step_ns", where, g.tau_step, 1e-9);
    if (g.tau_step < 0.0) r.fail(where + ".tau_step_ns", "must be >= 0");
}

void read_chsh(Reader& r, const YAML::Node& node, ChshSpec& c)
{
    const std::string where = "chsh";
    if (!r.check_map(node, where, {"tau_ns", "alpha_rad", "beta_points"})) return;
    r.number(node, "tau_ns", where, c.tau, 1e-9);
    if (!(c.tau >= 0.0)) r.fail(where + ".tau_ns", "must be >= 0");
    r.number(node, "alpha_rad", where, c.alpha);
    r.count(node, "beta_points", where, c.beta_points, 2);
}

void read_heating_compare(Reader& r, const YAML::Node& node, HeatingCompareSpec& h)
{
    const std::string where = "heating_compare";
    if (!r.check_map(node, where,
                     {"cw_nbar", "sigma_sweep_ns", "t_per_sweep_us", "fixed_sigma_ns", "curve_end_us",
                      "curve_intervals", "train_periods", "t0_us", "sigma_us"}))
        return;
    r.number(node, "cw_nbar", where, h.cw_nbar);
    if (!(h.cw_nbar > 0.0)) r.fail(where + ".cw_nbar", "must be > 0");
    std::vector<double> sigmas_ns;
    for (double s : h.sigma_sweep_us) sigmas_ns.push_back(s * 1e3);
    sigmas_ns = r.numbers(node, "sigma_sweep_ns", where, sigmas_ns);
    h.sigma_sweep_us.clear();
    for (double s : sigmas_ns) {
        if (!(s > 0.0)) r.fail(where + ".sigma_sweep_ns", "entries must be > 0");
        h.sigma_sweep_us.push_back(s * 1e-3);
    }
    h.t_per_sweep_us = r.numbers(node, "t_per_sweep_us", where, h.t_per_sweep_us);
    for (double t : h.t_per_sweep_us)
        if (!(t > 0.0)) r.fail(where + ".t_per_sweep_us", "entries must be > 0");
    r.number(node, "fixed_sigma_ns", where, h.fixed_sigma_us, 1e-3);
    if (!(h.fixed_sigma_us > 0.0)) r.fail(where + ".fixed_sigma_ns", "must be > 0");
    r.number(node, "curve_end_us", where, h.curve_end_us);
    if (!(h.curve_end_us > 0.0)) r.fail(where + ".curve_end_us", "must be > 0");
    r.count(node, "curve_intervals", where, h.curve_intervals, 1);
    r.count(node, "train_periods", where, h.train_periods, 1);
    r.number(node, "t0_us", where, h.shape.t0_us);
    r.number(node, "sigma_us", where, h.shape.sigma_us);
    if (!(h.shape.sigma_us > 0.0)) r.fail(where + ".sigma_us", "must be > 0");
}

void read_heating_fit(Reader& r, const YAML::Node& node, HeatingFitSpec& h, const std::filesystem::path& base_dir)
{
    const std::string where = "heating_fit";
    if (!r.check_map(node, where, {"data_csv", "noise_fraction", "samples", "t_end_us", "t0_us", "sigma_us"})) return;
    if (auto v = r.get<std::string>(node, "data_csv", where)) {
        std::filesystem::path p(*v);
        h.data_csv = p.is_absolute() ? p : base_dir / p;
    }
    r.number(node, "noise_fraction", where, h.noise_fraction);
    if (h.noise_fraction < 0.0) r.fail(where + ".noise_fraction", "must be >= 0");
    r.count(node, "samples", where, h.samples, 8);
    r.number(node, "t_end_us", where, h.t_end_us);
    if (!(h.t_end_us > 0.0)) r.fail(where + ".t_end_us", "must be > 0");
    r.number(node, "t0_us", where, h.shape.t0_us);
    r.number(node, "sigma_us", where, h.shape.sigma_us);
    if (!(h.shape.sigma_us > 0.0)) r.fail(where + ".sigma_us", "must be > 0");
}

bool needs_pumps(ExperimentKind kind)
{
    return kind != ExperimentKind::HeatingCompare && kind != ExperimentKind::HeatingFit;
}

} // namespace

const std::vector<ExperimentKind>& all_experiments()
{
    static const std::vector<ExperimentKind> kinds = [] {
        std::vector<ExperimentKind> out;
        for (const auto& e : kExperiments) out.push_back(e.kind);
        return out;
    }();
    return kinds;
}

std::string to_string(ExperimentKind kind)
{
    for (const auto& e : kExperiments)
        if (e.kind == kind) return e.name;
    return "unknown";
}

std::optional<ExperimentKind> parse_experiment(const std::string& name)
{
    for (const auto& e : kExperiments)
        if (name == e.name) return e.kind;
    return std::nullopt;
}

std::string describe(ExperimentKind kind)
{
    for (const auto& e : kExperiments)
        if (e.kind == kind) return e.description;
    return {};
}

std::array<int, 3> default_cutoffs(const quantum::PumpPulse& pump)
{
    const double gain =
        pump.mode == quantum::PumpMode::GainFactor ? pump.amplitude : std::sqrt(std::max(pump.amplitude, 0.0));
    return gain <= 1.0 + 1e-12 ? std::array<int, 3>{2, 4, 4} : std::array<int, 3>{3, 6, 6};
}

ExperimentConfig parse_config(const std::string& yaml_text, const std::filesystem::path& base_dir)
{
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::Exception& e) {
        throw ConfigError({std::string("YAML: ") + e.what()});
    }
    Reader r;
    ExperimentConfig cfg;
    if (!r.check_map(root, "config",
                     {"experiment", "output_dir", "rng_seed", "workers", "system", "pump", "pumps", "cutoffs",
                      "detector", "heating", "grids", "chsh", "schmidt_modes", "heating_compare", "heating_fit",
                      "convergence_gate", "gate_tolerance"}))
        throw ConfigError(r.violations);

    if (auto name = r.get<std::string>(root, "experiment", "config")) {
        if (auto kind = parse_experiment(*name))
            cfg.experiment = *kind;
        else
            r.fail("config.experiment", "unknown experiment '" + *name + "'");
    } else {
        r.fail("config", "missing experiment");
    }
    if (auto v = r.get<std::string>(root, "output_dir", "config")) cfg.output_dir = *v;
    if (auto v = r.get<std::uint64_t>(root, "rng_seed", "config")) cfg.rng_seed = *v;
    if (auto v = r.get<long long>(root, "workers", "config")) {
        if (*v < 1)
            r.fail("config.workers", "must be >= 1");
        else
            cfg.workers = static_cast<unsigned>(*v);
    }

    if (root["system"]) read_system(r, root["system"], cfg.system);
    cfg.heating.omega_m = cfg.system.omega_m;
    r.validate("system", [&] { cfg.system.validate(); });

    if (root["pump"] && root["pumps"]) r.fail("config", "give either pump or pumps, not both");
    if (root["pump"]) cfg.pumps.push_back(read_pump(r, root["pump"], "pump"));
    if (const auto list = root["pumps"]) {
        if (!list.IsSequence() || list.size() == 0)
            r.fail("pumps", "expected a non-empty list");
        else
            for (std::size_t i = 0; i < list.size(); ++i)
                cfg.pumps.push_back(read_pump(r, list[i], "pumps[" + std::to_string(i) + "]"));
    }
    if (needs_pumps(cfg.experiment) && cfg.pumps.empty())
        r.fail("config", to_string(cfg.experiment) + " needs at least one pump");

    if (const auto node = root["cutoffs"]) {
        if (!node.IsSequence() || node.size() != 3) {
            r.fail("cutoffs", "expected [N_a, N_b, N_c]");
        } else {
            std::array<int, 3> c{};
            bool ok = true;
            for (std::size_t i = 0; i < 3; ++i) {
                try {
                    c[i] = node[i].as<int>();
                } catch (const YAML::Exception&) {
                    ok = false;
                }
                if (ok && c[i] < 1) ok = false;
            }
            if (ok)
                cfg.cutoffs = c;
            else
                r.fail("cutoffs", "entries must be integers >= 1");
        }
    }

    bool rate_given = false;
    if (root["detector"]) read_detector(r, root["detector"], cfg.detector, rate_given);
    if (root["heating"]) read_heating(r, root["heating"], cfg);
    r.validate("heating", [&] { cfg.heating.validate(); });
    // Repetition follows the pulse period unless set explicitly.
    if (!rate_given) cfg.detector.r_D = 1.0 / cfg.heating.t_per;
    r.validate("detector", [&] { cfg.detector.validate(); });

    if (root["grids"]) read_grids(r, root["grids"], cfg.grids);
    if (root["chsh"]) read_chsh(r, root["chsh"], cfg.chsh);
    if (root["schmidt_modes"]) {
        std::size_t k = cfg.schmidt_modes;
        r.count(root, "schmidt_modes", "config", k, 1);
        cfg.schmidt_modes = k;
    }
    if (root["heating_compare"]) read_heating_compare(r, root["heating_compare"], cfg.heating_compare);
    if (root["heating_fit"]) read_heating_fit(r, root["heating_fit"], cfg.heating_fit, base_dir);

    if (auto v = r.get<std::string>(root, "convergence_gate", "config")) {
        if (*v == "enforce")
            cfg.gate = GateMode::Enforce;
        else if (*v == "report")
            cfg.gate = GateMode::Report;
        else if (*v == "off")
            cfg.gate = GateMode::Off;
        else
            r.fail("config.convergence_gate", "expected enforce, report or off");
    }
    r.number(root, "gate_tolerance", "config", cfg.gate_tolerance);
    if (!(cfg.gate_tolerance > 0.0)) r.fail("config.gate_tolerance", "must be > 0");

    if (!r.violations.empty()) throw ConfigError(r.violations);
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError({"cannot open " + path.string()});
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str(), path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

} // namespace eopulse::config
