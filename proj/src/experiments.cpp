#include "eopulse/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "eopulse/errors.hpp"
#include "eopulse/heating.hpp"
#include "eopulse/io.hpp"

namespace eopulse::experiments {

namespace {

using json = nlohmann::ordered_json;
using config::ExperimentConfig;
using config::ExperimentKind;

constexpr double kPi = 3.14159265358979323846;

double step_for(const SystemParams& params, const PumpPulse& pump, const config::GridSpec& grids)
{
    double dt_max = grids.dt_fraction * dynamics::max_time_step(params, pump);
    if (!std::isfinite(dt_max)) dt_max = grids.align;
    const double per = std::ceil(grids.align / dt_max - 1e-9);
    return grids.align / std::max(per, 1.0);
}

TimeGrid tau_grid_for(double tau_max, double tau_step, double dt)
{
    const double step = tau_step > 0.0 ? dt * std::max(1.0, std::round(tau_step / dt)) : dt;
    const auto n = static_cast<std::size_t>(std::max(1.0, std::ceil(tau_max / step - 1e-9)));
    return {0.0, static_cast<double>(n) * step, n};
}

json cutoffs_json(const FockSpace& space)
{
    return json::array({space.cutoffs[0], space.cutoffs[1], space.cutoffs[2]});
}

json grid_json(const TimeGrid& g)
{
    return {{"t_start_s", g.t_start}, {"t_end_s", g.t_end}, {"n_steps", g.n_steps}, {"dt_s", g.dt()}};
}

json diagnostics_json(const dynamics::StateDiagnostics& d)
{
    return {{"max_trace_drift", d.max_trace_drift},
            {"max_hermiticity_error", d.max_hermiticity_error},
            {"min_eigenvalue", d.min_eigenvalue}};
}

json pump_json(const PumpPulse& p)
{
    json j;
    j["mode"] = p.mode == quantum::PumpMode::GainFactor ? "gain_factor" : "intracavity_photons";
    j["amplitude"] = p.amplitude;
    j["t0_s"] = p.t0;
    j["sigma_s"] = p.sigma;
    return j;
}

json config_json(const ExperimentConfig& cfg)
{
    const auto& s = cfg.system;
    json j;
    j["experiment"] = config::to_string(cfg.experiment);
    j["rng_seed"] = cfg.rng_seed;
    j["system_rad_per_s"] = {{"g_em", s.g_em},         {"g_0", s.g_0},         {"kappa_o_i", s.kappa_o_i},
                             {"kappa_o_c", s.kappa_o_c}, {"kappa_m", s.kappa_m}, {"kappa_e_i", s.kappa_e_i},
                             {"kappa_e_c", s.kappa_e_c}, {"omega_o", s.omega_o}, {"omega_m", s.omega_m},
                             {"omega_e", s.omega_e}};
    j["system_bath"] = {{"n_th_b", s.n_th_b.at(0.0)}, {"n_th_c", s.n_th_c.at(0.0)}};
    json pumps = json::array();
    for (const auto& p : cfg.pumps) pumps.push_back(pump_json(p));
    j["pumps"] = pumps;
    const auto& d = cfg.detector;
    j["detector"] = {{"eta_o", d.eta_o}, {"eta_e", d.eta_e}, {"T_o", d.T_o},         {"T_e", d.T_e},
                     {"D_o_hz", d.D_o},  {"D_e_hz", d.D_e},  {"t_w_s", d.t_w},       {"r_D_hz", d.r_D},
                     {"t_c_s", d.t_c},   {"interferometer_loss", d.interferometer_loss}};
    const auto& h = cfg.heating;
    j["heating"] = {{"a_per_us", h.a},     {"b_prime_k_per_us", h.b_prime},
                    {"d_k_per_us", h.d},   {"T0_k", h.T0},
                    {"eta_k", h.eta},      {"gamma", h.gamma},
                    {"t_per_s", h.t_per},  {"omega_m_rad_per_s", h.omega_m},
                    {"profile", cfg.heating_profile == config::HeatingProfile::PulseMatched ? "pulse_matched" : "tabulated"},
                    {"reference_without_heating", cfg.heating_reference}};
    const auto& g = cfg.grids;
    j["grids"] = {{"dt_fraction", g.dt_fraction}, {"align_s", g.align},     {"t_stride", g.t_stride},
                  {"axis_stride", g.axis_stride}, {"tau_max_s", g.tau_max}, {"tau_step_s", g.tau_step}};
    if (g.t_end) j["grids"]["t_end_s"] = *g.t_end;
    j["chsh"] = {{"tau_s", cfg.chsh.tau}, {"alpha_rad", cfg.chsh.alpha}, {"beta_points", cfg.chsh.beta_points}};
    j["schmidt_modes"] = cfg.schmidt_modes;
    j["convergence_gate"] = cfg.gate == config::GateMode::Enforce  ? "enforce"
                            : cfg.gate == config::GateMode::Report ? "report"
                                                                   : "off";
    j["gate_tolerance"] = cfg.gate_tolerance;
    return j;
}

struct Context {
    Context(const ExperimentConfig& c, std::filesystem::path d) : cfg(c), dir(std::move(d)) {}

    const ExperimentConfig& cfg;
    std::filesystem::path dir;
    json runs = json::array();
    RunSummary summary;
    json timing = json::object();

    void write(const std::string& name, const std::string& content)
    {
        io::write_file(dir / name, content);
        summary.files.push_back(dir / name);
    }

    template <class F>
    void write_csv(const std::string& name, F&& body)
    {
        std::ostringstream out;
        body(out);
        write(name, out.str());
    }

    // Re-runs `headline` at cutoffs + 1 unless the gate is off.
    void gate(const std::string& label, const std::string& observable, const FockSpace& space, double value,
              const std::function<double(const FockSpace&)>& headline)
    {
        if (cfg.gate == config::GateMode::Off) return;
        GateResult g;
        g.label = label;
        g.observable = observable;
        g.cutoffs = space.cutoffs;
        const FockSpace bigger = space.enlarged();
        g.cutoffs_plus = bigger.cutoffs;
        g.value = value;
        g.value_plus = headline(bigger);
        const double scale = std::abs(g.value_plus);
        g.relative_change = scale > 0.0 ? std::abs(g.value_plus - g.value) / scale : std::abs(g.value);
        g.passed = g.relative_change < cfg.gate_tolerance;
        summary.gates.push_back(g);
        summary.gates_passed = summary.gates_passed && g.passed;
    }
};

json gates_json(const std::vector<GateResult>& gates)
{
    json out = json::array();
    for (const auto& g : gates)
        out.push_back({{"label", g.label},
                       {"observable", g.observable},
                       {"cutoffs", json::array({g.cutoffs[0], g.cutoffs[1], g.cutoffs[2]})},
                       {"cutoffs_plus", json::array({g.cutoffs_plus[0], g.cutoffs_plus[1], g.cutoffs_plus[2]})},
                       {"value", g.value},
                       {"value_plus", g.value_plus},
                       {"relative_change", g.relative_change},
                       {"passed", g.passed}});
    return out;
}

double seconds_since(std::chrono::steady_clock::time_point start)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

json run_json(const std::string& label, const FockSpace& space, const TimeGrid& grid,
              const dynamics::StateDiagnostics& diag)
{
    return {{"label", label}, {"cutoffs", cutoffs_json(space)}, {"grid", grid_json(grid)},
            {"diagnostics", diagnostics_json(diag)}};
}

void write_chsh_csv(std::ostream& out, const detection::ChshEvaluator& ce, double alpha, const std::vector<double>& betas)
{
    io::CsvWriter csv(out, {"beta_rad", "S", "C_00", "C_0pi", "C_pi0", "C_pipi"});
    for (const auto& p : ce.sweep(alpha, betas))
        csv.row({p.beta, p.S, p.counts.c00, p.counts.c0pi, p.counts.cpi0, p.counts.cpipi});
}

// --- pump-driven runners ---------------------------------------------------

void run_wavepacket(Context& ctx, bool schmidt)
{
    const auto& cfg = ctx.cfg;
    for (const auto& pump : cfg.pumps) {
        const std::string label = pump_label(pump);
        const FockSpace space = cutoffs_for(cfg, pump);
        const auto start = std::chrono::steady_clock::now();
        const WavepacketRun wr = simulate_wavepacket(cfg.system, pump, space, cfg.grids, cfg.workers);
        json run = run_json(label, space, wr.grid, wr.diagnostics);
        run["normalization"] = wr.wavepacket.normalization;
        if (!schmidt) {
            ctx.write_csv("wavepacket_" + label + ".csv",
                          [&](std::ostream& o) { biphoton::write_wavepacket_csv(o, wr.wavepacket); });
            ctx.gate(label, "normalization", space, wr.wavepacket.normalization, [&](const FockSpace& s) {
                return simulate_wavepacket(cfg.system, pump, s, cfg.grids, cfg.workers).wavepacket.normalization;
            });
        } else {
            const auto spectrum = biphoton::schmidt_decompose(wr.wavepacket, cfg.schmidt_modes);
            double total = 0.0;
            for (double l : spectrum.lambdas) total += l;
            run["lambda_0"] = spectrum.lambdas.front();
            run["lambdas"] = spectrum.lambdas;
            run["lambda_sum_reported"] = total;
            run["entropy_nats"] = spectrum.entropy;
            ctx.write_csv("spectrum_" + label + ".csv",
                          [&](std::ostream& o) { biphoton::write_spectrum_csv(o, spectrum); });
            ctx.write_csv("optical_modes_" + label + ".csv",
                          [&](std::ostream& o) { biphoton::write_modes_csv(o, spectrum, true); });
            ctx.write_csv("microwave_modes_" + label + ".csv",
                          [&](std::ostream& o) { biphoton::write_modes_csv(o, spectrum, false); });
            ctx.gate(label, "lambda_0", space, spectrum.lambdas.front(), [&](const FockSpace& s) {
                const auto w = simulate_wavepacket(cfg.system, pump, s, cfg.grids, cfg.workers);
                return biphoton::schmidt_decompose(w.wavepacket, 1).lambdas.front();
            });
        }
        ctx.timing[label] = seconds_since(start);
        ctx.runs.push_back(run);
    }
}

void run_tau_scan(Context& ctx)
{
    const auto& cfg = ctx.cfg;
    json peaks = json::array();
    for (const auto& pump : cfg.pumps) {
        const std::string label = pump_label(pump);
        const FockSpace space = cutoffs_for(cfg, pump);
        const auto start = std::chrono::steady_clock::now();
        auto scan = [&](const FockSpace& s, PairTables* keep) {
            PairTables t = simulate_pair_tables(cfg.system, pump, s, cfg.grids, cfg.grids.tau_max, cfg.workers);
            double best = -1.0;
            for (std::size_t j = 0; j < t.correlators.tau_grid.size(); ++j)
                best = std::max(best, detection::coincidence_rate(t.correlators, cfg.detector,
                                                                  t.correlators.tau_grid.time(j)).total_rate);
            if (keep) *keep = std::move(t);
            return best;
        };
        PairTables tables;
        const double peak = scan(space, &tables);
        const auto& c = tables.correlators;
        double argmax = 0.0;
        ctx.write_csv("rate_" + label + ".csv", [&](std::ostream& o) {
            io::CsvWriter csv(o, {"tau_s", "R_total", "R_a", "R_c"});
            double best = -1.0;
            for (std::size_t j = 0; j < c.tau_grid.size(); ++j) {
                const double tau = c.tau_grid.time(j);
                const auto r = detection::coincidence_rate(c, cfg.detector, tau);
                const double span = r.window_end - r.window_start;
                csv.row({tau, r.total_rate, r.accidental_rate * span * cfg.detector.r_D,
                         r.correlated_rate * span * cfg.detector.r_D});
                if (r.total_rate > best) {
                    best = r.total_rate;
                    argmax = tau;
                }
            }
        });
        json run = run_json(label, tables.space, tables.grid, tables.diagnostics);
        run["peak_rate_hz"] = peak;
        run["argmax_tau_s"] = argmax;
        run["optical_width_s"] = c.optical_width;
        ctx.runs.push_back(run);
        ctx.gate(label, "peak_rate_hz", space, peak, [&](const FockSpace& s) { return scan(s, nullptr); });
        ctx.timing[label] = seconds_since(start);
    }
}

void run_counts(Context& ctx)
{
    const auto& cfg = ctx.cfg;
    for (const auto& pump : cfg.pumps) {
        const std::string label = pump_label(pump);
        const FockSpace space = cutoffs_for(cfg, pump);
        const auto start = std::chrono::steady_clock::now();
        auto fringe_top = [&](const PairTables& t) {
            const detection::ChshEvaluator ce(t.correlators, cfg.detector, cfg.chsh.tau);
            return ce.counts({cfg.chsh.alpha, cfg.chsh.alpha});
        };
        const PairTables tables = simulate_pair_tables(cfg.system, pump, space, cfg.grids, cfg.chsh.tau, cfg.workers);
        const detection::ChshEvaluator ce(tables.correlators, cfg.detector, cfg.chsh.tau);
        const auto betas = beta_grid(cfg.chsh.beta_points);
        ctx.write_csv("counts_" + label + ".csv", [&](std::ostream& o) {
            io::CsvWriter csv(o, {"beta_rad", "C_00", "C_0pi", "C_pi0", "C_pipi", "N_00", "N_0pi", "N_pi0", "N_pipi"});
            for (std::size_t k = 0; k < betas.size(); ++k) {
                const auto q = ce.quadruple(cfg.chsh.alpha, betas[k]);
                const auto n = detection::sample_counts(q, cfg.rng_seed + k);
                csv.row({betas[k], q.c00, q.c0pi, q.cpi0, q.cpipi, n.c00, n.c0pi, n.cpi0, n.cpipi});
            }
        });
        json run = run_json(label, tables.space, tables.grid, tables.diagnostics);
        const double top = fringe_top(tables);
        run["fringe_maximum_counts"] = top;
        ctx.runs.push_back(run);
        ctx.gate(label, "fringe_maximum_counts", space, top, [&](const FockSpace& s) {
            return fringe_top(simulate_pair_tables(cfg.system, pump, s, cfg.grids, cfg.chsh.tau, cfg.workers));
        });
        ctx.timing[label] = seconds_since(start);
    }
}

// One CHSH evaluation, optionally with heating noise on the mechanical bath.
struct ChshRun {
    PairTables tables;
    ChshSummary summary;
    SystemParams params;
};

ChshRun chsh_run(const ExperimentConfig& cfg, const PumpPulse& pump, const FockSpace& space, bool heated)
{
    ChshRun out;
    const double dt = step_for(cfg.system, pump, cfg.grids);
    const double needed = pump.t0 + 3.0 * pump.sigma + cfg.chsh.tau + (cfg.grids.t_stride + 2) * dt;
    const TimeGrid grid = evolution_grid(cfg.system, pump, cfg.grids, needed);
    out.params = heated ? with_heating_noise(cfg.system, cfg.heating, cfg.heating_profile, pump, grid) : cfg.system;
    out.tables = simulate_pair_tables(out.params, pump, space, cfg.grids, cfg.chsh.tau, cfg.workers, &grid);
    out.summary = summarize_chsh(out.tables.correlators, cfg.detector, cfg.chsh);
    return out;
}

void run_chsh(Context& ctx, bool heated)
{
    const auto& cfg = ctx.cfg;
    const auto betas = beta_grid(cfg.chsh.beta_points);
    struct Job {
        PumpPulse pump;
        bool heated;
        std::string label;
    };
    std::vector<Job> jobs;
    for (const auto& pump : cfg.pumps) jobs.push_back({pump, heated, pump_label(pump)});
    if (heated && cfg.heating_reference)
        jobs.push_back({cfg.pumps.front(), false, pump_label(cfg.pumps.front()) + "_no_heating"});

    std::ostringstream summary_csv;
    io::CsvWriter summary(summary_csv, {"label", "sigma_s", "S_max", "beta_at_max_rad", "coincidence_rate_hz"});
    for (const auto& job : jobs) {
        const FockSpace space = cutoffs_for(cfg, job.pump);
        const auto start = std::chrono::steady_clock::now();
        const ChshRun r = chsh_run(cfg, job.pump, space, job.heated);
        const detection::ChshEvaluator ce(r.tables.correlators, cfg.detector, cfg.chsh.tau);
        ctx.write_csv("chsh_" + job.label + ".csv",
                      [&](std::ostream& o) { write_chsh_csv(o, ce, cfg.chsh.alpha, betas); });
        if (job.heated) {
            ctx.write_csv("heating_noise_" + job.label + ".csv", [&](std::ostream& o) {
                io::CsvWriter csv(o, {"t_s", "T_K", "n_th_b"});
                const auto& grid = r.tables.grid;
                for (std::size_t k = 0; k < grid.size(); k += cfg.grids.t_stride) {
                    const double t = grid.time(k);
                    const double n = r.params.n_th_b.at(t);
                    const double kelvin =
                        n > 0.0 ? cfg.heating.hbar * cfg.heating.omega_m / (cfg.heating.k_b * std::log1p(1.0 / n)) : 0.0;
                    csv.row({t, kelvin, n});
                }
            });
        }
        summary.row(job.label, {job.pump.sigma, r.summary.S_max, r.summary.beta_at_max, r.summary.rate.total_rate});
        json run = run_json(job.label, r.tables.space, r.tables.grid, r.tables.diagnostics);
        run["heating_noise"] = job.heated;
        run["S_max"] = r.summary.S_max;
        run["beta_at_max_rad"] = r.summary.beta_at_max;
        run["coincidence_rate_hz"] = r.summary.rate.total_rate;
        run["optical_width_s"] = r.tables.correlators.optical_width;
        ctx.runs.push_back(run);
        ctx.gate(job.label, "S_max", space, r.summary.S_max,
                 [&](const FockSpace& s) { return chsh_run(cfg, job.pump, s, job.heated).summary.S_max; });
        ctx.timing[job.label] = seconds_since(start);
    }
    ctx.write(heated ? "chsh_heating_summary.csv" : "chsh_summary.csv", summary_csv.str());
}

// --- heating runners -------------------------------------------------------

void run_heating_compare(Context& ctx)
{
    const auto& cfg = ctx.cfg;
    const auto& sweep = cfg.heating_compare;
    const auto& h = cfg.heating;
    const double end_s = sweep.curve_end_us * heating::kMicrosecond;
    // A CW pump at the pulse's peak intensity: b = b' + d.
    const auto cw = heating::sample_cw(h, h.b_prime + h.d, end_s, sweep.curve_intervals);
    const auto gauss = heating::sample_gaussian(h, sweep.shape, end_s, sweep.curve_intervals);
    ctx.write_csv("cw_curve.csv", [&](std::ostream& o) { heating::write_curve_csv(o, cw); });
    ctx.write_csv("gaussian_curve.csv", [&](std::ostream& o) { heating::write_curve_csv(o, gauss); });

    const double period_us = h.t_per / heating::kMicrosecond;
    const heating::PulseShape train_shape{0.5 * period_us, sweep.fixed_sigma_us};
    const auto train = heating::pulse_train_temperature(h, train_shape, sweep.train_periods);
    ctx.write_csv("pulse_train.csv", [&](std::ostream& o) { heating::write_curve_csv(o, train.curve); });
    ctx.write_csv("pulse_train_steady_cycle.csv",
                  [&](std::ostream& o) { heating::write_curve_csv(o, train.steady_cycle); });

    std::vector<std::string> labels;
    std::vector<heating::MatchRow> rows;
    for (double sigma : sweep.sigma_sweep_us) {
        labels.push_back("sigma_ns=" + io::format_number(sigma * 1e3));
        rows.push_back(heating::match_average(h, sweep.cw_nbar, sigma, h.t_per));
    }
    ctx.write_csv("match_sigma.csv", [&](std::ostream& o) { heating::write_match_csv(o, labels, rows); });
    json sigma_rows = json::array();
    for (const auto& r : rows) sigma_rows.push_back({{"sigma_us", r.sigma_us}, {"ratio", r.ratio}});

    labels.clear();
    rows.clear();
    for (double t_per : sweep.t_per_sweep_us) {
        labels.push_back("t_per_us=" + io::format_number(t_per));
        rows.push_back(heating::match_average(h, sweep.cw_nbar, sweep.fixed_sigma_us, t_per * heating::kMicrosecond));
    }
    ctx.write_csv("match_t_per.csv", [&](std::ostream& o) { heating::write_match_csv(o, labels, rows); });
    json t_per_rows = json::array();
    for (const auto& r : rows) t_per_rows.push_back({{"t_per_s", r.t_per_s}, {"ratio", r.ratio}});

    json run;
    run["label"] = "heating_compare";
    run["cw_equilibrium_k"] = (h.b_prime + h.d) / h.a;
    run["gaussian_asymptote_k"] = h.d / h.a;
    run["train_steady_average_k"] = train.steady_average;
    run["train_steady_peak_k"] = train.steady_peak;
    run["train_periods_to_converge"] = train.periods_to_converge;
    run["match_sigma"] = sigma_rows;
    run["match_t_per"] = t_per_rows;
    ctx.runs.push_back(run);
}

void run_heating_fit(Context& ctx)
{
    const auto& cfg = ctx.cfg;
    const auto& fit_cfg = cfg.heating_fit;
    heating::TemperatureCurve samples;
    const bool synthetic = !fit_cfg.data_csv;
    if (synthetic) {
        samples = heating::sample_gaussian(cfg.heating, fit_cfg.shape, fit_cfg.t_end_us * heating::kMicrosecond,
                                           fit_cfg.samples - 1);
        std::mt19937_64 rng(cfg.rng_seed);
        std::normal_distribution<double> noise(0.0, 1.0);
        for (double& t : samples.kelvin) t *= 1.0 + fit_cfg.noise_fraction * noise(rng);
        samples.origin = heating::CurveOrigin::Measured;
        ctx.write_csv("fit_samples.csv", [&](std::ostream& o) { heating::write_curve_csv(o, samples); });
    } else {
        samples = heating::read_curve_csv(fit_cfg.data_csv->string());
    }
    const auto fit = heating::fit_params(samples, fit_cfg.shape, cfg.heating);
    heating::TemperatureCurve fitted = samples;
    fitted.origin = heating::CurveOrigin::Fitted;
    for (std::size_t k = 0; k < fitted.size(); ++k)
        fitted.kelvin[k] = heating::gaussian_temperature(fitted.time_s[k] / heating::kMicrosecond, fit.params, fit_cfg.shape);
    ctx.write_csv("fitted_curve.csv", [&](std::ostream& o) { heating::write_curve_csv(o, fitted); });

    json run;
    run["label"] = "heating_fit";
    run["data"] = synthetic ? "synthetic" : fit_cfg.data_csv->filename().string();
    run["samples"] = samples.size();
    run["pulse"] = {{"t0_us", fit_cfg.shape.t0_us}, {"sigma_us", fit_cfg.shape.sigma_us}};
    run["fitted"] = {{"a_per_us", fit.params.a},
                     {"b_prime_k_per_us", fit.params.b_prime},
                     {"d_k_per_us", fit.params.d},
                     {"T0_k", fit.params.T0}};
    run["residual_norm_k"] = fit.residual_norm;
    run["input_variance_k2"] = fit.input_variance;
    run["degenerate"] = fit.degenerate;
    if (synthetic) {
        const auto& g = cfg.heating;
        run["generating"] = {{"a_per_us", g.a}, {"b_prime_k_per_us", g.b_prime}, {"d_k_per_us", g.d}, {"T0_k", g.T0}};
        run["relative_error"] = {{"a", std::abs(fit.params.a / g.a - 1.0)},
                                 {"b_prime", std::abs(fit.params.b_prime / g.b_prime - 1.0)},
                                 {"d", std::abs(fit.params.d / g.d - 1.0)},
                                 {"T0", std::abs(fit.params.T0 / g.T0 - 1.0)}};
    }
    ctx.runs.push_back(run);
}

} // namespace

double default_window_end(const SystemParams& params, const PumpPulse& pump)
{
    const double ring_down = params.kappa_e() > 0.0 ? 5.0 / params.kappa_e() : 0.0;
    return pump.t0 + 6.0 * pump.sigma + ring_down;
}

TimeGrid evolution_grid(const SystemParams& params, const PumpPulse& pump, const config::GridSpec& grids,
                        double min_end)
{
    const double dt = step_for(params, pump, grids);
    const double end = std::max(grids.t_end.value_or(default_window_end(params, pump)), min_end);
    return TimeGrid::with_step(0.0, end, dt);
}

TimeGrid pump_window(const TimeGrid& evolution, const PumpPulse& pump, std::size_t stride)
{
    if (stride == 0) throw std::invalid_argument("window stride must be >= 1");
    const double dt = evolution.dt();
    const double lo = std::max(evolution.t_start, pump.t0 - 3.0 * pump.sigma);
    const double hi = std::min(evolution.t_end, pump.t0 + 3.0 * pump.sigma);
    const auto s = static_cast<double>(stride);
    // Start on a multiple of the stride so the window points are stored states.
    const auto i0 = static_cast<std::size_t>(std::floor((lo - evolution.t_start) / (dt * s) + 1e-9)) * stride;
    auto n = static_cast<std::size_t>(std::ceil((hi - evolution.time(i0)) / (dt * s) - 1e-9));
    n = std::max<std::size_t>(n, 1);
    while (n > 1 && i0 + n * stride > evolution.n_steps) --n;
    if (i0 + n * stride > evolution.n_steps) throw GridMismatch("pump window does not fit in the evolution grid");
    return {evolution.time(i0), evolution.time(i0 + n * stride), n};
}

SystemParams with_heating_noise(SystemParams params, const heating::HeatingParams& heat,
                                config::HeatingProfile profile, const PumpPulse& pump, const TimeGrid& grid)
{
    const heating::PulseShape shape{pump.t0 / heating::kMicrosecond, pump.sigma / heating::kMicrosecond};
    std::vector<double> samples(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const double t_us = grid.time(k) / heating::kMicrosecond;
        const double kelvin = profile == config::HeatingProfile::PulseMatched
                                  ? heating::gaussian_temperature(t_us, heat, shape)
                                  : heating::main_text_Tp(t_us, heat);
        samples[k] = heating::thermal_occupancy(std::max(kelvin, 0.0), heat);
    }
    params.n_th_b = quantum::OccupancyProfile::sampled(grid.t_start, grid.dt(), std::move(samples));
    return params;
}

PairTables simulate_pair_tables(const SystemParams& params, const PumpPulse& pump, const FockSpace& space,
                                const config::GridSpec& grids, double tau_max, unsigned workers, const TimeGrid* given)
{
    PairTables out;
    out.space = space;
    const double dt = given ? given->dt() : step_for(params, pump, grids);
    const TimeGrid taus = tau_grid_for(tau_max, grids.tau_step, dt);
    const double needed = pump.t0 + 3.0 * pump.sigma + taus.t_end + (grids.t_stride + 2) * dt;
    out.grid = given ? *given : evolution_grid(params, pump, grids, needed);
    const TimeGrid window = pump_window(out.grid, pump, grids.t_stride);
    if (window.t_end + taus.t_end > out.grid.t_end + 1e-6 * dt)
        throw GridMismatch("evolution grid ends before the last delay of the pump window");

    dynamics::PropagateOptions options;
    options.stride = grids.t_stride;
    options.state_window = std::make_pair(window.t_start, window.t_end);
    const auto evolution =
        dynamics::propagate(dynamics::DensityOperator::vacuum(space), out.grid, params, pump, options);
    out.diagnostics = evolution.diagnostics;
    out.correlators = detection::build_bin_correlators(evolution, params, pump, window, taus, workers);
    return out;
}

ChshSummary summarize_chsh(const detection::BinCorrelators& correlators, const detection::DetectorModel& det,
                           const config::ChshSpec& chsh)
{
    ChshSummary out;
    const detection::ChshEvaluator ce(correlators, det, chsh.tau);
    out.S_max = ce.max_abs_S(chsh.alpha, &out.beta_at_max);
    out.rate = detection::coincidence_rate(correlators, det, chsh.tau);
    return out;
}

std::vector<double> beta_grid(std::size_t points)
{
    if (points < 2) throw std::invalid_argument("beta sweep needs at least 2 points");
    std::vector<double> out(points);
    for (std::size_t k = 0; k < points; ++k) out[k] = 2.0 * kPi * static_cast<double>(k) / static_cast<double>(points - 1);
    return out;
}

WavepacketRun simulate_wavepacket(const SystemParams& params, const PumpPulse& pump, const FockSpace& space,
                                  const config::GridSpec& grids, unsigned workers)
{
    WavepacketRun out;
    out.space = space;
    TimeGrid grid = evolution_grid(params, pump, grids);
    // Whole number of axis strides, so the stored states are uniformly spaced.
    const std::size_t s = grids.axis_stride;
    const std::size_t n = (grid.n_steps + s - 1) / s * s;
    out.grid = {grid.t_start, grid.t_start + static_cast<double>(n) * grid.dt(), n};

    dynamics::PropagateOptions options;
    options.stride = s;
    const auto evolution =
        dynamics::propagate(dynamics::DensityOperator::vacuum(space), out.grid, params, pump, options);
    out.diagnostics = evolution.diagnostics;
    biphoton::WavepacketOptions wo;
    wo.workers = workers;
    out.wavepacket = biphoton::assemble_wavepacket(evolution, params, pump, biphoton::WavepacketKind::Amplitude, wo);
    return out;
}

std::string pump_label(const PumpPulse& pump)
{
    // %g at 6 digits hides the unit conversion residue (30.000000000000004 ns).
    auto compact = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%g", v);
        return std::string(buf);
    };
    const std::string head = pump.mode == quantum::PumpMode::GainFactor ? "G" : "n";
    return head + compact(pump.amplitude) + "_sigma" + compact(pump.sigma * 1e9) + "ns";
}

FockSpace cutoffs_for(const ExperimentConfig& cfg, const PumpPulse& pump)
{
    return FockSpace{cfg.cutoffs ? *cfg.cutoffs : config::default_cutoffs(pump)};
}

RunSummary run(const ExperimentConfig& cfg, const std::filesystem::path& output_dir)
{
    const std::string name = config::to_string(cfg.experiment);
    const auto start = std::chrono::steady_clock::now();
    Context ctx{cfg, output_dir};
    try {
        switch (cfg.experiment) {
        case ExperimentKind::Wavepacket: run_wavepacket(ctx, false); break;
        case ExperimentKind::SchmidtModes: run_wavepacket(ctx, true); break;
        case ExperimentKind::CoincidenceVsTau: run_tau_scan(ctx); break;
        case ExperimentKind::CountsVsBeta: run_counts(ctx); break;
        case ExperimentKind::ChshSweep: run_chsh(ctx, false); break;
        case ExperimentKind::ChshWithHeating: run_chsh(ctx, true); break;
        case ExperimentKind::HeatingCompare: run_heating_compare(ctx); break;
        case ExperimentKind::HeatingFit: run_heating_fit(ctx); break;
        }
    } catch (const ExperimentFailed&) {
        throw;
    } catch (const std::exception& e) {
        throw ExperimentFailed(name + ": " + e.what());
    }

    ctx.summary.wall_seconds = seconds_since(start);
    json manifest;
    manifest["config"] = config_json(cfg);
    json cutoffs = json::object();
    for (const auto& pump : cfg.pumps) cutoffs[pump_label(pump)] = cutoffs_json(cutoffs_for(cfg, pump));
    manifest["cutoffs"] = cutoffs;
    manifest["runs"] = ctx.runs;
    manifest["convergence_gate"] = {{"mode", config_json(cfg)["convergence_gate"]},
                                    {"tolerance", cfg.gate_tolerance},
                                    {"passed", ctx.summary.gates_passed},
                                    {"results", gates_json(ctx.summary.gates)}};
    json files = json::array();
    for (const auto& f : ctx.summary.files) files.push_back(f.filename().string());
    files.push_back("timing.json");
    manifest["outputs"] = files;
    io::write_file(output_dir / "manifest.json", manifest.dump(2) + "\n");

    json timing;
    timing["experiment"] = name;
    timing["wall_seconds"] = ctx.summary.wall_seconds;
    timing["stages"] = ctx.timing;
    io::write_file(output_dir / "timing.json", timing.dump(2) + "\n");
    ctx.summary.files.push_back(output_dir / "manifest.json");
    ctx.summary.files.push_back(output_dir / "timing.json");

    if (cfg.gate == config::GateMode::Enforce && !ctx.summary.gates_passed) {
        std::string failed;
        for (const auto& g : ctx.summary.gates)
            if (!g.passed)
                failed += " " + g.label + " (" + g.observable + " changed " + io::format_number(g.relative_change) + ")";
        throw ExperimentFailed(name + ": convergence gate failed at cutoffs + 1:" + failed);
    }
    return ctx.summary;
}

} // namespace eopulse::experiments
