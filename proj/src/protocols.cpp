#include "spadsim/protocols.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "spadsim/rng.hpp"

namespace spadsim {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Runs body(0..n-1) on up to `jobs` threads. Work items are claimed from an
// atomic counter and write only to their own slot, so the result is the same
// for any job count.
template <typename F>
void parallel_for(std::size_t n, int jobs, F&& body) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    const std::size_t workers =
        std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

double binomial_se(double p, double n) {
    if (n <= 0.0) return kNaN;
    const double v = p * (1.0 - p) / n;
    return v > 0.0 ? std::sqrt(v) : 0.0;
}

PhotonSource dark_source() {
    PhotonSource s;
    s.kind = SourceKind::pulsed;
    s.mean_photon_number = 0.0;
    return s;
}

}  // namespace

RunSummary with_dark_calibration(RunSummary illuminated, const RunSummary& dark) {
    illuminated.dark_click_rate_hz = dark.click_rate_hz;
    illuminated.has_dark_calibration = true;
    illuminated.dark_calibration_gates = dark.gates_nominal;
    return illuminated;
}

DoubleGateEstimate estimate_double_gate(const RunSummary& summary,
                                        double frequency_hz,
                                        double mean_photon_number,
                                        double gate_width_ns,
                                        double afterpulse_gate_ns) {
    if (!(frequency_hz > 0.0))
        throw std::invalid_argument("estimate_double_gate: frequency_hz must be > 0");
    if (!(gate_width_ns > 0.0))
        throw std::invalid_argument("estimate_double_gate: gate_width_ns must be > 0");
    if (!(afterpulse_gate_ns > 0.0))
        throw std::invalid_argument(
            "estimate_double_gate: afterpulse_gate_ns must be > 0");
    if (mean_photon_number < 0.0)
        throw std::invalid_argument(
            "estimate_double_gate: mean_photon_number must be >= 0");
    if (!summary.has_dark_calibration)
        throw std::invalid_argument(
            "estimate_double_gate: no dark calibration merged into the summary "
            "(see with_dark_calibration)");

    DoubleGateEstimate e;
    e.frequency_hz = frequency_hz;
    e.mean_photon_number = mean_photon_number;
    e.gate_width_ns = gate_width_ns;
    e.afterpulse_gate_ns = afterpulse_gate_ns;
    e.click_rate_hz = summary.click_rate_hz;
    e.dark_click_rate_hz = summary.dark_click_rate_hz;
    e.afterpulse_gate_rate_hz = summary.afterpulse_gate_rate_hz;

    const double p_click = summary.click_rate_hz / frequency_hz;
    const double p_dark = summary.dark_click_rate_hz / frequency_hz;
    if (p_click >= 1.0 || p_dark >= 1.0)
        throw std::runtime_error(
            "estimate_double_gate: click rate saturates the gate frequency");

    const double n_ill = static_cast<double>(summary.gates_nominal);
    const double n_dark = static_cast<double>(summary.dark_calibration_gates);

    e.dark_prob_per_ns = p_dark / gate_width_ns;
    e.dark_se = binomial_se(p_dark, n_dark) / gate_width_ns;

    if (mean_photon_number > 0.0) {
        e.detection_efficiency =
            std::log((1.0 - p_dark) / (1.0 - p_click)) / mean_photon_number;
        const double var_click =
            n_ill > 0.0 ? p_click * (1.0 - p_click) / n_ill : kNaN;
        const double var_dark =
            n_dark > 0.0 ? p_dark * (1.0 - p_dark) / n_dark : kNaN;
        e.detection_se = std::sqrt(var_click / ((1.0 - p_click) * (1.0 - p_click)) +
                                   var_dark / ((1.0 - p_dark) * (1.0 - p_dark))) /
                         mean_photon_number;
        e.detection_valid = std::isfinite(e.detection_efficiency) &&
                            e.detection_efficiency >= 0.0 &&
                            e.detection_efficiency <= 1.0;
    } else {
        e.detection_efficiency = kNaN;
        e.detection_se = kNaN;
        e.detection_valid = false;
    }

    if (summary.triggered == 0 || !(summary.click_rate_hz > 0.0)) {
        e.afterpulse_defined = false;
        e.afterpulse_prob_per_ns = kNaN;
        e.afterpulse_se = kNaN;
    } else {
        const double p_ap = summary.afterpulse_gate_rate_hz / summary.click_rate_hz;
        e.afterpulse_prob_per_ns = p_ap / afterpulse_gate_ns;
        e.afterpulse_se = binomial_se(p_ap, static_cast<double>(summary.triggered)) /
                          afterpulse_gate_ns;
    }
    return e;
}

AfterpulseModel device_afterpulse_model(const DeviceConfig& device,
                                        double afterpulse_gate_ns) {
    AfterpulseModel m;
    m.trigger_prob = device.trigger_prob;
    m.afterpulse_gate_ns = afterpulse_gate_ns;
    m.traps.reserve(device.traps.size());
    for (const auto& trap : device.traps) {
        TrapSpecies s = trap;
        s.detrap_tau_ns = scale_detrap_tau(trap, device.temperature_k);
        s.activation_energy_ev.reset();
        s.reference_temp_k = device.temperature_k;
        m.traps.push_back(s);
    }
    return m;
}

AfterpulseSweep sweep_afterpulse_vs_deadtime(const DeviceConfig& device,
                                             const GateSchedule& base,
                                             const PhotonSource& source,
                                             const std::vector<double>& deadtimes_ns,
                                             std::uint64_t n_gates,
                                             std::uint64_t seed, int jobs) {
    if (base.mode != GateMode::gated)
        throw std::invalid_argument(
            "sweep_afterpulse_vs_deadtime: schedule must be gated");
    if (!(base.afterpulse_gate_ns > 0.0))
        throw std::invalid_argument(
            "sweep_afterpulse_vs_deadtime: afterpulse gate must be enabled");
    if (deadtimes_ns.empty())
        throw std::invalid_argument(
            "sweep_afterpulse_vs_deadtime: empty deadtime grid");

    AfterpulseSweep sweep;
    {
        GateSchedule dark_schedule = base;
        dark_schedule.deadtime_ns = deadtimes_ns.front();
        const std::uint64_t dark_seed = derive_seed(seed, "dark_calibration");
        sweep.dark_calibration =
            run_gated(device, dark_schedule, dark_source(), n_gates, dark_seed)
                .summary;
    }

    sweep.points.resize(deadtimes_ns.size());
    const AfterpulseModel model =
        device_afterpulse_model(device, base.afterpulse_gate_ns);
    parallel_for(deadtimes_ns.size(), jobs, [&](std::size_t i) {
        GateSchedule schedule = base;
        schedule.deadtime_ns = deadtimes_ns[i];
        const std::uint64_t point_seed =
            derive_seed(seed, "afterpulse_sweep", static_cast<std::uint64_t>(i));
        const RunSummary summary =
            with_dark_calibration(run_gated(device, schedule, source, n_gates,
                                            point_seed)
                                      .summary,
                                  sweep.dark_calibration);

        AfterpulseSweepPoint& p = sweep.points[i];
        p.deadtime_ns = deadtimes_ns[i];
        p.effective_deadtime_ns = deadtimes_ns[i] + 0.5 * base.afterpulse_gate_ns;
        p.estimate = estimate_double_gate(summary, schedule.frequency_hz,
                                          source.mean_photon_number,
                                          schedule.gate_width_ns,
                                          schedule.afterpulse_gate_ns);
        p.model_prob_per_ns = afterpulse_probability(model, p.effective_deadtime_ns);
        p.triggered = summary.triggered;
        if (summary.triggered > 0) {
            const double frac =
                static_cast<double>(
                    summary.count(GateClass::afterpulse, ClickCause::afterpulse)) /
                static_cast<double>(summary.triggered);
            p.afterpulse_cause_per_trigger = frac;
            p.afterpulse_cause_se =
                binomial_se(frac, static_cast<double>(summary.triggered));
        } else {
            p.afterpulse_cause_per_trigger = kNaN;
            p.afterpulse_cause_se = kNaN;
        }
        p.point_seed = point_seed;
    });
    return sweep;
}

DarkTemperatureSweep sweep_dark_vs_temperature(const DeviceConfig& base,
                                               const ThermalModel& thermal,
                                               const GateSchedule& schedule,
                                               const std::vector<double>& temps_k,
                                               std::uint64_t n_gates,
                                               std::uint64_t seed, int jobs) {
    if (schedule.mode != GateMode::gated)
        throw std::invalid_argument(
            "sweep_dark_vs_temperature: schedule must be gated");
    if (temps_k.empty())
        throw std::invalid_argument("sweep_dark_vs_temperature: empty grid");
    validate(thermal);

    DarkTemperatureSweep sweep;
    sweep.points.resize(temps_k.size());
    parallel_for(temps_k.size(), jobs, [&](std::size_t i) {
        DeviceConfig device = base;
        device.temperature_k = temps_k[i];
        device.dark_rate_per_ns = dark_rate(thermal, temps_k[i]);
        const std::uint64_t point_seed =
            derive_seed(seed, "dark_sweep", static_cast<std::uint64_t>(i));
        const RunSummary summary =
            run_gated(device, schedule, dark_source(), n_gates, point_seed).summary;

        DarkTemperaturePoint& p = sweep.points[i];
        p.temperature_k = temps_k[i];
        const double p_dark = summary.click_rate_hz / schedule.frequency_hz;
        p.dark_prob_per_ns = p_dark / schedule.gate_width_ns;
        p.se = binomial_se(p_dark, static_cast<double>(summary.gates_nominal)) /
               schedule.gate_width_ns;
        p.model_rate_per_ns = device.dark_rate_per_ns;
        p.clicks = summary.triggered;
        p.gates = summary.gates_nominal;
        p.point_seed = point_seed;
    });
    return sweep;
}

FreeRunningSweep sweep_free_running(const DeviceConfig& device,
                                    const GateSchedule& base,
                                    const PhotonSource& source,
                                    const std::vector<double>& deadtimes_ns,
                                    double duration_ns, std::uint64_t seed,
                                    int jobs) {
    if (base.mode != GateMode::free_running)
        throw std::invalid_argument(
            "sweep_free_running: schedule must be free running");
    if (source.kind != SourceKind::continuous || !(source.rate_hz > 0.0))
        throw std::invalid_argument(
            "sweep_free_running: needs a continuous source with rate_hz > 0");
    if (!(duration_ns > 0.0))
        throw std::invalid_argument("sweep_free_running: duration_ns must be > 0");
    if (deadtimes_ns.empty())
        throw std::invalid_argument("sweep_free_running: empty deadtime grid");

    FreeRunningSweep sweep;
    sweep.points.resize(deadtimes_ns.size());
    const double seconds = duration_ns * 1e-9;
    const double trial_period_ns = 1e9 / source.rate_hz;
    parallel_for(deadtimes_ns.size(), jobs, [&](std::size_t i) {
        GateSchedule schedule = base;
        schedule.deadtime_ns = deadtimes_ns[i];
        const std::uint64_t point_seed =
            derive_seed(seed, "free_running_sweep", static_cast<std::uint64_t>(i));
        const std::uint64_t noise_seed =
            derive_seed(seed, "free_running_noise", static_cast<std::uint64_t>(i));

        const RunSummary lit =
            run_free(device, schedule, source, duration_ns, point_seed).summary;
        PhotonSource off = source;
        off.rate_hz = 0.0;
        off.kind = SourceKind::pulsed;
        off.mean_photon_number = 0.0;
        const RunSummary dark =
            run_free(device, schedule, off, duration_ns, noise_seed).summary;

        FreeRunningModel model;
        model.detection_efficiency = device.detection_efficiency;
        // One trial per expected photon arrival: the per-trial dark
        // probability is the dark rate integrated over the mean arrival
        // spacing, and each trial carries exactly one photon.
        model.dark_prob = device.dark_rate_per_ns * trial_period_ns;
        model.mean_photon_number = 1.0;
        model.photon_rate_hz = source.rate_hz;
        model.deadtime_ns = deadtimes_ns[i];
        model.integration_horizon_ns =
            std::max(model.integration_horizon_ns, deadtimes_ns[i]);
        model.afterpulse_mean = integrated_afterpulse(
            device_afterpulse_model(device, 1.0), deadtimes_ns[i],
            model.integration_horizon_ns);

        FreeRunningPoint& p = sweep.points[i];
        p.deadtime_ns = deadtimes_ns[i];
        p.clicks = lit.total_clicks();
        p.noise_clicks = dark.total_clicks();
        p.measured_rate_hz = lit.click_rate_hz;
        p.measured_se_hz = std::sqrt(static_cast<double>(p.clicks)) / seconds;
        p.measured_noise_hz = dark.click_rate_hz;
        p.noise_se_hz = std::sqrt(static_cast<double>(p.noise_clicks)) / seconds;
        p.model_rate_hz = free_running_rate(model);
        FreeRunningModel noise_model = model;
        noise_model.mean_photon_number = 0.0;
        p.model_noise_hz = free_running_rate(noise_model);
        p.point_seed = point_seed;
    });
    return sweep;
}

ChargePersistenceSweep sweep_charge_persistence(const DeviceConfig& device,
                                                const GateSchedule& schedule,
                                                const PhotonSource& source,
                                                const std::vector<double>& advances_ns,
                                                std::uint64_t n_gates,
                                                std::uint64_t seed, int jobs) {
    if (schedule.mode != GateMode::gated)
        throw std::invalid_argument(
            "sweep_charge_persistence: schedule must be gated");
    if (source.kind != SourceKind::pulsed || !(source.mean_photon_number > 0.0))
        throw std::invalid_argument(
            "sweep_charge_persistence: needs a pulsed source with mean photon "
            "number > 0");
    if (advances_ns.empty())
        throw std::invalid_argument("sweep_charge_persistence: empty grid");

    ChargePersistenceSweep sweep;
    sweep.dark_level_per_gate = device.dark_rate_per_ns * schedule.gate_width_ns;
    sweep.points.resize(advances_ns.size());
    parallel_for(advances_ns.size(), jobs, [&](std::size_t i) {
        const std::uint64_t point_seed = derive_seed(
            seed, "charge_persistence_sweep", static_cast<std::uint64_t>(i));
        const RunSummary summary =
            inject_pre_gate_photons(device, schedule, source, advances_ns[i],
                                    n_gates, point_seed)
                .summary;
        const double gates = static_cast<double>(summary.gates_armed);

        ChargePersistencePoint& p = sweep.points[i];
        p.advance_ns = advances_ns[i];
        const double residual = static_cast<double>(
            summary.count(GateClass::detection, ClickCause::charge_persistence));
        const double dark = static_cast<double>(
            summary.count(GateClass::detection, ClickCause::dark));
        p.residual_clicks_per_gate = gates > 0.0 ? residual / gates : kNaN;
        p.dark_clicks_per_gate = gates > 0.0 ? dark / gates : kNaN;
        const double noise_per_gate = (residual + dark) / std::max(gates, 1.0);
        p.noise_per_gate_per_photon = noise_per_gate / source.mean_photon_number;
        p.se = binomial_se(noise_per_gate, gates) / source.mean_photon_number;
        p.model_residual_per_gate = charge_persistence_probability(
            device.charge_persistence, advances_ns[i], source.mean_photon_number);
        p.point_seed = point_seed;
    });
    return sweep;
}

QuenchTimingSweep sweep_quench_time(const DeviceConfig& device,
                                    const GateSchedule& base,
                                    const PhotonSource& source,
                                    const std::vector<double>& offsets_ns,
                                    std::uint64_t n_gates, std::uint64_t seed,
                                    int jobs) {
    if (base.mode != GateMode::gated)
        throw std::invalid_argument("sweep_quench_time: schedule must be gated");
    if (!(base.afterpulse_gate_ns > 0.0))
        throw std::invalid_argument(
            "sweep_quench_time: afterpulse gate must be enabled");
    if (source.kind != SourceKind::pulsed)
        throw std::invalid_argument("sweep_quench_time: needs a pulsed source");
    if (offsets_ns.empty())
        throw std::invalid_argument("sweep_quench_time: empty offset grid");

    QuenchTimingSweep sweep;
    sweep.points.resize(offsets_ns.size());
    parallel_for(offsets_ns.size(), jobs, [&](std::size_t i) {
        GateSchedule schedule = base;
        schedule.photon_offset_ns = offsets_ns[i];
        const std::uint64_t point_seed =
            derive_seed(seed, "quench_sweep", static_cast<std::uint64_t>(i));
        const RunSummary summary =
            run_gated(device, schedule, source, n_gates, point_seed).summary;

        QuenchTimingPoint& p = sweep.points[i];
        p.offset_ns = offsets_ns[i];
        const double armed = static_cast<double>(summary.gates_armed);
        const double triggered = static_cast<double>(summary.triggered);
        p.detection_per_gate = armed > 0.0 ? triggered / armed : kNaN;
        p.detection_se = binomial_se(p.detection_per_gate, armed);
        if (summary.triggered > 0) {
            p.afterpulse_per_trigger =
                static_cast<double>(summary.class_total(GateClass::afterpulse)) /
                triggered;
            p.afterpulse_se = binomial_se(p.afterpulse_per_trigger, triggered);
        } else {
            p.afterpulse_per_trigger = kNaN;
            p.afterpulse_se = kNaN;
        }
        p.triggered = summary.triggered;
        p.point_seed = point_seed;
    });
    return sweep;
}

}  // namespace spadsim
