#pragma once

#include <cstdint>
#include <vector>

#include "spadsim/mc_sim.hpp"

// Characterization protocols built on the simulator: the two-gate estimator
// and the measurement sweeps behind the standard figures. Every sweep point
// runs with its own seed derived from the master seed, so sweeps can run on
// a thread pool (jobs > 1) without changing any number.

namespace spadsim {

struct DoubleGateEstimate {
    double dark_prob_per_ns = 0.0;
    double afterpulse_prob_per_ns = 0.0;
    double detection_efficiency = 0.0;
    double dark_se = 0.0;
    double afterpulse_se = 0.0;
    double detection_se = 0.0;
    bool detection_valid = true;     // flagged, never clamped
    bool afterpulse_defined = true;  // false when no gate ever triggered
    // echoed inputs
    double frequency_hz = 0.0;
    double mean_photon_number = 0.0;
    double gate_width_ns = 0.0;
    double afterpulse_gate_ns = 0.0;
    double dark_click_rate_hz = 0.0;
    double click_rate_hz = 0.0;
    double afterpulse_gate_rate_hz = 0.0;
};

/// Copies the unilluminated companion run's detection-gate click rate into
/// `illuminated` as the dark calibration input of the estimator.
RunSummary with_dark_calibration(RunSummary illuminated, const RunSummary& dark);

/// Count-rate inversion of the two-gate protocol:
///   P_dark = C_dark / (f * width)
///   P_ap   = C_ap / (C_click * ap_width)
///   P_det  = ln[(1 - C_dark/f) / (1 - C_click/f)] / mu
/// Standard errors by the delta method on binomial gate fractions. Throws
/// std::runtime_error when a click rate saturates the gate frequency and
/// std::invalid_argument when no dark calibration was merged.
DoubleGateEstimate estimate_double_gate(const RunSummary& summary,
                                        double frequency_hz,
                                        double mean_photon_number,
                                        double gate_width_ns,
                                        double afterpulse_gate_ns);

/// Closed-form afterpulse model of a device at its own temperature (release
/// time constants rescaled, activation entries resolved).
AfterpulseModel device_afterpulse_model(const DeviceConfig& device,
                                        double afterpulse_gate_ns);

struct AfterpulseSweepPoint {
    double deadtime_ns = 0.0;
    // Configured delay plus half the afterpulse gate width; the closed form
    // freezes the release rate over the gate, evaluating it at the window
    // midpoint removes the first-order width bias when comparing or fitting.
    double effective_deadtime_ns = 0.0;
    DoubleGateEstimate estimate;
    double model_prob_per_ns = 0.0;
    double afterpulse_cause_per_trigger = 0.0;  // cause-labeled, no dark floor
    double afterpulse_cause_se = 0.0;
    std::uint64_t triggered = 0;
    std::uint64_t point_seed = 0;
};

struct AfterpulseSweep {
    std::vector<AfterpulseSweepPoint> points;
    RunSummary dark_calibration;
};

AfterpulseSweep sweep_afterpulse_vs_deadtime(const DeviceConfig& device,
                                             const GateSchedule& base,
                                             const PhotonSource& source,
                                             const std::vector<double>& deadtimes_ns,
                                             std::uint64_t n_gates,
                                             std::uint64_t seed, int jobs = 1);

struct DarkTemperaturePoint {
    double temperature_k = 0.0;
    double dark_prob_per_ns = 0.0;
    double se = 0.0;
    double model_rate_per_ns = 0.0;
    std::uint64_t clicks = 0;
    std::uint64_t gates = 0;
    std::uint64_t point_seed = 0;
};

struct DarkTemperatureSweep {
    std::vector<DarkTemperaturePoint> points;
};

/// Unilluminated runs across temperatures; emits (T, P_dark) ready for the
/// activation-energy fit. The device's dark rate at each point comes from
/// the thermal model.
DarkTemperatureSweep sweep_dark_vs_temperature(const DeviceConfig& base,
                                               const ThermalModel& thermal,
                                               const GateSchedule& schedule,
                                               const std::vector<double>& temps_k,
                                               std::uint64_t n_gates,
                                               std::uint64_t seed, int jobs = 1);

struct FreeRunningPoint {
    double deadtime_ns = 0.0;
    double measured_rate_hz = 0.0;
    double measured_se_hz = 0.0;
    double measured_noise_hz = 0.0;
    double noise_se_hz = 0.0;
    double model_rate_hz = 0.0;   // closed form, illuminated
    double model_noise_hz = 0.0;  // closed form, mu = 0
    std::uint64_t clicks = 0;
    std::uint64_t noise_clicks = 0;
    std::uint64_t point_seed = 0;
};

struct FreeRunningSweep {
    std::vector<FreeRunningPoint> points;
};

/// Per deadtime: one illuminated and one unilluminated free-running run of
/// `duration_ns`, with the closed-form rate overlaid (continuous-wave trials
/// carry one photon each, so the model's mean photon number is 1).
FreeRunningSweep sweep_free_running(const DeviceConfig& device,
                                    const GateSchedule& base,
                                    const PhotonSource& source,
                                    const std::vector<double>& deadtimes_ns,
                                    double duration_ns, std::uint64_t seed,
                                    int jobs = 1);

struct ChargePersistencePoint {
    double advance_ns = 0.0;  // pulse arrival ahead of the gate opening
    double noise_per_gate_per_photon = 0.0;  // (residual + dark) / gates / mu
    double se = 0.0;
    double residual_clicks_per_gate = 0.0;
    double dark_clicks_per_gate = 0.0;
    double model_residual_per_gate = 0.0;
    std::uint64_t point_seed = 0;
};

struct ChargePersistenceSweep {
    std::vector<ChargePersistencePoint> points;
    double dark_level_per_gate = 0.0;  // configured dark probability per gate
};

ChargePersistenceSweep sweep_charge_persistence(const DeviceConfig& device,
                                                const GateSchedule& schedule,
                                                const PhotonSource& source,
                                                const std::vector<double>& advances_ns,
                                                std::uint64_t n_gates,
                                                std::uint64_t seed, int jobs = 1);

struct QuenchTimingPoint {
    double offset_ns = 0.0;  // pulse arrival relative to gate opening
    double detection_per_gate = 0.0;
    double detection_se = 0.0;
    double afterpulse_per_trigger = 0.0;
    double afterpulse_se = 0.0;
    std::uint64_t triggered = 0;
    std::uint64_t point_seed = 0;
};

struct QuenchTimingSweep {
    std::vector<QuenchTimingPoint> points;
};

/// Sweeps the pulse arrival across the nominal gate end at a fixed deadtime;
/// the detection and afterpulse S-curves encode the quench timing.
QuenchTimingSweep sweep_quench_time(const DeviceConfig& device,
                                    const GateSchedule& base,
                                    const PhotonSource& source,
                                    const std::vector<double>& offsets_ns,
                                    std::uint64_t n_gates, std::uint64_t seed,
                                    int jobs = 1);

}  // namespace spadsim
