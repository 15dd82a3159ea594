#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "spadsim/protocols.hpp"
#include "spadsim/rng.hpp"

using namespace spadsim;

namespace {

RunSummary synthetic_summary(double frequency_hz, double click_fraction,
                             double dark_fraction, double afterpulse_fraction) {
    RunSummary s;
    s.gates_nominal = 1000000;
    s.gates_armed = s.gates_nominal;
    s.triggered = static_cast<std::uint64_t>(click_fraction * 1e6);
    s.duration_ns = 1e6 * (1e9 / frequency_hz);
    s.click_rate_hz = click_fraction * frequency_hz;
    s.afterpulse_gate_rate_hz =
        afterpulse_fraction * click_fraction * frequency_hz;
    s.dark_click_rate_hz = dark_fraction * frequency_hz;
    s.has_dark_calibration = true;
    s.dark_calibration_gates = 1000000;
    return s;
}

DeviceConfig base_device() {
    DeviceConfig d;
    d.detection_efficiency = 0.1;
    d.dark_rate_per_ns = 0.0;
    d.temperature_k = 223.0;
    return d;
}

GateSchedule double_gate_schedule() {
    GateSchedule g;
    g.frequency_hz = 1e4;
    g.gate_width_ns = 100.0;
    g.deadtime_ns = 1000.0;
    g.afterpulse_gate_ns = 100.0;
    g.photon_offset_ns = 50.0;
    return g;
}

PhotonSource pulse(double mu) {
    PhotonSource s;
    s.mean_photon_number = mu;
    return s;
}

}  // namespace

TEST_CASE("count-rate inversion reproduces hand-computed probabilities") {
    // C_dark/f = 0.01, C_click/f = 0.10, 2% of triggers see a second click.
    const RunSummary s = synthetic_summary(1e4, 0.10, 0.01, 0.02);
    const DoubleGateEstimate e = estimate_double_gate(s, 1e4, 1.0, 100.0, 100.0);

    CHECK(e.dark_prob_per_ns == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(e.afterpulse_prob_per_ns == doctest::Approx(2e-4).epsilon(1e-12));
    CHECK(e.detection_efficiency ==
          doctest::Approx(0.09531017980432474).epsilon(1e-12));
    CHECK(e.detection_valid);
    CHECK(e.afterpulse_defined);
    CHECK(e.dark_se > 0.0);
    CHECK(e.detection_se > 0.0);
    CHECK(e.afterpulse_se > 0.0);

    // Same inversion at mu = 2.
    const RunSummary s2 = synthetic_summary(1e4, 0.19, 0.10, 0.02);
    const DoubleGateEstimate e2 =
        estimate_double_gate(s2, 1e4, 2.0, 100.0, 100.0);
    CHECK(e2.detection_efficiency ==
          doctest::Approx(0.052680257828913175).epsilon(1e-12));
}

TEST_CASE("estimator edge cases and failure modes") {
    RunSummary s = synthetic_summary(1e4, 0.10, 0.01, 0.02);

    RunSummary uncalibrated = s;
    uncalibrated.has_dark_calibration = false;
    CHECK_THROWS_AS(estimate_double_gate(uncalibrated, 1e4, 1.0, 100.0, 100.0),
                    std::invalid_argument);

    RunSummary saturated = s;
    saturated.click_rate_hz = 1e4;
    CHECK_THROWS_AS(estimate_double_gate(saturated, 1e4, 1.0, 100.0, 100.0),
                    std::runtime_error);

    RunSummary silent = synthetic_summary(1e4, 0.0, 0.0, 0.0);
    silent.triggered = 0;
    const DoubleGateEstimate quiet =
        estimate_double_gate(silent, 1e4, 1.0, 100.0, 100.0);
    CHECK_FALSE(quiet.afterpulse_defined);
    CHECK(std::isnan(quiet.afterpulse_prob_per_ns));

    const DoubleGateEstimate dark_only =
        estimate_double_gate(s, 1e4, 0.0, 100.0, 100.0);
    CHECK_FALSE(dark_only.detection_valid);
    CHECK(std::isnan(dark_only.detection_efficiency));
    CHECK(dark_only.dark_prob_per_ns == doctest::Approx(1e-4).epsilon(1e-12));

    CHECK_THROWS_AS(estimate_double_gate(s, 0.0, 1.0, 100.0, 100.0),
                    std::invalid_argument);
    CHECK_THROWS_AS(estimate_double_gate(s, 1e4, 1.0, 0.0, 100.0),
                    std::invalid_argument);
    CHECK_THROWS_AS(estimate_double_gate(s, 1e4, 1.0, 100.0, 0.0),
                    std::invalid_argument);
    CHECK_THROWS_AS(estimate_double_gate(s, 1e4, -1.0, 100.0, 100.0),
                    std::invalid_argument);
}

TEST_CASE("dark calibration merge copies the companion run's rate") {
    RunSummary lit;
    lit.click_rate_hz = 950.0;
    RunSummary dark;
    dark.click_rate_hz = 15.5;
    dark.gates_nominal = 123456;
    const RunSummary merged = with_dark_calibration(lit, dark);
    CHECK(merged.has_dark_calibration);
    CHECK(merged.dark_click_rate_hz == doctest::Approx(15.5));
    CHECK(merged.dark_calibration_gates == 123456);
    CHECK(merged.click_rate_hz == doctest::Approx(950.0));
}

TEST_CASE("device afterpulse model resolves temperature scaling") {
    DeviceConfig device = base_device();
    device.temperature_k = 210.0;
    device.trigger_prob = 0.9;
    device.traps = {{0.25, 2165.0, 0.014732177037694312, 223.0},
                    {0.25, 5075.0, 0.17741901050140682, 223.0}};

    const AfterpulseModel m = device_afterpulse_model(device, 100.0);
    REQUIRE(m.traps.size() == 2);
    CHECK(m.trigger_prob == doctest::Approx(0.9));
    CHECK(m.afterpulse_gate_ns == doctest::Approx(100.0));
    CHECK(m.traps[0].detrap_tau_ns == doctest::Approx(2560.0).epsilon(1e-9));
    CHECK(m.traps[1].detrap_tau_ns == doctest::Approx(10135.0).epsilon(1e-9));
    CHECK_FALSE(m.traps[0].activation_energy_ev.has_value());
    CHECK_FALSE(m.traps[1].activation_energy_ev.has_value());
    CHECK(m.traps[0].mean_filled == doctest::Approx(0.25));
}

TEST_CASE("afterpulse sweep matches its own closed form") {
    DeviceConfig device = base_device();
    device.traps = {{3.0, 3000.0, {}, 0.0}};
    const GateSchedule gate = double_gate_schedule();
    const std::vector<double> deadtimes = {1000.0, 4000.0, 12000.0};
    const AfterpulseSweep sweep = sweep_afterpulse_vs_deadtime(
        device, gate, pulse(10.0), deadtimes, 30000, 2024);

    REQUIRE(sweep.points.size() == 3);
    double prev_model = 1.0;
    for (std::size_t i = 0; i < sweep.points.size(); ++i) {
        const AfterpulseSweepPoint& p = sweep.points[i];
        CHECK(p.deadtime_ns == doctest::Approx(deadtimes[i]));
        CHECK(p.effective_deadtime_ns == doctest::Approx(deadtimes[i] + 50.0));
        CHECK(p.point_seed == derive_seed(2024, "afterpulse_sweep", i));
        CHECK(p.model_prob_per_ns < prev_model);
        prev_model = p.model_prob_per_ns;

        REQUIRE(p.triggered > 10000);
        // Measured afterpulse probability against the frozen-rate closed form
        // evaluated at the window midpoint, within 4 binomial sigma.
        const double measured = p.estimate.afterpulse_prob_per_ns;
        const double se = p.estimate.afterpulse_se;
        CHECK(std::abs(measured - p.model_prob_per_ns) < 4.0 * se);

        // Detection efficiency recovered through the estimator as well.
        CHECK(std::abs(p.estimate.detection_efficiency - 0.1) <
              4.0 * p.estimate.detection_se);
    }
}

TEST_CASE("afterpulse sweep is independent of the job count") {
    DeviceConfig device = base_device();
    device.dark_rate_per_ns = 1.6e-6;
    device.traps = {{0.5, 2000.0, {}, 0.0}};
    const GateSchedule gate = double_gate_schedule();
    const std::vector<double> deadtimes = {800.0, 2000.0, 5000.0, 9000.0};

    const AfterpulseSweep serial = sweep_afterpulse_vs_deadtime(
        device, gate, pulse(5.0), deadtimes, 5000, 77, 1);
    const AfterpulseSweep threaded = sweep_afterpulse_vs_deadtime(
        device, gate, pulse(5.0), deadtimes, 5000, 77, 4);

    REQUIRE(serial.points.size() == threaded.points.size());
    for (std::size_t i = 0; i < serial.points.size(); ++i) {
        CHECK(serial.points[i].estimate.afterpulse_prob_per_ns ==
              threaded.points[i].estimate.afterpulse_prob_per_ns);
        CHECK(serial.points[i].estimate.detection_efficiency ==
              threaded.points[i].estimate.detection_efficiency);
        CHECK(serial.points[i].afterpulse_cause_per_trigger ==
              threaded.points[i].afterpulse_cause_per_trigger);
        CHECK(serial.points[i].point_seed == threaded.points[i].point_seed);
    }
}

TEST_CASE("sweep errors surface from worker threads") {
    DeviceConfig device = base_device();
    const GateSchedule gate = double_gate_schedule();
    const std::vector<double> deadtimes = {1000.0, -1.0, 3000.0};
    CHECK_THROWS_AS(sweep_afterpulse_vs_deadtime(device, gate, pulse(1.0),
                                                 deadtimes, 100, 5, 3),
                    std::invalid_argument);

    GateSchedule no_cd = gate;
    no_cd.afterpulse_gate_ns = 0.0;
    CHECK_THROWS_AS(sweep_afterpulse_vs_deadtime(device, no_cd, pulse(1.0),
                                                 {1000.0}, 100, 5),
                    std::invalid_argument);
}

TEST_CASE("dark-count sweep tracks the thermal model") {
    const DeviceConfig device = base_device();
    const ThermalModel thermal = calibrated_thermal_model(0.35, 223.0, 1.6e-6);
    GateSchedule gate;
    gate.frequency_hz = 1e5;
    gate.gate_width_ns = 100.0;
    const DarkTemperatureSweep sweep = sweep_dark_vs_temperature(
        device, thermal, gate, {210.0, 238.0}, 500000, 314, 2);

    REQUIRE(sweep.points.size() == 2);
    CHECK(sweep.points[0].model_rate_per_ns ==
          doctest::Approx(4.594987125198719e-07).epsilon(1e-12));
    CHECK(sweep.points[1].model_rate_per_ns ==
          doctest::Approx(5.74369572082312e-06).epsilon(1e-12));
    for (const DarkTemperaturePoint& p : sweep.points) {
        CHECK(p.gates == 500000);
        CHECK(p.clicks > 0);
        CHECK(std::abs(p.dark_prob_per_ns - p.model_rate_per_ns) < 4.0 * p.se);
    }
}

TEST_CASE("free-running sweep: cascades raise short-deadtime rates") {
    DeviceConfig device = base_device();
    device.dark_rate_per_ns = 2e-7;
    device.traps = {{0.2, 615.0, {}, 0.0},
                    {0.2, 2560.0, {}, 0.0},
                    {0.2, 10135.0, {}, 0.0}};
    GateSchedule gate;
    gate.mode = GateMode::free_running;
    PhotonSource cw;
    cw.kind = SourceKind::continuous;
    cw.rate_hz = 1e4;

    const FreeRunningSweep sweep = sweep_free_running(
        device, gate, cw, {1000.0, 100000.0}, 5e8, 606, 2);

    REQUIRE(sweep.points.size() == 2);
    const FreeRunningPoint& shortd = sweep.points[0];
    const FreeRunningPoint& longd = sweep.points[1];

    // The closed form carries only the first afterpulse generation, so the
    // simulated rate must exceed it where trapping is strong.
    CHECK(shortd.measured_rate_hz > shortd.model_rate_hz);
    CHECK(shortd.clicks > 300);

    // Past the slowest trap the correction is negligible.
    CHECK(std::abs(longd.measured_rate_hz - longd.model_rate_hz) <
          4.0 * longd.measured_se_hz);
    CHECK(std::abs(longd.measured_noise_hz - longd.model_noise_hz) <
          4.0 * longd.noise_se_hz);

    CHECK(shortd.point_seed == derive_seed(606, "free_running_sweep", 0));
}

TEST_CASE("charge-persistence sweep decays toward the dark level") {
    DeviceConfig device = base_device();
    device.dark_rate_per_ns = 2e-5;
    device.charge_persistence =
        calibrated_charge_persistence(1.6e-6, 100.0);
    GateSchedule gate;
    gate.frequency_hz = 1e4;
    gate.gate_width_ns = 100.0;
    gate.deadtime_ns = 1000.0;

    const ChargePersistenceSweep sweep = sweep_charge_persistence(
        device, gate, pulse(50.0), {1.0, 10.0}, 100000, 888, 2);

    CHECK(sweep.dark_level_per_gate == doctest::Approx(2e-3).epsilon(1e-12));
    REQUIRE(sweep.points.size() == 2);

    const ChargePersistencePoint& near = sweep.points[0];
    CHECK(near.model_residual_per_gate ==
          doctest::Approx(charge_persistence_probability(
                              device.charge_persistence, 1.0, 50.0))
              .epsilon(1e-12));
    const double n_gates = 100000.0;
    const double res_se =
        std::sqrt(near.model_residual_per_gate / n_gates);
    CHECK(std::abs(near.residual_clicks_per_gate - near.model_residual_per_gate) <
          4.0 * res_se);
    // Identity between the reported noise and its ingredients.
    CHECK(near.noise_per_gate_per_photon ==
          doctest::Approx((near.residual_clicks_per_gate +
                           near.dark_clicks_per_gate) /
                          50.0)
              .epsilon(1e-12));

    const ChargePersistencePoint& far = sweep.points[1];
    CHECK(far.residual_clicks_per_gate < 0.1 * near.residual_clicks_per_gate);
    // ~200 expected dark clicks; 4 Poisson sigma around the configured level.
    CHECK(std::abs(far.dark_clicks_per_gate - 2e-3) <
          4.0 * std::sqrt(2e-3 / n_gates));
}

TEST_CASE("quench-timing sweep resolves the gate end") {
    DeviceConfig device = base_device();
    device.dark_rate_per_ns = 0.0;
    device.traps = {{2.0, 5000.0, {}, 0.0}};
    GateSchedule gate = double_gate_schedule();
    gate.deadtime_ns = 5000.0;

    const QuenchTimingSweep sweep = sweep_quench_time(
        device, gate, pulse(1.0), {97.0, 99.5, 103.0}, 20000, 99, 2);

    REQUIRE(sweep.points.size() == 3);
    const double flat = -std::expm1(-0.1);
    CHECK(std::abs(sweep.points[0].detection_per_gate - flat) <
          4.0 * sweep.points[0].detection_se);
    CHECK(sweep.points[1].detection_per_gate <
          0.8 * sweep.points[0].detection_per_gate);
    CHECK(sweep.points[2].detection_per_gate <
          0.05 * sweep.points[0].detection_per_gate);
    CHECK(sweep.points[0].afterpulse_per_trigger > 0.0);

    // No light reaching an armed gate: the afterpulse fraction is undefined.
    const QuenchTimingSweep silent = sweep_quench_time(
        device, gate, pulse(1.0), {110.0}, 200, 99);
    CHECK(silent.points[0].detection_per_gate == doctest::Approx(0.0));
    CHECK(std::isnan(silent.points[0].afterpulse_per_trigger));
}
