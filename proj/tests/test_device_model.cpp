#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "spadsim/device_model.hpp"

using namespace spadsim;

namespace {

// Adaptive Simpson quadrature, used as an independent check of the closed-form
// trap integrals.
double simpson(const std::function<double(double)>& f, double a, double b) {
    const double c = 0.5 * (a + b);
    return (b - a) / 6.0 * (f(a) + 4.0 * f(c) + f(b));
}

double integrate(const std::function<double(double)>& f, double a, double b,
                 double tol, int depth = 0) {
    const double c = 0.5 * (a + b);
    const double whole = simpson(f, a, b);
    const double halves = simpson(f, a, c) + simpson(f, c, b);
    if (depth > 40 || std::abs(halves - whole) < 15.0 * tol)
        return halves + (halves - whole) / 15.0;
    return integrate(f, a, c, 0.5 * tol, depth + 1) +
           integrate(f, c, b, 0.5 * tol, depth + 1);
}

std::vector<TrapSpecies> two_species() {
    return {{0.35, 860.0, {}, 0.0}, {0.3, 4385.0, {}, 0.0}};
}

}  // namespace

TEST_CASE("detrapping rate matches hand-computed sums") {
    const std::vector<TrapSpecies> unit = {{1.0, 1135.0, {}, 0.0},
                                           {1.0, 5645.0, {}, 0.0}};
    CHECK(detrapping_rate(unit, 0.0) ==
          doctest::Approx(0.0010582051872344246).epsilon(1e-12));

    const std::vector<TrapSpecies> one = {{0.2, 10.0, {}, 0.0}};
    CHECK(detrapping_rate(one, 10.0) ==
          doctest::Approx(0.007357588823428847).epsilon(1e-12));

    CHECK_THROWS_AS(detrapping_rate(one, -1.0), std::domain_error);
}

TEST_CASE("detrapping rate decays and is convex in the delay") {
    const auto traps = two_species();
    double prev = detrapping_rate(traps, 0.0);
    double prev_diff = 0.0;
    bool first = true;
    for (double d = 250.0; d <= 20000.0; d += 250.0) {
        const double r = detrapping_rate(traps, d);
        CHECK(r > 0.0);
        CHECK(r < prev);
        const double diff = r - prev;
        if (!first) CHECK(diff > prev_diff);  // differences shrink in magnitude
        prev_diff = diff;
        prev = r;
        first = false;
    }
}

TEST_CASE("temperature scaling of the release time constant") {
    TrapSpecies trap{0.3, 860.0, 0.10, 223.0};
    CHECK(scale_detrap_tau(trap, 210.0) / 860.0 ==
          doctest::Approx(1.5562354103387488).epsilon(1e-12));
    CHECK(scale_detrap_tau(trap, 223.0) == doctest::Approx(860.0));

    TrapSpecies free_trap{0.3, 860.0, {}, 0.0};
    CHECK(scale_detrap_tau(free_trap, 150.0) == doctest::Approx(860.0));
}

TEST_CASE("afterpulse probability density, plain and temperature resolved") {
    AfterpulseModel m;
    m.traps = two_species();
    m.trigger_prob = 0.9;
    m.afterpulse_gate_ns = 100.0;
    CHECK(afterpulse_probability(m, 1000.0) ==
          doctest::Approx(0.00016219146951521269).epsilon(1e-12));

    AfterpulseModel hot = m;
    hot.traps[0].activation_energy_ev = 0.10;
    hot.traps[0].reference_temp_k = 223.0;
    CHECK(afterpulse_probability(hot, 1000.0, 210.0) ==
          doctest::Approx(0.00015922746842548353).epsilon(1e-12));
}

TEST_CASE("afterpulse probability is bounded and decreasing") {
    AfterpulseModel m;
    m.traps = two_species();
    m.trigger_prob = 0.7;
    m.afterpulse_gate_ns = 100.0;
    double prev = 1e9;
    for (double d = 0.0; d <= 50000.0; d += 500.0) {
        const double p = afterpulse_probability(m, d);
        const double rate = detrapping_rate(m.traps, d);
        CHECK(p * m.afterpulse_gate_ns >= 0.0);
        CHECK(p * m.afterpulse_gate_ns < 1.0);
        // 1 - exp(-x) <= x makes the density a lower bound of the raw rate.
        CHECK(p <= rate * m.trigger_prob + 1e-18);
        CHECK(p < prev);
        prev = p;
    }
}

TEST_CASE("integrated afterpulse equals the quadrature of the release rate") {
    AfterpulseModel m;
    m.traps = two_species();
    m.trigger_prob = 0.9;
    m.afterpulse_gate_ns = 100.0;

    CHECK(integrated_afterpulse(m, 1000.0, 100000.0) ==
          doctest::Approx(0.3134157208711876).epsilon(1e-12));

    const auto rate = [&](double t) {
        return m.trigger_prob * detrapping_rate(m.traps, t);
    };
    const double quad = integrate(rate, 1000.0, 100000.0, 1e-13);
    CHECK(integrated_afterpulse(m, 1000.0, 100000.0) ==
          doctest::Approx(quad).epsilon(1e-9));

    // Single species sanity point: N = 1, deadtime = tau, far horizon.
    AfterpulseModel single;
    single.traps = {{1.0, 500.0, {}, 0.0}};
    single.afterpulse_gate_ns = 100.0;
    CHECK(integrated_afterpulse(single, 500.0, 50000.0) ==
          doctest::Approx(0.36787944117144233).epsilon(1e-12));

    CHECK_THROWS_AS(integrated_afterpulse(m, 1000.0, 999.0), std::domain_error);
}

TEST_CASE("thermal model calibration and Arrhenius form") {
    const ThermalModel m = calibrated_thermal_model(0.35, 223.0, 1.6e-6);
    CHECK(m.activation_energy_ev == doctest::Approx(0.35));
    CHECK(m.prefactor_per_ns_k2 ==
          doctest::Approx(0.0026150260434454134).epsilon(1e-12));
    CHECK(dark_rate(m, 223.0) == doctest::Approx(1.6e-6).epsilon(1e-12));
    CHECK(dark_rate(m, 210.0) ==
          doctest::Approx(4.594987125198719e-07).epsilon(1e-12));
    CHECK(dark_rate(m, 238.0) ==
          doctest::Approx(5.74369572082312e-06).epsilon(1e-12));

    // ln(rate / T^2) must be affine in 1/(kT) with slope -Ea.
    const double t1 = 205.0, t2 = 245.0;
    const double lhs = std::log(dark_rate(m, t1) / (t1 * t1)) -
                       std::log(dark_rate(m, t2) / (t2 * t2));
    const double rhs = -0.35 * (1.0 / (kBoltzmannEvPerK * t1) -
                                1.0 / (kBoltzmannEvPerK * t2));
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));

    CHECK_THROWS_AS(calibrated_thermal_model(0.35, 223.0, -1.0),
                    std::domain_error);
    CHECK_THROWS_AS(calibrated_thermal_model(0.35, 0.0, 1.6e-6),
                    std::domain_error);
}

TEST_CASE("free-running closed form") {
    FreeRunningModel m;
    m.detection_efficiency = 0.1;
    m.dark_prob = 0.02;
    m.mean_photon_number = 1.0;
    m.photon_rate_hz = 10000.0;
    m.deadtime_ns = 10000.0;
    m.afterpulse_mean = 0.3;
    CHECK(free_running_rate(m) ==
          doctest::Approx(1455.6953155445788).epsilon(1e-12));

    FreeRunningModel noise = m;
    noise.mean_photon_number = 0.0;
    const double eta = noise.dark_prob;
    const double expected = eta * 10000.0 * (1.0 - eta * 10000.0 * 1e-5) * 1.3;
    CHECK(free_running_rate(noise) == doctest::Approx(expected).epsilon(1e-12));

    FreeRunningModel saturated = m;
    saturated.deadtime_ns = 1e9;  // eta N tau >= 1
    CHECK_THROWS_AS(free_running_rate(saturated), std::runtime_error);
}

TEST_CASE("free-running rate derivative in the mean photon number") {
    FreeRunningModel m;
    m.detection_efficiency = 0.17;
    m.dark_prob = 0.0;
    m.mean_photon_number = 0.8;
    m.photon_rate_hz = 20000.0;
    m.deadtime_ns = 4000.0;
    m.afterpulse_mean = 0.25;

    const double h = 1e-6;
    FreeRunningModel up = m, down = m;
    up.mean_photon_number += h;
    down.mean_photon_number -= h;
    const double numeric =
        (free_running_rate(up) - free_running_rate(down)) / (2.0 * h);

    const double p = m.detection_efficiency;
    const double eta = 1.0 - std::exp(-m.mean_photon_number * p);
    const double deta = p * std::exp(-m.mean_photon_number * p);
    const double n = m.photon_rate_hz;
    const double tau = m.deadtime_ns * 1e-9;
    const double analytic =
        deta * n * (1.0 - 2.0 * eta * n * tau) * (1.0 + m.afterpulse_mean);
    CHECK(numeric == doctest::Approx(analytic).epsilon(1e-6));
}

TEST_CASE("charge persistence calibration and probability") {
    const ChargePersistenceModel m =
        calibrated_charge_persistence(1.6e-6, 100.0);
    CHECK(m.amplitude == doctest::Approx(3.116374465687481e-05).epsilon(1e-12));
    CHECK(m.decay_tau_ns == doctest::Approx(1.5));

    CHECK(charge_persistence_probability(m, 1.0, 50.0) ==
          doctest::Approx(8.0e-4).epsilon(1e-12));
    // Per photon the anchor point sits at 10% of the per-gate dark level.
    CHECK(charge_persistence_probability(m, 1.0, 1.0) / (1.6e-6 * 100.0) ==
          doctest::Approx(0.1).epsilon(1e-12));
    CHECK(charge_persistence_probability(m, 10.0, 1.0) / (1.6e-6 * 100.0) ==
          doctest::Approx(0.00024787521766663574).epsilon(1e-12));

    CHECK(charge_persistence_probability(m, 0.0, 1e9) == doctest::Approx(1.0));
    CHECK_THROWS_AS(charge_persistence_probability(m, -0.5, 1.0),
                    std::domain_error);
    CHECK_THROWS_AS(charge_persistence_probability(m, 0.5, -1.0),
                    std::domain_error);
}

TEST_CASE("validators reject malformed configurations") {
    std::vector<TrapSpecies> bad_order = {{0.3, 4385.0, {}, 0.0},
                                          {0.3, 860.0, {}, 0.0}};
    CHECK_THROWS_AS(validate(bad_order), std::invalid_argument);

    std::vector<TrapSpecies> equal_taus = {{0.3, 860.0, {}, 0.0},
                                           {0.3, 860.0, {}, 0.0}};
    CHECK_THROWS_AS(validate(equal_taus), std::invalid_argument);

    std::vector<TrapSpecies> missing_ref = {{0.3, 860.0, 0.1, 0.0}};
    CHECK_THROWS_AS(validate(missing_ref), std::invalid_argument);

    std::vector<TrapSpecies> ok = {{0.3, 860.0, 0.1, 223.0},
                                   {0.2, 4385.0, {}, 0.0}};
    CHECK_NOTHROW(validate(ok));

    ThermalModel negative_prefactor{0.35, -1.0};
    CHECK_THROWS_AS(validate(negative_prefactor), std::invalid_argument);

    ChargePersistenceModel bad_decay{1e-5, 0.0};
    CHECK_THROWS_AS(validate(bad_decay), std::invalid_argument);

    QuenchTimingModel bad_quench{-0.1, 1.0, 0.0};
    CHECK_THROWS_AS(validate(bad_quench), std::invalid_argument);

    FreeRunningModel bad_free;
    bad_free.detection_efficiency = 1.5;
    CHECK_THROWS_AS(validate(bad_free), std::invalid_argument);
}
