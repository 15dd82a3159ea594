#include "spadsim/device_model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace spadsim {

namespace {

void require(bool ok, const std::string& message) {
    if (!ok) throw std::invalid_argument(message);
}

}  // namespace

void validate(const std::vector<TrapSpecies>& traps) {
    double prev_tau = 0.0;
    for (std::size_t i = 0; i < traps.size(); ++i) {
        const TrapSpecies& t = traps[i];
        const std::string at = "traps[" + std::to_string(i) + "].";
        require(t.mean_filled >= 0.0, at + "mean_filled: must be >= 0");
        require(t.detrap_tau_ns > 0.0, at + "detrap_tau_ns: must be > 0");
        require(t.detrap_tau_ns > prev_tau,
                at + "detrap_tau_ns: must be strictly increasing");
        if (t.activation_energy_ev) {
            require(*t.activation_energy_ev >= 0.0,
                    at + "activation_energy_ev: must be >= 0");
            require(t.reference_temp_k > 0.0,
                    at + "reference_temp_k: required with activation_energy_ev");
        }
        prev_tau = t.detrap_tau_ns;
    }
}

void validate(const ThermalModel& m) {
    require(m.activation_energy_ev >= 0.0,
            "thermal.activation_energy_ev: must be >= 0");
    require(m.prefactor_per_ns_k2 >= 0.0,
            "thermal.prefactor_per_ns_k2: must be >= 0");
}

void validate(const AfterpulseModel& m) {
    validate(m.traps);
    require(m.trigger_prob > 0.0 && m.trigger_prob <= 1.0,
            "afterpulse.trigger_prob: must be in (0, 1]");
    require(m.afterpulse_gate_ns > 0.0,
            "afterpulse.afterpulse_gate_ns: must be > 0");
}

void validate(const FreeRunningModel& m) {
    require(m.detection_efficiency >= 0.0 && m.detection_efficiency <= 1.0,
            "free_running.detection_efficiency: must be in [0, 1]");
    require(m.dark_prob >= 0.0 && m.dark_prob < 1.0,
            "free_running.dark_prob: must be in [0, 1)");
    require(m.mean_photon_number >= 0.0,
            "free_running.mean_photon_number: must be >= 0");
    require(m.photon_rate_hz >= 0.0, "free_running.photon_rate_hz: must be >= 0");
    require(m.deadtime_ns >= 0.0, "free_running.deadtime_ns: must be >= 0");
    require(m.afterpulse_mean >= 0.0, "free_running.afterpulse_mean: must be >= 0");
    require(m.integration_horizon_ns > 0.0,
            "free_running.integration_horizon_ns: must be > 0");
}

void validate(const ChargePersistenceModel& m) {
    require(m.amplitude >= 0.0 && m.amplitude <= 1.0,
            "charge_persistence.amplitude: must be in [0, 1]");
    require(m.decay_tau_ns > 0.0, "charge_persistence.decay_tau_ns: must be > 0");
}

void validate(const QuenchTimingModel& m) {
    require(m.reaction_ns >= 0.0, "quench.reaction_ns: must be >= 0");
    require(m.closing_ns > 0.0, "quench.closing_ns: must be > 0");
    require(m.spread_ns >= 0.0, "quench.spread_ns: must be >= 0");
}

double scale_detrap_tau(const TrapSpecies& trap, double temp_k) {
    if (temp_k <= 0.0) throw std::domain_error("temp_k: must be > 0");
    if (!trap.activation_energy_ev) return trap.detrap_tau_ns;
    const double t_ref = trap.reference_temp_k;
    if (t_ref <= 0.0)
        throw std::invalid_argument("reference_temp_k: required with activation_energy_ev");
    const double ea = *trap.activation_energy_ev;
    // tau(T) ~ exp(Ea/kT)/T^2, as a ratio against the reference temperature.
    const double ratio = std::exp(ea / kBoltzmannEvPerK * (1.0 / temp_k - 1.0 / t_ref)) *
                         (t_ref / temp_k) * (t_ref / temp_k);
    return trap.detrap_tau_ns * ratio;
}

double detrapping_rate(const std::vector<TrapSpecies>& traps, double delay_ns) {
    if (delay_ns < 0.0) throw std::domain_error("delay_ns: must be >= 0");
    double rate = 0.0;
    for (const TrapSpecies& t : traps)
        rate += t.mean_filled / t.detrap_tau_ns * std::exp(-delay_ns / t.detrap_tau_ns);
    return rate;
}

double detrapping_rate(const std::vector<TrapSpecies>& traps, double delay_ns,
                       double temp_k) {
    if (delay_ns < 0.0) throw std::domain_error("delay_ns: must be >= 0");
    double rate = 0.0;
    for (const TrapSpecies& t : traps) {
        const double tau = scale_detrap_tau(t, temp_k);
        rate += t.mean_filled / tau * std::exp(-delay_ns / tau);
    }
    return rate;
}

double afterpulse_probability(const AfterpulseModel& m, double delay_ns) {
    const double exponent =
        detrapping_rate(m.traps, delay_ns) * m.trigger_prob * m.afterpulse_gate_ns;
    return -std::expm1(-exponent) / m.afterpulse_gate_ns;
}

double afterpulse_probability(const AfterpulseModel& m, double delay_ns,
                              double temp_k) {
    const double exponent =
        detrapping_rate(m.traps, delay_ns, temp_k) * m.trigger_prob * m.afterpulse_gate_ns;
    return -std::expm1(-exponent) / m.afterpulse_gate_ns;
}

double dark_rate(const ThermalModel& m, double temp_k) {
    if (temp_k <= 0.0) throw std::domain_error("temp_k: must be > 0");
    return m.prefactor_per_ns_k2 * temp_k * temp_k *
           std::exp(-m.activation_energy_ev / (kBoltzmannEvPerK * temp_k));
}

ThermalModel calibrated_thermal_model(double activation_energy_ev,
                                      double anchor_temp_k,
                                      double anchor_rate_per_ns) {
    if (anchor_temp_k <= 0.0) throw std::domain_error("anchor_temp_k: must be > 0");
    if (anchor_rate_per_ns <= 0.0)
        throw std::domain_error("anchor_rate_per_ns: must be > 0");
    ThermalModel m;
    m.activation_energy_ev = activation_energy_ev;
    m.prefactor_per_ns_k2 =
        anchor_rate_per_ns /
        (anchor_temp_k * anchor_temp_k *
         std::exp(-activation_energy_ev / (kBoltzmannEvPerK * anchor_temp_k)));
    return m;
}

double integrated_afterpulse(const AfterpulseModel& m, double deadtime_ns,
                             double horizon_ns) {
    if (deadtime_ns < 0.0) throw std::domain_error("deadtime_ns: must be >= 0");
    if (horizon_ns < deadtime_ns)
        throw std::domain_error("horizon_ns: must be >= deadtime_ns");
    double total = 0.0;
    for (const TrapSpecies& t : m.traps)
        total += t.mean_filled * m.trigger_prob *
                 (std::exp(-deadtime_ns / t.detrap_tau_ns) -
                  std::exp(-horizon_ns / t.detrap_tau_ns));
    return total;
}

double free_running_rate(const FreeRunningModel& m) {
    const double eta = 1.0 - std::exp(-m.mean_photon_number * m.detection_efficiency) *
                                 (1.0 - m.dark_prob);
    const double occupancy = eta * m.photon_rate_hz * m.deadtime_ns * 1e-9;
    if (occupancy >= 1.0)
        throw std::runtime_error(
            "free_running_rate: eta * N * tau_d >= 1, outside model validity");
    return eta * m.photon_rate_hz * (1.0 - occupancy) * (1.0 + m.afterpulse_mean);
}

double charge_persistence_probability(const ChargePersistenceModel& m,
                                      double delta_ns, double mu) {
    if (delta_ns < 0.0) throw std::domain_error("delta_ns: must be >= 0");
    if (mu < 0.0) throw std::domain_error("mu: must be >= 0");
    return std::min(1.0, mu * m.amplitude * std::exp(-delta_ns / m.decay_tau_ns));
}

ChargePersistenceModel calibrated_charge_persistence(double dark_rate_per_ns,
                                                     double gate_width_ns,
                                                     double decay_tau_ns,
                                                     double dark_fraction,
                                                     double anchor_delta_ns) {
    ChargePersistenceModel m;
    m.decay_tau_ns = decay_tau_ns;
    m.amplitude = dark_fraction * dark_rate_per_ns * gate_width_ns *
                  std::exp(anchor_delta_ns / decay_tau_ns);
    validate(m);
    return m;
}

}  // namespace spadsim
