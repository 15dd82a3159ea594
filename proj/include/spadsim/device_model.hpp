#pragma once

#include <optional>
#include <vector>

// Physical models for an InGaAs/InP single-photon avalanche diode driven by
// an active quenching circuit.
//
// Unit conventions, used everywhere below the command-line layer:
//   * times in nanoseconds, rates in 1/ns
//   * temperatures in kelvin, energies in eV
//   * photon fluxes at external interfaces in Hz (converted on entry)

namespace spadsim {

inline constexpr double kBoltzmannEvPerK = 8.617333262e-5;

/// One population of carrier traps. `mean_filled` is the mean number of
/// carriers captured by a full-charge avalanche; `detrap_tau_ns` is the
/// release time constant at `reference_temp_k`. When `activation_energy_ev`
/// is set the time constant scales as exp(E/kT)/T^2 relative to the
/// reference temperature; otherwise it is temperature independent.
struct TrapSpecies {
    double mean_filled = 0.0;
    double detrap_tau_ns = 0.0;
    std::optional<double> activation_energy_ev;
    double reference_temp_k = 0.0;
};

/// Thermally activated dark-count model: rate(T) = A * T^2 * exp(-Ea / kT).
struct ThermalModel {
    double activation_energy_ev = 0.0;
    double prefactor_per_ns_k2 = 0.0;
};

/// Inputs of the closed-form afterpulse probability for the delayed
/// afterpulse gate: trap populations, the probability that a released
/// carrier triggers an avalanche, and the afterpulse gate width.
struct AfterpulseModel {
    std::vector<TrapSpecies> traps;
    double trigger_prob = 1.0;
    double afterpulse_gate_ns = 0.0;
};

/// Inputs of the closed-form free-running count rate. `dark_prob` is the
/// per-trial dark probability (one trial per expected photon arrival),
/// `afterpulse_mean` the integrated afterpulse contribution past the
/// deadtime, both dimensionless.
struct FreeRunningModel {
    double detection_efficiency = 0.0;
    double dark_prob = 0.0;
    double mean_photon_number = 0.0;
    double photon_rate_hz = 0.0;
    double deadtime_ns = 0.0;
    double afterpulse_mean = 0.0;
    double integration_horizon_ns = 100000.0;
};

/// Residual-charge ("twilight") noise for photons arriving a short time
/// before the gate opens: P = min(1, mu * amplitude * exp(-dt/decay_tau)).
struct ChargePersistenceModel {
    double amplitude = 0.0;
    double decay_tau_ns = 1.5;
};

/// Active quenching timing. The comparator reacts `reaction_ns` after the
/// avalanche onset, then the switch removes the excess bias linearly over
/// `closing_ns`. `spread_ns` is an optional gaussian jitter applied to
/// emitted click timestamps only.
struct QuenchTimingModel {
    double reaction_ns = 0.2;
    double closing_ns = 1.0;
    double spread_ns = 0.0;
};

/// Throwing validators; each raises std::invalid_argument naming the field.
void validate(const std::vector<TrapSpecies>& traps);
void validate(const ThermalModel& m);
void validate(const AfterpulseModel& m);
void validate(const FreeRunningModel& m);
void validate(const ChargePersistenceModel& m);
void validate(const QuenchTimingModel& m);

/// Release time constant of `trap` at temperature `temp_k`, following
/// exp(E/kT)/T^2 scaling around the reference temperature. Identity when no
/// activation energy is configured or at the reference temperature itself.
double scale_detrap_tau(const TrapSpecies& trap, double temp_k);

/// Instantaneous release rate (1/ns) of carriers trapped by one full-charge
/// avalanche, a time `delay_ns` after trap filling:
/// sum_i mean_filled_i / tau_i * exp(-delay / tau_i).
/// Throws std::domain_error for negative delays. `temp_k`, when given,
/// rescales each species' time constant first.
double detrapping_rate(const std::vector<TrapSpecies>& traps, double delay_ns);
double detrapping_rate(const std::vector<TrapSpecies>& traps, double delay_ns,
                       double temp_k);

/// Probability density (1/ns) that the afterpulse gate opening `delay_ns`
/// after the quench registers a click:
/// (1 - exp(-rate(delay) * trigger_prob * gate_width)) / gate_width.
double afterpulse_probability(const AfterpulseModel& m, double delay_ns);
double afterpulse_probability(const AfterpulseModel& m, double delay_ns,
                              double temp_k);

/// Dark-count rate (1/ns) of the thermal model at `temp_k`.
double dark_rate(const ThermalModel& m, double temp_k);

/// Thermal model with the prefactor chosen so that
/// dark_rate(T = anchor_temp_k) == anchor_rate_per_ns.
ThermalModel calibrated_thermal_model(double activation_energy_ev,
                                      double anchor_temp_k,
                                      double anchor_rate_per_ns);

/// Expected afterpulses per click integrated from `deadtime_ns` to
/// `horizon_ns`: sum_i mean_filled_i * trigger_prob *
/// (exp(-deadtime/tau_i) - exp(-horizon/tau_i)).
double integrated_afterpulse(const AfterpulseModel& m, double deadtime_ns,
                             double horizon_ns);

/// Free-running count rate in Hz:
///   eta = 1 - exp(-mu * P_de) * (1 - P_dark)
///   R   = eta * N * (1 - eta * N * tau_d) * (1 + afterpulse_mean)
/// Throws std::runtime_error when eta * N * tau_d >= 1 (model out of its
/// validity range). With mu = 0 this reduces to the noise rate.
double free_running_rate(const FreeRunningModel& m);

/// Click probability for a pulse of mean photon number `mu` arriving
/// `delta_ns` before the gate opens: min(1, mu * A * exp(-delta/decay_tau)).
double charge_persistence_probability(const ChargePersistenceModel& m,
                                      double delta_ns, double mu);

/// Charge-persistence model whose per-photon click probability at
/// `anchor_delta_ns` before the gate equals `dark_fraction` of the per-gate
/// dark count level `dark_rate_per_ns * gate_width_ns`.
ChargePersistenceModel calibrated_charge_persistence(double dark_rate_per_ns,
                                                     double gate_width_ns,
                                                     double decay_tau_ns = 1.5,
                                                     double dark_fraction = 0.1,
                                                     double anchor_delta_ns = 1.0);

}  // namespace spadsim
