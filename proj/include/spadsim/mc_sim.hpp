#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spadsim/device_model.hpp"

// Discrete-event Monte Carlo of the detector. Candidate events (gate edges,
// photon arrivals, dark counts, trap releases) live in one time-ordered
// pending queue; ties are broken by event-kind priority (gate close, then
// release, then photon, then dark) and finally by insertion order. The first
// candidate that fires inside an armed window quenches the gate: one click
// per window, the rest of the window is dead.

namespace spadsim {

enum class ClickCause : std::uint8_t {
    photon = 0,
    dark = 1,
    afterpulse = 2,
    charge_persistence = 3,
};

enum class GateClass : std::uint8_t {
    detection = 0,   // serialized as "AB"
    afterpulse = 1,  // serialized as "CD"
    none = 2,        // free-running clicks
};

const char* to_string(ClickCause c);
const char* to_string(GateClass g);

struct ClickRecord {
    double timestamp_ns = 0.0;
    std::int64_t gate_index = -1;  // -1 in free-running mode
    ClickCause cause = ClickCause::dark;
    GateClass gate_class = GateClass::none;
    std::vector<std::uint32_t> trapped_filled;  // per species, at this click

    bool operator==(const ClickRecord&) const = default;
};

struct DeviceConfig {
    double detection_efficiency = 0.0;  // per photon, at full gate height
    double dark_rate_per_ns = 0.0;      // while armed
    double temperature_k = 223.0;
    std::vector<TrapSpecies> traps;
    double trigger_prob = 1.0;  // released carrier -> avalanche
    ChargePersistenceModel charge_persistence;  // amplitude 0 disables
    QuenchTimingModel quench;
};

enum class GateMode : std::uint8_t { gated = 0, free_running = 1 };

struct GateSchedule {
    GateMode mode = GateMode::gated;
    double frequency_hz = 0.0;       // gated: gate repetition rate
    double gate_width_ns = 0.0;      // detection gate width
    double deadtime_ns = 0.0;        // quench/reset to re-arm (and to the
                                     // afterpulse gate when one is enabled)
    double afterpulse_gate_ns = 0.0; // 0 disables the delayed second gate
    double photon_offset_ns = 0.0;   // pulse arrival relative to gate opening;
                                     // negative = pulse before the gate opens
};

/// Concrete offset for the named position presets: "front" (5 ns in),
/// "mid", "end" (5 ns before the nominal close), "before_gate" (5 ns early).
double resolve_photon_offset(const std::string& preset, double gate_width_ns);

enum class SourceKind : std::uint8_t { pulsed = 0, continuous = 1 };

struct PhotonSource {
    SourceKind kind = SourceKind::pulsed;
    double mean_photon_number = 0.0;  // pulsed: mean photons per gate
    double rate_hz = 0.0;             // continuous: photon arrival rate
    double pulse_fwhm_ns = 0.2;
};

struct TrapCounters {
    std::uint64_t created = 0;    // carriers filled into traps
    std::uint64_t processed = 0;  // release times consumed (fired or discarded)
    std::uint64_t remaining = 0;  // still pending at end of run
};

struct RunSummary {
    std::uint64_t gates_nominal = 0;    // scheduled gate periods in the run
    std::uint64_t gates_armed = 0;      // detection gates actually opened
    std::uint64_t gates_suppressed = 0; // skipped while the detector was dead
    std::uint64_t triggered = 0;        // detection-gate clicks
    std::uint64_t counts[3][4] = {};    // [GateClass][ClickCause]
    double duration_ns = 0.0;
    std::uint64_t seed = 0;

    // Estimator inputs. The unilluminated calibration rate is NaN until a
    // companion dark run is merged in (protocols.hpp).
    double click_rate_hz = 0.0;            // detection-gate clicks / duration
    double afterpulse_gate_rate_hz = 0.0;  // afterpulse-gate clicks / duration
    double dark_click_rate_hz = 0.0;
    bool has_dark_calibration = false;
    std::uint64_t dark_calibration_gates = 0;

    TrapCounters trap_counters;

    std::uint64_t total_clicks() const;
    std::uint64_t class_total(GateClass g) const;
    std::uint64_t count(GateClass g, ClickCause c) const;
};

/// Streaming consumer; run_* also collect records into a vector by default.
class ClickSink {
  public:
    virtual ~ClickSink() = default;
    virtual void on_click(const ClickRecord& record) = 0;
};

struct RunResult {
    std::vector<ClickRecord> clicks;
    RunSummary summary;
};

/// Fraction of the full avalanche charge developed before the gate closed,
/// for an avalanche starting `onset_to_gate_end_ns` before the nominal gate
/// end. The excess bias stays full until min(reaction, onset_to_gate_end),
/// then falls linearly over the closing time; the waveform is truncated at
/// the nominal gate close. Negative onsets are clamped to zero.
double relative_avalanche_charge(const QuenchTimingModel& q,
                                 double onset_to_gate_end_ns);

/// Periodically gated run over `n_gates` nominal gate periods. A click in
/// the detection gate quenches it; when an afterpulse gate is configured it
/// opens `deadtime_ns` after the quench completes. Nominal gates falling
/// inside a dead interval are suppressed. A negative photon offset routes
/// the pulse through the charge-persistence model instead (a residual-charge
/// click right at gate opening, competing first-arrival with everything
/// else).
RunResult run_gated(const DeviceConfig& device, const GateSchedule& schedule,
                    const PhotonSource& source, std::uint64_t n_gates,
                    std::uint64_t seed, ClickSink* sink = nullptr);

/// Free-running run of `duration_ns`. The detector is armed from t = 0;
/// every click is followed by exactly one dead interval (quench + deadtime).
/// Darks are homogeneous Poisson, continuous-wave photons Poisson at the
/// source rate with per-photon detection probability, and trap releases give
/// cascaded afterpulsing. Throws std::invalid_argument for a pulsed source.
RunResult run_free(const DeviceConfig& device, const GateSchedule& schedule,
                   const PhotonSource& source, double duration_ns,
                   std::uint64_t seed, ClickSink* sink = nullptr);

/// Charge-persistence injection: pulses arrive `advance_ns` before each gate
/// opening. Gated mode only.
RunResult inject_pre_gate_photons(const DeviceConfig& device,
                                  const GateSchedule& schedule,
                                  const PhotonSource& source, double advance_ns,
                                  std::uint64_t n_gates, std::uint64_t seed);

void validate(const DeviceConfig& device);
void validate(const GateSchedule& schedule);
void validate(const PhotonSource& source);

}  // namespace spadsim
