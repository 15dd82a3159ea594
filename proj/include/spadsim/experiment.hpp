#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "spadsim/fitters.hpp"
#include "spadsim/protocols.hpp"

// Experiment descriptions loaded from JSON, executed into CSV tables plus a
// JSON report that embeds the configuration, per-point seeds, fit results and
// a digest of the written data. Outputs carry no timestamps so a rerun of the
// same description is byte identical.

namespace spadsim {

inline constexpr const char* kVersion = "1.0.0";

enum class ExperimentKind : int {
    double_gate = 0,
    afterpulse_sweep = 1,
    arrhenius = 2,
    free_running = 3,
    charge_persistence = 4,
    quench_time = 5,
};

const char* to_string(ExperimentKind kind);

/// Raised when an input or output file cannot be read or written.
class IoError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Raised for unusable experiment descriptions; carries one message per
/// offending field.
class SpecError : public std::runtime_error {
  public:
    SpecError(const std::string& what, std::vector<std::string> diagnostics)
        : std::runtime_error(what), diagnostics_(std::move(diagnostics)) {}

    const std::vector<std::string>& diagnostics() const { return diagnostics_; }

  private:
    std::vector<std::string> diagnostics_;
};

struct FitSettings {
    bool enabled = true;
    // afterpulse_sweep
    int min_order = 1;
    int max_order = 3;
    std::optional<int> fixed_order;
    // arrhenius
    ArrheniusKind kind = ArrheniusKind::rate;
    std::optional<double> min_temp_k;
    std::optional<double> max_temp_k;
    // free_running: fixed release constants; defaults to the device traps
    // rescaled to the operating temperature
    std::vector<double> detrap_tau_ns;
};

struct OutputSettings {
    std::string prefix;        // defaults to the experiment kind
    bool write_clicks = false; // double_gate: dump the click records
    int model_curve_points = 200;
};

struct ExperimentSpec {
    ExperimentKind kind = ExperimentKind::double_gate;
    std::uint64_t seed = 0;
    DeviceConfig device;
    GateSchedule schedule;
    PhotonSource source;

    std::vector<double> deadtimes_ns;    // afterpulse_sweep, free_running
    std::vector<double> temperatures_k;  // arrhenius
    std::vector<double> advances_ns;     // charge_persistence
    std::vector<double> offsets_ns;      // quench_time

    std::uint64_t gates = 0;   // gated statistics
    double duration_ns = 0.0;  // free-running statistics

    std::optional<ThermalModel> thermal;  // arrhenius
    FitSettings fit;
    OutputSettings output;

    nlohmann::ordered_json raw;  // original description, embedded in reports
};

/// Parses a JSON experiment description. Structural problems (wrong types,
/// missing required fields, unknown enum values) throw SpecError listing
/// every offending field.
ExperimentSpec parse_experiment_json(const std::string& text);
ExperimentSpec load_experiment_file(const std::string& path);

/// Semantic validation beyond structure: ranges, duty cycle, grid/mode
/// consistency. Throws SpecError listing every violation.
void validate(const ExperimentSpec& spec);

struct RunOptions {
    bool strict = false;  // non-converged fit becomes status 3
    std::optional<std::uint64_t> seed_override;
    int jobs = 1;
    std::string output_dir = ".";
};

struct ExperimentOutcome {
    int status = 0;  // 0 ok; 3 fit did not converge under strict mode
    bool fit_converged = true;
    std::vector<std::string> files_written;
    nlohmann::ordered_json report;
};

/// Runs the experiment and writes `<prefix>_points.csv`, a dense
/// `<prefix>_model.csv` overlay where the experiment has one, and
/// `<prefix>_report.json`. Validates first; I/O failures throw
/// std::runtime_error.
ExperimentOutcome run_experiment(const ExperimentSpec& spec,
                                 const RunOptions& options = {});

}  // namespace spadsim
