#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "spadsim/click_io.hpp"
#include "spadsim/experiment.hpp"
#include "spadsim/rng.hpp"

using namespace spadsim;
namespace fs = std::filesystem;

namespace {

std::string fixture(const std::string& name) {
    return std::string(SPADSIM_FIXTURE_DIR) + "/" + name;
}

fs::path fresh_dir(const std::string& label) {
    static int counter = 0;
    const fs::path dir =
        fs::temp_directory_path() /
        ("spadsim_exp_" + label + "_" + std::to_string(counter++));
    fs::remove_all(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE_MESSAGE(is.good(), "cannot open " << path.string());
    std::ostringstream buffer;
    buffer << is.rdbuf();
    return buffer.str();
}

std::string first_line(const std::string& text) {
    return text.substr(0, text.find('\n'));
}

bool mentions(const SpecError& error, const std::string& needle) {
    for (const std::string& d : error.diagnostics())
        if (d.find(needle) != std::string::npos) return true;
    return false;
}

std::string hex64(std::uint64_t value) {
    char buf[19] = "0x0000000000000000";
    char tmp[17];
    auto [ptr, ec] = std::to_chars(tmp, tmp + sizeof(tmp), value, 16);
    (void)ec;
    const std::size_t digits = static_cast<std::size_t>(ptr - tmp);
    for (std::size_t i = 0; i < digits; ++i)
        buf[2 + 16 - digits + i] = tmp[i];
    return std::string(buf, 18);
}

// A compact afterpulse sweep used by the run-level tests; the sweep block is
// injected so the grid forms can be varied.
std::string small_sweep_json(const std::string& sweep,
                             const std::string& fit) {
    return std::string(R"({
  "experiment": "afterpulse_sweep",
  "seed": 4242,
  "device": {
    "detection_efficiency": 0.10,
    "dark_rate_per_ns": 1.0e-6,
    "temperature_k": 223,
    "traps": [{"mean_filled": 1.0, "detrap_tau_ns": 3000}]
  },
  "gate": {
    "frequency_hz": 100000,
    "gate_width_ns": 100,
    "afterpulse_gate_ns": 100,
    "photon_offset": "mid"
  },
  "source": {"kind": "pulsed", "mean_photon_number": 10},
  "sweep": )") +
           sweep + R"(,
  "statistics": {"gates": 6000},
  "fit": )" + fit +
           R"(,
  "output": {"prefix": "ap_small", "model_curve_points": 16}
})";
}

}  // namespace

TEST_CASE("parser reports every structural problem at once") {
    const std::string text = R"({
      "experiment": "double_gate",
      "bogus": 1,
      "device": {"detection_efficiency": 0.1, "dark_rate_per_ns": 1e-6},
      "gate": {"frequency_hz": "fast", "gate_width_ns": 100},
      "statistics": {"gates": 1000}
    })";
    try {
        parse_experiment_json(text);
        FAIL("expected a SpecError");
    } catch (const SpecError& e) {
        CHECK(e.diagnostics().size() >= 3);
        CHECK(mentions(e, "bogus: unknown field"));
        CHECK(mentions(e, "seed: required non-negative integer is missing"));
        CHECK(mentions(e, "gate.frequency_hz: must be a number"));
    }
}

TEST_CASE("parser rejects text that is not JSON") {
    try {
        parse_experiment_json("this is not json {{{");
        FAIL("expected a SpecError");
    } catch (const SpecError& e) {
        CHECK(std::string(e.what()) ==
              "experiment description is not valid JSON");
        CHECK(e.diagnostics().size() == 1);
    }
}

TEST_CASE("parser rejects unknown experiment kinds") {
    const std::string text = R"({
      "experiment": "teleportation",
      "seed": 1,
      "device": {"detection_efficiency": 0.1, "dark_rate_per_ns": 1e-6},
      "gate": {"frequency_hz": 10000, "gate_width_ns": 100},
      "statistics": {"gates": 10}
    })";
    try {
        parse_experiment_json(text);
        FAIL("expected a SpecError");
    } catch (const SpecError& e) {
        CHECK(mentions(e, "unknown kind 'teleportation'"));
        CHECK(mentions(e, "expected double_gate"));
    }
}

TEST_CASE("sweep grids parse from arrays and range objects") {
    const ExperimentSpec arr = parse_experiment_json(
        small_sweep_json(R"({"deadtimes_ns": [5, 10, 20]})", "{}"));
    CHECK(arr.deadtimes_ns == std::vector<double>{5.0, 10.0, 20.0});

    const ExperimentSpec log_grid = parse_experiment_json(small_sweep_json(
        R"({"deadtimes_ns": {"start": 100, "stop": 1000, "points": 4,
            "spacing": "log"}})",
        "{}"));
    REQUIRE(log_grid.deadtimes_ns.size() == 4);
    CHECK(log_grid.deadtimes_ns[0] == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(log_grid.deadtimes_ns[1] ==
          doctest::Approx(215.4434690031884).epsilon(1e-12));
    CHECK(log_grid.deadtimes_ns[3] == doctest::Approx(1000.0).epsilon(1e-12));

    const ExperimentSpec lin = parse_experiment_json(small_sweep_json(
        R"({"deadtimes_ns": {"start": 0, "stop": 30, "points": 4,
            "spacing": "linear"}})",
        "{}"));
    CHECK(lin.deadtimes_ns == std::vector<double>{0.0, 10.0, 20.0, 30.0});

    try {
        parse_experiment_json(small_sweep_json(
            R"({"deadtimes_ns": {"start": 1, "stop": 2, "points": 4,
                "spacing": "cubic"}})",
            "{}"));
        FAIL("expected a SpecError");
    } catch (const SpecError& e) {
        CHECK(mentions(e, "spacing"));
    }

    try {
        parse_experiment_json(small_sweep_json(
            R"({"deadtimes_ns": {"start": 1, "stop": 2, "points": 1}})",
            "{}"));
        FAIL("expected a SpecError");
    } catch (const SpecError& e) {
        CHECK(mentions(e, "points"));
    }
}

TEST_CASE("omitted fields fall back to documented defaults") {
    const ExperimentSpec spec = parse_experiment_json(R"({
      "experiment": "double_gate",
      "seed": 7,
      "device": {"detection_efficiency": 0.1, "dark_rate_per_ns": 1e-6},
      "gate": {"frequency_hz": 10000, "gate_width_ns": 100,
               "afterpulse_gate_ns": 100},
      "statistics": {"gates": 100}
    })");
    CHECK(spec.source.kind == SourceKind::pulsed);
    CHECK(spec.source.mean_photon_number == 0.0);
    CHECK(spec.source.pulse_fwhm_ns == doctest::Approx(0.2));
    CHECK(spec.schedule.photon_offset_ns == doctest::Approx(50.0));
    CHECK(spec.device.temperature_k == doctest::Approx(223.0));
    CHECK(spec.device.trigger_prob == doctest::Approx(1.0));
    CHECK(spec.device.quench.reaction_ns == doctest::Approx(0.2));
    CHECK(spec.device.quench.closing_ns == doctest::Approx(1.0));
    CHECK(spec.device.quench.spread_ns == 0.0);
    CHECK(spec.fit.enabled);
    CHECK(spec.fit.min_order == 1);
    CHECK(spec.fit.max_order == 3);
    CHECK_FALSE(spec.fit.fixed_order.has_value());
    CHECK(spec.output.prefix == "double_gate");
    CHECK_FALSE(spec.output.write_clicks);
    CHECK(spec.output.model_curve_points == 200);
    CHECK_NOTHROW(validate(spec));
}

TEST_CASE("validation rejects impossible descriptions") {
    // Bundled negative-deadtime description: parses, fails validation.
    const ExperimentSpec bad =
        load_experiment_file(fixture("invalid_negative_deadtime.json"));
    try {
        validate(bad);
        FAIL("expected a SpecError");
    } catch (const SpecError& e) {
        CHECK(mentions(e, "deadtime_ns"));
    }

    // Gate wider than the period.
    const ExperimentSpec duty = parse_experiment_json(R"({
      "experiment": "double_gate",
      "seed": 1,
      "device": {"detection_efficiency": 0.1, "dark_rate_per_ns": 1e-6},
      "gate": {"frequency_hz": 2.0e7, "gate_width_ns": 100,
               "afterpulse_gate_ns": 100},
      "statistics": {"gates": 10}
    })");
    CHECK_THROWS_AS(validate(duty), SpecError);

    // Free-running kind forced onto a gated schedule.
    const ExperimentSpec mode = parse_experiment_json(R"({
      "experiment": "free_running",
      "seed": 1,
      "device": {"detection_efficiency": 0.1, "dark_rate_per_ns": 1e-6},
      "gate": {"mode": "gated", "frequency_hz": 10000, "gate_width_ns": 100,
               "deadtime_ns": 1000},
      "source": {"kind": "continuous", "rate_hz": 10000},
      "sweep": {"deadtimes_ns": [1000]},
      "statistics": {"duration_ns": 1e6}
    })");
    try {
        validate(mode);
        FAIL("expected a SpecError");
    } catch (const SpecError& e) {
        CHECK(mentions(e, "gate.mode: must be free_running"));
    }

    // Thermal block is structurally required for temperature sweeps.
    try {
        parse_experiment_json(R"({
          "experiment": "arrhenius",
          "seed": 1,
          "device": {"detection_efficiency": 0.1, "dark_rate_per_ns": 1e-6},
          "gate": {"frequency_hz": 10000, "gate_width_ns": 100},
          "sweep": {"temperatures_k": [210, 238]},
          "statistics": {"gates": 10}
        })");
        FAIL("expected a SpecError");
    } catch (const SpecError& e) {
        CHECK(mentions(e, "thermal"));
    }
}

TEST_CASE("every bundled experiment description validates") {
    for (const char* name :
         {"double_gate_operating_point.json", "afterpulse_overlap.json",
          "afterpulse_temperatures.json", "arrhenius.json",
          "free_running.json", "charge_persistence.json",
          "quench_time.json"}) {
        CAPTURE(name);
        const ExperimentSpec spec = load_experiment_file(fixture(name));
        CHECK_NOTHROW(validate(spec));
    }
    CHECK_THROWS_AS(load_experiment_file(fixture("missing_file.json")),
                    IoError);
}

TEST_CASE("the operating point description runs deterministically") {
    const ExperimentSpec spec =
        load_experiment_file(fixture("double_gate_operating_point.json"));

    RunOptions options;
    const fs::path dir_a = fresh_dir("op_a");
    options.output_dir = dir_a.string();
    const ExperimentOutcome outcome = run_experiment(spec, options);

    CHECK(outcome.status == 0);
    CHECK(outcome.fit_converged);
    REQUIRE(outcome.files_written.size() == 2);
    CHECK(fs::path(outcome.files_written[0]).filename() ==
          "operating_point_points.csv");
    CHECK(fs::path(outcome.files_written[1]).filename() ==
          "operating_point_report.json");

    CHECK(outcome.report["tool"]["name"] == "spadsim");
    CHECK(outcome.report["tool"]["version"] == std::string(kVersion));
    CHECK(outcome.report["experiment"] == "double_gate");
    CHECK(outcome.report["seed"].get<std::uint64_t>() == 611953ull);
    CHECK(outcome.report["configuration"] == spec.raw);

    // Estimates land where the configuration puts them (4 sigma bands).
    const auto& est = outcome.report["results"]["estimate"];
    CHECK(est["detection_valid"].get<bool>());
    CHECK(est["detection_efficiency"].get<double>() ==
          doctest::Approx(0.10).epsilon(0.03));
    CHECK(est["dark_prob_per_ns"].get<double>() ==
          doctest::Approx(1.6e-6).epsilon(0.03));
    CHECK(est["afterpulse_defined"].get<bool>());
    CHECK(est["afterpulse_prob_per_ns"].get<double>() > 0.0);

    const std::string points_text = slurp(outcome.files_written[0]);
    CHECK(first_line(points_text) ==
          "frequency_hz,mean_photon_number,gate_width_ns,afterpulse_gate_ns,"
          "gates,triggered,click_rate_hz,dark_click_rate_hz,"
          "afterpulse_gate_rate_hz,dark_prob_per_ns,dark_se_per_ns,"
          "detection_efficiency,detection_se,detection_valid,"
          "afterpulse_prob_per_ns,afterpulse_se_per_ns,afterpulse_defined");
    CHECK(outcome.report["outputs"]["points_digest_fnv1a64"] ==
          hex64(hash_tag(points_text)));

    // Same description, fresh directory: byte-identical artifacts.
    RunOptions again = options;
    const fs::path dir_b = fresh_dir("op_b");
    again.output_dir = dir_b.string();
    const ExperimentOutcome second = run_experiment(spec, again);
    REQUIRE(second.files_written.size() == outcome.files_written.size());
    for (std::size_t i = 0; i < outcome.files_written.size(); ++i)
        CHECK(slurp(outcome.files_written[i]) ==
              slurp(second.files_written[i]));

    // A different seed changes the data.
    RunOptions reseeded = options;
    const fs::path dir_c = fresh_dir("op_c");
    reseeded.output_dir = dir_c.string();
    reseeded.seed_override = 999;
    const ExperimentOutcome other = run_experiment(spec, reseeded);
    CHECK(other.report["seed"].get<std::uint64_t>() == 999ull);
    CHECK(slurp(other.files_written[0]) != points_text);

    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    fs::remove_all(dir_c);
}

TEST_CASE("worker count does not change sweep outputs") {
    const ExperimentSpec spec = parse_experiment_json(small_sweep_json(
        R"({"deadtimes_ns": [500, 1500, 3000]})", R"({"fixed_order": 1})"));

    RunOptions serial;
    const fs::path dir_a = fresh_dir("jobs1");
    serial.output_dir = dir_a.string();
    serial.jobs = 1;
    const ExperimentOutcome one = run_experiment(spec, serial);

    RunOptions parallel;
    const fs::path dir_b = fresh_dir("jobs4");
    parallel.output_dir = dir_b.string();
    parallel.jobs = 4;
    const ExperimentOutcome four = run_experiment(spec, parallel);

    REQUIRE(one.files_written.size() == 3);
    CHECK(fs::path(one.files_written[0]).filename() == "ap_small_points.csv");
    CHECK(fs::path(one.files_written[1]).filename() == "ap_small_model.csv");
    CHECK(fs::path(one.files_written[2]).filename() == "ap_small_report.json");
    REQUIRE(four.files_written.size() == 3);
    for (std::size_t i = 0; i < one.files_written.size(); ++i)
        CHECK(slurp(one.files_written[i]) == slurp(four.files_written[i]));

    CHECK(one.report.contains("fits"));
    CHECK(one.report["fits"].contains("afterpulse"));
    CHECK(one.status == 0);

    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}

TEST_CASE("fits can be disabled per description") {
    const ExperimentSpec spec = parse_experiment_json(small_sweep_json(
        R"({"deadtimes_ns": [500, 1500, 3000]})", R"({"enabled": false})"));
    RunOptions options;
    options.strict = true;
    const fs::path dir = fresh_dir("nofit");
    options.output_dir = dir.string();
    const ExperimentOutcome outcome = run_experiment(spec, options);
    CHECK(outcome.status == 0);
    CHECK(outcome.fit_converged);
    CHECK_FALSE(outcome.report.contains("fits"));
    fs::remove_all(dir);
}

TEST_CASE("click dumps round-trip through the readers") {
    const ExperimentSpec spec = parse_experiment_json(R"({
      "experiment": "double_gate",
      "seed": 99,
      "device": {"detection_efficiency": 0.2, "dark_rate_per_ns": 1e-5},
      "gate": {"frequency_hz": 10000, "gate_width_ns": 100,
               "deadtime_ns": 1000, "afterpulse_gate_ns": 100},
      "source": {"kind": "pulsed", "mean_photon_number": 1.0},
      "statistics": {"gates": 3000},
      "output": {"prefix": "dump", "write_clicks": true}
    })");

    RunOptions options;
    const fs::path dir = fresh_dir("dump");
    options.output_dir = dir.string();
    const ExperimentOutcome outcome = run_experiment(spec, options);

    REQUIRE(outcome.files_written.size() == 4);
    CHECK(fs::path(outcome.files_written[1]).filename() == "dump_clicks.csv");
    CHECK(fs::path(outcome.files_written[2]).filename() == "dump_clicks.bin");
    CHECK(outcome.report["outputs"]["clicks_csv"] == "dump_clicks.csv");
    CHECK(outcome.report["outputs"]["clicks_binary"] == "dump_clicks.bin");

    std::ifstream bin(outcome.files_written[2], std::ios::binary);
    const std::vector<ClickRecord> records = read_clicks_binary(bin);
    CHECK(records.size() > 100);

    const std::string csv = slurp(outcome.files_written[1]);
    CHECK(first_line(csv) == "timestamp_ns,gate_index,cause,gate_class");
    const std::size_t rows =
        static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) - 1;
    CHECK(rows == records.size());

    fs::remove_all(dir);
}

TEST_CASE("output directories are created on demand and failures surface") {
    const ExperimentSpec spec = parse_experiment_json(R"({
      "experiment": "double_gate",
      "seed": 5,
      "device": {"detection_efficiency": 0.1, "dark_rate_per_ns": 1e-6},
      "gate": {"frequency_hz": 10000, "gate_width_ns": 100,
               "afterpulse_gate_ns": 100},
      "source": {"kind": "pulsed", "mean_photon_number": 0.5},
      "statistics": {"gates": 200},
      "output": {"prefix": "nested"}
    })");

    const fs::path root = fresh_dir("nested");
    RunOptions options;
    options.output_dir = (root / "deep" / "deeper").string();
    const ExperimentOutcome outcome = run_experiment(spec, options);
    CHECK(fs::exists(root / "deep" / "deeper" / "nested_points.csv"));
    CHECK(outcome.status == 0);

    // A regular file where the directory should go is an I/O error.
    const fs::path blocked = root / "blocked";
    std::ofstream(blocked) << "occupied";
    RunOptions bad;
    bad.output_dir = blocked.string();
    CHECK_THROWS_AS(run_experiment(spec, bad), IoError);

    fs::remove_all(root);
}
