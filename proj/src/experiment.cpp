#include "spadsim/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "spadsim/click_io.hpp"
#include "spadsim/rng.hpp"
#include "spadsim/table.hpp"

namespace spadsim {

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// JSON reading with error accumulation. Every problem is recorded with the
// dotted path of the offending field; the caller throws one SpecError
// carrying the whole list.

struct Reader {
    const json* node = nullptr;
    std::string path;
    std::vector<std::string>* errors = nullptr;

    bool valid() const { return node != nullptr; }

    const json* find(const std::string& key) const {
        if (node == nullptr || !node->is_object()) return nullptr;
        const auto it = node->find(key);
        return it == node->end() ? nullptr : &it.value();
    }

    std::string at(const std::string& key) const {
        return path.empty() ? key : path + "." + key;
    }

    void fail(const std::string& key, const std::string& message) const {
        errors->push_back(at(key) + ": " + message);
    }

    void check_keys(std::initializer_list<const char*> allowed) const {
        if (node == nullptr || !node->is_object()) return;
        for (const auto& item : node->items()) {
            bool known = false;
            for (const char* k : allowed)
                if (item.key() == k) known = true;
            if (!known) fail(item.key(), "unknown field");
        }
    }

    Reader object(const std::string& key, bool required) const {
        const json* v = find(key);
        if (v == nullptr) {
            if (required) fail(key, "required object is missing");
            return {nullptr, at(key), errors};
        }
        if (!v->is_object()) {
            fail(key, "must be an object");
            return {nullptr, at(key), errors};
        }
        return {v, at(key), errors};
    }

    double number(const std::string& key,
                  std::optional<double> fallback = std::nullopt) const {
        const json* v = find(key);
        if (v == nullptr) {
            if (!fallback) fail(key, "required number is missing");
            return fallback.value_or(0.0);
        }
        if (!v->is_number()) {
            fail(key, "must be a number");
            return fallback.value_or(0.0);
        }
        return v->get<double>();
    }

    std::optional<double> optional_number(const std::string& key) const {
        const json* v = find(key);
        if (v == nullptr) return std::nullopt;
        if (!v->is_number()) {
            fail(key, "must be a number");
            return std::nullopt;
        }
        return v->get<double>();
    }

    std::uint64_t unsigned_integer(
        const std::string& key,
        std::optional<std::uint64_t> fallback = std::nullopt) const {
        const json* v = find(key);
        if (v == nullptr) {
            if (!fallback) fail(key, "required non-negative integer is missing");
            return fallback.value_or(0);
        }
        if (v->is_number_unsigned()) return v->get<std::uint64_t>();
        if (v->is_number_integer() && v->get<std::int64_t>() >= 0)
            return static_cast<std::uint64_t>(v->get<std::int64_t>());
        fail(key, "must be a non-negative integer");
        return fallback.value_or(0);
    }

    std::optional<int> optional_int(const std::string& key) const {
        const json* v = find(key);
        if (v == nullptr) return std::nullopt;
        if (!v->is_number_integer()) {
            fail(key, "must be an integer");
            return std::nullopt;
        }
        return static_cast<int>(v->get<std::int64_t>());
    }

    bool boolean(const std::string& key, bool fallback) const {
        const json* v = find(key);
        if (v == nullptr) return fallback;
        if (!v->is_boolean()) {
            fail(key, "must be a boolean");
            return fallback;
        }
        return v->get<bool>();
    }

    std::string text(const std::string& key, const std::string& fallback) const {
        const json* v = find(key);
        if (v == nullptr) return fallback;
        if (!v->is_string()) {
            fail(key, "must be a string");
            return fallback;
        }
        return v->get<std::string>();
    }
};

std::optional<ExperimentKind> kind_from_string(const std::string& s) {
    if (s == "double_gate") return ExperimentKind::double_gate;
    if (s == "afterpulse_sweep") return ExperimentKind::afterpulse_sweep;
    if (s == "arrhenius") return ExperimentKind::arrhenius;
    if (s == "free_running") return ExperimentKind::free_running;
    if (s == "charge_persistence") return ExperimentKind::charge_persistence;
    if (s == "quench_time") return ExperimentKind::quench_time;
    return std::nullopt;
}

// A grid is either an explicit array of numbers or {start, stop, points,
// spacing: linear|log}.
std::vector<double> parse_grid(const Reader& parent, const std::string& key,
                               bool required) {
    const json* v = parent.find(key);
    if (v == nullptr) {
        if (required) parent.fail(key, "required grid is missing");
        return {};
    }
    if (v->is_array()) {
        std::vector<double> out;
        out.reserve(v->size());
        for (const auto& item : *v) {
            if (!item.is_number()) {
                parent.fail(key, "must contain only numbers");
                return {};
            }
            out.push_back(item.get<double>());
        }
        if (out.empty()) parent.fail(key, "must not be empty");
        return out;
    }
    if (v->is_object()) {
        Reader g{v, parent.at(key), parent.errors};
        g.check_keys({"start", "stop", "points", "spacing"});
        const double start = g.number("start");
        const double stop = g.number("stop");
        const std::uint64_t points = g.unsigned_integer("points");
        const std::string spacing = g.text("spacing", "linear");
        if (points < 2) {
            g.fail("points", "must be at least 2");
            return {};
        }
        if (!(stop > start)) {
            g.fail("stop", "must be greater than start");
            return {};
        }
        std::vector<double> out(points);
        if (spacing == "linear") {
            const double step = (stop - start) / static_cast<double>(points - 1);
            for (std::uint64_t i = 0; i < points; ++i)
                out[i] = start + step * static_cast<double>(i);
        } else if (spacing == "log") {
            if (!(start > 0.0)) {
                g.fail("start", "must be > 0 for log spacing");
                return {};
            }
            const double step =
                std::log(stop / start) / static_cast<double>(points - 1);
            for (std::uint64_t i = 0; i < points; ++i)
                out[i] = start * std::exp(step * static_cast<double>(i));
        } else {
            g.fail("spacing", "must be 'linear' or 'log'");
            return {};
        }
        return out;
    }
    parent.fail(key, "must be an array of numbers or a grid object");
    return {};
}

DeviceConfig parse_device(const Reader& r) {
    DeviceConfig d;
    if (!r.valid()) return d;
    r.check_keys({"detection_efficiency", "dark_rate_per_ns", "temperature_k",
                  "trigger_prob", "traps", "charge_persistence", "quench"});
    d.detection_efficiency = r.number("detection_efficiency");
    d.dark_rate_per_ns = r.number("dark_rate_per_ns");
    d.temperature_k = r.number("temperature_k", 223.0);
    d.trigger_prob = r.number("trigger_prob", 1.0);
    const json* traps = r.find("traps");
    if (traps != nullptr) {
        if (!traps->is_array()) {
            r.fail("traps", "must be an array");
        } else {
            for (std::size_t i = 0; i < traps->size(); ++i) {
                Reader tr{&(*traps)[i],
                          r.at("traps[" + std::to_string(i) + "]"), r.errors};
                if (!(*traps)[i].is_object()) {
                    r.fail("traps[" + std::to_string(i) + "]",
                           "must be an object");
                    continue;
                }
                tr.check_keys({"mean_filled", "detrap_tau_ns",
                               "activation_energy_ev", "reference_temp_k"});
                TrapSpecies s;
                s.mean_filled = tr.number("mean_filled");
                s.detrap_tau_ns = tr.number("detrap_tau_ns");
                s.activation_energy_ev = tr.optional_number("activation_energy_ev");
                s.reference_temp_k = tr.number("reference_temp_k", d.temperature_k);
                d.traps.push_back(s);
            }
        }
    }
    const Reader cp = r.object("charge_persistence", false);
    if (cp.valid()) {
        cp.check_keys({"amplitude", "decay_tau_ns"});
        d.charge_persistence.amplitude = cp.number("amplitude");
        d.charge_persistence.decay_tau_ns = cp.number("decay_tau_ns", 1.5);
    }
    const Reader q = r.object("quench", false);
    if (q.valid()) {
        q.check_keys({"reaction_ns", "closing_ns", "spread_ns"});
        d.quench.reaction_ns = q.number("reaction_ns", 0.2);
        d.quench.closing_ns = q.number("closing_ns", 1.0);
        d.quench.spread_ns = q.number("spread_ns", 0.0);
    }
    return d;
}

GateSchedule parse_gate(const Reader& r, ExperimentKind kind) {
    GateSchedule g;
    if (!r.valid()) return g;
    r.check_keys({"mode", "frequency_hz", "gate_width_ns", "deadtime_ns",
                  "afterpulse_gate_ns", "photon_offset"});
    const std::string default_mode =
        kind == ExperimentKind::free_running ? "free_running" : "gated";
    const std::string mode = r.text("mode", default_mode);
    if (mode == "gated") {
        g.mode = GateMode::gated;
    } else if (mode == "free_running") {
        g.mode = GateMode::free_running;
    } else {
        r.fail("mode", "must be 'gated' or 'free_running'");
    }
    const bool gated = g.mode == GateMode::gated;
    g.frequency_hz = gated ? r.number("frequency_hz")
                           : r.number("frequency_hz", 0.0);
    g.gate_width_ns = gated ? r.number("gate_width_ns")
                            : r.number("gate_width_ns", 0.0);
    g.deadtime_ns = r.number("deadtime_ns", 0.0);
    g.afterpulse_gate_ns = r.number("afterpulse_gate_ns", 0.0);
    const json* offset = r.find("photon_offset");
    if (offset == nullptr) {
        g.photon_offset_ns =
            gated && g.gate_width_ns > 0.0 ? 0.5 * g.gate_width_ns : 0.0;
    } else if (offset->is_number()) {
        g.photon_offset_ns = offset->get<double>();
    } else if (offset->is_string()) {
        try {
            g.photon_offset_ns = resolve_photon_offset(offset->get<std::string>(),
                                                       g.gate_width_ns);
        } catch (const std::exception& e) {
            r.fail("photon_offset", e.what());
        }
    } else {
        r.fail("photon_offset", "must be a number or a position preset");
    }
    return g;
}

PhotonSource parse_source(const Reader& r) {
    PhotonSource s;
    if (!r.valid()) return s;
    r.check_keys({"kind", "mean_photon_number", "rate_hz", "pulse_fwhm_ns"});
    const std::string kind = r.text("kind", "pulsed");
    if (kind == "pulsed") {
        s.kind = SourceKind::pulsed;
    } else if (kind == "continuous") {
        s.kind = SourceKind::continuous;
    } else {
        r.fail("kind", "must be 'pulsed' or 'continuous'");
    }
    s.mean_photon_number = r.number("mean_photon_number", 0.0);
    s.rate_hz = r.number("rate_hz", 0.0);
    s.pulse_fwhm_ns = r.number("pulse_fwhm_ns", 0.2);
    return s;
}

ExperimentSpec parse_spec(const json& j, std::vector<std::string>& errors) {
    ExperimentSpec spec;
    if (!j.is_object()) {
        errors.push_back("experiment description must be a JSON object");
        return spec;
    }
    Reader top{&j, "", &errors};
    top.check_keys({"experiment", "seed", "device", "gate", "source", "sweep",
                    "statistics", "thermal", "fit", "output"});

    const std::string kind_text = top.text("experiment", "");
    if (kind_text.empty()) {
        top.fail("experiment", "required experiment kind is missing");
    } else if (const auto kind = kind_from_string(kind_text)) {
        spec.kind = *kind;
    } else {
        top.fail("experiment",
                 "unknown kind '" + kind_text +
                     "' (expected double_gate, afterpulse_sweep, arrhenius, "
                     "free_running, charge_persistence or quench_time)");
    }
    spec.seed = top.unsigned_integer("seed");

    spec.device = parse_device(top.object("device", true));
    spec.schedule = parse_gate(top.object("gate", true), spec.kind);
    spec.source = parse_source(top.object("source", false));

    const bool needs_sweep = spec.kind != ExperimentKind::double_gate;
    const Reader sweep = top.object("sweep", needs_sweep);
    if (sweep.valid()) {
        sweep.check_keys({"deadtimes_ns", "temperatures_k", "advances_ns",
                          "offsets_ns"});
        switch (spec.kind) {
            case ExperimentKind::afterpulse_sweep:
            case ExperimentKind::free_running:
                spec.deadtimes_ns = parse_grid(sweep, "deadtimes_ns", true);
                break;
            case ExperimentKind::arrhenius:
                spec.temperatures_k = parse_grid(sweep, "temperatures_k", true);
                break;
            case ExperimentKind::charge_persistence:
                spec.advances_ns = parse_grid(sweep, "advances_ns", true);
                break;
            case ExperimentKind::quench_time:
                spec.offsets_ns = parse_grid(sweep, "offsets_ns", true);
                break;
            case ExperimentKind::double_gate:
                break;
        }
    }

    const Reader stats = top.object("statistics", true);
    if (stats.valid()) {
        stats.check_keys({"gates", "duration_ns"});
        if (spec.kind == ExperimentKind::free_running) {
            spec.duration_ns = stats.number("duration_ns");
            spec.gates = stats.unsigned_integer("gates", 0);
        } else {
            spec.gates = stats.unsigned_integer("gates");
            spec.duration_ns = stats.number("duration_ns", 0.0);
        }
    }

    const Reader thermal =
        top.object("thermal", spec.kind == ExperimentKind::arrhenius);
    if (thermal.valid()) {
        thermal.check_keys(
            {"activation_energy_ev", "anchor_temp_k", "anchor_rate_per_ns"});
        const double ea = thermal.number("activation_energy_ev");
        const double anchor_t = thermal.number("anchor_temp_k");
        const double anchor_rate = thermal.number("anchor_rate_per_ns");
        try {
            spec.thermal = calibrated_thermal_model(ea, anchor_t, anchor_rate);
        } catch (const std::exception& e) {
            errors.push_back("thermal: " + std::string(e.what()));
        }
    }

    const Reader fit = top.object("fit", false);
    if (fit.valid()) {
        fit.check_keys({"enabled", "min_order", "max_order", "fixed_order",
                        "kind", "min_temp_k", "max_temp_k", "detrap_tau_ns"});
        spec.fit.enabled = fit.boolean("enabled", true);
        spec.fit.min_order = fit.optional_int("min_order").value_or(1);
        spec.fit.max_order = fit.optional_int("max_order").value_or(3);
        spec.fit.fixed_order = fit.optional_int("fixed_order");
        const std::string fit_kind = fit.text("kind", "rate");
        if (fit_kind == "rate") {
            spec.fit.kind = ArrheniusKind::rate;
        } else if (fit_kind == "detrap_time") {
            spec.fit.kind = ArrheniusKind::detrap_time;
        } else {
            fit.fail("kind", "must be 'rate' or 'detrap_time'");
        }
        spec.fit.min_temp_k = fit.optional_number("min_temp_k");
        spec.fit.max_temp_k = fit.optional_number("max_temp_k");
        if (fit.find("detrap_tau_ns") != nullptr)
            spec.fit.detrap_tau_ns = parse_grid(fit, "detrap_tau_ns", false);
    }

    const Reader output = top.object("output", false);
    spec.output.prefix = to_string(spec.kind);
    if (output.valid()) {
        output.check_keys({"prefix", "write_clicks", "model_curve_points"});
        spec.output.prefix = output.text("prefix", spec.output.prefix);
        spec.output.write_clicks = output.boolean("write_clicks", false);
        spec.output.model_curve_points =
            output.optional_int("model_curve_points").value_or(200);
    }
    return spec;
}

}  // namespace

const char* to_string(ExperimentKind kind) {
    switch (kind) {
        case ExperimentKind::double_gate: return "double_gate";
        case ExperimentKind::afterpulse_sweep: return "afterpulse_sweep";
        case ExperimentKind::arrhenius: return "arrhenius";
        case ExperimentKind::free_running: return "free_running";
        case ExperimentKind::charge_persistence: return "charge_persistence";
        case ExperimentKind::quench_time: return "quench_time";
    }
    return "unknown";
}

ExperimentSpec parse_experiment_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw SpecError("experiment description is not valid JSON", {e.what()});
    }
    std::vector<std::string> errors;
    ExperimentSpec spec = parse_spec(j, errors);
    if (!errors.empty())
        throw SpecError("invalid experiment description", std::move(errors));
    spec.raw = std::move(j);
    return spec;
}

ExperimentSpec load_experiment_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw IoError("cannot open experiment file: " + path);
    std::ostringstream buffer;
    buffer << is.rdbuf();
    if (is.bad())
        throw IoError("cannot read experiment file: " + path);
    return parse_experiment_json(buffer.str());
}

void validate(const ExperimentSpec& spec) {
    std::vector<std::string> errors;
    const auto collect = [&errors](const std::function<void()>& check) {
        try {
            check();
        } catch (const std::exception& e) {
            errors.emplace_back(e.what());
        }
    };
    collect([&] { validate(spec.device); });
    collect([&] { validate(spec.schedule); });
    collect([&] { validate(spec.source); });

    const auto require = [&errors](bool ok, const char* message) {
        if (!ok) errors.emplace_back(message);
    };
    const auto all_positive = [](const std::vector<double>& v) {
        return std::all_of(v.begin(), v.end(), [](double x) { return x > 0.0; });
    };
    const auto none_negative = [](const std::vector<double>& v) {
        return std::all_of(v.begin(), v.end(), [](double x) { return x >= 0.0; });
    };

    const bool gated_kind = spec.kind != ExperimentKind::free_running;
    if (gated_kind) {
        require(spec.schedule.mode == GateMode::gated,
                "gate.mode: this experiment needs a gated schedule");
        require(spec.gates > 0, "statistics.gates: must be > 0");
    }
    switch (spec.kind) {
        case ExperimentKind::double_gate:
            require(spec.schedule.afterpulse_gate_ns > 0.0,
                    "gate.afterpulse_gate_ns: the double gate estimator needs "
                    "the delayed gate");
            require(spec.source.kind == SourceKind::pulsed,
                    "source.kind: double_gate drives a pulsed source");
            break;
        case ExperimentKind::afterpulse_sweep:
            require(!spec.deadtimes_ns.empty(),
                    "sweep.deadtimes_ns: must not be empty");
            require(none_negative(spec.deadtimes_ns),
                    "sweep.deadtimes_ns: must be >= 0");
            require(spec.schedule.afterpulse_gate_ns > 0.0,
                    "gate.afterpulse_gate_ns: must be > 0");
            require(spec.source.kind == SourceKind::pulsed &&
                        spec.source.mean_photon_number > 0.0,
                    "source: the sweep needs a pulsed source with "
                    "mean_photon_number > 0");
            break;
        case ExperimentKind::arrhenius:
            require(spec.thermal.has_value(),
                    "thermal: required for arrhenius experiments");
            require(!spec.temperatures_k.empty(),
                    "sweep.temperatures_k: must not be empty");
            require(all_positive(spec.temperatures_k),
                    "sweep.temperatures_k: must be > 0");
            break;
        case ExperimentKind::free_running:
            require(spec.schedule.mode == GateMode::free_running,
                    "gate.mode: must be free_running");
            require(spec.duration_ns > 0.0,
                    "statistics.duration_ns: must be > 0");
            require(!spec.deadtimes_ns.empty(),
                    "sweep.deadtimes_ns: must not be empty");
            require(none_negative(spec.deadtimes_ns),
                    "sweep.deadtimes_ns: must be >= 0");
            require(spec.source.kind == SourceKind::continuous &&
                        spec.source.rate_hz > 0.0,
                    "source: free_running needs a continuous source with "
                    "rate_hz > 0");
            break;
        case ExperimentKind::charge_persistence:
            require(!spec.advances_ns.empty(),
                    "sweep.advances_ns: must not be empty");
            require(all_positive(spec.advances_ns),
                    "sweep.advances_ns: must be > 0");
            require(spec.source.kind == SourceKind::pulsed &&
                        spec.source.mean_photon_number > 0.0,
                    "source: needs a pulsed source with mean_photon_number > 0");
            break;
        case ExperimentKind::quench_time:
            require(!spec.offsets_ns.empty(),
                    "sweep.offsets_ns: must not be empty");
            require(spec.schedule.afterpulse_gate_ns > 0.0,
                    "gate.afterpulse_gate_ns: must be > 0");
            require(spec.source.kind == SourceKind::pulsed &&
                        spec.source.mean_photon_number > 0.0,
                    "source: needs a pulsed source with mean_photon_number > 0");
            break;
    }

    require(spec.fit.min_order >= 1, "fit.min_order: must be >= 1");
    require(spec.fit.max_order >= spec.fit.min_order,
            "fit.max_order: must be >= fit.min_order");
    if (spec.fit.fixed_order)
        require(*spec.fit.fixed_order >= 1, "fit.fixed_order: must be >= 1");
    if (spec.fit.min_temp_k && spec.fit.max_temp_k)
        require(*spec.fit.min_temp_k < *spec.fit.max_temp_k,
                "fit.min_temp_k: must be below fit.max_temp_k");
    require(all_positive(spec.fit.detrap_tau_ns),
            "fit.detrap_tau_ns: must be > 0");
    require(spec.output.model_curve_points >= 2,
            "output.model_curve_points: must be >= 2");
    require(!spec.output.prefix.empty(), "output.prefix: must not be empty");

    if (!errors.empty())
        throw SpecError("experiment description failed validation",
                        std::move(errors));
}

namespace {

struct NullSink : ClickSink {
    void on_click(const ClickRecord&) override {}
};

struct Artifacts {
    Table points;
    std::optional<Table> model;
    json results = json::object();
    json fits = json::object();
    bool fits_ok = true;
    std::vector<ClickRecord> clicks;
};

json fit_to_json(const FitResult& f) {
    json j = json::object();
    j["converged"] = f.converged;
    j["iterations"] = f.iterations;
    j["message"] = f.message;
    j["rss"] = f.rss;
    j["n_points"] = f.n_points;
    json params = json::array();
    for (std::size_t i = 0; i < f.params.size(); ++i) {
        json p = json::object();
        p["name"] = f.names[i];
        p["value"] = f.params[i];
        p["standard_error"] =
            i < f.standard_errors.size() ? f.standard_errors[i] : 0.0;
        p["unit"] = i < f.units.size() ? f.units[i] : "";
        params.push_back(std::move(p));
    }
    j["parameters"] = std::move(params);
    const std::size_t k = f.params.size();
    if (f.covariance.size() == k * k) {
        json cov = json::array();
        for (std::size_t i = 0; i < k; ++i) {
            json row = json::array();
            for (std::size_t c = 0; c < k; ++c)
                row.push_back(f.covariance[i * k + c]);
            cov.push_back(std::move(row));
        }
        j["covariance"] = std::move(cov);
    }
    if (!f.order_scan.empty()) {
        j["selected_order"] = f.selected_order;
        json scan = json::array();
        for (const auto& c : f.order_scan)
            scan.push_back(json{{"order", c.order},
                                {"rss", c.rss},
                                {"aicc", c.aicc},
                                {"converged", c.converged}});
        j["order_scan"] = std::move(scan);
    }
    return j;
}

std::optional<FitResult> try_fit(Artifacts& a, const std::string& label,
                                 const std::function<FitResult()>& fn) {
    try {
        FitResult f = fn();
        a.fits[label] = fit_to_json(f);
        if (!f.converged) a.fits_ok = false;
        return f;
    } catch (const std::exception& e) {
        a.fits[label] = json{{"converged", false}, {"error", e.what()}};
        a.fits_ok = false;
        return std::nullopt;
    }
}

std::vector<double> dense_grid(double lo, double hi, int n, bool log_space) {
    n = std::max(n, 2);
    std::vector<double> out(static_cast<std::size_t>(n));
    if (log_space && lo > 0.0 && hi > lo) {
        const double step = std::log(hi / lo) / (n - 1);
        for (int i = 0; i < n; ++i) out[i] = lo * std::exp(step * i);
    } else {
        const double step = (hi - lo) / (n - 1);
        for (int i = 0; i < n; ++i) out[i] = lo + step * i;
    }
    return out;
}

std::string bool_cell(bool v) { return v ? "1" : "0"; }

PhotonSource unlit_source() {
    PhotonSource s;
    s.kind = SourceKind::pulsed;
    s.mean_photon_number = 0.0;
    return s;
}

Artifacts run_double_gate(const ExperimentSpec& spec, int) {
    Artifacts a;
    NullSink discard;
    const std::uint64_t lit_seed = derive_seed(spec.seed, "illuminated");
    const std::uint64_t dark_seed = derive_seed(spec.seed, "dark_calibration");
    RunResult lit = run_gated(spec.device, spec.schedule, spec.source,
                              spec.gates, lit_seed,
                              spec.output.write_clicks ? nullptr : &discard);
    const RunResult dark = run_gated(spec.device, spec.schedule, unlit_source(),
                                     spec.gates, dark_seed, &discard);
    const RunSummary merged = with_dark_calibration(lit.summary, dark.summary);
    const DoubleGateEstimate est = estimate_double_gate(
        merged, spec.schedule.frequency_hz, spec.source.mean_photon_number,
        spec.schedule.gate_width_ns, spec.schedule.afterpulse_gate_ns);

    a.points.columns = {"frequency_hz",
                        "mean_photon_number",
                        "gate_width_ns",
                        "afterpulse_gate_ns",
                        "gates",
                        "triggered",
                        "click_rate_hz",
                        "dark_click_rate_hz",
                        "afterpulse_gate_rate_hz",
                        "dark_prob_per_ns",
                        "dark_se_per_ns",
                        "detection_efficiency",
                        "detection_se",
                        "detection_valid",
                        "afterpulse_prob_per_ns",
                        "afterpulse_se_per_ns",
                        "afterpulse_defined"};
    auto& row = a.points.add_row();
    row.push_back(format_double(est.frequency_hz));
    row.push_back(format_double(est.mean_photon_number));
    row.push_back(format_double(est.gate_width_ns));
    row.push_back(format_double(est.afterpulse_gate_ns));
    row.push_back(format_u64(merged.gates_nominal));
    row.push_back(format_u64(merged.triggered));
    row.push_back(format_double(est.click_rate_hz));
    row.push_back(format_double(est.dark_click_rate_hz));
    row.push_back(format_double(est.afterpulse_gate_rate_hz));
    row.push_back(format_double(est.dark_prob_per_ns));
    row.push_back(format_double(est.dark_se));
    row.push_back(format_double(est.detection_efficiency));
    row.push_back(format_double(est.detection_se));
    row.push_back(bool_cell(est.detection_valid));
    row.push_back(format_double(est.afterpulse_prob_per_ns));
    row.push_back(format_double(est.afterpulse_se));
    row.push_back(bool_cell(est.afterpulse_defined));

    a.results["estimate"] = json{
        {"dark_prob_per_ns", est.dark_prob_per_ns},
        {"dark_se_per_ns", est.dark_se},
        {"detection_efficiency", est.detection_efficiency},
        {"detection_se", est.detection_se},
        {"detection_valid", est.detection_valid},
        {"afterpulse_prob_per_ns", est.afterpulse_prob_per_ns},
        {"afterpulse_se_per_ns", est.afterpulse_se},
        {"afterpulse_defined", est.afterpulse_defined}};
    a.results["summary"] = json{
        {"gates_nominal", merged.gates_nominal},
        {"gates_armed", merged.gates_armed},
        {"gates_suppressed", merged.gates_suppressed},
        {"triggered", merged.triggered},
        {"click_rate_hz", merged.click_rate_hz},
        {"dark_click_rate_hz", merged.dark_click_rate_hz},
        {"afterpulse_gate_rate_hz", merged.afterpulse_gate_rate_hz},
        {"trap_releases_pending", merged.trap_counters.remaining}};
    if (spec.output.write_clicks) a.clicks = std::move(lit.clicks);
    return a;
}

Artifacts run_afterpulse_sweep(const ExperimentSpec& spec, int jobs) {
    Artifacts a;
    const AfterpulseSweep sweep = sweep_afterpulse_vs_deadtime(
        spec.device, spec.schedule, spec.source, spec.deadtimes_ns, spec.gates,
        spec.seed, jobs);

    a.points.columns = {"deadtime_ns",
                        "effective_deadtime_ns",
                        "afterpulse_prob_per_ns",
                        "afterpulse_se_per_ns",
                        "afterpulse_cause_per_trigger",
                        "afterpulse_cause_se",
                        "model_prob_per_ns",
                        "dark_prob_per_ns",
                        "detection_efficiency",
                        "triggered",
                        "point_seed"};
    json delays = json::array(), eff = json::array(), probs = json::array(),
         ses = json::array(), model = json::array();
    for (const auto& p : sweep.points) {
        auto& row = a.points.add_row();
        row.push_back(format_double(p.deadtime_ns));
        row.push_back(format_double(p.effective_deadtime_ns));
        row.push_back(format_double(p.estimate.afterpulse_prob_per_ns));
        row.push_back(format_double(p.estimate.afterpulse_se));
        row.push_back(format_double(p.afterpulse_cause_per_trigger));
        row.push_back(format_double(p.afterpulse_cause_se));
        row.push_back(format_double(p.model_prob_per_ns));
        row.push_back(format_double(p.estimate.dark_prob_per_ns));
        row.push_back(format_double(p.estimate.detection_efficiency));
        row.push_back(format_u64(p.triggered));
        row.push_back(format_u64(p.point_seed));
        delays.push_back(p.deadtime_ns);
        eff.push_back(p.effective_deadtime_ns);
        probs.push_back(p.estimate.afterpulse_prob_per_ns);
        ses.push_back(p.estimate.afterpulse_se);
        model.push_back(p.model_prob_per_ns);
    }
    a.results["deadtime_ns"] = std::move(delays);
    a.results["effective_deadtime_ns"] = std::move(eff);
    a.results["afterpulse_prob_per_ns"] = std::move(probs);
    a.results["afterpulse_se_per_ns"] = std::move(ses);
    a.results["model_prob_per_ns"] = std::move(model);
    a.results["dark_calibration"] =
        json{{"gates", sweep.dark_calibration.gates_nominal},
             {"click_rate_hz", sweep.dark_calibration.click_rate_hz}};

    std::optional<FitResult> fit;
    if (spec.fit.enabled) {
        fit = try_fit(a, "afterpulse", [&] {
            std::vector<AfterpulseCurvePoint> pts;
            for (const auto& p : sweep.points) {
                if (!p.estimate.afterpulse_defined) continue;
                pts.push_back({p.effective_deadtime_ns,
                               p.estimate.afterpulse_prob_per_ns,
                               p.estimate.afterpulse_se});
            }
            AfterpulseFitOptions options;
            options.min_order = spec.fit.min_order;
            options.max_order = spec.fit.max_order;
            options.fixed_order = spec.fit.fixed_order;
            options.trigger_prob = spec.device.trigger_prob;
            return fit_afterpulse_curve(pts, spec.schedule.afterpulse_gate_ns,
                                        options);
        });
    }

    const AfterpulseModel config_model =
        device_afterpulse_model(spec.device, spec.schedule.afterpulse_gate_ns);
    AfterpulseModel fitted_model = config_model;
    if (fit && fit->converged) {
        fitted_model.traps.clear();
        const int order = fit->selected_order;
        for (int i = 0; i < order; ++i) {
            TrapSpecies s;
            s.mean_filled = fit->param("trap_mean[" + std::to_string(i) + "]");
            s.detrap_tau_ns = fit->param("detrap_tau[" + std::to_string(i) + "]");
            fitted_model.traps.push_back(s);
        }
    }
    Table model_table;
    model_table.columns = {"delay_ns", "model_prob_per_ns"};
    if (fit && fit->converged) model_table.columns.push_back("fitted_prob_per_ns");
    double lo = sweep.points.front().effective_deadtime_ns;
    double hi = sweep.points.back().effective_deadtime_ns;
    for (const auto& p : sweep.points) {
        lo = std::min(lo, p.effective_deadtime_ns);
        hi = std::max(hi, p.effective_deadtime_ns);
    }
    for (double delay :
         dense_grid(lo, hi, spec.output.model_curve_points, true)) {
        auto& row = model_table.add_row();
        row.push_back(format_double(delay));
        row.push_back(format_double(afterpulse_probability(config_model, delay)));
        if (fit && fit->converged)
            row.push_back(
                format_double(afterpulse_probability(fitted_model, delay)));
    }
    a.model = std::move(model_table);
    return a;
}

Artifacts run_arrhenius(const ExperimentSpec& spec, int jobs) {
    Artifacts a;
    const DarkTemperatureSweep sweep = sweep_dark_vs_temperature(
        spec.device, *spec.thermal, spec.schedule, spec.temperatures_k,
        spec.gates, spec.seed, jobs);

    a.points.columns = {"temperature_k", "dark_prob_per_ns", "se_per_ns",
                        "model_rate_per_ns", "clicks", "gates", "point_seed"};
    json temps = json::array(), probs = json::array(), ses = json::array(),
         model = json::array();
    for (const auto& p : sweep.points) {
        auto& row = a.points.add_row();
        row.push_back(format_double(p.temperature_k));
        row.push_back(format_double(p.dark_prob_per_ns));
        row.push_back(format_double(p.se));
        row.push_back(format_double(p.model_rate_per_ns));
        row.push_back(format_u64(p.clicks));
        row.push_back(format_u64(p.gates));
        row.push_back(format_u64(p.point_seed));
        temps.push_back(p.temperature_k);
        probs.push_back(p.dark_prob_per_ns);
        ses.push_back(p.se);
        model.push_back(p.model_rate_per_ns);
    }
    a.results["temperature_k"] = std::move(temps);
    a.results["dark_prob_per_ns"] = std::move(probs);
    a.results["se_per_ns"] = std::move(ses);
    a.results["model_rate_per_ns"] = std::move(model);

    std::optional<FitResult> fit;
    if (spec.fit.enabled) {
        fit = try_fit(a, "arrhenius", [&] {
            std::vector<ArrheniusPoint> pts;
            for (const auto& p : sweep.points)
                if (p.dark_prob_per_ns > 0.0)
                    pts.push_back({p.temperature_k, p.dark_prob_per_ns, p.se});
            ArrheniusOptions options;
            options.kind = spec.fit.kind;
            options.min_temp_k = spec.fit.min_temp_k;
            options.max_temp_k = spec.fit.max_temp_k;
            return fit_arrhenius(pts, options);
        });
    }

    Table model_table;
    model_table.columns = {"temperature_k", "model_rate_per_ns"};
    if (fit && fit->converged) model_table.columns.push_back("fitted_rate_per_ns");
    const auto [lo_it, hi_it] = std::minmax_element(spec.temperatures_k.begin(),
                                                    spec.temperatures_k.end());
    for (double t :
         dense_grid(*lo_it, *hi_it, spec.output.model_curve_points, false)) {
        auto& row = model_table.add_row();
        row.push_back(format_double(t));
        row.push_back(format_double(dark_rate(*spec.thermal, t)));
        if (fit && fit->converged) {
            ThermalModel fitted;
            fitted.activation_energy_ev = fit->param("activation_energy_ev");
            fitted.prefactor_per_ns_k2 = fit->param("prefactor");
            row.push_back(format_double(dark_rate(fitted, t)));
        }
    }
    a.model = std::move(model_table);
    return a;
}

Artifacts run_free_running(const ExperimentSpec& spec, int jobs) {
    Artifacts a;
    const FreeRunningSweep sweep =
        sweep_free_running(spec.device, spec.schedule, spec.source,
                           spec.deadtimes_ns, spec.duration_ns, spec.seed, jobs);

    a.points.columns = {"deadtime_ns",   "measured_rate_hz", "measured_se_hz",
                        "measured_noise_hz", "noise_se_hz",  "model_rate_hz",
                        "model_noise_hz",    "clicks",       "noise_clicks",
                        "point_seed"};
    json taus = json::array(), rates = json::array(), ses = json::array(),
         noise = json::array(), model = json::array(),
         model_noise = json::array();
    for (const auto& p : sweep.points) {
        auto& row = a.points.add_row();
        row.push_back(format_double(p.deadtime_ns));
        row.push_back(format_double(p.measured_rate_hz));
        row.push_back(format_double(p.measured_se_hz));
        row.push_back(format_double(p.measured_noise_hz));
        row.push_back(format_double(p.noise_se_hz));
        row.push_back(format_double(p.model_rate_hz));
        row.push_back(format_double(p.model_noise_hz));
        row.push_back(format_u64(p.clicks));
        row.push_back(format_u64(p.noise_clicks));
        row.push_back(format_u64(p.point_seed));
        taus.push_back(p.deadtime_ns);
        rates.push_back(p.measured_rate_hz);
        ses.push_back(p.measured_se_hz);
        noise.push_back(p.measured_noise_hz);
        model.push_back(p.model_rate_hz);
        model_noise.push_back(p.model_noise_hz);
    }
    a.results["deadtime_ns"] = std::move(taus);
    a.results["measured_rate_hz"] = std::move(rates);
    a.results["measured_se_hz"] = std::move(ses);
    a.results["measured_noise_hz"] = std::move(noise);
    a.results["model_rate_hz"] = std::move(model);
    a.results["model_noise_hz"] = std::move(model_noise);

    FreeRunningFitOptions fit_options;
    fit_options.detrap_tau_ns = spec.fit.detrap_tau_ns;
    if (fit_options.detrap_tau_ns.empty()) {
        for (const auto& trap : spec.device.traps)
            fit_options.detrap_tau_ns.push_back(
                scale_detrap_tau(trap, spec.device.temperature_k));
    }
    fit_options.photon_rate_hz = spec.source.rate_hz;
    fit_options.mean_photon_number = 1.0;
    double max_deadtime = 0.0;
    for (double d : spec.deadtimes_ns) max_deadtime = std::max(max_deadtime, d);
    fit_options.integration_horizon_ns =
        std::max(fit_options.integration_horizon_ns, max_deadtime);

    std::optional<FitResult> fit;
    if (spec.fit.enabled) {
        fit = try_fit(a, "free_running", [&] {
            std::vector<FreeRunningCurvePoint> pts;
            for (const auto& p : sweep.points)
                pts.push_back(
                    {p.deadtime_ns, p.measured_rate_hz, p.measured_se_hz});
            return fit_free_running(pts, fit_options);
        });
    }

    Table model_table;
    model_table.columns = {"deadtime_ns", "model_rate_hz", "model_noise_hz"};
    if (fit && fit->converged) model_table.columns.push_back("fitted_rate_hz");
    const auto [lo_it, hi_it] =
        std::minmax_element(spec.deadtimes_ns.begin(), spec.deadtimes_ns.end());
    const double lo = std::max(*lo_it, 1e-3);
    const AfterpulseModel ap_model = device_afterpulse_model(spec.device, 1.0);
    const double trial_period_ns = 1e9 / spec.source.rate_hz;
    for (double tau :
         dense_grid(lo, *hi_it, spec.output.model_curve_points, true)) {
        FreeRunningModel m;
        m.detection_efficiency = spec.device.detection_efficiency;
        m.dark_prob = spec.device.dark_rate_per_ns * trial_period_ns;
        m.mean_photon_number = 1.0;
        m.photon_rate_hz = spec.source.rate_hz;
        m.deadtime_ns = tau;
        m.integration_horizon_ns = fit_options.integration_horizon_ns;
        m.afterpulse_mean =
            integrated_afterpulse(ap_model, tau, m.integration_horizon_ns);
        auto& row = model_table.add_row();
        row.push_back(format_double(tau));
        row.push_back(format_double(free_running_rate(m)));
        FreeRunningModel noise_model = m;
        noise_model.mean_photon_number = 0.0;
        row.push_back(format_double(free_running_rate(noise_model)));
        if (fit && fit->converged) {
            FreeRunningModel fitted = m;
            fitted.detection_efficiency = fit->param("detection_efficiency");
            fitted.dark_prob = fit->param("dark_prob");
            double ap = 0.0;
            for (std::size_t i = 0; i < fit_options.detrap_tau_ns.size(); ++i) {
                const double dt = fit_options.detrap_tau_ns[i];
                ap += fit->param("afterpulse_amp[" + std::to_string(i) + "]") *
                      (std::exp(-tau / dt) -
                       std::exp(-fit_options.integration_horizon_ns / dt));
            }
            fitted.afterpulse_mean = ap;
            row.push_back(format_double(free_running_rate(fitted)));
        }
    }
    a.model = std::move(model_table);
    return a;
}

Artifacts run_charge_persistence(const ExperimentSpec& spec, int jobs) {
    Artifacts a;
    const ChargePersistenceSweep sweep = sweep_charge_persistence(
        spec.device, spec.schedule, spec.source, spec.advances_ns, spec.gates,
        spec.seed, jobs);

    a.points.columns = {"advance_ns",
                        "noise_per_gate_per_photon",
                        "se",
                        "residual_clicks_per_gate",
                        "dark_clicks_per_gate",
                        "model_residual_per_gate",
                        "point_seed"};
    json advances = json::array(), noise = json::array(), ses = json::array(),
         model = json::array();
    for (const auto& p : sweep.points) {
        auto& row = a.points.add_row();
        row.push_back(format_double(p.advance_ns));
        row.push_back(format_double(p.noise_per_gate_per_photon));
        row.push_back(format_double(p.se));
        row.push_back(format_double(p.residual_clicks_per_gate));
        row.push_back(format_double(p.dark_clicks_per_gate));
        row.push_back(format_double(p.model_residual_per_gate));
        row.push_back(format_u64(p.point_seed));
        advances.push_back(p.advance_ns);
        noise.push_back(p.noise_per_gate_per_photon);
        ses.push_back(p.se);
        model.push_back(p.model_residual_per_gate);
    }
    a.results["advance_ns"] = std::move(advances);
    a.results["noise_per_gate_per_photon"] = std::move(noise);
    a.results["se"] = std::move(ses);
    a.results["model_residual_per_gate"] = std::move(model);
    a.results["dark_level_per_gate"] = sweep.dark_level_per_gate;

    Table model_table;
    model_table.columns = {"advance_ns", "model_residual_per_gate",
                           "model_noise_per_gate_per_photon",
                           "dark_level_per_gate"};
    const auto [lo_it, hi_it] =
        std::minmax_element(spec.advances_ns.begin(), spec.advances_ns.end());
    const double mu = spec.source.mean_photon_number;
    for (double adv :
         dense_grid(*lo_it, *hi_it, spec.output.model_curve_points, false)) {
        const double residual = charge_persistence_probability(
            spec.device.charge_persistence, adv, mu);
        auto& row = model_table.add_row();
        row.push_back(format_double(adv));
        row.push_back(format_double(residual));
        row.push_back(
            format_double((residual + sweep.dark_level_per_gate) / mu));
        row.push_back(format_double(sweep.dark_level_per_gate));
    }
    a.model = std::move(model_table);
    return a;
}

Artifacts run_quench_time(const ExperimentSpec& spec, int jobs) {
    Artifacts a;
    const QuenchTimingSweep sweep =
        sweep_quench_time(spec.device, spec.schedule, spec.source,
                          spec.offsets_ns, spec.gates, spec.seed, jobs);

    a.points.columns = {"offset_ns",     "detection_per_gate",
                        "detection_se",  "afterpulse_per_trigger",
                        "afterpulse_se", "triggered",
                        "point_seed"};
    json offsets = json::array(), det = json::array(), det_se = json::array(),
         ap = json::array(), ap_se = json::array();
    for (const auto& p : sweep.points) {
        auto& row = a.points.add_row();
        row.push_back(format_double(p.offset_ns));
        row.push_back(format_double(p.detection_per_gate));
        row.push_back(format_double(p.detection_se));
        row.push_back(format_double(p.afterpulse_per_trigger));
        row.push_back(format_double(p.afterpulse_se));
        row.push_back(format_u64(p.triggered));
        row.push_back(format_u64(p.point_seed));
        offsets.push_back(p.offset_ns);
        det.push_back(p.detection_per_gate);
        det_se.push_back(p.detection_se);
        ap.push_back(p.afterpulse_per_trigger);
        ap_se.push_back(p.afterpulse_se);
    }
    a.results["offset_ns"] = std::move(offsets);
    a.results["detection_per_gate"] = std::move(det);
    a.results["detection_se"] = std::move(det_se);
    a.results["afterpulse_per_trigger"] = std::move(ap);
    a.results["afterpulse_se"] = std::move(ap_se);

    std::optional<FitResult> det_fit, ap_fit;
    if (spec.fit.enabled) {
        det_fit = try_fit(a, "detection", [&] {
            std::vector<SCurvePoint> pts;
            for (const auto& p : sweep.points)
                if (std::isfinite(p.detection_per_gate))
                    pts.push_back(
                        {p.offset_ns, p.detection_per_gate, p.detection_se});
            return fit_s_curve(pts);
        });
        ap_fit = try_fit(a, "afterpulse", [&] {
            std::vector<SCurvePoint> pts;
            for (const auto& p : sweep.points)
                if (std::isfinite(p.afterpulse_per_trigger))
                    pts.push_back(
                        {p.offset_ns, p.afterpulse_per_trigger, p.afterpulse_se});
            return fit_s_curve(pts);
        });
        if (det_fit && det_fit->converged) {
            a.results["closing_time_ns"] =
                closing_time_from_width(det_fit->param("width"));
            if (ap_fit && ap_fit->converged)
                a.results["midpoint_separation_ns"] =
                    ap_fit->param("midpoint") - det_fit->param("midpoint");
        }
    }

    const auto s_curve_value = [](const FitResult& f, double x) {
        const double u = (f.param("midpoint") - x) / f.param("width");
        const double cdf = 0.5 * std::erfc(-u * 0.7071067811865476);
        return f.param("floor") + (f.param("plateau") - f.param("floor")) * cdf;
    };
    if ((det_fit && det_fit->converged) || (ap_fit && ap_fit->converged)) {
        Table model_table;
        model_table.columns = {"offset_ns"};
        if (det_fit && det_fit->converged)
            model_table.columns.push_back("fitted_detection_per_gate");
        if (ap_fit && ap_fit->converged)
            model_table.columns.push_back("fitted_afterpulse_per_trigger");
        const auto [lo_it, hi_it] =
            std::minmax_element(spec.offsets_ns.begin(), spec.offsets_ns.end());
        for (double x :
             dense_grid(*lo_it, *hi_it, spec.output.model_curve_points, false)) {
            auto& row = model_table.add_row();
            row.push_back(format_double(x));
            if (det_fit && det_fit->converged)
                row.push_back(format_double(s_curve_value(*det_fit, x)));
            if (ap_fit && ap_fit->converged)
                row.push_back(format_double(s_curve_value(*ap_fit, x)));
        }
        a.model = std::move(model_table);
    }
    return a;
}

std::string hex_digest(std::uint64_t value) {
    char buf[19] = "0x0000000000000000";
    char tmp[17];
    auto [ptr, ec] = std::to_chars(tmp, tmp + sizeof(tmp), value, 16);
    (void)ec;
    const std::size_t digits = static_cast<std::size_t>(ptr - tmp);
    for (std::size_t i = 0; i < digits; ++i)
        buf[2 + 16 - digits + i] = tmp[i];
    return std::string(buf, 18);
}

std::string table_to_string(const Table& table) {
    std::ostringstream os;
    write_csv(table, os);
    return os.str();
}

}  // namespace

ExperimentOutcome run_experiment(const ExperimentSpec& spec_in,
                                 const RunOptions& options) {
    ExperimentSpec spec = spec_in;
    if (options.seed_override) spec.seed = *options.seed_override;
    validate(spec);
    const int jobs = std::max(options.jobs, 1);

    Artifacts artifacts;
    switch (spec.kind) {
        case ExperimentKind::double_gate:
            artifacts = run_double_gate(spec, jobs);
            break;
        case ExperimentKind::afterpulse_sweep:
            artifacts = run_afterpulse_sweep(spec, jobs);
            break;
        case ExperimentKind::arrhenius:
            artifacts = run_arrhenius(spec, jobs);
            break;
        case ExperimentKind::free_running:
            artifacts = run_free_running(spec, jobs);
            break;
        case ExperimentKind::charge_persistence:
            artifacts = run_charge_persistence(spec, jobs);
            break;
        case ExperimentKind::quench_time:
            artifacts = run_quench_time(spec, jobs);
            break;
    }

    ExperimentOutcome outcome;
    outcome.fit_converged = artifacts.fits_ok;
    outcome.status = options.strict && !artifacts.fits_ok ? 3 : 0;

    const fs::path out_dir =
        options.output_dir.empty() ? fs::path(".") : fs::path(options.output_dir);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec)
        throw IoError("cannot create output directory: " + out_dir.string());

    const auto write_file = [&](const std::string& name,
                                const std::string& content) {
        const fs::path path = out_dir / name;
        std::ofstream os(path, std::ios::binary);
        if (!os) throw IoError("cannot open output file: " + path.string());
        os << content;
        os.flush();
        if (!os) throw IoError("cannot write output file: " + path.string());
        outcome.files_written.push_back(path.string());
    };

    json outputs = json::object();
    const std::string points_name = spec.output.prefix + "_points.csv";
    const std::string points_text = table_to_string(artifacts.points);
    write_file(points_name, points_text);
    outputs["points_csv"] = points_name;
    outputs["points_digest_fnv1a64"] = hex_digest(hash_tag(points_text));

    if (artifacts.model) {
        const std::string model_name = spec.output.prefix + "_model.csv";
        const std::string model_text = table_to_string(*artifacts.model);
        write_file(model_name, model_text);
        outputs["model_csv"] = model_name;
        outputs["model_digest_fnv1a64"] = hex_digest(hash_tag(model_text));
    }

    if (spec.kind == ExperimentKind::double_gate && spec.output.write_clicks) {
        const std::string clicks_csv_name = spec.output.prefix + "_clicks.csv";
        std::ostringstream csv;
        write_clicks_csv(artifacts.clicks, csv);
        write_file(clicks_csv_name, csv.str());
        outputs["clicks_csv"] = clicks_csv_name;
        const std::string clicks_bin_name = spec.output.prefix + "_clicks.bin";
        std::ostringstream bin(std::ios::binary);
        write_clicks_binary(artifacts.clicks, bin);
        write_file(clicks_bin_name, bin.str());
        outputs["clicks_binary"] = clicks_bin_name;
    }

    json report = json::object();
    report["tool"] = json{{"name", "spadsim"}, {"version", kVersion}};
    report["experiment"] = to_string(spec.kind);
    report["seed"] = spec.seed;
    report["configuration"] = spec.raw;
    report["results"] = std::move(artifacts.results);
    if (!artifacts.fits.empty()) report["fits"] = artifacts.fits;
    report["outputs"] = std::move(outputs);

    const std::string report_name = spec.output.prefix + "_report.json";
    write_file(report_name, report.dump(2) + "\n");
    outcome.report = std::move(report);
    return outcome;
}

}  // namespace spadsim
