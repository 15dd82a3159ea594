#include "spadsim/spadsim.h"

#include <exception>
#include <new>
#include <optional>
#include <string>
#include <vector>

#include "spadsim/experiment.hpp"

struct spadsim_experiment {
    std::optional<spadsim::ExperimentSpec> spec;
    spadsim::RunOptions options;
    std::vector<std::string> diagnostics;
    std::string error;
    std::vector<std::string> outputs;
    std::string report_json;
};

namespace {

void clear_failure(spadsim_experiment* e) {
    e->diagnostics.clear();
    e->error.clear();
}

spadsim_status record_failure(spadsim_experiment* e, spadsim_status status,
                              const std::exception& ex) {
    e->error = ex.what();
    if (const auto* spec_error = dynamic_cast<const spadsim::SpecError*>(&ex))
        e->diagnostics = spec_error->diagnostics();
    return status;
}

template <typename Load>
spadsim_status create_experiment(spadsim_experiment** out, const Load& load) {
    if (out == nullptr) return SPADSIM_ERR_INVALID_ARGUMENT;
    *out = nullptr;
    auto* handle = new (std::nothrow) spadsim_experiment;
    if (handle == nullptr) return SPADSIM_ERR_RUNTIME;
    *out = handle;
    try {
        handle->spec = load();
        return SPADSIM_OK;
    } catch (const spadsim::IoError& e) {
        return record_failure(handle, SPADSIM_ERR_IO, e);
    } catch (const spadsim::SpecError& e) {
        return record_failure(handle, SPADSIM_ERR_PARSE, e);
    } catch (const std::exception& e) {
        return record_failure(handle, SPADSIM_ERR_RUNTIME, e);
    }
}

bool loaded(spadsim_experiment* e) { return e != nullptr && e->spec.has_value(); }

}  // namespace

extern "C" {

const char* spadsim_version(void) { return spadsim::kVersion; }

spadsim_status spadsim_experiment_create_from_file(const char* path,
                                                   spadsim_experiment** out) {
    if (path == nullptr) return SPADSIM_ERR_INVALID_ARGUMENT;
    return create_experiment(
        out, [path] { return spadsim::load_experiment_file(path); });
}

spadsim_status spadsim_experiment_create_from_string(const char* json_text,
                                                     spadsim_experiment** out) {
    if (json_text == nullptr) return SPADSIM_ERR_INVALID_ARGUMENT;
    return create_experiment(
        out, [json_text] { return spadsim::parse_experiment_json(json_text); });
}

void spadsim_experiment_destroy(spadsim_experiment* experiment) {
    delete experiment;
}

size_t spadsim_experiment_diagnostic_count(const spadsim_experiment* experiment) {
    return experiment == nullptr ? 0 : experiment->diagnostics.size();
}

const char* spadsim_experiment_diagnostic(const spadsim_experiment* experiment,
                                          size_t index) {
    if (experiment == nullptr || index >= experiment->diagnostics.size())
        return nullptr;
    return experiment->diagnostics[index].c_str();
}

const char* spadsim_experiment_error(const spadsim_experiment* experiment) {
    return experiment == nullptr ? "" : experiment->error.c_str();
}

spadsim_status spadsim_experiment_set_seed(spadsim_experiment* experiment,
                                           uint64_t seed) {
    if (!loaded(experiment)) return SPADSIM_ERR_INVALID_ARGUMENT;
    experiment->options.seed_override = seed;
    return SPADSIM_OK;
}

spadsim_status spadsim_experiment_set_jobs(spadsim_experiment* experiment,
                                           int jobs) {
    if (!loaded(experiment) || jobs < 1) return SPADSIM_ERR_INVALID_ARGUMENT;
    experiment->options.jobs = jobs;
    return SPADSIM_OK;
}

spadsim_status spadsim_experiment_set_strict(spadsim_experiment* experiment,
                                             int strict) {
    if (!loaded(experiment)) return SPADSIM_ERR_INVALID_ARGUMENT;
    experiment->options.strict = strict != 0;
    return SPADSIM_OK;
}

spadsim_status spadsim_experiment_set_output_dir(spadsim_experiment* experiment,
                                                 const char* dir) {
    if (!loaded(experiment) || dir == nullptr)
        return SPADSIM_ERR_INVALID_ARGUMENT;
    experiment->options.output_dir = dir;
    return SPADSIM_OK;
}

spadsim_status spadsim_experiment_validate(spadsim_experiment* experiment) {
    if (!loaded(experiment)) return SPADSIM_ERR_INVALID_ARGUMENT;
    clear_failure(experiment);
    try {
        spadsim::ExperimentSpec spec = *experiment->spec;
        if (experiment->options.seed_override)
            spec.seed = *experiment->options.seed_override;
        spadsim::validate(spec);
        return SPADSIM_OK;
    } catch (const spadsim::SpecError& e) {
        return record_failure(experiment, SPADSIM_ERR_VALIDATION, e);
    } catch (const std::exception& e) {
        return record_failure(experiment, SPADSIM_ERR_RUNTIME, e);
    }
}

spadsim_status spadsim_experiment_run(spadsim_experiment* experiment) {
    if (!loaded(experiment)) return SPADSIM_ERR_INVALID_ARGUMENT;
    clear_failure(experiment);
    experiment->outputs.clear();
    experiment->report_json.clear();
    try {
        const spadsim::ExperimentOutcome outcome =
            spadsim::run_experiment(*experiment->spec, experiment->options);
        experiment->outputs = outcome.files_written;
        experiment->report_json = outcome.report.dump(2);
        if (outcome.status == 3) {
            experiment->error = "a fit did not converge (strict mode)";
            return SPADSIM_ERR_FIT_NOT_CONVERGED;
        }
        return SPADSIM_OK;
    } catch (const spadsim::SpecError& e) {
        return record_failure(experiment, SPADSIM_ERR_VALIDATION, e);
    } catch (const spadsim::IoError& e) {
        return record_failure(experiment, SPADSIM_ERR_IO, e);
    } catch (const std::exception& e) {
        return record_failure(experiment, SPADSIM_ERR_RUNTIME, e);
    }
}

size_t spadsim_experiment_output_count(const spadsim_experiment* experiment) {
    return experiment == nullptr ? 0 : experiment->outputs.size();
}

const char* spadsim_experiment_output_path(const spadsim_experiment* experiment,
                                           size_t index) {
    if (experiment == nullptr || index >= experiment->outputs.size())
        return nullptr;
    return experiment->outputs[index].c_str();
}

const char* spadsim_experiment_report_json(const spadsim_experiment* experiment) {
    return experiment == nullptr ? "" : experiment->report_json.c_str();
}

spadsim_status spadsim_detrapping_rate(const double* mean_filled,
                                       const double* detrap_tau_ns,
                                       size_t n_species, double delay_ns,
                                       double* out_rate_per_ns) {
    if (out_rate_per_ns == nullptr ||
        (n_species > 0 && (mean_filled == nullptr || detrap_tau_ns == nullptr)))
        return SPADSIM_ERR_INVALID_ARGUMENT;
    try {
        std::vector<spadsim::TrapSpecies> traps(n_species);
        for (size_t i = 0; i < n_species; ++i) {
            traps[i].mean_filled = mean_filled[i];
            traps[i].detrap_tau_ns = detrap_tau_ns[i];
        }
        *out_rate_per_ns = spadsim::detrapping_rate(traps, delay_ns);
        return SPADSIM_OK;
    } catch (const std::exception&) {
        return SPADSIM_ERR_INVALID_ARGUMENT;
    }
}

spadsim_status spadsim_afterpulse_probability(const double* mean_filled,
                                              const double* detrap_tau_ns,
                                              size_t n_species,
                                              double trigger_prob,
                                              double gate_width_ns,
                                              double delay_ns,
                                              double* out_prob_per_ns) {
    if (out_prob_per_ns == nullptr ||
        (n_species > 0 && (mean_filled == nullptr || detrap_tau_ns == nullptr)))
        return SPADSIM_ERR_INVALID_ARGUMENT;
    if (!(gate_width_ns > 0.0) || !(trigger_prob > 0.0) || trigger_prob > 1.0)
        return SPADSIM_ERR_INVALID_ARGUMENT;
    try {
        spadsim::AfterpulseModel model;
        model.trigger_prob = trigger_prob;
        model.afterpulse_gate_ns = gate_width_ns;
        model.traps.resize(n_species);
        for (size_t i = 0; i < n_species; ++i) {
            model.traps[i].mean_filled = mean_filled[i];
            model.traps[i].detrap_tau_ns = detrap_tau_ns[i];
        }
        *out_prob_per_ns = spadsim::afterpulse_probability(model, delay_ns);
        return SPADSIM_OK;
    } catch (const std::exception&) {
        return SPADSIM_ERR_INVALID_ARGUMENT;
    }
}

spadsim_status spadsim_dark_rate(double activation_energy_ev,
                                 double prefactor_per_ns_k2,
                                 double temperature_k,
                                 double* out_rate_per_ns) {
    if (out_rate_per_ns == nullptr) return SPADSIM_ERR_INVALID_ARGUMENT;
    try {
        spadsim::ThermalModel model;
        model.activation_energy_ev = activation_energy_ev;
        model.prefactor_per_ns_k2 = prefactor_per_ns_k2;
        *out_rate_per_ns = spadsim::dark_rate(model, temperature_k);
        return SPADSIM_OK;
    } catch (const std::exception&) {
        return SPADSIM_ERR_INVALID_ARGUMENT;
    }
}

}  // extern "C"
