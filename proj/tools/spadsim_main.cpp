// Command line front end. Links only the public C interface.

#include <cstdint>
#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "spadsim/spadsim.h"

namespace {

int exit_code(spadsim_status status) {
    switch (status) {
        case SPADSIM_OK: return 0;
        case SPADSIM_ERR_PARSE:
        case SPADSIM_ERR_VALIDATION: return 1;
        case SPADSIM_ERR_FIT_NOT_CONVERGED: return 3;
        case SPADSIM_ERR_RUNTIME:
        case SPADSIM_ERR_IO:
        case SPADSIM_ERR_INVALID_ARGUMENT: return 2;
    }
    return 2;
}

void print_failure(const spadsim_experiment* experiment) {
    const size_t count = spadsim_experiment_diagnostic_count(experiment);
    for (size_t i = 0; i < count; ++i)
        std::fprintf(stderr, "error: %s\n",
                     spadsim_experiment_diagnostic(experiment, i));
    const char* error = spadsim_experiment_error(experiment);
    if (count == 0 && error != nullptr && error[0] != '\0')
        std::fprintf(stderr, "error: %s\n", error);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Monte Carlo characterization of a gated avalanche "
                 "single-photon detector"};
    app.set_version_flag("--version", std::string(spadsim_version()));

    std::string spec_path;
    app.add_option("spec", spec_path, "experiment description (JSON file)")
        ->required();
    bool validate_only = false;
    app.add_flag("--validate", validate_only,
                 "check the description and exit without running");
    bool strict = false;
    app.add_flag("--strict", strict,
                 "treat a non-converged fit as a failure (exit code 3)");
    std::uint64_t seed_override = 0;
    CLI::Option* seed_opt =
        app.add_option("--seed-override", seed_override,
                       "replace the seed given in the description");
    int jobs = 1;
    app.add_option("--jobs", jobs, "worker threads for sweep points")
        ->check(CLI::PositiveNumber);
    std::string out_dir = ".";
    app.add_option("--out-dir", out_dir, "directory for the output files");

    CLI11_PARSE(app, argc, argv);

    spadsim_experiment* experiment = nullptr;
    spadsim_status status =
        spadsim_experiment_create_from_file(spec_path.c_str(), &experiment);
    if (status != SPADSIM_OK) {
        print_failure(experiment);
        spadsim_experiment_destroy(experiment);
        return exit_code(status);
    }

    if (seed_opt->count() > 0)
        spadsim_experiment_set_seed(experiment, seed_override);
    spadsim_experiment_set_jobs(experiment, jobs);
    spadsim_experiment_set_strict(experiment, strict ? 1 : 0);
    spadsim_experiment_set_output_dir(experiment, out_dir.c_str());

    if (validate_only) {
        status = spadsim_experiment_validate(experiment);
        if (status != SPADSIM_OK) {
            print_failure(experiment);
        } else {
            std::printf("OK\n");
        }
        spadsim_experiment_destroy(experiment);
        return exit_code(status);
    }

    status = spadsim_experiment_run(experiment);
    if (status != SPADSIM_OK && status != SPADSIM_ERR_FIT_NOT_CONVERGED) {
        print_failure(experiment);
        spadsim_experiment_destroy(experiment);
        return exit_code(status);
    }
    const size_t outputs = spadsim_experiment_output_count(experiment);
    for (size_t i = 0; i < outputs; ++i)
        std::printf("wrote %s\n", spadsim_experiment_output_path(experiment, i));
    if (status == SPADSIM_ERR_FIT_NOT_CONVERGED)
        std::fprintf(stderr, "error: a fit did not converge\n");
    spadsim_experiment_destroy(experiment);
    return exit_code(status);
}
