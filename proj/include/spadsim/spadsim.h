#ifndef SPADSIM_SPADSIM_H
#define SPADSIM_SPADSIM_H

/* C interface to the avalanche photodiode characterization simulator.
 *
 * Experiments are described by JSON documents (see the README for the
 * format). A handle is returned even when loading fails so callers can
 * read the diagnostics; destroy it in every case. Handles are not thread
 * safe; distinct handles are independent.
 */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum spadsim_status {
    SPADSIM_OK = 0,
    SPADSIM_ERR_PARSE = 1,
    SPADSIM_ERR_VALIDATION = 2,
    SPADSIM_ERR_RUNTIME = 3,
    SPADSIM_ERR_FIT_NOT_CONVERGED = 4,
    SPADSIM_ERR_IO = 5,
    SPADSIM_ERR_INVALID_ARGUMENT = 6
} spadsim_status;

/* Library version, e.g. "1.0.0". */
const char* spadsim_version(void);

typedef struct spadsim_experiment spadsim_experiment;

/* Load an experiment description. On failure the returned status is not
 * SPADSIM_OK and, when `out` received a handle, the handle carries the
 * diagnostics. `*out` is set to NULL only on allocation failure or invalid
 * arguments. */
spadsim_status spadsim_experiment_create_from_file(const char* path,
                                                   spadsim_experiment** out);
spadsim_status spadsim_experiment_create_from_string(const char* json_text,
                                                     spadsim_experiment** out);
void spadsim_experiment_destroy(spadsim_experiment* experiment);

/* Diagnostics of the last failed call on this handle; cleared by the next
 * call. Returned strings stay valid until then. */
size_t spadsim_experiment_diagnostic_count(const spadsim_experiment* experiment);
const char* spadsim_experiment_diagnostic(const spadsim_experiment* experiment,
                                          size_t index);
/* One-line summary of the last failure; empty string when none. */
const char* spadsim_experiment_error(const spadsim_experiment* experiment);

/* Run configuration. */
spadsim_status spadsim_experiment_set_seed(spadsim_experiment* experiment,
                                           uint64_t seed);
spadsim_status spadsim_experiment_set_jobs(spadsim_experiment* experiment,
                                           int jobs);
spadsim_status spadsim_experiment_set_strict(spadsim_experiment* experiment,
                                             int strict);
spadsim_status spadsim_experiment_set_output_dir(spadsim_experiment* experiment,
                                                 const char* dir);

/* Semantic validation without running. */
spadsim_status spadsim_experiment_validate(spadsim_experiment* experiment);

/* Execute the experiment and write its output files. */
spadsim_status spadsim_experiment_run(spadsim_experiment* experiment);

/* After a successful run: paths of the written files and the JSON report. */
size_t spadsim_experiment_output_count(const spadsim_experiment* experiment);
const char* spadsim_experiment_output_path(const spadsim_experiment* experiment,
                                           size_t index);
const char* spadsim_experiment_report_json(const spadsim_experiment* experiment);

/* Closed-form model evaluators.
 *
 * Trap species are passed as parallel arrays of length n_species: the mean
 * number of carriers trapped per avalanche and the release time constant in
 * nanoseconds. */

/* Carrier release rate (1/ns) a time delay_ns after an avalanche. */
spadsim_status spadsim_detrapping_rate(const double* mean_filled,
                                       const double* detrap_tau_ns,
                                       size_t n_species, double delay_ns,
                                       double* out_rate_per_ns);

/* Afterpulse probability density (1/ns) for a gate of gate_width_ns opening
 * delay_ns after the avalanche; trigger_prob is the avalanche probability
 * per released carrier. */
spadsim_status spadsim_afterpulse_probability(const double* mean_filled,
                                              const double* detrap_tau_ns,
                                              size_t n_species,
                                              double trigger_prob,
                                              double gate_width_ns,
                                              double delay_ns,
                                              double* out_prob_per_ns);

/* Thermally activated dark count rate (1/ns):
 * prefactor * T^2 * exp(-Ea / kT). */
spadsim_status spadsim_dark_rate(double activation_energy_ev,
                                 double prefactor_per_ns_k2,
                                 double temperature_k,
                                 double* out_rate_per_ns);

#ifdef __cplusplus
}
#endif

#endif /* SPADSIM_SPADSIM_H */
