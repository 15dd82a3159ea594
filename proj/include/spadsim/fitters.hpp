#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

// Parameter recovery from measured curves: damped least squares on the
// closed-form models, with analytic Jacobians throughout. Positive-definite
// parameters (amplitudes, time constants, widths) are fitted in log space and
// reported back in natural units, covariance transformed accordingly.
//
// Points may carry per-point standard errors; residuals are then scaled by
// 1/se and the covariance is reported in absolute terms. Without errors the
// fit is unweighted and the covariance is scaled by rss / (n - k).

namespace spadsim {

struct FitResult {
    std::vector<double> params;
    std::vector<std::string> names;
    std::vector<std::string> units;
    std::vector<double> standard_errors;
    std::vector<double> covariance;  // row-major k x k, natural parameter space
    std::vector<double> residuals;   // final (weighted) residuals per point
    double rss = 0.0;                // sum of squared (weighted) residuals
    std::size_t n_points = 0;
    int iterations = 0;
    bool converged = false;
    std::string message;

    struct OrderCandidate {
        int order = 0;
        double rss = 0.0;
        double aicc = 0.0;
        bool converged = false;
    };
    std::vector<OrderCandidate> order_scan;  // multi-exponential fits only
    int selected_order = 0;
    bool plateau_indistinct = false;  // s-curve: plateau within noise of floor

    double param(const std::string& name) const;  // throws on unknown name
    double standard_error(const std::string& name) const;
};

// ---------------------------------------------------------------------------
// Generic damped least squares (exposed for the Jacobian regression tests).

struct LeastSquaresProblem {
    std::size_t n_params = 0;
    std::size_t n_points = 0;
    // Fills residuals (n_points); when jacobian != nullptr also fills it,
    // row-major n_points x n_params, as d(residual_i)/d(param_j).
    std::function<void(const std::vector<double>& params,
                       std::vector<double>& residuals,
                       std::vector<double>* jacobian)>
        eval;
};

struct LmOptions {
    int max_iterations = 200;
    double param_tol = 1e-8;   // largest |step| in internal coordinates
    double rss_tol = 1e-10;    // relative rss decrease
    double initial_lambda = 1e-3;
};

struct LmOutcome {
    std::vector<double> params;
    std::vector<double> covariance;  // (J^T J)^-1 in internal coordinates
    std::vector<double> residuals;
    double rss = 0.0;
    int iterations = 0;
    bool converged = false;
    std::string message;
};

LmOutcome levenberg_marquardt(const LeastSquaresProblem& problem,
                              std::vector<double> initial,
                              const LmOptions& options = {});

/// Non-negative least squares (active set), min ||A x - b|| s.t. x >= 0.
/// `a` is row-major m x n.
std::vector<double> nnls(const std::vector<double>& a, std::size_t m,
                         std::size_t n, const std::vector<double>& b);

// ---------------------------------------------------------------------------
// Afterpulse probability vs deadtime, auto model order.

struct AfterpulseCurvePoint {
    double deadtime_ns = 0.0;  // effective delay of the afterpulse gate
    double prob_per_ns = 0.0;
    double se = 0.0;  // 0 or NaN: unweighted point
};

struct AfterpulseFitOptions {
    int min_order = 1;
    int max_order = 3;
    std::optional<int> fixed_order;
    double trigger_prob = 1.0;  // known avalanche probability per release
    LmOptions lm;
};

/// Fits prob(delay) = (1 - exp(-gate * trigger * sum_i a_i/tau_i *
/// exp(-delay/tau_i))) / gate. Reports trap_mean[i] (= N_i when the trigger
/// probability is exact) and detrap_tau[i] sorted by time constant. The
/// model order is chosen by corrected AIC over [min_order, max_order] unless
/// fixed; initial values come from a non-negative linear fit on a geometric
/// time-constant grid.
FitResult fit_afterpulse_curve(const std::vector<AfterpulseCurvePoint>& points,
                               double afterpulse_gate_ns,
                               const AfterpulseFitOptions& options = {});

// ---------------------------------------------------------------------------
// Thermally activated quantities vs temperature.

struct ArrheniusPoint {
    double temperature_k = 0.0;
    double value = 0.0;  // strictly positive rate or time constant
    double se = 0.0;
};

enum class ArrheniusKind {
    rate,         // value ~ A T^2 exp(-Ea / kT), e.g. dark count probability
    detrap_time,  // value ~ C exp(+Ea / kT) / T^2, e.g. release time constant
};

struct ArrheniusOptions {
    ArrheniusKind kind = ArrheniusKind::rate;
    // Optional temperature window [lo, hi]; points outside are ignored.
    std::optional<double> min_temp_k;
    std::optional<double> max_temp_k;
};

/// Weighted linear regression of ln(value / T^2) (rate) or ln(value * T^2)
/// (detrap_time) against 1/(kT). Reports activation_energy_ev and the
/// prefactor exp(intercept).
FitResult fit_arrhenius(const std::vector<ArrheniusPoint>& points,
                        const ArrheniusOptions& options = {});

// ---------------------------------------------------------------------------
// Free-running count rate vs deadtime.

struct FreeRunningCurvePoint {
    double deadtime_ns = 0.0;
    double rate_hz = 0.0;
    double se_hz = 0.0;
};

struct FreeRunningFitOptions {
    std::vector<double> detrap_tau_ns;  // fixed, from gated characterization
    double photon_rate_hz = 0.0;        // known trial rate N
    double mean_photon_number = 1.0;    // known photons per trial
    double integration_horizon_ns = 100000.0;
    // Initial guesses for the free parameters.
    double initial_detection_efficiency = 0.1;
    double initial_dark_prob = 1e-3;
    double initial_amplitude = 0.1;
    LmOptions lm;
};

/// Fits R(tau_d) = eta N (1 - eta N tau_d) (1 + sum_i a_i (exp(-tau_d/dt_i) -
/// exp(-H/dt_i))) with eta = 1 - exp(-mu P_de)(1 - P_dc). Free parameters:
/// detection_efficiency, dark_prob and one afterpulse amplitude per fixed
/// time constant.
FitResult fit_free_running(const std::vector<FreeRunningCurvePoint>& points,
                           const FreeRunningFitOptions& options);

// ---------------------------------------------------------------------------
// Detection s-curve across the gate end (quench timing).

struct SCurvePoint {
    double x = 0.0;  // pulse offset
    double y = 0.0;  // click probability per gate
    double se = 0.0;
};

/// y(x) = floor + (plateau - floor) * Phi((midpoint - x) / width), with Phi
/// the standard normal CDF. Width is fitted in log space.
FitResult fit_s_curve(const std::vector<SCurvePoint>& points,
                      const LmOptions& options = {});

/// A linear sensitivity ramp of duration c, observed as a normal-CDF
/// s-curve, fits best with width sigma = c / kRampWidthPerSigma. Converts a
/// fitted s-curve width back to the ramp duration (the quench closing time).
inline constexpr double kRampWidthPerSigma = 3.1267238268268556;

double closing_time_from_width(double fitted_width_ns);

// Problem builders, exposed so tests can regress the analytic Jacobians
// against finite differences.
namespace fit_detail {
LeastSquaresProblem make_afterpulse_problem(
    const std::vector<AfterpulseCurvePoint>& points, double afterpulse_gate_ns,
    double trigger_prob, int order);
LeastSquaresProblem make_free_running_problem(
    const std::vector<FreeRunningCurvePoint>& points,
    const FreeRunningFitOptions& options);
LeastSquaresProblem make_s_curve_problem(const std::vector<SCurvePoint>& points);
}  // namespace fit_detail

}  // namespace spadsim
