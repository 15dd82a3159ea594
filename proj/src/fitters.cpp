#include "spadsim/fitters.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "spadsim/device_model.hpp"

namespace spadsim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kInvSqrt2 = 0.7071067811865476;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

double weight_of(double se) {
    return se > 0.0 && std::isfinite(se) ? 1.0 / se : 1.0;
}

bool has_se(double se) { return se > 0.0 && std::isfinite(se); }

// Gauss-Jordan with partial pivoting on the tiny systems used here.
bool solve_dense(std::vector<double> a, std::size_t n, std::vector<double> b,
                 std::vector<double>& x) {
    double scale = 0.0;
    for (double v : a) scale = std::max(scale, std::fabs(v));
    if (scale == 0.0) return false;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t row = col + 1; row < n; ++row)
            if (std::fabs(a[row * n + col]) > std::fabs(a[pivot * n + col]))
                pivot = row;
        if (std::fabs(a[pivot * n + col]) < 1e-14 * scale) return false;
        if (pivot != col) {
            for (std::size_t j = 0; j < n; ++j)
                std::swap(a[col * n + j], a[pivot * n + j]);
            std::swap(b[col], b[pivot]);
        }
        const double inv = 1.0 / a[col * n + col];
        for (std::size_t j = 0; j < n; ++j) a[col * n + j] *= inv;
        b[col] *= inv;
        for (std::size_t row = 0; row < n; ++row) {
            if (row == col) continue;
            const double factor = a[row * n + col];
            if (factor == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j)
                a[row * n + j] -= factor * a[col * n + j];
            b[row] -= factor * b[col];
        }
    }
    x = std::move(b);
    return true;
}

bool invert_dense(const std::vector<double>& a, std::size_t n,
                  std::vector<double>& inv) {
    inv.assign(n * n, 0.0);
    std::vector<double> x;
    for (std::size_t col = 0; col < n; ++col) {
        std::vector<double> e(n, 0.0);
        e[col] = 1.0;
        if (!solve_dense(a, n, std::move(e), x)) return false;
        for (std::size_t row = 0; row < n; ++row) inv[row * n + col] = x[row];
    }
    return true;
}

double aicc_value(double goodness_term, int k_params, std::size_t n_points) {
    const double dof = static_cast<double>(n_points) - k_params - 1.0;
    if (dof <= 0.0) return kInf;
    return goodness_term + 2.0 * k_params +
           2.0 * k_params * (k_params + 1.0) / dof;
}

// Natural-space covariance from the internal one: log-transformed
// coordinates pick up a factor of the natural value per index.
std::vector<double> natural_covariance(const std::vector<double>& internal_cov,
                                       const std::vector<double>& natural,
                                       const std::vector<bool>& is_log,
                                       double scale) {
    if (internal_cov.empty()) return {};
    const std::size_t k = natural.size();
    std::vector<double> cov(k * k);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            double v = internal_cov[i * k + j] * scale;
            if (is_log[i]) v *= natural[i];
            if (is_log[j]) v *= natural[j];
            cov[i * k + j] = v;
        }
    }
    return cov;
}

std::vector<double> errors_from_covariance(const std::vector<double>& cov,
                                           std::size_t k) {
    std::vector<double> se(k, std::numeric_limits<double>::quiet_NaN());
    if (cov.size() != k * k) return se;
    for (std::size_t i = 0; i < k; ++i) {
        const double v = cov[i * k + i];
        se[i] = v >= 0.0 ? std::sqrt(v) : std::numeric_limits<double>::quiet_NaN();
    }
    return se;
}

}  // namespace

double FitResult::param(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return params[i];
    throw std::out_of_range("FitResult::param: unknown parameter '" + name + "'");
}

double FitResult::standard_error(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return standard_errors[i];
    throw std::out_of_range("FitResult::standard_error: unknown parameter '" +
                            name + "'");
}

LmOutcome levenberg_marquardt(const LeastSquaresProblem& problem,
                              std::vector<double> initial,
                              const LmOptions& options) {
    const std::size_t k = problem.n_params;
    const std::size_t m = problem.n_points;
    if (initial.size() != k)
        throw std::invalid_argument("levenberg_marquardt: initial size mismatch");
    if (m < k)
        throw std::invalid_argument(
            "levenberg_marquardt: fewer points than parameters");

    LmOutcome out;
    std::vector<double> p = std::move(initial);
    std::vector<double> r(m), jac(m * k), r_try(m), jac_try(m * k);
    problem.eval(p, r, &jac);
    double rss = std::inner_product(r.begin(), r.end(), r.begin(), 0.0);
    if (!std::isfinite(rss))
        throw std::runtime_error(
            "levenberg_marquardt: residuals not finite at the initial point");

    double lambda = options.initial_lambda;
    bool converged = false;
    std::string message;
    int iter = 0;
    std::vector<double> gtj(k), normal(k * k), damped(k * k), step;
    while (iter < options.max_iterations && !converged) {
        ++iter;
        for (std::size_t i = 0; i < k; ++i) {
            double g = 0.0;
            for (std::size_t row = 0; row < m; ++row)
                g += jac[row * k + i] * r[row];
            gtj[i] = g;
            for (std::size_t j = i; j < k; ++j) {
                double s = 0.0;
                for (std::size_t row = 0; row < m; ++row)
                    s += jac[row * k + i] * jac[row * k + j];
                normal[i * k + j] = s;
                normal[j * k + i] = s;
            }
        }
        double gmax = 0.0;
        for (double g : gtj) gmax = std::max(gmax, std::fabs(g));
        if (gmax == 0.0) {
            converged = true;
            message = "gradient vanished";
            break;
        }

        bool accepted = false;
        for (int tries = 0; tries < 60; ++tries) {
            damped = normal;
            for (std::size_t i = 0; i < k; ++i)
                damped[i * k + i] +=
                    lambda * std::max(normal[i * k + i], 1e-30);
            std::vector<double> rhs(k);
            for (std::size_t i = 0; i < k; ++i) rhs[i] = -gtj[i];
            if (!solve_dense(damped, k, std::move(rhs), step)) {
                lambda *= 10.0;
                continue;
            }
            std::vector<double> p_try(k);
            for (std::size_t i = 0; i < k; ++i) p_try[i] = p[i] + step[i];
            problem.eval(p_try, r_try, &jac_try);
            const double rss_try =
                std::inner_product(r_try.begin(), r_try.end(), r_try.begin(), 0.0);
            if (std::isfinite(rss_try) && rss_try <= rss) {
                double step_max = 0.0;
                for (double s : step) step_max = std::max(step_max, std::fabs(s));
                const double decrease = rss - rss_try;
                p = std::move(p_try);
                r.swap(r_try);
                jac.swap(jac_try);
                const double rss_prev = rss;
                rss = rss_try;
                lambda = std::max(lambda * 0.25, 1e-12);
                accepted = true;
                if (step_max < options.param_tol) {
                    converged = true;
                    message = "parameter step below tolerance";
                } else if (decrease <=
                           options.rss_tol * (rss_prev + options.rss_tol)) {
                    converged = true;
                    message = "rss decrease below tolerance";
                }
                break;
            }
            lambda *= 10.0;
            if (lambda > 1e15) break;
        }
        if (!accepted) {
            message = "no downhill step found";
            break;
        }
    }
    if (!converged && message.empty()) message = "iteration limit reached";

    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = i; j < k; ++j) {
            double s = 0.0;
            for (std::size_t row = 0; row < m; ++row)
                s += jac[row * k + i] * jac[row * k + j];
            normal[i * k + j] = s;
            normal[j * k + i] = s;
        }
    }
    std::vector<double> cov;
    if (invert_dense(normal, k, cov)) {
        out.covariance = std::move(cov);
    } else if (!message.empty()) {
        message += "; covariance singular";
    }

    out.params = std::move(p);
    out.residuals = std::move(r);
    out.rss = rss;
    out.iterations = iter;
    out.converged = converged;
    out.message = std::move(message);
    return out;
}

std::vector<double> nnls(const std::vector<double>& a, std::size_t m,
                         std::size_t n, const std::vector<double>& b) {
    if (a.size() != m * n || b.size() != m)
        throw std::invalid_argument("nnls: shape mismatch");
    std::vector<double> x(n, 0.0);
    std::vector<bool> passive(n, false);
    std::vector<double> resid = b;
    double bmax = 0.0;
    for (double v : b) bmax = std::max(bmax, std::fabs(v));
    const double tol = 1e-12 * (1.0 + bmax);

    const auto solve_passive = [&](std::vector<double>& z,
                                   std::vector<std::size_t>& idx) -> bool {
        idx.clear();
        for (std::size_t j = 0; j < n; ++j)
            if (passive[j]) idx.push_back(j);
        const std::size_t np = idx.size();
        std::vector<double> normal(np * np, 0.0), rhs(np, 0.0);
        for (std::size_t i = 0; i < np; ++i) {
            for (std::size_t j = i; j < np; ++j) {
                double s = 0.0;
                for (std::size_t row = 0; row < m; ++row)
                    s += a[row * n + idx[i]] * a[row * n + idx[j]];
                normal[i * np + j] = s;
                normal[j * np + i] = s;
            }
            double s = 0.0;
            for (std::size_t row = 0; row < m; ++row)
                s += a[row * n + idx[i]] * b[row];
            rhs[i] = s;
        }
        return solve_dense(std::move(normal), np, std::move(rhs), z);
    };

    std::vector<double> z;
    std::vector<std::size_t> idx;
    const std::size_t max_outer = 3 * n + 10;
    for (std::size_t outer = 0; outer < max_outer; ++outer) {
        std::size_t best = n;
        double wbest = tol;
        for (std::size_t j = 0; j < n; ++j) {
            if (passive[j]) continue;
            double w = 0.0;
            for (std::size_t row = 0; row < m; ++row)
                w += a[row * n + j] * resid[row];
            if (w > wbest) {
                wbest = w;
                best = j;
            }
        }
        if (best == n) break;
        passive[best] = true;

        for (std::size_t inner = 0; inner < max_outer; ++inner) {
            if (!solve_passive(z, idx)) {
                passive[best] = false;
                break;
            }
            bool all_positive = true;
            for (double v : z)
                if (v <= 0.0) all_positive = false;
            if (all_positive) {
                for (std::size_t i = 0; i < idx.size(); ++i) x[idx[i]] = z[i];
                break;
            }
            double alpha = 1.0;
            for (std::size_t i = 0; i < idx.size(); ++i) {
                if (z[i] <= 0.0) {
                    const double denom = x[idx[i]] - z[i];
                    if (denom > 0.0)
                        alpha = std::min(alpha, x[idx[i]] / denom);
                }
            }
            for (std::size_t i = 0; i < idx.size(); ++i) {
                x[idx[i]] += alpha * (z[i] - x[idx[i]]);
                if (x[idx[i]] <= tol) {
                    x[idx[i]] = 0.0;
                    passive[idx[i]] = false;
                }
            }
        }

        for (std::size_t row = 0; row < m; ++row) {
            double s = b[row];
            for (std::size_t j = 0; j < n; ++j)
                if (x[j] != 0.0) s -= a[row * n + j] * x[j];
            resid[row] = s;
        }
    }
    return x;
}

namespace fit_detail {

LeastSquaresProblem make_afterpulse_problem(
    const std::vector<AfterpulseCurvePoint>& points, double afterpulse_gate_ns,
    double trigger_prob, int order) {
    LeastSquaresProblem problem;
    const std::size_t m = points.size();
    const std::size_t k = static_cast<std::size_t>(order);
    problem.n_params = 2 * k;
    problem.n_points = m;
    problem.eval = [points, afterpulse_gate_ns, trigger_prob, k, m](
                       const std::vector<double>& p, std::vector<double>& r,
                       std::vector<double>* jac) {
        r.resize(m);
        if (jac) jac->assign(m * 2 * k, 0.0);
        for (std::size_t j = 0; j < m; ++j) {
            const double delay = points[j].deadtime_ns;
            const double w = weight_of(points[j].se);
            double exponent = 0.0;
            for (std::size_t i = 0; i < k; ++i) {
                const double amp = std::exp(p[i]);
                const double tau = std::exp(p[k + i]);
                exponent += afterpulse_gate_ns * trigger_prob * amp / tau *
                            std::exp(-delay / tau);
            }
            const double y = -std::expm1(-exponent) / afterpulse_gate_ns;
            r[j] = (y - points[j].prob_per_ns) * w;
            if (!jac) continue;
            const double dy_dexp = std::exp(-exponent) / afterpulse_gate_ns;
            for (std::size_t i = 0; i < k; ++i) {
                const double amp = std::exp(p[i]);
                const double tau = std::exp(p[k + i]);
                const double decay = std::exp(-delay / tau);
                const double dexp_dlog_amp =
                    afterpulse_gate_ns * trigger_prob * amp / tau * decay;
                const double dexp_dlog_tau = afterpulse_gate_ns * trigger_prob *
                                             amp * decay * (delay - tau) /
                                             (tau * tau);
                (*jac)[j * 2 * k + i] = w * dy_dexp * dexp_dlog_amp;
                (*jac)[j * 2 * k + k + i] = w * dy_dexp * dexp_dlog_tau;
            }
        }
    };
    return problem;
}

LeastSquaresProblem make_free_running_problem(
    const std::vector<FreeRunningCurvePoint>& points,
    const FreeRunningFitOptions& options) {
    LeastSquaresProblem problem;
    const std::size_t m = points.size();
    const std::size_t n_amp = options.detrap_tau_ns.size();
    const std::size_t k = 2 + n_amp;
    problem.n_params = k;
    problem.n_points = m;
    const double rate = options.photon_rate_hz;
    const double mu = options.mean_photon_number;
    const double horizon = options.integration_horizon_ns;
    const std::vector<double> taus = options.detrap_tau_ns;
    problem.eval = [points, rate, mu, horizon, taus, m, k, n_amp](
                       const std::vector<double>& p, std::vector<double>& r,
                       std::vector<double>* jac) {
        const double p_de = std::exp(p[0]);
        const double p_dc = std::exp(p[1]);
        r.resize(m);
        if (jac) jac->assign(m * k, 0.0);
        for (std::size_t j = 0; j < m; ++j) {
            const double tau_d = points[j].deadtime_ns;
            const double w = weight_of(points[j].se_hz);
            double ap = 0.0;
            for (std::size_t i = 0; i < n_amp; ++i)
                ap += std::exp(p[2 + i]) * (std::exp(-tau_d / taus[i]) -
                                            std::exp(-horizon / taus[i]));
            const double survival = std::exp(-mu * p_de);
            const double eta = 1.0 - survival * (1.0 - p_dc);
            const double occupancy = eta * rate * tau_d * 1e-9;
            const double base = eta * rate * (1.0 - occupancy);
            const double model = base * (1.0 + ap);
            r[j] = (model - points[j].rate_hz) * w;
            if (!jac) continue;
            const double dmodel_deta =
                rate * (1.0 + ap) * (1.0 - 2.0 * eta * rate * tau_d * 1e-9);
            const double deta_dlog_pde = mu * p_de * survival * (1.0 - p_dc);
            const double deta_dlog_pdc = p_dc * survival;
            (*jac)[j * k + 0] = w * dmodel_deta * deta_dlog_pde;
            (*jac)[j * k + 1] = w * dmodel_deta * deta_dlog_pdc;
            for (std::size_t i = 0; i < n_amp; ++i) {
                const double amp = std::exp(p[2 + i]);
                const double span = std::exp(-tau_d / taus[i]) -
                                    std::exp(-horizon / taus[i]);
                (*jac)[j * k + 2 + i] = w * base * amp * span;
            }
        }
    };
    return problem;
}

LeastSquaresProblem make_s_curve_problem(const std::vector<SCurvePoint>& points) {
    LeastSquaresProblem problem;
    const std::size_t m = points.size();
    problem.n_params = 4;  // floor, plateau, midpoint, ln(width)
    problem.n_points = m;
    problem.eval = [points, m](const std::vector<double>& p,
                               std::vector<double>& r,
                               std::vector<double>* jac) {
        const double floor_level = p[0];
        const double plateau = p[1];
        const double midpoint = p[2];
        const double width = std::exp(p[3]);
        r.resize(m);
        if (jac) jac->assign(m * 4, 0.0);
        for (std::size_t j = 0; j < m; ++j) {
            const double w = weight_of(points[j].se);
            const double u = (midpoint - points[j].x) / width;
            const double cdf = 0.5 * std::erfc(-u * kInvSqrt2);
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * u * u);
            const double y = floor_level + (plateau - floor_level) * cdf;
            r[j] = (y - points[j].y) * w;
            if (!jac) continue;
            (*jac)[j * 4 + 0] = w * (1.0 - cdf);
            (*jac)[j * 4 + 1] = w * cdf;
            (*jac)[j * 4 + 2] = w * (plateau - floor_level) * pdf / width;
            (*jac)[j * 4 + 3] = -w * (plateau - floor_level) * pdf * u;
        }
    };
    return problem;
}

}  // namespace fit_detail

namespace {

// Initial afterpulse parameters: pick `order` time constants from a
// geometric candidate grid by non-negative linear least squares on the
// linearized release rate, then hand the best combination to the nonlinear
// stage.
std::vector<double> afterpulse_initial_guess(
    const std::vector<AfterpulseCurvePoint>& points, double gate_ns,
    double trigger_prob, int order) {
    const std::size_t m = points.size();
    const std::size_t k = static_cast<std::size_t>(order);
    double lo = kInf, hi = 0.0;
    for (const auto& pt : points) {
        if (pt.deadtime_ns > 0.0) lo = std::min(lo, pt.deadtime_ns);
        hi = std::max(hi, pt.deadtime_ns);
    }
    if (!std::isfinite(lo) || hi <= 0.0) {
        lo = 1.0;
        hi = 1e4;
    }
    lo = std::max(lo / 3.0, 1e-3);
    hi *= 3.0;

    const std::size_t grid_size = std::max<std::size_t>(3 * k, 10);
    std::vector<double> grid(grid_size);
    const double step = std::log(hi / lo) / static_cast<double>(grid_size - 1);
    for (std::size_t g = 0; g < grid_size; ++g)
        grid[g] = lo * std::exp(step * static_cast<double>(g));

    // Linearized target: release rate z = -ln(1 - y * gate) / (gate * trigger)
    // is linear in the amplitudes for fixed time constants.
    std::vector<double> z(m), wz(m);
    for (std::size_t j = 0; j < m; ++j) {
        const double arg = std::max(1.0 - points[j].prob_per_ns * gate_ns, 1e-12);
        z[j] = -std::log(arg) / (gate_ns * trigger_prob);
        wz[j] = weight_of(points[j].se) * arg * trigger_prob;
    }

    std::vector<std::size_t> combo(k);
    for (std::size_t i = 0; i < k; ++i) combo[i] = i;
    std::vector<double> best_amp(k, 0.0), best_tau(k, 0.0);
    double best_rss = kInf;
    std::vector<double> a(m * k), b(m);
    while (true) {
        for (std::size_t j = 0; j < m; ++j) {
            b[j] = wz[j] * z[j];
            for (std::size_t i = 0; i < k; ++i) {
                const double tau = grid[combo[i]];
                a[j * k + i] =
                    wz[j] * std::exp(-points[j].deadtime_ns / tau) / tau;
            }
        }
        const std::vector<double> coeff = nnls(a, m, k, b);
        double rss = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            double fit = 0.0;
            for (std::size_t i = 0; i < k; ++i) fit += a[j * k + i] * coeff[i];
            const double d = fit - b[j];
            rss += d * d;
        }
        if (rss < best_rss) {
            best_rss = rss;
            best_amp = coeff;
            for (std::size_t i = 0; i < k; ++i) best_tau[i] = grid[combo[i]];
        }
        // next k-combination of grid indices
        std::size_t pos = k;
        while (pos > 0 && combo[pos - 1] == grid_size - k + pos - 1) --pos;
        if (pos == 0) break;
        ++combo[pos - 1];
        for (std::size_t i = pos; i < k; ++i) combo[i] = combo[i - 1] + 1;
    }

    double amp_scale = 0.0;
    for (double v : best_amp) amp_scale = std::max(amp_scale, v);
    if (amp_scale <= 0.0) amp_scale = 1.0;
    std::vector<double> initial(2 * k);
    for (std::size_t i = 0; i < k; ++i) {
        initial[i] = std::log(std::max(best_amp[i], 1e-4 * amp_scale));
        initial[k + i] = std::log(best_tau[i]);
    }
    return initial;
}

FitResult package_fit(const LmOutcome& outcome,
                      const std::vector<double>& natural,
                      const std::vector<std::string>& names,
                      const std::vector<std::string>& units,
                      const std::vector<bool>& is_log, bool weighted,
                      std::size_t m) {
    FitResult result;
    result.params = natural;
    result.names = names;
    result.units = units;
    result.residuals = outcome.residuals;
    result.rss = outcome.rss;
    result.n_points = m;
    result.iterations = outcome.iterations;
    result.converged = outcome.converged;
    result.message = outcome.message;
    const std::size_t k = natural.size();
    double scale = 1.0;
    if (!weighted && m > k) scale = outcome.rss / static_cast<double>(m - k);
    result.covariance =
        natural_covariance(outcome.covariance, natural, is_log, scale);
    result.standard_errors = errors_from_covariance(result.covariance, k);
    return result;
}

}  // namespace

FitResult fit_afterpulse_curve(const std::vector<AfterpulseCurvePoint>& points,
                               double afterpulse_gate_ns,
                               const AfterpulseFitOptions& options) {
    if (!(afterpulse_gate_ns > 0.0))
        throw std::invalid_argument(
            "fit_afterpulse_curve: afterpulse_gate_ns must be > 0");
    if (!(options.trigger_prob > 0.0 && options.trigger_prob <= 1.0))
        throw std::invalid_argument(
            "fit_afterpulse_curve: trigger_prob must be in (0, 1]");
    int min_order = options.min_order;
    int max_order = options.max_order;
    if (options.fixed_order) min_order = max_order = *options.fixed_order;
    if (min_order < 1 || max_order < min_order)
        throw std::invalid_argument("fit_afterpulse_curve: bad order range");
    const std::size_t m = points.size();
    if (m < 2 * static_cast<std::size_t>(min_order))
        throw std::invalid_argument(
            "fit_afterpulse_curve: not enough points for the requested order");
    for (const auto& pt : points)
        if (pt.deadtime_ns < 0.0)
            throw std::invalid_argument(
                "fit_afterpulse_curve: deadtime_ns must be >= 0");

    bool weighted = true;
    for (const auto& pt : points) weighted = weighted && has_se(pt.se);

    struct Candidate {
        int order = 0;
        LmOutcome outcome;
        double aicc = kInf;
    };
    std::vector<Candidate> candidates;
    std::vector<FitResult::OrderCandidate> scan;
    for (int order = min_order; order <= max_order; ++order) {
        if (m < 2 * static_cast<std::size_t>(order)) break;
        const auto problem = fit_detail::make_afterpulse_problem(
            points, afterpulse_gate_ns, options.trigger_prob, order);
        const auto initial = afterpulse_initial_guess(
            points, afterpulse_gate_ns, options.trigger_prob, order);
        LmOutcome outcome = levenberg_marquardt(problem, initial, options.lm);
        const int k_params = 2 * order;
        double term;
        if (weighted) {
            term = outcome.rss;
        } else {
            const double mean_sq =
                std::max(outcome.rss, 1e-300) / static_cast<double>(m);
            term = static_cast<double>(m) * std::log(mean_sq);
        }
        const double aicc = aicc_value(term, k_params, m);
        scan.push_back({order, outcome.rss, aicc, outcome.converged});
        candidates.push_back({order, std::move(outcome), aicc});
    }
    if (candidates.empty())
        throw std::invalid_argument("fit_afterpulse_curve: no feasible order");

    const Candidate* chosen = nullptr;
    for (const Candidate& c : candidates) {
        if (!c.outcome.converged) continue;
        if (chosen == nullptr || c.aicc < chosen->aicc) chosen = &c;
    }
    if (chosen == nullptr) {
        for (const Candidate& c : candidates)
            if (chosen == nullptr || c.outcome.rss < chosen->outcome.rss)
                chosen = &c;
    }

    const std::size_t order = static_cast<std::size_t>(chosen->order);
    std::vector<double> amp(order), tau(order);
    for (std::size_t i = 0; i < order; ++i) {
        amp[i] = std::exp(chosen->outcome.params[i]);
        tau[i] = std::exp(chosen->outcome.params[order + i]);
    }
    std::vector<std::size_t> rank(order);
    for (std::size_t i = 0; i < order; ++i) rank[i] = i;
    std::sort(rank.begin(), rank.end(),
              [&](std::size_t a, std::size_t b) { return tau[a] < tau[b]; });

    std::vector<double> natural(2 * order);
    std::vector<std::string> names(2 * order), units(2 * order);
    std::vector<std::size_t> old_of_new(2 * order);
    for (std::size_t i = 0; i < order; ++i) {
        natural[i] = amp[rank[i]];
        natural[order + i] = tau[rank[i]];
        names[i] = "trap_mean[" + std::to_string(i) + "]";
        names[order + i] = "detrap_tau[" + std::to_string(i) + "]";
        units[i] = "";
        units[order + i] = "ns";
        old_of_new[i] = rank[i];
        old_of_new[order + i] = order + rank[i];
    }
    LmOutcome permuted = chosen->outcome;
    for (std::size_t i = 0; i < 2 * order; ++i)
        permuted.params[i] = chosen->outcome.params[old_of_new[i]];
    if (!chosen->outcome.covariance.empty()) {
        for (std::size_t i = 0; i < 2 * order; ++i)
            for (std::size_t j = 0; j < 2 * order; ++j)
                permuted.covariance[i * 2 * order + j] =
                    chosen->outcome
                        .covariance[old_of_new[i] * 2 * order + old_of_new[j]];
    }

    FitResult result = package_fit(permuted, natural, names, units,
                                   std::vector<bool>(2 * order, true), weighted,
                                   m);
    result.order_scan = std::move(scan);
    result.selected_order = chosen->order;
    return result;
}

FitResult fit_arrhenius(const std::vector<ArrheniusPoint>& points,
                        const ArrheniusOptions& options) {
    std::vector<ArrheniusPoint> used;
    for (const auto& pt : points) {
        if (options.min_temp_k && pt.temperature_k < *options.min_temp_k) continue;
        if (options.max_temp_k && pt.temperature_k > *options.max_temp_k) continue;
        used.push_back(pt);
    }
    if (used.size() < 2)
        throw std::invalid_argument(
            "fit_arrhenius: need at least two points inside the window");
    for (const auto& pt : used) {
        if (!(pt.temperature_k > 0.0))
            throw std::invalid_argument("fit_arrhenius: temperature_k must be > 0");
        if (!(pt.value > 0.0))
            throw std::invalid_argument("fit_arrhenius: value must be > 0");
    }

    const double sign = options.kind == ArrheniusKind::rate ? -1.0 : 1.0;
    bool weighted = true;
    for (const auto& pt : used) weighted = weighted && has_se(pt.se);

    const std::size_t m = used.size();
    double sw = 0.0, sx = 0.0, sxx = 0.0, sy = 0.0, sxy = 0.0;
    std::vector<double> xs(m), ys(m), ws(m);
    for (std::size_t j = 0; j < m; ++j) {
        const double t = used[j].temperature_k;
        xs[j] = 1.0 / (kBoltzmannEvPerK * t);
        const double log_t2 = 2.0 * std::log(t);
        ys[j] = options.kind == ArrheniusKind::rate
                    ? std::log(used[j].value) - log_t2
                    : std::log(used[j].value) + log_t2;
        // sigma of ln(value) is se/value
        ws[j] = weighted ? used[j].value / used[j].se : 1.0;
        const double w2 = ws[j] * ws[j];
        sw += w2;
        sx += w2 * xs[j];
        sxx += w2 * xs[j] * xs[j];
        sy += w2 * ys[j];
        sxy += w2 * xs[j] * ys[j];
    }
    const double det = sw * sxx - sx * sx;
    if (!(std::fabs(det) > 1e-30 * sw * sxx))
        throw std::invalid_argument(
            "fit_arrhenius: temperatures do not constrain the slope");
    const double slope = (sw * sxy - sx * sy) / det;
    const double intercept = (sxx * sy - sx * sxy) / det;

    FitResult result;
    result.n_points = m;
    result.iterations = 1;
    result.converged = true;
    result.message = "weighted linear regression";
    result.residuals.resize(m);
    double rss = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        result.residuals[j] = ws[j] * (intercept + slope * xs[j] - ys[j]);
        rss += result.residuals[j] * result.residuals[j];
    }
    result.rss = rss;

    // covariance of (intercept, slope)
    double c00 = sxx / det, c01 = -sx / det, c11 = sw / det;
    if (!weighted && m > 2) {
        const double scale = rss / static_cast<double>(m - 2);
        c00 *= scale;
        c01 *= scale;
        c11 *= scale;
    }
    const double ea = sign * slope;
    const double prefactor = std::exp(intercept);
    result.params = {ea, prefactor};
    result.names = {"activation_energy_ev", "prefactor"};
    result.units = {"eV", options.kind == ArrheniusKind::rate ? "1/ns/K^2"
                                                              : "ns*K^2"};
    result.covariance = {c11, sign * c01 * prefactor, sign * c01 * prefactor,
                         prefactor * prefactor * c00};
    result.standard_errors = errors_from_covariance(result.covariance, 2);
    return result;
}

FitResult fit_free_running(const std::vector<FreeRunningCurvePoint>& points,
                           const FreeRunningFitOptions& options) {
    if (!(options.photon_rate_hz > 0.0))
        throw std::invalid_argument("fit_free_running: photon_rate_hz must be > 0");
    if (!(options.mean_photon_number >= 0.0))
        throw std::invalid_argument(
            "fit_free_running: mean_photon_number must be >= 0");
    for (double tau : options.detrap_tau_ns)
        if (!(tau > 0.0))
            throw std::invalid_argument(
                "fit_free_running: detrap_tau_ns must be > 0");
    const std::size_t k = 2 + options.detrap_tau_ns.size();
    if (points.size() < k)
        throw std::invalid_argument("fit_free_running: not enough points");

    bool weighted = true;
    for (const auto& pt : points) weighted = weighted && has_se(pt.se_hz);

    std::vector<double> initial(k);
    initial[0] = std::log(std::max(options.initial_detection_efficiency, 1e-8));
    initial[1] = std::log(std::max(options.initial_dark_prob, 1e-12));
    for (std::size_t i = 2; i < k; ++i)
        initial[i] = std::log(std::max(options.initial_amplitude, 1e-8));

    const auto problem = fit_detail::make_free_running_problem(points, options);
    const LmOutcome outcome = levenberg_marquardt(problem, initial, options.lm);

    std::vector<double> natural(k);
    std::vector<std::string> names(k), units(k);
    for (std::size_t i = 0; i < k; ++i) natural[i] = std::exp(outcome.params[i]);
    names[0] = "detection_efficiency";
    names[1] = "dark_prob";
    units[0] = units[1] = "";
    for (std::size_t i = 2; i < k; ++i) {
        names[i] = "afterpulse_amp[" + std::to_string(i - 2) + "]";
        units[i] = "";
    }
    return package_fit(outcome, natural, names, units,
                       std::vector<bool>(k, true), weighted, points.size());
}

FitResult fit_s_curve(const std::vector<SCurvePoint>& points,
                      const LmOptions& options) {
    if (points.size() < 4)
        throw std::invalid_argument("fit_s_curve: need at least four points");
    std::vector<SCurvePoint> sorted = points;
    std::sort(sorted.begin(), sorted.end(),
              [](const SCurvePoint& a, const SCurvePoint& b) { return a.x < b.x; });

    bool weighted = true;
    for (const auto& pt : sorted) weighted = weighted && has_se(pt.se);

    double ymin = kInf, ymax = -kInf;
    for (const auto& pt : sorted) {
        ymin = std::min(ymin, pt.y);
        ymax = std::max(ymax, pt.y);
    }
    const double span = sorted.back().x - sorted.front().x;
    if (!(span > 0.0))
        throw std::invalid_argument("fit_s_curve: degenerate x range");

    // The curve falls from plateau (small x) to floor (large x); find where
    // it crosses the midlevel for the midpoint guess.
    const double midlevel = 0.5 * (ymin + ymax);
    double mid_guess = sorted[sorted.size() / 2].x;
    for (std::size_t j = 0; j + 1 < sorted.size(); ++j) {
        const double y0 = sorted[j].y, y1 = sorted[j + 1].y;
        if ((y0 - midlevel) * (y1 - midlevel) <= 0.0 && y0 != y1) {
            mid_guess = sorted[j].x + (midlevel - y0) / (y1 - y0) *
                                          (sorted[j + 1].x - sorted[j].x);
            break;
        }
    }
    double width_guess = span / 10.0;

    std::vector<double> initial = {ymin, ymax, mid_guess, std::log(width_guess)};
    const auto problem = fit_detail::make_s_curve_problem(sorted);
    const LmOutcome outcome = levenberg_marquardt(problem, initial, options);

    std::vector<double> natural = {outcome.params[0], outcome.params[1],
                                   outcome.params[2], std::exp(outcome.params[3])};
    FitResult result = package_fit(
        outcome, natural, {"floor", "plateau", "midpoint", "width"},
        {"", "", "ns", "ns"}, {false, false, false, true}, weighted,
        sorted.size());

    const double separation = natural[1] - natural[0];
    double var_sep = 0.0;
    if (result.covariance.size() == 16) {
        var_sep = result.covariance[0] + result.covariance[5] -
                  2.0 * result.covariance[1];
    }
    result.plateau_indistinct =
        separation <= 0.0 || separation * separation <= 4.0 * var_sep;
    return result;
}

double closing_time_from_width(double fitted_width_ns) {
    if (!(fitted_width_ns >= 0.0))
        throw std::domain_error("closing_time_from_width: width must be >= 0");
    return kRampWidthPerSigma * fitted_width_ns;
}

}  // namespace spadsim
