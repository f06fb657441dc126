#ifndef NGD_OPTIMIZE_HPP
#define NGD_OPTIMIZE_HPP

#include <chrono>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>

#include "ngd/linalg.hpp"
#include "ngd/operator.hpp"

namespace ngd {

// A minimization problem: cost, gradient, and named metric factories that
// build the natural-gradient metric operator at a given point.
struct Problem {
    std::size_t dim = 0;
    std::function<double(const Vec&)> cost;
    std::function<Vec(const Vec&)> gradient;
    std::map<std::string, std::function<LinearOperator(const Vec&)>> metrics;
};

enum class Method { gd, nonlinear_cg, ngd };

inline std::string to_string(Method m) {
    switch (m) {
        case Method::gd: return "gd";
        case Method::nonlinear_cg: return "nonlinear_cg";
        case Method::ngd: return "ngd";
    }
    return "?";
}

struct LineSearchConfig {
    double initial_step = 1.0;
    double shrink_factor = 0.5;
    double armijo_c = 1e-4;
    std::size_t max_backtracks = 40;
    bool normalize_direction = true;
};

struct OptimizerConfig {
    Method method = Method::gd;
    std::size_t max_iterations = 1000;
    double grad_tol = 1e-12;
    double cost_tol = 0.0;
    std::string metric_id;  // required iff method == ngd
    std::uint64_t seed = 0;
    CgSolverConfig cg;
};

enum class TerminalReason { converged, max_iters, line_search_failed };

inline std::string to_string(TerminalReason r) {
    switch (r) {
        case TerminalReason::converged: return "converged";
        case TerminalReason::max_iters: return "max_iters";
        case TerminalReason::line_search_failed: return "line_search_failed";
    }
    return "?";
}

struct TraceRecord {
    std::size_t iteration = 0;
    double cost = 0.0;
    double grad_norm = 0.0;
    double step_size = 0.0;
    double elapsed_seconds = 0.0;
};

struct RunTrace {
    double initial_cost = 0.0;
    double initial_grad_norm = 0.0;
    std::vector<TraceRecord> records;
    TerminalReason terminal_reason = TerminalReason::max_iters;
    std::size_t cost_evaluations = 0;
    std::size_t gradient_evaluations = 0;
    std::size_t metric_applications = 0;
    std::size_t descent_fallbacks = 0;  // NGD direction replaced by -grad
    std::string diagnostic;              // set on aborts (non-finite values)
};

inline Vec gradient_descent_direction(const Vec& grad) {
    return scaled(grad, -1.0);
}

// Polak-Ribiere+ direction with automatic reset to steepest descent.
inline Vec nonlinear_cg_direction(const Vec& grad, const Vec* prev_grad, const Vec* prev_dir) {
    if (!prev_grad || !prev_dir || norm2(*prev_grad) == 0.0) return scaled(grad, -1.0);
    const double denom = dot(*prev_grad, *prev_grad);
    double beta = (dot(grad, grad) - dot(grad, *prev_grad)) / denom;
    if (beta < 0.0) beta = 0.0;
    Vec dir = scaled(grad, -1.0);
    axpy(beta, *prev_dir, dir);
    return dir;
}

// Solve G dx = grad by CG and return the descent direction -dx.
inline Vec natural_direction(const Vec& grad, const LinearOperator& metric,
                             const CgSolverConfig& cfg = {}) {
    Vec dx = cg_solve(metric, grad, cfg);
    scal(-1.0, dx);
    return dx;
}

struct LineSearchResult {
    bool success = false;
    double step = 0.0;
    Vec x_new;
    double cost_new = 0.0;
    std::size_t cost_evaluations = 0;
};

// Backtracking Armijo search along dir; dir is normalized first when asked.
inline LineSearchResult line_search(const std::function<double(const Vec&)>& cost, const Vec& x,
                                    double cost_x, const Vec& grad, Vec dir,
                                    const LineSearchConfig& cfg) {
    if (cfg.normalize_direction) {
        const double nd = norm2(dir);
        if (nd == 0.0) throw std::invalid_argument("line_search: zero direction");
        scal(1.0 / nd, dir);
    }
    const double dg = dot(dir, grad);
    if (dg >= 0.0) throw std::invalid_argument("line_search: not a descent direction");

    LineSearchResult res;
    double eta = cfg.initial_step;
    for (std::size_t k = 0; k <= cfg.max_backtracks; ++k) {
        Vec trial = x;
        axpy(eta, dir, trial);
        const double c = cost(trial);
        ++res.cost_evaluations;
        if (std::isfinite(c) && c <= cost_x + cfg.armijo_c * eta * dg) {
            res.success = true;
            res.step = eta;
            res.x_new = std::move(trial);
            res.cost_new = c;
            return res;
        }
        eta *= cfg.shrink_factor;
    }
    return res;
}

inline RunTrace optimize(const Problem& problem, const Vec& x0, const OptimizerConfig& opt_cfg,
                         const LineSearchConfig& ls_cfg = {}) {
    if ((opt_cfg.method == Method::ngd) != !opt_cfg.metric_id.empty())
        throw std::invalid_argument("optimize: metric_id must be present iff method = ngd");

    std::function<LinearOperator(const Vec&)> metric_factory;
    if (opt_cfg.method == Method::ngd) {
        auto it = problem.metrics.find(opt_cfg.metric_id);
        if (it == problem.metrics.end())
            throw std::invalid_argument("optimize: unknown metric '" + opt_cfg.metric_id + "'");
        metric_factory = it->second;
    }

    RunTrace trace;
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&t0] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    Vec x = x0;
    double cost = problem.cost(x);
    Vec grad = problem.gradient(x);
    ++trace.cost_evaluations;
    ++trace.gradient_evaluations;
    trace.initial_cost = cost;
    trace.initial_grad_norm = norm2(grad);

    if (!std::isfinite(cost) || !all_finite(grad)) {
        trace.diagnostic = "non-finite cost or gradient at initial point";
        throw std::runtime_error("optimize: " + trace.diagnostic);
    }

    Vec prev_grad, prev_dir;
    for (std::size_t it = 1; it <= opt_cfg.max_iterations; ++it) {
        const double gnorm = norm2(grad);
        if (gnorm <= opt_cfg.grad_tol) {
            trace.terminal_reason = TerminalReason::converged;
            return trace;
        }

        Vec dir;
        switch (opt_cfg.method) {
            case Method::gd:
                dir = gradient_descent_direction(grad);
                break;
            case Method::nonlinear_cg:
                dir = nonlinear_cg_direction(grad, prev_grad.empty() ? nullptr : &prev_grad,
                                             prev_dir.empty() ? nullptr : &prev_dir);
                if (dot(dir, grad) >= 0.0) dir = gradient_descent_direction(grad);
                break;
            case Method::ngd: {
                LinearOperator metric = metric_factory(x);
                auto base = metric.apply;
                metric.apply = [&trace, base](const Vec& v) {
                    ++trace.metric_applications;
                    return base(v);
                };
                CgResult sol = cg_solve_result(metric, grad, opt_cfg.cg);
                dir = scaled(sol.x, -1.0);
                // Semidefinite metrics plus finite solver tolerance can yield
                // a non-descent direction; fall back to steepest descent.
                if (!sol.converged || dot(dir, grad) >= 0.0) {
                    dir = gradient_descent_direction(grad);
                    ++trace.descent_fallbacks;
                }
                break;
            }
        }

        LineSearchResult ls = line_search(problem.cost, x, cost, grad, dir, ls_cfg);
        trace.cost_evaluations += ls.cost_evaluations;
        if (!ls.success) {
            trace.terminal_reason = TerminalReason::line_search_failed;
            return trace;
        }

        const double prev_cost = cost;
        x = std::move(ls.x_new);
        cost = ls.cost_new;
        prev_grad = std::move(grad);
        prev_dir = std::move(dir);
        grad = problem.gradient(x);
        ++trace.gradient_evaluations;

        if (!std::isfinite(cost) || !all_finite(grad)) {
            trace.diagnostic = "non-finite cost or gradient at iteration " + std::to_string(it);
            throw std::runtime_error("optimize: " + trace.diagnostic);
        }

        trace.records.push_back({it, cost, norm2(grad), ls.step, elapsed()});

        if (opt_cfg.cost_tol > 0.0 && std::abs(prev_cost - cost) <= opt_cfg.cost_tol) {
            trace.terminal_reason = TerminalReason::converged;
            return trace;
        }
    }
    trace.terminal_reason = opt_cfg.max_iterations == 0 || norm2(grad) > opt_cfg.grad_tol
                                ? TerminalReason::max_iters
                                : TerminalReason::converged;
    return trace;
}

}  // namespace ngd

#endif
