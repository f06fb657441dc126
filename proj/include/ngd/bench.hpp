#ifndef NGD_BENCH_HPP
#define NGD_BENCH_HPP

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ngd/linalg.hpp"
#include "ngd/mps.hpp"
#include "ngd/optimize.hpp"
#include "ngd/oracles.hpp"
#include "ngd/rayleigh.hpp"
#include "ngd/spin.hpp"

// Benchmark harness: parses a key = value config file, runs the configured
// methods on one problem, and writes one CSV trace per method plus textual
// and JSON summaries.

namespace ngd::bench {

struct MethodSpec {
    Method method = Method::gd;
    std::string metric_id;  // ngd only
    std::optional<std::size_t> max_iterations;

    std::string label() const {
        std::string s = to_string(method);
        if (!metric_id.empty()) s += "_" + metric_id;
        return s;
    }
};

struct BenchmarkConfig {
    std::string problem;  // rayleigh | spin | mps_lsm
    std::string output_dir = "traces";
    std::uint64_t seed = 1;
    std::size_t max_iterations = 1000;
    double grad_tol = 1e-12;
    double cost_tol = 0.0;
    LineSearchConfig line_search;
    CgSolverConfig cg;
    std::vector<MethodSpec> methods;

    // rayleigh
    std::size_t rayleigh_n = 200;
    std::string matrix_file;
    // spin
    std::size_t spin_width = 32, spin_height = 32;
    bool spin_periodic = true;
    // mps_lsm
    std::size_t mps_length = 10, mps_bond_dim = 3;
    double mps_noise = 0.1;
    std::string mps_data_file;
};

inline MethodSpec parse_method_spec(const std::string& value) {
    std::istringstream ss(value);
    std::string name;
    ss >> name;
    MethodSpec spec;
    if (name == "gd")
        spec.method = Method::gd;
    else if (name == "nonlinear_cg" || name == "cg")
        spec.method = Method::nonlinear_cg;
    else if (name == "ngd")
        spec.method = Method::ngd;
    else
        throw std::runtime_error("config: unknown method '" + name + "'");
    std::string tok;
    while (ss >> tok) {
        auto eq = tok.find('=');
        if (eq == std::string::npos) {
            if (spec.method != Method::ngd || !spec.metric_id.empty())
                throw std::runtime_error("config: unexpected method token '" + tok + "'");
            spec.metric_id = tok;
        } else if (tok.substr(0, eq) == "max_iterations") {
            spec.max_iterations = std::stoull(tok.substr(eq + 1));
        } else {
            throw std::runtime_error("config: unknown method override '" + tok + "'");
        }
    }
    if (spec.method == Method::ngd && spec.metric_id.empty())
        throw std::runtime_error("config: ngd method requires a metric id");
    return spec;
}

inline BenchmarkConfig parse_config(std::istream& in) {
    BenchmarkConfig cfg;
    std::string line;
    while (std::getline(in, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const char* ws = " \t\r";
            s.erase(0, s.find_first_not_of(ws));
            auto last = s.find_last_not_of(ws);
            s.resize(last == std::string::npos ? 0 : last + 1);
            return s;
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) continue;

        if (key == "problem") cfg.problem = value;
        else if (key == "output_dir") cfg.output_dir = value;
        else if (key == "seed") cfg.seed = std::stoull(value);
        else if (key == "max_iterations") cfg.max_iterations = std::stoull(value);
        else if (key == "grad_tol") cfg.grad_tol = std::stod(value);
        else if (key == "cost_tol") cfg.cost_tol = std::stod(value);
        else if (key == "initial_step") cfg.line_search.initial_step = std::stod(value);
        else if (key == "shrink_factor") cfg.line_search.shrink_factor = std::stod(value);
        else if (key == "armijo_c") cfg.line_search.armijo_c = std::stod(value);
        else if (key == "max_backtracks") cfg.line_search.max_backtracks = std::stoull(value);
        else if (key == "normalize_direction")
            cfg.line_search.normalize_direction = (value == "true" || value == "1");
        else if (key == "cg_rel_tol") cfg.cg.rel_tol = std::stod(value);
        else if (key == "cg_abs_tol") cfg.cg.abs_tol = std::stod(value);
        else if (key == "cg_max_iters") cfg.cg.max_iters = std::stoull(value);
        else if (key == "method") cfg.methods.push_back(parse_method_spec(value));
        else if (key == "n") cfg.rayleigh_n = std::stoull(value);
        else if (key == "matrix_file") cfg.matrix_file = value;
        else if (key == "width") cfg.spin_width = std::stoull(value);
        else if (key == "height") cfg.spin_height = std::stoull(value);
        else if (key == "periodic") cfg.spin_periodic = (value == "true" || value == "1");
        else if (key == "length") cfg.mps_length = std::stoull(value);
        else if (key == "bond_dim") cfg.mps_bond_dim = std::stoull(value);
        else if (key == "noise") cfg.mps_noise = std::stod(value);
        else if (key == "data_file") cfg.mps_data_file = value;
        else throw std::runtime_error("config: unknown key '" + key + "'");
    }
    if (cfg.problem.empty()) throw std::runtime_error("config: missing 'problem'");
    if (cfg.methods.empty()) throw std::runtime_error("config: no methods configured");
    return cfg;
}

inline BenchmarkConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    return parse_config(in);
}

// Problem instance plus everything the harness needs around it.
struct PreparedProblem {
    Problem problem;
    Vec x0;
    std::optional<double> known_minimum;  // for the relative-error column
    std::vector<std::string> notes;
};

inline PreparedProblem prepare_problem(const BenchmarkConfig& cfg) {
    PreparedProblem prep;
    if (cfg.problem == "rayleigh") {
        RayleighInstance inst;
        if (!cfg.matrix_file.empty()) {
            bool asym = false;
            inst = rayleigh_instance_from_matrix(read_matrix_file(cfg.matrix_file), cfg.seed, &asym);
            if (asym) prep.notes.push_back("matrix file was asymmetric; symmetrized");
        } else {
            inst = make_rayleigh_instance(cfg.rayleigh_n, cfg.seed);
        }
        if (inst.n <= 2000) {
            auto eig = oracle::dense_symmetric_eigensolve(inst.H);
            prep.known_minimum = eig.eigenvalues.front();
        }
        prep.problem = make_rayleigh_problem(inst, {100, cfg.seed});
        prep.x0 = rayleigh_initial_point(inst.n, cfg.seed + 17);
    } else if (cfg.problem == "spin") {
        SpinLattice lat{cfg.spin_width, cfg.spin_height, cfg.spin_periodic, {}};
        lat.spins = spin_initial_state(lat, cfg.seed + 17);
        if (cfg.spin_periodic && cfg.spin_width % 2 == 0 && cfg.spin_height % 2 == 0)
            prep.known_minimum = -2.0;  // Neel value on even periodic lattices
        prep.problem = make_spin_problem(lat, {100, cfg.seed});
        prep.x0 = lat.spins;
    } else if (cfg.problem == "mps_lsm") {
        TargetData data = cfg.mps_data_file.empty()
                              ? generate_target_data(cfg.mps_length, cfg.mps_noise, cfg.seed)
                              : read_target_data_file(cfg.mps_data_file);
        MpsShape sh(data.length, cfg.mps_bond_dim);
        prep.x0 = mps_initial_state(sh, cfg.seed + 17);
        prep.problem = make_mps_problem(sh, data, prep.x0, {100, cfg.seed});
    } else {
        throw std::runtime_error("unknown problem '" + cfg.problem + "'");
    }
    return prep;
}

inline double relative_error(double cost, double minimum) {
    return std::abs((cost - minimum) / minimum);
}

// CSV trace; the timing column comes last so diff tools can ignore it.
inline void write_trace_csv(const RunTrace& trace, std::optional<double> minimum,
                            const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write trace: " + path);
    out << "iteration,cost,relative_error,grad_norm,step_size,elapsed_seconds\n";
    auto row = [&](std::size_t it, double cost, double gnorm, double step, double secs) {
        out << it << ',' << std::setprecision(17) << cost << ',';
        if (minimum) out << std::setprecision(17) << relative_error(cost, *minimum);
        out << ',' << std::setprecision(17) << gnorm << ',' << std::setprecision(17) << step << ','
            << std::setprecision(17) << secs << '\n';
    };
    row(0, trace.initial_cost, trace.initial_grad_norm, 0.0, 0.0);
    for (const TraceRecord& r : trace.records)
        row(r.iteration, r.cost, r.grad_norm, r.step_size, r.elapsed_seconds);
}

struct MethodSummary {
    std::string label;
    std::string terminal_reason;
    double final_cost = 0.0;
    double final_grad_norm = 0.0;
    std::size_t iterations = 0;
    std::size_t cost_evaluations = 0;
    std::size_t gradient_evaluations = 0;
    std::size_t metric_applications = 0;
    double wall_seconds = 0.0;
    std::optional<std::size_t> iters_to_1e3, iters_to_1e6, iters_to_1e10;
};

inline std::optional<std::size_t> iterations_to_threshold(const RunTrace& trace, double minimum,
                                                          double threshold) {
    if (relative_error(trace.initial_cost, minimum) <= threshold) return 0;
    for (const TraceRecord& r : trace.records)
        if (relative_error(r.cost, minimum) <= threshold) return r.iteration;
    return std::nullopt;
}

inline MethodSummary summarize(const MethodSpec& spec, const RunTrace& trace,
                               std::optional<double> minimum) {
    MethodSummary s;
    s.label = spec.label();
    s.terminal_reason = to_string(trace.terminal_reason);
    s.final_cost = trace.records.empty() ? trace.initial_cost : trace.records.back().cost;
    s.final_grad_norm =
        trace.records.empty() ? trace.initial_grad_norm : trace.records.back().grad_norm;
    s.iterations = trace.records.size();
    s.cost_evaluations = trace.cost_evaluations;
    s.gradient_evaluations = trace.gradient_evaluations;
    s.metric_applications = trace.metric_applications;
    s.wall_seconds = trace.records.empty() ? 0.0 : trace.records.back().elapsed_seconds;
    if (minimum) {
        s.iters_to_1e3 = iterations_to_threshold(trace, *minimum, 1e-3);
        s.iters_to_1e6 = iterations_to_threshold(trace, *minimum, 1e-6);
        s.iters_to_1e10 = iterations_to_threshold(trace, *minimum, 1e-10);
    }
    return s;
}

// Echo of every resolved (possibly defaulted) setting, for reproducibility.
inline void write_resolved_config(const BenchmarkConfig& cfg, const PreparedProblem& prep,
                                  const std::string& path) {
    std::ofstream out(path);
    out << std::setprecision(17);
    out << "problem = " << cfg.problem << "\n";
    out << "seed = " << cfg.seed << "\n";
    out << "max_iterations = " << cfg.max_iterations << "\n";
    out << "grad_tol = " << cfg.grad_tol << "\n";
    out << "cost_tol = " << cfg.cost_tol << "\n";
    out << "initial_step = " << cfg.line_search.initial_step << "\n";
    out << "shrink_factor = " << cfg.line_search.shrink_factor << "\n";
    out << "armijo_c = " << cfg.line_search.armijo_c << "\n";
    out << "max_backtracks = " << cfg.line_search.max_backtracks << "\n";
    out << "normalize_direction = " << (cfg.line_search.normalize_direction ? "true" : "false")
        << "\n";
    out << "cg_rel_tol = " << cfg.cg.rel_tol << "\n";
    out << "cg_abs_tol = " << cfg.cg.abs_tol << "\n";
    out << "cg_max_iters = " << cfg.cg.max_iters << "  # 0 means 10*dim\n";
    if (cfg.problem == "rayleigh") out << "n = " << cfg.rayleigh_n << "\n";
    if (cfg.problem == "spin")
        out << "width = " << cfg.spin_width << "\nheight = " << cfg.spin_height
            << "\nperiodic = " << (cfg.spin_periodic ? "true" : "false") << "\n";
    if (cfg.problem == "mps_lsm")
        out << "length = " << cfg.mps_length << "\nbond_dim = " << cfg.mps_bond_dim
            << "\nnoise = " << cfg.mps_noise << "\n";
    if (prep.known_minimum) out << "known_minimum = " << *prep.known_minimum << "\n";
    for (const auto& n : prep.notes) out << "# " << n << "\n";
    for (const auto& m : cfg.methods) {
        out << "method = " << to_string(m.method);
        if (!m.metric_id.empty()) out << " " << m.metric_id;
        if (m.max_iterations) out << " max_iterations=" << *m.max_iterations;
        out << "\n";
    }
}

struct BenchmarkResult {
    std::vector<MethodSummary> summaries;
    std::vector<RunTrace> traces;
    std::optional<double> known_minimum;
};

inline BenchmarkResult run_benchmark(const BenchmarkConfig& cfg, std::ostream& log = std::cout) {
    PreparedProblem prep = prepare_problem(cfg);
    std::filesystem::create_directories(cfg.output_dir);
    write_resolved_config(cfg, prep, cfg.output_dir + "/resolved_config.txt");

    BenchmarkResult result;
    result.known_minimum = prep.known_minimum;
    nlohmann::json jsummary = nlohmann::json::array();

    for (const MethodSpec& spec : cfg.methods) {
        OptimizerConfig opt;
        opt.method = spec.method;
        opt.metric_id = spec.metric_id;
        opt.max_iterations = spec.max_iterations.value_or(cfg.max_iterations);
        opt.grad_tol = cfg.grad_tol;
        opt.cost_tol = cfg.cost_tol;
        opt.seed = cfg.seed;
        opt.cg = cfg.cg;

        log << "running " << cfg.problem << " / " << spec.label() << " ..." << std::flush;
        RunTrace trace = optimize(prep.problem, prep.x0, opt, cfg.line_search);
        MethodSummary s = summarize(spec, trace, prep.known_minimum);
        log << " " << s.iterations << " iters, final cost " << std::setprecision(12)
            << s.final_cost << " (" << s.terminal_reason << ")\n";

        write_trace_csv(trace, prep.known_minimum,
                        cfg.output_dir + "/" + cfg.problem + "_" + spec.label() + ".csv");

        nlohmann::json j{{"method", s.label},
                         {"terminal_reason", s.terminal_reason},
                         {"final_cost", s.final_cost},
                         {"final_grad_norm", s.final_grad_norm},
                         {"iterations", s.iterations},
                         {"cost_evaluations", s.cost_evaluations},
                         {"gradient_evaluations", s.gradient_evaluations},
                         {"metric_applications", s.metric_applications},
                         {"wall_seconds", s.wall_seconds}};
        auto set = [&](const char* key, const std::optional<std::size_t>& v) {
            if (v) j[key] = *v;
        };
        set("iterations_to_1e-3", s.iters_to_1e3);
        set("iterations_to_1e-6", s.iters_to_1e6);
        set("iterations_to_1e-10", s.iters_to_1e10);
        jsummary.push_back(std::move(j));

        result.summaries.push_back(std::move(s));
        result.traces.push_back(std::move(trace));
    }

    {
        std::ofstream out(cfg.output_dir + "/summary.json");
        out << jsummary.dump(2) << "\n";
    }
    {
        std::ofstream out(cfg.output_dir + "/summary.txt");
        out << std::left << std::setw(34) << "method" << std::setw(16) << "final_cost"
            << std::setw(8) << "iters" << std::setw(10) << "to 1e-3" << std::setw(10) << "to 1e-6"
            << std::setw(10) << "to 1e-10" << std::setw(10) << "evals" << "reason\n";
        for (const auto& s : result.summaries) {
            auto fmt = [](const std::optional<std::size_t>& v) {
                return v ? std::to_string(*v) : std::string("-");
            };
            out << std::left << std::setw(34) << s.label << std::setw(16) << std::setprecision(8)
                << s.final_cost << std::setw(8) << s.iterations << std::setw(10)
                << fmt(s.iters_to_1e3) << std::setw(10) << fmt(s.iters_to_1e6) << std::setw(10)
                << fmt(s.iters_to_1e10) << std::setw(10) << s.cost_evaluations << s.terminal_reason
                << "\n";
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// verify: run the oracle cross-checks at the configured (small) sizes.

struct VerifyCheck {
    std::string name;
    bool pass = false;
    bool skipped = false;
    double defect = 0.0;
    std::string note;
};

inline VerifyCheck check(const std::string& name, double defect, double tol) {
    return {name, defect <= tol, false, defect, ""};
}

inline VerifyCheck skip(const std::string& name, const std::string& why) {
    return {name, true, true, 0.0, why};
}

inline double max_abs_diff_dense(const LinearOperator& op, const Mat& dense,
                                 std::uint64_t seed = 7) {
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        Vec v = random_normal(op.dim, rng);
        Vec a = op.apply(v);
        Vec b = matvec(dense, v);
        for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    return worst;
}

inline double gradient_defect(const std::function<double(const Vec&)>& cost,
                              const std::function<Vec(const Vec&)>& grad, const Vec& x) {
    Vec g = grad(x);
    Vec fd = oracle::finite_difference_gradient(cost, x);
    double num = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) num = std::max(num, std::abs(g[i] - fd[i]));
    return num / std::max(norm2(g), 1e-12);
}

inline std::vector<VerifyCheck> verify(const BenchmarkConfig& cfg) {
    std::vector<VerifyCheck> checks;
    std::mt19937_64 rng(cfg.seed);

    if (cfg.problem == "rayleigh") {
        if (cfg.rayleigh_n > 200) {
            checks.push_back(skip("rayleigh oracle suite", "n exceeds dense guard 200"));
            return checks;
        }
        RayleighInstance inst = make_rayleigh_instance(cfg.rayleigh_n, cfg.seed);
        Vec x = rayleigh_initial_point(inst.n, cfg.seed + 17);
        checks.push_back(check("gradient vs finite differences",
                               gradient_defect([&](const Vec& p) { return rayleigh_cost(p, inst); },
                                               [&](const Vec& p) { return rayleigh_gradient(p, inst); },
                                               x),
                               1e-6));
        HessianRegularization reg;
        auto eig = oracle::dense_symmetric_eigensolve(inst.H);
        reg.epsilon_h_estimate = eig.eigenvalues.front();
        ReferenceMap map = normalized_vector_map(inst.n);
        ReferenceMetric href = hessian_reference(
            [&inst](const Vec&, const Vec& u) { return matvec(inst.H, u); }, reg);
        Mat dense = oracle::assemble_dense_metric(map, href, x);
        checks.push_back(check("pullback dense vs matrix-free",
                               max_abs_diff_dense(rayleigh_pullback_metric(x, inst, reg), dense),
                               1e-10));
        checks.push_back(check(
            "projection identity",
            oracle::projection_identity_check(map, href, x, rayleigh_gradient(x, inst),
                                              scaled(matvec(inst.H, map.eval(x)), 2.0)),
            1e-8));
    } else if (cfg.problem == "spin") {
        if (cfg.spin_width * cfg.spin_height > 64) {
            checks.push_back(skip("spin oracle suite", "lattice exceeds dense guard"));
            return checks;
        }
        SpinLattice lat{cfg.spin_width, cfg.spin_height, cfg.spin_periodic, {}};
        lat.spins = spin_initial_state(lat, cfg.seed + 17);
        checks.push_back(check("gradient vs finite differences",
                               gradient_defect(
                                   [&](const Vec& p) {
                                       SpinLattice l = lat;
                                       l.spins = p;
                                       return spin_cost(l);
                                   },
                                   [&](const Vec& p) {
                                       SpinLattice l = lat;
                                       l.spins = p;
                                       return spin_gradient(l);
                                   },
                                   lat.spins),
                               1e-6));
        HessianRegularization reg;
        reg.epsilon_h_estimate = spin_epsilon_h(lat, 100, cfg.seed);
        auto nbr = spin_neighbors(lat);
        ReferenceMap map = spin_normalization_map(lat);
        ReferenceMetric href = hessian_reference(
            [&lat, &nbr](const Vec&, const Vec& u) { return spin_hessian_apply(lat, nbr, u); },
            reg);
        Mat dense = oracle::assemble_dense_metric(map, href, lat.spins);
        checks.push_back(check("pullback dense vs matrix-free",
                               max_abs_diff_dense(spin_pullback_metric(lat, reg), dense), 1e-10));
        Vec grad_y = spin_hessian_apply(lat, nbr, map.eval(lat.spins));
        checks.push_back(check("projection identity",
                               oracle::projection_identity_check(map, href, lat.spins,
                                                                 spin_gradient(lat), grad_y),
                               1e-6));
    } else if (cfg.problem == "mps_lsm") {
        if (cfg.mps_length > 6) {
            checks.push_back(skip("mps oracle suite", "L exceeds verify guard 6"));
            return checks;
        }
        TargetData data = generate_target_data(cfg.mps_length, cfg.mps_noise, cfg.seed);
        MpsShape sh(cfg.mps_length, cfg.mps_bond_dim);
        Vec x = mps_initial_state(sh, cfg.seed + 17);
        checks.push_back(check("gradient vs finite differences",
                               gradient_defect([&](const Vec& p) { return lsm_cost(p, sh, data); },
                                               [&](const Vec& p) { return lsm_gradient(p, sh, data); },
                                               x),
                               1e-6));
        ReferenceMap dmap = mps_density_map(sh);
        Mat dense = oracle::assemble_dense_metric(dmap, euclidean_reference(), x);
        checks.push_back(check("density metric dense vs matrix-free",
                               max_abs_diff_dense(metric_density_reference(x, sh), dense), 1e-10));
        ReferenceMap amap = mps_amplitude_map(sh);
        Mat dense_w = oracle::assemble_dense_metric(amap, euclidean_reference(), x);
        checks.push_back(check("amplitude metric dense vs matrix-free",
                               max_abs_diff_dense(metric_mps_amplitude(x, sh), dense_w), 1e-10));
        Vec y = dmap.eval(x);
        Vec grad_y(y.size());
        for (std::size_t b = 0; b + 1 < sh.length; ++b)
            for (std::size_t i = 0; i < 16; ++i)
                grad_y[16 * b + i] = 2.0 / static_cast<double>(sh.length) *
                                     (y[16 * b + i] - data.targets[b].a[i]);
        checks.push_back(check("projection identity (density reference)",
                               oracle::projection_identity_check(dmap, euclidean_reference(), x,
                                                                 lsm_gradient(x, sh, data), grad_y),
                               1e-6));
    } else {
        throw std::runtime_error("unknown problem '" + cfg.problem + "'");
    }
    return checks;
}

}  // namespace ngd::bench

#endif
