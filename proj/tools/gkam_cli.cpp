// gkam: frequency analysis, functional-estimate verification, normal-form
// solver runs and destruction-family generation, all batch-mode with JSON and
// CSV artifacts.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <random>

#include "gkam/io.hpp"

namespace fs = std::filesystem;
using namespace gkam;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_usage = 1;
constexpr int exit_rejected = 2;  // resonant or unsupported input
constexpr int exit_partial = 3;   // precondition-violating or partial run

struct FrequencyChoice {
    bool golden = false;
    int liouville_base = 0;
    int liouville_terms = 4;
    std::string omega_csv;
    std::string cf_quotients;
    double nu = 0.0;
    bool nu_set = false;
};

std::vector<double> parse_csv_doubles(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        if (!cell.empty()) out.push_back(std::stod(cell));
    }
    return out;
}

FrequencyProfile build_profile(const FrequencyChoice& choice, int horizon) {
    if (choice.golden) {
        return FrequencyProfile({1.0, (std::sqrt(5.0) - 1.0) / 2.0}, horizon);
    }
    if (choice.liouville_base > 0) {
        auto nu = liouville_sum(choice.liouville_base, choice.liouville_terms);
        return FrequencyProfile::with_exact(nu.exact, horizon);
    }
    if (!choice.cf_quotients.empty()) {
        // value of the finite continued fraction [a0; a1, a2, ...]
        auto q = parse_csv_doubles(choice.cf_quotients);
        double value = 0.0;
        for (auto it = q.rbegin(); it != q.rend(); ++it) {
            if (value != 0.0) value = 1.0 / value;
            value += *it;
        }
        return FrequencyProfile({1.0, value - std::floor(value)}, horizon);
    }
    if (choice.nu_set) return FrequencyProfile({1.0, choice.nu}, horizon);
    if (!choice.omega_csv.empty())
        return FrequencyProfile(parse_csv_doubles(choice.omega_csv), horizon);
    throw structural_error("no frequency specified (use --golden, --omega, --nu, --cf or "
                           "--liouville)");
}

void write_manifest(const fs::path& dir, const std::vector<std::string>& artifacts,
                    const json& extra = json::object()) {
    json j = extra;
    j["artifacts"] = artifacts;
    write_json(dir / "manifest.json", j);
}

int cmd_analyze(const FrequencyChoice& choice, const std::vector<double>& alphas, int qmax,
                const fs::path& out, bool svg) {
    fs::create_directories(out);
    FrequencyProfile profile = build_profile(choice, qmax);
    std::vector<std::string> artifacts;

    if (profile.resonant()) {
        json j{{"resonant", true}, {"witness", profile.resonant_mode()}};
        write_json(out / "report.json", j);
        artifacts.push_back("report.json");
        write_manifest(out, artifacts, json{{"command", "analyze"}, {"exit", exit_rejected}});
        std::cerr << "analyze: resonant frequency\n";
        return exit_rejected;
    }

    json reports = json::array();
    for (double alpha : alphas) {
        json per_alpha{{"alpha", alpha}};
        per_alpha["series_Q"] =
            arith_report_to_json(classify(profile, alpha, ClassifyMethod::series_Q));
        per_alpha["dyadic"] =
            arith_report_to_json(classify(profile, alpha, ClassifyMethod::dyadic));
        per_alpha["integral_A"] =
            arith_report_to_json(classify(profile, alpha, ClassifyMethod::integral_A));
        if (profile.dimension() == 2)
            per_alpha["cf"] = arith_report_to_json(classify(profile, alpha, ClassifyMethod::cf));
        reports.push_back(std::move(per_alpha));
    }
    json j{{"resonant", false}, {"omega", profile.omega()}, {"horizon", profile.horizon()},
           {"reports", std::move(reports)}};
    if (profile.dimension() == 2) {
        auto cf = profile.exact_nu() ? cf_convergents_exact(*profile.exact_nu(), 40)
                                     : cf_convergents(profile.omega()[1], 40);
        json convs = json::array();
        for (const auto& c : cf.convergents)
            convs.push_back(json{{"p", c.p.str()}, {"q", c.q.str()}, {"error", c.error}});
        j["convergents"] = std::move(convs);
        j["cf_truncated_by_precision"] = cf.truncated_by_precision;
    }
    write_json(out / "report.json", j);
    artifacts.push_back("report.json");
    write_psi_csv(out / "psi.csv", profile);
    artifacts.push_back("psi.csv");
    if (svg) {
        std::vector<double> xs, ys;
        for (int Q = 1; Q <= profile.horizon(); ++Q) {
            xs.push_back(static_cast<double>(Q));
            ys.push_back(std::log(profile.psi(Q)));
        }
        write_svg_polyline(out / "psi.svg", xs, ys, "ln Psi vs Q");
        artifacts.push_back("psi.svg");
    }
    write_manifest(out, artifacts, json{{"command", "analyze"}, {"exit", exit_ok}});
    return exit_ok;
}

int cmd_kam(const fs::path& config_path, const fs::path& out) {
    fs::create_directories(out);
    json cfg = read_json(config_path);

    FrequencyChoice choice;
    const json& om = cfg.at("omega");
    if (om.contains("golden") && om["golden"].get<bool>()) choice.golden = true;
    if (om.contains("liouville_base")) choice.liouville_base = om["liouville_base"].get<int>();
    if (om.contains("values")) {
        auto v = om["values"].get<std::vector<double>>();
        std::ostringstream os;
        for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
        choice.omega_csv = os.str();
    }
    int horizon = cfg.value("psi_horizon", 400);
    FrequencyProfile profile = build_profile(choice, horizon);
    if (profile.resonant()) {
        std::cerr << "kam: resonant frequency\n";
        return exit_rejected;
    }
    auto env = Envelope::from_profile(profile);

    const double alpha = cfg.value("alpha", 1.0);
    const double s = cfg.at("s").get<double>();
    const double r = cfg.value("r", 0.5);
    const double h = cfg.at("h").get<double>();
    const int K = cfg.value("K", 8);
    GevreyParams gevrey(alpha, s);
    const int node_degree = cfg.value("node_degree", 3);

    KamConfig kcfg;
    kcfg.alpha = alpha;
    kcfg.s = s;
    kcfg.K = K;
    kcfg.max_steps = cfg.value("max_steps", 20);
    kcfg.residual_floor = cfg.value("residual_floor", 1e-12);
    kcfg.node_degree = node_degree;
    kcfg.schedule_c6 = cfg.value("schedule_c6", 1.0);
    kcfg.Q0_override = cfg.value("Q0_override", static_cast<long long>(0));
    if (cfg.contains("constants")) {
        const json& cc = cfg["constants"];
        kcfg.constants.c_cond_h = cc.value("c_cond_h", 1.0);
        kcfg.constants.c_cond_rmu = cc.value("c_cond_rmu", 1.0);
        kcfg.constants.c_cond_eta = cc.value("c_cond_eta", 1.0);
        kcfg.constants.c_flow_small = cc.value("c_flow_small", 1.0);
        kcfg.constants.enforce = cc.value("enforce", true);
    }
    kcfg.options.grid_N = cfg.value("grid_N", 0);
    kcfg.options.ode_steps = cfg.value("ode_steps", 64);
    kcfg.options.threads = cfg.value("threads", 0);
    kcfg.options.seed = cfg.value("seed", static_cast<std::uint64_t>(2024));

    const json& problem = cfg.at("problem");
    std::string type = problem.at("type").get<std::string>();

    const int n = profile.dimension();
    auto parse_modes = [&](const json& modes, int cap) {
        FourierTaylorSeries f(n, cap, 0);
        for (const auto& m : modes) {
            auto k = m.at("k").get<std::vector<int>>();
            f.add_term(k, std::vector<int>(static_cast<std::size_t>(n), 0),
                       m.value("cos", 0.0), m.value("sin", 0.0));
        }
        return f;
    };

    json extra{{"command", "kam"}};
    KamResult result;
    std::vector<FourierTaylorSeries> B_for_check;
    FourierTaylorSeries f_series(n, K, 0);
    double epsilon = 0.0;
    std::vector<double> lambda(static_cast<std::size_t>(n), 1.0);
    bool is_vector_field = false;
    bool dynamical_check_supported = true;

    if (type == "integrable") {
        epsilon = problem.value("epsilon", 0.0);
        std::string preset = problem.value("preset", "quadratic");
        IntegrableSpec spec = IntegrableSpec::quadratic(n);
        if (preset == "diagonal") {
            lambda = problem.at("lambda").get<std::vector<double>>();
            spec = IntegrableSpec::diagonal(lambda);
        } else if (preset == "quartic") {
            spec = IntegrableSpec::quartic(n, problem.value("beta", 0.1));
            dynamical_check_supported = false;  // non-quadratic kinetic part
        } else if (preset != "quadratic") {
            throw unsupported_error("unknown integrable preset: " + preset);
        }
        f_series = parse_modes(problem.value("f_modes", json::array()), K);
        auto expand = expand_at_action(spec, PerturbationSpec::angle_only(f_series), epsilon,
                                       profile.omega(), r, h, K, gevrey, node_degree);
        extra["epsilon_ham"] = expand.epsilon_ham;
        extra["mu_wired"] = expand.mu_wired;
        extra["eta_ham"] = expand.eta_ham;
        result = kam_iterate(expand.H, profile, env, kcfg);
    } else if (type == "vector_field") {
        is_vector_field = true;
        const json& comps = problem.at("b_modes");
        for (int i = 0; i < n; ++i)
            B_for_check.push_back(parse_modes(comps.at(static_cast<std::size_t>(i)), K));
        auto H0 = vector_field_embed(B_for_check, profile.omega(), r, h, K, gevrey, node_degree);
        result = kam_iterate(H0, profile, env, kcfg);
    } else {
        throw unsupported_error("unknown problem type: " + type);
    }

    std::vector<std::string> artifacts;
    json rj = kam_result_to_json(result);

    if (cfg.contains("invariance") && result.converged && dynamical_check_supported) {
        const json& inv = cfg["invariance"];
        double T = inv.value("T", 100.0);
        double dt = inv.value("dt", 1e-3);
        int traj = inv.value("trajectories", 32);
        std::uint64_t seed = inv.value("seed", static_cast<std::uint64_t>(7));
        InvarianceReport rep;
        if (is_vector_field) {
            rep = invariance_residual_vector_field(result, profile.omega(), B_for_check, T, dt,
                                                   traj, seed);
        } else {
            std::vector<FourierTaylorSeries> df;
            for (int i = 0; i < n; ++i) df.push_back(partial_derivative(f_series, Var::angle, i));
            auto grad_f = [&df, n](std::span<const double> q) {
                std::vector<double> g(static_cast<std::size_t>(n));
                for (int i = 0; i < n; ++i)
                    g[static_cast<std::size_t>(i)] =
                        df[static_cast<std::size_t>(i)].evaluate_at_zero_action(q);
                return g;
            };
            // p* solves grad h(p*) = omega*; diagonal presets invert directly
            std::vector<double> p_star(result.omega_star);
            for (int i = 0; i < n; ++i)
                p_star[static_cast<std::size_t>(i)] /= lambda[static_cast<std::size_t>(i)];
            rep = invariance_residual(result, profile.omega(), lambda, grad_f, epsilon, p_star,
                                      T, dt, traj, seed);
        }
        rj["invariance"] = json{{"algebraic_A", rep.algebraic_A},
                                {"algebraic_B", rep.algebraic_B},
                                {"dynamical_max_dev", rep.dynamical_max_dev},
                                {"T", rep.T},
                                {"trajectories", rep.trajectories}};
    }

    write_json(out / "result.json", rj);
    artifacts.push_back("result.json");
    write_history_csv(out / "history.csv", result.history);
    artifacts.push_back("history.csv");
    write_torus_csv(out / "torus.csv", result.embedding, cfg.value("torus_points", 64));
    artifacts.push_back("torus.csv");
    extra["exit"] = result.converged ? exit_ok : exit_partial;
    write_manifest(out, artifacts, extra);

    if (!result.converged) {
        std::cerr << "kam: partial run"
                  << (result.failure.empty() ? "" : (": " + result.failure)) << "\n";
        return exit_partial;
    }
    return exit_ok;
}

int cmd_verify(const std::string& suite, int L, std::uint64_t seed, const fs::path& out) {
    fs::create_directories(out);
    std::vector<std::string> artifacts;
    bool all_pass = true;
    const bool run_majorants = suite == "majorants" || suite == "all";
    const bool run_norms = suite == "norms" || suite == "all";
    const bool run_avg = suite == "averaging" || suite == "all";
    const bool run_flows = suite == "flows" || suite == "all";
    if (!run_majorants && !run_norms && !run_avg && !run_flows)
        throw unsupported_error("unknown suite: " + suite);

    if (run_majorants) {
        json arr = json::array();
        for (double alpha : {1.0, 1.5, 2.0, 3.0}) {
            GevreyParams p(alpha, 1.0);
            auto prod = verify_lemma_product(p, L);
            auto comp = verify_lemma_comp(p, L);
            all_pass = all_pass && prod.pass && comp.pass;
            arr.push_back(json{{"alpha", alpha},
                               {"product", lemma_to_json(prod)},
                               {"comp_squared", lemma_to_json(comp.squared)},
                               {"comp_mixed", lemma_to_json(comp.mixed)},
                               {"pass", prod.pass && comp.pass}});
        }
        write_json(out / "majorants.json", arr);
        artifacts.push_back("majorants.json");
    }

    if (run_norms) {
        std::mt19937_64 rng(seed);
        GevreyParams p(1.0, 0.6);
        double sigma = 0.3;
        std::uniform_int_distribution<int> kd(-4, 4);
        std::uniform_real_distribution<double> cd(-1.0, 1.0);
        auto random_trig = [&](int K) {
            FourierTaylorSeries f(2, K, 0);
            for (int t = 0; t < 5; ++t) {
                std::vector<int> k{kd(rng), kd(rng)};
                if (multi_index_order(k) > K) continue;
                f.add_term(k, {0, 0}, cd(rng), cd(rng));
            }
            return f;
        };
        json arr = json::array();
        for (int trial = 0; trial < 25; ++trial) {
            auto f = random_trig(4);
            auto g = random_trig(4);
            std::vector<FourierTaylorSeries> u;
            double sig_a = std::pow(sigma, p.alpha);
            for (int i = 0; i < 2; ++i) {
                auto ui = random_trig(2);
                double nu = norm_vector(std::vector<FourierTaylorSeries>{ui},
                                        GevreyParams(p.alpha, p.s - sigma)).value;
                u.push_back(add_scale(ui, ui, nu > 0 ? 0.3 * sig_a / nu : 0.0, 0.0));
            }
            auto rep = verify_estimates(f, g, u, p, sigma);
            all_pass = all_pass && rep.all_pass;
            json t{{"trial", trial},
                   {"product", inequality_to_json(rep.product)},
                   {"composition", inequality_to_json(rep.composition)}};
            json ders = json::array();
            for (const auto& d : rep.derivative) ders.push_back(inequality_to_json(d));
            t["derivative"] = std::move(ders);
            arr.push_back(std::move(t));
        }
        json doc{{"seed", seed}, {"trials", std::move(arr)}, {"pass", all_pass}};
        write_json(out / "norms.json", doc);
        artifacts.push_back("norms.json");
    }

    if (run_avg) {
        std::mt19937_64 rng(seed + 1);
        const double golden = (std::sqrt(5.0) - 1.0) / 2.0;
        FrequencyProfile prof({1.0, golden}, 400);
        auto env = Envelope::from_profile(prof);
        std::uniform_int_distribution<int> kd(-5, 5);
        std::uniform_real_distribution<double> cd(-1.0, 1.0);
        double worst = 0.0;
        int bases = 0;
        for (double Q : {5.0, 8.0, 13.0, 21.0, 34.0, 55.0, 89.0, 144.0, 233.0, 377.0}) {
            auto basis = simultaneous_approx(prof, Q, env);
            ++bases;
            for (int trial = 0; trial < 2; ++trial) {
                FourierTaylorSeries f(2, 5, 1);
                for (int t = 0; t < 10; ++t) {
                    std::vector<int> k{kd(rng), kd(rng)};
                    if (multi_index_order(k) > 5) continue;
                    f.add_term(k, {t % 2, 0}, cd(rng), cd(rng));
                }
                auto it = f;
                for (const auto& v : basis.vectors)
                    it = average_along_integer(it, v.integer_vector_ll());
                auto diff = add_scale(it, full_average(f), 1.0, -1.0);
                worst = std::max(worst, diff.max_amplitude());
            }
        }
        bool pass = worst <= 1e-14;
        all_pass = all_pass && pass;
        write_json(out / "averaging.json",
                   json{{"bases", bases}, {"max_coefficient_error", worst}, {"pass", pass}});
        artifacts.push_back("averaging.json");
    }

    if (run_flows) {
        std::mt19937_64 rng(seed + 2);
        GevreyParams p(1.0, 0.1);
        std::uniform_real_distribution<double> cd(-1e-3, 1e-3);
        double worst_sympl = 0.0, worst_picard = 0.0;
        for (int trial = 0; trial < 5; ++trial) {
            auto lift = [](FourierTaylorSeries f) {
                return add_scale(f, FourierTaylorSeries(2, 8, 0), 1.0, 0.0);
            };
            std::vector<int> k1{1, 0}, k2{0, 1};
            auto C = lift(FourierTaylorSeries::mode(2, k1, cd(rng), cd(rng)));
            std::vector<FourierTaylorSeries> D{
                lift(FourierTaylorSeries::mode(2, k1, cd(rng), cd(rng))),
                lift(FourierTaylorSeries::mode(2, k2, cd(rng), cd(rng)))};
            auto flow = flow_map(C, D, 1.0, p, 0.2);
            worst_sympl = std::max(worst_sympl,
                                   symplectic_deviation(flow.map, 100, seed + trial));
            worst_picard = std::max(worst_picard, flow.picard_residual);
        }
        bool pass = worst_sympl <= 1e-8;
        all_pass = all_pass && pass;
        write_json(out / "flows.json", json{{"max_symplectic_dev", worst_sympl},
                                            {"max_picard_residual", worst_picard},
                                            {"pass", pass}});
        artifacts.push_back("flows.json");
    }

    write_manifest(out, artifacts,
                   json{{"command", "verify"}, {"suite", suite}, {"pass", all_pass}});
    return all_pass ? exit_ok : exit_usage;
}

int cmd_bessi(const fs::path& spec_path, const fs::path& out) {
    fs::create_directories(out);
    json spec_doc = read_json(spec_path);
    std::vector<std::string> artifacts;

    auto run_one = [](const json& j) {
        BessiSpec spec;
        spec.alpha = j.value("alpha", 1.0);
        spec.s = j.value("s", 0.5);
        spec.epsilon = j.value("epsilon", 1.0);
        spec.mu = j.value("mu", 1.0);
        spec.k = j.at("k").get<std::vector<int>>();
        spec.k_tilde = j.at("k_tilde").get<std::vector<int>>();
        return bessi_hamiltonian(spec);
    };

    if (spec_doc.contains("sweep")) {
        json arr = json::array();
        double max_ratio = 0.0;
        for (const auto& j : spec_doc["sweep"]) {
            auto r = run_one(j);
            max_ratio = std::max(max_ratio, r.ratio);
            arr.push_back(bessi_to_json(r));
        }
        write_json(out / "norm_report.json",
                   json{{"family", std::move(arr)}, {"max_ratio", max_ratio}});
        artifacts.push_back("norm_report.json");
    } else {
        auto r = run_one(spec_doc);
        write_json(out / "series.json", series_to_json(r.F));
        write_json(out / "norm_report.json", bessi_to_json(r));
        artifacts.push_back("series.json");
        artifacts.push_back("norm_report.json");
    }

    if (spec_doc.contains("witness")) {
        const json& w = spec_doc["witness"];
        std::vector<double> omega;
        if (w.contains("golden") && w["golden"].get<bool>()) {
            omega = {1.0, (std::sqrt(5.0) - 1.0) / 2.0};
        } else if (w.contains("liouville_base")) {
            omega = {1.0, liouville_sum(w["liouville_base"].get<int>(),
                                        w.value("terms", 4)).approx};
        } else {
            omega = w.at("values").get<std::vector<double>>();
        }
        auto wit = condition_C_alpha(omega, w.value("alpha", 1.0), w.value("s0", 0.1),
                                     w.value("horizon", 200));
        write_json(out / "witnesses.json", witnesses_to_json(wit));
        artifacts.push_back("witnesses.json");
    }

    write_manifest(out, artifacts, json{{"command", "bessi"}});
    return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gevrey small-divisor toolkit: frequency analysis, estimate verification, "
                 "invariant-torus solver and destruction-family generation"};
    app.require_subcommand(1);

    auto* analyze = app.add_subcommand("analyze", "arithmetic analysis of a frequency vector");
    FrequencyChoice a_choice;
    std::string a_alphas = "1";
    int a_qmax = 200;
    std::string a_out = "gkam_out/analyze";
    bool a_svg = false;
    analyze->add_flag("--golden", a_choice.golden, "omega = (1, (sqrt 5 - 1)/2)");
    analyze->add_option("--omega", a_choice.omega_csv, "comma-separated components");
    auto* nu_opt = analyze->add_option("--nu", a_choice.nu, "omega = (1, nu)");
    analyze->add_option("--cf", a_choice.cf_quotients,
                        "partial quotients a0,a1,... of the second component");
    analyze->add_option("--liouville", a_choice.liouville_base, "base b of nu = sum b^(-n!)");
    analyze->add_option("--liouville-terms", a_choice.liouville_terms, "terms of the sum");
    analyze->add_option("--alpha", a_alphas, "comma-separated exponents");
    analyze->add_option("--qmax", a_qmax, "sampling horizon");
    analyze->add_option("--out", a_out, "output directory");
    analyze->add_flag("--svg", a_svg, "emit a ln Psi plot");

    auto* kam = app.add_subcommand("kam", "run the invariant-torus solver from a config file");
    std::string k_config;
    std::string k_out = "gkam_out/kam";
    kam->add_option("--config", k_config, "JSON run configuration")->required();
    kam->add_option("--out", k_out, "output directory");

    auto* verify = app.add_subcommand("verify",
                                      "numeric verification of the functional estimates");
    std::string v_suite = "all";
    int v_L = 500;
    std::uint64_t v_seed = 7;
    std::string v_out = "gkam_out/verify";
    verify->add_option("--suite", v_suite, "majorants | norms | averaging | flows | all");
    verify->add_option("--L", v_L, "coefficient order horizon");
    verify->add_option("--seed", v_seed, "seed for randomized sweeps");
    verify->add_option("--out", v_out, "output directory");

    auto* bessi = app.add_subcommand("bessi", "generate the destruction family and norm report");
    std::string b_spec;
    std::string b_out = "gkam_out/bessi";
    bessi->add_option("--spec", b_spec, "JSON family spec")->required();
    bessi->add_option("--out", b_out, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*analyze) {
            a_choice.nu_set = nu_opt->count() > 0;
            std::vector<double> alphas = parse_csv_doubles(a_alphas);
            return cmd_analyze(a_choice, alphas, a_qmax, a_out, a_svg);
        }
        if (*kam) return cmd_kam(k_config, k_out);
        if (*verify) return cmd_verify(v_suite, v_L, v_seed, v_out);
        if (*bessi) return cmd_bessi(b_spec, b_out);
    } catch (const unsupported_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_rejected;
    } catch (const precondition_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_partial;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_usage;
    }
    return exit_usage;
}
