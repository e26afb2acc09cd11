#include "gkam/io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace gkam {

json series_to_json(const FourierTaylorSeries& f) {
    json terms = json::array();
    for (const auto& [key, amp] : f.terms()) {
        terms.push_back(json{{"k", key.k}, {"m", key.m}, {"cos", amp.c}, {"sin", amp.s}});
    }
    return json{{"n", f.dimension()},
                {"K", f.truncation()},
                {"dI", f.action_degree()},
                {"discarded_mass", f.discarded_mass()},
                {"terms", std::move(terms)}};
}

FourierTaylorSeries series_from_json(const json& j) {
    FourierTaylorSeries f(j.at("n").get<int>(), j.at("K").get<int>(), j.at("dI").get<int>());
    for (const auto& t : j.at("terms")) {
        auto k = t.at("k").get<std::vector<int>>();
        auto m = t.at("m").get<std::vector<int>>();
        f.add_term(k, m, t.at("cos").get<double>(), t.at("sin").get<double>());
    }
    if (j.contains("discarded_mass")) f.accumulate_discarded(j["discarded_mass"].get<double>());
    return f;
}

json inequality_to_json(const InequalityReport& r) {
    return json{{"inequality", r.inequality}, {"lhs", r.lhs},     {"rhs", r.rhs},
                {"margin", r.margin},         {"budget", r.budget}, {"pass", r.pass},
                {"skipped", r.skipped},       {"note", r.note}};
}

json lemma_to_json(const LemmaReport& r) {
    json j{{"max_ratio", r.max_ratio}, {"argmax_l", r.argmax_l}, {"pass", r.pass}};
    if (!r.ratios.empty()) j["ratios"] = r.ratios;
    return j;
}

json arith_report_to_json(const ArithReport& r) {
    return json{{"alpha", r.alpha},
                {"method", to_string(r.method)},
                {"br_alpha", to_string(r.br_alpha)},
                {"br_partial_sum", r.br_partial_sum},
                {"br_trajectory", r.br_trajectory},
                {"a_alpha", to_string(r.a_alpha)},
                {"a_alpha_integral", r.a_alpha_integral},
                {"b_alpha_limsup", r.b_alpha_limsup},
                {"tau_fit", r.tau_fit},
                {"tail_note", r.tail_note}};
}

json basis_to_json(const ApproxBasis& b) {
    json vectors = json::array();
    for (const auto& v : b.vectors) {
        json p = json::array();
        for (const auto& pi : v.p) p.push_back(pi.str());
        vectors.push_back(json{{"q", v.q.str()}, {"p", std::move(p)}});
    }
    return json{{"Q", b.Q},
                {"vectors", std::move(vectors)},
                {"det", b.det.str()},
                {"quality", b.quality}};
}

json basis_report_to_json(const BasisReport& r) {
    return json{{"det", r.det.str()},
                {"unimodular", r.unimodular},
                {"quality", r.quality},
                {"q_psi_ratio", r.q_psi_ratio},
                {"max_quality", r.max_quality}};
}

json diagnostics_to_json(const StepDiagnostics& d) {
    json pre = json::array();
    for (const auto& c : d.preconditions)
        pre.push_back(json{
            {"name", c.name}, {"lhs", c.lhs}, {"rhs", c.rhs}, {"ratio", c.ratio}, {"pass", c.pass}});
    return json{{"step", d.step_index},
                {"Q", d.Q},
                {"sigma", d.sigma},
                {"delta", d.delta},
                {"eps_declared", d.eps_declared},
                {"mu_declared", d.mu_declared},
                {"eps_before", d.eps_before},
                {"mu_before", d.mu_before},
                {"eps_after", d.eps_after},
                {"mu_after", d.mu_after},
                {"eps_target_met", d.eps_target_met},
                {"mu_target_met", d.mu_target_met},
                {"preconditions", std::move(pre)},
                {"stage_smallness", d.stage_smallness},
                {"cohomological_residual", d.cohomological_residual},
                {"flow_picard_residual", d.flow_picard_residual},
                {"max_alias", d.max_alias},
                {"max_symplectic_dev", d.max_symplectic_dev},
                {"phi_inverse_residual", d.phi_inverse_residual},
                {"omega_shift", d.omega_shift}};
}

json kam_result_to_json(const KamResult& r) {
    json history = json::array();
    for (const auto& d : r.history) history.push_back(diagnostics_to_json(d));
    json emb;
    {
        json E = json::array(), F = json::array(), G = json::array();
        for (const auto& s : r.embedding.E) E.push_back(series_to_json(s));
        for (const auto& s : r.embedding.F) F.push_back(series_to_json(s));
        for (const auto& s : r.embedding.G) G.push_back(series_to_json(s));
        emb = json{{"E", std::move(E)}, {"F", std::move(F)}, {"G", std::move(G)}};
    }
    return json{{"converged", r.converged},
                {"steps_done", r.steps_done},
                {"omega_star", r.omega_star},
                {"e_star", r.e_star},
                {"residual_A", r.residual_A},
                {"residual_B", r.residual_B},
                {"omega_shift", r.omega_shift},
                {"Q0", r.Q0},
                {"schedule_C", r.schedule_C},
                {"composition_check", r.composition_check},
                {"failure", r.failure},
                {"embedding", std::move(emb)},
                {"history", std::move(history)}};
}

json bessi_to_json(const BessiResult& r) {
    return json{{"series", series_to_json(r.F)},
                {"nu", r.nu},
                {"nu_tilde", r.nu_tilde},
                {"norm", r.norm},
                {"ratio", r.ratio}};
}

json witnesses_to_json(std::span<const ResonanceWitness> w) {
    json arr = json::array();
    for (const auto& wit : w)
        arr.push_back(json{{"k", wit.k}, {"dot", wit.dot}, {"bound", wit.bound}});
    return arr;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << text;
}

void write_json(const std::filesystem::path& path, const json& j) {
    write_text(path, j.dump(2) + "\n");
}

json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path.string());
    json j;
    in >> j;
    return j;
}

void write_psi_csv(const std::filesystem::path& path, const FrequencyProfile& profile) {
    std::ostringstream os;
    os << "Q,psi\n";
    os.precision(17);
    const auto& tab = profile.psi_table();
    for (std::size_t i = 0; i < tab.size(); ++i) os << (i + 1) << "," << tab[i] << "\n";
    write_text(path, os.str());
}

void write_history_csv(const std::filesystem::path& path,
                       std::span<const StepDiagnostics> history) {
    std::ostringstream os;
    os << "step,Q,sigma,eps_before,eps_after,mu_before,mu_after,eps_target_met,mu_target_met,"
          "max_alias,max_symplectic_dev,phi_inverse_residual,omega_shift\n";
    os.precision(17);
    for (const auto& d : history) {
        os << d.step_index << "," << d.Q << "," << d.sigma << "," << d.eps_before << ","
           << d.eps_after << "," << d.mu_before << "," << d.mu_after << ","
           << (d.eps_target_met ? 1 : 0) << "," << (d.mu_target_met ? 1 : 0) << "," << d.max_alias
           << "," << d.max_symplectic_dev << "," << d.phi_inverse_residual << ","
           << d.omega_shift << "\n";
    }
    write_text(path, os.str());
}

void write_torus_csv(const std::filesystem::path& path, const TransformSeries& embedding,
                     int points_per_dim) {
    const int n = static_cast<int>(embedding.E.size());
    AngleGrid grid(std::vector<int>(static_cast<std::size_t>(n), points_per_dim));
    std::ostringstream os;
    for (int i = 0; i < n; ++i) os << "theta" << i << ",";
    for (int i = 0; i < n; ++i) os << "q" << i << ",";
    for (int i = 0; i < n; ++i) os << "p" << i << (i + 1 < n ? "," : "\n");
    os.precision(17);
    std::vector<double> th(static_cast<std::size_t>(n));
    for (std::size_t pt = 0; pt < grid.point_count(); ++pt) {
        grid.point_into(pt, th);
        for (int i = 0; i < n; ++i) os << th[static_cast<std::size_t>(i)] << ",";
        for (int i = 0; i < n; ++i) {
            double q = th[static_cast<std::size_t>(i)] +
                       embedding.E[static_cast<std::size_t>(i)].evaluate_at_zero_action(th);
            os << q << ",";
        }
        for (int i = 0; i < n; ++i) {
            double p = embedding.G[static_cast<std::size_t>(i)].evaluate_at_zero_action(th);
            os << p << (i + 1 < n ? "," : "\n");
        }
    }
    write_text(path, os.str());
}

std::vector<double> load_grid_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path.string());
    std::vector<double> out;
    std::string line;
    while (std::getline(in, line)) {
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) {
            if (cell.empty()) continue;
            out.push_back(std::stod(cell));
        }
    }
    return out;
}

void write_svg_polyline(const std::filesystem::path& path, std::span<const double> xs,
                        std::span<const double> ys, const std::string& title) {
    if (xs.size() != ys.size() || xs.empty())
        throw structural_error("svg: need matching non-empty coordinate lists");
    const double W = 640, Hgt = 400, pad = 40;
    double xmin = xs[0], xmax = xs[0], ymin = ys[0], ymax = ys[0];
    for (std::size_t i = 0; i < xs.size(); ++i) {
        xmin = std::min(xmin, xs[i]);
        xmax = std::max(xmax, xs[i]);
        ymin = std::min(ymin, ys[i]);
        ymax = std::max(ymax, ys[i]);
    }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << Hgt
       << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n<text x=\"" << pad
       << "\" y=\"20\" font-size=\"14\">" << title << "</text>\n<polyline fill=\"none\" "
       << "stroke=\"steelblue\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double px = pad + (xs[i] - xmin) / (xmax - xmin) * (W - 2 * pad);
        double py = Hgt - pad - (ys[i] - ymin) / (ymax - ymin) * (Hgt - 2 * pad);
        os << px << "," << py << " ";
    }
    os << "\"/>\n</svg>\n";
    write_text(path, os.str());
}

}  // namespace gkam
