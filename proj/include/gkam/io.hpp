#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "gkam/arithmetic.hpp"
#include "gkam/gevrey.hpp"
#include "gkam/hamiltonians.hpp"
#include "gkam/kam.hpp"
#include "gkam/rational.hpp"

namespace gkam {

using json = nlohmann::json;

// Series documents: {n, K, dI, terms: [{k, m, cos, sin}]}.
json series_to_json(const FourierTaylorSeries& f);
FourierTaylorSeries series_from_json(const json& j);

json inequality_to_json(const InequalityReport& r);
json lemma_to_json(const LemmaReport& r);
json arith_report_to_json(const ArithReport& r);
json basis_to_json(const ApproxBasis& b);
json basis_report_to_json(const BasisReport& r);
json diagnostics_to_json(const StepDiagnostics& d);
json kam_result_to_json(const KamResult& r);
json bessi_to_json(const BessiResult& r);
json witnesses_to_json(std::span<const ResonanceWitness> w);

void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const json& j);
json read_json(const std::filesystem::path& path);

/// (Q, psi) rows.
void write_psi_csv(const std::filesystem::path& path, const FrequencyProfile& profile);
/// One row per step with the headline diagnostics.
void write_history_csv(const std::filesystem::path& path,
                       std::span<const StepDiagnostics> history);
/// theta grid mapped through the embedding: columns theta..., q..., p....
void write_torus_csv(const std::filesystem::path& path, const TransformSeries& embedding,
                     int points_per_dim);

/// Row-major samples of a function on a regular angle grid.
std::vector<double> load_grid_csv(const std::filesystem::path& path);

/// Minimal polyline plot of (x, y) pairs.
void write_svg_polyline(const std::filesystem::path& path, std::span<const double> xs,
                        std::span<const double> ys, const std::string& title);

}  // namespace gkam
