#pragma once

// File formats: matrices and data as CSV (one row per line, 17 significant
// digits), labels as a one-column CSV, precision matrices / patterns /
// mixture models / reports as JSON.

#include <string>
#include <vector>

#include <json.hpp>

#include "gmrf/evaluation.hpp"
#include "gmrf/matrix_core.hpp"
#include "gmrf/mixture.hpp"

namespace gmrf::io {

using nlohmann::json;

MatrixXd read_matrix_csv(const std::string& path);
void write_matrix_csv(const std::string& path, const MatrixXd& m);
std::string matrix_to_csv(const MatrixXd& m);

std::vector<int> read_labels_csv(const std::string& path);
void write_labels_csv(const std::string& path, const std::vector<int>& labels);

/// {n, triplets: [[i, j, value], ...]}, each unordered pair once with i <= j.
json sparse_spd_to_json(const SparseSpdd& q);
SparseSpdd sparse_spd_from_json(const json& j);

/// {n, pairs: [[i, j], ...]}. Reading also accepts a SparseSpd document, in
/// which case the pattern is the set of its nonzero triplets.
json pattern_to_json(const SupportPattern& p);
SupportPattern pattern_from_json(const json& j);

/// {K, n, components: [{weight, mean, precision}, ...]}.
json model_to_json(const MixtureModel<double>& m);
MixtureModel<double> model_from_json(const json& j);

json bias_report_to_json(const BiasReport& r);
/// One column per spectrum ("truth" first when present), one row per rank.
std::string eigenvalues_csv(const BiasReport& r);

json read_json(const std::string& path);
/// Writes to a temporary sibling and renames it over `path`.
void write_text_atomic(const std::string& path, const std::string& content);
void write_json(const std::string& path, const json& j);

/// Shortest decimal that reads back to the same double (at most 17 digits).
std::string format_double(double x);

}  // namespace gmrf::io
