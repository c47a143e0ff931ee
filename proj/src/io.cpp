#include "gmrf/io.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace gmrf::io {

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool parse_row(const std::string& line, std::vector<double>& out) {
  out.clear();
  const char* p = line.c_str();
  while (true) {
    while (*p == ' ' || *p == '\t') ++p;
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(p, &end);
    if (end == p || !std::isfinite(v)) return false;
    out.push_back(v);
    p = end;
    while (*p == ' ' || *p == '\t' || *p == '\r') ++p;
    if (*p == '\0') return true;
    if (*p != ',') return false;
    ++p;
  }
}

}  // namespace

std::string format_double(double x) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

MatrixXd read_matrix_csv(const std::string& path) {
  std::istringstream in(slurp(path));
  std::vector<std::vector<double>> rows;
  std::vector<double> row;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    if (!parse_row(line, row)) {
      if (rows.empty() && lineno == 1) continue;  // header
      throw IoError(path + ":" + std::to_string(lineno) + ": not a numeric CSV row");
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw IoError(path + ":" + std::to_string(lineno) + ": ragged CSV row");
    rows.push_back(row);
  }
  if (rows.empty()) throw IoError("'" + path + "' holds no data rows");
  MatrixXd m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  return m;
}

std::string matrix_to_csv(const MatrixXd& m) {
  std::string out;
  out.reserve(static_cast<std::size_t>(m.size()) * 20);
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      out += format_double(m(i, j));
    }
    out += '\n';
  }
  return out;
}

void write_matrix_csv(const std::string& path, const MatrixXd& m) { write_text_atomic(path, matrix_to_csv(m)); }

std::vector<int> read_labels_csv(const std::string& path) {
  std::istringstream in(slurp(path));
  std::vector<int> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    char* end = nullptr;
    const long v = std::strtol(line.c_str(), &end, 10);
    if (end == line.c_str() || *end != '\0') {
      if (labels.empty() && lineno == 1) continue;
      throw IoError(path + ":" + std::to_string(lineno) + ": not an integer label");
    }
    labels.push_back(static_cast<int>(v));
  }
  return labels;
}

void write_labels_csv(const std::string& path, const std::vector<int>& labels) {
  std::string out;
  for (int l : labels) out += std::to_string(l) + '\n';
  write_text_atomic(path, out);
}

json sparse_spd_to_json(const SparseSpdd& q) {
  json trips = json::array();
  const auto& pat = q.pattern();
  for (std::size_t p = 0; p < pat.size(); ++p)
    trips.push_back({pat[p].i, pat[p].j, q.values()(static_cast<Index>(p))});
  return {{"n", q.dim()}, {"triplets", trips}};
}

SparseSpdd sparse_spd_from_json(const json& j) {
  try {
    const Index n = j.at("n").get<Index>();
    std::vector<std::pair<Index, Index>> pairs;
    std::vector<double> vals;
    for (const auto& t : j.at("triplets")) {
      pairs.emplace_back(t.at(0).get<Index>(), t.at(1).get<Index>());
      vals.push_back(t.at(2).get<double>());
    }
    SupportPattern pat = SupportPattern::from_pairs(n, pairs);
    VectorXd v = VectorXd::Zero(static_cast<Index>(pat.size()));
    for (std::size_t k = 0; k < pairs.size(); ++k)
      v(static_cast<Index>(*pat.find(pairs[k].first, pairs[k].second))) = vals[k];
    return SparseSpdd(std::move(pat), std::move(v));
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed precision JSON: ") + e.what());
  }
}

json pattern_to_json(const SupportPattern& p) {
  json pairs = json::array();
  for (const auto& pr : p.pairs()) pairs.push_back({pr.i, pr.j});
  return {{"n", p.dim()}, {"pairs", pairs}};
}

SupportPattern pattern_from_json(const json& j) {
  try {
    const Index n = j.at("n").get<Index>();
    std::vector<std::pair<Index, Index>> pairs;
    if (j.contains("pairs")) {
      for (const auto& p : j.at("pairs")) pairs.emplace_back(p.at(0).get<Index>(), p.at(1).get<Index>());
    } else {
      for (const auto& t : j.at("triplets"))
        if (t.at(2).get<double>() != 0.0) pairs.emplace_back(t.at(0).get<Index>(), t.at(1).get<Index>());
    }
    return SupportPattern::from_pairs(n, pairs);
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed pattern JSON: ") + e.what());
  }
}

json model_to_json(const MixtureModel<double>& m) {
  json comps = json::array();
  for (const auto& c : m.components()) {
    std::vector<double> mean(c.mean.data(), c.mean.data() + c.mean.size());
    comps.push_back({{"weight", c.weight}, {"mean", mean}, {"precision", sparse_spd_to_json(c.precision)}});
  }
  return {{"K", m.size()}, {"n", m.dim()}, {"components", comps}};
}

MixtureModel<double> model_from_json(const json& j) {
  try {
    std::vector<GmrfComponent<double>> comps;
    for (const auto& c : j.at("components")) {
      const auto mean = c.at("mean").get<std::vector<double>>();
      comps.push_back({c.at("weight").get<double>(),
                       Eigen::Map<const VectorXd>(mean.data(), static_cast<Index>(mean.size())),
                       sparse_spd_from_json(c.at("precision"))});
    }
    if (comps.size() != j.at("K").get<std::size_t>()) throw IoError("model JSON: K disagrees with component count");
    return MixtureModel<double>(std::move(comps));
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed model JSON: ") + e.what());
  }
}

json bias_report_to_json(const BiasReport& r) {
  auto vec = [](const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  json out;
  out["lambda"] = r.lambda;
  out["truth_eigenvalues"] = r.truth_eigenvalues ? json(vec(*r.truth_eigenvalues)) : json(nullptr);
  json ests = json::array();
  for (const auto& e : r.estimators)
    ests.push_back({{"name", e.name},
                    {"eigenvalues", vec(e.eigenvalues)},
                    {"mean_relative_error", e.mean_relative_error ? json(*e.mean_relative_error) : json(nullptr)}});
  out["estimators"] = ests;
  out["glasso_estimator"] = r.glasso_name ? json(*r.glasso_name) : json(nullptr);
  json gers = json::array();
  for (const auto& g : r.gershgorin)
    gers.push_back({{"center", g.center},
                    {"radius", g.radius},
                    {"s_center", g.s_center},
                    {"s_radius", g.s_radius},
                    {"first_order_bound", g.first_order_bound}});
  out["gershgorin"] = gers;
  if (r.kkt) {
    json entries = json::array();
    for (const auto& e : r.kkt->entries) entries.push_back({e.i, e.j, e.sign_s, e.sign_q, e.residual});
    out["kkt_sign_check"] = {{"sign_opposition_fraction", r.kkt->fraction},
                             {"max_residual", r.kkt->max_residual},
                             {"entries_columns", {"i", "j", "sign_s", "sign_q", "residual"}},
                             {"entries", entries}};
  } else {
    out["kkt_sign_check"] = nullptr;
  }
  return out;
}

std::string eigenvalues_csv(const BiasReport& r) {
  std::vector<std::pair<std::string, const VectorXd*>> cols;
  if (r.truth_eigenvalues) cols.emplace_back("truth", &*r.truth_eigenvalues);
  for (const auto& e : r.estimators) cols.emplace_back(e.name, &e.eigenvalues);
  std::string out = "rank";
  for (const auto& c : cols) out += "," + c.first;
  out += '\n';
  const Index n = cols.empty() ? 0 : cols.front().second->size();
  for (Index i = 0; i < n; ++i) {
    out += std::to_string(i);
    for (const auto& c : cols) out += "," + format_double((*c.second)(i));
    out += '\n';
  }
  return out;
}

json read_json(const std::string& path) {
  try {
    return json::parse(slurp(path));
  } catch (const json::parse_error& e) {
    throw IoError("'" + path + "' is not valid JSON: " + e.what());
  }
}

void write_text_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  std::error_code ec;
  if (target.has_parent_path()) fs::create_directories(target.parent_path(), ec);
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out << content;
    out.flush();
    if (!out) throw IoError("failed writing '" + tmp.string() + "'");
  }
  fs::rename(tmp, target, ec);
  if (ec) throw IoError("cannot move '" + tmp.string() + "' to '" + path + "': " + ec.message());
}

void write_json(const std::string& path, const json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

}  // namespace gmrf::io
