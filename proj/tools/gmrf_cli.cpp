// Command-line entry point: data generation, mixture fitting, evaluation and
// the experiment pipelines. Every command writes a run manifest next to its
// outputs; passing that manifest back through --config replays the run.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gmrf/experiments.hpp"
#include "gmrf/io.hpp"

#ifndef GMRF_VERSION
#define GMRF_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using gmrf::io::json;

namespace {

enum ExitCode { kOk = 0, kInternal = 1, kUsage = 2, kIo = 3, kNumerical = 4 };

/// Inputs, outputs and seeds a command reports into its manifest.
struct RunRecord {
  json inputs = json::object();
  std::vector<std::string> outputs;
  std::vector<std::uint64_t> seeds;
  json resolved;  ///< extra resolved settings not visible as flags
};

/// Per-command state: the CLI11 subcommand, its flag names and the action.
struct Command {
  CLI::App* app = nullptr;
  std::set<std::string> flags;
  std::function<RunRecord()> run;
  std::string* out_dir = nullptr;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<double> parse_grid(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw gmrf::InvalidArgument("bad number '" + item + "' in --lambda-grid");
    out.push_back(v);
  }
  return out;
}

std::vector<std::string> parse_estimators(const std::string& s) {
  auto names = split_list(s);
  if (names.empty()) throw gmrf::InvalidArgument("--estimators is empty");
  const auto& known = gmrf::estimator_names();
  for (const auto& n : names)
    if (std::find(known.begin(), known.end(), n) == known.end())
      throw gmrf::InvalidArgument("unknown estimator '" + n + "' (expected baseline, glasso, debiased or known-support)");
  return names;
}

gmrf::EdgeRule parse_edge_rule(const std::string& s) {
  return s == "midpoint" ? gmrf::EdgeRule::Midpoint : gmrf::EdgeRule::NodeMean;
}

gmrf::InitMethod parse_init(const std::string& s) {
  return s == "kmeans++" ? gmrf::InitMethod::KMeansPlusPlus : gmrf::InitMethod::RandomResponsibilities;
}

/// A support source is a pattern document, a precision document, or a
/// mixture model document giving one pattern per component.
std::vector<gmrf::SupportPattern> read_support(const std::string& path) {
  const json j = gmrf::io::read_json(path);
  if (j.contains("components")) {
    std::vector<gmrf::SupportPattern> out;
    const auto model = gmrf::io::model_from_json(j);
    for (const auto& c : model.components()) out.push_back(c.precision.pattern());
    return out;
  }
  return {gmrf::io::pattern_from_json(j)};
}

std::string out_path(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

/// Typed form of a flag value for the manifest; numbers stay numbers.
json typed(const std::string& s) {
  if (s.empty()) return s;
  const json j = json::parse(s, nullptr, false);
  if (!j.is_discarded() && j.is_number()) return j;
  return s;
}

/// Every long option of `cmd` with its effective value.
json resolved_flags(const Command& cmd) {
  json cfg = json::object();
  for (const CLI::Option* opt : cmd.app->get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string name = opt->get_lnames().front();
    if (name == "help" || name == "config") continue;
    if (cmd.flags.count(name)) {
      cfg[name] = opt->count() > 0;
      continue;
    }
    std::vector<std::string> vals;
    if (opt->count() > 0) {
      vals = opt->reduced_results();
    } else {
      std::string d = opt->get_default_str();
      if (d.empty()) continue;
      if (d.front() == '[' && d.back() == ']') vals = split_list(d.substr(1, d.size() - 2));
      else vals.push_back(d);
    }
    if (vals.size() == 1) {
      cfg[name] = typed(vals.front());
    } else {
      json arr = json::array();
      for (const auto& v : vals) arr.push_back(typed(v));
      cfg[name] = arr;
    }
  }
  return cfg;
}

/// Expands a JSON config into flag tokens. A manifest is accepted as well:
/// its "config" object is used.
std::vector<std::string> config_tokens(const std::string& path) {
  json j = gmrf::io::read_json(path);
  if (j.contains("config") && j["config"].is_object()) j = j["config"];
  if (!j.is_object()) throw gmrf::InvalidArgument("config file '" + path + "' must hold a JSON object");
  std::vector<std::string> tokens;
  auto scalar = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
  for (const auto& [key, value] : j.items()) {
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    if (value.is_null()) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) tokens.push_back(flag);
      continue;
    }
    tokens.push_back(flag);
    if (value.is_array()) {
      for (const auto& v : value) tokens.push_back(scalar(v));
    } else {
      tokens.push_back(scalar(value));
    }
  }
  return tokens;
}

void write_manifest(const Command& cmd, const RunRecord& rec, double seconds) {
  json m;
  m["command"] = cmd.app->get_name();
  m["version"] = GMRF_VERSION;
  m["config"] = resolved_flags(cmd);
  if (!rec.resolved.is_null()) m["resolved"] = rec.resolved;
  m["seeds"] = rec.seeds;
  m["inputs"] = rec.inputs;
  m["outputs"] = rec.outputs;
  m["parallelism"] = 1;
  m["duration_seconds"] = seconds;
  gmrf::io::write_json(out_path(*cmd.out_dir, cmd.app->get_name() + ".manifest.json"), m);
}

// ---------------------------------------------------------------------------
// Commands

struct GenerateArgs {
  std::string kind;
  gmrf::Index rows = 10, cols = 10;
  int k = 10;
  gmrf::Index samples = 300;
  std::pair<gmrf::Index, gmrf::Index> samples_range{1500, 3000};
  std::uint64_t seed = 0;
  double coeff_low = 0.1, coeff_high = 1.0;
  double anchor = 0;
  CLI::Option* anchor_opt = nullptr;
  std::string edge_rule = "node-mean";
  std::string out_dir = ".";
};

RunRecord run_generate(const GenerateArgs& a) {
  using namespace gmrf;
  RunRecord rec;
  rec.seeds = {a.seed};
  json meta;
  meta["kind"] = a.kind;
  meta["rows"] = a.rows;
  meta["cols"] = a.cols;
  meta["dimension"] = a.rows * a.cols;
  meta["seed"] = a.seed;
  meta["nmi_normalization"] = "arithmetic";
  const std::string data_path = out_path(a.out_dir, "data.csv");
  const std::string truth_path = out_path(a.out_dir, "truth.json");
  if (a.kind == "laplacian2d") {
    const auto q = laplacian2d_precision(LatticeSpec{a.rows, a.cols});
    Rng rng(a.seed);
    const MatrixXd x = sample_gmrf(q, VectorXd::Zero(q.dim()), a.samples, rng);
    io::write_matrix_csv(data_path, x);
    io::write_json(truth_path, io::sparse_spd_to_json(q));
    meta["samples"] = a.samples;
    rec.outputs = {data_path, truth_path};
  } else {
    DiffusionSpec spec;
    spec.rows = a.rows;
    spec.cols = a.cols;
    spec.coeff_low = a.coeff_low;
    spec.coeff_high = a.coeff_high;
    if (a.anchor_opt->count() > 0) spec.anchor = a.anchor;
    spec.edge_rule = parse_edge_rule(a.edge_rule);
    spec.validate();
    const auto ds = make_clustering_dataset(a.k, spec, a.samples_range.first, a.samples_range.second, a.seed);
    std::vector<GmrfComponent<double>> comps;
    const double total = static_cast<double>(ds.data.rows());
    for (std::size_t k = 0; k < ds.precisions.size(); ++k)
      comps.push_back({static_cast<double>(ds.counts[k]) / total, VectorXd::Zero(ds.data.cols()), ds.precisions[k]});
    const std::string labels_path = out_path(a.out_dir, "labels.csv");
    io::write_matrix_csv(data_path, ds.data);
    io::write_labels_csv(labels_path, ds.labels);
    io::write_json(truth_path, io::model_to_json(MixtureModel<double>(std::move(comps))));
    meta["k"] = a.k;
    meta["counts"] = ds.counts;
    meta["coeff_low"] = a.coeff_low;
    meta["coeff_high"] = a.coeff_high;
    meta["anchor"] = spec.anchor_value();
    meta["edge_rule"] = a.edge_rule;
    rec.outputs = {data_path, labels_path, truth_path};
  }
  const std::string meta_path = out_path(a.out_dir, "metadata.json");
  io::write_json(meta_path, meta);
  rec.outputs.push_back(meta_path);
  return rec;
}

struct FitArgs {
  std::string data;
  int k = 1;
  std::string estimator = "baseline";
  double lambda = 0;
  CLI::Option* lambda_opt = nullptr;
  std::string support;
  bool zero_means = false;
  std::uint64_t seed = 0;
  std::string init = "random";
  int max_iters = 500;
  double ll_tol = 1e-6;
  std::string out_dir = ".";
};

RunRecord run_fit(const FitArgs& a) {
  using namespace gmrf;
  const bool penalized = a.estimator == "glasso" || a.estimator == "debiased";
  if (penalized && a.lambda_opt->count() == 0) throw InvalidArgument("--lambda is required for " + a.estimator);
  if (a.estimator == "known-support" && a.support.empty())
    throw InvalidArgument("--support is required for known-support");
  RunRecord rec;
  rec.seeds = {a.seed};
  rec.inputs["data"] = a.data;
  std::vector<SupportPattern> support;
  if (!a.support.empty()) {
    rec.inputs["support"] = a.support;
    support = read_support(a.support);
  }
  const MatrixXd data = io::read_matrix_csv(a.data);
  for (const auto& p : support)
    if (p.dim() != data.cols()) throw DimensionMismatch("support pattern and data disagree in dimension");

  EmConfig em;
  em.k = a.k;
  em.estimator = make_estimator(a.estimator, penalized ? a.lambda : 0.0, std::move(support));
  em.init = parse_init(a.init);
  em.max_em_iters = a.max_iters;
  em.ll_tol = a.ll_tol;
  em.fix_means_to_zero = a.zero_means;
  const auto fit = fit_em(data, em, a.seed);

  const std::string model_path = out_path(a.out_dir, "model.json");
  const std::string trace_path = out_path(a.out_dir, "ll_trace.csv");
  io::write_json(model_path, io::model_to_json(fit.model));
  std::string trace = "iteration,log_likelihood\n";
  for (std::size_t i = 0; i < fit.ll_trace.size(); ++i)
    trace += std::to_string(i) + "," + io::format_double(fit.ll_trace[i]) + "\n";
  io::write_text_atomic(trace_path, trace);
  rec.outputs = {model_path, trace_path};
  rec.resolved = {{"converged", fit.converged},
                  {"em_iterations", fit.ll_trace.size()},
                  {"reinitialized_components", fit.reinitialized_components}};
  std::cout << "fit: " << fit.ll_trace.size() << " EM iterations, final log-likelihood "
            << io::format_double(fit.ll_trace.back()) << (fit.converged ? "" : " (not converged)") << "\n";
  return rec;
}

struct EvalArgs {
  std::string model, data, labels;
  std::string out_dir = ".";
};

RunRecord run_eval(const EvalArgs& a) {
  using namespace gmrf;
  RunRecord rec;
  rec.inputs = {{"model", a.model}, {"data", a.data}};
  const auto model = io::model_from_json(io::read_json(a.model));
  const MatrixXd data = io::read_matrix_csv(a.data);
  if (model.dim() != data.cols())
    throw DimensionMismatch("model has dimension " + std::to_string(model.dim()) + " but data has " +
                            std::to_string(data.cols()) + " columns");
  const auto predicted = predict(model, data);
  std::vector<Index> counts(model.size(), 0);
  for (int l : predicted) ++counts[static_cast<std::size_t>(l)];
  json metrics;
  metrics["samples"] = data.rows();
  metrics["component_counts"] = counts;
  metrics["mean_negative_log_likelihood"] = mean_negative_log_likelihood(model, data);
  metrics["nmi_normalization"] = "arithmetic";
  if (!a.labels.empty()) {
    rec.inputs["labels"] = a.labels;
    const auto truth = io::read_labels_csv(a.labels);
    if (truth.size() != predicted.size())
      throw LengthMismatch("labels file has " + std::to_string(truth.size()) + " rows but data has " +
                           std::to_string(predicted.size()));
    metrics["nmi"] = nmi(predicted, truth);
    metrics["vi"] = vi(predicted, truth);
  }
  const std::string path = out_path(a.out_dir, "metrics.json");
  io::write_json(path, metrics);
  rec.outputs = {path};
  std::cout << metrics.dump(2) << "\n";
  return rec;
}

struct BiasArgs {
  std::string truth, data, support;
  double lambda = 0.25;
  std::string estimators = "known-support,glasso,debiased";
  bool center = false;
  std::string out_dir = ".";
};

RunRecord run_bias(const BiasArgs& a) {
  using namespace gmrf;
  BiasFitConfig cfg;
  cfg.lambda = a.lambda;
  cfg.estimators = parse_estimators(a.estimators);
  cfg.zero_mean = !a.center;
  const bool wants_support =
      std::find(cfg.estimators.begin(), cfg.estimators.end(), "known-support") != cfg.estimators.end();
  if (wants_support && a.truth.empty() && a.support.empty())
    throw InvalidArgument("known-support needs a pattern source: pass --truth or --support");
  RunRecord rec;
  rec.inputs["data"] = a.data;
  if (!a.truth.empty()) {
    rec.inputs["truth"] = a.truth;
    cfg.truth = io::sparse_spd_from_json(io::read_json(a.truth));
  }
  if (!a.support.empty()) {
    rec.inputs["support"] = a.support;
    cfg.support = io::pattern_from_json(io::read_json(a.support));
  }
  const MatrixXd data = io::read_matrix_csv(a.data);
  if (cfg.support && cfg.support->dim() != data.cols())
    throw DimensionMismatch("support pattern and data disagree in dimension");
  const auto report = run_bias_report(data, cfg);
  const std::string json_path = out_path(a.out_dir, "bias_report.json");
  const std::string csv_path = out_path(a.out_dir, "eigenvalues.csv");
  io::write_json(json_path, io::bias_report_to_json(report));
  io::write_text_atomic(csv_path, io::eigenvalues_csv(report));
  rec.outputs = {json_path, csv_path};
  for (const auto& e : report.estimators) {
    std::cout << e.name;
    if (e.mean_relative_error) std::cout << ": mean relative eigenvalue error " << io::format_double(*e.mean_relative_error);
    std::cout << "\n";
  }
  return rec;
}

struct SweepArgs {
  std::string data;
  std::string grid;
  double split = 0.7;
  std::uint64_t seed = 0;
  bool zero_means = false;
  std::string out_dir = ".";
};

RunRecord run_sweep(const SweepArgs& a) {
  using namespace gmrf;
  SweepConfig cfg;
  cfg.lambdas = parse_grid(a.grid);
  cfg.train_fraction = a.split;
  cfg.seed = a.seed;
  cfg.zero_mean = a.zero_means;
  RunRecord rec;
  rec.seeds = {a.seed};
  rec.inputs["data"] = a.data;
  const auto rows = lambda_sweep(io::read_matrix_csv(a.data), cfg);
  const std::string path = out_path(a.out_dir, "sweep.csv");
  const std::string csv = sweep_csv(rows);
  io::write_text_atomic(path, csv);
  rec.outputs = {path};
  std::cout << csv;
  return rec;
}

struct BenchArgs {
  bool small = false;
  std::optional<int> k, datasets, max_iters;
  std::optional<gmrf::Index> rows, cols;
  std::optional<std::pair<gmrf::Index, gmrf::Index>> samples_range;
  std::optional<double> lambda, coeff_low, coeff_high, ll_tol;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> estimators, edge_rule, init;
  std::string out_dir = ".";
};

json mean_std_json(const gmrf::MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}, {"runs", m.count}}; }

RunRecord run_bench(const BenchArgs& a) {
  using namespace gmrf;
  ClusterBenchConfig cfg = a.small ? ClusterBenchConfig::small_profile() : ClusterBenchConfig{};
  if (a.k) cfg.k = *a.k;
  if (a.rows) cfg.rows = *a.rows;
  if (a.cols) cfg.cols = *a.cols;
  if (a.samples_range) std::tie(cfg.samples_low, cfg.samples_high) = *a.samples_range;
  if (a.datasets) cfg.datasets = *a.datasets;
  if (a.lambda) cfg.lambda = *a.lambda;
  if (a.seed) cfg.seed = *a.seed;
  if (a.coeff_low) cfg.coeff_low = *a.coeff_low;
  if (a.coeff_high) cfg.coeff_high = *a.coeff_high;
  if (a.edge_rule) cfg.edge_rule = parse_edge_rule(*a.edge_rule);
  if (a.init) cfg.init = parse_init(*a.init);
  if (a.max_iters) cfg.max_em_iters = *a.max_iters;
  if (a.ll_tol) cfg.ll_tol = *a.ll_tol;
  if (a.estimators) cfg.estimators = parse_estimators(*a.estimators);
  cfg.validate();

  const auto result = run_cluster_bench(cfg, [](const ClusterRun& r) {
    std::cerr << "dataset " << r.dataset << " " << r.estimator << ": ";
    if (r.error) std::cerr << "failed (" << *r.error << ")\n";
    else std::cerr << "NMI " << r.nmi << ", VI " << r.vi << "\n";
  });

  RunRecord rec;
  for (int d = 0; d < cfg.datasets; ++d) rec.seeds.push_back(cfg.seed + static_cast<std::uint64_t>(d));
  rec.resolved = {{"k", cfg.k},
                  {"rows", cfg.rows},
                  {"cols", cfg.cols},
                  {"samples_range", {cfg.samples_low, cfg.samples_high}},
                  {"datasets", cfg.datasets},
                  {"lambda", cfg.lambda},
                  {"seed", cfg.seed},
                  {"coeff_low", cfg.coeff_low},
                  {"coeff_high", cfg.coeff_high},
                  {"edge_rule", cfg.edge_rule == EdgeRule::Midpoint ? "midpoint" : "node-mean"},
                  {"init", cfg.init == InitMethod::KMeansPlusPlus ? "kmeans++" : "random"},
                  {"max_iters", cfg.max_em_iters},
                  {"ll_tol", cfg.ll_tol},
                  {"estimators", cfg.estimators}};

  json summary;
  summary["nmi_normalization"] = "arithmetic";
  for (const auto& name : cfg.estimators)
    summary["estimators"][name] = {{"nmi", mean_std_json(result.nmi.at(name))}, {"vi", mean_std_json(result.vi.at(name))}};
  std::string runs = "dataset,estimator,nmi,vi,final_log_likelihood,em_iterations,converged,error\n";
  for (const auto& r : result.runs) {
    runs += std::to_string(r.dataset) + "," + r.estimator + ",";
    if (r.error) {
      std::string msg = *r.error;
      std::replace(msg.begin(), msg.end(), '"', '\'');
      runs += ",,,,false,\"" + msg + "\"\n";
    } else {
      runs += io::format_double(r.nmi) + "," + io::format_double(r.vi) + "," +
              io::format_double(r.final_log_likelihood) + "," + std::to_string(r.em_iterations) + "," +
              (r.converged ? "true" : "false") + ",\n";
    }
  }
  const std::string summary_path = out_path(a.out_dir, "cluster_bench.json");
  const std::string runs_path = out_path(a.out_dir, "cluster_runs.csv");
  io::write_json(summary_path, summary);
  io::write_text_atomic(runs_path, runs);
  rec.outputs = {summary_path, runs_path};
  for (const auto& name : cfg.estimators) {
    const auto& n = result.nmi.at(name);
    const auto& v = result.vi.at(name);
    std::cout << name << ": NMI " << n.mean << " ± " << n.std << ", VI " << v.mean << " ± " << v.std << " ("
              << n.count << " runs)\n";
  }
  return rec;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse-precision Gaussian and GMRF mixture estimation"};
  app.set_version_flag("--version", GMRF_VERSION);
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  std::map<std::string, Command> commands;
  auto add_command = [&](const std::string& name, const std::string& desc, std::string& out_dir) -> Command& {
    Command& c = commands[name];
    c.app = app.add_subcommand(name, desc);
    c.app->add_option("--config", "JSON file of flag values (a run manifest also works); flags override it");
    c.app->add_option("--out-dir", out_dir, "Directory for outputs and the run manifest");
    c.out_dir = &out_dir;
    return c;
  };
  auto flag = [](Command& c, const std::string& name, bool& var, const std::string& desc) {
    c.app->add_flag("--" + name, var, desc);
    c.flags.insert(name);
  };

  GenerateArgs gen;
  {
    Command& c = add_command("generate", "Sample a synthetic dataset", gen.out_dir);
    auto* s = c.app;
    s->add_option("--kind", gen.kind, "laplacian2d or diffusion-mixture")
        ->required()
        ->check(CLI::IsMember({"laplacian2d", "diffusion-mixture"}));
    s->add_option("--rows", gen.rows, "Grid rows")->check(CLI::PositiveNumber);
    s->add_option("--cols", gen.cols, "Grid columns")->check(CLI::PositiveNumber);
    s->add_option("--k", gen.k, "Mixture components")->check(CLI::PositiveNumber);
    s->add_option("--samples", gen.samples, "Samples (laplacian2d)")->check(CLI::PositiveNumber);
    s->add_option("--samples-range", gen.samples_range, "Per-component sample count range (diffusion-mixture)");
    s->add_option("--seed", gen.seed, "Random seed");
    s->add_option("--coeff-low", gen.coeff_low, "Lower diffusion coefficient bound");
    s->add_option("--coeff-high", gen.coeff_high, "Upper diffusion coefficient bound");
    gen.anchor_opt = s->add_option("--anchor", gen.anchor, "Diagonal anchor (default 1e-2 times coeff-low)");
    gen.anchor_opt->default_str("");
    s->add_option("--edge-rule", gen.edge_rule, "node-mean or midpoint")
        ->check(CLI::IsMember({"node-mean", "midpoint"}));
    c.run = [&] { return run_generate(gen); };
  }

  FitArgs fit;
  {
    Command& c = add_command("fit", "Fit a GMRF mixture with EM", fit.out_dir);
    auto* s = c.app;
    s->add_option("--data", fit.data, "Data CSV")->required();
    s->add_option("--k", fit.k, "Mixture components")->check(CLI::PositiveNumber);
    s->add_option("--estimator", fit.estimator, "baseline, glasso, debiased or known-support")
        ->check(CLI::IsMember(gmrf::estimator_names()));
    fit.lambda_opt = s->add_option("--lambda", fit.lambda, "GLASSO penalty (glasso and debiased)");
    fit.lambda_opt->default_str("");
    s->add_option("--support", fit.support, "Pattern, precision or model JSON (known-support)");
    flag(c, "zero-means", fit.zero_means, "Fix all component means at zero");
    s->add_option("--seed", fit.seed, "Initialization seed");
    s->add_option("--init", fit.init, "random or kmeans++")->check(CLI::IsMember({"random", "kmeans++"}));
    s->add_option("--max-iters", fit.max_iters, "EM iteration cap")->check(CLI::PositiveNumber);
    s->add_option("--ll-tol", fit.ll_tol, "Relative log-likelihood change that stops EM");
    c.run = [&] { return run_fit(fit); };
  }

  EvalArgs ev;
  {
    Command& c = add_command("eval", "Score a fitted model against data and labels", ev.out_dir);
    auto* s = c.app;
    s->add_option("--model", ev.model, "Model JSON")->required();
    s->add_option("--data", ev.data, "Data CSV")->required();
    s->add_option("--labels", ev.labels, "True labels CSV");
    c.run = [&] { return run_eval(ev); };
  }

  BiasArgs bias;
  {
    Command& c = add_command("bias-report", "Compare estimator spectra on one Gaussian", bias.out_dir);
    auto* s = c.app;
    s->add_option("--truth", bias.truth, "True precision JSON");
    s->add_option("--data", bias.data, "Data CSV")->required();
    s->add_option("--support", bias.support, "Pattern JSON for known-support (defaults to the truth's)");
    s->add_option("--lambda", bias.lambda, "GLASSO penalty");
    s->add_option("--estimators", bias.estimators, "Comma-separated estimator names");
    flag(c, "center", bias.center, "Subtract the sample mean (data are taken as zero-mean otherwise)");
    c.run = [&] { return run_bias(bias); };
  }

  SweepArgs sweep;
  {
    Command& c = add_command("lambda-sweep", "Held-out likelihood over a grid of penalties", sweep.out_dir);
    auto* s = c.app;
    s->add_option("--data", sweep.data, "Data CSV")->required();
    s->add_option("--lambda-grid", sweep.grid, "Comma-separated penalties")->required();
    s->add_option("--split", sweep.split, "Training fraction");
    s->add_option("--seed", sweep.seed, "Shuffle seed");
    flag(c, "zero-means", sweep.zero_means, "Take the data as zero-mean instead of using the training mean");
    c.run = [&] { return run_sweep(sweep); };
  }

  BenchArgs bench;
  {
    Command& c = add_command("cluster-bench", "Clustering benchmark on diffusion mixtures", bench.out_dir);
    auto* s = c.app;
    flag(c, "small", bench.small, "K = 5 on a 5x5 grid with 500-1000 samples per component");
    s->add_option("--k", bench.k, "Mixture components");
    s->add_option("--rows", bench.rows, "Grid rows");
    s->add_option("--cols", bench.cols, "Grid columns");
    s->add_option("--samples-range", bench.samples_range, "Per-component sample count range");
    s->add_option("--datasets", bench.datasets, "Number of generated datasets");
    s->add_option("--lambda", bench.lambda, "GLASSO penalty");
    s->add_option("--seed", bench.seed, "Seed of the first dataset");
    s->add_option("--coeff-low", bench.coeff_low, "Lower diffusion coefficient bound");
    s->add_option("--coeff-high", bench.coeff_high, "Upper diffusion coefficient bound");
    s->add_option("--edge-rule", bench.edge_rule, "node-mean or midpoint")
        ->check(CLI::IsMember({"node-mean", "midpoint"}));
    s->add_option("--init", bench.init, "random or kmeans++")->check(CLI::IsMember({"random", "kmeans++"}));
    s->add_option("--max-iters", bench.max_iters, "EM iteration cap");
    s->add_option("--ll-tol", bench.ll_tol, "Relative log-likelihood change that stops EM");
    s->add_option("--estimators", bench.estimators, "Comma-separated estimator names");
    c.run = [&] { return run_bench(bench); };
  }

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    // Expand --config into flag tokens placed before the command-line flags,
    // so that with take-last semantics explicit flags win.
    if (!args.empty() && commands.count(args.front())) {
      std::vector<std::string> rest{args.front()}, config;
      for (std::size_t i = 1; i < args.size(); ++i) {
        std::string path;
        if (args[i] == "--config") {
          if (i + 1 >= args.size()) throw CLI::ArgumentMismatch("--config needs a file");
          path = args[++i];
        } else if (args[i].rfind("--config=", 0) == 0) {
          path = args[i].substr(9);
        } else {
          rest.push_back(args[i]);
          continue;
        }
        auto t = config_tokens(path);
        config.insert(config.end(), t.begin(), t.end());
      }
      args = {rest.front()};
      args.insert(args.end(), config.begin(), config.end());
      args.insert(args.end(), rest.begin() + 1, rest.end());
    }
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  } catch (const gmrf::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const gmrf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }

  for (auto& [name, cmd] : commands) {
    if (!cmd.app->parsed()) continue;
    try {
      const auto start = std::chrono::steady_clock::now();
      fs::create_directories(*cmd.out_dir);
      const RunRecord rec = cmd.run();
      const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
      write_manifest(cmd, rec, elapsed.count());
      return kOk;
    } catch (const gmrf::InvalidArgument& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kUsage;
    } catch (const gmrf::IoError& e) {
      std::cerr << "I/O error: " << e.what() << "\n";
      return kIo;
    } catch (const fs::filesystem_error& e) {
      std::cerr << "I/O error: " << e.what() << "\n";
      return kIo;
    } catch (const gmrf::NumericalError& e) {
      std::cerr << "numerical failure: " << e.what() << "\n";
      return kNumerical;
    } catch (const std::exception& e) {
      std::cerr << "internal error: " << e.what() << "\n";
      return kInternal;
    }
  }
  return kUsage;
}
