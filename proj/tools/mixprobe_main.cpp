// mixprobe command-line front end: simulate | fit | sample | explore | report
//
// Every run writes a manifest.json with the fully resolved configuration;
// feeding that manifest back through --config reproduces the run.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mixprobe/mixprobe.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mixprobe;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitNumerical = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw UsageError("bad JSON in " + path + ": " + e.what());
  }
  return j;
}

void write_json_file(const json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// Options absent from the command line fall back to --config values.
class ConfigLayer {
 public:
  explicit ConfigLayer(json cfg) : cfg_(std::move(cfg)) {}

  template <class T>
  void fill(const CLI::Option* opt, const char* key, T& value) const {
    if (opt != nullptr && opt->count() > 0) return;
    if (cfg_.contains(key)) value = cfg_.at(key).get<T>();
  }

 private:
  json cfg_;
};

json scan_config(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size())
      return load_json_file(args[i + 1]);
    if (args[i].rfind("--config=", 0) == 0)
      return load_json_file(args[i].substr(9));
  }
  return json::object();
}

NaturalParams default_truth() {
  NaturalParams n(3);
  n.mu = {21.0, 23.0, 28.0};
  n.sigma = {1.0, 1.0, 1.0};
  n.rho_mz = {0.7, 0.5, 0.3};
  n.rho_dz = {0.4, 0.3, -0.2};
  n.beta = 2.0;
  n.p = {0.6, 0.3, 0.1};
  return n;
}

/// Moment-based default start: component means at quantiles of the female
/// baseline, shared spread from the pooled SD, and uniform weights.
UnconstrainedParams default_start(const TwinDataset& data, int m) {
  std::vector<double> female, male, all;
  for (const TwinRow& r : data.rows) {
    (r.sex == Sex::F ? female : male).push_back(r.x1);
    (r.sex == Sex::F ? female : male).push_back(r.x2);
    all.push_back(r.x1);
    all.push_back(r.x2);
  }
  std::vector<double>& base = female.empty() ? all : female;
  std::sort(base.begin(), base.end());

  auto mean_of = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / v.size();
  };
  double sd = 0.0;
  const double mu_all = mean_of(all);
  for (double x : all) sd += (x - mu_all) * (x - mu_all);
  sd = std::sqrt(sd / std::max<std::size_t>(1, all.size() - 1));

  NaturalParams n(m);
  double prev = 0.0;
  for (int k = 0; k < m; ++k) {
    const double q = (k + 0.5) / m;
    double mu = base[static_cast<std::size_t>(q * (base.size() - 1))];
    mu = std::max({mu, 0.01, prev + 0.05});  // positive, strictly increasing
    n.mu[k] = mu;
    prev = mu;
    n.sigma[k] = std::max(0.05, sd / 2.0);
    n.rho_mz[k] = 0.5;
    n.rho_dz[k] = 0.25;
    n.p[k] = 1.0 / m;
  }
  n.beta = (male.empty() || female.empty()) ? 0.0 : mean_of(male) - mean_of(female);
  return from_natural(n);
}

UnconstrainedParams load_start_file(const std::string& path, int m) {
  const json j = load_json_file(path);
  UnconstrainedParams u =
      j.contains("alpha") ? j.get<UnconstrainedParams>() : from_natural(j.get<NaturalParams>());
  if (u.n_components() != m)
    throw UsageError("start parameters have " + std::to_string(u.n_components()) +
                     " components, expected " + std::to_string(m));
  return u;
}

TwinDataset load_dataset(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("data file not found: " + path);
  try {
    return read_dataset_csv(path);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

fs::path ensure_out_dir(const std::string& out) {
  fs::path dir(out.empty() ? "." : out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw UsageError("cannot create output directory " + dir.string());
  return dir;
}

FixedMask mask_from_blocks(const std::vector<std::string>& blocks,
                           const UnconstrainedParams& ref) {
  static const std::map<std::string, ParamBlock> kNames = {
      {"alpha", ParamBlock::Alpha},   {"log_sigma", ParamBlock::LogSigma},
      {"rho_mz", ParamBlock::RhoMz},  {"rho_dz", ParamBlock::RhoDz},
      {"beta", ParamBlock::Beta},     {"pre_p", ParamBlock::PreP}};
  FixedMask mask = FixedMask::none(ref.n_components());
  for (const std::string& b : blocks) {
    const auto it = kNames.find(b);
    if (it == kNames.end())
      throw UsageError("unknown parameter block '" + b +
                       "' (expected alpha, log_sigma, rho_mz, rho_dz, beta, pre_p)");
    mask.fix_block(it->second, ref);
  }
  return mask;
}

json diagnostics_json(const Chain& chain) {
  json j;
  try {
    j["geweke"] = geweke_chain(chain);
  } catch (const ChainTooShort&) {
    j["geweke"] = nullptr;  // undefined below 100 draws
  }
  j["global"] = json::object();
  j["global"]["per_draw_average"] = global_quantities_chain(chain);
  // alternative convention: formula applied to the posterior-mean draw
  const std::vector<ParamSummary> summary = summarize(chain);
  NaturalParams at_means(chain.n_components);
  {
    const int m = chain.n_components;
    for (int k = 0; k < m; ++k) {
      at_means.mu[k] = summary[k].mean;
      at_means.sigma[k] = summary[m + k].mean;
      at_means.rho_mz[k] = summary[2 * m + k].mean;
      at_means.rho_dz[k] = summary[3 * m + k].mean;
      at_means.p[k] = summary[4 * m + 1 + k].mean;
    }
    at_means.beta = summary[4 * m].mean;
  }
  try {
    j["global"]["at_parameter_means"] = global_quantities(at_means);
  } catch (const DomainError&) {
    j["global"]["at_parameter_means"] = nullptr;
  }
  j["summary"] = summary;
  j["min_nll"] = chain.min_nll();
  j["n_divergent"] = chain.total_divergences();
  j["step_size_final"] = chain.step_size_final;
  const CollapseSummary collapse = detect_collapse(chain);
  j["collapse"] = {{"n_effective_components", collapse.n_effective_components},
                   {"collapsed_pairs", collapse.collapsed_pairs}};
  return j;
}

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateCmd {
  int n = 1200;
  double frac_mz = 1.0 / 3.0;
  double frac_male = 0.5;
  std::uint64_t seed = 0;
  std::string truth_file, out = ".";

  CLI::Option *n_opt = nullptr, *mz_opt = nullptr, *male_opt = nullptr,
              *seed_opt = nullptr, *truth_opt = nullptr, *out_opt = nullptr;

  void attach(CLI::App& app) {
    n_opt = app.add_option("--n", n, "number of twin pairs");
    mz_opt = app.add_option("--frac-mz", frac_mz, "monozygotic fraction");
    male_opt = app.add_option("--frac-male", frac_male, "male fraction");
    seed_opt = app.add_option("--seed", seed, "global seed");
    truth_opt = app.add_option("--truth", truth_file,
                               "JSON file with generating natural parameters");
    out_opt = app.add_option("--out", out, "output directory");
  }

  int run(const ConfigLayer& cfg) {
    cfg.fill(n_opt, "n", n);
    cfg.fill(mz_opt, "frac_mz", frac_mz);
    cfg.fill(male_opt, "frac_male", frac_male);
    cfg.fill(seed_opt, "seed", seed);
    cfg.fill(out_opt, "out", out);
    json truth_json;
    if (truth_opt->count() > 0 || !truth_file.empty())
      truth_json = load_json_file(truth_file);
    else
      cfg.fill(nullptr, "truth", truth_json);
    const NaturalParams truth =
        truth_json.is_null() || truth_json.empty() ? default_truth()
                                                   : truth_json.get<NaturalParams>();
    if (n <= 0) throw UsageError("--n must be positive");

    const fs::path dir = ensure_out_dir(out);
    const TwinDataset data =
        simulate(truth, {n, frac_mz, frac_male}, derive_seed(seed, "simulate"));
    write_dataset_csv(data, (dir / "data.csv").string());
    write_json_file(json(truth), dir / "truth.json");

    json manifest = {{"command", "simulate"}, {"n", n},
                     {"frac_mz", frac_mz},    {"frac_male", frac_male},
                     {"seed", seed},          {"truth", truth},
                     {"out", out}};
    write_json_file(manifest, dir / "manifest.json");
    std::cout << "wrote " << (dir / "data.csv").string() << " (" << data.size()
              << " pairs, " << data.n_mz() << " MZ)\n";
    return kExitOk;
  }
};

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

json fit_payload(const OptimResult& r, const TwinDataset& data, const ModelSpec& spec) {
  json j;
  j["result"] = r;
  j["components"] = spec.n_components;
  j["n_obs"] = data.size();
  j["k"] = parameter_count(spec.n_components);
  const InformationCriteria ic =
      aic_bic(r.nll, parameter_count(spec.n_components), static_cast<int>(data.size()));
  j["aic"] = ic.aic;
  j["bic"] = ic.bic;
  try {
    j["standard_errors_natural"] = standard_errors(r.argmin, data, spec);
  } catch (const SingularHessian&) {
    j["standard_errors_natural"] = nullptr;
  }
  return j;
}

struct FitCmd {
  std::string data_file, start_file, bounds_file, out = ".";
  int components = 3;
  int max_iterations = 500;
  double gtol = 1e-8;
  std::uint64_t seed = 0;

  CLI::Option *data_opt = nullptr, *comp_opt = nullptr, *start_opt = nullptr,
              *bounds_opt = nullptr, *iter_opt = nullptr, *gtol_opt = nullptr,
              *seed_opt = nullptr, *out_opt = nullptr;

  void attach(CLI::App& app) {
    data_opt = app.add_option("--data", data_file, "dataset CSV")->required(false);
    comp_opt = app.add_option("--components", components, "mixture components");
    start_opt = app.add_option("--start", start_file, "JSON start parameters");
    bounds_opt = app.add_option("--bounds", bounds_file, "JSON box bounds");
    iter_opt = app.add_option("--max-iter", max_iterations, "iteration cap");
    gtol_opt = app.add_option("--gtol", gtol, "projected-gradient tolerance");
    seed_opt = app.add_option("--seed", seed, "global seed");
    out_opt = app.add_option("--out", out, "output directory");
  }

  int run(const ConfigLayer& cfg) {
    cfg.fill(data_opt, "data", data_file);
    cfg.fill(comp_opt, "components", components);
    cfg.fill(start_opt, "start", start_file);
    cfg.fill(bounds_opt, "bounds", bounds_file);
    cfg.fill(iter_opt, "max_iterations", max_iterations);
    cfg.fill(gtol_opt, "gradient_tolerance", gtol);
    cfg.fill(seed_opt, "seed", seed);
    cfg.fill(out_opt, "out", out);
    if (data_file.empty()) throw UsageError("--data is required");
    if (components < 1 || components > 3)
      throw UsageError("--components must be 1, 2 or 3");

    const TwinDataset data = load_dataset(data_file);
    const ModelSpec spec{components};
    const UnconstrainedParams start = start_file.empty()
                                          ? default_start(data, components)
                                          : load_start_file(start_file, components);
    OptimConfig ocfg;
    ocfg.max_iterations = max_iterations;
    ocfg.gradient_tolerance = gtol;
    if (!bounds_file.empty()) ocfg.bounds = load_json_file(bounds_file).get<BoxBounds>();

    const OptimResult r = minimize(start, data, spec, ocfg);
    const fs::path dir = ensure_out_dir(out);
    const std::string name = "fit_m" + std::to_string(components) + ".json";
    write_json_file(fit_payload(r, data, spec), dir / name);

    json manifest = {{"command", "fit"},
                     {"data", data_file},
                     {"components", components},
                     {"start", start_file},
                     {"bounds", bounds_file},
                     {"max_iterations", max_iterations},
                     {"gradient_tolerance", gtol},
                     {"seed", seed},
                     {"out", out}};
    write_json_file(manifest, dir / "manifest.json");
    std::cout << name << ": nll=" << fmt6(r.nll) << " converged=" << r.converged
              << " (" << to_string(r.termination) << ")\n";
    return r.converged ? kExitOk : kExitNumerical;
  }
};

// ---------------------------------------------------------------------------
// sample / explore
// ---------------------------------------------------------------------------

struct SampleArgs {
  std::string data_file, start_file, bounds_file, strategy = "base", out = ".";
  std::vector<std::string> fix_blocks;
  int components = 3, iters = 1000, warmup = 500, max_depth = 10, seeds = 15,
      threads = 1;
  double target_accept = 0.95;
  std::uint64_t seed = 0;
  // resolved values recovered from a manifest re-fed as --config
  std::optional<UnconstrainedParams> start_override;
  std::optional<BoxBounds> bounds_override;

  CLI::Option *data_opt = nullptr, *comp_opt = nullptr, *start_opt = nullptr,
              *bounds_opt = nullptr, *strat_opt = nullptr, *fix_opt = nullptr,
              *iters_opt = nullptr, *warmup_opt = nullptr, *depth_opt = nullptr,
              *seeds_opt = nullptr, *accept_opt = nullptr, *seed_opt = nullptr,
              *threads_opt = nullptr, *out_opt = nullptr;

  void attach(CLI::App& app) {
    data_opt = app.add_option("--data", data_file, "dataset CSV");
    comp_opt = app.add_option("--components", components, "mixture components");
    start_opt = app.add_option("--start", start_file, "JSON start parameters");
    strat_opt = app.add_option("--strategy", strategy,
                               "base | seedloop | fixed | bounded");
    fix_opt = app.add_option("--fix", fix_blocks,
                             "blocks to hold at their start values")
                  ->delimiter(',');
    bounds_opt = app.add_option("--bounds", bounds_file, "JSON box bounds");
    iters_opt = app.add_option("--iters", iters, "total iterations");
    warmup_opt = app.add_option("--warmup", warmup, "warmup iterations");
    depth_opt = app.add_option("--max-depth", max_depth, "max tree depth");
    seeds_opt = app.add_option("--seeds", seeds, "chains in the seed loop");
    accept_opt = app.add_option("--target-accept", target_accept,
                                "dual-averaging acceptance target");
    seed_opt = app.add_option("--seed", seed, "global seed");
    threads_opt = app.add_option("--threads", threads, "worker cap");
    out_opt = app.add_option("--out", out, "output directory");
  }

  void merge(const ConfigLayer& cfg) {
    cfg.fill(data_opt, "data", data_file);
    cfg.fill(comp_opt, "components", components);
    cfg.fill(start_opt, "start", start_file);
    cfg.fill(strat_opt, "strategy", strategy);
    cfg.fill(fix_opt, "fix", fix_blocks);
    cfg.fill(bounds_opt, "bounds", bounds_file);
    cfg.fill(iters_opt, "iters", iters);
    cfg.fill(warmup_opt, "warmup", warmup);
    cfg.fill(depth_opt, "max_tree_depth", max_depth);
    cfg.fill(seeds_opt, "seeds", seeds);
    cfg.fill(accept_opt, "target_accept", target_accept);
    cfg.fill(seed_opt, "seed", seed);
    cfg.fill(threads_opt, "threads", threads);
    cfg.fill(out_opt, "out", out);
    if (data_file.empty()) throw UsageError("--data is required");
    if (components < 1 || components > 3)
      throw UsageError("--components must be 1, 2 or 3");
    // a manifest re-fed as config pins the resolved start and box exactly
    if (start_file.empty() && (start_opt == nullptr || start_opt->count() == 0)) {
      json v;
      cfg.fill(nullptr, "start_params", v);
      if (!v.is_null() && !v.empty()) start_override = v.get<UnconstrainedParams>();
    }
    if (bounds_file.empty() && (bounds_opt == nullptr || bounds_opt->count() == 0)) {
      json v;
      cfg.fill(nullptr, "bounds_box", v);
      if (!v.is_null() && !v.empty()) bounds_override = v.get<BoxBounds>();
    }
  }

  json manifest(const char* command, const UnconstrainedParams& start,
                const std::optional<BoxBounds>& bounds) const {
    json j = {{"command", command},
              {"data", data_file},
              {"components", components},
              {"strategy", strategy},
              {"fix", fix_blocks},
              {"iters", iters},
              {"warmup", warmup},
              {"max_tree_depth", max_depth},
              {"seeds", seeds},
              {"target_accept", target_accept},
              {"seed", seed},
              {"threads", threads},
              {"out", out},
              {"start_params", start}};
    if (bounds) j["bounds_box"] = *bounds;
    else j["bounds_box"] = nullptr;
    return j;
  }
};

struct PreparedRun {
  TwinDataset data;
  ModelSpec spec{3};
  UnconstrainedParams start;
  Strategy strategy{BaseStrategy{}};
  SamplerConfig sampler;
  std::optional<BoxBounds> bounds_used;
};

PreparedRun prepare_run(SampleArgs& args) {
  PreparedRun run;
  run.data = load_dataset(args.data_file);
  run.spec = ModelSpec{args.components};

  if (args.start_override) {
    run.start = *args.start_override;
  } else if (!args.start_file.empty()) {
    run.start = load_start_file(args.start_file, args.components);
  } else {
    // mirror the reported workflow: start the sampler at the optimum
    const OptimResult fit =
        minimize(default_start(run.data, args.components), run.data, run.spec);
    run.start = fit.argmin;
  }

  run.sampler.n_iterations = args.iters;
  run.sampler.n_warmup = args.warmup;
  run.sampler.target_accept = args.target_accept;
  run.sampler.max_tree_depth = args.max_depth;
  run.sampler.seed = derive_seed(args.seed, "sample");

  if (args.strategy == "base") {
    run.strategy = BaseStrategy{};
  } else if (args.strategy == "seedloop") {
    if (args.seeds < 1) throw UsageError("--seeds must be >= 1");
    run.strategy = SeedLoopStrategy{args.seeds};
  } else if (args.strategy == "fixed") {
    if (args.fix_blocks.empty())
      throw UsageError("--strategy fixed needs --fix <blocks>");
    run.strategy = FixedSubsetStrategy{mask_from_blocks(args.fix_blocks, run.start)};
  } else if (args.strategy == "bounded") {
    BoxBounds box = BoxBounds::sampler_default(args.components);
    if (args.bounds_override) box = *args.bounds_override;
    else if (!args.bounds_file.empty())
      box = load_json_file(args.bounds_file).get<BoxBounds>();
    run.bounds_used = box;
    run.strategy = BoundedStrategy{box};
  } else {
    throw UsageError("unknown strategy '" + args.strategy + "'");
  }
  return run;
}

struct SampleCmd {
  SampleArgs args;

  void attach(CLI::App& app) { args.attach(app); }

  int run(const ConfigLayer& cfg) {
    args.merge(cfg);
    PreparedRun r = prepare_run(args);
    const Chain chain = run_strategy(r.strategy, r.start, r.data, r.spec,
                                     r.sampler, args.threads);
    const fs::path dir = ensure_out_dir(args.out);
    write_chain_csv(chain, (dir / "chain.csv").string());
    write_json_file(diagnostics_json(chain), dir / "diagnostics.json");
    write_json_file(args.manifest("sample", r.start, r.bounds_used),
                    dir / "manifest.json");
    std::cout << "chain.csv: " << chain.size() << " draws, min nll "
              << fmt6(chain.min_nll()) << ", " << chain.total_divergences()
              << " divergences\n";
    return kExitOk;
  }
};

struct ExploreCmd {
  SampleArgs args;
  std::string chain_file;
  int max_iterations = 500;
  double gtol = 1e-8;
  CLI::Option *chain_opt = nullptr, *iter_opt = nullptr, *gtol_opt = nullptr;

  void attach(CLI::App& app) {
    args.attach(app);
    chain_opt = app.add_option("--chain", chain_file,
                               "restart from an existing chain CSV instead of sampling");
    iter_opt = app.add_option("--max-iter", max_iterations, "optimizer iteration cap");
    gtol_opt = app.add_option("--gtol", gtol, "optimizer gradient tolerance");
  }

  int run(const ConfigLayer& cfg) {
    cfg.fill(chain_opt, "chain", chain_file);
    cfg.fill(iter_opt, "max_iterations", max_iterations);
    cfg.fill(gtol_opt, "gradient_tolerance", gtol);
    args.merge(cfg);

    PreparedRun r = prepare_run(args);
    const fs::path dir = ensure_out_dir(args.out);

    Chain chain;
    if (!chain_file.empty()) {
      if (!fs::exists(chain_file)) throw UsageError("chain file not found: " + chain_file);
      chain = read_chain_csv(chain_file);
    } else {
      chain = run_strategy(r.strategy, r.start, r.data, r.spec, r.sampler,
                           args.threads);
      write_chain_csv(chain, (dir / "chain.csv").string());
    }

    OptimConfig ocfg;
    ocfg.max_iterations = max_iterations;
    ocfg.gradient_tolerance = gtol;
    FixedMask mask;  // fixed-subset chains are refit in their own subspace
    if (const auto* fs_strat = std::get_if<FixedSubsetStrategy>(&r.strategy))
      mask = fs_strat->mask;
    const ExplorationReport report =
        restart_all(chain, r.data, r.spec, ocfg, args.threads, mask);

    json jreport = report;
    jreport["strategy"] = args.strategy;
    write_json_file(jreport, dir / "report.json");
    write_restarts_csv(report, args.components, (dir / "restarts.csv").string());
    json manifest = args.manifest("explore", r.start, r.bounds_used);
    manifest["chain"] = chain_file;
    manifest["max_iterations"] = max_iterations;
    manifest["gradient_tolerance"] = gtol;
    write_json_file(manifest, dir / "manifest.json");

    std::cout << "report.json: " << report.n_converged << " converged, "
              << report.n_failed << " failed, " << report.optima_clusters.size()
              << " optima, best nll " << fmt6(report.min_nll_by_strategy) << "\n";
    return report.n_converged > 0 ? kExitOk : kExitNumerical;
  }
};

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportCmd {
  std::string run_dir, out;
  CLI::Option *run_opt = nullptr, *out_opt = nullptr;

  void attach(CLI::App& app) {
    run_opt = app.add_option("--run", run_dir, "directory with run artifacts");
    out_opt = app.add_option("--out", out, "output directory (default: run dir)");
  }

  int run(const ConfigLayer& cfg) {
    cfg.fill(run_opt, "run", run_dir);
    cfg.fill(out_opt, "out", out);
    if (run_dir.empty()) throw UsageError("--run is required");
    if (!fs::is_directory(run_dir)) throw UsageError("not a directory: " + run_dir);
    const fs::path src(run_dir);
    const fs::path dir = ensure_out_dir(out.empty() ? run_dir : out);

    int artifacts = 0;

    // global quantities table
    std::vector<std::pair<std::string, GlobalQuantities>> global_rows;
    if (fs::exists(src / "truth.json")) {
      global_rows.emplace_back("truth",
                               global_quantities(load_json_file((src / "truth.json").string())
                                                     .get<NaturalParams>()));
    } else if (fs::exists(src / "manifest.json")) {
      const json manifest = load_json_file((src / "manifest.json").string());
      if (manifest.contains("truth"))
        global_rows.emplace_back(
            "truth", global_quantities(manifest["truth"].get<NaturalParams>()));
    }

    // model selection table from fit_m*.json
    std::vector<json> fits;
    for (int m = 1; m <= 3; ++m) {
      const fs::path f = src / ("fit_m" + std::to_string(m) + ".json");
      if (fs::exists(f)) fits.push_back(load_json_file(f.string()));
    }
    for (const json& fit : fits) {
      if (!fit["result"]["params_natural"].is_null())
        global_rows.emplace_back(
            "fit_m" + std::to_string(fit["components"].get<int>()),
            global_quantities(fit["result"]["params_natural"].get<NaturalParams>()));
    }

    std::optional<Chain> chain;
    if (fs::exists(src / "chain.csv")) {
      chain = read_chain_csv((src / "chain.csv").string());
      global_rows.emplace_back("chain_per_draw", global_quantities_chain(*chain));
    }

    if (!global_rows.empty()) {
      std::ofstream g(dir / "global.csv");
      g << "source,mu,sigma,rho_mz,rho_dz\n";
      for (const auto& [name, q] : global_rows)
        g << name << ',' << fmt6(q.mu_g) << ',' << fmt6(q.sigma_g) << ','
          << fmt6(q.rho_mz_g) << ',' << fmt6(q.rho_dz_g) << '\n';
      ++artifacts;
    }

    if (!fits.empty()) {
      std::ofstream ms(dir / "model_selection.csv");
      ms << "components,nll,k,aic,bic,converged\n";
      for (const json& fit : fits)
        ms << fit["components"].get<int>() << ','
           << fmt6(fit["result"]["nll"].get<double>()) << ',' << fit["k"].get<int>()
           << ',' << fmt6(fit["aic"].get<double>()) << ','
           << fmt6(fit["bic"].get<double>()) << ','
           << (fit["result"]["converged"].get<bool>() ? 1 : 0) << '\n';
      ++artifacts;
    }

    if (chain) {
      std::ofstream s(dir / "summary.csv");
      s << "name,mean,sd\n";
      for (const ParamSummary& p : summarize(*chain))
        s << p.name << ',' << fmt6(p.mean) << ',' << fmt6(p.sd) << '\n';
      ++artifacts;
    }

    // minimum-NLL comparison across whatever sources exist
    std::vector<std::pair<std::string, double>> min_rows;
    for (const json& fit : fits)
      min_rows.emplace_back("fit_m" + std::to_string(fit["components"].get<int>()),
                            fit["result"]["nll"].get<double>());
    if (chain) min_rows.emplace_back("chain", chain->min_nll());
    if (fs::exists(src / "report.json")) {
      const json rep = load_json_file((src / "report.json").string());
      min_rows.emplace_back("restarts", rep["min_nll_by_strategy"].get<double>());
    }
    if (!min_rows.empty()) {
      std::ofstream mn(dir / "min_nll.csv");
      mn << "source,min_nll\n";
      for (const auto& [name, v] : min_rows) mn << name << ',' << fmt6(v) << '\n';
      ++artifacts;
    }

    if (artifacts == 0)
      throw UsageError("no run artifacts found in " + run_dir);
    std::cout << "wrote " << artifacts << " report tables to " << dir.string() << "\n";
    return kExitOk;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian-mixture likelihood probing via NUTS and optimizer restarts"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "JSON config file (flags override it)")
      ->expected(1);

  SimulateCmd simulate_cmd;
  FitCmd fit_cmd;
  SampleCmd sample_cmd;
  ExploreCmd explore_cmd;
  ReportCmd report_cmd;

  CLI::App* sim = app.add_subcommand("simulate", "simulate a twin dataset");
  simulate_cmd.attach(*sim);
  CLI::App* fit = app.add_subcommand("fit", "minimize the NLL from a start point");
  fit_cmd.attach(*fit);
  CLI::App* smp = app.add_subcommand("sample", "run a NUTS sampling strategy");
  sample_cmd.attach(*smp);
  CLI::App* exp = app.add_subcommand("explore", "sample, then restart the optimizer from every draw");
  explore_cmd.attach(*exp);
  CLI::App* rep = app.add_subcommand("report", "consolidate run artifacts into tables");
  report_cmd.attach(*rep);

  // subcommands accept --config too (global first simplifies scripting)
  for (CLI::App* sub : {sim, fit, smp, exp, rep})
    sub->add_option("--config", config_path, "JSON config file")->expected(1);

  try {
    app.parse(argc, argv);
    const ConfigLayer cfg(config_path.empty() ? json::object()
                                              : load_json_file(config_path));
    if (sim->parsed()) return simulate_cmd.run(cfg);
    if (fit->parsed()) return fit_cmd.run(cfg);
    if (smp->parsed()) return sample_cmd.run(cfg);
    if (exp->parsed()) return explore_cmd.run(cfg);
    if (rep->parsed()) return report_cmd.run(cfg);
    return kExitUsage;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
}
