// lssbm: simulate, select K, fit, post-process, predict and report.
//
// Every command writes into a run directory (--out) and records a manifest
// with the resolved configuration, seeds, config hash and wall time. A
// config.ini written beside it reproduces the run via --config.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lssbm/lssbm.hpp"

namespace fs = std::filesystem;
using namespace lssbm;

namespace {

struct Common {
  std::string out = "run";
  std::uint64_t seed = 1;
  int threads = 1;
};

struct GraphInput {
  std::string path;
  std::string format = "edgelist";
  bool drop_isolated = false;

  Graph load() const {
    LoadOptions opts;
    opts.format = format == "dense" ? GraphFormat::DenseMatrix : GraphFormat::EdgeList;
    opts.drop_isolated = drop_isolated;
    return load_graph(path, opts);
  }
  Json to_json() const { return {{"path", path}, {"format", format}, {"drop_isolated", drop_isolated}}; }
};

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

/// Output directory of one command invocation.
class RunDir {
 public:
  RunDir(std::string command, const Common& common, const CLI::App& app)
      : command_(std::move(command)), dir_(common.out), start_(std::chrono::steady_clock::now()) {
    fs::create_directories(dir_);
    manifest_["command"] = command_;
    manifest_["seed"] = common.seed;
    manifest_["threads"] = common.threads;
    // unset paths are left out so the replayed run does not check empty file names
    std::istringstream all(app.config_to_str(true, false));
    config_text_ = "[" + app.get_name() + "]\n";
    for (std::string line; std::getline(all, line);)
      if (line.size() < 3 || line.compare(line.size() - 3, 3, "=\"\"") != 0) config_text_ += line + "\n";
  }

  fs::path path(const std::string& name) {
    outputs_.push_back(name);
    return dir_ / name;
  }

  std::ofstream open(const std::string& name) {
    std::ofstream out(path(name));
    if (!out) throw Error("cannot write " + (dir_ / name).string());
    return out;
  }

  void write_json(const std::string& name, const Json& j) { open(name) << j.dump(2) << '\n'; }

  Json& manifest() { return manifest_; }

  void finish(const Json& config) {
    manifest_["config"] = config;
    manifest_["config_hash"] = hex(fnv1a(config.dump()));
    const auto wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    manifest_["wall_time_seconds"] = wall;
    std::ofstream cfg(dir_ / ("config_" + command_ + ".ini"));
    cfg << config_text_;
    manifest_["config_file"] = "config_" + command_ + ".ini";
    manifest_["outputs"] = outputs_;
    std::ofstream mf(dir_ / ("manifest_" + command_ + ".json"));
    mf << manifest_.dump(2) << '\n';
  }

  const fs::path& dir() const { return dir_; }

 private:
  std::string command_;
  fs::path dir_;
  std::chrono::steady_clock::time_point start_;
  Json manifest_;
  std::vector<std::string> outputs_;
  std::string config_text_;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-o,--out", c.out, "Run directory")->capture_default_str();
  sub->add_option("--seed", c.seed, "Master seed")->capture_default_str();
  sub->add_option("--threads", c.threads, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
}

void add_graph(CLI::App* sub, GraphInput& g, bool required = true) {
  auto* opt = sub->add_option("-g,--graph", g.path, "Graph file")->check(CLI::ExistingFile);
  if (required) opt->required();
  sub->add_option("--format", g.format, "Graph file format")
      ->check(CLI::IsMember({"edgelist", "dense"}))
      ->capture_default_str();
  sub->add_flag("--drop-isolated", g.drop_isolated, "Drop zero-degree nodes");
}

Json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

std::vector<DyadMask> read_masks(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path);
  return parse_masks_csv(in);
}

/// Held-out dyads of one fold (or all folds when fold < 0).
DyadMask select_mask(const std::string& path, int fold, std::size_t n_nodes) {
  DyadMask out;
  bool found = false;
  for (const auto& m : read_masks(path)) {
    if (fold >= 0 && m.fold_id != fold) continue;
    found = true;
    out.held_out.insert(out.held_out.end(), m.held_out.begin(), m.held_out.end());
  }
  if (!found) throw ValidationError("mask file has no fold " + std::to_string(fold));
  std::sort(out.held_out.begin(), out.held_out.end());
  out.held_out.erase(std::unique(out.held_out.begin(), out.held_out.end()), out.held_out.end());
  for (auto d : out.held_out)
    if (static_cast<std::size_t>(d.j) >= n_nodes) throw ValidationError("mask refers to nodes outside the graph");
  out.fold_id = fold;
  return out;
}

std::int64_t node_id(const Graph& g, std::size_t i) {
  const auto& ids = g.original_ids();
  return ids.empty() ? static_cast<std::int64_t>(i + 1) : ids[i];
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  Common common;
  int nodes_per_block = 60;
  std::vector<double> beta{0.6, 2.0, 2.1, 4.0, 4.0};
  std::vector<double> sigma{0.4, 0.8, 1.2, 1.6, 2.0};
  double tau = 0.3;
  int dim = 2;
  double holdout = 0.0;
};

void cmd_simulate(const SimulateArgs& a, const CLI::App& app) {
  if (a.beta.size() != a.sigma.size()) throw ValidationError("--beta and --sigma need the same number of blocks");
  for (double s : a.sigma)
    if (s < 0) throw ValidationError("--sigma entries must be non-negative");
  if (!(a.tau >= 0 && a.tau <= 1)) throw ValidationError("--tau must be in [0,1]");
  if (!(a.holdout >= 0 && a.holdout < 1)) throw ValidationError("--holdout must be in [0,1)");
  RunDir run("simulate", a.common, app);
  SimulationStudySetup setup = simulation_study_setup(a.nodes_per_block, a.beta, a.sigma, a.tau);
  setup.dim = a.dim;
  const SimulatedNetwork sim = simulate_study_network(setup, a.common.seed);
  {
    auto out = run.open("graph.txt");
    write_edgelist(out, sim.graph);
  }
  run.write_json("truth.json", truth_to_json(sim));
  {
    auto out = run.open("gamma.csv");
    write_assignment_csv(out, sim.gamma);
  }
  {
    auto out = run.open("positions.csv");
    out << std::setprecision(17) << "node,block";
    for (int d = 0; d < a.dim; ++d) out << ",z" << d + 1;
    out << '\n';
    for (Eigen::Index i = 0; i < sim.z.rows(); ++i) {
      out << i + 1 << ',' << sim.gamma[static_cast<std::size_t>(i)] + 1;
      for (int d = 0; d < a.dim; ++d) out << ',' << sim.z(i, d);
      out << '\n';
    }
  }
  {
    auto out = run.open("eta.csv");
    out << std::setprecision(17) << "block,beta,log_sigma,sigma\n";
    for (std::size_t k = 0; k < sim.eta.size(); ++k)
      out << k + 1 << ',' << sim.eta[k].beta << ',' << sim.eta[k].log_sigma << ',' << sim.eta[k].sigma() << '\n';
  }
  {
    auto out = run.open("tau.csv");
    out << std::setprecision(17);
    for (Eigen::Index r = 0; r < sim.tau.tau.rows(); ++r) {
      for (Eigen::Index c = 0; c < sim.tau.tau.cols(); ++c) out << (c ? "," : "") << sim.tau.tau(r, c);
      out << '\n';
    }
  }
  if (a.holdout > 0) {
    DyadMask mask = make_holdout(sim.graph.n_nodes(), a.holdout, substream_seed(a.common.seed, "holdout"));
    auto out = run.open("mask.csv");
    write_masks_csv(out, {mask});
  }
  run.manifest()["seeds"] = {{"simulate", a.common.seed}, {"holdout", substream_seed(a.common.seed, "holdout")}};
  run.finish({{"nodes_per_block", a.nodes_per_block},
              {"beta", a.beta},
              {"sigma", a.sigma},
              {"tau", a.tau},
              {"dim", a.dim},
              {"holdout", a.holdout}});
  std::cout << "simulated " << sim.graph.n_nodes() << " nodes, " << sim.graph.n_edges() << " edges, "
            << sim.gamma.n_blocks << " blocks -> " << run.dir().string() << '\n';
}

// ---------------------------------------------------------------------------
// select-k

struct SelectArgs {
  Common common;
  GraphInput graph;
  CvConfig cv;
};

void cmd_select_k(SelectArgs a, const CLI::App& app) {
  const Graph g = a.graph.load();
  a.cv.seed = a.common.seed;
  a.cv.threads = a.common.threads;
  a.cv.validate(g.n_nodes());
  if (a.cv.n_repeats < 2) throw ValidationError("selection needs at least two repeats for the confidence intervals");
  RunDir run("select-k", a.common, app);
  const CvResult r = cross_validate(g, a.cv);
  {
    auto out = run.open("cv_folds.csv");
    CvResult folds_only = r;
    folds_only.repeats.clear();
    write_cv_records_csv(out, folds_only);
  }
  {
    auto out = run.open("cv_repeats.csv");
    CvResult repeats_only = r;
    repeats_only.folds.clear();
    write_cv_records_csv(out, repeats_only);
  }
  {
    auto out = run.open("cv_summary.csv");
    write_cv_summary_csv(out, r);
  }
  const bool boundary = r.selected_k == r.ks.back();
  if (boundary) warn("selected K is the largest value on the grid; consider extending it");
  Json sel;
  sel["selected_k"] = r.selected_k;
  for (Metric m : {Metric::Auc, Metric::Mse, Metric::Mpi})
  {
    const auto& pick = r.selected[static_cast<std::size_t>(m)];
    sel["selected_by"][metric_name(m)] = pick ? Json(*pick) : Json(nullptr);
  }
  sel["k_grid"] = r.ks;
  sel["boundary"] = boundary;
  run.write_json("selection.json", sel);
  run.manifest()["seeds"] = {{"master", a.cv.seed}};
  run.finish({{"graph", a.graph.to_json()},
              {"n_folds", a.cv.n_folds},
              {"n_repeats", a.cv.n_repeats},
              {"k_grid", r.ks},
              {"imputation_tol", a.cv.imputation_tol},
              {"max_em_iters", a.cv.max_em_iters},
              {"kmeans_restarts", a.cv.kmeans_restarts}});
  auto pick = [&](int m) { return r.selected[m] ? std::to_string(*r.selected[m]) : std::string("NA"); };
  std::cout << "selected K = " << r.selected_k << " (AUC " << pick(0) << ", MSE " << pick(1) << ", MPI " << pick(2) << ")"
            << (boundary ? " [boundary]" : "") << '\n';
}

// ---------------------------------------------------------------------------
// fit / postprocess

struct FitArgs {
  Common common;
  GraphInput graph;
  std::string engine = "mcmc";
  int k = 0;
  std::string selection;
  std::string mask;
  int fold = -1;
  // hyperparameters
  double a0 = 0.0;  // 0: from the observed density
  double b0 = 1.0;
  std::vector<double> m0{0.0, 0.0};
  double s0 = 1.0;
  std::vector<double> psi0{1.0, 0.0, 1.0};
  double nu0 = 4.0;
  double upsilon0 = 1.0;
  int dim = 2;
  // sampler
  int iter = 20000;
  int thin = 20;
  double burn_in = 0.25;
  int chains = 4;
  double epsilon = 0.1;
  double r_z = 0.5;
  std::vector<double> a_alpha{0.05, 0.05};
  int extra_z_steps = 5;
  bool sbm = false;
  int mds_max_iter = 300;
  double mds_tol = 1e-7;
  // two-stage
  std::string cluster = "spectral";
  int vb_max_iter = 2000;
  double vb_tol = 1e-9;
  double vb_a0 = 1.0, vb_b0 = 1.0, vb_m0 = 0.0, vb_t0 = 0.01;
  double tau_a0 = 1.0, tau_b0 = 1.0;
};

Hyperparams make_hyper(const FitArgs& a, const Graph& observed) {
  Hyperparams h;
  if (a.a0 > 0) {
    h.a0 = a.a0;
    h.b0 = a.b0;
  } else {
    std::tie(h.a0, h.b0) = default_beta_prior(observed.density());
    h.b0 = a.b0;
  }
  if (a.m0.size() != 2) throw ValidationError("--m0 takes two values");
  if (a.psi0.size() != 3) throw ValidationError("--psi0 takes three values (11, 12, 22)");
  h.m0 = {a.m0[0], a.m0[1]};
  h.s0 = a.s0;
  h.psi0 << a.psi0[0], a.psi0[1], a.psi0[1], a.psi0[2];
  h.nu0 = a.nu0;
  h.upsilon0 = a.upsilon0;
  h.dim = a.dim;
  h.validate();
  return h;
}

Json hyper_json(const Hyperparams& h) {
  return {{"a0", h.a0},
          {"b0", h.b0},
          {"m0", {h.m0[0], h.m0[1]}},
          {"s0", h.s0},
          {"psi0", {h.psi0(0, 0), h.psi0(0, 1), h.psi0(1, 1)}},
          {"nu0", h.nu0},
          {"upsilon0", h.upsilon0},
          {"dim", h.dim}};
}

void write_postprocess(RunDir& run, const PostprocessResult& pp, const ChainSet& cs, const Graph* g) {
  ChainSet aligned;
  aligned.n_nodes = cs.n_nodes;
  aligned.n_blocks = cs.n_blocks;
  aligned.dim = cs.dim;
  aligned.latent_positions = cs.latent_positions;
  for (std::size_t c = 0; c < pp.aligned.size(); ++c) {
    PosteriorChain pc;
    pc.samples = pp.aligned[c];
    pc.burn_in = 0;
    pc.seed = cs.chains[c].seed;
    pc.acceptance = cs.chains[c].acceptance;
    aligned.chains.push_back(std::move(pc));
  }
  save_chains(run.path("aligned.tsv").string(), run.path("aligned.json").string(), aligned);
  auto id = [&](std::size_t i) { return g ? node_id(*g, i) : static_cast<std::int64_t>(i + 1); };
  {
    auto out = run.open("membership.csv");
    out << std::setprecision(17) << "node,mode";
    for (int k = 0; k < cs.n_blocks; ++k) out << ",p" << k + 1;
    out << '\n';
    for (std::size_t i = 0; i < cs.n_nodes; ++i) {
      out << id(i) << ',' << pp.membership.mode[i] + 1;
      for (int k = 0; k < cs.n_blocks; ++k) out << ',' << pp.membership.probability(static_cast<Eigen::Index>(i), k);
      out << '\n';
    }
  }
  {
    auto out = run.open("mean_positions.csv");
    out << std::setprecision(17) << "node,block";
    for (int d = 0; d < cs.dim; ++d) out << ",z" << d + 1;
    out << '\n';
    for (std::size_t i = 0; i < cs.n_nodes; ++i) {
      out << id(i) << ',' << pp.membership.mode[i] + 1;
      for (int d = 0; d < cs.dim; ++d) out << ',' << pp.mean_position(static_cast<Eigen::Index>(i), d);
      out << '\n';
    }
  }
  {
    auto out = run.open("reference_coords.csv");
    out << std::setprecision(17) << "block,node";
    for (int d = 0; d < cs.dim; ++d) out << ",z" << d + 1;
    out << '\n';
    for (std::size_t k = 0; k < pp.distances.size(); ++k)
      for (std::size_t r = 0; r < pp.distances[k].nodes.size(); ++r) {
        out << k + 1 << ',' << id(static_cast<std::size_t>(pp.distances[k].nodes[r]));
        for (int d = 0; d < cs.dim; ++d) out << ',' << pp.reference_coords[k](static_cast<Eigen::Index>(r), d);
        out << '\n';
      }
  }
  {
    auto out = run.open("diagnostics.csv");
    out << std::setprecision(6) << "parameter,rhat\n";
    for (const auto& d : pp.diagnostics) {
      out << d.name << ',';
      if (d.rhat) out << *d.rhat;
      else out << "NA";
      out << '\n';
    }
  }
}

void cmd_fit(const FitArgs& a, const CLI::App& app) {
  const Graph g = a.graph.load();
  int k = a.k;
  if (k <= 0 && !a.selection.empty()) {
    std::ifstream in(a.selection);
    if (!in) throw Error("cannot read " + a.selection);
    k = Json::parse(in).at("selected_k").get<int>();
  }
  const bool label_prop = a.engine == "twostage" && a.cluster == "label-propagation";
  if (k <= 0 && !label_prop) throw ValidationError("give --k or a --selection file from select-k");
  std::optional<DyadMask> mask;
  if (!a.mask.empty()) mask = select_mask(a.mask, a.fold, g.n_nodes());
  const DyadMask* mask_ptr = mask ? &*mask : nullptr;

  RunDir run("fit", a.common, app);
  Json config{{"graph", a.graph.to_json()}, {"engine", a.engine}, {"k", k}, {"mask", a.mask}, {"fold", a.fold}};
  if (a.engine == "mcmc") {
    std::vector<Dyad> kept;
    for (auto d : g.edges())
      if (!mask_ptr || !mask_ptr->contains(d)) kept.push_back(d);
    const Hyperparams hyper = make_hyper(a, Graph(g.n_nodes(), kept));
    SamplerConfig sc;
    sc.n_iter = a.iter;
    sc.thin = a.thin;
    sc.burn_in_fraction = a.burn_in;
    sc.n_chains = a.chains;
    sc.epsilon = a.epsilon;
    sc.r_z = a.r_z;
    if (a.a_alpha.size() != 2) throw ValidationError("--a-alpha takes two values");
    sc.a_alpha = Eigen::Vector2d(a.a_alpha[0], a.a_alpha[1]).asDiagonal();
    sc.n_extra_z_steps = a.extra_z_steps;
    sc.seed = a.common.seed;
    sc.threads = a.common.threads;
    sc.latent_positions = !a.sbm;
    sc.validate();
    ChainSet cs;
    cs.n_nodes = g.n_nodes();
    cs.n_blocks = k;
    cs.dim = hyper.dim;
    cs.latent_positions = sc.latent_positions;
    cs.chains = run_chains(g, k, hyper, sc, mask_ptr);
    save_chains(run.path("chains.tsv").string(), run.path("chains.json").string(), cs);
    const std::uint64_t pp_seed = substream_seed(a.common.seed, "postprocess");
    const PostprocessResult pp = postprocess_chains(cs.chains, pp_seed, a.mds_max_iter, a.mds_tol);
    write_postprocess(run, pp, cs, &g);
    Json seeds{{"master", a.common.seed}, {"postprocess", pp_seed}};
    for (std::size_t c = 0; c < cs.chains.size(); ++c) seeds["chains"].push_back(cs.chains[c].seed);
    run.manifest()["seeds"] = seeds;
    config["hyperparameters"] = hyper_json(hyper);
    config["sampler"] = {{"n_iter", sc.n_iter},
                         {"thin", sc.thin},
                         {"burn_in_fraction", sc.burn_in_fraction},
                         {"n_chains", sc.n_chains},
                         {"epsilon", sc.epsilon},
                         {"r_z", sc.r_z},
                         {"a_alpha", a.a_alpha},
                         {"n_extra_z_steps", sc.n_extra_z_steps},
                         {"latent_positions", sc.latent_positions}};
    config["postprocess"] = {{"mds_max_iter", a.mds_max_iter}, {"mds_tol", a.mds_tol}};
    run.finish(config);
    std::cout << "fitted " << cs.chains.size() << " chains, K = " << k << ", acceptance (membership/position/eta):";
    for (const auto& c : cs.chains)
      std::cout << ' ' << std::setprecision(3) << c.acceptance.membership << '/' << c.acceptance.position << '/'
                << c.acceptance.eta;
    std::cout << '\n';
    return;
  }
  TwoStageConfig tc;
  tc.method = label_prop ? ClusterMethod::LabelPropagation : ClusterMethod::Spectral;
  tc.k = k;
  tc.priors = {a.vb_a0, a.vb_b0, a.vb_m0, a.vb_t0};
  tc.tau_a0 = a.tau_a0;
  tc.tau_b0 = a.tau_b0;
  tc.dim = a.dim;
  tc.seed = a.common.seed;
  tc.threads = a.common.threads;
  tc.lbfgs.max_iter = a.vb_max_iter;
  tc.lbfgs.tol = a.vb_tol;
  const TwoStageResult r = fit_twostage(g, tc, mask_ptr);
  run.write_json("twostage.json", twostage_to_json(r));
  {
    auto out = run.open("blocks.csv");
    write_twostage_summary_csv(out, r);
  }
  {
    auto out = run.open("nodes.csv");
    write_twostage_nodes_csv(out, r, g);
  }
  Json reg;
  if (const auto fit = density_size_regression(r.summary))
    reg = {{"slope", fit->slope}, {"intercept", fit->intercept}, {"n_blocks", fit->n}, {"scale", "log10"}};
  run.write_json("density_size.json", reg);
  run.manifest()["seeds"] = {{"master", a.common.seed}, {"cluster", substream_seed(a.common.seed, "cluster")}};
  config["twostage"] = {{"cluster", a.cluster},
                        {"dim", a.dim},
                        {"vb_priors", {{"a0", a.vb_a0}, {"b0", a.vb_b0}, {"m0", a.vb_m0}, {"t0", a.vb_t0}}},
                        {"tau_prior", {{"a0", a.tau_a0}, {"b0", a.tau_b0}}},
                        {"lbfgs", {{"max_iter", a.vb_max_iter}, {"tol", a.vb_tol}}}};
  run.finish(config);
  std::size_t flagged = 0;
  for (const auto& f : r.fits) flagged += f.flagged ? 1 : 0;
  std::cout << "two-stage fit: " << r.gamma.n_blocks << " blocks on " << g.n_nodes() << " nodes"
            << (flagged ? ", " + std::to_string(flagged) + " blocks flagged" : std::string()) << '\n';
}

ChainSet load_fit_chains(const fs::path& dir, const std::string& stem) {
  return load_chains((dir / (stem + ".tsv")).string(), (dir / (stem + ".json")).string());
}

struct PostprocessArgs {
  Common common;
  std::string fit;
  std::string graph;
  int mds_max_iter = 300;
  double mds_tol = 1e-7;
};

void cmd_postprocess(const PostprocessArgs& a, const CLI::App& app) {
  const ChainSet cs = load_fit_chains(a.fit, "chains");
  std::optional<Graph> g;
  if (!a.graph.empty()) g = load_graph(a.graph);
  RunDir run("postprocess", a.common, app);
  const std::uint64_t seed = substream_seed(a.common.seed, "postprocess");
  const PostprocessResult pp = postprocess_chains(cs.chains, seed, a.mds_max_iter, a.mds_tol);
  write_postprocess(run, pp, cs, g ? &*g : nullptr);
  run.manifest()["seeds"] = {{"master", a.common.seed}, {"postprocess", seed}};
  run.finish({{"fit", a.fit}, {"mds_max_iter", a.mds_max_iter}, {"mds_tol", a.mds_tol}});
  std::cout << "post-processed " << cs.chains.size() << " chains\n";
}

// ---------------------------------------------------------------------------
// predict

struct PredictArgs {
  Common common;
  GraphInput graph;
  std::string fit;
  std::string mask;
  int fold = -1;
};

Json category_json(const CategoryMetrics& c) {
  Json j{{"n", c.n}, {"n_positive", c.n_positive}};
  j["auprc"] = c.auprc ? Json(*c.auprc) : Json(nullptr);
  j["auc"] = c.auc ? Json(*c.auc) : Json(nullptr);
  j["missing"] = !c.auprc.has_value();
  return j;
}

void cmd_predict(const PredictArgs& a, const CLI::App& app) {
  const Graph g = a.graph.load();
  const DyadMask mask = select_mask(a.mask, a.fold, g.n_nodes());
  const fs::path fit(a.fit);
  std::vector<double> prob;
  std::vector<int> modal;
  std::string engine;
  if (fs::exists(fit / "twostage.json")) {
    engine = "twostage";
    std::ifstream in(fit / "twostage.json");
    const TwoStageResult r = twostage_from_json(Json::parse(in));
    if (r.gamma.size() != g.n_nodes()) throw ValidationError("fit and graph have different node counts");
    const auto local = r.local_index();
    for (auto d : mask.held_out) prob.push_back(r.predict(d.i, d.j, local));
    modal = r.gamma.labels;
  } else {
    engine = "mcmc";
    ChainSet cs = fs::exists(fit / "aligned.tsv") ? load_fit_chains(fit, "aligned") : load_fit_chains(fit, "chains");
    if (cs.n_nodes != g.n_nodes()) throw ValidationError("fit and graph have different node counts");
    std::vector<ChainState> pooled;
    if (fs::exists(fit / "aligned.tsv")) {
      for (const auto& c : cs.chains) pooled.insert(pooled.end(), c.samples.begin(), c.samples.end());
    } else {
      const auto pp = postprocess_chains(cs.chains, substream_seed(a.common.seed, "postprocess"));
      pooled = pp.pooled();
    }
    prob = posterior_predictive(pooled, mask.held_out, cs.latent_positions);
    modal = membership_posterior(pooled, cs.n_blocks, cs.n_nodes).mode;
  }
  RunDir run("predict", a.common, app);
  const PredictionReport rep = prediction_report(g, mask, prob, modal);
  {
    auto out = run.open("predictions.csv");
    write_predictions_csv(out, rep, g);
  }
  run.write_json("prediction_metrics.json", {{"engine", engine},
                                            {"all", category_json(rep.all)},
                                            {"within_block", category_json(rep.within_block)},
                                            {"between_block", category_json(rep.between_block)}});
  run.finish({{"graph", a.graph.to_json()}, {"fit", a.fit}, {"mask", a.mask}, {"fold", a.fold}});
  auto show = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string("NA"); };
  std::cout << "AUPRC all " << show(rep.all.auprc) << ", within " << show(rep.within_block.auprc) << ", between "
            << show(rep.between_block.auprc) << '\n';
}

// ---------------------------------------------------------------------------
// report

struct ReportArgs {
  Common common;
  std::string fit;
  GraphInput graph;
  double mass = 0.95;
  double display_threshold = 0.3;
};

void write_block_ordered_adjacency(RunDir& run, const Graph& g, const std::vector<int>& block) {
  std::vector<std::size_t> order(g.n_nodes());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return block[x] < block[y]; });
  if (g.n_nodes() > Graph::kDenseLimit) {
    // too large for a dense table: edges in block-ordered positions
    std::vector<std::size_t> pos(g.n_nodes());
    for (std::size_t r = 0; r < order.size(); ++r) pos[order[r]] = r;
    auto out = run.open("adjacency_block_ordered_edges.csv");
    out << "row,col\n";
    for (auto d : g.edges())
      out << pos[static_cast<std::size_t>(d.i)] + 1 << ',' << pos[static_cast<std::size_t>(d.j)] + 1 << '\n';
    return;
  }
  auto out = run.open("adjacency_block_ordered.csv");
  out << "node,block";
  for (std::size_t c : order) out << ',' << node_id(g, c);
  out << '\n';
  for (std::size_t r : order) {
    out << node_id(g, r) << ',' << block[r] + 1;
    for (std::size_t c : order) out << ',' << (g.has_edge(static_cast<NodeId>(r), static_cast<NodeId>(c)) ? 1 : 0);
    out << '\n';
  }
}

void write_tau_table(RunDir& run, const Eigen::MatrixXd& tau, const std::vector<double>& beta_hat) {
  auto out = run.open("tau_matrix.csv");
  out << std::setprecision(6) << "block";
  for (Eigen::Index c = 0; c < tau.cols(); ++c) out << ',' << c + 1;
  out << '\n';
  for (Eigen::Index r = 0; r < tau.rows(); ++r) {
    out << r + 1;
    for (Eigen::Index c = 0; c < tau.cols(); ++c)
      out << ',' << (r == c ? inv_logit(beta_hat[static_cast<std::size_t>(r)]) : tau(r, c));
    out << '\n';
  }
}

void cmd_report(const ReportArgs& a, const CLI::App& app) {
  const fs::path fit(a.fit);
  std::optional<Graph> g;
  if (!a.graph.path.empty()) g = a.graph.load();
  RunDir run("report", a.common, app);
  if (fs::exists(fit / "twostage.json")) {
    std::ifstream in(fit / "twostage.json");
    const TwoStageResult r = twostage_from_json(Json::parse(in));
    if (g && g->n_nodes() != r.gamma.size()) throw ValidationError("fit and graph have different node counts");
    if (g) write_block_ordered_adjacency(run, *g, r.gamma.labels);
    std::vector<double> beta_hat;
    {
      auto out = run.open("block_params.csv");
      out << std::setprecision(8) << "block,n_nodes,beta_mean,beta_sd,log_sigma_mean\n";
      for (std::size_t k = 0; k < r.fits.size(); ++k) {
        const auto& st = r.fits[k].state;
        beta_hat.push_back(st.m);
        out << k + 1 << ',' << r.members[k].size() << ',' << st.m << ',' << 1.0 / std::sqrt(st.t) << ','
            << -0.5 * (digamma(st.a) - std::log(st.b)) << '\n';
      }
    }
    {
      auto out = run.open("positions.csv");
      const auto local = r.local_index();
      const int dim = r.fits.empty() ? 0 : static_cast<int>(r.fits.front().state.ell.cols());
      out << std::setprecision(8) << "node,block";
      for (int d = 0; d < dim; ++d) out << ",z" << d + 1;
      out << ",inclusion_probability,display\n";
      for (std::size_t i = 0; i < r.gamma.size(); ++i) {
        const auto& st = r.fits[static_cast<std::size_t>(r.gamma[i])].state;
        out << (g ? node_id(*g, i) : static_cast<std::int64_t>(i + 1)) << ',' << r.gamma[i] + 1;
        for (int d = 0; d < dim; ++d) out << ',' << st.ell(static_cast<Eigen::Index>(local[i]), d);
        out << ",1,1\n";
      }
    }
    write_tau_table(run, r.tau_hat, beta_hat);
    run.finish({{"fit", a.fit}, {"graph", a.graph.to_json()}});
    std::cout << "report written to " << run.dir().string() << '\n';
    return;
  }
  if (!fs::exists(fit / "aligned.tsv")) throw Error("no post-processed samples in " + a.fit + "; run postprocess first");
  const ChainSet cs = load_fit_chains(fit, "aligned");
  std::vector<ChainState> pooled;
  for (const auto& c : cs.chains) pooled.insert(pooled.end(), c.samples.begin(), c.samples.end());
  if (pooled.empty()) throw Error("post-processed chains are empty");
  if (g && g->n_nodes() != cs.n_nodes) throw ValidationError("fit and graph have different node counts");
  const int k_blocks = cs.n_blocks;
  const MembershipPosterior mp = membership_posterior(pooled, k_blocks, cs.n_nodes);
  if (g) write_block_ordered_adjacency(run, *g, mp.mode);
  auto mean_hpd = [&](auto get) {
    std::vector<double> x;
    for (const auto& s : pooled) x.push_back(get(s));
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    const auto [lo, hi] = hpd_interval(x, a.mass);
    return std::array<double, 3>{mean, lo, hi};
  };
  std::vector<double> beta_hat;
  {
    auto out = run.open("block_params.csv");
    out << std::setprecision(8) << "block,beta_mean,beta_hpd_lower,beta_hpd_upper,log_sigma_mean,log_sigma_hpd_lower,log_sigma_hpd_upper\n";
    for (int k = 0; k < k_blocks; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      const auto b = mean_hpd([&](const ChainState& s) { return s.eta[kk].beta; });
      const auto l = mean_hpd([&](const ChainState& s) { return s.eta[kk].log_sigma; });
      beta_hat.push_back(b[0]);
      out << k + 1 << ',' << b[0] << ',' << b[1] << ',' << b[2] << ',' << l[0] << ',' << l[1] << ',' << l[2] << '\n';
    }
  }
  {
    auto out = run.open("global_params.csv");
    out << std::setprecision(8) << "parameter,mean,hpd_lower,hpd_upper\n";
    for (int p = 0; p < 2; ++p) {
      const auto v = mean_hpd([&](const ChainState& s) { return s.mu[p]; });
      out << "mu[" << p + 1 << "]," << v[0] << ',' << v[1] << ',' << v[2] << '\n';
    }
  }
  {
    // one row per (node, block) with positive inclusion probability; the
    // position averages the aligned draws where the node sat in that block
    auto out = run.open("positions.csv");
    out << std::setprecision(8) << "node,block";
    for (int d = 0; d < cs.dim; ++d) out << ",z" << d + 1;
    out << ",inclusion_probability,display\n";
    for (std::size_t i = 0; i < cs.n_nodes; ++i)
      for (int k = 0; k < k_blocks; ++k) {
        const double p = mp.probability(static_cast<Eigen::Index>(i), k);
        if (p <= 0) continue;
        Eigen::RowVectorXd z = Eigen::RowVectorXd::Zero(cs.dim);
        double hits = 0.0;
        for (const auto& s : pooled)
          if (s.gamma[i] == k) {
            z += s.z.row(static_cast<Eigen::Index>(i));
            hits += 1.0;
          }
        z /= hits;
        out << (g ? node_id(*g, i) : static_cast<std::int64_t>(i + 1)) << ',' << k + 1;
        for (int d = 0; d < cs.dim; ++d) out << ',' << z[d];
        out << ',' << p << ',' << (p >= a.display_threshold ? 1 : 0) << '\n';
      }
  }
  Eigen::MatrixXd tau = Eigen::MatrixXd::Zero(k_blocks, k_blocks);
  for (const auto& s : pooled) tau += s.tau.tau;
  tau /= static_cast<double>(pooled.size());
  write_tau_table(run, tau, beta_hat);
  run.finish({{"fit", a.fit}, {"graph", a.graph.to_json()}, {"mass", a.mass}, {"display_threshold", a.display_threshold}});
  std::cout << "report written to " << run.dir().string() << '\n';
}

// ---------------------------------------------------------------------------
// load-data

struct LoadArgs {
  Common common;
  std::string data_dir = "data/karnataka";
  int village = 59;
  std::string relation = "visit";
};

void cmd_load_data(const LoadArgs& a, const CLI::App& app) {
  const KarnatakaGraph kg = load_karnataka(a.data_dir, a.village, a.relation);
  RunDir run("load-data", a.common, app);
  {
    auto out = run.open("graph.txt");
    write_edgelist(out, kg.graph);
  }
  {
    auto out = run.open("nodes.csv");
    out << "node,original_id,village\n";
    for (std::size_t i = 0; i < kg.graph.n_nodes(); ++i)
      out << i + 1 << ',' << kg.graph.original_ids()[i] << ',' << kg.village[i] << '\n';
  }
  run.manifest()["n_nodes"] = kg.graph.n_nodes();
  run.manifest()["n_edges"] = kg.graph.n_edges();
  run.finish({{"data_dir", a.data_dir}, {"village", a.village}, {"relation", a.relation}});
  std::cout << "N = " << kg.graph.n_nodes() << " nodes, " << kg.graph.n_edges() << " edges ("
            << (a.village ? "village " + std::to_string(a.village) : std::string("all villages")) << ", " << a.relation
            << ")\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent space stochastic blockmodel toolkit"};
  app.set_config("--config", "", "Replay a config file written by an earlier run");
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Simulate a network from the model");
  add_common(c_sim, sim.common);
  c_sim->add_option("--nodes-per-block", sim.nodes_per_block)->check(CLI::PositiveNumber)->capture_default_str();
  c_sim->add_option("--beta", sim.beta, "Per-block intercepts")->capture_default_str();
  c_sim->add_option("--sigma", sim.sigma, "Per-block latent scales")->capture_default_str();
  c_sim->add_option("--tau", sim.tau, "Between-block tie probability")->capture_default_str();
  c_sim->add_option("--dim", sim.dim)->check(CLI::PositiveNumber)->capture_default_str();
  c_sim->add_option("--holdout", sim.holdout, "Fraction of dyads to hold out (writes mask.csv)")->capture_default_str();

  SelectArgs sel;
  auto* c_sel = app.add_subcommand("select-k", "Choose K by repeated cross-validation");
  add_common(c_sel, sel.common);
  add_graph(c_sel, sel.graph);
  c_sel->add_option("--folds", sel.cv.n_folds)->capture_default_str();
  c_sel->add_option("--repeats", sel.cv.n_repeats)->capture_default_str();
  c_sel->add_option("--k-min", sel.cv.k_min)->capture_default_str();
  c_sel->add_option("--k-max", sel.cv.k_max, "0: floor(N/4)")->capture_default_str();
  c_sel->add_option("--k-grid", sel.cv.k_grid, "Explicit K values (overrides --k-min/--k-max)");
  c_sel->add_option("--tol", sel.cv.imputation_tol, "Imputation convergence tolerance")->capture_default_str();
  c_sel->add_option("--max-em-iters", sel.cv.max_em_iters)->capture_default_str();
  c_sel->add_option("--kmeans-restarts", sel.cv.kmeans_restarts)->capture_default_str();

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit", "Fit the model by MCMC or the two-stage approximation");
  add_common(c_fit, fit.common);
  add_graph(c_fit, fit.graph);
  c_fit->add_option("--engine", fit.engine)->check(CLI::IsMember({"mcmc", "twostage"}))->capture_default_str();
  c_fit->add_option("-k,--k", fit.k, "Number of blocks")->capture_default_str();
  c_fit->add_option("--selection", fit.selection, "selection.json from select-k")->check(CLI::ExistingFile);
  c_fit->add_option("--mask", fit.mask, "Held-out dyads (i,j,fold CSV)")->check(CLI::ExistingFile);
  c_fit->add_option("--fold", fit.fold, "Mask fold to hold out (-1: all)")->capture_default_str();
  c_fit->add_option("--a0", fit.a0, "Beta prior a0 (0: from density)")->capture_default_str();
  c_fit->add_option("--b0", fit.b0)->capture_default_str();
  c_fit->add_option("--m0", fit.m0)->expected(2)->capture_default_str();
  c_fit->add_option("--s0", fit.s0)->capture_default_str();
  c_fit->add_option("--psi0", fit.psi0, "Psi0 entries 11 12 22")->expected(3)->capture_default_str();
  c_fit->add_option("--nu0", fit.nu0)->capture_default_str();
  c_fit->add_option("--upsilon0", fit.upsilon0)->capture_default_str();
  c_fit->add_option("--dim", fit.dim)->check(CLI::PositiveNumber)->capture_default_str();
  c_fit->add_option("--iter", fit.iter)->capture_default_str();
  c_fit->add_option("--thin", fit.thin)->capture_default_str();
  c_fit->add_option("--burn-in", fit.burn_in, "Fraction of saved draws discarded")->capture_default_str();
  c_fit->add_option("--chains", fit.chains)->capture_default_str();
  c_fit->add_option("--epsilon", fit.epsilon)->capture_default_str();
  c_fit->add_option("--rz", fit.r_z, "Position proposal scale")->capture_default_str();
  c_fit->add_option("--a-alpha", fit.a_alpha, "Diagonal of the eta proposal covariance")->expected(2)->capture_default_str();
  c_fit->add_option("--extra-z-steps", fit.extra_z_steps)->capture_default_str();
  c_fit->add_flag("--sbm", fit.sbm, "Plain blockmodel baseline (no latent positions)");
  c_fit->add_option("--mds-max-iter", fit.mds_max_iter)->capture_default_str();
  c_fit->add_option("--mds-tol", fit.mds_tol)->capture_default_str();
  c_fit->add_option("--cluster", fit.cluster)->check(CLI::IsMember({"spectral", "label-propagation"}))->capture_default_str();
  c_fit->add_option("--vb-max-iter", fit.vb_max_iter)->capture_default_str();
  c_fit->add_option("--vb-tol", fit.vb_tol)->capture_default_str();
  c_fit->add_option("--vb-a0", fit.vb_a0)->capture_default_str();
  c_fit->add_option("--vb-b0", fit.vb_b0)->capture_default_str();
  c_fit->add_option("--vb-m0", fit.vb_m0)->capture_default_str();
  c_fit->add_option("--vb-t0", fit.vb_t0)->capture_default_str();
  c_fit->add_option("--tau-a0", fit.tau_a0)->capture_default_str();
  c_fit->add_option("--tau-b0", fit.tau_b0)->capture_default_str();

  PostprocessArgs pp;
  auto* c_pp = app.add_subcommand("postprocess", "Align labels and positions of saved chains");
  add_common(c_pp, pp.common);
  c_pp->add_option("--fit", pp.fit, "Fit run directory")->required()->check(CLI::ExistingDirectory);
  c_pp->add_option("-g,--graph", pp.graph, "Graph (for node ids)")->check(CLI::ExistingFile);
  c_pp->add_option("--mds-max-iter", pp.mds_max_iter)->capture_default_str();
  c_pp->add_option("--mds-tol", pp.mds_tol)->capture_default_str();

  PredictArgs pr;
  auto* c_pr = app.add_subcommand("predict", "Score held-out dyads");
  add_common(c_pr, pr.common);
  add_graph(c_pr, pr.graph);
  c_pr->add_option("--fit", pr.fit, "Fit run directory")->required()->check(CLI::ExistingDirectory);
  c_pr->add_option("--mask", pr.mask, "Held-out dyads (i,j,fold CSV)")->required()->check(CLI::ExistingFile);
  c_pr->add_option("--fold", pr.fold)->capture_default_str();

  ReportArgs rep;
  auto* c_rep = app.add_subcommand("report", "Summary tables of a fit");
  add_common(c_rep, rep.common);
  c_rep->add_option("--fit", rep.fit, "Fit run directory")->required()->check(CLI::ExistingDirectory);
  add_graph(c_rep, rep.graph, false);
  c_rep->add_option("--mass", rep.mass, "HPD mass")->check(CLI::Range(0.0, 1.0))->capture_default_str();
  c_rep->add_option("--display-threshold", rep.display_threshold)->capture_default_str();

  LoadArgs ld;
  auto* c_ld = app.add_subcommand("load-data", "Build a Karnataka village network");
  add_common(c_ld, ld.common);
  c_ld->add_option("--data-dir", ld.data_dir)->capture_default_str();
  c_ld->add_option("--village", ld.village, "Village number (0: all)")->capture_default_str();
  c_ld->add_option("--relation", ld.relation)->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  try {
    if (c_sim->parsed()) cmd_simulate(sim, *c_sim);
    else if (c_sel->parsed()) cmd_select_k(sel, *c_sel);
    else if (c_fit->parsed()) cmd_fit(fit, *c_fit);
    else if (c_pp->parsed()) cmd_postprocess(pp, *c_pp);
    else if (c_pr->parsed()) cmd_predict(pr, *c_pr);
    else if (c_rep->parsed()) cmd_report(rep, *c_rep);
    else if (c_ld->parsed()) cmd_load_data(ld, *c_ld);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
