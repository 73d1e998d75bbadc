// gcp: run conformal experiments on growing graphs, generate synthetic graphs,
// print coverage laws.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "gcp/gcp.hpp"

namespace {

int cmd_run(const std::string& config_path, unsigned workers, const std::string& out) {
  auto config = gcp::load_config(config_path);
  const std::string dir = out.empty() ? config.output_dir : out;
  return gcp::run_experiment(config, workers, dir);
}

int cmd_gen(const gcp::SbmSpec& spec, std::uint64_t seed, const std::string& prefix) {
  auto rng = gcp::make_rng(seed, {0x6a7eULL});
  const auto g = gcp::sbm_homophilous(spec, rng);
  gcp::write_graph(g, {prefix + ".edges", prefix + ".features.csv", prefix + ".labels.csv"});
  spdlog::info("wrote {} nodes and {} edges (homophily {:.3f}) to {}.*", g.num_nodes(), g.num_edges(),
               gcp::edge_homophily(g), prefix);
  return 0;
}

int cmd_laws(std::int64_t n, std::int64_t m, double alpha) {
  const auto params = gcp::CoverageLawParams::make(n, m, alpha);
  bool beta_ok = true;
  try {
    gcp::beta_coverage_params(n, alpha);
  } catch (const gcp::DegenerateLaw& e) {
    spdlog::warn("{}", e.what());
    beta_ok = false;
  }
  std::cout << "t,beta_cdf,hypergeom_cdf\n";
  for (int i = 0; i <= 100; ++i) {
    const double t = i / 100.0;
    const std::string b = beta_ok ? fmt::format("{:.10g}", gcp::beta_coverage_cdf(n, alpha, t)) : "nan";
    std::cout << fmt::format("{:.2f},{},{:.10g}\n", t, b, gcp::transductive_coverage_law(params, t));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conformal prediction on inductively growing graphs"};
  app.require_subcommand(1);

  std::string config_path, out;
  unsigned workers = 1;
  auto* run = app.add_subcommand("run", "Run an experiment from a JSON config");
  run->add_option("config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  run->add_option("--workers", workers, "Concurrent seeds")->capture_default_str()->check(CLI::PositiveNumber);
  run->add_option("--out", out, "Output directory (overrides the config)");

  gcp::SbmSpec spec;
  std::uint64_t seed = 0;
  std::string prefix = "graph";
  auto* gen = app.add_subcommand("gen", "Write a homophilous SBM graph to edge/feature/label files");
  gen->add_option("--n", spec.n, "Nodes")->capture_default_str();
  gen->add_option("--k", spec.k_classes, "Classes (one block each)")->capture_default_str();
  gen->add_option("--p-in", spec.p_in, "Edge probability within a block")->capture_default_str();
  gen->add_option("--p-out", spec.p_out, "Edge probability across blocks")->capture_default_str();
  gen->add_option("--feat-dim", spec.feat_dim, "Feature dimension")->capture_default_str();
  gen->add_option("--separation", spec.feat_separation, "Class mean offset in feature space")->capture_default_str();
  gen->add_option("--seed", seed, "Random seed")->capture_default_str();
  gen->add_option("--prefix", prefix, "Output path prefix");

  std::int64_t n = 100, m = 100;
  double alpha = 0.1;
  auto* laws = app.add_subcommand("laws", "Print Beta and hypergeometric coverage CDFs as CSV");
  laws->add_option("--n", n, "Calibration size")->capture_default_str()->check(CLI::PositiveNumber);
  laws->add_option("--m", m, "Evaluation size")->capture_default_str()->check(CLI::PositiveNumber);
  laws->add_option("--alpha", alpha, "Miscoverage level")->capture_default_str()->check(CLI::Range(0.0, 1.0));

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(config_path, workers, out);
    if (*gen) return cmd_gen(spec, seed, prefix);
    if (*laws) return cmd_laws(n, m, alpha);
  } catch (const gcp::Error& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 0;
}
