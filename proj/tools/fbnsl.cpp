// fbnsl: federated DAG structure learning experiments.
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "fbnsl/experiment.hpp"

namespace fs = std::filesystem;
using namespace fbnsl;

namespace {

struct Common {
  std::string config_path;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<int> runs;
  std::optional<std::string> transport;
};

ExperimentConfig load_config(const Common& c) {
  ExperimentConfig config = c.config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(c.config_path);
  if (c.seed) config.seed = *c.seed;
  if (c.runs) config.runs = *c.runs;
  if (c.transport) config.transport = *c.transport == "tcp" ? TransportKind::kTcp : TransportKind::kInProcess;
  config.validate();
  return config;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
}

std::vector<std::string> column_names(Eigen::Index d) {
  std::vector<std::string> names;
  for (Eigen::Index j = 0; j < d; ++j) names.push_back("x" + std::to_string(j));
  return names;
}

void write_matrix(const fs::path& path, const Matrix& m) {
  write_csv(path.string(), {column_names(m.cols()), m});
}

int cmd_generate(const Common& c) {
  const ExperimentConfig config = load_config(c);
  fs::create_directories(c.out);
  const Instance inst = make_instance(config, config.seed);
  write_csv((fs::path(c.out) / "data.csv").string(), {column_names(inst.data.cols()), inst.data});
  write_edge_list((fs::path(c.out) / "truth.csv").string(), inst.truth);
  for (const auto& client : partition(inst.data, config.clients)) {
    write_matrix(fs::path(c.out) / ("client" + std::to_string(client.client_id) + ".csv"),
                 client.samples);
  }
  std::cout << "wrote " << inst.data.rows() << " samples over " << config.clients
            << " clients to " << c.out << '\n';
  return 0;
}

int cmd_run(const Common& c) {
  const ExperimentConfig config = load_config(c);
  const ExperimentReport report = run_experiment(config);
  emit_report(report, c.out);
  const Aggregate shd = report.shd(), tpr = report.tpr();
  std::cout << to_string(config.method) << ": " << report.runs.size() << " runs, "
            << report.failures() << " failed";
  if (shd.count > 0) {
    std::cout << ", SHD " << shd.mean << " ± " << shd.standard_error << ", TPR " << tpr.mean
              << " ± " << tpr.standard_error;
  }
  std::cout << "\nreport written to " << c.out << '\n';
  for (const auto& r : report.runs) {
    if (r.error) std::cerr << "run " << r.run << " failed: " << *r.error << '\n';
  }
  return report.failures() == 0 ? 0 : 1;
}

bool is_mlp(const ExperimentConfig& config) { return config.method == Method::kAdmmMlp; }

void require_consensus(const ExperimentConfig& config) {
  if (config.method != Method::kAdmm && config.method != Method::kAdmmMlp) {
    throw ConfigError("serve/join need method admm or admm-mlp");
  }
}

int cmd_serve(const Common& c, const std::string& bind, int timeout_ms) {
  const ExperimentConfig config = load_config(c);
  require_consensus(config);
  const auto [host, port] = resolve_bind_address(bind);
  auto server = is_mlp(config) ? make_mlp_server(config.clients, config.d, config.hyper)
                               : make_linear_server(config.clients, config.d, config.hyper);
  FederationOptions options;
  options.transport = TransportKind::kTcp;
  options.timeout = Millis(timeout_ms);
  options.log = &std::cerr;

  TcpServerEndpoint endpoint(host, port);
  std::cout << "listening on " << host << ':' << endpoint.port() << " for " << config.clients
            << " clients" << std::endl;
  try {
    endpoint.accept_clients(config.clients, options.timeout);
    serve_consensus(endpoint, *server, options);
  } catch (...) {
    endpoint.close();
    throw;
  }
  endpoint.close();

  fs::create_directories(c.out);
  const Matrix w = server->adjacency();
  write_matrix(fs::path(c.out) / "weights.csv", w);
  write_edge_list((fs::path(c.out) / "graph.csv").string(),
                  threshold_graph(w, config.hyper.threshold_tau));
  write_text(fs::path(c.out) / "trace.csv", trace_csv(server->trace(), is_mlp(config)));
  std::cout << "finished after " << server->round() << " rounds"
            << (server->trace().converged ? " (converged)" : "") << "; results in " << c.out
            << '\n';
  return 0;
}

int cmd_join(const Common& c, const std::string& connect, int client_id, const std::string& data,
             int timeout_ms) {
  const ExperimentConfig config = load_config(c);
  require_consensus(config);
  const auto [host, port] = parse_host_port(connect);
  const Matrix samples = center(read_csv(data).samples);
  auto client = is_mlp(config) ? make_mlp_client(client_id, samples, config.hyper)
                               : make_linear_client(client_id, samples, config.hyper);
  FederationOptions options;
  options.timeout = Millis(timeout_ms);
  TcpClientEndpoint endpoint(host, port, options.timeout);
  join_consensus(endpoint, *client, options);
  endpoint.close();
  std::cout << "client " << client_id << " done\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out) {
  std::vector<MetricsRow> rows;
  for (const auto& path : inputs) {
    auto r = read_metrics_csv(path);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  fs::create_directories(out);
  write_text(fs::path(out) / "summary.json", summarize_rows(rows));
  write_text(fs::path(out) / "shd_vs_k.svg", shd_vs_k_svg(rows));
  std::cout << rows.size() << " rows summarized into " << out << '\n';
  return 0;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "experiment config (JSON)")->check(CLI::ExistingFile);
  app->add_option("--out", c.out, "output directory");
  app->add_option("--seed", c.seed, "override the config seed");
  app->add_option("--runs", c.runs, "override the run count");
  app->add_option("--transport", c.transport, "inproc or tcp")
      ->check(CLI::IsMember({"inproc", "tcp"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated Bayesian network structure learning"};
  app.set_version_flag("--version", std::string(FBNSL_VERSION));
  app.require_subcommand(1);

  Common common;
  std::string bind = "127.0.0.1:7070", connect = "127.0.0.1:7070", data;
  int client_id = 0, timeout_ms = 60000;
  std::vector<std::string> metrics;

  auto* generate = app.add_subcommand("generate", "write synthetic data and truth to CSV");
  add_common(generate, common);
  auto* run = app.add_subcommand("run", "run an experiment from a config");
  add_common(run, common);
  auto* serve = app.add_subcommand("serve", "TCP server role for admm/admm-mlp");
  add_common(serve, common);
  serve->add_option("--bind", bind, "host:port (FBNSL_BIND overrides)");
  serve->add_option("--timeout-ms", timeout_ms, "per-round timeout");
  auto* join = app.add_subcommand("join", "TCP client role");
  add_common(join, common);
  join->add_option("--connect", connect, "server host:port");
  join->add_option("--client-id", client_id, "client id in [0, K)")->required();
  join->add_option("--data", data, "local samples CSV")->required()->check(CLI::ExistingFile);
  join->add_option("--timeout-ms", timeout_ms, "receive timeout");
  auto* report = app.add_subcommand("report", "re-aggregate metrics.csv files");
  report->add_option("metrics", metrics, "metrics.csv files")->required()->check(CLI::ExistingFile);
  report->add_option("--out", common.out, "output directory");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*generate) return cmd_generate(common);
    if (*run) return cmd_run(common);
    if (*serve) return cmd_serve(common, bind, timeout_ms);
    if (*join) return cmd_join(common, connect, client_id, data, timeout_ms);
    if (*report) return cmd_report(metrics, common.out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
