#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fbnsl/admm.hpp"
#include "fbnsl/graph.hpp"
#include "fbnsl/orchestrate.hpp"

namespace fbnsl {

enum class SemKind { kLinear, kMlp };
enum class Method { kAdmm, kAdmmMlp, kVoting, kAverage, kBest, kAllData, kSuffStats };

std::string to_string(SemKind sem);
std::string to_string(Method method);
std::string to_string(ModelFamily model);
std::string to_string(TransportKind transport);

/// JSON schema (unknown keys are rejected):
///   seed, d, n (0 = 3d), K, graph ("er"), edge_count (default d),
///   sem (linear|mlp), method (admm|admm-mlp|voting|avg|best|alldata|suffstats),
///   model (linear|mlp, for the per-client and pooled baselines),
///   hyperparameters {AdmmConfig fields}, runs, transport (inproc|tcp),
///   data_csv, truth_csv (optional: use a fixed dataset instead of simulating).
struct ExperimentConfig {
  std::uint64_t seed = 0;
  int d = 10;
  int n = 0;
  int clients = 10;
  std::string graph = "er";
  std::optional<int> edge_count;
  SemKind sem = SemKind::kLinear;
  Method method = Method::kAdmm;
  ModelFamily model = ModelFamily::kLinear;
  AdmmConfig hyper = AdmmConfig::linear_defaults();
  int runs = 1;
  TransportKind transport = TransportKind::kInProcess;
  std::optional<std::string> data_csv;
  std::optional<std::string> truth_csv;

  int sample_count() const { return n > 0 ? n : 3 * d; }
  int edges() const { return edge_count.value_or(d); }
  /// Family the chosen method estimates with.
  ModelFamily family() const;
  bool has_truth() const { return !data_csv || truth_csv; }
  void validate() const;

  static ExperimentConfig from_json_text(const std::string& text);
  static ExperimentConfig load(const std::string& path);
  std::string to_json_text() const;
};

struct RunRecord {
  int run = 0;
  std::uint64_t seed = 0;
  std::optional<Metrics> metrics;  // absent when the truth is unknown
  double wall_ms = 0.0;
  DirectedGraph estimate;
  ConvergenceTrace trace;  // ADMM methods only
  std::optional<std::string> error;
};

struct Aggregate {
  double mean = 0.0;
  double standard_error = 0.0;  // sample std / √count
  int count = 0;
};

Aggregate aggregate(const std::vector<double>& values);

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<RunRecord> runs;
  std::string version = FBNSL_VERSION;

  int failures() const;
  Aggregate shd() const;
  Aggregate tpr() const;
  Aggregate fdr() const;
  Aggregate wall_ms() const;
};

/// Generates (or loads) data for every run, applies the method and scores it.
/// A failing run is recorded with its error instead of aborting the batch.
ExperimentReport run_experiment(const ExperimentConfig& config);

/// Single run body, also used by the acceptance suite.
RunRecord run_once(const ExperimentConfig& config, int run);

/// Truth and per-client data for one seed.
struct Instance {
  DirectedGraph truth;
  Matrix data;
  std::vector<ClientDataset> clients;  // centered per client
};
Instance make_instance(const ExperimentConfig& config, std::uint64_t seed);

/// Writes metrics.csv, trace_run<r>.csv and summary.json under `dir`.
void emit_report(const ExperimentReport& report, const std::string& dir);

std::string metrics_csv(const ExperimentReport& report);
std::string summary_json(const ExperimentReport& report);

// metrics.csv rows, as read back by `report`.
struct MetricsRow {
  int run = 0;
  std::string method;
  int d = 0;
  int clients = 0;
  int n = 0;
  double shd = 0.0;
  double tpr = 0.0;
  double fdr = 0.0;
  double wall_ms = 0.0;
};

std::vector<MetricsRow> read_metrics_csv(const std::string& path);
/// Mean/SE of shd, tpr, fdr and wall_ms grouped by (method, d, K, n), as JSON.
std::string summarize_rows(const std::vector<MetricsRow>& rows);
/// Line chart of mean SHD against K, one series per method.
std::string shd_vs_k_svg(const std::vector<MetricsRow>& rows);

}  // namespace fbnsl
