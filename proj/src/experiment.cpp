#include "fbnsl/experiment.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

#include "fbnsl/baselines.hpp"
#include "fbnsl/secure_stats.hpp"

namespace fbnsl {

using nlohmann::json;

namespace {

template <typename Enum, std::size_t N>
Enum parse_enum(const std::string& key, const std::string& value,
                const std::pair<const char*, Enum> (&table)[N]) {
  for (const auto& [name, e] : table) {
    if (value == name) return e;
  }
  std::string allowed;
  for (const auto& [name, e] : table) allowed += (allowed.empty() ? "" : "|") + std::string(name);
  throw ConfigError("config: " + key + " must be one of " + allowed + ", got '" + value + "'");
}

constexpr std::pair<const char*, SemKind> kSems[] = {{"linear", SemKind::kLinear},
                                                     {"mlp", SemKind::kMlp}};
constexpr std::pair<const char*, ModelFamily> kModels[] = {{"linear", ModelFamily::kLinear},
                                                           {"mlp", ModelFamily::kMlp}};
constexpr std::pair<const char*, Method> kMethods[] = {
    {"admm", Method::kAdmm},       {"admm-mlp", Method::kAdmmMlp}, {"voting", Method::kVoting},
    {"avg", Method::kAverage},     {"best", Method::kBest},        {"alldata", Method::kAllData},
    {"suffstats", Method::kSuffStats}};
constexpr std::pair<const char*, TransportKind> kTransports[] = {
    {"inproc", TransportKind::kInProcess}, {"tcp", TransportKind::kTcp}};

template <typename Enum, std::size_t N>
std::string enum_name(Enum e, const std::pair<const char*, Enum> (&table)[N]) {
  for (const auto& [name, v] : table) {
    if (v == e) return name;
  }
  return "?";
}

void reject_unknown(const json& object, std::initializer_list<const char*> keys,
                    const std::string& where) {
  if (!object.is_object()) throw ConfigError("config: " + where + " must be an object");
  for (const auto& [key, value] : object.items()) {
    bool known = false;
    for (const char* k : keys) known = known || key == k;
    if (!known) throw ConfigError("config: unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& object, const char* key, T& out) {
  if (!object.contains(key)) return;
  try {
    out = object.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

void read_hyper(const json& h, AdmmConfig& c) {
  reject_unknown(h,
                 {"rho1_init", "rho2_init", "lambda", "gamma1", "gamma2", "max_rounds", "rho_max",
                  "h_tolerance", "consensus_tolerance", "threshold_tau", "hidden_size",
                  "init_seed", "solver_max_iterations", "solver_gradient_tolerance",
                  "solver_history_size", "solver_function_tolerance",
                  "central_solver_max_iterations", "central_solver_gradient_tolerance",
                  "central_solver_function_tolerance"},
                 "hyperparameters");
  read(h, "rho1_init", c.rho1_init);
  read(h, "rho2_init", c.rho2_init);
  read(h, "lambda", c.lambda);
  read(h, "gamma1", c.gamma1);
  read(h, "gamma2", c.gamma2);
  read(h, "max_rounds", c.max_rounds);
  read(h, "rho_max", c.rho_max);
  read(h, "h_tolerance", c.h_tolerance);
  if (h.contains("consensus_tolerance")) {
    double v = 0;
    read(h, "consensus_tolerance", v);
    c.consensus_tolerance = v;
  }
  read(h, "threshold_tau", c.threshold_tau);
  read(h, "hidden_size", c.hidden_size);
  read(h, "init_seed", c.init_seed);
  read(h, "solver_max_iterations", c.solver.max_iterations);
  read(h, "solver_gradient_tolerance", c.solver.gradient_tolerance);
  read(h, "solver_history_size", c.solver.history_size);
  read(h, "solver_function_tolerance", c.solver.function_tolerance);
  read(h, "central_solver_max_iterations", c.central_solver.max_iterations);
  read(h, "central_solver_gradient_tolerance", c.central_solver.gradient_tolerance);
  read(h, "central_solver_function_tolerance", c.central_solver.function_tolerance);
}

json hyper_json(const AdmmConfig& c) {
  json h = {{"rho1_init", c.rho1_init},
            {"rho2_init", c.rho2_init},
            {"lambda", c.lambda},
            {"gamma1", c.gamma1},
            {"gamma2", c.gamma2},
            {"max_rounds", c.max_rounds},
            {"rho_max", c.rho_max},
            {"h_tolerance", c.h_tolerance},
            {"threshold_tau", c.threshold_tau},
            {"hidden_size", c.hidden_size},
            {"init_seed", c.init_seed},
            {"solver_max_iterations", c.solver.max_iterations},
            {"solver_gradient_tolerance", c.solver.gradient_tolerance},
            {"solver_history_size", c.solver.history_size},
            {"solver_function_tolerance", c.solver.function_tolerance},
            {"central_solver_max_iterations", c.central_solver.max_iterations},
            {"central_solver_gradient_tolerance", c.central_solver.gradient_tolerance},
            {"central_solver_function_tolerance", c.central_solver.function_tolerance}};
  if (c.consensus_tolerance) h["consensus_tolerance"] = *c.consensus_tolerance;
  return h;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

std::string to_string(SemKind sem) { return enum_name(sem, kSems); }
std::string to_string(Method method) { return enum_name(method, kMethods); }
std::string to_string(ModelFamily model) { return enum_name(model, kModels); }
std::string to_string(TransportKind transport) { return enum_name(transport, kTransports); }

ModelFamily ExperimentConfig::family() const {
  switch (method) {
    case Method::kAdmm:
    case Method::kSuffStats:
      return ModelFamily::kLinear;
    case Method::kAdmmMlp:
      return ModelFamily::kMlp;
    default:
      return model;
  }
}

void ExperimentConfig::validate() const {
  if (d < 2) throw ConfigError("config: d must be >= 2");
  if (n < 0) throw ConfigError("config: n must be >= 0");
  if (clients < 1) throw ConfigError("config: K must be >= 1");
  if (!data_csv && sample_count() < clients) {
    throw ConfigError("config: n must be at least K so every client holds a sample");
  }
  if (graph != "er") throw ConfigError("config: graph must be 'er'");
  const int e = edges();
  if (e < 0 || e > d * (d - 1) / 2) {
    throw ConfigError("config: edge_count must lie in [0, d(d-1)/2]");
  }
  if (runs < 1) throw ConfigError("config: runs must be >= 1");
  if (truth_csv && !data_csv) throw ConfigError("config: truth_csv requires data_csv");
  if (method == Method::kBest && !has_truth()) {
    throw ConfigError("config: method 'best' needs the ground truth (set truth_csv)");
  }
  if (method == Method::kSuffStats && model == ModelFamily::kMlp) {
    throw ConfigError("config: suffstats only applies to the linear model");
  }
  if (method == Method::kAdmm && model == ModelFamily::kMlp) {
    throw ConfigError("config: method 'admm' is linear; use 'admm-mlp'");
  }
  hyper.validate();
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  reject_unknown(j,
                 {"seed", "d", "n", "K", "graph", "edge_count", "sem", "method", "model",
                  "hyperparameters", "runs", "transport", "data_csv", "truth_csv"},
                 "config");
  ExperimentConfig c;
  read(j, "seed", c.seed);
  read(j, "d", c.d);
  read(j, "n", c.n);
  read(j, "K", c.clients);
  read(j, "graph", c.graph);
  if (j.contains("edge_count")) {
    int e = 0;
    read(j, "edge_count", e);
    c.edge_count = e;
  }
  std::string s;
  if (j.contains("sem")) {
    read(j, "sem", s);
    c.sem = parse_enum("sem", s, kSems);
  }
  if (j.contains("method")) {
    read(j, "method", s);
    c.method = parse_enum("method", s, kMethods);
  }
  if (j.contains("model")) {
    read(j, "model", s);
    c.model = parse_enum("model", s, kModels);
  } else if (c.method == Method::kAdmmMlp) {
    c.model = ModelFamily::kMlp;
  }
  c.hyper = c.family() == ModelFamily::kMlp ? AdmmConfig::nonlinear_defaults()
                                            : AdmmConfig::linear_defaults();
  if (j.contains("hyperparameters")) read_hyper(j.at("hyperparameters"), c.hyper);
  read(j, "runs", c.runs);
  if (j.contains("transport")) {
    read(j, "transport", s);
    c.transport = parse_enum("transport", s, kTransports);
  }
  if (j.contains("data_csv")) {
    read(j, "data_csv", s);
    c.data_csv = s;
  }
  if (j.contains("truth_csv")) {
    read(j, "truth_csv", s);
    c.truth_csv = s;
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string ExperimentConfig::to_json_text() const {
  json j = {{"seed", seed},
            {"d", d},
            {"n", n},
            {"K", clients},
            {"graph", graph},
            {"edge_count", edges()},
            {"sem", to_string(sem)},
            {"method", to_string(method)},
            {"model", to_string(model)},
            {"hyperparameters", hyper_json(hyper)},
            {"runs", runs},
            {"transport", to_string(transport)}};
  if (data_csv) j["data_csv"] = *data_csv;
  if (truth_csv) j["truth_csv"] = *truth_csv;
  return j.dump(2);
}

Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  a.count = static_cast<int>(values.size());
  if (values.empty()) return a;
  double sum = 0;
  for (double v : values) sum += v;
  a.mean = sum / a.count;
  if (a.count > 1) {
    double ss = 0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.standard_error = std::sqrt(ss / (a.count - 1)) / std::sqrt(static_cast<double>(a.count));
  }
  return a;
}

int ExperimentReport::failures() const {
  int f = 0;
  for (const auto& r : runs) f += r.error.has_value();
  return f;
}

namespace {

template <typename Get>
Aggregate aggregate_metric(const std::vector<RunRecord>& runs, Get get) {
  std::vector<double> v;
  for (const auto& r : runs) {
    if (r.metrics) v.push_back(get(*r.metrics));
  }
  return aggregate(v);
}

}  // namespace

Aggregate ExperimentReport::shd() const {
  return aggregate_metric(runs, [](const Metrics& m) { return static_cast<double>(m.shd); });
}
Aggregate ExperimentReport::tpr() const {
  return aggregate_metric(runs, [](const Metrics& m) { return m.tpr; });
}
Aggregate ExperimentReport::fdr() const {
  return aggregate_metric(runs, [](const Metrics& m) { return m.fdr; });
}
Aggregate ExperimentReport::wall_ms() const {
  std::vector<double> v;
  for (const auto& r : runs) {
    if (!r.error) v.push_back(r.wall_ms);
  }
  return aggregate(v);
}

Instance make_instance(const ExperimentConfig& config, std::uint64_t seed) {
  Instance inst;
  if (config.data_csv) {
    inst.data = read_csv(*config.data_csv).samples;
    if (config.truth_csv) inst.truth = read_edge_list(*config.truth_csv, inst.data.cols());
    if (inst.data.rows() < config.clients) {
      throw ConfigError("data has fewer rows than clients");
    }
  } else {
    const Rng rng(seed);
    inst.truth = sample_er_dag(config.d, config.edges(), rng.split(0));
    if (config.sem == SemKind::kLinear) {
      inst.data = simulate(sample_linear_sem(inst.truth, rng.split(1)), config.sample_count(),
                           rng.split(2));
    } else {
      inst.data = simulate(sample_mlp_sem(inst.truth, rng.split(1)), config.sample_count(),
                           rng.split(2));
    }
  }
  inst.clients = partition(inst.data, config.clients);
  for (auto& c : inst.clients) c.samples = center(c.samples);
  return inst;
}

namespace {

struct Estimate {
  DirectedGraph graph;
  ConvergenceTrace trace;
};

Estimate run_consensus(const ExperimentConfig& config, const Instance& inst) {
  const int d = static_cast<int>(inst.data.cols());
  const bool mlp = config.method == Method::kAdmmMlp;
  if (mlp && config.clients == 1) {
    const AdmmResult r = solve_mlp_single(inst.clients[0].samples, config.hyper);
    return {r.graph, r.trace};
  }
  auto server = mlp ? make_mlp_server(config.clients, d, config.hyper)
                    : make_linear_server(config.clients, d, config.hyper);
  std::vector<std::unique_ptr<ConsensusClient>> clients;
  for (const auto& c : inst.clients) {
    clients.push_back(mlp ? make_mlp_client(c.client_id, c.samples, config.hyper)
                          : make_linear_client(c.client_id, c.samples, config.hyper));
  }
  FederationOptions options;
  options.transport = config.transport;
  orchestrate(options, *server, clients);
  return {threshold_graph(server->adjacency(), config.hyper.threshold_tau), server->trace()};
}

DirectedGraph run_suffstats(const ExperimentConfig& config, const Instance& inst,
                            std::uint64_t seed) {
  // Raw (uncentered) rows: the covariance assembly removes the pooled mean.
  const auto raw = partition(inst.data, config.clients);
  const std::uint64_t secret = Rng(seed).split(3).next();
  std::vector<MaskedShare> shares;
  for (const auto& c : raw) {
    shares.push_back(mask_statistics(local_stats(c.samples), c.client_id,
                                     pairwise_seeds(secret, config.clients, c.client_id)));
  }
  FederationOptions options;
  options.transport = config.transport;
  const auto received = exchange_shares(options, shares);
  const Covariance cov = assemble_covariance(secure_sum(received, config.clients));
  return solve_from_suffstats(cov.sigma, cov.count, config.hyper.lambda, config.hyper).graph;
}

Estimate dispatch(const ExperimentConfig& config, const Instance& inst, std::uint64_t seed) {
  const ModelFamily family = config.family();
  switch (config.method) {
    case Method::kAdmm:
    case Method::kAdmmMlp:
      return run_consensus(config, inst);
    case Method::kVoting:
      return {aggregate_voting(estimate_each(inst.clients, family, config.hyper)), {}};
    case Method::kAverage:
      return {aggregate_average(estimate_each(inst.clients, family, config.hyper),
                                config.hyper.threshold_tau),
              {}};
    case Method::kBest:
      return {select_best(estimate_each(inst.clients, family, config.hyper), inst.truth), {}};
    case Method::kAllData:
      return {family == ModelFamily::kMlp
                  ? run_alldata_mlp(inst.clients, config.hyper).graph
                  : run_alldata(inst.clients, config.hyper.lambda, config.hyper).graph,
              {}};
    case Method::kSuffStats:
      return {run_suffstats(config, inst, seed), {}};
  }
  throw ArgumentError("unknown method");
}

}  // namespace

RunRecord run_once(const ExperimentConfig& config, int run) {
  RunRecord rec;
  rec.run = run;
  rec.seed = config.seed + static_cast<std::uint64_t>(run);
  const auto start = std::chrono::steady_clock::now();
  try {
    const Instance inst = make_instance(config, rec.seed);
    Estimate est = dispatch(config, inst, rec.seed);
    rec.estimate = std::move(est.graph);
    rec.trace = std::move(est.trace);
    if (config.has_truth()) rec.metrics = evaluate(rec.estimate, inst.truth);
  } catch (const Error& e) {
    rec.error = e.what();
  }
  rec.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  ExperimentReport report;
  report.config = config;
  for (int r = 0; r < config.runs; ++r) report.runs.push_back(run_once(config, r));
  return report;
}

std::string metrics_csv(const ExperimentReport& report) {
  std::ostringstream os;
  os << "run,method,d,K,n,shd,tpr,fdr,wall_ms\n";
  const auto& c = report.config;
  for (const auto& r : report.runs) {
    if (r.error) continue;
    os << r.run << ',' << to_string(c.method) << ',' << c.d << ',' << c.clients << ','
       << c.sample_count() << ',';
    if (r.metrics) {
      os << r.metrics->shd << ',' << format_double(r.metrics->tpr) << ','
         << format_double(r.metrics->fdr);
    } else {
      os << ",,";
    }
    os << ',' << format_double(r.wall_ms) << '\n';
  }
  return os.str();
}

namespace {

json aggregate_json(const Aggregate& a) {
  return {{"mean", a.mean}, {"standard_error", a.standard_error}, {"count", a.count}};
}

}  // namespace

std::string summary_json(const ExperimentReport& report) {
  json failures = json::array();
  for (const auto& r : report.runs) {
    if (r.error) failures.push_back({{"run", r.run}, {"error", *r.error}});
  }
  json j = {{"version", report.version},
            {"config", json::parse(report.config.to_json_text())},
            {"runs", report.runs.size()},
            {"failure_count", report.failures()},
            {"failures", failures},
            {"shd", aggregate_json(report.shd())},
            {"tpr", aggregate_json(report.tpr())},
            {"fdr", aggregate_json(report.fdr())},
            {"wall_ms", aggregate_json(report.wall_ms())}};
  return j.dump(2) + "\n";
}

void emit_report(const ExperimentReport& report, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  write_file(fs::path(dir) / "metrics.csv", metrics_csv(report));
  const bool mlp = report.config.method == Method::kAdmmMlp;
  for (const auto& r : report.runs) {
    if (r.trace.rows.empty()) continue;
    write_file(fs::path(dir) / ("trace_run" + std::to_string(r.run) + ".csv"),
               trace_csv(r.trace, mlp));
  }
  write_file(fs::path(dir) / "summary.json", summary_json(report));
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "run,method,d,K,n,shd,tpr,fdr,wall_ms") {
    throw IoError(path + ": unexpected header");
  }
  std::vector<MetricsRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 9) throw IoError(path + ":" + std::to_string(lineno) + ": expected 9 fields");
    if (f[5].empty()) continue;  // run without ground truth
    try {
      rows.push_back({std::stoi(f[0]), f[1], std::stoi(f[2]), std::stoi(f[3]), std::stoi(f[4]),
                      std::stod(f[5]), std::stod(f[6]), std::stod(f[7]), std::stod(f[8])});
    } catch (const std::exception&) {
      throw IoError(path + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return rows;
}

namespace {

using GroupKey = std::tuple<std::string, int, int, int>;

std::map<GroupKey, std::vector<const MetricsRow*>> group_rows(const std::vector<MetricsRow>& rows) {
  std::map<GroupKey, std::vector<const MetricsRow*>> groups;
  for (const auto& r : rows) groups[{r.method, r.d, r.clients, r.n}].push_back(&r);
  return groups;
}

}  // namespace

std::string summarize_rows(const std::vector<MetricsRow>& rows) {
  json out = json::array();
  for (const auto& [key, members] : group_rows(rows)) {
    auto column = [&](double MetricsRow::*field) {
      std::vector<double> v;
      for (const auto* r : members) v.push_back(r->*field);
      return aggregate_json(aggregate(v));
    };
    out.push_back({{"method", std::get<0>(key)},
                   {"d", std::get<1>(key)},
                   {"K", std::get<2>(key)},
                   {"n", std::get<3>(key)},
                   {"shd", column(&MetricsRow::shd)},
                   {"tpr", column(&MetricsRow::tpr)},
                   {"fdr", column(&MetricsRow::fdr)},
                   {"wall_ms", column(&MetricsRow::wall_ms)}});
  }
  return out.dump(2) + "\n";
}

std::string shd_vs_k_svg(const std::vector<MetricsRow>& rows) {
  std::map<std::string, std::map<int, std::vector<double>>> series;
  for (const auto& r : rows) series[r.method][r.clients].push_back(r.shd);

  double max_k = 1, max_shd = 1;
  for (const auto& [method, by_k] : series) {
    for (const auto& [k, v] : by_k) {
      max_k = std::max(max_k, static_cast<double>(k));
      max_shd = std::max(max_shd, aggregate(v).mean);
    }
  }
  const double w = 640, h = 400, left = 60, right = 140, top = 20, bottom = 50;
  auto px = [&](double k) { return left + (w - left - right) * k / max_k; };
  auto py = [&](double s) { return h - bottom - (h - top - bottom) * s / max_shd; };

  static constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                            "#9467bd", "#8c564b", "#17becf"};
  std::ostringstream os;
  os << std::fixed << std::setprecision(1);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << py(0) << "\" x2=\"" << px(max_k) << "\" y2=\""
     << py(0) << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << py(0) << "\" x2=\"" << left << "\" y2=\""
     << py(max_shd) << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << (left + w - right) / 2 << "\" y=\"" << h - 10
     << "\" text-anchor=\"middle\">K (clients)</text>\n";
  os << "<text x=\"15\" y=\"" << (top + h - bottom) / 2 << "\" transform=\"rotate(-90 15 "
     << (top + h - bottom) / 2 << ")\" text-anchor=\"middle\">mean SHD</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const double s = max_shd * t / 4;
    os << "<text x=\"" << left - 5 << "\" y=\"" << py(s) + 4 << "\" text-anchor=\"end\">" << s
       << "</text>\n";
  }
  std::size_t i = 0;
  for (const auto& [method, by_k] : series) {
    const char* color = kColors[i % std::size(kColors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& [k, v] : by_k) os << px(k) << ',' << py(aggregate(v).mean) << ' ';
    os << "\"/>\n";
    for (const auto& [k, v] : by_k) {
      os << "<circle cx=\"" << px(k) << "\" cy=\"" << py(aggregate(v).mean) << "\" r=\"3\" fill=\""
         << color << "\"/>\n";
      os << "<text x=\"" << px(k) << "\" y=\"" << py(0) + 15 << "\" text-anchor=\"middle\">" << k
         << "</text>\n";
    }
    os << "<text x=\"" << w - right + 10 << "\" y=\"" << top + 15 + 18 * i << "\" fill=\""
       << color << "\">" << method << "</text>\n";
    ++i;
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace fbnsl
