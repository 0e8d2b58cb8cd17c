#include "fedlwr/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "fedlwr/errors.hpp"
#include "fedlwr/parallel.hpp"
#include "fedlwr/rng.hpp"

namespace fedlwr {

namespace {

constexpr std::uint64_t kDataTag = 0xda7a;
constexpr std::uint64_t kInitTag = 0x1417;
constexpr std::uint64_t kClientTag = 0xc11e;

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) fields.push_back(f);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_double(const std::string& s, const std::filesystem::path& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("bad number '" + s + "' in " + path.string());
  }
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read '" + path.string() + "'");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

std::string client_columns(std::size_t k) {
  std::string s;
  for (std::size_t i = 1; i <= k; ++i) s += ",client_" + std::to_string(i);
  return s;
}

}  // namespace

std::vector<DatasetBundle> experiment_datasets(const ExperimentConfig& config, std::uint64_t seed) {
  std::vector<DatasetBundle> data;
  if (!config.dataset_paths.empty()) {
    for (const auto& p : config.dataset_paths) data.push_back(load_dataset(p));
    return data;
  }
  const auto domains = benchmark_domains(config.benchmark);
  for (std::size_t k = 0; k < domains.size(); ++k) {
    data.push_back(generate_client_dataset(domains[k], config.samples_per_client, config.height, config.width,
                                           mix_seed({seed, kDataTag, k + 1})));
  }
  return data;
}

std::vector<RoundReport> run_single(const ExperimentConfig& config, StrategyKind strategy, std::uint64_t seed) {
  const auto data = experiment_datasets(config, seed);
  const FederationConfig fed = federation_config(config);
  const ModelParams init = build_model(config.topology, mix_seed({seed, kInitTag}));
  auto clients = make_clients(data, init, fed.optimizer, mix_seed({seed, kClientTag}));
  std::vector<RoundReport> reports;
  reports.reserve(static_cast<std::size_t>(config.rounds));
  run_federation(clients, init, strategy, fed, config.rounds,
                 [&](const RoundReport& r) { reports.push_back(r); });
  return reports;
}

std::filesystem::path run_directory(const ExperimentConfig& config, StrategyKind strategy, std::uint64_t seed) {
  return std::filesystem::path(config.output_dir) / (std::string(to_string(strategy)) + "_" + std::to_string(seed));
}

void write_curve_csv(const std::vector<RoundReport>& reports, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  const std::size_t k = reports.empty() ? 0 : reports.front().per_client_dice.size();
  out << "round" << client_columns(k) << ",avg,std\n";
  for (const auto& r : reports) {
    out << r.round;
    for (double d : r.per_client_dice) out << ',' << fmt_double(d);
    out << ',' << fmt_double(r.avg) << ',' << fmt_double(r.std) << '\n';
  }
}

void write_weights_csv(const std::vector<RoundReport>& reports, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  out << "round,client,layer,delta,rho,degenerate,uniform_fallback\n";
  for (const auto& r : reports) {
    const auto& w = r.weights_used;
    for (std::size_t c = 0; c < w.clients(); ++c) {
      for (std::size_t m = 0; m < w.layers(); ++m) {
        out << r.round << ',' << c + 1 << ',' << m + 1 << ',';
        const bool measured = c < r.delta_log.size();
        if (measured) out << fmt_double(r.delta_log[c][m]);
        out << ',' << fmt_double(w.rho[c][m]) << ',';
        if (measured) out << (r.degenerate_log[c][m] ? 1 : 0);
        out << ',' << (w.uniform_fallback[m] ? 1 : 0) << '\n';
      }
    }
  }
}

std::vector<CurveRow> read_curve_csv(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw FormatError("empty curve file " + path.string());
  const auto header = split_csv_line(lines.front());
  if (header.size() < 4 || header.front() != "round" || header[header.size() - 2] != "avg" || header.back() != "std") {
    throw FormatError("unexpected curve header in " + path.string());
  }
  const std::size_t k = header.size() - 3;
  std::vector<CurveRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split_csv_line(lines[i]);
    if (f.size() != header.size()) throw FormatError("ragged row in " + path.string());
    CurveRow row;
    row.round = static_cast<int>(parse_double(f[0], path));
    for (std::size_t c = 0; c < k; ++c) row.per_client.push_back(parse_double(f[1 + c], path));
    row.avg = parse_double(f[1 + k], path);
    row.std = parse_double(f[2 + k], path);
    rows.push_back(std::move(row));
  }
  return rows;
}

double median(std::vector<double> values) {
  if (values.empty()) throw InvalidArgument("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

SummaryRow summarize(std::string strategy, const std::vector<std::vector<RoundReport>>& runs) {
  if (runs.empty()) throw InvalidArgument("summarize needs at least one run");
  SummaryRow row;
  row.strategy = std::move(strategy);
  const std::size_t k = runs.front().back().per_client_dice.size();
  std::vector<double> avgs, stds;
  std::vector<std::vector<double>> per_client(k);
  for (const auto& run : runs) {
    const auto& last = run.back();
    avgs.push_back(last.avg);
    stds.push_back(last.std);
    for (std::size_t c = 0; c < k; ++c) per_client[c].push_back(last.per_client_dice.at(c));
  }
  for (auto& v : per_client) row.per_client.push_back(median(std::move(v)));
  row.avg = median(std::move(avgs));
  row.std = median(std::move(stds));
  return row;
}

void write_summary_csv(const std::vector<SummaryRow>& rows, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  const std::size_t k = rows.empty() ? 0 : rows.front().per_client.size();
  out << "strategy" << client_columns(k) << ",avg,std\n";
  for (const auto& r : rows) {
    out << r.strategy;
    for (double d : r.per_client) out << ',' << fmt_double(d);
    out << ',' << fmt_double(r.avg) << ',' << fmt_double(r.std) << '\n';
  }
}

std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw FormatError("empty summary file " + path.string());
  const auto header = split_csv_line(lines.front());
  if (header.size() < 3 || header.front() != "strategy" || header[header.size() - 2] != "avg" ||
      header.back() != "std") {
    throw FormatError("unexpected summary header in " + path.string());
  }
  const std::size_t k = header.size() - 3;
  std::vector<SummaryRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split_csv_line(lines[i]);
    if (f.size() != header.size()) throw FormatError("ragged row in " + path.string());
    SummaryRow row;
    row.strategy = f[0];
    for (std::size_t c = 0; c < k; ++c) row.per_client.push_back(parse_double(f[1 + c], path));
    row.avg = parse_double(f[1 + k], path);
    row.std = parse_double(f[2 + k], path);
    rows.push_back(std::move(row));
  }
  return rows;
}

ExperimentOutputs run_experiment(const ExperimentConfig& config, unsigned threads) {
  validate_config(config);
  for (const auto& p : config.dataset_paths) {
    if (!std::filesystem::exists(p)) throw ConfigError("invalid config:\n  data.dataset_paths: missing file " + p);
  }
  std::filesystem::create_directories(config.output_dir);

  struct Job {
    StrategyKind strategy;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (auto s : config.strategies) {
    for (auto seed : config.seeds) jobs.push_back({s, seed});
  }

  std::vector<std::vector<RoundReport>> results(jobs.size());
  ExperimentOutputs outputs;
  outputs.curves.resize(jobs.size());
  outputs.weights.resize(jobs.size());
  parallel_for(jobs.size(), threads, [&](std::size_t j) {
    const auto& job = jobs[j];
    results[j] = run_single(config, job.strategy, job.seed);
    const auto dir = run_directory(config, job.strategy, job.seed);
    std::filesystem::create_directories(dir);
    const std::string tag = std::string(to_string(job.strategy)) + "_" + std::to_string(job.seed);
    outputs.curves[j] = dir / ("curve_" + tag + ".csv");
    outputs.weights[j] = dir / ("weights_" + tag + ".csv");
    write_curve_csv(results[j], outputs.curves[j]);
    write_weights_csv(results[j], outputs.weights[j]);
  });

  std::vector<SummaryRow> rows;
  std::size_t j = 0;
  for (auto s : config.strategies) {
    std::vector<std::vector<RoundReport>> runs;
    for (std::size_t i = 0; i < config.seeds.size(); ++i) runs.push_back(std::move(results[j++]));
    rows.push_back(summarize(std::string(to_string(s)), runs));
  }
  outputs.summary = std::filesystem::path(config.output_dir) / "summary.csv";
  write_summary_csv(rows, outputs.summary);
  return outputs;
}

Comparison compare_strategies(const std::vector<SummaryRow>& rows, const std::string& strategy_a,
                              const std::string& strategy_b) {
  auto find = [&](const std::string& name) -> const SummaryRow& {
    for (const auto& r : rows) {
      if (r.strategy == name) return r;
    }
    throw InvalidArgument("strategy '" + name + "' not found in summary");
  };
  Comparison c{find(strategy_a), find(strategy_b)};
  c.fairness = fairer_by_std(c.a.std, c.b.std);
  if (std::abs(c.a.avg - c.b.avg) < kFairnessTieTolerance) {
    c.average = AverageVerdict::tie;
  } else {
    c.average = c.a.avg > c.b.avg ? AverageVerdict::a_higher : AverageVerdict::b_higher;
  }
  return c;
}

void print_comparison(const Comparison& c, std::ostream& out) {
  out << c.a.strategy << ": avg=" << c.a.avg << " std=" << c.a.std << '\n';
  out << c.b.strategy << ": avg=" << c.b.avg << " std=" << c.b.std << '\n';
  out << "fairer (lower std): ";
  switch (c.fairness) {
    case FairnessVerdict::a_fairer: out << c.a.strategy; break;
    case FairnessVerdict::b_fairer: out << c.b.strategy; break;
    case FairnessVerdict::tie: out << "tie"; break;
  }
  out << "\nhigher average: ";
  switch (c.average) {
    case AverageVerdict::a_higher: out << c.a.strategy; break;
    case AverageVerdict::b_higher: out << c.b.strategy; break;
    case AverageVerdict::tie: out << "tie"; break;
  }
  out << '\n';
}

}  // namespace fedlwr
