#include "fedlwr/config.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>

#include "fedlwr/errors.hpp"
#include "fedlwr/nn.hpp"

namespace fedlwr {

namespace {

void reject_unknown(const YAML::Node& node, std::string_view section, const std::set<std::string>& known) {
  if (!node) return;
  if (!node.IsMap()) throw ConfigError("config section '" + std::string(section) + "' must be a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!known.contains(key)) {
      throw ConfigError("unknown config field '" + (section.empty() ? key : std::string(section) + "." + key) + "'");
    }
  }
}

template <typename T>
void read(const YAML::Node& section, const char* key, std::string_view section_name, T& out) {
  if (!section || !section[key]) return;
  try {
    out = section[key].as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError("config field '" + std::string(section_name) + "." + key + "' has the wrong type");
  }
}

}  // namespace

ExperimentConfig parse_config(std::string_view yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(yaml_text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config is not valid YAML: ") + e.what());
  }
  ExperimentConfig c;
  if (!root || root.IsNull()) return c;
  reject_unknown(root, "", {"experiment", "federation", "optimizer", "model", "data"});

  const auto exp = root["experiment"];
  reject_unknown(exp, "experiment", {"strategies", "seeds", "rounds", "output_dir"});
  if (exp && exp["strategies"]) {
    std::vector<std::string> names;
    read(exp, "strategies", "experiment", names);
    c.strategies.clear();
    for (const auto& n : names) {
      try {
        c.strategies.push_back(parse_strategy(n));
      } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("experiment.strategies: ") + e.what());
      }
    }
  }
  read(exp, "seeds", "experiment", c.seeds);
  read(exp, "rounds", "experiment", c.rounds);
  read(exp, "output_dir", "experiment", c.output_dir);

  const auto fed = root["federation"];
  reject_unknown(fed, "federation",
                 {"clients", "local_epochs", "cka_sample_size", "cka_split", "v2_layer", "reset_optimizer_each_round"});
  read(fed, "clients", "federation", c.clients);
  read(fed, "local_epochs", "federation", c.local_epochs);
  read(fed, "cka_sample_size", "federation", c.cka_sample_size);
  if (fed && fed["cka_split"]) {
    std::string split;
    read(fed, "cka_split", "federation", split);
    try {
      c.cka_split = parse_cka_split(split);
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("federation.cka_split: ") + e.what());
    }
  }
  read(fed, "v2_layer", "federation", c.v2_layer);
  read(fed, "reset_optimizer_each_round", "federation", c.reset_optimizer_each_round);

  const auto opt = root["optimizer"];
  reject_unknown(opt, "optimizer", {"lr", "weight_decay", "batch_size"});
  read(opt, "lr", "optimizer", c.lr);
  read(opt, "weight_decay", "optimizer", c.weight_decay);
  read(opt, "batch_size", "optimizer", c.batch_size);

  const auto model = root["model"];
  reject_unknown(model, "model", {"topology"});
  read(model, "topology", "model", c.topology);

  const auto data = root["data"];
  reject_unknown(data, "data", {"benchmark", "dataset_paths", "samples_per_client", "height", "width"});
  read(data, "benchmark", "data", c.benchmark);
  read(data, "dataset_paths", "data", c.dataset_paths);
  read(data, "samples_per_client", "data", c.samples_per_client);
  read(data, "height", "data", c.height);
  read(data, "width", "data", c.width);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string render_config(const ExperimentConfig& c) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;

  out << YAML::Key << "experiment" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "strategies" << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (auto s : c.strategies) out << std::string(to_string(s));
  out << YAML::EndSeq;
  out << YAML::Key << "seeds" << YAML::Value << YAML::Flow << c.seeds;
  out << YAML::Key << "rounds" << YAML::Value << c.rounds;
  out << YAML::Key << "output_dir" << YAML::Value << c.output_dir;
  out << YAML::EndMap;

  out << YAML::Key << "federation" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "clients" << YAML::Value << c.clients;
  out << YAML::Key << "local_epochs" << YAML::Value << c.local_epochs;
  out << YAML::Key << "cka_sample_size" << YAML::Value << c.cka_sample_size;
  out << YAML::Key << "cka_split" << YAML::Value << std::string(to_string(c.cka_split));
  out << YAML::Key << "v2_layer" << YAML::Value << c.v2_layer;
  out << YAML::Key << "reset_optimizer_each_round" << YAML::Value << c.reset_optimizer_each_round;
  out << YAML::EndMap;

  out << YAML::Key << "optimizer" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "lr" << YAML::Value << c.lr;
  out << YAML::Key << "weight_decay" << YAML::Value << c.weight_decay;
  out << YAML::Key << "batch_size" << YAML::Value << c.batch_size;
  out << YAML::EndMap;

  out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "topology" << YAML::Value << c.topology;
  out << YAML::EndMap;

  out << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "benchmark" << YAML::Value << c.benchmark;
  out << YAML::Key << "dataset_paths" << YAML::Value << YAML::Flow << c.dataset_paths;
  out << YAML::Key << "samples_per_client" << YAML::Value << c.samples_per_client;
  out << YAML::Key << "height" << YAML::Value << c.height;
  out << YAML::Key << "width" << YAML::Value << c.width;
  out << YAML::EndMap;

  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

void validate_config(const ExperimentConfig& c) {
  std::vector<std::string> problems;
  auto bad = [&](const std::string& field, const std::string& why) { problems.push_back(field + ": " + why); };

  if (c.strategies.empty()) bad("experiment.strategies", "must list at least one strategy");
  if (std::set<StrategyKind>(c.strategies.begin(), c.strategies.end()).size() != c.strategies.size()) {
    bad("experiment.strategies", "contains duplicates");
  }
  if (c.seeds.empty()) bad("experiment.seeds", "must be non-empty");
  if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size()) {
    bad("experiment.seeds", "contains duplicates");
  }
  if (c.rounds < 1) bad("experiment.rounds", "must be >= 1");
  if (c.output_dir.empty()) bad("experiment.output_dir", "must be set");
  if (c.clients < 1) bad("federation.clients", "must be >= 1");
  if (c.local_epochs < 1) bad("federation.local_epochs", "must be >= 1");
  if (c.cka_sample_size < 2) bad("federation.cka_sample_size", "must be >= 2");
  if (c.v2_layer < 0) bad("federation.v2_layer", "must be >= 0 (0 = middle layer)");
  if (!(c.lr > 0.0)) bad("optimizer.lr", "must be > 0");
  if (!(c.weight_decay >= 0.0)) bad("optimizer.weight_decay", "must be >= 0");
  if (c.batch_size < 1) bad("optimizer.batch_size", "must be >= 1");
  std::size_t layers = 0;
  try {
    layers = find_topology(c.topology).layers.size();
  } catch (const UnknownTopology&) {
    bad("model.topology", "unknown topology '" + c.topology + "'");
  }
  if (layers && c.v2_layer > static_cast<int>(layers)) {
    bad("federation.v2_layer", "exceeds the topology's " + std::to_string(layers) + " layers");
  }
  if (c.dataset_paths.empty()) {
    try {
      const auto domains = benchmark_domains(c.benchmark);
      if (static_cast<int>(domains.size()) != c.clients) {
        bad("federation.clients", "benchmark '" + c.benchmark + "' has " + std::to_string(domains.size()) + " clients");
      }
    } catch (const InvalidArgument&) {
      bad("data.benchmark", "unknown benchmark '" + c.benchmark + "'");
    }
    if (c.samples_per_client < 10) bad("data.samples_per_client", "must be >= 10");
    if (c.height < 8 || c.width < 8) bad("data.height/width", "must be >= 8");
  } else if (static_cast<int>(c.dataset_paths.size()) != c.clients) {
    bad("data.dataset_paths", "must list exactly federation.clients files");
  }

  if (!problems.empty()) {
    std::string msg = "invalid config:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
}

FederationConfig federation_config(const ExperimentConfig& c) {
  FederationConfig f;
  f.local_epochs = c.local_epochs;
  f.batch_size = c.batch_size;
  f.optimizer.lr = c.lr;
  f.optimizer.weight_decay = c.weight_decay;
  f.cka_sample_size = c.cka_sample_size;
  f.cka_split = c.cka_split;
  f.v2_layer = c.v2_layer;
  f.reset_optimizer_each_round = c.reset_optimizer_each_round;
  return f;
}

}  // namespace fedlwr
