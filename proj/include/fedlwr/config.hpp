#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fedlwr/fedsim.hpp"

namespace fedlwr {

// Experiment description. The on-disk form is YAML with the sections
// experiment / federation / optimizer / model / data.
struct ExperimentConfig {
  std::vector<StrategyKind> strategies{StrategyKind::fedavg, StrategyKind::fed_lwr};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  int rounds = 50;
  std::string output_dir = "results";

  int clients = 4;
  int local_epochs = 1;
  std::size_t cka_sample_size = 64;
  CkaSplit cka_split = CkaSplit::train;
  int v2_layer = 2;
  bool reset_optimizer_each_round = false;

  double lr = 1e-3;
  double weight_decay = 1e-4;
  std::size_t batch_size = 8;

  std::string topology = "tinyseg4";

  std::string benchmark = "shift4";
  std::vector<std::string> dataset_paths;  // overrides benchmark when non-empty
  std::size_t samples_per_client = 100;
  std::size_t height = 16;
  std::size_t width = 16;

  bool operator==(const ExperimentConfig&) const = default;
};

ExperimentConfig parse_config(std::string_view yaml_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string render_config(const ExperimentConfig& config);

// Throws ConfigError listing every invalid field by name.
void validate_config(const ExperimentConfig& config);

FederationConfig federation_config(const ExperimentConfig& config);

}  // namespace fedlwr
