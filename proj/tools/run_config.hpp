#pragma once

// Resolved configuration of a CLI run: JSON file, then key=value overrides,
// then the dedicated flags. Every command writes the result next to its
// outputs so the run can be replayed.

#include <string>
#include <vector>

#include "cvc/data.hpp"
#include "cvc/model.hpp"
#include "cvc/train.hpp"
#include "json.hpp"

namespace cvc::cli {

struct RunConfig {
  SyntheticSpec data;
  ModelConfig model;
  TrainConfig pretrain, finetune, sweep;
  std::vector<double> sweep_lambdas{0.1, 1.0, 10.0};

  RunConfig();

  // Keys are "<section>.<field>" for sections data, model, pretrain,
  // finetune and sweep; "sweep.lambdas" takes a comma-separated list.
  void set(const std::string& key, const std::string& value);
  void apply_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  // Propagates one seed to the generator, the model and every phase.
  void set_seed(std::uint64_t seed);
};

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);

}  // namespace cvc::cli
