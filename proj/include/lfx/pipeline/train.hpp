#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "lfx/model/network.hpp"
#include "lfx/pipeline/dataset.hpp"

namespace lfx::pipeline {

struct TrainConfig {
  std::size_t batch_size = 8;  // 8 for SSR, 4 for ASR
  double lr = 2e-4;
  std::size_t lr_period = 15;  // epochs per halving
  std::size_t epochs = 80;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t patch = 64;      // HR patch size (64 for x2, 128 for x4)
  std::size_t steps_per_epoch = 0;  // 0: one pass over the training set
  std::size_t max_steps = 0;        // 0: no limit
  double stop_loss = 0.0;           // stop after the first step with loss below this
  bool augment = true;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;    // empty: keep everything in memory

  void validate(std::size_t alpha = 1) const;
};

TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& c);

struct StepLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
  double val_psnr = 0.0;  // NaN when there is no validation set
};

struct TrainResult {
  std::vector<StepLog> steps;
  std::vector<EpochLog> epochs;
};

// Stacks light fields [C, U, V, Y, X] into a batch tensor [N, C, U, V, Y, X].
ad::Tensor<float> stack_batch(const std::vector<const LightField4D<double>*>& items);

// Angular positions fed to the network that evaluation must skip: the
// sparse input views for ASR, none for SSR.
std::set<std::pair<std::size_t, std::size_t>> input_views(const model::NetworkConfig& cfg);

// Mean PSNR of channel 0 over views (ASR inputs excluded), then over scenes.
double validation_psnr(const model::Network<float>& net, const std::vector<LfPair>& val);

using StepCallback = std::function<void(const StepLog&)>;

// L1 loss, Adam, step-wise lr halving every lr_period epochs. Deterministic
// for a given seed. When out_dir is set, writes loss.csv, val.csv and a
// checkpoint per epoch. A non-finite loss aborts with NumericError.
TrainResult train(model::Network<float>& net, const std::vector<LfPair>& train_set,
                  const std::vector<LfPair>& val_set, const TrainConfig& cfg,
                  const StepCallback& on_step = {});

// Checkpoint metadata: network config plus optional extras.
nlohmann::json checkpoint_model_json(const model::NetworkConfig& cfg);
void save_network(const std::filesystem::path& path, const model::Network<float>& net);
model::Network<float> load_network(const std::filesystem::path& path);

}  // namespace lfx::pipeline
