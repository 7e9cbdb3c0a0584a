#pragma once

#include <string>

#include "gtrans/datasets.hpp"
#include "gtrans/model.hpp"
#include "gtrans/training.hpp"

namespace gtrans {

struct TrainResult {
  TrainLog log;
  int best_epoch = -1;
  Scalar best_val_loss = 0;
  int64_t total_steps = 0;
  std::string checkpoint_path;  // empty when no checkpoint_dir was configured
};

// Mini-batch Adam over the distillation loss with the exponential learning
// rate schedule. Selects the lowest-validation-loss parameters, restores them
// into the model, and writes them as a checkpoint when a directory is set.
// The frozen guide is never touched.
TrainResult train(GTransModel& model, const DatasetSplit& data, const TrainConfig& config,
                  const PreprocessConfig& preprocess, const std::string& run_config_json = "{}");

}  // namespace gtrans
