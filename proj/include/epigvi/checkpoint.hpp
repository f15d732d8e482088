#pragma once

#include <string>

#include "epigvi/flow.hpp"

namespace epigvi {

struct TrainMeta {
  int epoch = 0;
  double train_loss = std::numeric_limits<double>::quiet_NaN();
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  long sims_used = 0;
  std::string stop_reason;
};

/// Versioned JSON checkpoint: architecture hyperparameters with their hash,
/// training metadata and all parameter tensors at full double precision.
void save_checkpoint(const FlowModel& model, const TrainMeta& meta,
                     const std::string& path);

/// Loads a checkpoint. Refuses files whose stored architecture hash does not
/// match the architecture section (ConfigError).
FlowModel load_checkpoint(const std::string& path, TrainMeta* meta = nullptr);

}  // namespace epigvi
