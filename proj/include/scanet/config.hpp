#pragma once

#include "scanet/model.hpp"
#include "scanet/training.hpp"

namespace scanet {

struct DataConfig {
  double scale = kDefaultScale;
  double on_threshold = 15.0;  // watts
  int train_step = 2;
  int test_step = 2;
  double keep_prob = 1.0;
  int sae_periods = 1200;
};

// One experiment = model + training + data settings, loadable from a
// sectioned key=value file. CLI flags override file values.
struct ExperimentConfig {
  std::string arch = "scanet";
  ModelConfig model;
  TrainingConfig training;
  DataConfig data;

  static ExperimentConfig preset(const std::string& name);  // redd | ukdale | reduced
  static ExperimentConfig load(const std::string& path);
  void save(const std::string& path) const;
};

}  // namespace scanet
