#pragma once

#include <optional>

#include "scanet/analysis.hpp"
#include "scanet/checkpoint.hpp"
#include "scanet/config.hpp"
#include "scanet/metrics.hpp"
#include "scanet/sim.hpp"

namespace scanet {

// ---- in-process cores (shared by CLI commands and the acceptance suite) ----

// Ingest + align + normalize + window + subsample for one appliance across
// all training houses. Sample t0 values are globally unique across sections.
std::vector<Sample> prepare_samples(const DatasetManifest& manifest, const std::string& appliance,
                                    const ModelConfig& model_cfg, const DataConfig& data_cfg,
                                    uint64_t subsample_seed);

struct HouseEval {
  MetricsReport report;
  std::vector<double> predicted;       // concatenated over sections (watts or probabilities)
  std::vector<double> truth_watts;     // concatenated over sections
  std::vector<uint8_t> truth_states;
};

// Full-sequence inference on one house plus the metric battery.
HouseEval evaluate_on_house(const Model& model, const DatasetManifest& manifest, int house_id,
                            const std::string& appliance, const DataConfig& data_cfg,
                            int sae_periods);

ModelConfig arch_model_config(const std::string& arch, ModelConfig base);

// ---- CLI commands (throw Error on failure) ----------------------------------

void cmd_simulate(const std::string& spec_path, const std::string& out_dir,
                  std::optional<uint64_t> seed);

void cmd_prepare(const std::string& manifest_path, const std::string& appliance,
                 const std::string& out_dir, const ExperimentConfig& cfg);

struct TrainOptions {
  bool adversarial = false;
  std::optional<AugmentSpec> augment;
  std::optional<uint64_t> seed;
};
void cmd_train(const std::string& arch, const std::string& data_dir, ExperimentConfig cfg,
               const std::string& out_ckpt, const TrainOptions& opts);

void cmd_disaggregate(const std::string& ckpt_path, const std::string& mains_path,
                      const std::string& out_csv, std::optional<int> stride);

struct EvaluateOptions {
  std::optional<int> sae_periods;
  double on_threshold = 15.0;
  bool pred_is_prob = false;
  std::string append_csv;  // optional aggregate CSV
};
void cmd_evaluate(const std::string& pred_csv, const std::string& truth_path,
                  const std::string& report_path, const EvaluateOptions& opts);

struct ExportOptions {
  std::string what;        // attention | features | bypass | pca
  int window_index = 0;
  bool center_crop = false;
  std::string mains_path;  // attention/features/bypass input
  std::string data_dir;    // pca input (prepared samples)
};
void cmd_export(const std::string& ckpt_path, const std::string& out_dir,
                const ExportOptions& opts);

struct AblateOptions {
  std::string grid = "ms,sa,al,oa";
  int seeds = 3;
};
void cmd_ablate(const std::string& manifest_path, const std::string& appliance,
                const ExperimentConfig& cfg, const std::string& out_csv,
                const AblateOptions& opts);

}  // namespace scanet
