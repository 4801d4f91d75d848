#pragma once

#include "scanet/data.hpp"
#include "scanet/model.hpp"

namespace scanet {

struct MetricsReport {
  std::string appliance;
  double mae = 0.0;  // watts
  double sae = 0.0;  // watts
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int n_periods = 0;
  int64_t period_len = 0;
};

double mae(std::span<const double> pred, std::span<const double> truth);

// (1/N) sum_tau |r_tau - r_hat_tau| / M with M = T/N; the trailing partial
// period is dropped.
double sae(std::span<const double> pred, std::span<const double> truth, int n_periods);

struct F1Result {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

// probabilities >= threshold count as on
F1Result f1_from_states(std::span<const double> probabilities, std::span<const uint8_t> truth,
                        double threshold = 0.5);

// Average per-window predictions into one sequence of length total_len.
// starts[i] is the absolute index of window i's first predicted step; steps
// covered by no window stay 0.
std::vector<double> overlap_average(int64_t total_len, int out_len,
                                    const std::vector<int64_t>& starts,
                                    const std::vector<std::vector<double>>& window_preds);

// Overlap-averaged full-sequence inference with stride spec.test_step (plus a
// final flush window against the end). Regression models return watts clamped
// at 0; classifier-only models return on-probabilities; seq2point predictions
// land on window midpoints.
std::vector<double> infer_full(const Model& model, std::span<const double> aggregate_watts,
                               const WindowSpec& spec, double scale, int batch = 32);

// flat key=value record
void write_report(const std::string& path, const MetricsReport& report);
MetricsReport read_report(const std::string& path);
// one row per run; writes the header if the file does not exist yet
void append_report_csv(const std::string& path, const MetricsReport& report);

}  // namespace scanet
