#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "scanet/common.hpp"
#include "scanet/rng.hpp"

namespace scanet {

// power values divided by the aggregate standard deviation
constexpr double kDefaultScale = 612.0;

struct TimeSeries {
  std::vector<int64_t> timestamps;  // epoch seconds, strictly increasing
  std::vector<double> values;       // watts, >= 0

  size_t size() const { return timestamps.size(); }
  bool empty() const { return timestamps.empty(); }
  void validate() const;
};

// Channel files are "epoch_seconds<space>watts" lines (REDD/UK-DALE layout).
TimeSeries load_channel(const std::string& path);
void save_channel(const std::string& path, const TimeSeries& series);

struct AlignedSection {
  int64_t start_time = 0;  // epoch seconds of the first grid point
  std::vector<double> mains;
  std::vector<double> appliance;
};

// Forward-fill both series onto a shared grid with the given period. Gaps
// longer than gap_limit periods split the output into separate sections.
std::vector<AlignedSection> align_and_resample(const TimeSeries& mains,
                                               const TimeSeries& appliance, int64_t period,
                                               int64_t gap_limit = 10);

std::vector<double> normalize(std::span<const double> watts, double scale = kDefaultScale);
std::vector<double> denormalize(std::span<const double> values, double scale = kDefaultScale);

struct WindowSpec {
  int s = 64;
  int w = 400;
  int train_step = 2;
  int test_step = 2;
  void validate() const;
};

// offsets are in normalized units; e.g. 0.1 corresponds to 61.2 W
struct AugmentSpec {
  double e_minus = 0.0;  // <= 0
  double e_plus = 0.0;   // >= 0
  bool enabled() const { return e_minus != 0.0 || e_plus != 0.0; }
  void validate() const;
};

struct Sample {
  std::vector<double> x;   // normalized aggregate, length s + 2w
  std::vector<double> y;   // normalized appliance, length s
  std::vector<uint8_t> o;  // on/off states, length s
  int64_t t0 = 0;          // absolute index of y[0] in the source section
};

std::vector<uint8_t> derive_on_off(std::span<const double> watts, double threshold);

// Sliding windows with stride spec.train_step; x windows are zero-padded at
// the series edges, y/o windows stay inside the series.
std::vector<Sample> make_windows(std::span<const double> aggregate_norm,
                                 std::span<const double> appliance_norm,
                                 std::span<const uint8_t> on_states, const WindowSpec& spec);

// Samples whose o is entirely zero are kept with probability keep_prob.
// Per-sample counter RNG keyed on t0, so the result is order-independent.
std::vector<Sample> subsample_off_state(std::vector<Sample> samples, double keep_prob,
                                        uint64_t seed);

// y += e*o and the central s steps of x += e*o; x is clamped at 0 (power
// cannot go negative). o is unchanged.
Sample apply_on_state_offset(Sample sample, double e);
// draws e ~ U(e_minus, e_plus) once per call
Sample on_state_augment(Sample sample, const AugmentSpec& aug, RandomStream& rng);

// ---- dataset manifest ------------------------------------------------------

struct ApplianceEntry {
  double on_threshold = 15.0;  // watts
  double keep_prob = 1.0;
  int train_step = 2;
  AugmentSpec augment;
};

struct HouseEntry {
  int id = 0;
  std::string mains_path;
  std::map<std::string, std::string> appliance_paths;
};

// Text manifest (key = value) naming houses, channel paths, thresholds and
// subsampling probabilities. Paths are resolved relative to the manifest file.
struct DatasetManifest {
  double scale = kDefaultScale;
  int64_t period = 1;      // seconds per grid step
  int64_t gap_limit = 10;  // periods
  std::vector<HouseEntry> houses;
  std::map<std::string, ApplianceEntry> appliances;
  std::vector<int> train_houses;
  std::vector<int> test_houses;

  const HouseEntry& house(int id) const;
  static DatasetManifest load(const std::string& path);
  void save(const std::string& path) const;
};

// ---- prepared sample files ---------------------------------------------------

void write_samples(const std::string& path, const std::vector<Sample>& samples, int s, int w);
std::vector<Sample> read_samples(const std::string& path, int* s_out = nullptr,
                                 int* w_out = nullptr);

// ---- paper defaults ----------------------------------------------------------

// off-state keep probabilities; 1.0 unless the paper lists a value
double default_keep_prob(const std::string& dataset, const std::string& appliance);
// training strides: 2 for redd, per-appliance values for ukdale
int default_train_step(const std::string& dataset, const std::string& appliance);
// on-state augmentation offsets used for the regression models
AugmentSpec default_augment(const std::string& dataset, const std::string& appliance);
// offsets for the classification-only (partial ground truth) setting
AugmentSpec default_augment_classifier(const std::string& appliance);

}  // namespace scanet
