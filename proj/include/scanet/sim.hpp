#pragma once

#include "scanet/data.hpp"

namespace scanet {

enum class DutyPattern { kSinglePulse, kCyclic, kMultiStage };

struct ApplianceMode {
  double on_power = 0.0;  // watts
  int duration_min = 1;   // on-steps per pulse / per stage
  int duration_max = 1;
  DutyPattern pattern = DutyPattern::kSinglePulse;
  int stages = 3;      // multi-stage only
  int pause_min = 5;   // off-steps between stages
  int pause_max = 12;
};

struct ApplianceSpec {
  std::string name;
  std::vector<ApplianceMode> modes;  // one is drawn uniformly per event
  int gap_min = 1;  // off-steps between events
  int gap_max = 1;
  void validate() const;
};

struct HouseholdSpec {
  std::vector<ApplianceSpec> appliances;
  double unmetered_base = 0.0;  // watts, constant
  double noise_std = 0.0;       // watts, Gaussian
  int64_t length = 0;           // steps
  uint64_t seed = 0;
  int64_t period = 1;                 // seconds per step
  int64_t start_time = 1600000000;    // epoch seconds of step 0
  void validate() const;
};

struct SimResult {
  TimeSeries aggregate;
  std::vector<TimeSeries> appliance_truth;       // aligned with spec.appliances
  std::vector<std::vector<uint8_t>> on_states;   // simulator's internal state
};

// x_t = sum_i y_t^i + u + eps_t, clamped at 0; deterministic per seed.
SimResult simulate(const HouseholdSpec& spec);

// cyclic low-power pattern
ApplianceSpec preset_fridge(double on_power = 120.0);
// sparse short high-power pulses
ApplianceSpec preset_microwave(double on_power = 1200.0);
// four distinct power levels, each event a multi-stage profile
ApplianceSpec preset_dishwasher_multimode(double power_scale = 1.0);

// "fridge", "fridge:150", "microwave", "microwave:900", "dishwasher4",
// "dishwasher4:1.25" (power scale)
ApplianceSpec preset_by_name(const std::string& token);

// writes <dir>/mains.dat and <dir>/<appliance>.dat
void write_household(const std::string& dir, const HouseholdSpec& spec, const SimResult& result);

// Household spec file: [household.N] sections with length/noise/seed keys and
// appliance.<name> = <preset token> entries, plus train.houses/test.houses.
struct SimSpecFile {
  struct House {
    int id = 0;
    HouseholdSpec spec;
  };
  std::vector<House> houses;
  std::vector<int> train_houses;
  std::vector<int> test_houses;
  double on_threshold = 15.0;  // written into the generated manifest

  static SimSpecFile load(const std::string& path);
};

}  // namespace scanet
