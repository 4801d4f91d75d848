#include "scanet/sim.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace scanet {

void ApplianceSpec::validate() const {
  if (name.empty()) throw Error("appliance spec: name is empty");
  if (modes.empty()) throw Error("appliance spec '" + name + "': needs at least one mode");
  for (const auto& m : modes) {
    if (m.on_power <= 0.0) throw Error("appliance spec '" + name + "': powers must be positive");
    if (m.duration_min < 1 || m.duration_max < m.duration_min) {
      throw Error("appliance spec '" + name + "': bad duration range");
    }
    if (m.pattern == DutyPattern::kMultiStage && m.stages < 1) {
      throw Error("appliance spec '" + name + "': stages must be >= 1");
    }
  }
  if (gap_min < 1 || gap_max < gap_min) {
    throw Error("appliance spec '" + name + "': bad gap range");
  }
}

void HouseholdSpec::validate() const {
  if (length < 1) throw Error("household spec: length must be >= 1");
  if (noise_std < 0.0) throw Error("household spec: noise_std must be >= 0");
  if (period < 1) throw Error("household spec: period must be >= 1");
  for (const auto& a : appliances) a.validate();
}

namespace {

int64_t draw_range(RandomStream& rng, int64_t lo, int64_t hi) {
  return lo + rng.uniform_int(hi - lo + 1);
}

void run_appliance(const ApplianceSpec& spec, int64_t length, RandomStream& rng,
                   std::vector<double>& watts) {
  watts.assign(static_cast<size_t>(length), 0.0);
  int64_t t = 0;
  // phase offset so appliances do not all start at step 0
  t += rng.uniform_int(spec.gap_max);
  while (t < length) {
    const auto& mode = spec.modes[static_cast<size_t>(rng.uniform_int(
        static_cast<int64_t>(spec.modes.size())))];
    const int stages = mode.pattern == DutyPattern::kMultiStage ? mode.stages : 1;
    for (int st = 0; st < stages && t < length; ++st) {
      const int64_t dur = draw_range(rng, mode.duration_min, mode.duration_max);
      for (int64_t i = 0; i < dur && t < length; ++i, ++t) {
        watts[static_cast<size_t>(t)] = mode.on_power;
      }
      if (st + 1 < stages) t += draw_range(rng, mode.pause_min, mode.pause_max);
    }
    t += draw_range(rng, spec.gap_min, spec.gap_max);
  }
}

}  // namespace

SimResult simulate(const HouseholdSpec& spec) {
  spec.validate();
  SimResult out;
  const int64_t n = spec.length;

  std::vector<std::vector<double>> truths(spec.appliances.size());
  for (size_t i = 0; i < spec.appliances.size(); ++i) {
    RandomStream rng(derive_seed(spec.seed, i + 1));
    run_appliance(spec.appliances[i], n, rng, truths[i]);
  }

  RandomStream noise(derive_seed(spec.seed, 0));
  std::vector<int64_t> stamps(static_cast<size_t>(n));
  for (int64_t t = 0; t < n; ++t) stamps[static_cast<size_t>(t)] = spec.start_time + t * spec.period;

  std::vector<double> agg(static_cast<size_t>(n), 0.0);
  for (int64_t t = 0; t < n; ++t) {
    double v = spec.unmetered_base;
    for (const auto& tr : truths) v += tr[static_cast<size_t>(t)];
    if (spec.noise_std > 0.0) v += noise.normal(0.0, spec.noise_std);
    agg[static_cast<size_t>(t)] = std::max(0.0, v);
  }

  out.aggregate.timestamps = stamps;
  out.aggregate.values = std::move(agg);
  for (size_t i = 0; i < truths.size(); ++i) {
    TimeSeries ts;
    ts.timestamps = stamps;
    ts.values = std::move(truths[i]);
    std::vector<uint8_t> on(ts.values.size());
    for (size_t t = 0; t < ts.values.size(); ++t) on[t] = ts.values[t] > 0.0 ? 1 : 0;
    out.on_states.push_back(std::move(on));
    out.appliance_truth.push_back(std::move(ts));
  }
  return out;
}

ApplianceSpec preset_fridge(double on_power) {
  ApplianceSpec a;
  a.name = "fridge";
  ApplianceMode m;
  m.on_power = on_power;
  m.duration_min = 40;
  m.duration_max = 80;
  m.pattern = DutyPattern::kCyclic;
  a.modes = {m};
  a.gap_min = 60;
  a.gap_max = 120;
  return a;
}

ApplianceSpec preset_microwave(double on_power) {
  ApplianceSpec a;
  a.name = "microwave";
  ApplianceMode m;
  m.on_power = on_power;
  m.duration_min = 2;
  m.duration_max = 8;
  m.pattern = DutyPattern::kSinglePulse;
  a.modes = {m};
  a.gap_min = 400;
  a.gap_max = 1600;
  return a;
}

ApplianceSpec preset_dishwasher_multimode(double power_scale) {
  ApplianceSpec a;
  a.name = "dishwasher";
  for (double power : {800.0, 1200.0, 1800.0, 2400.0}) {
    ApplianceMode m;
    m.on_power = power * power_scale;
    m.duration_min = 40;
    m.duration_max = 70;
    m.pattern = DutyPattern::kMultiStage;
    m.stages = 3;
    m.pause_min = 5;
    m.pause_max = 12;
    a.modes.push_back(m);
  }
  a.gap_min = 1200;
  a.gap_max = 2600;
  return a;
}

ApplianceSpec preset_by_name(const std::string& token) {
  std::string name = token;
  std::string arg;
  const auto colon = token.find(':');
  if (colon != std::string::npos) {
    name = token.substr(0, colon);
    arg = token.substr(colon + 1);
  }
  if (name == "fridge") return preset_fridge(arg.empty() ? 120.0 : std::stod(arg));
  if (name == "microwave") return preset_microwave(arg.empty() ? 1200.0 : std::stod(arg));
  if (name == "dishwasher4" || name == "dishwasher") {
    return preset_dishwasher_multimode(arg.empty() ? 1.0 : std::stod(arg));
  }
  throw Error("unknown appliance preset '" + token + "'");
}

void write_household(const std::string& dir, const HouseholdSpec& spec, const SimResult& result) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);
  save_channel((base / "mains.dat").string(), result.aggregate);
  for (size_t i = 0; i < spec.appliances.size(); ++i) {
    save_channel((base / (spec.appliances[i].name + ".dat")).string(),
                 result.appliance_truth[i]);
  }
}

SimSpecFile SimSpecFile::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open sim spec '" + path + "'");
  SimSpecFile out;
  SimSpecFile::House* current = nullptr;
  std::string line;
  int64_t line_no = 0;
  auto trim = [](const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
  };
  while (std::getline(is, line)) {
    ++line_no;
    const std::string text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    if (text.front() == '[' && text.back() == ']') {
      const std::string section = text.substr(1, text.size() - 2);
      if (section.rfind("household.", 0) != 0) {
        throw Error("sim spec: unknown section '" + section + "' at line " +
                    std::to_string(line_no));
      }
      SimSpecFile::House h;
      h.id = std::stoi(section.substr(10));
      out.houses.push_back(h);
      current = &out.houses.back();
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw Error("sim spec: expected key=value at line " + std::to_string(line_no));
    }
    const std::string key = trim(text.substr(0, eq));
    const std::string value = trim(text.substr(eq + 1));
    if (key == "train.houses" || key == "test.houses") {
      std::vector<int>& ids = key[1] == 'r' ? out.train_houses : out.test_houses;
      std::stringstream ss(value);
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) ids.push_back(std::stoi(tok));
      }
      continue;
    }
    if (key == "on_threshold") {
      out.on_threshold = std::stod(value);
      continue;
    }
    if (!current) {
      throw Error("sim spec: key '" + key + "' outside a [household.N] section at line " +
                  std::to_string(line_no));
    }
    if (key == "length") current->spec.length = std::stoll(value);
    else if (key == "noise_std") current->spec.noise_std = std::stod(value);
    else if (key == "unmetered_base") current->spec.unmetered_base = std::stod(value);
    else if (key == "seed") current->spec.seed = std::stoull(value);
    else if (key == "period") current->spec.period = std::stoll(value);
    else if (key.rfind("appliance.", 0) == 0) {
      ApplianceSpec a = preset_by_name(value);
      a.name = key.substr(10);
      current->spec.appliances.push_back(std::move(a));
    } else {
      throw Error("sim spec: unknown key '" + key + "' at line " + std::to_string(line_no));
    }
  }
  if (out.houses.empty()) throw Error("sim spec: no [household.N] sections in '" + path + "'");
  return out;
}

}  // namespace scanet
