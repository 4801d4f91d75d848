#include "scanet/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace scanet {

void TimeSeries::validate() const {
  if (timestamps.size() != values.size()) {
    throw Error("time series: timestamp/value length mismatch");
  }
  for (size_t i = 1; i < timestamps.size(); ++i) {
    if (timestamps[i] <= timestamps[i - 1]) {
      throw Error("time series: non-monotone timestamp at index " + std::to_string(i));
    }
  }
}

TimeSeries load_channel(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open channel file '" + path + "'");
  TimeSeries out;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const char* p = line.c_str();
    char* end = nullptr;
    const long long ts = std::strtoll(p, &end, 10);
    if (end == p || (*end != ' ' && *end != '\t')) {
      throw Error("parse error at line " + std::to_string(line_no) + " of '" + path + "'");
    }
    const char* vp = end;
    const double watts = std::strtod(vp, &end);
    if (end == vp) {
      throw Error("parse error at line " + std::to_string(line_no) + " of '" + path + "'");
    }
    if (!out.timestamps.empty() && ts <= out.timestamps.back()) {
      throw Error("non-monotone timestamp at line " + std::to_string(line_no) + " of '" + path +
                  "'");
    }
    out.timestamps.push_back(ts);
    out.values.push_back(watts);
  }
  return out;
}

void save_channel(const std::string& path, const TimeSeries& series) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  char buf[64];
  for (size_t i = 0; i < series.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%lld %.17g\n",
                  static_cast<long long>(series.timestamps[i]), series.values[i]);
    os << buf;
  }
  if (!os) throw Error("write failed for '" + path + "'");
}

std::vector<AlignedSection> align_and_resample(const TimeSeries& mains,
                                               const TimeSeries& appliance, int64_t period,
                                               int64_t gap_limit) {
  if (period < 1) throw Error("align: period must be >= 1 second");
  mains.validate();
  appliance.validate();
  if (mains.empty() || appliance.empty()) return {};
  const int64_t start = std::max(mains.timestamps.front(), appliance.timestamps.front());
  const int64_t stop = std::min(mains.timestamps.back(), appliance.timestamps.back());
  if (start > stop) throw Error("align: series do not overlap in time");

  const int64_t max_age = gap_limit * period;
  std::vector<AlignedSection> sections;
  AlignedSection current;
  size_t im = 0, ia = 0;
  for (int64_t t = start; t <= stop; t += period) {
    while (im + 1 < mains.size() && mains.timestamps[im + 1] <= t) ++im;
    while (ia + 1 < appliance.size() && appliance.timestamps[ia + 1] <= t) ++ia;
    const bool stale = mains.timestamps[im] > t || t - mains.timestamps[im] > max_age ||
                       appliance.timestamps[ia] > t || t - appliance.timestamps[ia] > max_age;
    if (stale) {
      if (!current.mains.empty()) {
        sections.push_back(std::move(current));
        current = AlignedSection{};
      }
      continue;
    }
    if (current.mains.empty()) current.start_time = t;
    current.mains.push_back(mains.values[im]);
    current.appliance.push_back(appliance.values[ia]);
  }
  if (!current.mains.empty()) sections.push_back(std::move(current));
  return sections;
}

std::vector<double> normalize(std::span<const double> watts, double scale) {
  if (scale <= 0.0) throw Error("normalize: scale must be positive");
  std::vector<double> out(watts.size());
  for (size_t i = 0; i < watts.size(); ++i) out[i] = watts[i] / scale;
  return out;
}

std::vector<double> denormalize(std::span<const double> values, double scale) {
  if (scale <= 0.0) throw Error("denormalize: scale must be positive");
  std::vector<double> out(values.size());
  for (size_t i = 0; i < values.size(); ++i) out[i] = values[i] * scale;
  return out;
}

void WindowSpec::validate() const {
  if (s < 1) throw Error("window spec: s must be >= 1");
  if (w < 0) throw Error("window spec: w must be >= 0");
  if (train_step < 1 || test_step < 1) throw Error("window spec: strides must be >= 1");
}

void AugmentSpec::validate() const {
  if (e_minus > 0.0 || e_plus < 0.0) {
    throw Error("augment spec: requires e_minus <= 0 <= e_plus");
  }
}

std::vector<uint8_t> derive_on_off(std::span<const double> watts, double threshold) {
  if (threshold < 0.0) throw Error("derive_on_off: threshold must be >= 0");
  std::vector<uint8_t> out(watts.size());
  for (size_t i = 0; i < watts.size(); ++i) out[i] = watts[i] > threshold ? 1 : 0;
  return out;
}

std::vector<Sample> make_windows(std::span<const double> aggregate_norm,
                                 std::span<const double> appliance_norm,
                                 std::span<const uint8_t> on_states, const WindowSpec& spec) {
  spec.validate();
  const int64_t len = static_cast<int64_t>(aggregate_norm.size());
  if (static_cast<int64_t>(appliance_norm.size()) != len ||
      static_cast<int64_t>(on_states.size()) != len) {
    throw Error("make_windows: arrays must be aligned");
  }
  if (len < spec.s) {
    throw Error("make_windows: series length " + std::to_string(len) + " shorter than s=" +
                std::to_string(spec.s));
  }
  std::vector<Sample> out;
  const int64_t x_len = spec.s + 2 * static_cast<int64_t>(spec.w);
  for (int64_t t0 = 0; t0 + spec.s <= len; t0 += spec.train_step) {
    Sample sm;
    sm.t0 = t0;
    sm.x.assign(x_len, 0.0);
    for (int64_t i = 0; i < x_len; ++i) {
      const int64_t src = t0 - spec.w + i;
      if (src >= 0 && src < len) sm.x[i] = aggregate_norm[src];
    }
    sm.y.assign(appliance_norm.begin() + t0, appliance_norm.begin() + t0 + spec.s);
    sm.o.assign(on_states.begin() + t0, on_states.begin() + t0 + spec.s);
    out.push_back(std::move(sm));
  }
  return out;
}

std::vector<Sample> subsample_off_state(std::vector<Sample> samples, double keep_prob,
                                        uint64_t seed) {
  if (keep_prob <= 0.0 || keep_prob > 1.0) {
    throw Error("subsample_off_state: keep_prob must be in (0, 1]");
  }
  if (keep_prob == 1.0) return samples;
  std::vector<Sample> out;
  out.reserve(samples.size());
  for (auto& s : samples) {
    const bool all_off = std::all_of(s.o.begin(), s.o.end(), [](uint8_t v) { return v == 0; });
    if (all_off) {
      RandomStream rng(derive_seed(seed, static_cast<uint64_t>(s.t0)));
      if (rng.uniform() >= keep_prob) continue;
    }
    out.push_back(std::move(s));
  }
  return out;
}

Sample apply_on_state_offset(Sample sample, double e) {
  const int64_t s = static_cast<int64_t>(sample.y.size());
  const int64_t w = (static_cast<int64_t>(sample.x.size()) - s) / 2;
  for (int64_t i = 0; i < s; ++i) {
    if (!sample.o[i]) continue;
    sample.y[i] += e;
    sample.x[w + i] = std::max(0.0, sample.x[w + i] + e);
  }
  return sample;
}

Sample on_state_augment(Sample sample, const AugmentSpec& aug, RandomStream& rng) {
  aug.validate();
  if (!aug.enabled()) return sample;
  return apply_on_state_offset(std::move(sample), rng.uniform(aug.e_minus, aug.e_plus));
}

// ---- manifest ----------------------------------------------------------------

namespace {

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stoi(tok));
  }
  return out;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

}  // namespace

const HouseEntry& DatasetManifest::house(int id) const {
  for (const auto& h : houses) {
    if (h.id == id) return h;
  }
  throw Error("manifest: unknown house " + std::to_string(id));
}

DatasetManifest DatasetManifest::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open manifest '" + path + "'");
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  auto resolve = [&](const std::string& rel) {
    std::filesystem::path p(rel);
    return p.is_absolute() ? p.string() : (base / p).string();
  };

  DatasetManifest m;
  std::map<int, HouseEntry> houses;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw Error("manifest: expected key=value at line " + std::to_string(line_no));
    }
    const std::string key = trim(text.substr(0, eq));
    const std::string value = trim(text.substr(eq + 1));
    std::vector<std::string> parts;
    {
      std::stringstream ss(key);
      std::string tok;
      while (std::getline(ss, tok, '.')) parts.push_back(tok);
    }
    if (key == "scale") m.scale = std::stod(value);
    else if (key == "period") m.period = std::stoll(value);
    else if (key == "gap_limit") m.gap_limit = std::stoll(value);
    else if (key == "train.houses") m.train_houses = parse_int_list(value);
    else if (key == "test.houses") m.test_houses = parse_int_list(value);
    else if (parts.size() >= 3 && parts[0] == "house") {
      const int id = std::stoi(parts[1]);
      houses[id].id = id;
      if (parts[2] == "mains") houses[id].mains_path = resolve(value);
      else if (parts[2] == "appliance" && parts.size() == 4) {
        houses[id].appliance_paths[parts[3]] = resolve(value);
      } else {
        throw Error("manifest: unknown key '" + key + "' at line " + std::to_string(line_no));
      }
    } else if (parts.size() == 3 && parts[0] == "appliance") {
      ApplianceEntry& a = m.appliances[parts[1]];
      if (parts[2] == "on_threshold") a.on_threshold = std::stod(value);
      else if (parts[2] == "keep_prob") a.keep_prob = std::stod(value);
      else if (parts[2] == "train_step") a.train_step = std::stoi(value);
      else if (parts[2] == "augment_min") a.augment.e_minus = std::stod(value);
      else if (parts[2] == "augment_max") a.augment.e_plus = std::stod(value);
      else throw Error("manifest: unknown key '" + key + "' at line " + std::to_string(line_no));
    } else {
      throw Error("manifest: unknown key '" + key + "' at line " + std::to_string(line_no));
    }
  }
  for (auto& [id, h] : houses) m.houses.push_back(std::move(h));
  return m;
}

void DatasetManifest::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os << "scale = " << fmt17(scale) << "\n";
  os << "period = " << period << "\n";
  os << "gap_limit = " << gap_limit << "\n";
  for (const auto& h : houses) {
    os << "house." << h.id << ".mains = " << h.mains_path << "\n";
    for (const auto& [name, p] : h.appliance_paths) {
      os << "house." << h.id << ".appliance." << name << " = " << p << "\n";
    }
  }
  for (const auto& [name, a] : appliances) {
    os << "appliance." << name << ".on_threshold = " << fmt17(a.on_threshold) << "\n";
    os << "appliance." << name << ".keep_prob = " << fmt17(a.keep_prob) << "\n";
    os << "appliance." << name << ".train_step = " << a.train_step << "\n";
    if (a.augment.enabled()) {
      os << "appliance." << name << ".augment_min = " << fmt17(a.augment.e_minus) << "\n";
      os << "appliance." << name << ".augment_max = " << fmt17(a.augment.e_plus) << "\n";
    }
  }
  auto list = [&](const char* key, const std::vector<int>& ids) {
    if (ids.empty()) return;
    os << key << " = ";
    for (size_t i = 0; i < ids.size(); ++i) os << (i ? "," : "") << ids[i];
    os << "\n";
  };
  list("train.houses", train_houses);
  list("test.houses", test_houses);
  if (!os) throw Error("write failed for '" + path + "'");
}

// ---- prepared sample files -----------------------------------------------------

namespace {
constexpr char kSampleMagic[4] = {'S', 'C', 'D', 'S'};

void put_u64v(std::ostream& os, uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

uint64_t get_u64v(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw Error("sample file: truncated");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}
}  // namespace

void write_samples(const std::string& path, const std::vector<Sample>& samples, int s, int w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os.write(kSampleMagic, 4);
  put_u64v(os, 1);  // version
  put_u64v(os, samples.size());
  put_u64v(os, static_cast<uint64_t>(s));
  put_u64v(os, static_cast<uint64_t>(w));
  for (const Sample& sm : samples) {
    put_u64v(os, static_cast<uint64_t>(sm.t0));
    for (double v : sm.x) put_u64v(os, std::bit_cast<uint64_t>(v));
    for (double v : sm.y) put_u64v(os, std::bit_cast<uint64_t>(v));
    for (uint8_t v : sm.o) os.put(static_cast<char>(v));
  }
  if (!os) throw Error("write failed for '" + path + "'");
}

std::vector<Sample> read_samples(const std::string& path, int* s_out, int* w_out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open sample file '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kSampleMagic, 4) != 0) {
    throw Error("sample file: bad magic in '" + path + "'");
  }
  if (get_u64v(is) != 1) throw Error("sample file: unsupported version");
  const uint64_t count = get_u64v(is);
  const int s = static_cast<int>(get_u64v(is));
  const int w = static_cast<int>(get_u64v(is));
  if (s_out) *s_out = s;
  if (w_out) *w_out = w;
  std::vector<Sample> out;
  out.reserve(count);
  const int64_t x_len = s + 2 * static_cast<int64_t>(w);
  for (uint64_t i = 0; i < count; ++i) {
    Sample sm;
    sm.t0 = static_cast<int64_t>(get_u64v(is));
    sm.x.resize(x_len);
    for (auto& v : sm.x) v = std::bit_cast<double>(get_u64v(is));
    sm.y.resize(s);
    for (auto& v : sm.y) v = std::bit_cast<double>(get_u64v(is));
    sm.o.resize(s);
    for (auto& v : sm.o) v = static_cast<uint8_t>(is.get());
    if (!is) throw Error("sample file: truncated");
    out.push_back(std::move(sm));
  }
  return out;
}

// ---- paper defaults -------------------------------------------------------------

double default_keep_prob(const std::string& dataset, const std::string& appliance) {
  if (dataset == "redd") {
    if (appliance == "dishwasher") return 0.2;
  } else if (dataset == "ukdale") {
    if (appliance == "dishwasher") return 0.02;
    if (appliance == "microwave") return 0.05;
    if (appliance == "kettle") return 0.1;
  }
  return 1.0;
}

int default_train_step(const std::string& dataset, const std::string& appliance) {
  if (dataset == "redd") return 2;
  if (dataset == "ukdale") {
    if (appliance == "microwave") return 4;
    if (appliance == "dishwasher") return 8;
    if (appliance == "fridge" || appliance == "washing_machine" || appliance == "kettle") {
      return 32;
    }
  }
  return 2;
}

AugmentSpec default_augment(const std::string& dataset, const std::string& appliance) {
  AugmentSpec a;
  if (appliance == "fridge") {
    if (dataset == "redd") {
      a.e_minus = -0.1;
      a.e_plus = 0.1;
    } else if (dataset == "ukdale") {
      a.e_minus = -0.03;
      a.e_plus = 0.03;
    }
  }
  return a;
}

AugmentSpec default_augment_classifier(const std::string& appliance) {
  AugmentSpec a;
  if (appliance == "fridge") {
    a.e_minus = -0.15;
    a.e_plus = 0.15;
  } else if (appliance == "dishwasher" || appliance == "microwave") {
    a.e_minus = -1.0;
    a.e_plus = 1.0;
  }
  return a;
}

}  // namespace scanet
