#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "scanet/data.hpp"

using namespace scanet;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name, const std::string& content = "") : path(name) {
    if (!content.empty()) {
      std::ofstream os(path);
      os << content;
    }
  }
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_SUITE_BEGIN("data");

TEST_CASE("load_channel parses epoch-second watt lines") {
  TempFile f("t_chan.dat", "1303132929 86.0\n1303132932 85.5\n");
  TimeSeries ts = load_channel(f.path);
  REQUIRE(ts.size() == 2);
  CHECK(ts.timestamps[0] == 1303132929);
  CHECK(ts.values[1] == doctest::Approx(85.5));
}

TEST_CASE("load_channel accepts an empty file") {
  TempFile f("t_empty.dat", "");
  std::ofstream(f.path).close();
  TimeSeries ts = load_channel(f.path);
  CHECK(ts.empty());
}

TEST_CASE("load_channel rejects malformed and non-monotone input") {
  TempFile bad("t_bad.dat", "abc 1\n");
  CHECK_THROWS_WITH_AS(load_channel(bad.path), doctest::Contains("line 1"), Error);
  TempFile mono("t_mono.dat", "100 1.0\n100 2.0\n");
  CHECK_THROWS_WITH_AS(load_channel(mono.path), doctest::Contains("line 2"), Error);
}

TEST_CASE("channel files round-trip") {
  TimeSeries ts;
  ts.timestamps = {10, 13, 16};
  ts.values = {1.25, 0.0, 612.0};
  TempFile f("t_round.dat");
  save_channel(f.path, ts);
  TimeSeries back = load_channel(f.path);
  REQUIRE(back.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(back.timestamps[i] == ts.timestamps[i]);
    CHECK(back.values[i] == ts.values[i]);
  }
}

TEST_CASE("align: identical grids pass through") {
  TimeSeries a;
  TimeSeries b;
  for (int i = 0; i < 10; ++i) {
    a.timestamps.push_back(100 + i);
    a.values.push_back(i);
    b.timestamps.push_back(100 + i);
    b.values.push_back(2 * i);
  }
  auto sections = align_and_resample(a, b, 1);
  REQUIRE(sections.size() == 1);
  CHECK(sections[0].mains.size() == 10);
  for (int i = 0; i < 10; ++i) {
    CHECK(sections[0].mains[i] == doctest::Approx(i));
    CHECK(sections[0].appliance[i] == doctest::Approx(2 * i));
  }
}

TEST_CASE("align: 3-second data onto a 6-second grid keeps every second point") {
  TimeSeries a;
  TimeSeries b;
  for (int i = 0; i < 12; ++i) {
    a.timestamps.push_back(100 + 3 * i);
    a.values.push_back(i);
    b.timestamps.push_back(100 + 3 * i);
    b.values.push_back(10 + i);
  }
  auto sections = align_and_resample(a, b, 6);
  REQUIRE(sections.size() == 1);
  REQUIRE(sections[0].mains.size() == 6);
  for (int i = 0; i < 6; ++i) {
    CHECK(sections[0].mains[i] == doctest::Approx(2 * i));  // forward fill picks 0,2,4,...
  }
}

TEST_CASE("align: disjoint series raise a no-overlap error") {
  TimeSeries a;
  a.timestamps = {100, 101};
  a.values = {1, 2};
  TimeSeries b;
  b.timestamps = {500, 501};
  b.values = {1, 2};
  CHECK_THROWS_WITH_AS(align_and_resample(a, b, 1), doctest::Contains("overlap"), Error);
}

TEST_CASE("align: long gaps split sections") {
  TimeSeries a;
  TimeSeries b;
  for (int i = 0; i < 5; ++i) {
    a.timestamps.push_back(100 + i);
    a.values.push_back(1);
    b.timestamps.push_back(100 + i);
    b.values.push_back(1);
  }
  for (int i = 0; i < 5; ++i) {
    a.timestamps.push_back(1000 + i);  // 900-second hole
    a.values.push_back(2);
    b.timestamps.push_back(1000 + i);
    b.values.push_back(2);
  }
  auto sections = align_and_resample(a, b, 1, 10);
  REQUIRE(sections.size() == 2);
  CHECK(sections[0].mains.size() > 0);
  CHECK(sections[1].start_time == 1000);
}

TEST_CASE("normalize: paper divisor and exact round trip") {
  std::vector<double> watts{612.0, 0.0, 2448.0};
  auto norm = normalize(watts);
  CHECK(norm[0] == doctest::Approx(1.0));
  CHECK(norm[1] == 0.0);
  CHECK(norm[2] == doctest::Approx(4.0));
  auto back = denormalize(norm);
  for (size_t i = 0; i < watts.size(); ++i) {
    CHECK(std::fabs(back[i] - watts[i]) < 1e-12 * std::max(1.0, watts[i]));
  }
  CHECK_THROWS_AS(normalize(watts, 0.0), Error);
}

TEST_CASE("make_windows: stride-2 count over an 864-step series") {
  const int64_t len = 864;
  std::vector<double> agg(len, 0.5);
  std::vector<double> app(len, 0.1);
  std::vector<uint8_t> on(len, 1);
  WindowSpec spec;
  spec.s = 64;
  spec.w = 400;
  spec.train_step = 2;
  auto samples = make_windows(agg, app, on, spec);
  CHECK(samples.size() == 401);  // ceil((864 - 64 + 1)/2)
  CHECK(samples.front().t0 == 0);
  CHECK(samples.back().t0 == 800);
  // the t0=400 window's x spans exactly the whole series: no zero padding
  const Sample& centered = samples[200];
  CHECK(centered.t0 == 400);
  for (double v : centered.x) CHECK(v == doctest::Approx(0.5));
  // the first window is edge-padded on the left
  CHECK(samples.front().x.front() == 0.0);
}

TEST_CASE("make_windows: constant series gives identical interior windows") {
  const int64_t len = 100;
  std::vector<double> agg(len, 1.0);
  std::vector<double> app(len, 0.0);
  std::vector<uint8_t> on(len, 0);
  WindowSpec spec;
  spec.s = 10;
  spec.w = 5;
  spec.train_step = 1;
  auto samples = make_windows(agg, app, on, spec);
  // interior windows (fully inside the series) are all equal
  for (size_t i = 6; i + 16 < samples.size(); ++i) {
    CHECK(samples[i].x == samples[6].x);
  }
}

TEST_CASE("make_windows: stride of the whole series yields one sample") {
  const int64_t len = 50;
  std::vector<double> agg(len, 1.0);
  std::vector<double> app(len, 0.0);
  std::vector<uint8_t> on(len, 0);
  WindowSpec spec;
  spec.s = 50;
  spec.w = 2;
  spec.train_step = 50;
  auto samples = make_windows(agg, app, on, spec);
  CHECK(samples.size() == 1);
}

TEST_CASE("make_windows: series shorter than s raises") {
  std::vector<double> agg(5, 1.0);
  std::vector<double> app(5, 0.0);
  std::vector<uint8_t> on(5, 0);
  WindowSpec spec;
  spec.s = 10;
  spec.w = 1;
  CHECK_THROWS_WITH_AS(make_windows(agg, app, on, spec), doctest::Contains("shorter"), Error);
}

TEST_CASE("windowing covers every on step when stride <= s") {
  RandomStream rng(3);
  const int64_t len = 300;
  std::vector<double> app(len, 0.0);
  std::vector<uint8_t> on(len, 0);
  for (int64_t t = 0; t < len; ++t) {
    if (rng.uniform() < 0.1) {
      app[t] = 1.0;
      on[t] = 1;
    }
  }
  std::vector<double> agg(app);
  WindowSpec spec;
  spec.s = 16;
  spec.w = 4;
  spec.train_step = 16;  // stride == s
  auto samples = make_windows(agg, app, on, spec);
  std::vector<uint8_t> covered(len, 0);
  for (const auto& sm : samples) {
    for (int i = 0; i < spec.s; ++i) {
      if (sm.o[i]) covered[sm.t0 + i] = 1;
    }
  }
  for (int64_t t = 0; t + spec.s <= len; ++t) {
    if (on[t]) CHECK(covered[t] == 1);
  }
}

TEST_CASE("subsample_off_state: keep probability one is the identity") {
  std::vector<Sample> samples(10);
  for (auto& s : samples) {
    s.o.assign(4, 0);
    s.y.assign(4, 0.0);
    s.x.assign(8, 0.0);
  }
  CHECK(subsample_off_state(samples, 1.0, 1).size() == 10);
}

TEST_CASE("subsample_off_state: never removes samples with any on state") {
  std::vector<Sample> samples(200);
  for (size_t i = 0; i < samples.size(); ++i) {
    samples[i].o.assign(4, 1);
    samples[i].t0 = static_cast<int64_t>(i);
  }
  CHECK(subsample_off_state(samples, 0.01, 7).size() == 200);
}

TEST_CASE("subsample_off_state: binomial keep count within 3 sigma") {
  std::vector<Sample> samples(10000);
  for (size_t i = 0; i < samples.size(); ++i) {
    samples[i].o.assign(4, 0);
    samples[i].t0 = static_cast<int64_t>(i);
  }
  const double keep = 0.2;
  auto kept = subsample_off_state(samples, keep, 11);
  const double expected = 10000 * keep;
  const double sigma = std::sqrt(10000 * keep * (1 - keep));
  CHECK(std::fabs(static_cast<double>(kept.size()) - expected) < 3 * sigma);
  // deterministic for a fixed seed
  auto again = subsample_off_state(samples, keep, 11);
  CHECK(again.size() == kept.size());
}

TEST_CASE("on_state_augment: all-off samples never change") {
  Sample s;
  s.x.assign(10, 0.5);
  s.y.assign(4, 0.0);
  s.o.assign(4, 0);
  AugmentSpec aug{-0.5, 0.5};
  RandomStream rng(1);
  Sample out = on_state_augment(s, aug, rng);
  CHECK(out.x == s.x);
  CHECK(out.y == s.y);
}

TEST_CASE("on_state_augment: hand-computed offset") {
  // y = [0, 100, 100]/612, o = [0,1,1], e pinned to 0.1
  Sample s;
  s.y = {0.0, 100.0 / 612.0, 100.0 / 612.0};
  s.o = {0, 1, 1};
  s.x.assign(7, 0.3);  // w = 2
  Sample out = apply_on_state_offset(s, 0.1);
  CHECK(out.y[0] == 0.0);
  CHECK(out.y[1] == doctest::Approx(100.0 / 612.0 + 0.1).epsilon(1e-15));
  CHECK(out.y[2] == doctest::Approx(100.0 / 612.0 + 0.1).epsilon(1e-15));
  CHECK(out.x[2] == doctest::Approx(0.3));        // on-state starts at x index w
  CHECK(out.x[3] == doctest::Approx(0.4));
  CHECK(out.x[4] == doctest::Approx(0.4));
  CHECK(out.x[5] == doctest::Approx(0.3));        // outside the central s steps
  // aggregate identity on the central region: x_aug - x == e*o
  for (int i = 0; i < 3; ++i) {
    CHECK(out.x[2 + i] - s.x[2 + i] == doctest::Approx(0.1 * s.o[i]).epsilon(1e-15));
  }
}

TEST_CASE("on_state_augment: degenerate zero range is the identity") {
  Sample s;
  s.y = {0.2, 0.3};
  s.o = {1, 1};
  s.x.assign(6, 0.5);
  AugmentSpec aug{0.0, 0.0};
  RandomStream rng(3);
  Sample out = on_state_augment(s, aug, rng);
  CHECK(out.x == s.x);
  CHECK(out.y == s.y);
}

TEST_CASE("on_state_augment: clamps the aggregate at zero") {
  Sample s;
  s.y = {0.05};
  s.o = {1};
  s.x.assign(3, 0.02);  // w = 1; large negative offset would push x below 0
  AugmentSpec aug{-0.5, -0.5};
  CHECK_THROWS_AS(aug.validate(), Error);  // e_minus <= 0 <= e_plus is required
  Sample out = apply_on_state_offset(s, -0.5);
  CHECK(out.x[1] == 0.0);             // clamped in the aggregate
  CHECK(out.y[0] == doctest::Approx(0.05 - 0.5));  // y itself is not clamped
}

TEST_CASE("derive_on_off thresholds") {
  std::vector<double> watts{0, 10, 200};
  auto on = derive_on_off(watts, 15.0);
  CHECK(on[0] == 0);
  CHECK(on[1] == 0);
  CHECK(on[2] == 1);
  auto strict = derive_on_off(watts, 0.0);
  CHECK(strict[0] == 0);
  CHECK(strict[1] == 1);
  CHECK(strict[2] == 1);
  CHECK_THROWS_AS(derive_on_off(watts, -1.0), Error);
}

TEST_CASE("manifest round trip") {
  DatasetManifest m;
  m.scale = 612;
  m.period = 3;
  HouseEntry h1;
  h1.id = 1;
  h1.mains_path = "h1/mains.dat";
  h1.appliance_paths["fridge"] = "h1/fridge.dat";
  m.houses.push_back(h1);
  ApplianceEntry fridge;
  fridge.on_threshold = 20;
  fridge.keep_prob = 0.5;
  fridge.train_step = 8;
  fridge.augment = {-0.1, 0.1};
  m.appliances["fridge"] = fridge;
  m.train_houses = {1};
  m.test_houses = {1};

  const std::string path = "t_manifest.txt";
  m.save(path);
  DatasetManifest back = DatasetManifest::load(path);
  std::remove(path.c_str());
  CHECK(back.scale == 612);
  CHECK(back.period == 3);
  REQUIRE(back.houses.size() == 1);
  CHECK(back.house(1).appliance_paths.at("fridge").find("fridge.dat") != std::string::npos);
  CHECK(back.appliances.at("fridge").keep_prob == doctest::Approx(0.5));
  CHECK(back.appliances.at("fridge").augment.e_plus == doctest::Approx(0.1));
  CHECK(back.train_houses == std::vector<int>{1});
}

TEST_CASE("sample files round trip bitwise") {
  std::vector<Sample> samples(3);
  RandomStream rng(8);
  for (int64_t i = 0; i < 3; ++i) {
    samples[i].t0 = i * 7;
    samples[i].x.resize(12);
    samples[i].y.resize(4);
    samples[i].o.resize(4);
    for (auto& v : samples[i].x) v = rng.uniform(-1, 1);
    for (auto& v : samples[i].y) v = rng.uniform(0, 1);
    for (auto& v : samples[i].o) v = rng.uniform() < 0.5 ? 0 : 1;
  }
  const std::string path = "t_samples.bin";
  write_samples(path, samples, 4, 4);
  int s = 0, w = 0;
  auto back = read_samples(path, &s, &w);
  std::remove(path.c_str());
  CHECK(s == 4);
  CHECK(w == 4);
  REQUIRE(back.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(back[i].t0 == samples[i].t0);
    CHECK(back[i].x == samples[i].x);
    CHECK(back[i].y == samples[i].y);
    CHECK(back[i].o == samples[i].o);
  }
}

TEST_CASE("paper-default tables") {
  CHECK(default_keep_prob("redd", "dishwasher") == doctest::Approx(0.2));
  CHECK(default_keep_prob("ukdale", "dishwasher") == doctest::Approx(0.02));
  CHECK(default_keep_prob("ukdale", "microwave") == doctest::Approx(0.05));
  CHECK(default_keep_prob("ukdale", "kettle") == doctest::Approx(0.1));
  CHECK(default_keep_prob("redd", "fridge") == doctest::Approx(1.0));

  CHECK(default_train_step("redd", "fridge") == 2);
  CHECK(default_train_step("ukdale", "microwave") == 4);
  CHECK(default_train_step("ukdale", "dishwasher") == 8);
  CHECK(default_train_step("ukdale", "fridge") == 32);
  CHECK(default_train_step("ukdale", "kettle") == 32);

  CHECK(default_augment("redd", "fridge").e_plus == doctest::Approx(0.1));
  CHECK(default_augment("ukdale", "fridge").e_plus == doctest::Approx(0.03));
  CHECK_FALSE(default_augment("redd", "microwave").enabled());

  CHECK(default_augment_classifier("fridge").e_plus == doctest::Approx(0.15));
  CHECK(default_augment_classifier("dishwasher").e_plus == doctest::Approx(1.0));
  CHECK(default_augment_classifier("microwave").e_minus == doctest::Approx(-1.0));
}

TEST_SUITE_END();
