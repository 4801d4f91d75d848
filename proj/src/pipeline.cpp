#include "scanet/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "scanet/training.hpp"

namespace scanet {

namespace fs = std::filesystem;

namespace {

std::map<std::string, std::string> read_kv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open '" + path + "'");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos || line[0] == '#') continue;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

void write_kv(const std::string& path, const std::map<std::string, std::string>& kv) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
}

ApplianceEntry appliance_entry(const DatasetManifest& manifest, const std::string& appliance,
                               const DataConfig& data_cfg) {
  ApplianceEntry entry;
  entry.on_threshold = data_cfg.on_threshold;
  entry.keep_prob = data_cfg.keep_prob;
  entry.train_step = data_cfg.train_step;
  auto it = manifest.appliances.find(appliance);
  if (it != manifest.appliances.end()) entry = it->second;
  return entry;
}

}  // namespace

ModelConfig arch_model_config(const std::string& arch, ModelConfig base) {
  const ModelKind kind = model_kind_from_string(arch);
  if (kind == ModelKind::kSgn || kind == ModelKind::kSeq2point) {
    base.use_branches = false;
    base.use_attention = false;
  }
  return base;
}

std::vector<Sample> prepare_samples(const DatasetManifest& manifest, const std::string& appliance,
                                    const ModelConfig& model_cfg, const DataConfig& data_cfg,
                                    uint64_t subsample_seed) {
  if (manifest.train_houses.empty()) throw Error("prepare: manifest lists no train.houses");
  const ApplianceEntry entry = appliance_entry(manifest, appliance, data_cfg);
  WindowSpec spec;
  spec.s = model_cfg.s;
  spec.w = model_cfg.w;
  spec.train_step = entry.train_step;
  spec.test_step = data_cfg.test_step;

  std::vector<Sample> all;
  int64_t t0_base = 0;
  for (int house_id : manifest.train_houses) {
    const HouseEntry& house = manifest.house(house_id);
    auto it = house.appliance_paths.find(appliance);
    if (it == house.appliance_paths.end()) {
      throw Error("prepare: house " + std::to_string(house_id) + " has no channel for '" +
                  appliance + "'");
    }
    const TimeSeries mains = load_channel(house.mains_path);
    const TimeSeries truth = load_channel(it->second);
    const auto sections = align_and_resample(mains, truth, manifest.period, manifest.gap_limit);
    for (const auto& section : sections) {
      if (static_cast<int>(section.mains.size()) < spec.s) continue;
      const auto agg_norm = normalize(section.mains, manifest.scale);
      const auto app_norm = normalize(section.appliance, manifest.scale);
      const auto states = derive_on_off(section.appliance, entry.on_threshold);
      auto samples = make_windows(agg_norm, app_norm, states, spec);
      for (auto& s : samples) s.t0 += t0_base;
      all.insert(all.end(), std::make_move_iterator(samples.begin()),
                 std::make_move_iterator(samples.end()));
      t0_base += static_cast<int64_t>(section.mains.size());
    }
  }
  if (all.empty()) throw Error("prepare: no usable samples for '" + appliance + "'");
  return subsample_off_state(std::move(all), entry.keep_prob, subsample_seed);
}

HouseEval evaluate_on_house(const Model& model, const DatasetManifest& manifest, int house_id,
                            const std::string& appliance, const DataConfig& data_cfg,
                            int sae_periods) {
  const HouseEntry& house = manifest.house(house_id);
  auto it = house.appliance_paths.find(appliance);
  if (it == house.appliance_paths.end()) {
    throw Error("evaluate: house " + std::to_string(house_id) + " has no channel for '" +
                appliance + "'");
  }
  const ApplianceEntry entry = appliance_entry(manifest, appliance, data_cfg);
  const TimeSeries mains = load_channel(house.mains_path);
  const TimeSeries truth = load_channel(it->second);
  const auto sections = align_and_resample(mains, truth, manifest.period, manifest.gap_limit);

  WindowSpec spec;
  spec.s = model.config().s;
  spec.w = model.config().w;
  spec.test_step = data_cfg.test_step;

  HouseEval out;
  for (const auto& section : sections) {
    if (static_cast<int>(section.mains.size()) < spec.s) continue;
    auto pred = infer_full(model, section.mains, spec, manifest.scale);
    out.predicted.insert(out.predicted.end(), pred.begin(), pred.end());
    out.truth_watts.insert(out.truth_watts.end(), section.appliance.begin(),
                           section.appliance.end());
    const auto states = derive_on_off(section.appliance, entry.on_threshold);
    out.truth_states.insert(out.truth_states.end(), states.begin(), states.end());
  }
  if (out.predicted.empty()) throw Error("evaluate: no overlapping data for house " +
                                         std::to_string(house_id));

  const bool classifier = model.kind() == ModelKind::kClassifierOnly;
  out.report.appliance = appliance;
  const int periods = std::min<int>(sae_periods, static_cast<int>(out.predicted.size()));
  if (!classifier) {
    out.report.mae = mae(out.predicted, out.truth_watts);
    out.report.sae = sae(out.predicted, out.truth_watts, periods);
  }
  std::vector<double> probs;
  if (classifier) {
    probs = out.predicted;
  } else {
    probs.reserve(out.predicted.size());
    for (double v : out.predicted) probs.push_back(v > entry.on_threshold ? 1.0 : 0.0);
  }
  const F1Result f1 = f1_from_states(probs, out.truth_states);
  out.report.precision = f1.precision;
  out.report.recall = f1.recall;
  out.report.f1 = f1.f1;
  out.report.n_periods = periods;
  out.report.period_len = static_cast<int64_t>(out.predicted.size()) / periods;
  return out;
}

// ---- simulate ------------------------------------------------------------------

void cmd_simulate(const std::string& spec_path, const std::string& out_dir,
                  std::optional<uint64_t> seed) {
  SimSpecFile file = SimSpecFile::load(spec_path);
  fs::create_directories(out_dir);
  DatasetManifest manifest;
  manifest.train_houses = file.train_houses;
  manifest.test_houses = file.test_houses;
  std::set<std::string> appliance_names;
  for (auto& house : file.houses) {
    if (seed) house.spec.seed = derive_seed(*seed, static_cast<uint64_t>(house.id));
    const SimResult result = simulate(house.spec);
    const std::string house_dir =
        (fs::path(out_dir) / ("house" + std::to_string(house.id))).string();
    write_household(house_dir, house.spec, result);
    HouseEntry entry;
    entry.id = house.id;
    entry.mains_path = "house" + std::to_string(house.id) + "/mains.dat";
    for (const auto& a : house.spec.appliances) {
      entry.appliance_paths[a.name] = "house" + std::to_string(house.id) + "/" + a.name + ".dat";
      appliance_names.insert(a.name);
    }
    manifest.houses.push_back(std::move(entry));
  }
  for (const auto& name : appliance_names) {
    ApplianceEntry entry;
    entry.on_threshold = file.on_threshold;
    manifest.appliances[name] = entry;
  }
  manifest.save((fs::path(out_dir) / "manifest.txt").string());
  std::cout << "simulated " << file.houses.size() << " household(s) into " << out_dir << "\n";
}

// ---- prepare -------------------------------------------------------------------

void cmd_prepare(const std::string& manifest_path, const std::string& appliance,
                 const std::string& out_dir, const ExperimentConfig& cfg) {
  const DatasetManifest manifest = DatasetManifest::load(manifest_path);
  auto samples =
      prepare_samples(manifest, appliance, cfg.model, cfg.data, cfg.training.seed);
  fs::create_directories(out_dir);
  write_samples((fs::path(out_dir) / "samples.bin").string(), samples, cfg.model.s, cfg.model.w);
  const ApplianceEntry entry = appliance_entry(manifest, appliance, cfg.data);
  std::map<std::string, std::string> meta;
  meta["appliance"] = appliance;
  meta["scale"] = fmt17(manifest.scale);
  meta["on_threshold"] = fmt17(entry.on_threshold);
  meta["keep_prob"] = fmt17(entry.keep_prob);
  meta["train_step"] = std::to_string(entry.train_step);
  meta["test_step"] = std::to_string(cfg.data.test_step);
  meta["s"] = std::to_string(cfg.model.s);
  meta["w"] = std::to_string(cfg.model.w);
  meta["count"] = std::to_string(samples.size());
  meta["manifest"] = fs::absolute(manifest_path).string();
  write_kv((fs::path(out_dir) / "meta.txt").string(), meta);
  std::cout << "prepared " << samples.size() << " samples for '" << appliance << "' into "
            << out_dir << "\n";
}

// ---- train ---------------------------------------------------------------------

void cmd_train(const std::string& arch, const std::string& data_dir, ExperimentConfig cfg,
               const std::string& out_ckpt, const TrainOptions& opts) {
  const auto meta = read_kv((fs::path(data_dir) / "meta.txt").string());
  int s_file = 0, w_file = 0;
  auto samples = read_samples((fs::path(data_dir) / "samples.bin").string(), &s_file, &w_file);
  if (s_file != cfg.model.s || w_file != cfg.model.w) {
    throw Error("train: prepared samples use s=" + std::to_string(s_file) + ", w=" +
                std::to_string(w_file) + " but the config says s=" + std::to_string(cfg.model.s) +
                ", w=" + std::to_string(cfg.model.w));
  }
  if (opts.seed) cfg.training.seed = *opts.seed;
  if (opts.augment) cfg.training.augment = *opts.augment;
  cfg.training.adversarial = opts.adversarial;
  if (opts.adversarial && cfg.training.lambda_adv == 0.0) {
    std::cerr << "warning: --adv requested but lambda_adv = 0; running the supervised path\n";
  }

  Model model(model_kind_from_string(arch), arch_model_config(arch, cfg.model),
              cfg.training.seed);
  std::map<std::string, std::string> ckpt_meta;
  for (const char* key : {"appliance", "scale", "on_threshold", "test_step"}) {
    auto it = meta.find(key);
    if (it != meta.end()) ckpt_meta[key] = it->second;
  }
  ckpt_meta["arch"] = arch;
  ckpt_meta["seed"] = std::to_string(cfg.training.seed);

  TrainResult result = train_model(model, samples, cfg.training,
                                   [&](int epoch, const Model& m) {
                                     std::map<std::string, std::string> em = ckpt_meta;
                                     em["epoch"] = std::to_string(epoch);
                                     save_checkpoint(out_ckpt, m, em);
                                   });
  // final state (identical to the last epoch's file, plus the history)
  ckpt_meta["epoch"] = std::to_string(cfg.training.epochs);
  save_checkpoint(out_ckpt, model, ckpt_meta);
  write_loss_history_csv(out_ckpt + ".history.csv", result.history);
  std::cout << "trained " << arch << " on " << samples.size() << " samples ("
            << result.history.size() << " steps) -> " << out_ckpt << "\n";
}

// ---- disaggregate ----------------------------------------------------------------

void cmd_disaggregate(const std::string& ckpt_path, const std::string& mains_path,
                      const std::string& out_csv, std::optional<int> stride) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  const TimeSeries mains = load_channel(mains_path);
  if (mains.empty()) throw Error("disaggregate: empty mains channel");
  WindowSpec spec;
  spec.s = ckpt.config.s;
  spec.w = ckpt.config.w;
  spec.test_step = stride.value_or(
      ckpt.meta.count("test_step") ? std::stoi(ckpt.meta.at("test_step")) : 2);
  if (ckpt.kind == ModelKind::kSeq2point && !stride) spec.test_step = 1;  // midpoint coverage
  const double scale =
      ckpt.meta.count("scale") ? std::stod(ckpt.meta.at("scale")) : kDefaultScale;
  auto pred = infer_full(ckpt.model, mains.values, spec, scale);
  std::ofstream os(out_csv);
  if (!os) throw Error("cannot open '" + out_csv + "' for writing");
  const bool prob = ckpt.kind == ModelKind::kClassifierOnly;
  os << "timestamp," << (prob ? "on_probability" : "watts") << "\n";
  for (size_t i = 0; i < pred.size(); ++i) {
    os << mains.timestamps[i] << "," << fmt17(pred[i]) << "\n";
  }
  if (!os) throw Error("write failed for '" + out_csv + "'");
  std::cout << "wrote " << pred.size() << " predictions to " << out_csv << "\n";
}

// ---- evaluate --------------------------------------------------------------------

void cmd_evaluate(const std::string& pred_csv, const std::string& truth_path,
                  const std::string& report_path, const EvaluateOptions& opts) {
  std::ifstream is(pred_csv);
  if (!is) throw Error("cannot open predictions '" + pred_csv + "'");
  std::map<int64_t, double> pred_by_ts;
  std::string line;
  bool header = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.rfind("timestamp", 0) == 0) continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw Error("evaluate: bad prediction row '" + line + "'");
    pred_by_ts[std::stoll(line.substr(0, comma))] = std::stod(line.substr(comma + 1));
  }
  const TimeSeries truth = load_channel(truth_path);
  std::vector<double> pred, truth_w;
  for (size_t i = 0; i < truth.size(); ++i) {
    auto it = pred_by_ts.find(truth.timestamps[i]);
    if (it == pred_by_ts.end()) continue;
    pred.push_back(it->second);
    truth_w.push_back(truth.values[i]);
  }
  if (pred.empty()) throw Error("evaluate: predictions and truth share no timestamps");

  MetricsReport report;
  report.appliance = fs::path(truth_path).stem().string();
  const int periods =
      opts.sae_periods.value_or(std::min<int>(1200, static_cast<int>(pred.size())));
  if (!opts.pred_is_prob) {
    report.mae = mae(pred, truth_w);
    report.sae = sae(pred, truth_w, periods);
  }
  const auto states = derive_on_off(truth_w, opts.on_threshold);
  std::vector<double> probs;
  if (opts.pred_is_prob) {
    probs = pred;
  } else {
    for (double v : pred) probs.push_back(v > opts.on_threshold ? 1.0 : 0.0);
  }
  const F1Result f1 = f1_from_states(probs, states);
  report.precision = f1.precision;
  report.recall = f1.recall;
  report.f1 = f1.f1;
  report.n_periods = periods;
  report.period_len = static_cast<int64_t>(pred.size()) / periods;
  write_report(report_path, report);
  if (!opts.append_csv.empty()) append_report_csv(opts.append_csv, report);
  std::cout << "appliance=" << report.appliance << " mae=" << report.mae << " sae=" << report.sae
            << " f1=" << report.f1 << "\n";
}

// ---- export ---------------------------------------------------------------------

void cmd_export(const std::string& ckpt_path, const std::string& out_dir,
                const ExportOptions& opts) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Model& model = ckpt.model;
  const double scale =
      ckpt.meta.count("scale") ? std::stod(ckpt.meta.at("scale")) : kDefaultScale;
  fs::create_directories(out_dir);
  std::vector<std::pair<std::string, std::string>> index;

  auto window_from_mains = [&]() {
    if (opts.mains_path.empty()) throw Error("export: --mains is required for '" + opts.what + "'");
    const TimeSeries mains = load_channel(opts.mains_path);
    const auto norm = normalize(mains.values, scale);
    const int64_t s = model.config().s;
    const int64_t w = model.config().w;
    const int64_t t0 = static_cast<int64_t>(opts.window_index) * 2;
    if (t0 + s > static_cast<int64_t>(norm.size())) {
      throw Error("export: window index " + std::to_string(opts.window_index) +
                  " is out of range");
    }
    std::vector<double> x(s + 2 * w, 0.0);
    for (int64_t i = 0; i < s + 2 * w; ++i) {
      const int64_t src = t0 - w + i;
      if (src >= 0 && src < static_cast<int64_t>(norm.size())) x[i] = norm[src];
    }
    return x;
  };

  if (opts.what == "attention") {
    for (const auto& f : export_attention(model, window_from_mains(), out_dir)) {
      index.emplace_back(f, "A^T, row i / column j = attention from step j to step i");
    }
  } else if (opts.what == "features") {
    std::vector<std::string> taps;
    for (const char* t : {"p1_1", "p1_2", "p1_3", "s1t_1", "s1t_2", "s1t_3",
                          "s1_1", "s1_2", "s1_3", "p3", "s3", "p4", "s4"}) {
      taps.push_back(t);
    }
    if (!model.config().use_branches) taps = {"p3", "s3", "p4", "s4"};
    if (!model.config().use_branches && !model.config().use_attention) taps.clear();
    if (taps.empty()) throw Error("export: model has no feature taps to export");
    for (const auto& f : export_feature_maps(model, window_from_mains(), out_dir, taps,
                                             opts.center_crop)) {
      index.emplace_back(f, "rows are channels, columns are time steps");
    }
  } else if (opts.what == "bypass") {
    const BypassResult r = attention_bypass_compare(model, window_from_mains());
    index.emplace_back(write_bypass_csv(r, out_dir),
                       "o_hat with attention, o_hat with s3 fed straight to the head");
  } else if (opts.what == "pca") {
    if (opts.data_dir.empty()) throw Error("export: --data is required for 'pca'");
    int s_file = 0, w_file = 0;
    auto samples =
        read_samples((fs::path(opts.data_dir) / "samples.bin").string(), &s_file, &w_file);
    if (s_file != model.config().s || w_file != model.config().w) {
      throw Error("export: prepared samples do not match the checkpoint's window");
    }
    std::vector<std::vector<double>> real;
    std::vector<std::vector<double>> generated;
    Graph g;
    ForwardNodes nodes = model.emit_forward(g, 1);
    for (const auto& sm : samples) {
      const bool complete_on =
          std::all_of(sm.o.begin(), sm.o.end(), [](uint8_t v) { return v != 0; });
      if (!complete_on) continue;
      real.push_back(sm.y);
      g.bind(nodes.x, Tensor({1, 1, static_cast<int64_t>(sm.x.size())},
                             std::vector<double>(sm.x)));
      const Tensor& y = g.eval(nodes.y_hat);
      generated.emplace_back(y.data(), y.data() + y.size());
    }
    if (real.size() < 2) throw Error("export: fewer than 2 complete-on samples for pca");
    PcaResult basis = pca_modes(real);
    for (const auto& f : export_pca(basis, out_dir)) {
      index.emplace_back(f, "pc1/pc2 of real complete-on sequences");
    }
    std::vector<std::vector<double>> rows;
    for (const auto& seq : generated) {
      const auto p = pca_project(basis, seq);
      rows.push_back({p[0], p[1]});
    }
    const std::string gen_path = (fs::path(out_dir) / "pca_generated.csv").string();
    write_matrix_csv(gen_path, {"pc1", "pc2"}, rows);
    index.emplace_back(gen_path, "model outputs on the same windows, same basis");
  } else {
    throw Error("export: unknown kind '" + opts.what +
                "' (expected attention|features|bypass|pca)");
  }
  write_export_index(out_dir, index);
  std::cout << "exported " << index.size() << " file(s) to " << out_dir << "\n";
}

// ---- ablate ---------------------------------------------------------------------

void cmd_ablate(const std::string& manifest_path, const std::string& appliance,
                const ExperimentConfig& cfg, const std::string& out_csv,
                const AblateOptions& opts) {
  std::set<std::string> grid;
  {
    std::stringstream ss(opts.grid);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (tok != "ms" && tok != "sa" && tok != "al" && tok != "oa") {
        throw Error("ablate: unknown toggle '" + tok + "'");
      }
      grid.insert(tok);
    }
  }
  if (opts.seeds < 1) throw Error("ablate: seeds must be >= 1");
  const DatasetManifest manifest = DatasetManifest::load(manifest_path);
  if (manifest.test_houses.empty()) throw Error("ablate: manifest lists no test.houses");

  struct Row {
    bool ms, sa, al, oa;
  };
  const std::vector<Row> table{
      {false, false, false, false}, {true, false, false, false},  {false, true, false, false},
      {true, true, false, false},   {false, false, true, false},  {false, false, false, true},
      {true, true, true, false},    {true, true, false, true},
  };

  auto samples = prepare_samples(manifest, appliance, cfg.model, cfg.data, cfg.training.seed);
  AugmentSpec oa_spec = appliance_entry(manifest, appliance, cfg.data).augment;
  if (!oa_spec.enabled()) oa_spec = {-0.1, 0.1};

  std::ofstream os(out_csv);
  if (!os) throw Error("cannot open '" + out_csv + "' for writing");
  os << "ms,sa,al,oa," << appliance << "_mae,seeds\n";
  for (const Row& row : table) {
    if ((row.ms && !grid.count("ms")) || (row.sa && !grid.count("sa")) ||
        (row.al && !grid.count("al")) || (row.oa && !grid.count("oa"))) {
      continue;
    }
    double mae_sum = 0.0;
    for (int seed_idx = 0; seed_idx < opts.seeds; ++seed_idx) {
      ModelConfig mc = cfg.model;
      mc.use_branches = row.ms;
      mc.use_attention = row.sa;
      const uint64_t seed = derive_seed(cfg.training.seed, static_cast<uint64_t>(seed_idx));
      Model model(row.ms || row.sa ? ModelKind::kScanet : ModelKind::kSgn, mc, seed);
      TrainingConfig tc = cfg.training;
      tc.seed = seed;
      tc.adversarial = row.al;
      tc.augment = row.oa ? oa_spec : AugmentSpec{};
      train_model(model, samples, tc);
      double house_mae = 0.0;
      for (int house : manifest.test_houses) {
        house_mae += evaluate_on_house(model, manifest, house, appliance, cfg.data,
                                       cfg.data.sae_periods)
                         .report.mae;
      }
      mae_sum += house_mae / static_cast<double>(manifest.test_houses.size());
    }
    const double mean_mae = mae_sum / static_cast<double>(opts.seeds);
    auto mark = [](bool b) { return b ? "1" : "0"; };
    os << mark(row.ms) << "," << mark(row.sa) << "," << mark(row.al) << "," << mark(row.oa)
       << "," << fmt17(mean_mae) << "," << opts.seeds << "\n";
    std::cout << "ablate ms=" << row.ms << " sa=" << row.sa << " al=" << row.al
              << " oa=" << row.oa << " mae=" << mean_mae << "\n";
  }
}

}  // namespace scanet
