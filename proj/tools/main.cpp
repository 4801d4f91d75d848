#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "scanet/pipeline.hpp"

namespace {

using namespace scanet;

std::optional<uint64_t> seed_or_env(const CLI::Option* opt, uint64_t value) {
  if (opt->count() > 0) return value;
  if (const char* env = std::getenv("SCANET_SEED")) {
    return std::stoull(env);
  }
  return std::nullopt;
}

AugmentSpec parse_augment(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) {
    throw Error("--augment expects 'e-:e+', e.g. -0.1:0.1");
  }
  AugmentSpec spec;
  spec.e_minus = std::stod(text.substr(0, colon));
  spec.e_plus = std::stod(text.substr(colon + 1));
  spec.validate();
  return spec;
}

ExperimentConfig load_config(const std::string& config_path, const std::string& preset) {
  if (!config_path.empty()) return ExperimentConfig::load(config_path);
  return ExperimentConfig::preset(preset);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scanet: neural non-intrusive load monitoring at desk scale"};
  app.require_subcommand(1);
  int threads = 1;
  bool checked = false;
  app.add_option("--threads", threads, "worker threads for kernels (results identical)");
  app.add_flag("--checked", checked, "enable per-op NaN/shape validation");

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate synthetic households from a spec file");
  std::string sim_spec, sim_out;
  uint64_t sim_seed = 0;
  sim->add_option("--spec", sim_spec, "household spec file")->required();
  sim->add_option("--out", sim_out, "output directory")->required();
  auto* sim_seed_opt = sim->add_option("--seed", sim_seed, "override household seeds");

  // prepare
  auto* prep = app.add_subcommand("prepare", "window and subsample training data");
  std::string prep_manifest, prep_appliance, prep_out, prep_config, prep_preset = "redd";
  prep->add_option("--manifest", prep_manifest, "dataset manifest")->required();
  prep->add_option("--appliance", prep_appliance, "appliance name")->required();
  prep->add_option("--out", prep_out, "output directory")->required();
  prep->add_option("--config", prep_config, "experiment config file");
  prep->add_option("--preset", prep_preset, "config preset: redd|ukdale|reduced");

  // train
  auto* train = app.add_subcommand("train", "train a model on prepared data");
  std::string train_model_name = "scanet", train_data, train_config, train_out;
  std::string train_preset = "redd", train_augment;
  bool train_adv = false;
  uint64_t train_seed = 0;
  train->add_option("--model", train_model_name, "scanet|sgn|seq2point|classifier-only");
  train->add_option("--data", train_data, "prepared data directory")->required();
  train->add_option("--config", train_config, "experiment config file");
  train->add_option("--preset", train_preset, "config preset: redd|ukdale|reduced");
  train->add_option("--out", train_out, "checkpoint output path")->required();
  train->add_flag("--adv", train_adv, "train with the WGAN-GP adversarial loss");
  train->add_option("--augment", train_augment, "on-state augmentation range 'e-:e+'");
  auto* train_seed_opt = train->add_option("--seed", train_seed, "training seed");

  // disaggregate
  auto* dis = app.add_subcommand("disaggregate", "run a checkpoint over a mains channel");
  std::string dis_ckpt, dis_mains, dis_out;
  int dis_stride = 0;
  dis->add_option("--ckpt", dis_ckpt, "checkpoint file")->required();
  dis->add_option("--mains", dis_mains, "mains channel file")->required();
  dis->add_option("--out", dis_out, "prediction CSV")->required();
  auto* dis_stride_opt = dis->add_option("--stride", dis_stride, "test window stride");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score predictions against a truth channel");
  std::string ev_pred, ev_truth, ev_report, ev_append;
  int ev_periods = 0;
  double ev_threshold = 15.0;
  bool ev_prob = false;
  ev->add_option("--pred", ev_pred, "prediction CSV")->required();
  ev->add_option("--truth", ev_truth, "truth channel file")->required();
  ev->add_option("--report", ev_report, "report output path")->required();
  auto* ev_periods_opt = ev->add_option("--sae-periods", ev_periods, "number of SAE periods");
  ev->add_option("--on-threshold", ev_threshold, "on/off threshold in watts");
  ev->add_flag("--prob", ev_prob, "predictions are on-probabilities");
  ev->add_option("--append-csv", ev_append, "also append a row to this CSV");

  // export
  auto* ex = app.add_subcommand("export", "write diagnostic artifacts for a checkpoint");
  std::string ex_ckpt, ex_what, ex_out, ex_mains, ex_data;
  int ex_window = 0;
  bool ex_crop = false;
  ex->add_option("--ckpt", ex_ckpt, "checkpoint file")->required();
  ex->add_option("--what", ex_what, "attention|features|bypass|pca")->required();
  ex->add_option("--out", ex_out, "output directory")->required();
  ex->add_option("--window-index", ex_window, "window index into the mains channel");
  ex->add_option("--mains", ex_mains, "mains channel (attention/features/bypass)");
  ex->add_option("--data", ex_data, "prepared data directory (pca)");
  ex->add_flag("--center-crop", ex_crop, "crop feature maps to the middle 256 steps");

  // ablate
  auto* ab = app.add_subcommand("ablate", "sweep model components over seeds");
  std::string ab_manifest, ab_appliance, ab_config, ab_preset = "redd", ab_out;
  AblateOptions ab_opts;
  ab->add_option("--manifest", ab_manifest, "dataset manifest")->required();
  ab->add_option("--appliance", ab_appliance, "appliance name")->required();
  ab->add_option("--config", ab_config, "experiment config file");
  ab->add_option("--preset", ab_preset, "config preset: redd|ukdale|reduced");
  ab->add_option("--out", ab_out, "result CSV")->required();
  ab->add_option("--grid", ab_opts.grid, "toggles to sweep, e.g. ms,sa,al,oa");
  ab->add_option("--seeds", ab_opts.seeds, "trials per row");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help() << "\n";
    return 2;
  }

  set_num_threads(threads);
  set_checked_mode(checked);

  try {
    if (*sim) {
      cmd_simulate(sim_spec, sim_out, seed_or_env(sim_seed_opt, sim_seed));
    } else if (*prep) {
      cmd_prepare(prep_manifest, prep_appliance, prep_out, load_config(prep_config, prep_preset));
    } else if (*train) {
      TrainOptions opts;
      opts.adversarial = train_adv;
      if (!train_augment.empty()) opts.augment = parse_augment(train_augment);
      opts.seed = seed_or_env(train_seed_opt, train_seed);
      cmd_train(train_model_name, train_data, load_config(train_config, train_preset), train_out,
                opts);
    } else if (*dis) {
      cmd_disaggregate(dis_ckpt, dis_mains, dis_out,
                       dis_stride_opt->count() ? std::optional<int>(dis_stride) : std::nullopt);
    } else if (*ev) {
      EvaluateOptions opts;
      if (ev_periods_opt->count()) opts.sae_periods = ev_periods;
      opts.on_threshold = ev_threshold;
      opts.pred_is_prob = ev_prob;
      opts.append_csv = ev_append;
      cmd_evaluate(ev_pred, ev_truth, ev_report, opts);
    } else if (*ex) {
      ExportOptions opts;
      opts.what = ex_what;
      opts.window_index = ex_window;
      opts.center_crop = ex_crop;
      opts.mains_path = ex_mains;
      opts.data_dir = ex_data;
      cmd_export(ex_ckpt, ex_out, opts);
    } else if (*ab) {
      cmd_ablate(ab_manifest, ab_appliance, load_config(ab_config, ab_preset), ab_out, ab_opts);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
