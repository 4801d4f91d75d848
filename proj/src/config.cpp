#include "scanet/config.hpp"

#include <fstream>
#include <sstream>

namespace scanet {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  const auto b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!trim(tok).empty()) out.push_back(std::stoi(trim(tok)));
  }
  return out;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw Error("config: expected a boolean, got '" + s + "'");
}

std::string ints_str(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

ExperimentConfig ExperimentConfig::preset(const std::string& name) {
  ExperimentConfig c;
  if (name == "redd") {
    c.model = ModelConfig::redd();
  } else if (name == "ukdale") {
    c.model = ModelConfig::ukdale();
  } else if (name == "reduced") {
    c.model = ModelConfig::reduced();
  } else {
    throw Error("unknown config preset '" + name + "'");
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open config '" + path + "'");
  ExperimentConfig c;
  std::string section;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    if (text.front() == '[' && text.back() == ']') {
      section = text.substr(1, text.size() - 2);
      if (section != "model" && section != "training" && section != "data") {
        throw Error("config: unknown section '" + section + "' at line " +
                    std::to_string(line_no));
      }
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw Error("config: expected key=value at line " + std::to_string(line_no));
    }
    const std::string key = trim(text.substr(0, eq));
    const std::string value = trim(text.substr(eq + 1));
    try {
      if (section.empty() && key == "preset") {
        c = preset(value);
      } else if (section == "model") {
        if (key == "arch") c.arch = value;
        else if (key == "s") c.model.s = std::stoi(value);
        else if (key == "w") c.model.w = std::stoi(value);
        else if (key == "conv_filters") c.model.conv_filters = parse_ints(value);
        else if (key == "kernel_sizes") c.model.kernel_sizes = parse_ints(value);
        else if (key == "branch_dilations") c.model.branch_dilations = parse_ints(value);
        else if (key == "branch_split_layer") c.model.branch_split_layer = std::stoi(value);
        else if (key == "merge_filters") c.model.merge_filters = std::stoi(value);
        else if (key == "attention_reduced") c.model.attention_reduced = std::stoi(value);
        else if (key == "fc_hidden") c.model.fc_hidden = std::stoi(value);
        else if (key == "use_branches") c.model.use_branches = parse_bool(value);
        else if (key == "use_attention") c.model.use_attention = parse_bool(value);
        else throw Error("unknown key '" + key + "'");
      } else if (section == "training") {
        if (key == "learning_rate") c.training.learning_rate = std::stod(value);
        else if (key == "epochs") c.training.epochs = std::stoi(value);
        else if (key == "batch_size") c.training.batch_size = std::stoi(value);
        else if (key == "lambda_adv") c.training.lambda_adv = std::stod(value);
        else if (key == "lambda_gp") c.training.lambda_gp = std::stod(value);
        else if (key == "n_critic") c.training.n_critic = std::stoi(value);
        else if (key == "adam_beta1") c.training.adam_beta1 = std::stod(value);
        else if (key == "adam_beta2") c.training.adam_beta2 = std::stod(value);
        else if (key == "adam_eps") c.training.adam_eps = std::stod(value);
        else if (key == "seed") c.training.seed = std::stoull(value);
        else if (key == "augment_min") c.training.augment.e_minus = std::stod(value);
        else if (key == "augment_max") c.training.augment.e_plus = std::stod(value);
        else if (key == "critic_layers") c.training.critic.conv_layers = std::stoi(value);
        else if (key == "critic_filters") c.training.critic.filters = std::stoi(value);
        else if (key == "critic_kernel") c.training.critic.kernel = std::stoi(value);
        else if (key == "critic_fc_hidden") c.training.critic.fc_hidden = std::stoi(value);
        else throw Error("unknown key '" + key + "'");
      } else if (section == "data") {
        if (key == "scale") c.data.scale = std::stod(value);
        else if (key == "on_threshold") c.data.on_threshold = std::stod(value);
        else if (key == "train_step") c.data.train_step = std::stoi(value);
        else if (key == "test_step") c.data.test_step = std::stoi(value);
        else if (key == "keep_prob") c.data.keep_prob = std::stod(value);
        else if (key == "sae_periods") c.data.sae_periods = std::stoi(value);
        else throw Error("unknown key '" + key + "'");
      } else {
        throw Error("key '" + key + "' outside any section");
      }
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw Error("config: bad value for '" + key + "' at line " + std::to_string(line_no) +
                  ": " + e.what());
    }
  }
  return c;
}

void ExperimentConfig::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os << "[model]\n";
  os << "arch = " << arch << "\n";
  os << "s = " << model.s << "\n";
  os << "w = " << model.w << "\n";
  os << "conv_filters = " << ints_str(model.conv_filters) << "\n";
  os << "kernel_sizes = " << ints_str(model.kernel_sizes) << "\n";
  os << "branch_dilations = " << ints_str(model.branch_dilations) << "\n";
  os << "branch_split_layer = " << model.branch_split_layer << "\n";
  os << "merge_filters = " << model.merge_filters << "\n";
  os << "attention_reduced = " << model.attention_reduced << "\n";
  os << "fc_hidden = " << model.fc_hidden << "\n";
  os << "use_branches = " << (model.use_branches ? "true" : "false") << "\n";
  os << "use_attention = " << (model.use_attention ? "true" : "false") << "\n";
  os << "\n[training]\n";
  os << "learning_rate = " << fmt17(training.learning_rate) << "\n";
  os << "epochs = " << training.epochs << "\n";
  os << "batch_size = " << training.batch_size << "\n";
  os << "lambda_adv = " << fmt17(training.lambda_adv) << "\n";
  os << "lambda_gp = " << fmt17(training.lambda_gp) << "\n";
  os << "n_critic = " << training.n_critic << "\n";
  os << "adam_beta1 = " << fmt17(training.adam_beta1) << "\n";
  os << "adam_beta2 = " << fmt17(training.adam_beta2) << "\n";
  os << "adam_eps = " << fmt17(training.adam_eps) << "\n";
  os << "seed = " << training.seed << "\n";
  os << "augment_min = " << fmt17(training.augment.e_minus) << "\n";
  os << "augment_max = " << fmt17(training.augment.e_plus) << "\n";
  os << "critic_layers = " << training.critic.conv_layers << "\n";
  os << "critic_filters = " << training.critic.filters << "\n";
  os << "critic_kernel = " << training.critic.kernel << "\n";
  os << "critic_fc_hidden = " << training.critic.fc_hidden << "\n";
  os << "\n[data]\n";
  os << "scale = " << fmt17(data.scale) << "\n";
  os << "on_threshold = " << fmt17(data.on_threshold) << "\n";
  os << "train_step = " << data.train_step << "\n";
  os << "test_step = " << data.test_step << "\n";
  os << "keep_prob = " << fmt17(data.keep_prob) << "\n";
  os << "sae_periods = " << data.sae_periods << "\n";
  if (!os) throw Error("write failed for '" + path + "'");
}

}  // namespace scanet
