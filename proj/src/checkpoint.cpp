#include "scanet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace scanet {

namespace {

constexpr char kMagic[4] = {'S', 'C', 'K', 'P'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<uint64_t>(v)); }

void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw Error("checkpoint: truncated file");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw Error("checkpoint: truncated file");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

std::string get_string(std::istream& is) {
  uint32_t len = get_u32(is);
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) throw Error("checkpoint: truncated file");
  return s;
}

std::string ints_to_string(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<int> ints_from_string(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stoi(tok));
  }
  return out;
}

std::string kv_to_text(const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += "=";
    out += v;
    out += "\n";
  }
  return out;
}

std::map<std::string, std::string> kv_from_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace

std::map<std::string, std::string> model_config_to_map(const ModelConfig& c) {
  std::map<std::string, std::string> kv;
  kv["s"] = std::to_string(c.s);
  kv["w"] = std::to_string(c.w);
  kv["conv_filters"] = ints_to_string(c.conv_filters);
  kv["kernel_sizes"] = ints_to_string(c.kernel_sizes);
  kv["branch_dilations"] = ints_to_string(c.branch_dilations);
  kv["branch_split_layer"] = std::to_string(c.branch_split_layer);
  kv["merge_filters"] = std::to_string(c.merge_filters);
  kv["attention_reduced"] = std::to_string(c.attention_reduced);
  kv["fc_hidden"] = std::to_string(c.fc_hidden);
  kv["use_branches"] = c.use_branches ? "true" : "false";
  kv["use_attention"] = c.use_attention ? "true" : "false";
  return kv;
}

ModelConfig model_config_from_map(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw Error(std::string("model config: missing key '") + key + "'");
    return it->second;
  };
  c.s = std::stoi(get("s"));
  c.w = std::stoi(get("w"));
  c.conv_filters = ints_from_string(get("conv_filters"));
  c.kernel_sizes = ints_from_string(get("kernel_sizes"));
  c.branch_dilations = ints_from_string(get("branch_dilations"));
  c.branch_split_layer = std::stoi(get("branch_split_layer"));
  c.merge_filters = std::stoi(get("merge_filters"));
  c.attention_reduced = std::stoi(get("attention_reduced"));
  c.fc_hidden = std::stoi(get("fc_hidden"));
  c.use_branches = get("use_branches") == "true";
  c.use_attention = get("use_attention") == "true";
  return c;
}

void save_checkpoint(const std::string& path, const Model& model,
                     const std::map<std::string, std::string>& meta) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("checkpoint: cannot open '" + path + "' for writing");
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_string(os, to_string(model.kind()));
  put_string(os, kv_to_text(model_config_to_map(model.config())));
  put_string(os, kv_to_text(meta));
  put_u64(os, model.params().size());
  for (const NamedParam& p : model.params()) {
    put_string(os, p.name);
    const Tensor& t = *p.value;
    put_u32(os, static_cast<uint32_t>(t.rank()));
    for (int d = 0; d < t.rank(); ++d) put_u64(os, static_cast<uint64_t>(t.dim(d)));
    for (int64_t i = 0; i < t.size(); ++i) put_f64(os, t.at(i));
  }
  if (!os) throw Error("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("checkpoint: cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw Error("checkpoint: bad magic in '" + path + "'");
  }
  uint32_t version = get_u32(is);
  if (version != kVersion) {
    throw Error("checkpoint: unsupported version " + std::to_string(version));
  }
  ModelKind kind = model_kind_from_string(get_string(is));
  ModelConfig config = model_config_from_map(kv_from_text(get_string(is)));
  std::map<std::string, std::string> meta = kv_from_text(get_string(is));

  Model model(kind, config, 0);
  std::map<std::string, std::shared_ptr<Tensor>> by_name;
  for (const NamedParam& p : model.params()) by_name[p.name] = p.value;

  const uint64_t count = get_u64(is);
  if (count != model.params().size()) {
    throw Error("checkpoint: parameter count mismatch in '" + path + "'");
  }
  for (uint64_t i = 0; i < count; ++i) {
    const std::string name = get_string(is);
    auto it = by_name.find(name);
    if (it == by_name.end()) throw Error("checkpoint: unknown parameter '" + name + "'");
    const uint32_t rank = get_u32(is);
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int64_t>(get_u64(is));
    if (shape != it->second->shape()) {
      throw Error("checkpoint: shape mismatch for parameter '" + name + "'");
    }
    for (int64_t j = 0; j < it->second->size(); ++j) it->second->at(j) = get_f64(is);
  }
  return Checkpoint(kind, std::move(config), std::move(meta), std::move(model));
}

}  // namespace scanet
