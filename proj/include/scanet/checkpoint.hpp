#pragma once

#include <map>
#include <string>

#include "scanet/model.hpp"

namespace scanet {

// Binary checkpoint container, version 1. Little-endian throughout; doubles
// are stored as IEEE-754 bit patterns so a save/load round trip is exact.
//
//   magic "SCKP" | u32 version | kind string | config block (key=value text)
//   meta block (key=value text) | u64 param count
//   per param: name | u32 rank | u64 dims[] | f64 data[]
void save_checkpoint(const std::string& path, const Model& model,
                     const std::map<std::string, std::string>& meta = {});

struct Checkpoint {
  ModelKind kind;
  ModelConfig config;
  std::map<std::string, std::string> meta;
  Model model;  // parameters restored

  Checkpoint(ModelKind k, ModelConfig c, std::map<std::string, std::string> m, Model mod)
      : kind(k), config(std::move(c)), meta(std::move(m)), model(std::move(mod)) {}
};

Checkpoint load_checkpoint(const std::string& path);

// config <-> text block used inside checkpoints and config files
std::map<std::string, std::string> model_config_to_map(const ModelConfig& config);
ModelConfig model_config_from_map(const std::map<std::string, std::string>& kv);

}  // namespace scanet
