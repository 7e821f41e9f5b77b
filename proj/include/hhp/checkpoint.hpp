#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "hhp/lhp.hpp"
#include "hhp/model.hpp"

namespace hhp {

// Single-document JSON checkpoint: dims, ablation kind, and every parameter
// array (row-major, named). Doubles round-trip bit-exactly through the
// shortest-representation serializer.
inline nlohmann::ordered_json checkpoint_json(const HhpModel& model) {
  nlohmann::ordered_json doc;
  doc["format"] = "hhp-checkpoint-v1";
  doc["kind"] = "hhp";
  doc["dims"] = {{"d", model.dims().d},
                 {"h", model.dims().h},
                 {"l", model.dims().l},
                 {"r", model.dims().r},
                 {"num_marks", model.dims().num_marks}};
  doc["ablation"] = to_string(model.ablation());
  doc["param_count"] = model.params().scalar_count();
  nlohmann::ordered_json params = nlohmann::ordered_json::array();
  for (size_t i = 0; i < model.params().size(); ++i) {
    const ParamInfo& p = model.params()[i];
    params.push_back({{"name", p.name}, {"shape", p.shape}, {"data", p.value}});
  }
  doc["params"] = std::move(params);
  return doc;
}

inline void save_checkpoint(const std::string& path, const HhpModel& model) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out << checkpoint_json(model).dump(2) << "\n";
}

inline HhpModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  nlohmann::json doc;
  in >> doc;
  if (doc.value("kind", "") != "hhp") {
    throw std::runtime_error("checkpoint is not an HHP model: " + path);
  }
  HhpDims dims;
  dims.d = doc.at("dims").at("d").get<int>();
  dims.h = doc.at("dims").at("h").get<int>();
  dims.l = doc.at("dims").at("l").get<int>();
  dims.r = doc.at("dims").at("r").get<int>();
  dims.num_marks = doc.at("dims").at("num_marks").get<int>();
  HhpModel model = HhpModel::create(dims, ablation_from_string(doc.at("ablation").get<std::string>()),
                                    /*seed=*/0);
  for (const auto& pj : doc.at("params")) {
    const std::string name = pj.at("name").get<std::string>();
    const int idx = model.params().index_of(name);
    if (idx < 0) throw std::runtime_error("checkpoint param not in model: " + name);
    ad::Array value = pj.at("data").get<ad::Array>();
    if (value.size() != model.params()[idx].value.size()) {
      throw std::runtime_error("checkpoint param shape mismatch: " + name);
    }
    model.params()[idx].value = std::move(value);
  }
  return model;
}

// LHP parameter files share the container so tests and the CLI can simulate
// or evaluate either model kind.
inline void save_lhp(const std::string& path, const LhpParams& p) {
  nlohmann::ordered_json doc;
  doc["format"] = "hhp-checkpoint-v1";
  doc["kind"] = "lhp";
  doc["num_marks"] = p.num_marks;
  doc["mu"] = p.mu;
  doc["beta"] = p.beta;
  doc["alpha"] = p.alpha;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out << doc.dump(2) << "\n";
}

inline LhpParams load_lhp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  nlohmann::json doc;
  in >> doc;
  if (doc.value("kind", "") != "lhp") {
    throw std::runtime_error("checkpoint is not an LHP model: " + path);
  }
  LhpParams p;
  p.num_marks = doc.at("num_marks").get<int>();
  p.mu = doc.at("mu").get<ad::Array>();
  p.beta = doc.at("beta").get<ad::Array>();
  p.alpha = doc.at("alpha").get<ad::Array>();
  return p;
}

inline std::string checkpoint_kind(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  nlohmann::json doc;
  in >> doc;
  return doc.value("kind", "");
}

// FNV-1a 64-bit over the file bytes; identifies the exact checkpoint an
// attribution report was produced from.
inline std::string file_fnv1a64(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file for hashing: " + path);
  uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  std::ostringstream os;
  os << std::hex << h;
  return "fnv1a64:" + os.str();
}

}  // namespace hhp
