#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "hhp/core.hpp"

namespace hhp {

// JSON-lines dataset format.
//
// Optional first line:  {"num_marks": K}
// Every other line:     {"t_end": <number>, "events": [[t, k], ...]}
// with event times strictly ascending and integer marks. When no header is
// present, K is inferred as (max observed mark) + 1.
inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);

  Dataset ds;
  bool declared_marks = false;
  int max_mark = -1;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("parse error at line " + std::to_string(line_no) + ": " + e.what());
    }
    if (line_no == 1 && j.is_object() && j.contains("num_marks") && !j.contains("events")) {
      ds.num_marks = j.at("num_marks").get<int>();
      if (ds.num_marks <= 0) {
        throw std::runtime_error("parse error at line 1: num_marks must be positive");
      }
      declared_marks = true;
      continue;
    }
    if (!j.is_object() || !j.contains("t_end") || !j.contains("events")) {
      throw std::runtime_error("parse error at line " + std::to_string(line_no) +
                               ": expected {\"t_end\": ..., \"events\": [[t, k], ...]}");
    }
    Sequence seq;
    seq.t_end = j.at("t_end").get<double>();
    for (const auto& ev : j.at("events")) {
      if (!ev.is_array() || ev.size() != 2) {
        throw std::runtime_error("parse error at line " + std::to_string(line_no) +
                                 ": each event must be a [time, mark] pair");
      }
      Event e;
      e.t = ev[0].get<double>();
      e.mark = ev[1].get<int>();
      max_mark = std::max(max_mark, e.mark);
      seq.events.push_back(e);
    }
    ds.sequences.push_back(std::move(seq));
  }
  if (ds.sequences.empty()) throw std::runtime_error("empty dataset");
  if (!declared_marks) ds.num_marks = max_mark + 1;
  if (ds.num_marks <= 0) throw std::runtime_error("dataset has no marks");

  for (size_t s = 0; s < ds.sequences.size(); ++s) {
    const auto violations = validate_sequence(ds.sequences[s], ds.num_marks);
    if (!violations.empty()) {
      std::ostringstream msg;
      msg << "validation error in sequence " << s << ": " << violations.front();
      throw std::runtime_error(msg.str());
    }
  }
  return ds;
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open output file: " + path);
  out << nlohmann::ordered_json{{"num_marks", ds.num_marks}}.dump() << "\n";
  for (const Sequence& seq : ds.sequences) {
    nlohmann::ordered_json events = nlohmann::ordered_json::array();
    for (const Event& e : seq.events) {
      events.push_back(nlohmann::ordered_json::array({e.t, e.mark}));
    }
    out << nlohmann::ordered_json{{"t_end", seq.t_end}, {"events", std::move(events)}}.dump()
        << "\n";
  }
  if (!out) throw std::runtime_error("failed writing dataset: " + path);
}

}  // namespace hhp
