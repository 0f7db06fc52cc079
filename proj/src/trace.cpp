#include "stm/trace.hpp"

#include <istream>
#include <ostream>

#include "json.hpp"
#include "stm/error.hpp"

namespace stm {

using json = nlohmann::json;

std::string step_record_json(const StepTraceRec& rec) {
  json layers = json::array();
  for (const LayerTraceRec& l : rec.layers) {
    json experts = json::array();
    for (const ExpertTraceRec& e : l.experts)
      experts.push_back(json::array({e.id, e.activation_ratio}));
    layers.push_back({{"experts", std::move(experts)},
                      {"hits", l.cache_hits},
                      {"stall_ns", l.stall_ns}});
  }
  json j{{"step", rec.step},
         {"phase", rec.prefill ? "prefill" : "decode"},
         {"token", rec.token},
         {"layers", std::move(layers)},
         {"cand", rec.candidate_count},
         {"lat_ns", rec.latency_ns}};
  return j.dump();
}

void write_trace(std::ostream& out, const DecodeTrace& trace) {
  for (const StepTraceRec& rec : trace.steps) out << step_record_json(rec) << "\n";
  const TraceSummary& s = trace.summary;
  json j{{"summary",
          {{"steps", s.steps},
           {"generated", s.generated},
           {"tokens_per_s", s.tokens_per_s},
           {"peak_resident_bytes", s.peak_resident_bytes},
           {"cache_hits", s.cache_hits},
           {"cache_misses", s.cache_misses},
           {"evictions", s.evictions},
           {"bytes_read", s.bytes_read},
           {"stall_ns", s.stall_ns}}}};
  out << j.dump() << "\n";
}

DecodeTrace read_trace(std::istream& in) {
  DecodeTrace trace;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    line_no++;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("trace line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (j.contains("summary")) {
        const json& s = j.at("summary");
        trace.summary.steps = s.at("steps").get<uint64_t>();
        trace.summary.generated = s.at("generated").get<uint64_t>();
        trace.summary.tokens_per_s = s.at("tokens_per_s").get<double>();
        trace.summary.peak_resident_bytes = s.at("peak_resident_bytes").get<uint64_t>();
        trace.summary.cache_hits = s.at("cache_hits").get<uint64_t>();
        trace.summary.cache_misses = s.at("cache_misses").get<uint64_t>();
        trace.summary.evictions = s.at("evictions").get<uint64_t>();
        trace.summary.bytes_read = s.at("bytes_read").get<uint64_t>();
        trace.summary.stall_ns = s.at("stall_ns").get<uint64_t>();
        continue;
      }
      StepTraceRec rec;
      rec.step = j.at("step").get<int>();
      rec.prefill = j.at("phase").get<std::string>() == "prefill";
      rec.token = j.at("token").get<int>();
      rec.candidate_count = j.at("cand").get<int>();
      rec.latency_ns = j.at("lat_ns").get<uint64_t>();
      for (const json& lj : j.at("layers")) {
        LayerTraceRec l;
        l.cache_hits = lj.at("hits").get<int>();
        l.stall_ns = lj.at("stall_ns").get<uint64_t>();
        for (const json& ej : lj.at("experts"))
          l.experts.push_back({ej.at(0).get<int>(), ej.at(1).get<float>()});
        rec.layers.push_back(std::move(l));
      }
      trace.steps.push_back(std::move(rec));
    } catch (const json::exception& e) {
      throw ParseError("trace line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return trace;
}

}  // namespace stm
