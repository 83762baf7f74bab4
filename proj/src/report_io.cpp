#include "scnn/report_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

SCNN_NAMESPACE_BEGIN

using nlohmann::json;

namespace {

std::string number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

template <class T>
std::string cell(const std::optional<T>& v) {
  if (!v) return "";
  if constexpr (std::is_floating_point_v<T>) {
    return number(*v);
  } else {
    return std::to_string(*v);
  }
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

json to_json(const SampleRecord& r) {
  json j{{"source_index", r.source_index},
         {"variant", r.variant},
         {"cycle", r.cycle},
         {"manipulator", to_string(r.kind)},
         {"label", r.label},
         {"aborted", r.aborted}};
  if (r.aborted) {
    j["error"] = r.error;
  } else {
    j["prediction"] = r.prediction;
    j["steps"] = r.steps;
    j["top2"] = {r.top2[0], r.top2[1]};
    j["flipped"] = r.flipped;
    j["loss_reduced"] = r.loss_reduced;
    j["initial_loss"] = r.initial_loss;
    j["final_loss"] = r.final_loss;
    j["margin"] = r.margin;
  }
  return j;
}

SampleRecord record_from_json(const json& j) {
  SampleRecord r;
  r.source_index = j.at("source_index").get<std::size_t>();
  r.variant = j.at("variant").get<std::size_t>();
  r.cycle = j.at("cycle").get<int>();
  r.kind = parse_manipulator_kind(j.at("manipulator").get<std::string>());
  r.label = j.at("label").get<int>();
  r.aborted = j.at("aborted").get<bool>();
  if (r.aborted) {
    r.error = j.value("error", std::string());
    return r;
  }
  r.prediction = j.at("prediction").get<int>();
  r.steps = j.at("steps").get<std::size_t>();
  r.top2 = {j.at("top2").at(0).get<int>(), j.at("top2").at(1).get<int>()};
  r.flipped = j.at("flipped").get<bool>();
  r.loss_reduced = j.at("loss_reduced").get<bool>();
  r.initial_loss = j.at("initial_loss").get<Real>();
  r.final_loss = j.at("final_loss").get<Real>();
  r.margin = j.at("margin").get<Real>();
  return r;
}

}  // namespace

std::string metrics_csv(std::span<const MetricsRow> rows) {
  std::ostringstream out;
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    out << r.cycle << ',' << r.phase << ',' << cell(r.epoch) << ',' << cell(r.train_accuracy) << ','
        << cell(r.test_accuracy) << ',' << cell(r.loss) << ',' << cell(r.synth_count) << ',' << cell(r.flip_rate)
        << ',' << number(r.wall_ms) << '\n';
  }
  return out.str();
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRow> rows) {
  auto out = open_for_write(path);
  out << metrics_csv(rows);
}

void write_provenance_jsonl(const std::filesystem::path& path, std::span<const SampleRecord> records) {
  auto out = open_for_write(path);
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

std::vector<SampleRecord> read_provenance_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<SampleRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(record_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

void write_report_json(const std::filesystem::path& path, const RunReport& report) {
  json cycles = json::array();
  for (const auto& c : report.cycles) {
    cycles.push_back({{"cycle", c.cycle},
                      {"phase1_train_accuracy", c.phase1_train_accuracy},
                      {"phase1_test_accuracy", c.phase1_test_accuracy},
                      {"train_accuracy", c.train_accuracy},
                      {"test_accuracy", c.test_accuracy},
                      {"synthesized", c.synthesized},
                      {"aborted", c.aborted},
                      {"flip_rate", c.flip_rate},
                      {"wall_ms", c.wall_ms},
                      {"checksum_before_synthesis", c.checksum_before_synthesis},
                      {"checksum_after_synthesis", c.checksum_after_synthesis}});
  }
  json j{{"strategy", to_string(report.strategy)},
         {"cycles", cycles},
         {"pool_size", report.pool_size},
         {"online_final_accuracy", report.online_final_accuracy},
         {"final_accuracy", report.final_accuracy},
         {"stopped_early", report.stopped_early},
         {"frozen_contract_held", report.frozen_contract_held()},
         {"failure", report.failure ? json(*report.failure) : json(nullptr)}};
  auto out = open_for_write(path);
  out << j.dump(2) << '\n';
}

SCNN_NAMESPACE_END
