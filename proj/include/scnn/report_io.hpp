#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "scnn/lifecycle.hpp"

SCNN_NAMESPACE_BEGIN

inline constexpr const char* kMetricsHeader = "cycle,phase,epoch,train_acc,test_acc,loss,synth_count,flip_rate,wall_ms";

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRow> rows);
std::string metrics_csv(std::span<const MetricsRow> rows);

/// One JSON object per line.
void write_provenance_jsonl(const std::filesystem::path& path, std::span<const SampleRecord> records);
std::vector<SampleRecord> read_provenance_jsonl(const std::filesystem::path& path);

void write_report_json(const std::filesystem::path& path, const RunReport& report);

SCNN_NAMESPACE_END
