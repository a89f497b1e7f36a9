#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "sslbd/probe.hpp"

namespace sslbd {

/// Four measurements of one model: Acc/FP on clean and on patched data.
struct QuadrantCells {
  double clean_acc = 0.0;
  double clean_fp = 0.0;
  double patched_acc = 0.0;
  double patched_fp = 0.0;
};

/// One body row of a Table-1-shaped comparison.
struct ReportRow {
  std::string dataset_preset;
  std::string target;
  int trigger_id = 10;
  std::string method;
  QuadrantCells clean_model;
  QuadrantCells backdoored_model;
};

QuadrantCells cells_of(const EvalReport& r);
ReportRow make_report_row(const std::string& preset, int trigger_id, const std::string& method,
                          const EvalReport& clean_model, const EvalReport& backdoored_model);

struct MethodAverage {
  std::string method;
  std::size_t rows = 0;
  QuadrantCells clean_model;
  QuadrantCells backdoored_model;
};

struct RenderedReport {
  std::string text;
  nlohmann::json json;
  std::vector<MethodAverage> averages;
};

/// Groups rows by method (first-appearance order) and appends an arithmetic
/// mean row per group. Refuses rows from different dataset presets.
RenderedReport render_report(const std::vector<ReportRow>& rows);

nlohmann::json to_json(const ReportRow& r);
ReportRow report_row_from_json(const nlohmann::json& j);

}  // namespace sslbd
