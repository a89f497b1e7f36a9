#include "sslbd/report.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "sslbd/errors.hpp"

namespace sslbd {

QuadrantCells cells_of(const EvalReport& r) {
  return {r.clean_acc, static_cast<double>(r.target_fp_clean()), r.patched_acc,
          static_cast<double>(r.target_fp_patched())};
}

ReportRow make_report_row(const std::string& preset, int trigger_id, const std::string& method,
                          const EvalReport& clean_model, const EvalReport& backdoored_model) {
  ReportRow row;
  row.dataset_preset = preset;
  row.trigger_id = trigger_id;
  row.method = method;
  row.target = backdoored_model.target_class ? backdoored_model.classes.at(*backdoored_model.target_class) : "-";
  row.clean_model = cells_of(clean_model);
  row.backdoored_model = cells_of(backdoored_model);
  return row;
}

namespace {

void accumulate(QuadrantCells& sum, const QuadrantCells& c) {
  sum.clean_acc += c.clean_acc;
  sum.clean_fp += c.clean_fp;
  sum.patched_acc += c.patched_acc;
  sum.patched_fp += c.patched_fp;
}

QuadrantCells divide(QuadrantCells c, double n) {
  c.clean_acc /= n;
  c.clean_fp /= n;
  c.patched_acc /= n;
  c.patched_fp /= n;
  return c;
}

nlohmann::json cells_json(const QuadrantCells& c) {
  return {{"clean_acc", c.clean_acc}, {"clean_fp", c.clean_fp}, {"patched_acc", c.patched_acc},
          {"patched_fp", c.patched_fp}};
}

QuadrantCells cells_from_json(const nlohmann::json& j) {
  return {j.at("clean_acc").get<double>(), j.at("clean_fp").get<double>(), j.at("patched_acc").get<double>(),
          j.at("patched_fp").get<double>()};
}

void write_cells(std::ostringstream& out, const QuadrantCells& c) {
  out << std::setw(7) << c.clean_acc << std::setw(8) << c.clean_fp << std::setw(7) << c.patched_acc << std::setw(8)
      << c.patched_fp;
}

}  // namespace

nlohmann::json to_json(const ReportRow& r) {
  return {{"dataset_preset", r.dataset_preset},
          {"target", r.target},
          {"trigger_id", r.trigger_id},
          {"method", r.method},
          {"clean_model", cells_json(r.clean_model)},
          {"backdoored_model", cells_json(r.backdoored_model)}};
}

ReportRow report_row_from_json(const nlohmann::json& j) {
  try {
    ReportRow r;
    r.dataset_preset = j.at("dataset_preset").get<std::string>();
    r.target = j.at("target").get<std::string>();
    r.trigger_id = j.at("trigger_id").get<int>();
    r.method = j.at("method").get<std::string>();
    r.clean_model = cells_from_json(j.at("clean_model"));
    r.backdoored_model = cells_from_json(j.at("backdoored_model"));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report row: ") + e.what());
  }
}

RenderedReport render_report(const std::vector<ReportRow>& rows) {
  RenderedReport out;
  if (rows.empty()) throw ConfigError("nothing to report");
  for (const auto& r : rows) {
    if (r.dataset_preset != rows.front().dataset_preset) {
      throw ConfigError("cannot aggregate runs from dataset presets '" + rows.front().dataset_preset + "' and '" +
                        r.dataset_preset + "'");
    }
  }
  std::vector<std::string> order;
  for (const auto& r : rows) {
    if (std::find(order.begin(), order.end(), r.method) == order.end()) order.push_back(r.method);
  }

  std::ostringstream text;
  text << std::fixed << std::setprecision(1);
  text << "dataset: " << rows.front().dataset_preset << "\n";
  text << std::left << std::setw(22) << "target (trigger)" << std::setw(10) << "method" << std::right
       << "  | clean model: clean Acc/FP, patched Acc/FP | backdoored model: clean Acc/FP, patched Acc/FP\n";
  nlohmann::json body = nlohmann::json::array();
  nlohmann::json avgs = nlohmann::json::array();
  for (const auto& method : order) {
    MethodAverage avg;
    avg.method = method;
    for (const auto& r : rows) {
      if (r.method != method) continue;
      ++avg.rows;
      accumulate(avg.clean_model, r.clean_model);
      accumulate(avg.backdoored_model, r.backdoored_model);
      std::ostringstream label;
      label << r.target << " (" << r.trigger_id << ")";
      text << std::left << std::setw(22) << label.str() << std::setw(10) << r.method << std::right << "  |";
      write_cells(text, r.clean_model);
      text << "  |";
      write_cells(text, r.backdoored_model);
      text << "\n";
      body.push_back(to_json(r));
    }
    avg.clean_model = divide(avg.clean_model, static_cast<double>(avg.rows));
    avg.backdoored_model = divide(avg.backdoored_model, static_cast<double>(avg.rows));
    text << std::left << std::setw(22) << "Average" << std::setw(10) << method << std::right << "  |";
    write_cells(text, avg.clean_model);
    text << "  |";
    write_cells(text, avg.backdoored_model);
    text << "\n";
    avgs.push_back({{"method", method},
                    {"rows", avg.rows},
                    {"clean_model", cells_json(avg.clean_model)},
                    {"backdoored_model", cells_json(avg.backdoored_model)}});
    out.averages.push_back(avg);
  }
  out.text = text.str();
  out.json = {{"dataset_preset", rows.front().dataset_preset}, {"rows", body}, {"averages", avgs}};
  return out;
}

}  // namespace sslbd
