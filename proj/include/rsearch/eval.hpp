#pragma once

#include <algorithm>
#include <cctype>
#include <istream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "rsearch/rewards.hpp"

namespace rsearch::eval {

struct DatasetRecord {
  std::string id;
  std::string question;
  std::vector<std::string> golden_answers;
};

struct DatasetMetrics {
  double em = 0.0;  // percent
  double f1 = 0.0;  // percent
  std::size_t n = 0;
};

struct EvalReport {
  std::map<std::string, DatasetMetrics> per_dataset;
  std::optional<double> multi_hop_avg;
  std::optional<double> single_hop_avg;
  double overall_avg = 0.0;
};

/// Dataset file: JSON-lines with id, question, golden_answers.
inline std::vector<DatasetRecord> load_dataset(std::istream& in) {
  std::vector<DatasetRecord> records;
  std::unordered_set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("dataset line " + std::to_string(line_no) +
                               ": " + e.what());
    }
    if (!j.contains("id") || !j.contains("question") ||
        !j.contains("golden_answers"))
      throw std::runtime_error("dataset line " + std::to_string(line_no) +
                               ": missing id/question/golden_answers");
    DatasetRecord rec{j["id"].get<std::string>(),
                      j["question"].get<std::string>(),
                      j["golden_answers"].get<std::vector<std::string>>()};
    if (rec.golden_answers.empty())
      throw std::runtime_error("dataset line " + std::to_string(line_no) +
                               ": empty golden_answers");
    if (!seen.insert(rec.id).second)
      throw std::runtime_error("dataset: duplicate id \"" + rec.id + "\"");
    records.push_back(std::move(rec));
  }
  return records;
}

/// Per-record EM/F1 (max over golds) averaged over the dataset, x100.
/// `answers` maps record id to the extracted prediction; a record id with
/// no entry is an error, a record whose episode produced no answer box
/// should map to an empty optional and scores 0/0.
inline DatasetMetrics evaluate(
    const std::vector<DatasetRecord>& records,
    const std::unordered_map<std::string, std::optional<std::string>>&
        answers) {
  DatasetMetrics m;
  m.n = records.size();
  if (records.empty()) return m;
  double em_sum = 0.0;
  double f1_sum = 0.0;
  for (const auto& rec : records) {
    auto it = answers.find(rec.id);
    if (it == answers.end())
      throw std::runtime_error("no episode for record id \"" + rec.id + "\"");
    if (it->second) {
      em_sum += rewards::max_em_over_golds(*it->second, rec.golden_answers);
      f1_sum += rewards::max_f1_over_golds(*it->second, rec.golden_answers);
    }
  }
  m.em = 100.0 * em_sum / static_cast<double>(records.size());
  m.f1 = 100.0 * f1_sum / static_cast<double>(records.size());
  return m;
}

namespace detail {

inline std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline bool is_multi_hop(const std::string& dataset) {
  static const std::unordered_set<std::string> names = {
      "hotpotqa", "2wikimultihopqa", "2wikimqa", "musique", "bamboogle"};
  return names.count(lower(dataset)) > 0;
}

inline bool is_single_hop(const std::string& dataset) {
  static const std::unordered_set<std::string> names = {"nq", "triviaqa",
                                                        "popqa"};
  return names.count(lower(dataset)) > 0;
}

}  // namespace detail

/// Aggregates per-dataset metrics; group averages are unweighted means over
/// the constituent datasets' EM and F1 values.
inline EvalReport assemble_report(
    const std::map<std::string, DatasetMetrics>& per_dataset) {
  EvalReport report;
  report.per_dataset = per_dataset;
  double multi_sum = 0.0, single_sum = 0.0, overall_sum = 0.0;
  std::size_t multi_n = 0, single_n = 0, overall_n = 0;
  for (const auto& [name, m] : per_dataset) {
    overall_sum += m.em + m.f1;
    overall_n += 2;
    if (detail::is_multi_hop(name)) {
      multi_sum += m.em + m.f1;
      multi_n += 2;
    } else if (detail::is_single_hop(name)) {
      single_sum += m.em + m.f1;
      single_n += 2;
    }
  }
  if (multi_n > 0) report.multi_hop_avg = multi_sum / multi_n;
  if (single_n > 0) report.single_hop_avg = single_sum / single_n;
  if (overall_n > 0) report.overall_avg = overall_sum / overall_n;
  return report;
}

inline nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [name, m] : report.per_dataset)
    per[name] = {{"em", m.em}, {"f1", m.f1}, {"n", m.n}};
  nlohmann::json j{{"per_dataset", per}, {"overall_avg", report.overall_avg}};
  if (report.multi_hop_avg) j["multi_hop_avg"] = *report.multi_hop_avg;
  if (report.single_hop_avg) j["single_hop_avg"] = *report.single_hop_avg;
  return j;
}

}  // namespace rsearch::eval
