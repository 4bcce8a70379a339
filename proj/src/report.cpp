#include "ctrkd/report.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>

#include "ctrkd/format.hpp"

namespace ctrkd::experiment {

namespace {

std::string fixed(double v, int digits, bool sign = false) {
  char buf[64];
  std::snprintf(buf, sizeof buf, sign ? "%+.*f" : "%.*f", digits, v);
  return buf;
}

std::string pad(std::string s, std::size_t width, bool left = false) {
  if (s.size() >= width) return s;
  const std::string fill(width - s.size(), ' ');
  return left ? s + fill : fill + s;
}

template <class T>
T parse_field(std::string_view text, std::size_t line) {
  T out{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw std::invalid_argument("results line " + std::to_string(line) + ": bad value '" +
                                std::string(text) + "'");
  }
  return out;
}

}  // namespace

double mean(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double sample_std(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

const Aggregate& ExperimentReport::aggregate(const std::string& model) const {
  for (const auto& a : aggregates) {
    if (a.model == model) return a;
  }
  throw std::out_of_range("report has no model '" + model + "'");
}

ExperimentReport build_report(std::vector<ResultRow> rows, const std::string& baseline) {
  ExperimentReport report;
  report.baseline = baseline;
  report.rows = std::move(rows);
  std::vector<std::string> order;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_model;
  for (const auto& r : report.rows) {
    auto [it, fresh] = by_model.try_emplace(r.model);
    if (fresh) order.push_back(r.model);
    it->second.first.push_back(r.auc);
    it->second.second.push_back(r.logloss);
  }
  if (!by_model.contains(baseline)) {
    throw std::invalid_argument("baseline '" + baseline + "' has no results");
  }
  for (const auto& name : order) {
    const auto& [aucs, lls] = by_model.at(name);
    report.aggregates.push_back(
        {name, aucs.size(), mean(aucs), sample_std(aucs), mean(lls), sample_std(lls), 0.0, 0.0});
  }
  const Aggregate base = report.aggregate(baseline);
  for (auto& a : report.aggregates) {
    a.auc_delta_permille = (a.auc_mean - base.auc_mean) * 1000.0;
    a.logloss_delta_permille = (a.logloss_mean - base.logloss_mean) * 1000.0;
  }
  return report;
}

std::string report_text(const ExperimentReport& report) {
  std::size_t w = 5;
  for (const auto& r : report.rows) w = std::max(w, r.model.size());
  std::string out;
  out += pad("model", w, true) + "  " + pad("seed", 6) + "  " + pad("AUC", 8) + "  " +
         pad("logloss", 8) + "  " + pad("epoch", 5) + "  " + pad("seconds", 9) + "\n";
  for (const auto& r : report.rows) {
    out += pad(r.model, w, true) + "  " + pad(std::to_string(r.seed), 6) + "  " +
           pad(fixed(r.auc, 4), 8) + "  " + pad(fixed(r.logloss, 4), 8) + "  " +
           pad(std::to_string(r.best_epoch), 5) + "  " + pad(fixed(r.seconds, 1), 9) + "\n";
  }
  out += "\nbaseline: " + report.baseline + "\n";
  out += pad("model", w, true) + "  " + pad("runs", 4) + "  " + pad("AUC mean +- std", 20) +
         "  " + pad("logloss mean +- std", 20) + "  " + pad("dAUC", 8) + "  " + pad("dLL", 8) +
         "\n";
  for (const auto& a : report.aggregates) {
    out += pad(a.model, w, true) + "  " + pad(std::to_string(a.runs), 4) + "  " +
           pad(fixed(a.auc_mean, 4) + " +- " + fixed(a.auc_std, 4), 20) + "  " +
           pad(fixed(a.logloss_mean, 4) + " +- " + fixed(a.logloss_std, 4), 20) + "  " +
           pad(fixed(a.auc_delta_permille, 1, true) + "‰", 10) + "  " +
           pad(fixed(a.logloss_delta_permille, 1, true) + "‰", 10) + "\n";
  }
  return out;
}

std::string rows_csv(const std::vector<ResultRow>& rows) {
  std::string out = "model,seed,auc,logloss,best_epoch,seconds\n";
  for (const auto& r : rows) {
    out += r.model + ',' + std::to_string(r.seed) + ',' + format_double(r.auc) + ',' +
           format_double(r.logloss) + ',' + std::to_string(r.best_epoch) + ',' +
           format_double(r.seconds) + '\n';
  }
  return out;
}

std::vector<ResultRow> parse_rows_csv(std::string_view text) {
  std::vector<ResultRow> rows;
  std::size_t line_no = 0;
  for (auto line : split_view(text, '\n')) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line_no == 1) continue;
    const auto cols = split_view(line, ',');
    if (cols.size() != 6) {
      throw std::invalid_argument("results line " + std::to_string(line_no) +
                                  ": expected 6 columns");
    }
    rows.push_back({std::string(cols[0]), parse_field<std::uint64_t>(cols[1], line_no),
                    parse_field<double>(cols[2], line_no), parse_field<double>(cols[3], line_no),
                    parse_field<std::size_t>(cols[4], line_no),
                    parse_field<double>(cols[5], line_no)});
  }
  return rows;
}

std::string report_csv(const ExperimentReport& report) {
  std::string out = "model,seed,auc,logloss,auc_std,logloss_std,auc_delta_permille,"
                    "logloss_delta_permille\n";
  for (const auto& r : report.rows) {
    out += r.model + ',' + std::to_string(r.seed) + ',' + format_double(r.auc) + ',' +
           format_double(r.logloss) + ",,,,\n";
  }
  for (const auto& a : report.aggregates) {
    out += a.model + ",mean," + format_double(a.auc_mean) + ',' + format_double(a.logloss_mean) +
           ',' + format_double(a.auc_std) + ',' + format_double(a.logloss_std) + ',' +
           format_double(a.auc_delta_permille) + ',' + format_double(a.logloss_delta_permille) +
           '\n';
  }
  return out;
}

}  // namespace ctrkd::experiment
