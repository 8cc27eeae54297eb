// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "commands.hpp"

namespace kdvit::cli {

namespace {

using nlohmann::json;

struct Cell {
  std::string row;    // table row name
  std::string label;  // experiment label from the records
  std::map<std::string, std::vector<double>> columns;
  std::map<std::uint64_t, std::vector<double>> loss_by_seed;  // epoch means of total loss
};

std::vector<json> read_log(const std::filesystem::path& dir) {
  require(std::filesystem::is_directory(dir), Errc::kAggregation, "not a run directory: " + dir.string());
  const auto file = dir / "run.jsonl";
  require(std::filesystem::is_regular_file(file), Errc::kAggregation, "no run.jsonl in " + dir.string());
  std::ifstream in(file);
  std::vector<json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      fail(Errc::kSchema, file.string() + ":" + std::to_string(n) + " is not valid JSON");
    }
    require(j.value("format_version", 0) == kFormatVersion, Errc::kSchema,
            file.string() + ":" + std::to_string(n) + " has an unsupported format_version");
    out.push_back(std::move(j));
  }
  return out;
}

int strategy_rank(const std::string& s) {
  static const std::vector<std::string> order = {"none", "hinton", "method1", "method2"};
  const auto it = std::find(order.begin(), order.end(), s);
  return static_cast<int>(it - order.begin());
}

std::string fmt(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string short_name(const std::string& row) {
  const std::string prefix = "Student after adapting - ";
  if (row.starts_with(prefix)) return row.substr(prefix.size());
  if (row == "Student before adapting") return "before";
  return row;
}

const cv::Scalar kPalette[] = {{180, 119, 31}, {14, 127, 255}, {44, 160, 44}, {40, 39, 214},
                               {189, 103, 148}, {75, 86, 140}};

void draw_frame(cv::Mat& img, const cv::Rect& area, const std::string& title, double lo, double hi) {
  cv::rectangle(img, area, {0, 0, 0}, 1);
  cv::putText(img, title, {area.x, area.y - 12}, cv::FONT_HERSHEY_SIMPLEX, 0.55, {0, 0, 0}, 1, cv::LINE_AA);
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    const int y = area.y + area.height - static_cast<int>(area.height * t / 4.0);
    cv::line(img, {area.x - 4, y}, {area.x, y}, {0, 0, 0}, 1);
    cv::putText(img, fmt(v, 2), {4, y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, {0, 0, 0}, 1, cv::LINE_AA);
  }
}

void plot_losses(const std::vector<Cell>& cells, const std::filesystem::path& file) {
  std::vector<std::pair<std::string, std::vector<double>>> curves;
  double hi = 0.0;
  std::size_t longest = 0;
  for (const auto& c : cells) {
    if (c.loss_by_seed.empty()) continue;
    std::vector<double> mean;
    for (const auto& [seed, losses] : c.loss_by_seed) {
      if (mean.size() < losses.size()) mean.resize(losses.size(), 0.0);
      for (std::size_t e = 0; e < losses.size(); ++e) mean[e] += losses[e] / c.loss_by_seed.size();
    }
    for (double v : mean) hi = std::max(hi, v);
    longest = std::max(longest, mean.size());
    curves.emplace_back(short_name(c.row), std::move(mean));
  }
  cv::Mat img(480, 760, CV_8UC3, cv::Scalar(255, 255, 255));
  const cv::Rect area(60, 40, 480, 400);
  if (hi <= 0.0) hi = 1.0;
  draw_frame(img, area, "mean total loss per epoch", 0.0, hi);
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const auto& [name, ys] = curves[k];
    std::vector<cv::Point> pts;
    for (std::size_t e = 0; e < ys.size(); ++e) {
      const double fx = longest > 1 ? static_cast<double>(e) / (longest - 1) : 0.5;
      pts.emplace_back(area.x + static_cast<int>(fx * area.width),
                       area.y + area.height - static_cast<int>(ys[e] / hi * area.height));
    }
    const cv::Scalar color = kPalette[k % std::size(kPalette)];
    cv::polylines(img, pts, false, color, 2, cv::LINE_AA);
    cv::putText(img, name, {area.x + area.width + 12, area.y + 20 + 22 * static_cast<int>(k)},
                cv::FONT_HERSHEY_SIMPLEX, 0.45, color, 1, cv::LINE_AA);
  }
  cv::imwrite(file.string(), img);
}

void plot_accuracy(const std::vector<std::pair<std::string, std::map<std::string, MeanStd>>>& rows,
                   const std::vector<std::string>& columns, const std::filesystem::path& file) {
  const int width = std::max<int>(480, 90 * static_cast<int>(rows.size()) + 120);
  cv::Mat img(520, width, CV_8UC3, cv::Scalar(255, 255, 255));
  const cv::Rect area(60, 40, width - 90, 360);
  draw_frame(img, area, "accuracy (mean, bars show population std)", 0.0, 1.0);
  const int group = area.width / std::max<int>(1, static_cast<int>(rows.size()));
  const int bar = std::max(6, group / (static_cast<int>(columns.size()) + 1));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const int x0 = area.x + static_cast<int>(r) * group + bar / 2;
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const auto it = rows[r].second.find(columns[c]);
      if (it == rows[r].second.end()) continue;
      const MeanStd& m = it->second;
      const int x = x0 + static_cast<int>(c) * bar;
      const auto ypix = [&](double v) {
        return area.y + area.height - static_cast<int>(std::clamp(v, 0.0, 1.0) * area.height);
      };
      cv::rectangle(img, {x, ypix(m.mean)}, {x + bar - 2, area.y + area.height},
                    kPalette[c % std::size(kPalette)], cv::FILLED);
      const int xm = x + bar / 2 - 1;
      cv::line(img, {xm, ypix(m.mean - m.std)}, {xm, ypix(m.mean + m.std)}, {0, 0, 0}, 1);
    }
    cv::putText(img, short_name(rows[r].first), {x0, area.y + area.height + 18},
                cv::FONT_HERSHEY_SIMPLEX, 0.38, {0, 0, 0}, 1, cv::LINE_AA);
  }
  for (std::size_t c = 0; c < columns.size(); ++c) {
    cv::putText(img, columns[c], {area.x + 90 * static_cast<int>(c), 500}, cv::FONT_HERSHEY_SIMPLEX, 0.5,
                kPalette[c % std::size(kPalette)], 1, cv::LINE_AA);
  }
  cv::imwrite(file.string(), img);
}

}  // namespace

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  out.n = values.size();
  if (values.empty()) return out;
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(sq / static_cast<double>(values.size()));
  return out;
}

CommandOutput cmd_report(const RunConfig& config) {
  config.validate("report");
  std::vector<json> summaries;
  std::map<std::pair<std::string, std::uint64_t>, std::vector<double>> losses;
  for (const auto& dir : config.runs) {
    for (auto& rec : read_log(dir)) {
      const std::string kind = rec.value("kind", "");
      if (kind == "summary") {
        summaries.push_back(std::move(rec));
      } else if (kind == "epoch") {
        losses[{rec.at("label").get<std::string>(), rec.at("seed").get<std::uint64_t>()}].push_back(
            rec.at("loss").at("total").get<double>());
      }
    }
  }
  require(!summaries.empty(), Errc::kAggregation, "no summary records in the given run directories");

  std::set<std::string> commands;
  std::set<std::string> experiments;
  for (const auto& s : summaries) {
    commands.insert(s.at("command").get<std::string>());
    experiments.insert(s.value("experiment", ""));
  }
  require(commands.size() == 1 && (*commands.begin() == "train" || *commands.begin() == "adapt"),
          Errc::kAggregation, "report needs summaries from exactly one of train or adapt");
  if (experiments.size() != 1) {
    std::string list;
    for (const auto& e : experiments) list += (list.empty() ? "" : ", ") + e;
    fail(Errc::kAggregation, "mixed incompatible experiment labels: " + list);
  }
  const std::string command = *commands.begin();
  const std::string experiment = *experiments.begin();

  std::vector<Cell> cells;
  std::map<std::string, std::size_t> by_label;
  std::set<std::pair<std::string, std::uint64_t>> seen;
  Cell before{"Student before adapting", "", {}, {}};
  std::set<std::uint64_t> before_seeds;

  std::sort(summaries.begin(), summaries.end(), [](const json& a, const json& b) {
    const auto ka = std::make_tuple(strategy_rank(a.value("strategy", "")), a.at("label").get<std::string>(),
                                    a.at("seed").get<std::uint64_t>());
    const auto kb = std::make_tuple(strategy_rank(b.value("strategy", "")), b.at("label").get<std::string>(),
                                    b.at("seed").get<std::uint64_t>());
    return ka < kb;
  });
  for (const auto& s : summaries) {
    const std::string label = s.at("label").get<std::string>();
    const auto seed = s.at("seed").get<std::uint64_t>();
    require(seen.insert({label, seed}).second, Errc::kAggregation,
            "duplicate run for '" + label + "' seed " + std::to_string(seed));
    if (!by_label.contains(label)) {
      Cell c;
      c.label = label;
      if (command == "adapt") {
        c.row = "Student after adapting - " + strategy_label(parse_strategy(s.at("strategy").get<std::string>()));
      } else {
        c.row = "Student (supervised)";
      }
      by_label[label] = cells.size();
      cells.push_back(std::move(c));
    }
    Cell& cell = cells[by_label[label]];
    const json& acc = s.at("accuracy");
    if (command == "adapt") {
      if (acc.contains("source_after")) cell.columns["source"].push_back(acc.at("source_after").get<double>());
      cell.columns["target"].push_back(acc.at("target_after").get<double>());
      if (before_seeds.insert(seed).second) {
        if (acc.contains("source_before")) before.columns["source"].push_back(acc.at("source_before").get<double>());
        before.columns["target"].push_back(acc.at("target_before").get<double>());
      }
    } else {
      for (const auto& [key, value] : acc.items()) cell.columns[key].push_back(value.get<double>());
    }
    if (const auto it = losses.find({label, seed}); it != losses.end()) cell.loss_by_seed[seed] = it->second;
  }
  if (command == "adapt") cells.insert(cells.begin(), before);

  const std::size_t repeats = cells.back().columns.begin()->second.size();
  for (const auto& c : cells) {
    for (const auto& [column, values] : c.columns) {
      require(values.size() == repeats, Errc::kAggregation,
              "'" + c.row + "' has " + std::to_string(values.size()) + " runs, expected " +
                  std::to_string(repeats));
    }
  }

  std::vector<std::string> columns;
  for (const auto& c : cells) {
    for (const auto& [column, values] : c.columns) {
      if (std::find(columns.begin(), columns.end(), column) == columns.end()) columns.push_back(column);
    }
  }
  std::sort(columns.begin(), columns.end(), [](const std::string& a, const std::string& b) {
    return (a == "source" ? 0 : 1) < (b == "source" ? 0 : 1);
  });

  std::filesystem::create_directories(config.out);
  CommandOutput output;
  std::vector<std::pair<std::string, std::map<std::string, MeanStd>>> table;
  Record rows = Record::array();
  std::ofstream csv(config.out / "report.csv", std::ios::trunc);
  csv << "row,label,column,mean,std_population,repeats\n";
  for (const auto& c : cells) {
    std::map<std::string, MeanStd> stats;
    Record row;
    row["row"] = c.row;
    row["label"] = c.label;
    for (const auto& column : columns) {
      const auto it = c.columns.find(column);
      if (it == c.columns.end()) continue;
      const MeanStd m = mean_std(it->second);
      stats[column] = m;
      row[column] = {{"mean", m.mean}, {"std", m.std}, {"n", m.n}};
      csv << '"' << c.row << "\",\"" << c.label << "\"," << column << ',' << fmt(m.mean, 6) << ','
          << fmt(m.std, 6) << ',' << m.n << '\n';
    }
    rows.push_back(row);
    table.emplace_back(c.row, std::move(stats));
  }

  std::ofstream txt(config.out / "report.txt", std::ios::trunc);
  txt << "experiment: " << experiment << '\n'
      << "repeats: " << repeats << '\n'
      << "cells: mean +/- population std (divide by n)\n\n";
  std::size_t name_width = 8;
  for (const auto& [name, stats] : table) name_width = std::max(name_width, name.size());
  txt << std::left << std::setw(static_cast<int>(name_width) + 2) << "";
  for (const auto& column : columns) txt << std::setw(20) << column;
  txt << '\n';
  for (const auto& [name, stats] : table) {
    txt << std::left << std::setw(static_cast<int>(name_width) + 2) << name;
    for (const auto& column : columns) {
      const auto it = stats.find(column);
      txt << std::setw(20) << (it == stats.end() ? "-" : fmt(it->second.mean, 3) + " +/- " + fmt(it->second.std, 3));
    }
    txt << '\n';
  }
  txt.close();

  plot_losses(cells, config.out / "loss_curves.png");
  plot_accuracy(table, columns, config.out / "accuracy_bars.png");

  Record s;
  s["format_version"] = kFormatVersion;
  s["kind"] = "summary";
  s["command"] = "report";
  s["experiment"] = experiment;
  s["repeats"] = repeats;
  s["std"] = "population";
  s["rows"] = rows;
  std::ofstream(config.out / "report.json") << s.dump(2) << '\n';
  output.log = config.out / "report.json";
  output.records.push_back(std::move(s));
  return output;
}

}  // namespace kdvit::cli
