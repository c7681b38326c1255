/**
 * Copyright (C) 2026 The MMoEEx Lab Authors. All Rights Reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *   http://www.apache.org/licenses/LICENSE-2.0
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include <mmoeex/diversity.hpp>
#include <mmoeex/errors.hpp>
#include <mmoeex/log.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace mmoeex {

namespace {

// Sums in ascending order so the result does not depend on expert order.
double sorted_mean(std::vector<double> v) {
  if (v.empty())
    return 0.0;
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v)
    s += x;
  return s / static_cast<double>(v.size());
}

void fill_scores(DiversityReport &r) {
  const std::size_t E = r.experts;
  std::vector<double> off;
  off.reserve(E * (E - 1));
  for (std::size_t i = 0; i < E; ++i)
    for (std::size_t j = 0; j < E; ++j)
      if (i != j)
        off.push_back(r.at(i, j));
  r.d_bar = sorted_mean(off);
  r.d_bar_all = r.d_bar * static_cast<double>(E * (E - 1)) /
                static_cast<double>(E * E);
}

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_cell(const std::string &cell, const std::filesystem::path &path,
                  std::size_t line) {
  double v = 0.0;
  const char *first = cell.data(), *last = first + cell.size();
  const auto res = std::from_chars(first, last, v);
  if (cell.empty() || res.ec != std::errc() || res.ptr != last)
    throw DataError(path.string() + ": line " + std::to_string(line) +
                    ": non-numeric value '" + cell + "'");
  return v;
}

std::vector<std::string> split_csv(const std::string &line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ','))
    out.push_back(cell);
  return out;
}

} // namespace

DiversityReport diversity_report(std::span<const std::vector<double>> outputs,
                                 std::size_t samples) {
  const std::size_t E = outputs.size();
  if (E < 2)
    throw ConfigError("diversity needs at least two experts, got " +
                      std::to_string(E));
  if (samples < 1)
    throw ConfigError("diversity needs at least one sample");
  const std::size_t len = outputs[0].size();
  for (const auto &o : outputs)
    if (o.size() != len)
      throw ShapeError("expert outputs differ in length");

  DiversityReport r;
  r.experts = E;
  r.samples = samples;
  r.distances.assign(E * E, 0.0);
  double max = 0.0;
  for (std::size_t i = 0; i < E; ++i) {
    for (std::size_t j = i + 1; j < E; ++j) {
      double s = 0.0;
      for (std::size_t n = 0; n < len; ++n) {
        const double diff = outputs[i][n] - outputs[j][n];
        s += diff * diff;
      }
      const double d = std::sqrt(s);
      r.distances[i * E + j] = r.distances[j * E + i] = d;
      max = std::max(max, d);
    }
  }
  if (max == 0.0) {
    warn("all expert outputs are identical; diversity matrix is zero");
  } else {
    for (double &d : r.distances)
      d /= max;
  }
  fill_scores(r);
  return r;
}

DiversityReport report_from_matrix(std::vector<double> distances,
                                   std::size_t experts, std::size_t samples) {
  if (experts < 2)
    throw ConfigError("diversity needs at least two experts");
  if (distances.size() != experts * experts)
    throw ShapeError("distance matrix is not " + std::to_string(experts) +
                     " x " + std::to_string(experts));
  DiversityReport r;
  r.experts = experts;
  r.samples = samples;
  r.distances = std::move(distances);
  fill_scores(r);
  return r;
}

std::string render_heatmap(const DiversityReport &r) {
  static constexpr char kShades[] = " .:-=+*#%@";
  constexpr std::size_t kLevels = sizeof kShades - 1;
  std::string out = "     ";
  for (std::size_t j = 0; j < r.experts; ++j) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "%3zu", j);
    out += buf;
  }
  out += '\n';
  for (std::size_t i = 0; i < r.experts; ++i) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "%4zu ", i);
    out += buf;
    for (std::size_t j = 0; j < r.experts; ++j) {
      const double v = std::clamp(r.at(i, j), 0.0, 1.0);
      const auto level = std::min(
          kLevels - 1, static_cast<std::size_t>(v * static_cast<double>(kLevels)));
      out += "  ";
      out += kShades[level];
    }
    out += '\n';
  }
  out += "scale: ' ' = 0 ... '@' = 1\n";
  out += "d_bar (off-diagonal) = " + fmt17(r.d_bar) + "\n";
  out += "d_bar (all entries)  = " + fmt17(r.d_bar_all) + "\n";
  return out;
}

void export_heatmap(const DiversityReport &r,
                    const std::filesystem::path &csv_path,
                    const std::filesystem::path &ascii_path) {
  std::ofstream csv(csv_path);
  if (!csv)
    throw IoError("cannot write " + csv_path.string());
  for (std::size_t j = 0; j < r.experts; ++j)
    csv << (j ? "," : "") << 'e' << j;
  csv << '\n';
  for (std::size_t i = 0; i < r.experts; ++i) {
    for (std::size_t j = 0; j < r.experts; ++j)
      csv << (j ? "," : "") << fmt17(r.at(i, j));
    csv << '\n';
  }
  if (!csv)
    throw IoError("failed writing " + csv_path.string());
  if (!ascii_path.empty()) {
    std::ofstream txt(ascii_path);
    if (!txt)
      throw IoError("cannot write " + ascii_path.string());
    txt << render_heatmap(r);
  }
}

DiversityReport import_heatmap(const std::filesystem::path &csv_path) {
  std::ifstream in(csv_path);
  if (!in)
    throw IoError("cannot open " + csv_path.string());
  std::string line;
  if (!std::getline(in, line))
    throw DataError(csv_path.string() + ": missing header");
  const std::size_t E = split_csv(line).size();
  std::vector<double> m;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty())
      continue;
    const auto cells = split_csv(line);
    if (cells.size() != E)
      throw DataError(csv_path.string() + ": line " + std::to_string(line_no) +
                      ": expected " + std::to_string(E) + " values");
    for (const auto &c : cells)
      m.push_back(parse_cell(c, csv_path, line_no));
  }
  if (m.size() != E * E)
    throw DataError(csv_path.string() + ": matrix is not square");
  return report_from_matrix(std::move(m), E);
}

ActivationDump load_activation_dump(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open " + path.string());
  const bool jsonl = path.extension() == ".jsonl";
  // (sample, expert) -> vector, ordered by sample then expert.
  std::map<std::pair<std::size_t, std::size_t>, std::vector<double>> records;
  std::string line;
  std::size_t line_no = 0;
  if (!jsonl) {
    if (!std::getline(in, line))
      throw DataError(path.string() + ": missing header");
    ++line_no;
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty())
      continue;
    std::size_t sample = 0, expert = 0;
    std::vector<double> values;
    if (jsonl) {
      try {
        const auto j = nlohmann::json::parse(line);
        sample = j.at("sample").get<std::size_t>();
        expert = j.at("expert").get<std::size_t>();
        values = j.at("values").get<std::vector<double>>();
      } catch (const nlohmann::json::exception &e) {
        throw DataError(path.string() + ": line " + std::to_string(line_no) +
                        ": " + e.what());
      }
    } else {
      const auto cells = split_csv(line);
      if (cells.size() < 3)
        throw DataError(path.string() + ": line " + std::to_string(line_no) +
                        ": need sample, expert and at least one value");
      sample = static_cast<std::size_t>(parse_cell(cells[0], path, line_no));
      expert = static_cast<std::size_t>(parse_cell(cells[1], path, line_no));
      for (std::size_t c = 2; c < cells.size(); ++c)
        values.push_back(parse_cell(cells[c], path, line_no));
    }
    if (!records.emplace(std::make_pair(sample, expert), std::move(values)).second)
      throw DataError(path.string() + ": line " + std::to_string(line_no) +
                      ": duplicate record for sample " + std::to_string(sample) +
                      ", expert " + std::to_string(expert));
  }
  if (records.empty())
    throw DataError(path.string() + ": no activation records");

  std::size_t experts = 0;
  std::map<std::size_t, std::size_t> per_sample;
  for (const auto &[key, v] : records) {
    experts = std::max(experts, key.second + 1);
    ++per_sample[key.first];
  }
  ActivationDump dump;
  dump.samples = per_sample.size();
  for (const auto &[s, count] : per_sample)
    if (count != experts)
      throw DataError(path.string() + ": sample " + std::to_string(s) +
                      " has " + std::to_string(count) + " of " +
                      std::to_string(experts) + " experts");
  dump.outputs.resize(experts);
  for (const auto &[key, v] : records)
    dump.outputs[key.second].insert(dump.outputs[key.second].end(), v.begin(),
                                    v.end());
  return dump;
}

void save_activation_dump(
    const std::vector<std::vector<std::vector<double>>> &per_sample,
    const std::filesystem::path &path) {
  std::ofstream out(path);
  if (!out)
    throw IoError("cannot write " + path.string());
  const bool jsonl = path.extension() == ".jsonl";
  if (!jsonl) {
    const std::size_t width =
        per_sample.empty() || per_sample[0].empty() ? 0 : per_sample[0][0].size();
    out << "sample,expert";
    for (std::size_t i = 0; i < width; ++i)
      out << ",v" << i;
    out << '\n';
  }
  for (std::size_t n = 0; n < per_sample.size(); ++n) {
    for (std::size_t e = 0; e < per_sample[n].size(); ++e) {
      if (jsonl) {
        nlohmann::json j{{"sample", n}, {"expert", e}, {"values", per_sample[n][e]}};
        out << j.dump() << '\n';
      } else {
        out << n << ',' << e;
        for (double v : per_sample[n][e])
          out << ',' << fmt17(v);
        out << '\n';
      }
    }
  }
  if (!out)
    throw IoError("failed writing " + path.string());
}

} // namespace mmoeex
