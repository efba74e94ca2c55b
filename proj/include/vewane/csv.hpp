#pragma once

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "vewane/error.hpp"
#include "vewane/record.hpp"

namespace vewane {

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& field, std::size_t line_no, const char* name) {
  std::string s = trim(field);
  if (s.empty()) throw ValidationError("line " + std::to_string(line_no) + ": empty value for " + name);
  errno = 0;
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE) {
    throw ValidationError("line " + std::to_string(line_no) + ": cannot parse '" + s + "' as a number for " + name);
  }
  return v;
}

inline int parse_int(const std::string& field, std::size_t line_no, const char* name) {
  double v = parse_double(field, line_no, name);
  if (v != std::floor(v)) {
    throw ValidationError("line " + std::to_string(line_no) + ": " + name + " must be an integer");
  }
  return static_cast<int>(v);
}

inline std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline const std::vector<std::string>& csv_fixed_columns() {
  static const std::vector<std::string> cols{"entry", "arm", "u", "delta", "r", "gamma", "psi"};
  return cols;
}

/// Reads `entry,arm,u,delta,r,gamma,psi,x1,...,xk`. An empty psi becomes 0
/// with psi_valid = false. Parsing errors throw; record invariants are left
/// to validate_dataset.
inline Dataset read_dataset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("CSV input is empty");
  auto header = detail::split_csv_line(line);
  for (auto& h : header) h = detail::trim(h);
  const auto& fixed = csv_fixed_columns();
  if (header.size() < fixed.size()) throw ValidationError("CSV header has too few columns");
  for (std::size_t i = 0; i < fixed.size(); ++i) {
    if (header[i] != fixed[i]) {
      throw ValidationError("CSV header column " + std::to_string(i + 1) + " must be '" + fixed[i] + "', found '" +
                            header[i] + "'");
    }
  }
  Dataset data;
  data.n_covariates = static_cast<int>(header.size() - fixed.size());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != header.size()) {
      throw ValidationError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                            " fields, found " + std::to_string(f.size()));
    }
    ParticipantRecord r;
    r.entry = detail::parse_double(f[0], line_no, "entry");
    r.arm = detail::parse_int(f[1], line_no, "arm");
    r.infect_time = detail::parse_double(f[2], line_no, "u");
    r.infected = detail::parse_int(f[3], line_no, "delta");
    r.r_time = detail::parse_double(f[4], line_no, "r");
    r.gamma = detail::parse_int(f[5], line_no, "gamma");
    if (detail::trim(f[6]).empty()) {
      r.psi = 0;
      r.psi_valid = false;
    } else {
      r.psi = detail::parse_int(f[6], line_no, "psi");
    }
    r.covariates.reserve(data.n_covariates);
    for (std::size_t k = fixed.size(); k < f.size(); ++k) {
      r.covariates.push_back(detail::parse_double(f[k], line_no, header[k].c_str()));
    }
    data.records.push_back(std::move(r));
  }
  return data;
}

inline Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open data file " + path);
  return read_dataset_csv(in);
}

/// Psi is written empty only when it was missing on input.
inline void write_dataset_csv(std::ostream& out, const Dataset& data) {
  const auto& fixed = csv_fixed_columns();
  for (std::size_t i = 0; i < fixed.size(); ++i) out << (i ? "," : "") << fixed[i];
  for (int k = 0; k < data.n_covariates; ++k) out << ",x" << (k + 1);
  out << '\n';
  for (const auto& r : data.records) {
    out << detail::format_double(r.entry) << ',' << r.arm << ',' << detail::format_double(r.infect_time) << ','
        << r.infected << ',' << detail::format_double(r.r_time) << ',' << r.gamma << ',';
    if (r.psi_valid) out << r.psi;
    for (int k = 0; k < data.n_covariates; ++k) out << ',' << detail::format_double(r.covariates[k]);
    out << '\n';
  }
}

inline void write_dataset_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  write_dataset_csv(out, data);
}

}  // namespace vewane
