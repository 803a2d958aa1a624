#include "otood/csv.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "otood/errors.hpp"

namespace otood::csv {

namespace {

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::vector<std::vector<std::string>> read_rows(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open file for reading: " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    rows.push_back(split_fields(line));
  }
  return rows;
}

}  // namespace

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(trim(cur));
  return fields;
}

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_value(const std::string& field, int row, int col) {
  if (field.empty())
    throw ValidationError("empty field at row " + std::to_string(row) +
                          ", column " + std::to_string(col));
  const char* begin = field.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end != begin + field.size())
    throw ValidationError("non-numeric field '" + field + "' at row " +
                          std::to_string(row) + ", column " + std::to_string(col));
  return v;
}

Eigen::MatrixXd load_matrix(const std::string& path) {
  auto rows = read_rows(path);
  if (rows.empty()) throw ValidationError("empty matrix file: " + path);
  const size_t cols = rows[0].size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(cols));
  for (size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != cols)
      throw ValidationError("ragged row in " + path + ": row " +
                            std::to_string(r + 1) + " has " +
                            std::to_string(rows[r].size()) + " fields, expected " +
                            std::to_string(cols));
    for (size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          parse_value(rows[r][c], static_cast<int>(r + 1), static_cast<int>(c + 1));
  }
  return m;
}

void save_matrix(const std::string& path, const Eigen::MatrixXd& m) {
  if (!m.allFinite())
    throw ValidationError("refusing to write non-finite matrix to " + path);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open file for writing: " + path);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out << ',';
      out << format_value(m(r, c));
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

Eigen::VectorXd load_column(const std::string& path) {
  Eigen::MatrixXd m = load_matrix(path);
  if (m.cols() != 1)
    throw ValidationError("expected a single-column CSV in " + path + ", got " +
                          std::to_string(m.cols()) + " columns");
  return m.col(0);
}

void save_column(const std::string& path, const Eigen::VectorXd& v) {
  save_matrix(path, v);
}

Eigen::MatrixXd load_cost(const std::string& path) {
  auto rows = read_rows(path);
  if (rows.empty()) throw ValidationError("empty cost file: " + path);
  const auto& head = rows[0];
  const bool triplets = head.size() == 3 && head[0] == "k" && head[1] == "n" &&
                        head[2] == "value";
  if (!triplets) {
    return load_matrix(path);
  }
  if (rows.size() < 2) throw ValidationError("triplet cost file has no data rows: " + path);
  long max_k = -1, max_n = -1;
  struct Triplet {
    long k, n;
    double value;
  };
  std::vector<Triplet> entries;
  for (size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != 3)
      throw ValidationError("triplet row " + std::to_string(r + 1) + " in " + path +
                            " must have 3 fields");
    double kd = parse_value(rows[r][0], static_cast<int>(r + 1), 1);
    double nd = parse_value(rows[r][1], static_cast<int>(r + 1), 2);
    double v = parse_value(rows[r][2], static_cast<int>(r + 1), 3);
    if (kd < 0 || nd < 0 || kd != std::floor(kd) || nd != std::floor(nd))
      throw ValidationError("triplet indices must be nonnegative integers (row " +
                            std::to_string(r + 1) + " in " + path + ")");
    Triplet t{static_cast<long>(kd), static_cast<long>(nd), v};
    max_k = std::max(max_k, t.k);
    max_n = std::max(max_n, t.n);
    entries.push_back(t);
  }
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(max_k + 1, max_n + 1);
  for (const auto& t : entries) m(t.k, t.n) = t.value;
  return m;
}

}  // namespace otood::csv
