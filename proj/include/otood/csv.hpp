#ifndef OTOOD_CSV_HPP_
#define OTOOD_CSV_HPP_

#include <Eigen/Core>
#include <string>
#include <vector>

namespace otood::csv {

// Dense matrix I/O: row-major CSV, no header, one row per line.
// Values are written with 17 significant digits so a save/load round trip
// reproduces every double bit-for-bit.
Eigen::MatrixXd load_matrix(const std::string& path);
void save_matrix(const std::string& path, const Eigen::MatrixXd& m);

// Single-column CSV (one value per line).
Eigen::VectorXd load_column(const std::string& path);
void save_column(const std::string& path, const Eigen::VectorXd& v);

// Cost-matrix reader for the `sinkhorn` subcommand. Accepts either dense
// rows (no header) or sparse triplets under a literal `k,n,value` header,
// where k/n are zero-based row/column indices.
Eigen::MatrixXd load_cost(const std::string& path);

// Shared low-level helpers.
std::string format_value(double v);
double parse_value(const std::string& field, int row, int col);
std::vector<std::string> split_fields(const std::string& line);

}  // namespace otood::csv

#endif  // OTOOD_CSV_HPP_
