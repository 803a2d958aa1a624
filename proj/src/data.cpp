#include "otood/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "otood/csv.hpp"
#include "otood/errors.hpp"

namespace otood::data {

namespace fs = std::filesystem;
using nlohmann::json;

double GaussianStream::uniform() {
  return static_cast<double>(rng_() >> 11) * 0x1.0p-53;
}

double GaussianStream::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

void ToyScoodConfig::validate() const {
  if (classes < 2) throw ValidationError("need at least 2 ID classes");
  if (dim < 2) throw ValidationError("feature dimension must be at least 2");
  if (labeled_per_class < 0 || unlabeled_id < 0 || unlabeled_ood < 0 ||
      test_id < 0 || test_ood < 0)
    throw ValidationError("sample counts must be nonnegative");
  if (labeled_per_class == 0) throw ValidationError("need labeled samples");
  if (!(class_sigma > 0.0)) throw ValidationError("class sigma must be positive");
  if (!(mean_radius > 0.0)) throw ValidationError("mean radius must be positive");
  if (!(shift_var > 0.0)) throw ValidationError("variance factor must be positive");
  if (shift_mean < 0.0) throw ValidationError("mean shift must be nonnegative");
  if (!(ood_margin > 0.0)) throw ValidationError("OOD margin must be positive");
  if (!(ood_width > 0.0)) throw ValidationError("OOD width must be positive");
}

namespace {

Eigen::VectorXd class_mean(const ToyScoodConfig& c, int label) {
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(c.dim);
  const double angle = 2.0 * M_PI * static_cast<double>(label) /
                       static_cast<double>(c.classes);
  mu(0) = c.mean_radius * std::cos(angle);
  mu(1) = c.mean_radius * std::sin(angle);
  return mu;
}

Eigen::VectorXd gaussian_vec(GaussianStream& g, int dim) {
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = g.normal();
  return v;
}

Eigen::VectorXd unit_direction(GaussianStream& g, int dim) {
  Eigen::VectorXd v = gaussian_vec(g, dim);
  double norm = v.norm();
  while (norm < 1e-12) {
    v = gaussian_vec(g, dim);
    norm = v.norm();
  }
  return v / norm;
}

// Largest distance from the origin reached by any ID class 3-sigma ball,
// covering both the base classes and the shifted unlabeled variants.
double max_id_extent(const ToyScoodConfig& c, const Eigen::VectorXd& shift_dir) {
  const double base = c.mean_radius + 3.0 * c.class_sigma;
  const double shifted_sigma = c.class_sigma * std::sqrt(c.shift_var);
  double shifted = 0.0;
  for (int y = 0; y < c.classes; ++y) {
    const Eigen::VectorXd mu =
        class_mean(c, y) + c.shift_mean * c.class_sigma * shift_dir;
    shifted = std::max(shifted, mu.norm() + 3.0 * shifted_sigma);
  }
  return std::max(base, shifted);
}

bool inside_any_id_ball(const ToyScoodConfig& c, const Eigen::VectorXd& x,
                        const Eigen::VectorXd& shift_dir) {
  const double shifted_sigma = c.class_sigma * std::sqrt(c.shift_var);
  for (int y = 0; y < c.classes; ++y) {
    const Eigen::VectorXd mu = class_mean(c, y);
    if ((x - mu).norm() <= 3.0 * c.class_sigma) return true;
    const Eigen::VectorXd mu_s = mu + c.shift_mean * c.class_sigma * shift_dir;
    if ((x - mu_s).norm() <= 3.0 * shifted_sigma) return true;
  }
  return false;
}

Eigen::VectorXd draw_ood(const ToyScoodConfig& c, GaussianStream& g,
                         double inner, const Eigen::VectorXd& shift_dir) {
  if (c.ood_shape == OodShape::annulus) {
    const double outer = inner + c.ood_width;
    const Eigen::VectorXd dir = unit_direction(g, c.dim);
    const double d = static_cast<double>(c.dim);
    const double u = g.uniform();
    const double r = std::pow(u * (std::pow(outer, d) - std::pow(inner, d)) +
                                  std::pow(inner, d),
                              1.0 / d);
    return r * dir;
  }
  // box: uniform over [-L, L]^d minus every ID 3-sigma ball
  const double half = inner + c.ood_width;
  for (int attempt = 0; attempt < 100000; ++attempt) {
    Eigen::VectorXd x(c.dim);
    for (int i = 0; i < c.dim; ++i) x(i) = (2.0 * g.uniform() - 1.0) * half;
    if (!inside_any_id_ball(c, x, shift_dir)) return x;
  }
  throw NumericalError("box OOD sampling failed: region dominated by ID balls");
}

std::string shape_name(OodShape s) {
  return s == OodShape::annulus ? "annulus" : "box";
}

OodShape shape_from_name(const std::string& s) {
  if (s == "annulus") return OodShape::annulus;
  if (s == "box") return OodShape::box;
  throw ValidationError("unknown OOD shape '" + s + "'");
}

}  // namespace

ToyDataset generate_scood_toy(const ToyScoodConfig& config) {
  config.validate();
  GaussianStream g(config.seed);
  const Eigen::VectorXd shift_dir = unit_direction(g, config.dim);
  const double extent = max_id_extent(config, shift_dir);
  const double inner = extent + config.ood_margin;
  if (!(inner > extent))
    throw ValidationError("OOD region would intersect the ID 3-sigma balls");

  std::vector<assignment::LabeledSample> base;
  std::vector<assignment::UnlabeledSample> unlabeled;
  int next_id = 0;

  for (int y = 0; y < config.classes; ++y) {
    const Eigen::VectorXd mu = class_mean(config, y);
    for (int i = 0; i < config.labeled_per_class; ++i) {
      base.push_back({next_id++,
                      mu + config.class_sigma * gaussian_vec(g, config.dim), y});
    }
  }

  const double shifted_sigma = config.class_sigma * std::sqrt(config.shift_var);
  const Eigen::VectorXd offset = config.shift_mean * config.class_sigma * shift_dir;
  for (int i = 0; i < config.unlabeled_id; ++i) {
    const int y = i % config.classes;
    const Eigen::VectorXd mu = class_mean(config, y) + offset;
    unlabeled.push_back({next_id++, mu + shifted_sigma * gaussian_vec(g, config.dim),
                         assignment::HiddenTruth::id_class(y)});
  }
  for (int i = 0; i < config.unlabeled_ood; ++i) {
    unlabeled.push_back({next_id++, draw_ood(config, g, inner, shift_dir),
                         assignment::HiddenTruth::ood()});
  }

  ToyDataset out{assignment::DatasetState(std::move(base), std::move(unlabeled),
                                          config.classes),
                 {}};

  out.test.id_features.resize(config.test_id, config.dim);
  out.test.id_labels.resize(static_cast<size_t>(config.test_id));
  for (int i = 0; i < config.test_id; ++i) {
    const int y = i % config.classes;
    out.test.id_labels[static_cast<size_t>(i)] = y;
    out.test.id_features.row(i) =
        (class_mean(config, y) + config.class_sigma * gaussian_vec(g, config.dim))
            .transpose();
  }
  out.test.ood_features.resize(config.test_ood, config.dim);
  for (int i = 0; i < config.test_ood; ++i)
    out.test.ood_features.row(i) = draw_ood(config, g, inner, shift_dir).transpose();
  return out;
}

std::vector<LabelRow> load_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open label file: " + path);
  std::vector<LabelRow> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = csv::split_fields(line);
    if (fields.size() < 2 || fields.size() > 3)
      throw ValidationError("label row " + std::to_string(lineno) +
                            " must be id,label[,truth]");
    LabelRow r;
    r.id = static_cast<int>(csv::parse_value(fields[0], lineno, 1));
    if (fields[1] == "U" || fields[1] == "u") {
      r.label = -1;
    } else {
      r.label = static_cast<int>(csv::parse_value(fields[1], lineno, 2));
      if (r.label < 0)
        throw ValidationError("negative label at row " + std::to_string(lineno));
    }
    if (fields.size() == 3 && !fields[2].empty()) {
      if (fields[2] == "OOD" || fields[2] == "ood") {
        r.truth = assignment::HiddenTruth::ood();
      } else {
        r.truth = assignment::HiddenTruth::id_class(
            static_cast<int>(csv::parse_value(fields[2], lineno, 3)));
      }
    }
    rows.push_back(r);
  }
  if (rows.empty()) throw ValidationError("empty label file: " + path);
  return rows;
}

void save_labels(const std::string& path, const std::vector<LabelRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open label file for writing: " + path);
  for (const auto& r : rows) {
    out << r.id << ',';
    if (r.label < 0)
      out << 'U';
    else
      out << r.label;
    out << ',';
    if (r.truth.kind == assignment::TruthKind::id)
      out << r.truth.label;
    else if (r.truth.kind == assignment::TruthKind::ood)
      out << "OOD";
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

void save_dataset(const std::string& dir, const ToyDataset& dataset,
                  const ToyScoodConfig& config) {
  fs::create_directories(dir);
  const auto& state = dataset.state;

  csv::save_matrix((fs::path(dir) / "features.csv").string(), state.all_features());

  std::vector<LabelRow> rows;
  for (const auto& s : state.base_labeled())
    rows.push_back({s.id, s.label, assignment::HiddenTruth::unknown()});
  for (const auto& s : state.unlabeled()) rows.push_back({s.id, -1, s.truth});
  save_labels((fs::path(dir) / "labels.csv").string(), rows);

  Eigen::MatrixXd test_id(dataset.test.id_features.rows(),
                          dataset.test.id_features.cols() + 1);
  for (Eigen::Index i = 0; i < test_id.rows(); ++i) {
    test_id(i, 0) = dataset.test.id_labels[static_cast<size_t>(i)];
    test_id.row(i).tail(dataset.test.id_features.cols()) =
        dataset.test.id_features.row(i);
  }
  csv::save_matrix((fs::path(dir) / "test_id.csv").string(), test_id);
  csv::save_matrix((fs::path(dir) / "test_ood.csv").string(),
                   dataset.test.ood_features);

  json manifest;
  manifest["classes"] = config.classes;
  manifest["dim"] = config.dim;
  manifest["labeled"] = static_cast<int>(state.base_labeled().size());
  manifest["unlabeled"] = static_cast<int>(state.unlabeled().size());
  manifest["test_id"] = static_cast<int>(dataset.test.id_features.rows());
  manifest["test_ood"] = static_cast<int>(dataset.test.ood_features.rows());
  manifest["seed"] = config.seed;
  manifest["config"] = {{"labeled_per_class", config.labeled_per_class},
                        {"unlabeled_id", config.unlabeled_id},
                        {"unlabeled_ood", config.unlabeled_ood},
                        {"shift_mean", config.shift_mean},
                        {"shift_var", config.shift_var},
                        {"ood_shape", shape_name(config.ood_shape)},
                        {"ood_margin", config.ood_margin},
                        {"ood_width", config.ood_width},
                        {"class_sigma", config.class_sigma},
                        {"mean_radius", config.mean_radius},
                        {"test_id", config.test_id},
                        {"test_ood", config.test_ood}};
  std::ofstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw IoError("cannot write manifest in " + dir);
  mf << manifest.dump(2) << '\n';
}

ToyDataset load_dataset(const std::string& dir) {
  const fs::path base(dir);
  std::ifstream mf(base / "manifest.json");
  if (!mf) throw IoError("missing manifest.json in " + dir);
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw ValidationError("malformed manifest.json in " + dir + ": " + e.what());
  }
  const int classes = manifest.at("classes").get<int>();

  Eigen::MatrixXd features = csv::load_matrix((base / "features.csv").string());
  auto labels = load_labels((base / "labels.csv").string());
  if (static_cast<Eigen::Index>(labels.size()) != features.rows())
    throw ValidationError("features.csv and labels.csv disagree on sample count");

  std::vector<assignment::LabeledSample> labeled;
  std::vector<assignment::UnlabeledSample> unlabeled;
  for (size_t i = 0; i < labels.size(); ++i) {
    const Eigen::VectorXd f = features.row(static_cast<Eigen::Index>(i)).transpose();
    if (labels[i].label >= 0)
      labeled.push_back({labels[i].id, f, labels[i].label});
    else
      unlabeled.push_back({labels[i].id, f, labels[i].truth});
  }

  ToyDataset out{assignment::DatasetState(std::move(labeled), std::move(unlabeled),
                                          classes),
                 {}};

  Eigen::MatrixXd test_id = csv::load_matrix((base / "test_id.csv").string());
  if (test_id.cols() < 2)
    throw ValidationError("test_id.csv must hold a label column plus features");
  out.test.id_features = test_id.rightCols(test_id.cols() - 1);
  out.test.id_labels.resize(static_cast<size_t>(test_id.rows()));
  for (Eigen::Index i = 0; i < test_id.rows(); ++i) {
    const double l = test_id(i, 0);
    if (l != std::floor(l) || l < 0 || l >= classes)
      throw ValidationError("bad test label at row " + std::to_string(i + 1));
    out.test.id_labels[static_cast<size_t>(i)] = static_cast<int>(l);
  }
  out.test.ood_features = csv::load_matrix((base / "test_ood.csv").string());
  if (out.test.ood_features.cols() != out.test.id_features.cols())
    throw ValidationError("test feature dimensions disagree");
  return out;
}

}  // namespace otood::data
