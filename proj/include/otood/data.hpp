#ifndef OTOOD_DATA_HPP_
#define OTOOD_DATA_HPP_

#include <Eigen/Core>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "otood/assignment.hpp"

namespace otood::data {

enum class OodShape { annulus, box };

// Synthetic two-part train set: Gaussian ID classes plus a covariate-shifted
// unlabeled ID pool and an unlabeled OOD pool drawn outside every class's
// 3-sigma ball.
struct ToyScoodConfig {
  int classes = 4;             // M
  int dim = 2;                 // d >= 2
  int labeled_per_class = 200;
  int unlabeled_id = 400;      // round-robin over classes
  double shift_mean = 0.5;     // mean offset, in units of class sigma
  double shift_var = 1.5;      // variance inflation factor
  int unlabeled_ood = 800;
  OodShape ood_shape = OodShape::annulus;
  double ood_margin = 1.0;     // gap beyond the widest ID 3-sigma extent
  double ood_width = 2.0;      // annulus thickness / box slack
  int test_id = 400;
  int test_ood = 400;
  double class_sigma = 1.0;
  double mean_radius = 4.0;    // class means sit on this circle
  std::uint64_t seed = 1;

  void validate() const;
};

struct TestSets {
  Eigen::MatrixXd id_features;  // rows = samples
  std::vector<int> id_labels;
  Eigen::MatrixXd ood_features;
};

struct ToyDataset {
  assignment::DatasetState state;
  TestSets test;
};

// Portable deterministic N(0,1) stream (Box-Muller over mt19937_64 bits).
class GaussianStream {
 public:
  explicit GaussianStream(std::uint64_t seed) : rng_(seed) {}
  double uniform();  // in [0, 1)
  double normal();
  std::uint64_t raw() { return rng_(); }

 private:
  std::mt19937_64 rng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

ToyDataset generate_scood_toy(const ToyScoodConfig& config);

// Dataset directory layout: features.csv, labels.csv, test_id.csv,
// test_ood.csv, manifest.json.
void save_dataset(const std::string& dir, const ToyDataset& dataset,
                  const ToyScoodConfig& config);
ToyDataset load_dataset(const std::string& dir);

// Label table I/O shared with the `assign` subcommand: rows are
// "id,label-or-U,truth" where truth is an ID label, the literal OOD, or blank.
struct LabelRow {
  int id = 0;
  int label = -1;  // -1 = unlabeled
  assignment::HiddenTruth truth;
};
std::vector<LabelRow> load_labels(const std::string& path);
void save_labels(const std::string& path, const std::vector<LabelRow>& rows);

}  // namespace otood::data

#endif  // OTOOD_DATA_HPP_
