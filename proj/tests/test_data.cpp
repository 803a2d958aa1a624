#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "oracle_helpers.hpp"
#include "otood/csv.hpp"
#include "otood/data.hpp"
#include "otood/errors.hpp"

using namespace otood;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("otood_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("matrix round trip is bit exact") {
  TempDir tmp;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> gauss(0.0, 100.0);
  Eigen::MatrixXd m(3, 4);
  for (Eigen::Index r = 0; r < 3; ++r)
    for (Eigen::Index c = 0; c < 4; ++c) m(r, c) = gauss(rng);
  m(0, 0) = 0.1;  // not exactly representable, round trip must still be exact
  m(1, 1) = -1e-300;
  const auto file = (tmp.path / "m.csv").string();
  csv::save_matrix(file, m);
  Eigen::MatrixXd back = csv::load_matrix(file);
  REQUIRE(back.rows() == 3);
  REQUIRE(back.cols() == 4);
  for (Eigen::Index r = 0; r < 3; ++r)
    for (Eigen::Index c = 0; c < 4; ++c) CHECK(back(r, c) == m(r, c));
}

TEST_CASE("matrix loader rejects malformed files with diagnostics") {
  TempDir tmp;
  const auto empty = (tmp.path / "empty.csv").string();
  std::ofstream(empty).close();
  CHECK_THROWS_AS(csv::load_matrix(empty), ValidationError);

  const auto ragged = (tmp.path / "ragged.csv").string();
  { std::ofstream out(ragged); out << "1,2,3\n4,5\n"; }
  try {
    csv::load_matrix(ragged);
    FAIL("expected rejection");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
  }

  const auto alpha = (tmp.path / "alpha.csv").string();
  { std::ofstream out(alpha); out << "1,x\n"; }
  try {
    csv::load_matrix(alpha);
    FAIL("expected rejection");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("column 2") != std::string::npos);
  }

  CHECK_THROWS_AS(csv::load_matrix((tmp.path / "missing.csv").string()), IoError);
}

TEST_CASE("a one-by-one matrix survives the trip") {
  TempDir tmp;
  Eigen::MatrixXd m(1, 1);
  m << 42.0;
  const auto file = (tmp.path / "one.csv").string();
  csv::save_matrix(file, m);
  Eigen::MatrixXd back = csv::load_matrix(file);
  CHECK(back.rows() == 1);
  CHECK(back.cols() == 1);
  CHECK(back(0, 0) == 42.0);
}

TEST_CASE("triplet cost files reconstruct the dense matrix") {
  TempDir tmp;
  const auto file = (tmp.path / "cost.csv").string();
  { std::ofstream out(file); out << "k,n,value\n0,0,1.5\n1,2,2.5\n"; }
  Eigen::MatrixXd m = csv::load_cost(file);
  REQUIRE(m.rows() == 2);
  REQUIRE(m.cols() == 3);
  CHECK(m(0, 0) == 1.5);
  CHECK(m(1, 2) == 2.5);
  CHECK(m(0, 1) == 0.0);

  const auto dense = (tmp.path / "dense.csv").string();
  { std::ofstream out(dense); out << "1,2\n3,4\n"; }
  Eigen::MatrixXd d = csv::load_cost(dense);
  CHECK(d(1, 1) == 4.0);
}

TEST_CASE("generation respects the configured counts exactly") {
  data::ToyScoodConfig cfg;
  cfg.labeled_per_class = 7;
  cfg.unlabeled_id = 11;
  cfg.unlabeled_ood = 13;
  cfg.test_id = 5;
  cfg.test_ood = 6;
  auto ds = data::generate_scood_toy(cfg);
  CHECK(ds.state.base_labeled().size() == 4 * 7);
  CHECK(ds.state.unlabeled().size() == 11 + 13);
  CHECK(ds.test.id_features.rows() == 5);
  CHECK(ds.test.ood_features.rows() == 6);

  int id_truth = 0, ood_truth = 0;
  for (const auto& u : ds.state.unlabeled()) {
    if (u.truth.kind == assignment::TruthKind::id) ++id_truth;
    if (u.truth.kind == assignment::TruthKind::ood) ++ood_truth;
  }
  CHECK(id_truth == 11);
  CHECK(ood_truth == 13);
}

TEST_CASE("OOD samples stay outside every ID 3-sigma ball") {
  data::ToyScoodConfig cfg;
  cfg.unlabeled_ood = 200;
  cfg.seed = 9;
  auto ds = data::generate_scood_toy(cfg);
  const double min_ok = cfg.mean_radius + 3.0 * cfg.class_sigma;
  for (const auto& u : ds.state.unlabeled()) {
    if (u.truth.kind != assignment::TruthKind::ood) continue;
    CHECK(u.features.norm() > min_ok);
  }
}

TEST_CASE("zero shift leaves the unlabeled-ID marginal indistinguishable") {
  data::ToyScoodConfig cfg;
  cfg.shift_mean = 0.0;
  cfg.shift_var = 1.0;
  cfg.labeled_per_class = 50;
  cfg.unlabeled_id = 200;
  cfg.unlabeled_ood = 0;
  cfg.test_id = 4;
  cfg.test_ood = 4;
  cfg.seed = 17;
  auto ds = data::generate_scood_toy(cfg);

  Eigen::MatrixXd labeled(200, cfg.dim), unlabeled(200, cfg.dim);
  for (int i = 0; i < 200; ++i) {
    labeled.row(i) = ds.state.base_labeled()[static_cast<size_t>(i)].features.transpose();
    unlabeled.row(i) = ds.state.unlabeled()[static_cast<size_t>(i)].features.transpose();
  }

  // permutation test: observed energy distance below the permuted 95th pct
  const double observed = oracle::energy_distance(labeled, unlabeled);
  Eigen::MatrixXd pool(400, cfg.dim);
  pool << labeled, unlabeled;
  std::mt19937_64 rng(5);
  std::vector<int> idx(400);
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<double> stats;
  for (int rep = 0; rep < 200; ++rep) {
    std::shuffle(idx.begin(), idx.end(), rng);
    Eigen::MatrixXd a(200, cfg.dim), b(200, cfg.dim);
    for (int i = 0; i < 200; ++i) {
      a.row(i) = pool.row(idx[static_cast<size_t>(i)]);
      b.row(i) = pool.row(idx[static_cast<size_t>(i + 200)]);
    }
    stats.push_back(oracle::energy_distance(a, b));
  }
  std::sort(stats.begin(), stats.end());
  const double pct95 = stats[189];  // 95th percentile of 200
  CHECK(observed < pct95);
}

TEST_CASE("a added shift is detected by the same statistic") {
  data::ToyScoodConfig cfg;
  cfg.shift_mean = 0.5;
  cfg.shift_var = 1.5;
  cfg.labeled_per_class = 50;
  cfg.unlabeled_id = 200;
  cfg.unlabeled_ood = 0;
  cfg.test_id = 4;
  cfg.test_ood = 4;
  cfg.seed = 17;
  auto ds = data::generate_scood_toy(cfg);
  Eigen::MatrixXd labeled(200, cfg.dim), unlabeled(200, cfg.dim);
  for (int i = 0; i < 200; ++i) {
    labeled.row(i) = ds.state.base_labeled()[static_cast<size_t>(i)].features.transpose();
    unlabeled.row(i) = ds.state.unlabeled()[static_cast<size_t>(i)].features.transpose();
  }
  // the shifted set is measurably different from the labeled set
  CHECK(oracle::energy_distance(labeled, unlabeled) > 0.05);
}

TEST_CASE("generation and saving are byte-identical across runs") {
  TempDir a, b;
  data::ToyScoodConfig cfg;
  cfg.labeled_per_class = 20;
  cfg.unlabeled_id = 30;
  cfg.unlabeled_ood = 40;
  cfg.test_id = 10;
  cfg.test_ood = 10;
  cfg.seed = 4242;
  data::save_dataset(a.path.string(), data::generate_scood_toy(cfg), cfg);
  data::save_dataset(b.path.string(), data::generate_scood_toy(cfg), cfg);
  for (const char* name :
       {"features.csv", "labels.csv", "test_id.csv", "test_ood.csv", "manifest.json"}) {
    CHECK(slurp(a.path / name) == slurp(b.path / name));
    CHECK_FALSE(slurp(a.path / name).empty());
  }
}

TEST_CASE("datasets survive the save/load round trip") {
  TempDir tmp;
  data::ToyScoodConfig cfg;
  cfg.labeled_per_class = 15;
  cfg.unlabeled_id = 10;
  cfg.unlabeled_ood = 12;
  cfg.test_id = 8;
  cfg.test_ood = 9;
  cfg.seed = 77;
  auto ds = data::generate_scood_toy(cfg);
  data::save_dataset(tmp.path.string(), ds, cfg);
  auto back = data::load_dataset(tmp.path.string());

  REQUIRE(back.state.base_labeled().size() == ds.state.base_labeled().size());
  REQUIRE(back.state.unlabeled().size() == ds.state.unlabeled().size());
  CHECK(back.state.class_count() == 4);
  for (size_t i = 0; i < ds.state.unlabeled().size(); ++i) {
    const auto& orig = ds.state.unlabeled()[i];
    const auto& loaded = back.state.unlabeled()[i];
    CHECK(orig.id == loaded.id);
    CHECK(static_cast<int>(orig.truth.kind) == static_cast<int>(loaded.truth.kind));
    CHECK(orig.truth.label == loaded.truth.label);
    CHECK((orig.features - loaded.features).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(back.test.id_labels == ds.test.id_labels);
  CHECK((back.test.ood_features - ds.test.ood_features).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("infeasible geometry is rejected") {
  data::ToyScoodConfig cfg;
  cfg.ood_margin = -1.0;
  CHECK_THROWS_AS(data::generate_scood_toy(cfg), ValidationError);
  cfg.ood_margin = 1.0;
  cfg.dim = 1;
  CHECK_THROWS_AS(data::generate_scood_toy(cfg), ValidationError);
}

TEST_CASE("label files round trip all three truth kinds") {
  TempDir tmp;
  std::vector<data::LabelRow> rows = {
      {0, 2, assignment::HiddenTruth::unknown()},
      {1, -1, assignment::HiddenTruth::id_class(3)},
      {2, -1, assignment::HiddenTruth::ood()},
      {3, -1, assignment::HiddenTruth::unknown()},
  };
  const auto file = (tmp.path / "labels.csv").string();
  data::save_labels(file, rows);
  auto back = data::load_labels(file);
  REQUIRE(back.size() == 4);
  CHECK(back[0].label == 2);
  CHECK(back[1].truth.kind == assignment::TruthKind::id);
  CHECK(back[1].truth.label == 3);
  CHECK(back[2].truth.kind == assignment::TruthKind::ood);
  CHECK(back[3].label == -1);
  CHECK(back[3].truth.kind == assignment::TruthKind::unknown);
}
