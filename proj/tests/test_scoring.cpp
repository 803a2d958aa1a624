#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "oracle_helpers.hpp"
#include "otood/errors.hpp"
#include "otood/scoring.hpp"

using namespace otood;
using scoring::ScoreMethod;
using transport::LogitKind;
using transport::LogitMatrix;

namespace {

LogitMatrix class_logits(const Eigen::MatrixXd& values) {
  return {values, LogitKind::id_class};
}

Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

}  // namespace

TEST_CASE("t-energy at T=1 equals the energy score exactly") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> gauss(0.0, 4.0);
  Eigen::MatrixXd logits(7, 50);
  for (Eigen::Index j = 0; j < 7; ++j)
    for (Eigen::Index i = 0; i < 50; ++i) logits(j, i) = gauss(rng);
  auto m = class_logits(logits);
  Eigen::VectorXd e = scoring::ood_score(m, ScoreMethod::energy, 1000.0);
  Eigen::VectorXd t = scoring::ood_score(m, ScoreMethod::t_energy, 1.0);
  for (Eigen::Index i = 0; i < 50; ++i) CHECK(e(i) == t(i));  // bitwise
}

TEST_CASE("equal logits give the closed-form t-energy T log M") {
  auto m = class_logits(Eigen::MatrixXd::Zero(10, 1));
  Eigen::VectorXd s = scoring::ood_score(m, ScoreMethod::t_energy, 1000.0);
  CHECK(s(0) == doctest::Approx(1000.0 * std::log(10.0)).epsilon(1e-12));
  CHECK(s(0) == doctest::Approx(2302.585).epsilon(1e-5));
}

TEST_CASE("msp of a symmetric two-class column is one half") {
  auto m = class_logits(Eigen::MatrixXd::Zero(2, 1));
  Eigen::VectorXd s = scoring::ood_score(m, ScoreMethod::msp, 1.0);
  CHECK(s(0) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("ood_score validates its inputs") {
  auto one_row = class_logits(Eigen::MatrixXd::Zero(1, 3));
  CHECK_THROWS_AS(scoring::ood_score(one_row, ScoreMethod::msp, 1.0), ValidationError);
  Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(3, 2);
  bad(1, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(scoring::ood_score(class_logits(bad), ScoreMethod::energy, 1.0),
                  ValidationError);
  auto ok = class_logits(Eigen::MatrixXd::Zero(3, 2));
  CHECK_THROWS_AS(scoring::ood_score(ok, ScoreMethod::t_energy, 0.0), ValidationError);
  LogitMatrix cluster_kind{Eigen::MatrixXd::Zero(3, 2), LogitKind::cluster};
  CHECK_THROWS_AS(scoring::ood_score(cluster_kind, ScoreMethod::energy, 1.0),
                  ValidationError);
}

TEST_CASE("t-energy sandwich holds exactly and the large-T limit is the mean") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unif(-10.0, 10.0);
  for (int rep = 0; rep < 1000; ++rep) {
    const int m = 2 + static_cast<int>(rng() % 9);
    Eigen::MatrixXd col(m, 1);
    for (int j = 0; j < m; ++j) col(j, 0) = unif(rng);
    const double t = std::exp(unif(rng) * 0.4);  // T spans about [0.02, 55]
    const double score =
        scoring::ood_score(class_logits(col), ScoreMethod::t_energy, t)(0);
    const double top = col.maxCoeff();
    CHECK(score >= top);
    CHECK(score <= top + t * std::log(static_cast<double>(m)));

    const double big =
        scoring::ood_score(class_logits(col), ScoreMethod::t_energy, 1e6)(0);
    CHECK(std::abs(big - 1e6 * std::log(static_cast<double>(m)) - col.mean()) <= 1e-3);
  }
}

TEST_CASE("perfect separation yields the textbook report") {
  auto r = scoring::detection_metrics(vec({2.0, 3.0}), vec({0.0, 1.0}), {0, 1}, {0, 1});
  CHECK(r.auroc == doctest::Approx(1.0));
  CHECK(r.fpr_at_tpr95 == doctest::Approx(0.0));
  CHECK(r.aupr_in == doctest::Approx(1.0));
  CHECK(r.aupr_out == doctest::Approx(1.0));
  CHECK(r.acc == doctest::Approx(1.0));
  // only 2 OOD samples: the 0.1 level collapses to effective FPR 0, which
  // still admits every ID sample here
  CHECK(r.ccr_at_fpr.at(1e-1) == doctest::Approx(1.0));
  CHECK(r.ccr_unreachable.at(1e-1));
}

TEST_CASE("a single tied pair counts one half") {
  auto r = scoring::detection_metrics(vec({1.0}), vec({1.0}), {0}, {0});
  CHECK(r.auroc == doctest::Approx(0.5));
}

TEST_CASE("pairwise-derived AUROC on worked examples") {
  // expected values recomputed with the pairwise oracle and frozen
  Eigen::VectorXd id = vec({3.0, 2.0, 1.0});

  // pairs won 4, tied 1 -> 4.5/6
  Eigen::VectorXd ood_tied = vec({2.0, 0.5});
  CHECK(oracle::pairwise_auroc(id, ood_tied) == doctest::Approx(4.5 / 6.0));
  auto r1 = scoring::detection_metrics(id, ood_tied, {0, 0, 0}, {0, 0, 0});
  CHECK(r1.auroc == doctest::Approx(4.5 / 6.0).epsilon(1e-15));

  // pairs won 4, no ties -> 4/6
  Eigen::VectorXd ood_clean = vec({2.5, 0.5});
  CHECK(oracle::pairwise_auroc(id, ood_clean) == doctest::Approx(4.0 / 6.0));
  auto r2 = scoring::detection_metrics(id, ood_clean, {0, 0, 0}, {0, 0, 0});
  CHECK(r2.auroc == doctest::Approx(4.0 / 6.0).epsilon(1e-15));
}

TEST_CASE("rank AUROC equals the brute-force pairwise count") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> quant(0, 40);
  for (int rep = 0; rep < 40; ++rep) {
    const int n1 = 1 + static_cast<int>(rng() % 300);
    const int n0 = 1 + static_cast<int>(rng() % 300);
    Eigen::VectorXd id(n1), ood(n0);
    // quantized scores force plenty of ties
    for (int i = 0; i < n1; ++i) id(i) = quant(rng) * 0.25;
    for (int i = 0; i < n0; ++i) ood(i) = quant(rng) * 0.25 - 1.0;
    std::vector<int> z(static_cast<size_t>(n1), 0);
    auto r = scoring::detection_metrics(id, ood, z, z);
    CHECK(std::abs(r.auroc - oracle::pairwise_auroc(id, ood)) <= 1e-12);
  }
}

TEST_CASE("AUROC and FPR@TPR95 ignore strictly increasing transforms") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> gauss(0.0, 2.0);
  for (int rep = 0; rep < 30; ++rep) {
    const int n1 = 5 + static_cast<int>(rng() % 60);
    const int n0 = 5 + static_cast<int>(rng() % 60);
    Eigen::VectorXd id(n1), ood(n0);
    for (int i = 0; i < n1; ++i) id(i) = gauss(rng) + 1.0;
    for (int i = 0; i < n0; ++i) ood(i) = gauss(rng);
    std::vector<int> z1(static_cast<size_t>(n1), 0);
    auto before = scoring::detection_metrics(id, ood, z1, z1);
    auto warp = [](double x) { return std::atan(0.7 * x) * 3.0 + x * 0.01; };
    auto after = scoring::detection_metrics(id.unaryExpr(warp), ood.unaryExpr(warp),
                                            z1, z1);
    CHECK(before.auroc == doctest::Approx(after.auroc).epsilon(1e-12));
    CHECK(before.fpr_at_tpr95 == doctest::Approx(after.fpr_at_tpr95).epsilon(1e-12));
  }
}

TEST_CASE("swapping sides with negated scores exchanges the AUPRs exactly") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int rep = 0; rep < 30; ++rep) {
    const int n1 = 3 + static_cast<int>(rng() % 50);
    const int n0 = 3 + static_cast<int>(rng() % 50);
    Eigen::VectorXd id(n1), ood(n0);
    for (int i = 0; i < n1; ++i) id(i) = gauss(rng) + 0.5;
    for (int i = 0; i < n0; ++i) ood(i) = gauss(rng);
    std::vector<int> z1(static_cast<size_t>(n1), 0);
    std::vector<int> z0(static_cast<size_t>(n0), 0);
    auto fwd = scoring::detection_metrics(id, ood, z1, z1);
    auto swp = scoring::detection_metrics(-ood, -id, z0, z0);
    CHECK(fwd.aupr_in == swp.aupr_out);   // exact step sums
    CHECK(fwd.aupr_out == swp.aupr_in);
  }
}

TEST_CASE("CCR is nondecreasing in the allowed FPR and flags unreachable levels") {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int rep = 0; rep < 25; ++rep) {
    const int n1 = 20 + static_cast<int>(rng() % 200);
    const int n0 = 20 + static_cast<int>(rng() % 200);
    Eigen::VectorXd id(n1), ood(n0);
    for (int i = 0; i < n1; ++i) id(i) = gauss(rng) + 1.5;
    for (int i = 0; i < n0; ++i) ood(i) = gauss(rng);
    std::vector<int> preds(static_cast<size_t>(n1)), truth(static_cast<size_t>(n1));
    for (int i = 0; i < n1; ++i) {
      truth[static_cast<size_t>(i)] = static_cast<int>(rng() % 4);
      preds[static_cast<size_t>(i)] =
          (rng() % 10 < 8) ? truth[static_cast<size_t>(i)] : static_cast<int>(rng() % 4);
    }
    auto r = scoring::detection_metrics(id, ood, preds, truth);
    double prev = -1.0;
    for (const auto& [level, value] : r.ccr_at_fpr) {
      CHECK(value >= prev);
      prev = value;
      if (r.ccr_unreachable.at(level)) CHECK(static_cast<double>(n0) < 1.0 / level);
    }
    // with a few hundred OOD samples the 1e-4 and 1e-3 levels are unreachable
    CHECK(r.ccr_unreachable.at(1e-4));
  }
}

TEST_CASE("CCR at full-FPR allowance equals plain accuracy") {
  Eigen::VectorXd id = vec({5.0, 4.0, 3.0, 2.0});
  Eigen::VectorXd ood = vec({0.0, 1.0});
  std::vector<int> preds = {0, 1, 1, 0};
  std::vector<int> truth = {0, 1, 0, 0};
  auto r = scoring::detection_metrics(id, ood, preds, truth, {1.0});
  CHECK(r.acc == doctest::Approx(0.75));
  CHECK(r.ccr_at_fpr.at(1.0) == doctest::Approx(0.75));
}

TEST_CASE("detection_metrics rejects bad inputs") {
  Eigen::VectorXd empty;
  CHECK_THROWS_AS(scoring::detection_metrics(empty, vec({1.0}), {}, {}),
                  ValidationError);
  CHECK_THROWS_AS(scoring::detection_metrics(vec({1.0}), empty, {0}, {0}),
                  ValidationError);
  CHECK_THROWS_AS(scoring::detection_metrics(vec({1.0}), vec({0.0}), {0, 1}, {0}),
                  ValidationError);
}

TEST_CASE("histogram covers both sides over a shared range") {
  Eigen::VectorXd id = vec({0.0, 1.0, 2.0, 10.0});
  Eigen::VectorXd ood = vec({-5.0, 0.5});
  Eigen::MatrixXd h = scoring::score_histogram(id, ood, 50);
  CHECK(h.rows() == 50);
  CHECK(h.cols() == 4);
  CHECK(h(0, 0) == doctest::Approx(-5.0));
  CHECK(h(49, 1) == doctest::Approx(10.0));
  CHECK(h.col(2).sum() == doctest::Approx(4.0));
  CHECK(h.col(3).sum() == doctest::Approx(2.0));
}
