// Command-line front end: dataset generation, training, label assignment,
// transport solving, scoring, and evaluation.
//
// Exit codes: 0 success, 1 usage, 2 I/O, 3 validation, 4 numerical failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "otood/assignment.hpp"
#include "otood/config.hpp"
#include "otood/csv.hpp"
#include "otood/data.hpp"
#include "otood/errors.hpp"
#include "otood/learner.hpp"
#include "otood/scoring.hpp"
#include "otood/transport.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace otood;

namespace {

json report_to_json(const scoring::ScoreReport& r) {
  json ccr = json::object();
  json warn = json::object();
  for (const auto& [level, value] : r.ccr_at_fpr) {
    const std::string key = csv::format_value(level);
    ccr[key] = value;
    warn[key] = r.ccr_unreachable.at(level);
  }
  return json{{"fpr_at_tpr95", r.fpr_at_tpr95}, {"auroc", r.auroc},
              {"aupr_in", r.aupr_in},           {"aupr_out", r.aupr_out},
              {"acc", r.acc},                   {"ccr_at_fpr", ccr},
              {"ccr_unreachable", warn}};
}

int run_gen(const std::string& out_dir, data::ToyScoodConfig cfg) {
  data::ToyDataset ds = data::generate_scood_toy(cfg);
  data::save_dataset(out_dir, ds, cfg);
  std::cout << "wrote dataset with " << ds.state.base_labeled().size()
            << " labeled / " << ds.state.unlabeled().size() << " unlabeled samples to "
            << out_dir << "\n";
  return 0;
}

int run_train(const std::string& data_dir, const std::string& config_path,
              const std::string& out_dir, bool seed_given, std::uint64_t seed,
              const std::string& assign_flag) {
  learner::TrainConfig cfg;
  if (!config_path.empty())
    cfg = config::train_config_from(config::parse_file(config_path), cfg);
  if (seed_given) cfg.seed = seed;
  if (!assign_flag.empty()) cfg.assign = learner::parse_assign_method(assign_flag);

  data::ToyDataset ds = data::load_dataset(data_dir);
  learner::TrainResult result = learner::train_run(cfg, ds.state, ds.test);

  fs::create_directories(out_dir);
  std::ofstream log(fs::path(out_dir) / "epochs.jsonl");
  if (!log) throw IoError("cannot write epoch log in " + out_dir);
  for (const auto& rec : result.log) log << learner::epoch_record_json(rec) << '\n';
  log.close();
  learner::save_network((fs::path(out_dir) / "params").string(), result.net);

  const auto& last = result.log.back();
  std::cout << "final epoch " << last.epoch << ": auroc=" << last.test.auroc
            << " fpr95=" << last.test.fpr_at_tpr95 << " acc=" << last.test.acc
            << " promotions=" << last.promotions << "\n";
  return 0;
}

int run_assign(const std::string& logits_path, const std::string& labels_path,
               double tau, double epsilon, int k_expected, double tol, int max_iter,
               const std::string& out_dir) {
  Eigen::MatrixXd raw = csv::load_matrix(logits_path);
  if (k_expected > 0 && raw.rows() != k_expected)
    throw ValidationError("logit rows (" + std::to_string(raw.rows()) +
                          ") do not match --k (" + std::to_string(k_expected) + ")");
  auto labels = data::load_labels(labels_path);
  if (static_cast<Eigen::Index>(labels.size()) != raw.cols())
    throw ValidationError("label rows do not match logit columns");

  int classes = 0;
  for (const auto& r : labels) classes = std::max(classes, r.label + 1);
  for (const auto& r : labels)
    if (r.truth.kind == assignment::TruthKind::id)
      classes = std::max(classes, r.truth.label + 1);
  if (classes < 1)
    throw ValidationError("label file contains no labeled samples");

  std::vector<assignment::LabeledSample> base;
  std::vector<assignment::UnlabeledSample> pool;
  for (const auto& r : labels) {
    if (r.label >= 0)
      base.push_back({r.id, Eigen::VectorXd(), r.label});
    else
      pool.push_back({r.id, Eigen::VectorXd(), r.truth});
  }
  assignment::DatasetState state(std::move(base), std::move(pool), classes);

  // rates are computed in flat order (labeled block first), so reorder the
  // logit columns from file order to flat order
  std::vector<Eigen::Index> flat_to_file;
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i].label >= 0) flat_to_file.push_back(static_cast<Eigen::Index>(i));
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i].label < 0) flat_to_file.push_back(static_cast<Eigen::Index>(i));
  Eigen::MatrixXd ordered(raw.rows(), raw.cols());
  for (Eigen::Index i = 0; i < raw.cols(); ++i)
    ordered.col(i) = raw.col(flat_to_file[static_cast<size_t>(i)]);

  transport::LogitMatrix logits{ordered, transport::LogitKind::cluster};
  transport::TransportProblem problem = transport::build_problem(logits, epsilon);
  transport::SinkhornOptions opts;
  opts.tol = tol;
  opts.max_iter = max_iter;
  transport::AssignmentMatrix q = transport::sinkhorn_solve(problem, opts);
  std::vector<int> clusters = transport::harden(q);

  auto reports = assignment::cluster_class_rates(clusters, state);
  state.begin_epoch(0);
  state = assignment::promote(reports, tau, state);

  fs::create_directories(out_dir);
  {
    std::ofstream out(fs::path(out_dir) / "reports.csv");
    if (!out) throw IoError("cannot write reports.csv in " + out_dir);
    out << "cluster,size,dominant_class,dominant_rate,promoted\n";
    for (const auto& r : reports)
      out << r.cluster << ',' << r.member_ids.size() << ',' << r.dominant_class
          << ',' << csv::format_value(r.dominant_rate) << ',' << (r.promoted ? 1 : 0)
          << '\n';
  }
  {
    std::ofstream out(fs::path(out_dir) / "promotions.csv");
    if (!out) throw IoError("cannot write promotions.csv in " + out_dir);
    out << "sample_id,pseudo_label,source_cluster\n";
    for (const auto& p : state.epoch_promotions())
      out << p.sample_id << ',' << p.pseudo_label << ',' << p.source_cluster << '\n';
  }

  std::cout << "promotions=" << state.epoch_promotions().size()
            << " sinkhorn_iterations=" << q.iterations_used
            << " converged=" << (q.converged ? "true" : "false");
  bool have_truth = true;
  for (const auto& p : state.epoch_promotions())
    if (state.unlabeled_by_id(p.sample_id).truth.kind == assignment::TruthKind::unknown)
      have_truth = false;
  if (have_truth) {
    const auto acc = assignment::assignment_accuracy(state);
    std::cout << " accuracy=" << acc.correct << "/" << acc.total << "="
              << csv::format_value(acc.accuracy);
  }
  std::cout << "\n";
  return 0;
}

int run_sinkhorn(const std::string& cost_path, const std::string& alpha_path,
                 const std::string& beta_path, const std::string& energy_path,
                 double epsilon, double tol, int max_iter, bool log_domain,
                 const std::string& out_path) {
  transport::TransportProblem p;
  p.cost = csv::load_cost(cost_path);
  p.epsilon = epsilon;
  const Eigen::Index k = p.cost.rows(), n = p.cost.cols();

  if (!alpha_path.empty()) {
    p.alpha = csv::load_column(alpha_path);
    const double s = p.alpha.sum();
    if (!(s > 0.0)) throw ValidationError("alpha must have positive mass");
    p.alpha /= s;  // marginals are normalized on load
  } else {
    p.alpha = Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k));
  }
  if (!beta_path.empty() && !energy_path.empty())
    throw ValidationError("give either --beta or --energy, not both");
  if (!beta_path.empty()) {
    p.beta = csv::load_column(beta_path);
    const double s = p.beta.sum();
    if (!(s > 0.0)) throw ValidationError("beta must have positive mass");
    p.beta /= s;
  } else if (!energy_path.empty()) {
    transport::EnergyVector e;
    e.raw = csv::load_column(energy_path);
    const double lo = e.raw.minCoeff();
    const double range = e.raw.maxCoeff() - lo;
    e.shifted = e.raw.array() - lo + 1e-3 * std::max(range, 1.0);
    p.beta = transport::transport_marginals(e, k).second;
  } else {
    p.beta = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  }

  transport::SinkhornOptions opts;
  opts.tol = tol;
  opts.max_iter = max_iter;
  opts.log_domain = log_domain;
  transport::AssignmentMatrix q = transport::sinkhorn_solve(p, opts);
  csv::save_matrix(out_path, q.q);
  std::cout << "converged=" << (q.converged ? "true" : "false")
            << " iterations=" << q.iterations_used
            << " row_err=" << csv::format_value(q.row_marginal_error)
            << " col_err=" << csv::format_value(q.col_marginal_error) << "\n";
  return 0;
}

int run_score(const std::string& logits_path, const std::string& method,
              double temperature, const std::string& out_path) {
  transport::LogitMatrix logits{csv::load_matrix(logits_path),
                                transport::LogitKind::id_class};
  Eigen::VectorXd scores =
      scoring::ood_score(logits, scoring::parse_method(method), temperature);
  csv::save_column(out_path, scores);
  std::cout << "wrote " << scores.size() << " scores to " << out_path << "\n";
  return 0;
}

int run_eval(const std::string& id_path, const std::string& ood_path,
             const std::string& out_path, const std::string& hist_path) {
  Eigen::MatrixXd id = csv::load_matrix(id_path);
  if (id.cols() != 3)
    throw ValidationError("ID file must have columns score,prediction,truth");
  Eigen::VectorXd ood = csv::load_column(ood_path);

  Eigen::VectorXd id_scores = id.col(0);
  std::vector<int> preds(static_cast<size_t>(id.rows()));
  std::vector<int> truth(static_cast<size_t>(id.rows()));
  for (Eigen::Index i = 0; i < id.rows(); ++i) {
    preds[static_cast<size_t>(i)] = static_cast<int>(id(i, 1));
    truth[static_cast<size_t>(i)] = static_cast<int>(id(i, 2));
  }

  scoring::ScoreReport r = scoring::detection_metrics(id_scores, ood, preds, truth);
  const json j = report_to_json(r);
  if (out_path.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    std::ofstream out(out_path);
    if (!out) throw IoError("cannot write " + out_path);
    out << j.dump(2) << '\n';
    std::cout << "wrote metrics to " << out_path << "\n";
  }
  if (!hist_path.empty())
    csv::save_matrix(hist_path, scoring::score_histogram(id_scores, ood));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "otood: energy-weighted optimal-transport label assignment and "
      "OOD detection on synthetic datasets.\n"
      "Exit codes: 0 success, 1 usage, 2 I/O error, 3 validation error, "
      "4 numerical failure."};
  app.require_subcommand(1);

  // ---- gen ----
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset directory");
  std::string gen_out, gen_preset = "toy", gen_shape = "annulus";
  data::ToyScoodConfig tc;
  gen->add_option("--preset", gen_preset, "Dataset preset")
      ->capture_default_str()
      ->check(CLI::IsMember({"toy"}));
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", tc.seed, "RNG seed")->capture_default_str();
  gen->add_option("--classes", tc.classes, "ID class count (M)")->capture_default_str();
  gen->add_option("--dim", tc.dim, "Feature dimension (d)")->capture_default_str();
  gen->add_option("--labeled-per-class", tc.labeled_per_class,
                  "Labeled samples per class")
      ->capture_default_str();
  gen->add_option("--unlabeled-id", tc.unlabeled_id, "Unlabeled ID sample count")
      ->capture_default_str();
  gen->add_option("--unlabeled-ood", tc.unlabeled_ood, "Unlabeled OOD sample count")
      ->capture_default_str();
  gen->add_option("--shift-mean", tc.shift_mean,
                  "Covariate mean offset for unlabeled ID, in class sigmas")
      ->capture_default_str();
  gen->add_option("--shift-var", tc.shift_var,
                  "Covariate variance inflation for unlabeled ID")
      ->capture_default_str();
  gen->add_option("--ood-shape", gen_shape, "OOD region shape")
      ->capture_default_str()
      ->check(CLI::IsMember({"annulus", "box"}));
  gen->add_option("--test-id", tc.test_id, "ID test sample count")->capture_default_str();
  gen->add_option("--test-ood", tc.test_ood, "OOD test sample count")
      ->capture_default_str();

  // ---- train ----
  auto* train = app.add_subcommand("train", "Run the alternating training loop");
  std::string train_data, train_config, train_out, train_assign;
  std::uint64_t train_seed = 1;
  train->add_option("--data", train_data, "Dataset directory from `gen`")->required();
  train->add_option("--config", train_config,
                    "key=value config file; flags override file values");
  train->add_option("--out", train_out, "Output directory")->required();
  auto* seed_opt =
      train->add_option("--seed", train_seed, "RNG seed (overrides config)");
  train->add_option("--assign", train_assign,
                    "Assignment method: et (energy transport), kmeans, ce")
      ->check(CLI::IsMember({"et", "kmeans", "ce"}));

  // ---- assign ----
  auto* assign = app.add_subcommand(
      "assign", "Cluster OT-head logits, compute class rates, promote");
  std::string as_logits, as_labels, as_out;
  double as_tau = 0.8, as_eps = 0.05, as_tol = 1e-6;
  int as_k = 0, as_iter = 1000;
  assign->add_option("--logits", as_logits, "Cluster-head logits CSV (K rows x N cols)")
      ->required();
  assign->add_option("--labels", as_labels,
                     "Label CSV: id,label-or-U[,truth]; truth is a label or OOD")
      ->required();
  assign->add_option("--tau", as_tau, "Promotion threshold (tau)")->capture_default_str();
  assign->add_option("--epsilon", as_eps, "Transport entropy weight (epsilon)")
      ->capture_default_str();
  assign->add_option("--k", as_k, "Expected cluster count K (0 = infer from logits)")
      ->capture_default_str();
  assign->add_option("--tol", as_tol, "Solver marginal tolerance")->capture_default_str();
  assign->add_option("--max-iter", as_iter, "Solver iteration cap")->capture_default_str();
  assign->add_option("--out", as_out, "Output directory")->required();

  // ---- sinkhorn ----
  auto* sink = app.add_subcommand("sinkhorn", "Solve one entropic transport problem");
  std::string sk_cost, sk_alpha, sk_beta, sk_energy, sk_out;
  double sk_eps = 0.05, sk_tol = 1e-6;
  int sk_iter = 1000;
  bool sk_log = false;
  sink->add_option("--cost", sk_cost,
                   "Cost CSV: dense rows, or k,n,value triplets under that header")
      ->required();
  sink->add_option("--alpha", sk_alpha,
                   "Row marginal CSV (single column; normalized on load; "
                   "default uniform)");
  sink->add_option("--beta", sk_beta,
                   "Column marginal CSV (single column; normalized on load; "
                   "default uniform)");
  sink->add_option("--energy", sk_energy,
                   "Raw energy CSV; beta is derived from shifted energies");
  sink->add_option("--epsilon", sk_eps, "Entropy weight (epsilon)")->capture_default_str();
  sink->add_option("--tol", sk_tol, "L1 marginal tolerance")->capture_default_str();
  sink->add_option("--max-iter", sk_iter, "Iteration cap")->capture_default_str();
  sink->add_flag("--log-domain", sk_log, "Use the stabilized log-domain path");
  sink->add_option("--out", sk_out, "Coupling output CSV")->required();

  // ---- score ----
  auto* score = app.add_subcommand("score", "Compute OOD scores from class logits");
  std::string sc_logits, sc_method = "tenergy", sc_out;
  double sc_temp = 1000.0;
  score->add_option("--logits", sc_logits, "Class-head logits CSV (M rows x N cols)")
      ->required();
  score->add_option("--method", sc_method, "msp | energy | tenergy")
      ->capture_default_str()
      ->check(CLI::IsMember({"msp", "energy", "tenergy"}));
  score->add_option("--temperature", sc_temp, "Temperature (T) for tenergy")
      ->capture_default_str();
  score->add_option("--out", sc_out, "Scores output CSV (one per line)")->required();

  // ---- eval ----
  auto* eval = app.add_subcommand("eval", "Detection metrics from score files");
  std::string ev_id, ev_ood, ev_out, ev_hist;
  eval->add_option("--id", ev_id, "ID CSV: score,prediction,truth")->required();
  eval->add_option("--ood", ev_ood, "OOD CSV: score per line")->required();
  eval->add_option("--out", ev_out, "Metrics JSON output (default: stdout)");
  eval->add_option("--hist", ev_hist, "Optional 50-bin score histogram CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen->parsed()) {
      tc.ood_shape = gen_shape == "box" ? data::OodShape::box : data::OodShape::annulus;
      return run_gen(gen_out, tc);
    }
    if (train->parsed())
      return run_train(train_data, train_config, train_out, seed_opt->count() > 0,
                       train_seed, train_assign);
    if (assign->parsed())
      return run_assign(as_logits, as_labels, as_tau, as_eps, as_k, as_tol, as_iter,
                        as_out);
    if (sink->parsed())
      return run_sinkhorn(sk_cost, sk_alpha, sk_beta, sk_energy, sk_eps, sk_tol,
                          sk_iter, sk_log, sk_out);
    if (score->parsed()) return run_score(sc_logits, sc_method, sc_temp, sc_out);
    if (eval->parsed()) return run_eval(ev_id, ev_ood, ev_out, ev_hist);
  } catch (const ValidationError& e) {
    std::cerr << "error(validation): " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "error(io): " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "error(numerical): " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
