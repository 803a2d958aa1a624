#include "otood/learner.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "otood/csv.hpp"
#include "otood/errors.hpp"

namespace otood::learner {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Linear make_linear(int out, int in, double scale, std::mt19937_64& rng) {
  auto uniform = [&rng]() { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  auto normal = [&]() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * uniform());
  };
  Linear l;
  l.w.resize(out, in);
  for (int r = 0; r < out; ++r)
    for (int c = 0; c < in; ++c) l.w(r, c) = scale * normal();
  l.b = Eigen::VectorXd::Zero(out);
  return l;
}

Eigen::MatrixXd linear_forward(const Linear& l, const Eigen::MatrixXd& x) {
  return (x * l.w.transpose()).rowwise() + l.b.transpose();
}

// y = x W^T + b; given dL/dy accumulate parameter grads and return dL/dx.
Eigen::MatrixXd linear_backward(const Linear& l, const Eigen::MatrixXd& x,
                                const Eigen::MatrixXd& dy, Linear& grad) {
  grad.w += dy.transpose() * x;
  grad.b += dy.colwise().sum().transpose();
  return dy * l.w;
}

Eigen::MatrixXd relu(const Eigen::MatrixXd& x) { return x.cwiseMax(0.0); }

Eigen::MatrixXd relu_backward(const Eigen::MatrixXd& post, const Eigen::MatrixXd& dpost) {
  return (post.array() > 0.0).cast<double>() * dpost.array();
}

Eigen::MatrixXd l2_normalize_rows(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = m;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = std::max(m.row(i).norm(), 1e-12);
    out.row(i) /= n;
  }
  return out;
}

struct InfoNceGrads {
  double loss = 0.0;
  Eigen::MatrixXd d_proj0;  // B x p
  Eigen::MatrixXd d_proj1;  // B x p
};

// InfoNCE over cosine similarities; queue entries act as constants.
InfoNceGrads infonce_core(const Eigen::MatrixXd& proj0, const Eigen::MatrixXd& proj1,
                          const Eigen::MatrixXd& queue_entries, double temp,
                          bool want_grads) {
  if (queue_entries.rows() == 0) throw ValidationError("memory queue is empty");
  if (proj0.rows() != proj1.rows() || proj0.cols() != proj1.cols())
    throw ValidationError("projection views must have identical shapes");
  if (queue_entries.cols() != proj0.cols())
    throw ValidationError("queue entry width does not match projections");
  if (!(temp > 0.0)) throw ValidationError("contrastive temperature must be positive");

  const Eigen::Index b = proj0.rows();
  const Eigen::MatrixXd a = l2_normalize_rows(proj0);
  const Eigen::MatrixXd pos = l2_normalize_rows(proj1);
  const Eigen::MatrixXd neg = l2_normalize_rows(queue_entries);

  InfoNceGrads out;
  Eigen::MatrixXd d_a, d_pos;
  if (want_grads) {
    d_a = Eigen::MatrixXd::Zero(a.rows(), a.cols());
    d_pos = Eigen::MatrixXd::Zero(a.rows(), a.cols());
  }

  const double inv_bt = 1.0 / (static_cast<double>(b) * temp);
  for (Eigen::Index i = 0; i < b; ++i) {
    const double s_pos = a.row(i).dot(pos.row(i));
    Eigen::VectorXd s = (neg * a.row(i).transpose()) / temp;  // L
    const double m = s.maxCoeff();
    const Eigen::ArrayXd e = (s.array() - m).exp();
    const double lse = m + std::log(e.sum());
    out.loss += -s_pos / temp + lse;
    if (want_grads) {
      const Eigen::VectorXd w = (e / e.sum()).matrix();  // softmax over queue
      d_a.row(i) = inv_bt * (neg.transpose() * w - pos.row(i).transpose()).transpose();
      d_pos.row(i) = -inv_bt * a.row(i);
    }
  }
  out.loss /= static_cast<double>(b);

  if (want_grads) {
    // through row normalization: d_v = (d_a - (d_a . a) a) / ||v||
    out.d_proj0 = Eigen::MatrixXd::Zero(a.rows(), a.cols());
    out.d_proj1 = Eigen::MatrixXd::Zero(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < b; ++i) {
      const double n0 = std::max(proj0.row(i).norm(), 1e-12);
      out.d_proj0.row(i) = (d_a.row(i) - d_a.row(i).dot(a.row(i)) * a.row(i)) / n0;
      const double n1 = std::max(proj1.row(i).norm(), 1e-12);
      out.d_proj1.row(i) =
          (d_pos.row(i) - d_pos.row(i).dot(pos.row(i)) * pos.row(i)) / n1;
    }
  }
  return out;
}

Eigen::MatrixXd stable_log_softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Eigen::ArrayXd row = logits.row(i).transpose().array();
    const double m = row.maxCoeff();
    const double lse = m + std::log((row - m).exp().sum());
    out.row(i) = (row - lse).matrix().transpose();
  }
  return out;
}

}  // namespace

bool Network::all_finite() const {
  bool ok = true;
  for_each_param([&ok](const auto& p) { ok = ok && p.allFinite(); });
  return ok;
}

Network make_network(int input_dim, int hidden_dim, int classes, int clusters,
                     int proj_dim, std::mt19937_64& rng) {
  if (input_dim < 1 || hidden_dim < 1 || classes < 2 || clusters < 1 || proj_dim < 1)
    throw ValidationError("bad network dimensions");
  Network n;
  n.enc1 = make_linear(hidden_dim, input_dim, std::sqrt(2.0 / input_dim), rng);
  n.enc2 = make_linear(hidden_dim, hidden_dim, std::sqrt(2.0 / hidden_dim), rng);
  n.cls_head = make_linear(classes, hidden_dim, std::sqrt(1.0 / hidden_dim), rng);
  n.ot_head = make_linear(clusters, hidden_dim, std::sqrt(1.0 / hidden_dim), rng);
  n.proj_hidden = make_linear(hidden_dim, hidden_dim, std::sqrt(2.0 / hidden_dim), rng);
  n.proj_out = make_linear(proj_dim, hidden_dim, std::sqrt(1.0 / hidden_dim), rng);
  return n;
}

Network zeros_like(const Network& net) {
  Network z = net;
  z.for_each_param([](auto& p) { p.setZero(); });
  return z;
}

Forward forward(const Network& net, const Eigen::MatrixXd& batch) {
  if (batch.cols() != net.input_dim())
    throw ValidationError("batch width " + std::to_string(batch.cols()) +
                          " does not match network input " +
                          std::to_string(net.input_dim()));
  if (!batch.allFinite()) throw ValidationError("non-finite batch");
  Forward f;
  f.input = batch;
  f.h1 = relu(linear_forward(net.enc1, batch));
  f.z = relu(linear_forward(net.enc2, f.h1));
  f.logits_cls = linear_forward(net.cls_head, f.z);
  f.logits_ot = linear_forward(net.ot_head, f.z);
  f.proj_h = relu(linear_forward(net.proj_hidden, f.z));
  f.proj = linear_forward(net.proj_out, f.proj_h);
  return f;
}

ClsUnifLoss cls_unif_loss(const Eigen::MatrixXd& logits_cls, const Roles& roles) {
  if (static_cast<Eigen::Index>(roles.size()) != logits_cls.rows())
    throw ValidationError("roles length does not match batch size");
  const Eigen::Index m = logits_cls.cols();
  const Eigen::MatrixXd ls = stable_log_softmax_rows(logits_cls);
  ClsUnifLoss out;
  long n_lab = 0, n_unl = 0;
  for (Eigen::Index i = 0; i < logits_cls.rows(); ++i) {
    const int y = roles[static_cast<size_t>(i)];
    if (y >= 0) {
      if (y >= m) throw ValidationError("label out of range");
      out.cls += -ls(i, y);
      ++n_lab;
    } else {
      out.unif += -ls.row(i).sum() / static_cast<double>(m);
      ++n_unl;
    }
  }
  if (n_lab > 0) out.cls /= static_cast<double>(n_lab);
  if (n_unl > 0) out.unif /= static_cast<double>(n_unl);
  return out;
}

MemoryQueue::MemoryQueue(int max_batches) : max_batches_(max_batches) {
  if (max_batches_ < 1) throw ValidationError("queue capacity must be positive");
}

void MemoryQueue::push_batch(const Eigen::MatrixXd& proj) {
  if (proj.rows() == 0) throw ValidationError("cannot push an empty batch");
  if (!batches_.empty() && batches_.front().cols() != proj.cols())
    throw ValidationError("queue entry width changed");
  batches_.push_back(proj);
  if (static_cast<int>(batches_.size()) > max_batches_) batches_.pop_front();
}

Eigen::Index MemoryQueue::size() const {
  Eigen::Index n = 0;
  for (const auto& b : batches_) n += b.rows();
  return n;
}

Eigen::MatrixXd MemoryQueue::entries() const {
  if (batches_.empty()) return {};
  Eigen::MatrixXd all(size(), batches_.front().cols());
  Eigen::Index r = 0;
  for (const auto& b : batches_) {
    all.middleRows(r, b.rows()) = b;
    r += b.rows();
  }
  return all;
}

double infonce_loss(const Eigen::MatrixXd& proj0, const Eigen::MatrixXd& proj1,
                    const MemoryQueue& queue, double temperature) {
  if (queue.empty()) throw ValidationError("memory queue is empty");
  return infonce_core(proj0, proj1, queue.entries(), temperature, false).loss;
}

WeightedLosses loss_and_gradients(const Network& net, const Eigen::MatrixXd& view0,
                                  const Eigen::MatrixXd& view1, const Roles& roles,
                                  const MemoryQueue& queue, double w_cls,
                                  double w_unif, double w_rep,
                                  double contrastive_temp, Network* grads) {
  Forward f0 = forward(net, view0);
  Forward f1 = forward(net, view1);

  WeightedLosses out;
  const ClsUnifLoss cu = cls_unif_loss(f0.logits_cls, roles);
  out.cls = cu.cls;
  out.unif = cu.unif;

  InfoNceGrads rep;
  if (!queue.empty()) {
    rep = infonce_core(f0.proj, f1.proj, queue.entries(), contrastive_temp,
                       grads != nullptr && w_rep != 0.0);
    out.rep = rep.loss;
  }
  out.weighted = w_cls * out.cls + w_unif * out.unif + w_rep * out.rep;
  if (!grads) return out;

  // --- backward ---
  const Eigen::Index b = view0.rows();
  const Eigen::Index m = f0.logits_cls.cols();
  long n_lab = 0, n_unl = 0;
  for (int y : roles) (y >= 0 ? n_lab : n_unl)++;

  Eigen::MatrixXd dlogits = Eigen::MatrixXd::Zero(b, m);
  if (w_cls != 0.0 || w_unif != 0.0) {
    const Eigen::MatrixXd ls = stable_log_softmax_rows(f0.logits_cls);
    for (Eigen::Index i = 0; i < b; ++i) {
      const int y = roles[static_cast<size_t>(i)];
      const Eigen::ArrayXd p = ls.row(i).transpose().array().exp();
      if (y >= 0 && w_cls != 0.0 && n_lab > 0) {
        Eigen::VectorXd d = p.matrix();
        d(y) -= 1.0;
        dlogits.row(i) = (w_cls / static_cast<double>(n_lab)) * d.transpose();
      } else if (y < 0 && w_unif != 0.0 && n_unl > 0) {
        Eigen::VectorXd d = (p - 1.0 / static_cast<double>(m)).matrix();
        dlogits.row(i) = (w_unif / static_cast<double>(n_unl)) * d.transpose();
      }
    }
  }

  auto backprop_view = [&](const Forward& f, const Eigen::MatrixXd& dcls,
                           const Eigen::MatrixXd& dproj) {
    Eigen::MatrixXd dz = Eigen::MatrixXd::Zero(b, net.hidden_dim());
    if (dcls.size() > 0)
      dz += linear_backward(net.cls_head, f.z, dcls, grads->cls_head);
    if (dproj.size() > 0) {
      Eigen::MatrixXd dph = linear_backward(net.proj_out, f.proj_h, dproj, grads->proj_out);
      dph = relu_backward(f.proj_h, dph);
      dz += linear_backward(net.proj_hidden, f.z, dph, grads->proj_hidden);
    }
    Eigen::MatrixXd dh1 = linear_backward(net.enc2, f.h1, relu_backward(f.z, dz), grads->enc2);
    dh1 = relu_backward(f.h1, dh1);
    linear_backward(net.enc1, f.input, dh1, grads->enc1);
  };

  Eigen::MatrixXd dproj0, dproj1;
  if (w_rep != 0.0 && rep.d_proj0.size() > 0) {
    dproj0 = w_rep * rep.d_proj0;
    dproj1 = w_rep * rep.d_proj1;
  }
  backprop_view(f0, dlogits, dproj0);
  if (dproj1.size() > 0) backprop_view(f1, Eigen::MatrixXd(), dproj1);
  return out;
}

SgdOptimizer::SgdOptimizer(const Network& net, SgdConfig cfg)
    : velocity_(zeros_like(net)), cfg_(cfg) {}

void SgdOptimizer::step(Network& net, const Network& grads, double lr) {
  Network::zip_params(net, grads, velocity_,
                      [&](auto& p, const auto& g, auto& v) {
                        v = cfg_.momentum * v + (g + cfg_.weight_decay * p);
                        p -= lr * v;
                      });
}

double cosine_lr(double base, int epoch, int total_epochs) {
  if (total_epochs < 1) throw ValidationError("need at least one epoch");
  if (epoch < 0 || epoch >= total_epochs) throw ValidationError("epoch out of range");
  if (total_epochs == 1) return base;
  const double t = static_cast<double>(epoch) / static_cast<double>(total_epochs - 1);
  return base * 0.5 * (1.0 + std::cos(M_PI * t));
}

AssignMethod parse_assign_method(const std::string& name) {
  if (name == "et") return AssignMethod::et;
  if (name == "kmeans") return AssignMethod::kmeans;
  if (name == "ce") return AssignMethod::ce;
  throw ValidationError("unknown assignment method '" + name +
                        "' (expected et, kmeans, or ce)");
}

void TrainConfig::validate(int class_count) const {
  if (epochs < 1) throw ValidationError("epochs must be at least 1");
  if (clusters < class_count)
    throw ValidationError("cluster count K must be at least the class count");
  if (batch_labeled < 1 || batch_unlabeled < 1)
    throw ValidationError("batch sizes must be positive");
  if (hidden_dim < 1 || proj_dim < 1) throw ValidationError("bad layer widths");
  if (!(epsilon > 0.0)) throw ValidationError("epsilon must be positive");
  if (!(tau > 0.0 && tau < 1.0) || tau < 0.5)
    throw ValidationError("tau must lie in [0.5, 1)");
  if (!(temperature > 0.0)) throw ValidationError("temperature must be positive");
  if (!(contrastive_temp > 0.0))
    throw ValidationError("contrastive temperature must be positive");
  if (gamma < 0.0 || lambda < 0.0) throw ValidationError("loss weights must be >= 0");
  if (!(sgd.base_lr > 0.0)) throw ValidationError("learning rate must be positive");
  if (sgd.momentum < 0.0 || sgd.momentum >= 1.0)
    throw ValidationError("momentum must lie in [0, 1)");
  if (sgd.weight_decay < 0.0) throw ValidationError("weight decay must be >= 0");
  if (aug_sigma < 0.0) throw ValidationError("augmentation sigma must be >= 0");
  if (!(aug_scale_min > 0.0) || aug_scale_max < aug_scale_min)
    throw ValidationError("bad augmentation scale range");
  if (!(sinkhorn_tol > 0.0) || sinkhorn_iters < 1)
    throw ValidationError("bad transport solver settings");
  if (queue_batches < 1) throw ValidationError("queue capacity must be positive");
  if (kmeans_iters < 1) throw ValidationError("kmeans iterations must be positive");
}

namespace {

struct EffectiveSplit {
  Eigen::MatrixXd labeled_features;    // nL x d
  std::vector<int> labels;             // nL
  Eigen::MatrixXd unlabeled_features;  // nU x d
};

EffectiveSplit effective_split(const assignment::DatasetState& state,
                               const Eigen::MatrixXd& all_features, bool ce_only) {
  EffectiveSplit s;
  const auto nb = static_cast<Eigen::Index>(state.base_labeled().size());
  std::vector<Eigen::Index> lab_rows, unl_rows;
  std::vector<int> labels;
  for (Eigen::Index i = 0; i < state.sample_count(); ++i) {
    const int y = state.effective_label(i);
    if (y >= 0) {
      lab_rows.push_back(i);
      labels.push_back(y);
    } else if (!ce_only) {
      unl_rows.push_back(i);
    }
  }
  if (ce_only) {
    // supervised baseline: base labeled set only, nothing from the pool
    lab_rows.clear();
    labels.clear();
    for (Eigen::Index i = 0; i < nb; ++i) {
      lab_rows.push_back(i);
      labels.push_back(state.effective_label(i));
    }
  }
  s.labeled_features.resize(static_cast<Eigen::Index>(lab_rows.size()),
                            all_features.cols());
  for (size_t i = 0; i < lab_rows.size(); ++i)
    s.labeled_features.row(static_cast<Eigen::Index>(i)) = all_features.row(lab_rows[i]);
  s.labels = std::move(labels);
  s.unlabeled_features.resize(static_cast<Eigen::Index>(unl_rows.size()),
                              all_features.cols());
  for (size_t i = 0; i < unl_rows.size(); ++i)
    s.unlabeled_features.row(static_cast<Eigen::Index>(i)) =
        all_features.row(unl_rows[i]);
  return s;
}

Eigen::MatrixXd augment(const Eigen::MatrixXd& batch, const Eigen::VectorXd& jitter_sigma,
                        double scale_min, double scale_max, data::GaussianStream& g) {
  Eigen::MatrixXd out(batch.rows(), batch.cols());
  for (Eigen::Index i = 0; i < batch.rows(); ++i) {
    const double s = scale_min + (scale_max - scale_min) * g.uniform();
    for (Eigen::Index c = 0; c < batch.cols(); ++c)
      out(i, c) = s * batch(i, c) + jitter_sigma(c) * g.normal();
  }
  return out;
}

}  // namespace

AssignmentPhaseResult run_assignment_phase(const Network& net, const TrainConfig& cfg,
                                           const Eigen::MatrixXd& features,
                                           assignment::DatasetState& state, int epoch,
                                           std::uint64_t kmeans_seed) {
  if (features.rows() != state.sample_count())
    throw ValidationError("feature rows do not match the dataset state");
  AssignmentPhaseResult out;
  Forward f = forward(net, features);

  std::vector<int> clusters;
  if (cfg.assign == AssignMethod::et) {
    transport::LogitMatrix logits{f.logits_ot.transpose(),
                                  transport::LogitKind::cluster};
    transport::TransportProblem problem = transport::build_problem(logits, cfg.epsilon);
    // guard against kernel underflow in the dense path when logits saturate
    problem.cost = problem.cost.cwiseMax(1e-15);
    transport::SinkhornOptions opts;
    opts.tol = cfg.sinkhorn_tol;
    opts.max_iter = cfg.sinkhorn_iters;
    opts.log_domain = cfg.sinkhorn_log_domain;
    opts.exponent = cfg.kernel_exponent;
    transport::AssignmentMatrix q = transport::sinkhorn_solve(problem, opts);
    out.sinkhorn_iterations = q.iterations_used;
    out.sinkhorn_converged = q.converged;
    clusters = transport::harden(q);
  } else {
    clusters = assignment::kmeans_baseline(f.z, cfg.clusters, cfg.kmeans_iters,
                                           kmeans_seed);
  }

  auto reports = assignment::cluster_class_rates(clusters, state);
  state.begin_epoch(epoch);
  state = assignment::promote(reports, cfg.tau, state);
  out.clusters = std::move(clusters);
  return out;
}

TrainResult train_run(const TrainConfig& cfg, const assignment::DatasetState& dataset,
                      const data::TestSets& test) {
  cfg.validate(dataset.class_count());
  if (dataset.base_labeled().empty())
    throw ValidationError("training requires labeled samples");
  if (test.id_features.rows() == 0 || test.ood_features.rows() == 0)
    throw ValidationError("both test sides must be nonempty");

  Eigen::MatrixXd all_features = dataset.all_features();
  const int d = static_cast<int>(all_features.cols());

  data::GaussianStream stream(cfg.seed);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  Network net = make_network(d, cfg.hidden_dim, dataset.class_count(), cfg.clusters,
                             cfg.proj_dim, rng);
  SgdOptimizer opt(net, cfg.sgd);
  MemoryQueue queue(cfg.queue_batches);

  // standardize inputs with train-set statistics; test batches reuse them
  Eigen::VectorXd feat_mean(d), feat_std(d);
  for (int c = 0; c < d; ++c) {
    const auto col = all_features.col(c);
    feat_mean(c) = col.mean();
    const double var = (col.array() - feat_mean(c)).square().sum() /
                       std::max<double>(1.0, col.size() - 1);
    feat_std(c) = std::sqrt(std::max(var, 1e-12));
  }
  auto standardize = [&](const Eigen::MatrixXd& x) {
    return ((x.rowwise() - feat_mean.transpose()).array().rowwise() /
            feat_std.transpose().array())
        .matrix();
  };
  all_features = standardize(all_features);
  const Eigen::MatrixXd test_id_features = standardize(test.id_features);
  const Eigen::MatrixXd test_ood_features = standardize(test.ood_features);

  // jitter magnitude is relative to the (now unit) per-dim feature std
  const Eigen::VectorXd jitter = Eigen::VectorXd::Constant(d, cfg.aug_sigma);

  TrainResult result{net, {}, dataset};
  assignment::DatasetState& state = result.final_state;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = cosine_lr(cfg.sgd.base_lr, epoch, cfg.epochs);

    // 1) label assignment with frozen parameters (skipped by the CE baseline)
    if (cfg.assign != AssignMethod::ce) {
      const std::uint64_t phase_seed = stream.raw();
      AssignmentPhaseResult phase =
          run_assignment_phase(net, cfg, all_features, state, epoch, phase_seed);
      rec.sinkhorn_iterations = phase.sinkhorn_iterations;
      rec.sinkhorn_converged = phase.sinkhorn_converged;
      rec.promotions = static_cast<int>(state.epoch_promotions().size());
      const auto acc = assignment::assignment_accuracy(state);
      rec.assign_correct = acc.correct;
      rec.assign_total = acc.total;
      rec.assign_accuracy = acc.accuracy;
    }

    // 2) representation learning over the refreshed split
    const bool ce_only = cfg.assign == AssignMethod::ce;
    EffectiveSplit split = effective_split(state, all_features, ce_only);
    const auto n_lab = split.labeled_features.rows();
    const auto n_unl = split.unlabeled_features.rows();

    std::vector<Eigen::Index> lab_order(static_cast<size_t>(n_lab));
    std::iota(lab_order.begin(), lab_order.end(), 0);
    std::vector<Eigen::Index> unl_order(static_cast<size_t>(n_unl));
    std::iota(unl_order.begin(), unl_order.end(), 0);
    for (size_t i = lab_order.size(); i > 1; --i)
      std::swap(lab_order[i - 1], lab_order[static_cast<size_t>(stream.raw() % i)]);
    for (size_t i = unl_order.size(); i > 1; --i)
      std::swap(unl_order[i - 1], unl_order[static_cast<size_t>(stream.raw() % i)]);

    const long steps_lab = (n_lab + cfg.batch_labeled - 1) / cfg.batch_labeled;
    const long steps_unl =
        n_unl > 0 ? (n_unl + cfg.batch_unlabeled - 1) / cfg.batch_unlabeled : 0;
    const long steps = std::max<long>(1, std::max(steps_lab, steps_unl));

    double sum_cls = 0.0, sum_unif = 0.0, sum_rep = 0.0, sum_total = 0.0;
    for (long s = 0; s < steps; ++s) {
      const long bl = std::min<long>(cfg.batch_labeled, n_lab);
      const long bu = n_unl > 0 ? std::min<long>(cfg.batch_unlabeled, n_unl) : 0;
      Eigen::MatrixXd batch(bl + bu, d);
      Roles roles(static_cast<size_t>(bl + bu));
      for (long i = 0; i < bl; ++i) {
        const auto idx = lab_order[static_cast<size_t>((s * cfg.batch_labeled + i) %
                                                       n_lab)];
        batch.row(i) = split.labeled_features.row(idx);
        roles[static_cast<size_t>(i)] = split.labels[static_cast<size_t>(idx)];
      }
      for (long i = 0; i < bu; ++i) {
        const auto idx = unl_order[static_cast<size_t>(
            (s * cfg.batch_unlabeled + i) % n_unl)];
        batch.row(bl + i) = split.unlabeled_features.row(idx);
        roles[static_cast<size_t>(bl + i)] = -1;
      }

      Eigen::MatrixXd view0 =
          augment(batch, jitter, cfg.aug_scale_min, cfg.aug_scale_max, stream);
      Eigen::MatrixXd view1 =
          augment(batch, jitter, cfg.aug_scale_min, cfg.aug_scale_max, stream);

      const double w_rep = ce_only ? 0.0 : cfg.lambda;
      const double w_unif = ce_only ? 0.0 : cfg.gamma;
      if (!ce_only) {
        // push a detached copy first so the denominator spans the positives
        Forward f1 = forward(net, view1);
        queue.push_batch(f1.proj);
      }
      static const MemoryQueue no_queue(1);
      Network grads = zeros_like(net);
      WeightedLosses wl =
          loss_and_gradients(net, view0, view1, roles, ce_only ? no_queue : queue,
                             1.0, w_unif, w_rep, cfg.contrastive_temp, &grads);

      LossBreakdown lb;
      lb.cls = wl.cls;
      lb.unif = wl.unif;
      lb.rep = wl.rep;
      lb.gamma = cfg.gamma;
      lb.lambda = cfg.lambda;
      lb.total = lb.cls + lb.gamma * lb.unif + lb.lambda * lb.rep;
      if (!std::isfinite(lb.total))
        throw NumericalError("training diverged at epoch " + std::to_string(epoch) +
                             ", step " + std::to_string(s));
      opt.step(net, grads, rec.lr);
      if (!net.all_finite())
        throw NumericalError("parameters became non-finite at epoch " +
                             std::to_string(epoch));
      sum_cls += lb.cls;
      sum_unif += lb.unif;
      sum_rep += lb.rep;
      sum_total += lb.total;
    }
    rec.loss_cls = sum_cls / static_cast<double>(steps);
    rec.loss_unif = sum_unif / static_cast<double>(steps);
    rec.loss_rep = sum_rep / static_cast<double>(steps);
    rec.loss_total = sum_total / static_cast<double>(steps);

    // test-set evaluation with the epoch's final parameters
    Forward fid = forward(net, test_id_features);
    Forward food = forward(net, test_ood_features);
    transport::LogitMatrix lid{fid.logits_cls.transpose(),
                               transport::LogitKind::id_class};
    transport::LogitMatrix lood{food.logits_cls.transpose(),
                                transport::LogitKind::id_class};
    const Eigen::VectorXd id_scores =
        scoring::ood_score(lid, scoring::ScoreMethod::t_energy, cfg.temperature);
    const Eigen::VectorXd ood_scores =
        scoring::ood_score(lood, scoring::ScoreMethod::t_energy, cfg.temperature);
    std::vector<int> preds(static_cast<size_t>(fid.logits_cls.rows()));
    for (Eigen::Index i = 0; i < fid.logits_cls.rows(); ++i) {
      Eigen::Index best;
      fid.logits_cls.row(i).maxCoeff(&best);
      preds[static_cast<size_t>(i)] = static_cast<int>(best);
    }
    rec.test = scoring::detection_metrics(id_scores, ood_scores, preds,
                                          test.id_labels);
    result.log.push_back(rec);
  }

  result.net = net;
  return result;
}

std::string epoch_record_json(const EpochRecord& rec) {
  json j;
  j["epoch"] = rec.epoch;
  j["lr"] = rec.lr;
  j["loss"] = {{"cls", rec.loss_cls},
               {"unif", rec.loss_unif},
               {"rep", rec.loss_rep},
               {"total", rec.loss_total}};
  j["promotions"] = rec.promotions;
  j["assignment"] = {{"correct", rec.assign_correct},
                     {"total", rec.assign_total},
                     {"accuracy", rec.assign_accuracy}};
  j["sinkhorn"] = {{"iterations", rec.sinkhorn_iterations},
                   {"converged", rec.sinkhorn_converged}};
  json ccr = json::object();
  for (const auto& [level, value] : rec.test.ccr_at_fpr)
    ccr[csv::format_value(level)] = value;
  j["test"] = {{"fpr_at_tpr95", rec.test.fpr_at_tpr95},
               {"auroc", rec.test.auroc},
               {"aupr_in", rec.test.aupr_in},
               {"aupr_out", rec.test.aupr_out},
               {"acc", rec.test.acc},
               {"ccr_at_fpr", ccr}};
  return j.dump();
}

namespace {

const std::vector<std::string>& tensor_names() {
  static const std::vector<std::string> names = {
      "enc1_w", "enc1_b", "enc2_w", "enc2_b", "cls_w", "cls_b",
      "ot_w",   "ot_b",   "projh_w", "projh_b", "projo_w", "projo_b"};
  return names;
}

}  // namespace

void save_network(const std::string& dir, const Network& net) {
  fs::create_directories(dir);
  json manifest;
  manifest["tensors"] = json::array();
  int i = 0;
  net.for_each_param([&](const auto& p) {
    const std::string name = tensor_names()[static_cast<size_t>(i++)];
    const std::string file = name + ".csv";
    csv::save_matrix((fs::path(dir) / file).string(), p);
    manifest["tensors"].push_back(
        {{"name", name}, {"rows", p.rows()}, {"cols", p.cols()}, {"file", file}});
  });
  std::ofstream mf(fs::path(dir) / "params.json");
  if (!mf) throw IoError("cannot write parameter manifest in " + dir);
  mf << manifest.dump(2) << '\n';
}

Network load_network(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "params.json");
  if (!mf) throw IoError("missing params.json in " + dir);
  json manifest;
  mf >> manifest;
  std::vector<Eigen::MatrixXd> tensors;
  for (const auto& t : manifest.at("tensors")) {
    Eigen::MatrixXd m =
        csv::load_matrix((fs::path(dir) / t.at("file").get<std::string>()).string());
    if (m.rows() != t.at("rows").get<Eigen::Index>() ||
        m.cols() != t.at("cols").get<Eigen::Index>())
      throw ValidationError("tensor shape mismatch in " + dir);
    tensors.push_back(std::move(m));
  }
  if (tensors.size() != 12) throw ValidationError("expected 12 tensors in " + dir);
  Network net;
  int i = 0;
  net.for_each_param([&](auto& p) {
    const Eigen::MatrixXd& m = tensors[static_cast<size_t>(i++)];
    using T = std::decay_t<decltype(p)>;
    if constexpr (T::ColsAtCompileTime == 1) {
      if (m.cols() != 1)
        throw ValidationError("bias tensor in " + dir + " must be a single column");
      p = m.col(0);
    } else {
      p = m;
    }
  });
  return net;
}

}  // namespace otood::learner
