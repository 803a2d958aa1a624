#ifndef OTOOD_LEARNER_HPP_
#define OTOOD_LEARNER_HPP_

#include <Eigen/Core>
#include <cstdint>
#include <deque>
#include <random>
#include <string>
#include <vector>

#include "otood/assignment.hpp"
#include "otood/data.hpp"
#include "otood/scoring.hpp"
#include "otood/transport.hpp"

namespace otood::learner {

struct Linear {
  Eigen::MatrixXd w;  // out x in
  Eigen::VectorXd b;  // out
};

// Shared encoder trunk with three heads: an M-way classifier, a K-way cluster
// head for transport, and a two-layer projection feeding the contrastive loss.
struct Network {
  Linear enc1, enc2;      // d -> h -> h, relu after each
  Linear cls_head;        // h -> M
  Linear ot_head;         // h -> K
  Linear proj_hidden;     // h -> h, relu
  Linear proj_out;        // h -> p

  int input_dim() const { return static_cast<int>(enc1.w.cols()); }
  int hidden_dim() const { return static_cast<int>(enc1.w.rows()); }
  int class_count() const { return static_cast<int>(cls_head.w.rows()); }
  int cluster_count() const { return static_cast<int>(ot_head.w.rows()); }
  int proj_dim() const { return static_cast<int>(proj_out.w.rows()); }

  // Visit every parameter tensor; f must accept both MatrixXd& and VectorXd&.
  template <typename F>
  void for_each_param(F&& f) {
    f(enc1.w); f(enc1.b); f(enc2.w); f(enc2.b);
    f(cls_head.w); f(cls_head.b); f(ot_head.w); f(ot_head.b);
    f(proj_hidden.w); f(proj_hidden.b); f(proj_out.w); f(proj_out.b);
  }
  template <typename F>
  void for_each_param(F&& f) const {
    f(enc1.w); f(enc1.b); f(enc2.w); f(enc2.b);
    f(cls_head.w); f(cls_head.b); f(ot_head.w); f(ot_head.b);
    f(proj_hidden.w); f(proj_hidden.b); f(proj_out.w); f(proj_out.b);
  }

  // Lockstep visit of (params, grads, velocity) for the optimizer.
  template <typename F>
  static void zip_params(Network& a, const Network& b, Network& c, F&& f) {
    f(a.enc1.w, b.enc1.w, c.enc1.w); f(a.enc1.b, b.enc1.b, c.enc1.b);
    f(a.enc2.w, b.enc2.w, c.enc2.w); f(a.enc2.b, b.enc2.b, c.enc2.b);
    f(a.cls_head.w, b.cls_head.w, c.cls_head.w);
    f(a.cls_head.b, b.cls_head.b, c.cls_head.b);
    f(a.ot_head.w, b.ot_head.w, c.ot_head.w);
    f(a.ot_head.b, b.ot_head.b, c.ot_head.b);
    f(a.proj_hidden.w, b.proj_hidden.w, c.proj_hidden.w);
    f(a.proj_hidden.b, b.proj_hidden.b, c.proj_hidden.b);
    f(a.proj_out.w, b.proj_out.w, c.proj_out.w);
    f(a.proj_out.b, b.proj_out.b, c.proj_out.b);
  }

  bool all_finite() const;
};

Network make_network(int input_dim, int hidden_dim, int classes, int clusters,
                     int proj_dim, std::mt19937_64& rng);
Network zeros_like(const Network& net);

// One forward pass over a row-major batch. Kept around for backprop.
struct Forward {
  Eigen::MatrixXd input;       // B x d
  Eigen::MatrixXd h1, z;       // post-relu activations, B x h
  Eigen::MatrixXd logits_cls;  // B x M
  Eigen::MatrixXd logits_ot;   // B x K
  Eigen::MatrixXd proj_h;      // B x h (post-relu)
  Eigen::MatrixXd proj;        // B x p
};

Forward forward(const Network& net, const Eigen::MatrixXd& batch);

// Role of each batch row: the ID label for labeled samples, -1 for unlabeled.
using Roles = std::vector<int>;

struct ClsUnifLoss {
  double cls = 0.0;
  double unif = 0.0;
};

// Mean cross-entropy of labeled rows against their one-hot labels, plus mean
// cross-entropy of unlabeled rows against the uniform distribution. An empty
// role set contributes 0.
ClsUnifLoss cls_unif_loss(const Eigen::MatrixXd& logits_cls, const Roles& roles);

// FIFO store of the n latest projected batches; entries act as constants
// (negatives only) in the contrastive loss.
class MemoryQueue {
 public:
  explicit MemoryQueue(int max_batches);
  void push_batch(const Eigen::MatrixXd& proj);
  int batch_capacity() const { return max_batches_; }
  Eigen::Index size() const;
  bool empty() const { return batches_.empty(); }
  // All entries stacked oldest-first, L x p.
  Eigen::MatrixXd entries() const;

 private:
  std::deque<Eigen::MatrixXd> batches_;
  int max_batches_;
};

// InfoNCE over cosine similarities of l2-normalized projections. The queue
// must already contain (a detached copy of) proj1 so the denominator covers
// the positives.
double infonce_loss(const Eigen::MatrixXd& proj0, const Eigen::MatrixXd& proj1,
                    const MemoryQueue& queue, double temperature = 1.0);

struct LossBreakdown {
  double cls = 0.0;
  double unif = 0.0;
  double rep = 0.0;
  double total = 0.0;  // cls + gamma * unif + lambda * rep, exactly
  double gamma = 0.0;
  double lambda = 0.0;
};

// Losses plus parameter gradients of w_cls*cls + w_unif*unif + w_rep*rep for
// a two-view batch. Setting one weight to 1 and the rest to 0 isolates that
// loss for gradient checking. `grads` may be null to skip backprop.
struct WeightedLosses {
  double cls = 0.0, unif = 0.0, rep = 0.0, weighted = 0.0;
};
WeightedLosses loss_and_gradients(const Network& net, const Eigen::MatrixXd& view0,
                                  const Eigen::MatrixXd& view1, const Roles& roles,
                                  const MemoryQueue& queue, double w_cls,
                                  double w_unif, double w_rep,
                                  double contrastive_temp, Network* grads);

struct SgdConfig {
  double base_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

class SgdOptimizer {
 public:
  SgdOptimizer(const Network& net, SgdConfig cfg);
  void step(Network& net, const Network& grads, double lr);

 private:
  Network velocity_;
  SgdConfig cfg_;
};

// Starts at base and reaches exactly 0 at epoch == total_epochs - 1.
double cosine_lr(double base, int epoch, int total_epochs);

enum class AssignMethod { et, kmeans, ce };
AssignMethod parse_assign_method(const std::string& name);

struct TrainConfig {
  int epochs = 60;
  int batch_labeled = 32;
  int batch_unlabeled = 64;
  int hidden_dim = 64;
  int proj_dim = 32;
  int clusters = 16;              // K
  double epsilon = 0.05;          // transport entropy weight
  double tau = 0.8;               // promotion threshold
  double gamma = 0.5;             // uniform-loss weight
  double lambda = 0.3;            // contrastive-loss weight
  double temperature = 1000.0;    // T for the test-time energy score
  double contrastive_temp = 1.0;
  SgdConfig sgd;
  double aug_sigma = 0.1;         // jitter, in units of per-dim feature std
  double aug_scale_min = 0.8;
  double aug_scale_max = 1.2;
  double sinkhorn_tol = 1e-6;
  int sinkhorn_iters = 50;        // per-epoch budget
  bool sinkhorn_log_domain = false;
  transport::KernelExponent kernel_exponent =
      transport::KernelExponent::inverse_epsilon;
  int queue_batches = 8;
  AssignMethod assign = AssignMethod::et;
  int kmeans_iters = 50;
  std::uint64_t seed = 1;

  void validate(int class_count) const;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double loss_cls = 0.0, loss_unif = 0.0, loss_rep = 0.0, loss_total = 0.0;
  int promotions = 0;
  long assign_correct = 0, assign_total = 0;
  double assign_accuracy = 1.0;
  int sinkhorn_iterations = 0;
  bool sinkhorn_converged = true;
  scoring::ScoreReport test;
};

struct TrainResult {
  Network net;
  std::vector<EpochRecord> log;
  assignment::DatasetState final_state;
};

// One frozen-parameter assignment pass: forward the whole train set (features
// in the state's flat order, already preprocessed), cluster (transport or
// k-means), recompute rates, clear and recompute promotions. Mutates only the
// dataset state, never the network.
struct AssignmentPhaseResult {
  std::vector<int> clusters;
  int sinkhorn_iterations = 0;
  bool sinkhorn_converged = true;
};
AssignmentPhaseResult run_assignment_phase(const Network& net, const TrainConfig& cfg,
                                           const Eigen::MatrixXd& features,
                                           assignment::DatasetState& state, int epoch,
                                           std::uint64_t kmeans_seed);

// Alternating loop: every epoch first reassigns labels with frozen parameters
// (transport or k-means over the whole train set, then rates and promotion),
// then runs minibatch SGD over the refreshed labeled/unlabeled split.
TrainResult train_run(const TrainConfig& cfg, const assignment::DatasetState& dataset,
                      const data::TestSets& test);

// Deterministic JSONL serialization of the per-epoch log.
std::string epoch_record_json(const EpochRecord& rec);

// Final-parameter dump: one dense CSV per tensor plus a manifest.
void save_network(const std::string& dir, const Network& net);
Network load_network(const std::string& dir);

}  // namespace otood::learner

#endif  // OTOOD_LEARNER_HPP_
