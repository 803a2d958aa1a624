#include "otood/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <set>

#include "otood/errors.hpp"

namespace otood::config {

namespace {

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace

KeyValues parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(lineno) +
                            " is not key=value: '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ValidationError("empty key at config line " +
                                           std::to_string(lineno));
    kv[key] = value;
  }
  return kv;
}

double get_double(const KeyValues& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  char* end = nullptr;
  const double v = std::strtod(it->second.c_str(), &end);
  if (end != it->second.c_str() + it->second.size())
    throw ValidationError("config key '" + key + "' is not a number: " + it->second);
  return v;
}

int get_int(const KeyValues& kv, const std::string& key, int fallback) {
  const double v = get_double(kv, key, static_cast<double>(fallback));
  const int i = static_cast<int>(v);
  if (static_cast<double>(i) != v)
    throw ValidationError("config key '" + key + "' must be an integer");
  return i;
}

std::uint64_t get_u64(const KeyValues& kv, const std::string& key,
                      std::uint64_t fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(it->second.c_str(), &end, 10);
  if (end != it->second.c_str() + it->second.size())
    throw ValidationError("config key '" + key + "' is not an unsigned integer");
  return v;
}

bool get_bool(const KeyValues& kv, const std::string& key, bool fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ValidationError("config key '" + key + "' must be true/false");
}

std::string get_string(const KeyValues& kv, const std::string& key,
                       const std::string& fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

learner::TrainConfig train_config_from(const KeyValues& kv,
                                       const learner::TrainConfig& defaults) {
  static const std::set<std::string> known = {
      "epochs",        "batch_labeled",    "batch_unlabeled", "hidden",
      "proj_dim",      "k",                "epsilon",         "tau",
      "gamma",         "lambda",           "temperature",     "contrastive_temp",
      "lr",            "momentum",         "weight_decay",    "aug_sigma",
      "aug_scale_min", "aug_scale_max",    "sinkhorn_tol",    "sinkhorn_iters",
      "sinkhorn_log_domain", "kernel_exponent", "queue_batches", "assign",
      "kmeans_iters",  "seed"};
  for (const auto& [key, value] : kv) {
    (void)value;
    if (!known.count(key))
      throw ValidationError("unknown config key '" + key + "'");
  }

  learner::TrainConfig c = defaults;
  c.epochs = get_int(kv, "epochs", c.epochs);
  c.batch_labeled = get_int(kv, "batch_labeled", c.batch_labeled);
  c.batch_unlabeled = get_int(kv, "batch_unlabeled", c.batch_unlabeled);
  c.hidden_dim = get_int(kv, "hidden", c.hidden_dim);
  c.proj_dim = get_int(kv, "proj_dim", c.proj_dim);
  c.clusters = get_int(kv, "k", c.clusters);
  c.epsilon = get_double(kv, "epsilon", c.epsilon);
  c.tau = get_double(kv, "tau", c.tau);
  c.gamma = get_double(kv, "gamma", c.gamma);
  c.lambda = get_double(kv, "lambda", c.lambda);
  c.temperature = get_double(kv, "temperature", c.temperature);
  c.contrastive_temp = get_double(kv, "contrastive_temp", c.contrastive_temp);
  c.sgd.base_lr = get_double(kv, "lr", c.sgd.base_lr);
  c.sgd.momentum = get_double(kv, "momentum", c.sgd.momentum);
  c.sgd.weight_decay = get_double(kv, "weight_decay", c.sgd.weight_decay);
  c.aug_sigma = get_double(kv, "aug_sigma", c.aug_sigma);
  c.aug_scale_min = get_double(kv, "aug_scale_min", c.aug_scale_min);
  c.aug_scale_max = get_double(kv, "aug_scale_max", c.aug_scale_max);
  c.sinkhorn_tol = get_double(kv, "sinkhorn_tol", c.sinkhorn_tol);
  c.sinkhorn_iters = get_int(kv, "sinkhorn_iters", c.sinkhorn_iters);
  c.sinkhorn_log_domain = get_bool(kv, "sinkhorn_log_domain", c.sinkhorn_log_domain);
  const std::string expo = get_string(kv, "kernel_exponent",
                                      c.kernel_exponent ==
                                              transport::KernelExponent::inverse_epsilon
                                          ? "inverse"
                                          : "literal");
  if (expo == "inverse")
    c.kernel_exponent = transport::KernelExponent::inverse_epsilon;
  else if (expo == "literal")
    c.kernel_exponent = transport::KernelExponent::literal_epsilon;
  else
    throw ValidationError("kernel_exponent must be 'inverse' or 'literal'");
  c.queue_batches = get_int(kv, "queue_batches", c.queue_batches);
  c.assign = learner::parse_assign_method(
      get_string(kv, "assign", c.assign == learner::AssignMethod::et       ? "et"
                               : c.assign == learner::AssignMethod::kmeans ? "kmeans"
                                                                           : "ce"));
  c.kmeans_iters = get_int(kv, "kmeans_iters", c.kmeans_iters);
  c.seed = get_u64(kv, "seed", c.seed);
  return c;
}

}  // namespace otood::config
