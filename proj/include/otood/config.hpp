#ifndef OTOOD_CONFIG_HPP_
#define OTOOD_CONFIG_HPP_

#include <map>
#include <string>

#include "otood/learner.hpp"

namespace otood::config {

// Flat key=value text; '#' starts a comment, blank lines are ignored.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_file(const std::string& path);

double get_double(const KeyValues& kv, const std::string& key, double fallback);
int get_int(const KeyValues& kv, const std::string& key, int fallback);
std::uint64_t get_u64(const KeyValues& kv, const std::string& key,
                      std::uint64_t fallback);
bool get_bool(const KeyValues& kv, const std::string& key, bool fallback);
std::string get_string(const KeyValues& kv, const std::string& key,
                       const std::string& fallback);

// Applies recognized keys on top of the given defaults; unknown keys are
// rejected so typos cannot silently fall back.
learner::TrainConfig train_config_from(const KeyValues& kv,
                                       const learner::TrainConfig& defaults);

}  // namespace otood::config

#endif  // OTOOD_CONFIG_HPP_
