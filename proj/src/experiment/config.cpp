// Copyright 2026 The fedshield Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fedshield/experiment/config.hpp"

#include <fstream>
#include <set>

#include "fedshield/errors.hpp"
#include "fedshield/io/csv.hpp"

namespace fedshield::experiment {
namespace {

using nlohmann::json;

const std::set<std::string> kDatasets = {"synthetic", "cifar10", "bloodmnist"};

json grid_values() { return json::array({1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0}); }

json bido_pairs(const std::string& dataset) {
  std::vector<std::pair<double, double>> pairs;
  if (dataset == "bloodmnist") {
    pairs = {{2.0, 10.0}, {1.0, 10.0}, {0.5, 10.0}, {0.1, 3.0}, {0.5, 20.0}, {0.1, 5.0}};
  } else {
    pairs = {{1.0, 5.0}, {0.5, 5.0}, {0.1, 2.0}, {0.1, 3.0}, {0.1, 4.0}, {0.1, 5.0}};
  }
  json out = json::array();
  for (const auto& [x, y] : pairs) out.push_back({{"lambda_x", x}, {"lambda_y", y}});
  return out;
}

json default_sweep(const std::string& dataset, const std::string& defense) {
  if (defense == "proposed_fixed" || defense == "proposed_learnable") {
    return {{"parameter", "defense.noise.mu"}, {"values", grid_values()}};
  }
  if (defense == "dp_sgd") return {{"parameter", "defense.dp.sigma"}, {"values", grid_values()}};
  if (defense == "bido") return {{"parameter", "defense.bido"}, {"values", bido_pairs(dataset)}};
  return {{"parameter", ""}, {"values", json::array()}};
}

struct Schedule {
  double lr;
  int epochs;
};

// Client learning rate and training epochs of the paper profile.
Schedule paper_schedule(const std::string& dataset, const std::string& defense) {
  const bool blood = dataset == "bloodmnist";
  if (defense == "dp_sgd") return blood ? Schedule{1e-1, 200} : Schedule{1e-2, 150};
  if (defense == "proposed_fixed" || defense == "proposed_learnable") {
    return blood ? Schedule{1e-3, 400} : Schedule{1e-4, 400};
  }
  return blood ? Schedule{1e-3, 200} : Schedule{1e-4, 200};
}

std::string type_name(const json& v) {
  if (v.is_null()) return "null";
  if (v.is_boolean()) return "boolean";
  if (v.is_number_integer()) return "integer";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  return "object";
}

bool type_matches(const json& expected, const json& actual) {
  if (expected.is_null()) return actual.is_null() || actual.is_number();
  if (expected.is_number_integer()) return actual.is_number_integer();
  if (expected.is_number()) return actual.is_number();
  return expected.type() == actual.type();
}

std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

// Merges `user` into `base`; every user key must exist in `base` with a
// compatible type.
void merge_checked(json& base, const json& user, const std::string& prefix) {
  if (!user.is_object()) {
    throw ConfigError(prefix.empty() ? "<root>" : prefix, "expected an object");
  }
  for (const auto& [key, value] : user.items()) {
    const std::string path = join(prefix, key);
    if (!base.contains(key)) throw ConfigError(path, "unknown field");
    json& slot = base[key];
    if (slot.is_object()) {
      merge_checked(slot, value, path);
      continue;
    }
    if (!type_matches(slot, value)) {
      throw ConfigError(path, "expected " + type_name(slot) + ", got " + type_name(value));
    }
    slot = value;
  }
}

std::string string_or(const json& user, const char* section, const char* key,
                      const std::string& fallback) {
  if (!user.is_object() || !user.contains(section)) return fallback;
  const json& s = user.at(section);
  if (!s.is_object() || !s.contains(key)) return fallback;
  if (!s.at(key).is_string()) {
    throw ConfigError(std::string(section) + "." + key, "expected string");
  }
  return s.at(key).get<std::string>();
}

template <class T>
T read(const json& doc, const std::string& path) {
  try {
    return get_path(doc, path).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path, e.what());
  }
}

std::int64_t read_nonneg(const json& doc, const std::string& path) {
  const auto v = read<std::int64_t>(doc, path);
  if (v < 0) throw ConfigError(path, "must be >= 0");
  return v;
}

}  // namespace

const char* profile_name(Profile profile) {
  return profile == Profile::kDesk ? "desk" : "paper";
}

Profile parse_profile(const std::string& name) {
  if (name == "desk") return Profile::kDesk;
  if (name == "paper") return Profile::kPaper;
  throw ConfigError("profile", "expected desk or paper, got '" + name + "'");
}

json default_config(Profile profile, const std::string& dataset, const std::string& defense) {
  if (!kDatasets.count(dataset)) throw ConfigError("dataset.name", "unknown dataset '" + dataset + "'");
  defense::parse_defense(defense);
  const bool desk = profile == Profile::kDesk;
  const bool synthetic = dataset == "synthetic";
  const bool dp = defense == "dp_sgd";
  const bool blood = dataset == "bloodmnist";

  json doc;
  doc["profile"] = profile_name(profile);
  doc["seed"] = 0;
  doc["threads"] = 1;
  doc["output_dir"] = "runs/" + dataset + "-" + defense;

  json ds;
  ds["name"] = dataset;
  ds["root"] = "";
  ds["max_train"] = desk ? (synthetic ? 512 : 2000) : 0;
  ds["max_test"] = desk ? (synthetic ? 256 : 500) : 0;
  ds["synthetic"] = {{"channels", 3}, {"height", desk ? 16 : 32}, {"width", desk ? 16 : 32},
                     {"num_classes", 8}};
  if (!desk && synthetic) {
    ds["max_train"] = 2000;
    ds["max_test"] = 500;
  }
  doc["dataset"] = ds;

  doc["arch"] = {{"width_divisor", desk ? (synthetic ? 4 : 8) : 1}, {"final_deconv_kernel", 0}};

  json fed;
  fed["num_clients"] = 4;
  fed["local_epochs"] = 1;
  fed["partition"] = "iid_shards";
  fed["explicit_partition"] = json::array();
  fed["victim_id"] = 0;
  fed["share_private_groups"] = false;
  Schedule schedule{};
  if (desk) {
    schedule = {dp ? (blood ? 1e-1 : 1e-2) : 1e-3, synthetic ? 10 : 30};
    fed["batch_size"] = 32;
  } else {
    schedule = paper_schedule(dataset, defense);
    fed["batch_size"] = 128;
  }
  fed["rounds"] = schedule.epochs;
  fed["client_lr"] = schedule.lr;
  doc["federation"] = fed;

  const Schedule proposed = desk ? Schedule{1e-3, 5} : paper_schedule(dataset, "proposed_learnable");
  json def;
  def["kind"] = defense;
  def["alpha"] = 1.0;
  def["noise"] = {{"mu", 1.0}, {"sigma", 0.1}, {"file", ""}};
  def["dp"] = {{"sigma", 0.1}, {"clip_norm", nullptr}};
  def["bido"] = {{"lambda_x", blood ? 2.0 : 1.0}, {"lambda_y", blood ? 10.0 : 5.0}};
  def["pretrain"] = {{"epochs", proposed.epochs}, {"lr", proposed.lr},
                     {"batch_size", desk ? 32 : 128}};
  def["decoder_only_first_step"] = false;
  def["reduction"] = "per_sample";
  doc["defense"] = def;

  json atk;
  atk["enabled"] = true;
  atk["round"] = 0;
  atk["batch_size"] = 8;
  atk["local_epochs"] = 5;
  atk["optimizer"] = "sgd";
  atk["victim_lr"] = desk ? 1e-3 : (blood ? 1e-3 : 1e-4);
  atk["iterations"] = desk ? 200 : 4000;
  atk["lr"] = blood ? 1e-2 : 1.0;
  atk["tv_weight"] = 1e-4;
  atk["restarts"] = 1;
  atk["init"] = "gaussian";
  atk["labels"] = "known";
  atk["signed_gradient"] = true;
  atk["lr_decay"] = true;
  doc["attack"] = atk;

  doc["eval"] = {{"with_noise", true}, {"probe", true}, {"clean_checkpoint", ""}};
  doc["sweep"] = default_sweep(dataset, defense);
  return doc;
}

json load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), "cannot open config file");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string(), std::string("invalid JSON: ") + e.what());
  }
}

json resolve_config(const json& user, const Overrides& overrides) {
  if (!user.is_null() && !user.is_object()) throw ConfigError("<root>", "expected an object");
  Profile profile = Profile::kDesk;
  if (overrides.profile) {
    profile = *overrides.profile;
  } else if (user.is_object() && user.contains("profile")) {
    if (!user.at("profile").is_string()) throw ConfigError("profile", "expected string");
    profile = parse_profile(user.at("profile").get<std::string>());
  }
  const std::string dataset =
      string_or(user, "dataset", "name", profile == Profile::kDesk ? "synthetic" : "cifar10");
  const std::string defense = string_or(user, "defense", "kind", "none");
  json doc = default_config(profile, dataset, defense);
  if (user.is_object()) {
    json trimmed = user;
    trimmed.erase("profile");
    merge_checked(doc, trimmed, "");
  }
  if (overrides.seed) doc["seed"] = *overrides.seed;
  if (overrides.output_dir) doc["output_dir"] = *overrides.output_dir;
  if (overrides.threads) doc["threads"] = *overrides.threads;
  parse_config(doc);
  return doc;
}

void set_path(json& doc, const std::string& path, const json& value) {
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (!node->is_object() || !node->contains(key)) throw ConfigError(path, "unknown field");
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) {
    merge_checked(*node, value, path);
  } else {
    if (!type_matches(*node, value)) {
      throw ConfigError(path, "expected " + type_name(*node) + ", got " + type_name(value));
    }
    *node = value;
  }
}

const json& get_path(const json& doc, const std::string& path) {
  const json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (!node->is_object() || !node->contains(key)) throw ConfigError(path, "missing field");
    node = &node->at(key);
    if (dot == std::string::npos) return *node;
    start = dot + 1;
  }
}

ExperimentConfig parse_config(const json& doc) {
  ExperimentConfig c;
  c.profile = parse_profile(read<std::string>(doc, "profile"));
  c.seed = read<std::uint64_t>(doc, "seed");
  c.threads = read<int>(doc, "threads");
  if (c.threads < 1) throw ConfigError("threads", "must be at least 1");
  c.output_dir = read<std::string>(doc, "output_dir");

  c.dataset.name = read<std::string>(doc, "dataset.name");
  if (!kDatasets.count(c.dataset.name)) {
    throw ConfigError("dataset.name", "unknown dataset '" + c.dataset.name + "'");
  }
  c.dataset.root = read<std::string>(doc, "dataset.root");
  if (c.dataset.name != "synthetic" && c.dataset.root.empty()) {
    throw ConfigError("dataset.root", "required for " + c.dataset.name);
  }
  c.dataset.max_train = read_nonneg(doc, "dataset.max_train");
  c.dataset.max_test = read_nonneg(doc, "dataset.max_test");
  c.dataset.channels = read<std::int64_t>(doc, "dataset.synthetic.channels");
  c.dataset.height = read<std::int64_t>(doc, "dataset.synthetic.height");
  c.dataset.width = read<std::int64_t>(doc, "dataset.synthetic.width");
  c.dataset.num_classes = read<int>(doc, "dataset.synthetic.num_classes");
  if (c.dataset.name == "synthetic") {
    if (c.dataset.channels < 1 || c.dataset.height < 1 || c.dataset.width < 1) {
      throw ConfigError("dataset.synthetic", "dimensions must be positive");
    }
    if (c.dataset.num_classes < 2) {
      throw ConfigError("dataset.synthetic.num_classes", "must be at least 2");
    }
    if (c.dataset.max_train < c.dataset.num_classes || c.dataset.max_test < 1) {
      throw ConfigError("dataset.max_train", "synthetic splits need max_train >= num_classes "
                                             "and max_test >= 1");
    }
  }

  c.width_divisor = read<int>(doc, "arch.width_divisor");
  if (c.width_divisor < 1) throw ConfigError("arch.width_divisor", "must be at least 1");
  c.final_deconv_kernel = read<int>(doc, "arch.final_deconv_kernel");
  if (c.final_deconv_kernel < 0) throw ConfigError("arch.final_deconv_kernel", "must be >= 0");

  auto& d = c.defense;
  d.kind = defense::parse_defense(read<std::string>(doc, "defense.kind"));
  d.alpha = read<double>(doc, "defense.alpha");
  d.noise_mu = read<double>(doc, "defense.noise.mu");
  d.noise_sigma = read<double>(doc, "defense.noise.sigma");
  c.noise_file = read<std::string>(doc, "defense.noise.file");
  d.dp.sigma = read<double>(doc, "defense.dp.sigma");
  const json& clip = get_path(doc, "defense.dp.clip_norm");
  if (!clip.is_null()) d.dp.clip_norm = clip.get<double>();
  d.bido.lambda_x = read<double>(doc, "defense.bido.lambda_x");
  d.bido.lambda_y = read<double>(doc, "defense.bido.lambda_y");
  d.pretrain.epochs = read<int>(doc, "defense.pretrain.epochs");
  d.pretrain.lr = read<double>(doc, "defense.pretrain.lr");
  d.pretrain.batch_size = read<std::int64_t>(doc, "defense.pretrain.batch_size");
  if (d.pretrain.epochs < 0) throw ConfigError("defense.pretrain.epochs", "must be >= 0");
  if (!(d.pretrain.lr > 0.0)) throw ConfigError("defense.pretrain.lr", "must be positive");
  if (d.pretrain.batch_size < 1) throw ConfigError("defense.pretrain.batch_size", "must be positive");
  d.decoder_only_first_step = read<bool>(doc, "defense.decoder_only_first_step");
  const auto reduction = read<std::string>(doc, "defense.reduction");
  if (reduction == "per_sample") {
    d.reduction = objectives::CorrelationReduction::kPerSample;
  } else if (reduction == "flattened") {
    d.reduction = objectives::CorrelationReduction::kFlattened;
  } else {
    throw ConfigError("defense.reduction", "expected per_sample or flattened");
  }
  d.validate();

  auto& f = c.federation;
  f.num_clients = read<int>(doc, "federation.num_clients");
  f.rounds = read<int>(doc, "federation.rounds");
  f.local_epochs = read<int>(doc, "federation.local_epochs");
  f.batch_size = read<std::int64_t>(doc, "federation.batch_size");
  f.client_lr = read<double>(doc, "federation.client_lr");
  f.partition = fl::parse_partition(read<std::string>(doc, "federation.partition"));
  f.explicit_partition =
      read<std::vector<std::vector<std::size_t>>>(doc, "federation.explicit_partition");
  if (f.partition == fl::PartitionScheme::kExplicit && f.explicit_partition.empty()) {
    throw ConfigError("federation.explicit_partition", "required when partition is explicit");
  }
  f.victim_id = read<int>(doc, "federation.victim_id");
  f.share_private_groups = read<bool>(doc, "federation.share_private_groups");
  f.seed = c.seed;
  f.threads = c.threads;

  c.attack.enabled = read<bool>(doc, "attack.enabled");
  c.attack.round = read<int>(doc, "attack.round");
  f.attacked_rounds.clear();
  if (c.attack.enabled) f.attacked_rounds.push_back(c.attack.round);
  f.attacked.batch_size = read<std::int64_t>(doc, "attack.batch_size");
  f.attacked.local_epochs = read<int>(doc, "attack.local_epochs");
  try {
    f.attacked.optimizer = optim::parse_optimizer(read<std::string>(doc, "attack.optimizer"));
  } catch (const Error& e) {
    throw ConfigError("attack.optimizer", e.what());
  }
  f.attacked.lr = read<double>(doc, "attack.victim_lr");

  c.eval.with_noise = read<bool>(doc, "eval.with_noise");
  c.eval.probe = read<bool>(doc, "eval.probe");
  c.eval.clean_checkpoint = read<std::string>(doc, "eval.clean_checkpoint");
  f.eval_with_noise = c.eval.with_noise;
  f.validate();

  auto& a = c.attack.config;
  a.iterations = read<int>(doc, "attack.iterations");
  a.lr = read<double>(doc, "attack.lr");
  a.tv_weight = read<double>(doc, "attack.tv_weight");
  a.restarts = read<int>(doc, "attack.restarts");
  a.init = attack::parse_init(read<std::string>(doc, "attack.init"));
  a.label_mode = attack::parse_label_mode(read<std::string>(doc, "attack.labels"));
  a.batch_size = f.attacked.batch_size;
  a.signed_gradient = read<bool>(doc, "attack.signed_gradient");
  a.lr_decay = read<bool>(doc, "attack.lr_decay");
  a.threads = c.threads;
  a.validate();

  c.sweep.parameter = read<std::string>(doc, "sweep.parameter");
  const json& values = get_path(doc, "sweep.values");
  for (const auto& v : values) c.sweep.values.push_back(v);
  return c;
}

std::string hyperparameter_label(const defense::DefenseConfig& config) {
  switch (config.kind) {
    case defense::DefenseKind::kProposedFixed:
    case defense::DefenseKind::kProposedLearnable:
      return io::format_number(config.noise_mu);
    case defense::DefenseKind::kDpSgd:
      return io::format_number(config.dp.sigma);
    case defense::DefenseKind::kBido:
      return io::format_number(config.bido.lambda_x) + ":" +
             io::format_number(config.bido.lambda_y);
    case defense::DefenseKind::kNone:
      break;
  }
  return "-";
}

}  // namespace fedshield::experiment
