#include "apivr/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace apivr {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::set<std::string>& known,
                    const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!known.count(it.key())) {
      throw ConfigError("config: unknown key \"" + it.key() + "\" in " + where);
    }
  }
}

template <typename T>
void get_if(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config: key \"") + key + "\" has the wrong type");
  }
}

void get_uint64(const json& obj, const char* key, std::uint64_t& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_number_unsigned() && !v.is_number_integer()) {
    throw ConfigError(std::string("config: key \"") + key + "\" must be an integer");
  }
  if (v.is_number_integer() && v.get<std::int64_t>() < 0) {
    throw ConfigError(std::string("config: key \"") + key + "\" must be >= 0");
  }
  out = v.get<std::uint64_t>();
}

void parse_train(const json& obj, TrainConfig& cfg) {
  reject_unknown(obj,
                 {"alpha", "beta", "margin", "k", "b", "r", "r_prime",
                  "batch_size", "generator_steps", "outer_iterations",
                  "learning_rate", "ridge", "seed", "hidden_activation",
                  "preset", "reuse_generator_batch", "early_stop",
                  "early_stop_tol", "early_stop_patience", "wo_tl", "wo_al",
                  "wo_cl", "wo_ga", "wo_gmil", "wo_graph"},
                 "\"train\"");
  if (obj.contains("preset")) {
    cfg.loss_preset = obj.at("preset").get<std::string>();
    apply_loss_preset(cfg);
  }
  get_if(obj, "alpha", cfg.alpha);
  get_if(obj, "beta", cfg.beta);
  get_if(obj, "margin", cfg.margin);
  get_if(obj, "k", cfg.k);
  get_if(obj, "b", cfg.b);
  get_if(obj, "r", cfg.r);
  get_if(obj, "r_prime", cfg.r_prime);
  get_if(obj, "batch_size", cfg.batch_size);
  get_if(obj, "generator_steps", cfg.generator_steps);
  get_if(obj, "outer_iterations", cfg.outer_iterations);
  get_if(obj, "learning_rate", cfg.learning_rate);
  get_if(obj, "ridge", cfg.ridge);
  get_uint64(obj, "seed", cfg.seed);
  if (obj.contains("hidden_activation")) {
    const std::string act = obj.at("hidden_activation").get<std::string>();
    if (act == "tanh") {
      cfg.hidden_activation = Activation::Tanh;
    } else if (act == "linear") {
      cfg.hidden_activation = Activation::Linear;
    } else {
      throw ConfigError("config: hidden_activation must be \"tanh\" or \"linear\"");
    }
  }
  get_if(obj, "reuse_generator_batch", cfg.reuse_generator_batch);
  get_if(obj, "early_stop", cfg.early_stop);
  get_if(obj, "early_stop_tol", cfg.early_stop_tol);
  get_if(obj, "early_stop_patience", cfg.early_stop_patience);
  get_if(obj, "wo_tl", cfg.wo_tl);
  get_if(obj, "wo_al", cfg.wo_al);
  get_if(obj, "wo_cl", cfg.wo_cl);
  get_if(obj, "wo_ga", cfg.wo_ga);
  get_if(obj, "wo_gmil", cfg.wo_gmil);
  get_if(obj, "wo_graph", cfg.wo_graph);
}

void parse_synthetic(const json& obj, SyntheticConfig& cfg) {
  reject_unknown(obj,
                 {"categories", "train_per_category", "test_per_category", "k",
                  "clean_per_bag", "d1", "d2", "noise_sigma",
                  "background_scale", "seed"},
                 "\"synthetic\"");
  get_if(obj, "categories", cfg.C);
  get_if(obj, "train_per_category", cfg.train_per_category);
  get_if(obj, "test_per_category", cfg.test_per_category);
  get_if(obj, "k", cfg.k);
  get_if(obj, "clean_per_bag", cfg.clean_per_bag);
  get_if(obj, "d1", cfg.d1);
  get_if(obj, "d2", cfg.d2);
  get_if(obj, "noise_sigma", cfg.noise_sigma);
  get_if(obj, "background_scale", cfg.background_scale);
  get_uint64(obj, "seed", cfg.seed);
}

void validate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.C < 2) throw ConfigError("config: synthetic.categories must be >= 2");
  if (cfg.k < 1) throw ConfigError("config: synthetic.k must be >= 1");
  if (cfg.clean_per_bag < 1 || cfg.clean_per_bag > cfg.k) {
    throw ConfigError("config: need 1 <= synthetic.clean_per_bag <= synthetic.k");
  }
  if (cfg.d1 < 1 || cfg.d2 < 1) throw ConfigError("config: synthetic dims must be >= 1");
  if (cfg.train_per_category < 0 || cfg.test_per_category < 0 ||
      cfg.train_per_category + cfg.test_per_category < 1) {
    throw ConfigError("config: synthetic pair counts are invalid");
  }
  if (cfg.noise_sigma < 0.0) throw ConfigError("config: synthetic.noise_sigma must be >= 0");
  if (cfg.background_scale <= 0.0) {
    throw ConfigError("config: synthetic.background_scale must be > 0");
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text, const std::string& origin) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError("config: invalid JSON in " + origin + ": " + e.what());
  }
  if (!root.is_object()) throw ConfigError("config: top level must be an object");
  reject_unknown(root, {"train", "synthetic", "paths"}, origin);
  RunConfig cfg;
  try {
    if (root.contains("train")) parse_train(root.at("train"), cfg.train);
    if (root.contains("synthetic")) parse_synthetic(root.at("synthetic"), cfg.synthetic);
    if (root.contains("paths")) {
      const json& paths = root.at("paths");
      reject_unknown(paths, {"data", "out"}, "\"paths\"");
      get_if(paths, "data", cfg.data_path);
      get_if(paths, "out", cfg.out_path);
    }
  } catch (const json::exception& e) {
    throw ConfigError("config: malformed " + origin + ": " + e.what());
  }
  validate_config(cfg.train);
  validate_synthetic(cfg.synthetic);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path);
}

}  // namespace apivr
