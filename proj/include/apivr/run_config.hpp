#ifndef APIVR_RUN_CONFIG_HPP_
#define APIVR_RUN_CONFIG_HPP_

#include <string>

#include "apivr/data.hpp"
#include "apivr/training.hpp"

namespace apivr {

// JSON run configuration with three optional sections: "train" (TrainConfig
// fields), "synthetic" (SyntheticConfig fields) and "paths" ("data", "out").
// Unknown keys are rejected and every value is validated before any work
// starts. A "preset" key inside "train" applies the named (alpha, beta) pair
// first; explicit alpha/beta keys in the same file override it.
struct RunConfig {
  TrainConfig train;
  SyntheticConfig synthetic;
  std::string data_path;
  std::string out_path;
};

RunConfig parse_run_config(const std::string& json_text, const std::string& origin);
RunConfig load_run_config(const std::string& path);

}  // namespace apivr

#endif  // APIVR_RUN_CONFIG_HPP_
