#ifndef CONCSS_CONFIG_HPP
#define CONCSS_CONFIG_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "concss/apm.hpp"
#include "concss/corpus.hpp"
#include "concss/features.hpp"
#include "concss/training.hpp"

namespace concss {

using Json = nlohmann::ordered_json;

/// Every setting of a pipeline run. All fields have defaults; a config file
/// only needs the keys it changes.
struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out_dir = "out";
  int workers = 1;
  SynthConfig corpus;
  FeatureParams features;
  std::array<double, 3> split{0.6, 0.2, 0.2};  ///< train / val / test
  LossConfig loss;
  bool with_apm = false;
  ApmConfig apm;
  int n_fakes = 5;
  double grad_eps = 1e-4;
  int grad_batch_size = 4;

  void validate() const;
};

Json to_json(const RunConfig& cfg);

/// Overlays `j` on `base`. Unknown keys and type mismatches are errors.
RunConfig from_json(const Json& j, RunConfig base = {});

RunConfig load_config(const std::filesystem::path& path);

/// Train conversations plus the held-out pool (validation and test parts
/// together), partitioned by whole conversation.
struct Partition {
  Corpus train;
  Corpus heldout;
};

Partition partition(const Corpus& corpus, const RunConfig& cfg);

}  // namespace concss

#endif  // CONCSS_CONFIG_HPP
