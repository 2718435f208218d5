#ifndef CONCSS_CLI_HPP
#define CONCSS_CLI_HPP

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "concss/config.hpp"

namespace concss {

/// Entry point of the `concss` tool. Returns the process exit code; errors
/// are reported as one line on `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct MetricsResult {
  double mcd_db = 0.0;
  std::optional<double> log_f0_rmse;  ///< empty when no aligned pair is voiced in both
  long ref_frames = 0;
  long hyp_frames = 0;
};

/// MCD and log-F0 RMSE between two WAV files, aligned by DTW on c1..c_{C-1}.
MetricsResult compare_wavs(const std::filesystem::path& ref, const std::filesystem::path& hyp,
                           const FeatureParams& params);

}  // namespace concss

#endif  // CONCSS_CLI_HPP
