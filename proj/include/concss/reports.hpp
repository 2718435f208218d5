#ifndef CONCSS_REPORTS_HPP
#define CONCSS_REPORTS_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "concss/apm.hpp"
#include "concss/config.hpp"
#include "concss/metrics.hpp"
#include "concss/training.hpp"

namespace concss {

Json to_json(const SatisfactionReport& r);
Json to_json(const TrainReport& r);
Json to_json(const ApmTrainReport& r);
Json to_json(const ApmEvalReport& r);
Json to_json(const SensitivityReport& r);
Json to_json(const GradCheckReport& r);

/// Pretty-printed with a trailing newline. Doubles use the shortest
/// round-trip form, so equal values give equal bytes.
void write_json(const std::filesystem::path& path, const Json& j);

/// step,total,text,audio
void write_loss_csv(const std::filesystem::path& path, const TrainReport& r);

/// step,class,text,audio,concat
void write_satisfaction_csv(const std::filesystem::path& path, const TrainReport& r);

/// mode,dim,rmse with dims named after the ProsodyStats fields.
void write_apm_csv(const std::filesystem::path& path, const std::vector<ApmEvalReport>& reports);

struct ProjectedPoint {
  std::string id;
  std::string conversation_id;
  std::string context_kind;  ///< "real" or "fake"
};

/// id,conversation_id,context_kind,x,y
void write_projection_csv(const std::filesystem::path& path, const std::vector<ProjectedPoint>& points,
                          const Projection& projection);

}  // namespace concss

#endif  // CONCSS_REPORTS_HPP
