#include "concss/reports.hpp"

#include <charconv>
#include <fstream>

namespace concss {
namespace {

constexpr const char* kProsodyNames[kProsodyDim] = {"mean_log_f0", "std_log_f0", "voiced_ratio",
                                                    "mean_energy", "std_energy", "duration"};

std::string num(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

}  // namespace

Json to_json(const SatisfactionReport& r) {
  return Json{{"text", r.text}, {"audio", r.audio}, {"concat", r.concat}, {"triplets", r.triplets}};
}

Json to_json(const TrainReport& r) {
  Json j;
  j["seed"] = r.seed;
  j["batch_size"] = r.batch_size;
  j["inter_per_batch"] = r.inter_per_batch;
  j["intra_per_batch"] = r.intra_per_batch;
  j["steps"] = r.losses.size();
  if (!r.losses.empty()) {
    const auto& last = r.losses.back();
    j["final_loss"] = Json{{"total", last.total}, {"text", last.text}, {"audio", last.audio}};
  }
  Json sat = Json::array();
  for (const auto& s : r.satisfaction)
    sat.push_back(Json{{"step", s.step}, {"all", to_json(s.all)}, {"inter", to_json(s.inter)},
                       {"intra", to_json(s.intra)}});
  j["heldout_satisfaction"] = std::move(sat);
  if (!r.checkpoint.empty()) j["checkpoint"] = r.checkpoint;
  return j;
}

Json to_json(const ApmTrainReport& r) {
  Json j;
  j["seed"] = r.seed;
  j["examples"] = r.examples;
  j["steps"] = r.losses.size();
  j["train_mse"] = r.train_mse;
  if (!r.losses.empty()) j["final_batch_mse"] = r.losses.back();
  return j;
}

Json to_json(const ApmEvalReport& r) {
  Json j;
  j["mode"] = to_string(r.mode);
  j["targets"] = r.targets;
  j["mse"] = r.mse;
  j["log_f0_rmse"] = r.log_f0_rmse;
  j["log_f0_abs_error_std"] = r.log_f0_abs_error_std;
  Json dims;
  for (int k = 0; k < kProsodyDim; ++k) dims[kProsodyNames[k]] = r.rmse[static_cast<std::size_t>(k)];
  j["rmse"] = std::move(dims);
  return j;
}

Json to_json(const SensitivityReport& r) {
  Json j;
  j["targets"] = r.targets;
  j["n_fakes"] = r.n_fakes;
  j["mean_positive_distance"] = r.mean_positive_distance;
  j["mean_fake_distance"] = r.mean_fake_distance;
  j["gap"] = r.gap;
  j["gap_ci95"] = Json::array({r.gap_ci_low, r.gap_ci_high});
  j["gap_ci_excludes_zero"] = r.gap_ci_excludes_zero();
  j["nearest_real_accuracy"] = r.nearest_real_accuracy;
  return j;
}

Json to_json(const GradCheckReport& r) {
  return Json{{"max_relative_error", r.max_relative_error},
              {"worst_parameter", r.worst_parameter},
              {"parameters", r.parameters},
              {"skipped_batches", r.skipped_batches}};
}

void write_json(const std::filesystem::path& path, const Json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

void write_loss_csv(const std::filesystem::path& path, const TrainReport& r) {
  auto out = open_out(path);
  out << "step,total,text,audio\n";
  for (const auto& s : r.losses)
    out << s.step << ',' << num(s.total) << ',' << num(s.text) << ',' << num(s.audio) << '\n';
}

void write_satisfaction_csv(const std::filesystem::path& path, const TrainReport& r) {
  auto out = open_out(path);
  out << "step,class,text,audio,concat\n";
  for (const auto& s : r.satisfaction) {
    auto row = [&](const char* cls, const SatisfactionReport& x) {
      out << s.step << ',' << cls << ',' << num(x.text) << ',' << num(x.audio) << ',' << num(x.concat) << '\n';
    };
    row("all", s.all);
    row("inter_speaker", s.inter);
    row("intra_speaker", s.intra);
  }
}

void write_apm_csv(const std::filesystem::path& path, const std::vector<ApmEvalReport>& reports) {
  auto out = open_out(path);
  out << "mode,dim,rmse\n";
  for (const auto& r : reports)
    for (int k = 0; k < kProsodyDim; ++k)
      out << to_string(r.mode) << ',' << kProsodyNames[k] << ',' << num(r.rmse[static_cast<std::size_t>(k)])
          << '\n';
}

void write_projection_csv(const std::filesystem::path& path, const std::vector<ProjectedPoint>& points,
                          const Projection& projection) {
  if (static_cast<Eigen::Index>(points.size()) != projection.coords.rows())
    throw Error("projection has " + std::to_string(projection.coords.rows()) + " rows for " +
                std::to_string(points.size()) + " labels");
  auto out = open_out(path);
  out << "id,conversation_id,context_kind,x,y\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out << points[i].id << ',' << points[i].conversation_id << ',' << points[i].context_kind << ','
        << num(projection.coords(r, 0)) << ',' << num(projection.coords(r, 1)) << '\n';
  }
}

}  // namespace concss
