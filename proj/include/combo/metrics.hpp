#pragma once

#include <json.hpp>
#include <map>
#include <string>
#include <vector>

namespace combo::harness {

struct EpisodeOutcome {
  std::uint64_t seed = 0;
  bool success = false;
  int steps = 0;  // steps used when successful, horizon otherwise
  long guard_fires = 0;
};

struct MetricsReport {
  double success_rate = 0.0;
  double avg_steps_success = 0.0;  // over successful episodes only
  std::vector<EpisodeOutcome> episodes;
  std::map<std::string, double> extra;

  void finalize();  // recompute the summary fields from the outcomes
  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
  std::string summary_table(const std::string& title) const;
  long total_guard_fires() const;
};

}  // namespace combo::harness
