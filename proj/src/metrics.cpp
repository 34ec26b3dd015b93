#include "combo/metrics.hpp"

#include <sstream>

namespace combo::harness {

using nlohmann::json;

void MetricsReport::finalize() {
  int wins = 0;
  double steps = 0.0;
  for (const auto& e : episodes) {
    if (e.success) {
      ++wins;
      steps += e.steps;
    }
  }
  success_rate = episodes.empty() ? 0.0 : static_cast<double>(wins) / episodes.size();
  avg_steps_success = wins == 0 ? 0.0 : steps / wins;
}

long MetricsReport::total_guard_fires() const {
  long total = 0;
  for (const auto& e : episodes) total += e.guard_fires;
  return total;
}

json MetricsReport::to_json() const {
  json eps = json::array();
  for (const auto& e : episodes)
    eps.push_back({{"seed", e.seed},
                   {"success", e.success},
                   {"steps", e.steps},
                   {"guard_fires", e.guard_fires}});
  return json{{"success_rate", success_rate},
              {"avg_steps_success", avg_steps_success},
              {"episodes", eps},
              {"extra", extra}};
}

MetricsReport MetricsReport::from_json(const json& j) {
  MetricsReport r;
  r.success_rate = j.at("success_rate").get<double>();
  r.avg_steps_success = j.at("avg_steps_success").get<double>();
  for (const auto& e : j.at("episodes"))
    r.episodes.push_back({e.at("seed").get<std::uint64_t>(), e.at("success").get<bool>(),
                          e.at("steps").get<int>(), e.at("guard_fires").get<long>()});
  if (j.contains("extra")) r.extra = j.at("extra").get<std::map<std::string, double>>();
  return r;
}

std::string MetricsReport::summary_table(const std::string& title) const {
  std::ostringstream out;
  out << title << "\n";
  out << "  episodes: " << episodes.size() << "\n";
  out << "  success rate: " << success_rate << "\n";
  out << "  avg steps (successful): " << avg_steps_success << "\n";
  out << "  guard fires: " << total_guard_fires() << "\n";
  for (const auto& [k, v] : extra) out << "  " << k << ": " << v << "\n";
  return out.str();
}

}  // namespace combo::harness
