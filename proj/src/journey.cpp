#include "callseq/journey.hpp"

#include <algorithm>
#include <unordered_map>

#include "callseq/errors.hpp"

namespace callseq {

std::vector<Journey> build_journeys(const std::vector<Event>& events, std::size_t max_len,
                                    std::int64_t reference_time) {
  if (max_len < 1) throw ConfigError("build_journeys: max_len must be >= 1");
  std::vector<Journey> journeys;
  std::unordered_map<std::string, std::size_t> index;
  for (const Event& ev : events) {
    auto [it, fresh] = index.emplace(ev.customer_id, journeys.size());
    if (fresh) journeys.push_back({ev.customer_id, {}, reference_time});
    journeys[it->second].events.push_back(ev);
  }
  for (Journey& j : journeys) {
    std::stable_sort(j.events.begin(), j.events.end(),
                     [](const Event& a, const Event& b) { return a.action_time < b.action_time; });
    if (j.events.size() > max_len) {
      j.events.erase(j.events.begin(), j.events.end() - static_cast<std::ptrdiff_t>(max_len));
    }
  }
  return journeys;
}

}  // namespace callseq
