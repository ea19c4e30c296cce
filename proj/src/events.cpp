#include "callseq/events.hpp"

#include <json.hpp>

#include "callseq/errors.hpp"

namespace callseq {

namespace {

using nlohmann::json;

// Scalars arrive as strings or JSON numbers; both are kept as text.
std::string scalar_to_string(const json& v, const std::string& key) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number() || v.is_boolean()) return v.dump();
  throw std::runtime_error("field '" + key + "' is not a scalar");
}

Event parse_one(const json& j) {
  Event ev;
  for (const char* key : {"customer_id", "action_time", "action_type",
                          "channel_type", "object_type", "event_type"}) {
    if (!j.contains(key)) throw std::runtime_error(std::string("missing field '") + key + "'");
  }
  ev.customer_id = j.at("customer_id").get<std::string>();
  if (ev.customer_id.empty()) throw std::runtime_error("customer_id is empty");
  const json& t = j.at("action_time");
  if (!t.is_number_integer() && !t.is_number_unsigned()) {
    throw std::runtime_error("action_time is not an integer");
  }
  ev.action_time = t.get<std::int64_t>();
  if (ev.action_time <= 0) throw std::runtime_error("action_time is not positive");
  ev.action_type = scalar_to_string(j.at("action_type"), "action_type");
  ev.channel_type = scalar_to_string(j.at("channel_type"), "channel_type");
  ev.object_type = scalar_to_string(j.at("object_type"), "object_type");
  ev.event_type = scalar_to_string(j.at("event_type"), "event_type");
  if (j.contains("attributes")) {
    const json& attrs = j.at("attributes");
    if (!attrs.is_object()) throw std::runtime_error("attributes is not an object");
    for (auto it = attrs.begin(); it != attrs.end(); ++it) {
      ev.attributes[it.key()] = scalar_to_string(it.value(), it.key());
    }
  }
  return ev;
}

}  // namespace

const std::string* event_field(const Event& ev, const std::string& name) {
  if (name == "action_type") return &ev.action_type;
  if (name == "channel_type") return &ev.channel_type;
  if (name == "object_type") return &ev.object_type;
  if (name == "event_type") return &ev.event_type;
  auto it = ev.attributes.find(name);
  return it == ev.attributes.end() ? nullptr : &it->second;
}

ParseResult parse_events(std::istream& in, const ParseOptions& opts) {
  if (!in.good()) throw ConfigError("parse_events: unreadable input stream");
  ParseResult result;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++result.lines;
    try {
      result.events.push_back(parse_one(json::parse(line)));
    } catch (const std::exception& e) {
      result.errors.push_back("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (in.bad()) throw ConfigError("parse_events: stream failed mid-read");
  if (result.lines > 0) {
    double rate = static_cast<double>(result.errors.size()) / static_cast<double>(result.lines);
    if (rate > opts.max_error_rate) {
      throw ConfigError("parse_events: error rate " + std::to_string(rate) +
                        " exceeds limit " + std::to_string(opts.max_error_rate));
    }
  }
  return result;
}

}  // namespace callseq
