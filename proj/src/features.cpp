#include "callseq/features.hpp"

#include <fstream>

#include <json.hpp>

#include "callseq/errors.hpp"

namespace callseq {

using nlohmann::json;

std::string feature_kind_name(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::kRecencyFlag: return "recency_flag";
    case FeatureKind::kOneHotCross: return "one_hot_cross";
    case FeatureKind::kUniqueCount: return "unique_count";
  }
  throw ConfigError("feature_kind_name: unknown kind");
}

FeatureKind feature_kind_from_name(const std::string& name) {
  if (name == "recency_flag") return FeatureKind::kRecencyFlag;
  if (name == "one_hot_cross") return FeatureKind::kOneHotCross;
  if (name == "unique_count") return FeatureKind::kUniqueCount;
  throw ConfigError("unknown feature kind '" + name + "'");
}

void validate_schema(const FeatureSchema& schema, const std::set<std::string>& attribute_keys) {
  std::set<std::string> names;
  for (const FeatureDescriptor& f : schema.features) {
    if (f.name.empty()) throw ConfigError("schema: feature with empty name");
    if (!names.insert(f.name).second) throw ConfigError("schema: duplicate feature '" + f.name + "'");
    bool builtin = f.field == "action_type" || f.field == "channel_type" ||
                   f.field == "object_type" || f.field == "event_type";
    if (!f.field.empty() && !builtin && attribute_keys.count(f.field) == 0) {
      throw ConfigError("schema: feature '" + f.name + "' references unknown field '" + f.field + "'");
    }
    switch (f.kind) {
      case FeatureKind::kRecencyFlag:
        if (!(f.window_days > 0.0)) {
          throw ConfigError("schema: recency feature '" + f.name + "' needs a positive window");
        }
        break;
      case FeatureKind::kOneHotCross:
        if (f.field.empty() || f.value.empty()) {
          throw ConfigError("schema: cross feature '" + f.name + "' needs a field and value");
        }
        if (!(f.window_days > 0.0)) {
          throw ConfigError("schema: cross feature '" + f.name + "' needs a positive window");
        }
        break;
      case FeatureKind::kUniqueCount:
        if (f.field.empty()) {
          throw ConfigError("schema: unique-count feature '" + f.name + "' needs a field");
        }
        break;
    }
  }
}

namespace {

bool event_matches(const Event& ev, const FeatureDescriptor& f) {
  if (f.field.empty()) return true;
  const std::string* v = event_field(ev, f.field);
  if (v == nullptr) return false;
  return f.value.empty() || *v == f.value;
}

bool within_window(const Event& ev, const Journey& j, double window_days) {
  if (window_days <= 0.0) return true;
  double age_seconds = static_cast<double>(j.reference_time - ev.action_time);
  return age_seconds <= window_days * 86400.0;
}

}  // namespace

std::vector<double> extract_nonseq(const Journey& journey, const FeatureSchema& schema) {
  if (journey.events.empty()) throw ConfigError("extract_nonseq: empty journey");
  std::vector<double> out;
  out.reserve(schema.features.size());
  for (const FeatureDescriptor& f : schema.features) {
    double slot = 0.0;
    switch (f.kind) {
      case FeatureKind::kRecencyFlag: {
        const Event* latest = nullptr;
        for (const Event& ev : journey.events) {
          if (event_matches(ev, f)) latest = &ev;  // events ascend in time
        }
        slot = (latest != nullptr && within_window(*latest, journey, f.window_days)) ? 1.0 : 0.0;
        break;
      }
      case FeatureKind::kOneHotCross: {
        for (const Event& ev : journey.events) {
          if (event_matches(ev, f) && within_window(ev, journey, f.window_days)) {
            slot = 1.0;
            break;
          }
        }
        break;
      }
      case FeatureKind::kUniqueCount: {
        std::set<std::string> distinct;
        for (const Event& ev : journey.events) {
          if (!within_window(ev, journey, f.window_days)) continue;
          const std::string* v = event_field(ev, f.field);
          if (v != nullptr) distinct.insert(*v);
        }
        slot = static_cast<double>(distinct.size());
        break;
      }
    }
    out.push_back(slot);
  }
  return out;
}

std::uint64_t schema_hash(const FeatureSchema& schema) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a offset basis
  auto mix = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    h ^= 0x1f;
    h *= 1099511628211ULL;
  };
  for (const FeatureDescriptor& f : schema.features) {
    mix(f.name);
    mix(feature_kind_name(f.kind));
    mix(f.field);
    mix(f.value);
    mix(std::to_string(f.window_days));
  }
  return h;
}

void save_schema(const std::string& path, const FeatureSchema& schema) {
  json j;
  j["format_version"] = 1;
  j["features"] = json::array();
  for (const FeatureDescriptor& f : schema.features) {
    json d;
    d["name"] = f.name;
    d["kind"] = feature_kind_name(f.kind);
    d["field"] = f.field;
    d["value"] = f.value;
    d["window_days"] = f.window_days;
    j["features"].push_back(std::move(d));
  }
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write schema file: " + path);
  out << j.dump(2) << '\n';
}

FeatureSchema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read schema file: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("schema file " + path + ": " + e.what());
  }
  if (j.value("format_version", 0) != 1) {
    throw ConfigError("schema file " + path + ": unsupported format_version");
  }
  FeatureSchema schema;
  for (const json& d : j.at("features")) {
    FeatureDescriptor f;
    f.name = d.at("name").get<std::string>();
    f.kind = feature_kind_from_name(d.at("kind").get<std::string>());
    f.field = d.value("field", std::string());
    f.value = d.value("value", std::string());
    f.window_days = d.value("window_days", 0.0);
    schema.features.push_back(std::move(f));
  }
  return schema;
}

}  // namespace callseq
