#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "callseq/journey.hpp"

namespace callseq {

enum class FeatureKind { kRecencyFlag, kOneHotCross, kUniqueCount };

std::string feature_kind_name(FeatureKind kind);
FeatureKind feature_kind_from_name(const std::string& name);

// One slot of the nonsequential vector.
//   recency_flag:  1 if the latest matching event (field == value, or any
//                  event when field is empty) lies within window_days of the
//                  journey's reference time, else 0.
//   one_hot_cross: 1 if any event within window_days has field == value.
//   unique_count:  number of distinct values of field among events within
//                  window_days (window_days <= 0 means the whole journey).
struct FeatureDescriptor {
  std::string name;
  FeatureKind kind = FeatureKind::kRecencyFlag;
  std::string field;
  std::string value;
  double window_days = 0.0;
};

struct FeatureSchema {
  std::vector<FeatureDescriptor> features;
};

// Fatal on duplicate names, unknown fields, or kind-specific gaps. Known
// fields are the four top-level codes plus the given attribute keys.
void validate_schema(const FeatureSchema& schema, const std::set<std::string>& attribute_keys);

std::vector<double> extract_nonseq(const Journey& journey, const FeatureSchema& schema);

// FNV-1a over a canonical rendering; guards dataset/schema pairing.
std::uint64_t schema_hash(const FeatureSchema& schema);

void save_schema(const std::string& path, const FeatureSchema& schema);
FeatureSchema load_schema(const std::string& path);

}  // namespace callseq
