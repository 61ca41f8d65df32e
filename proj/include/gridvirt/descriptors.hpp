#pragma once

// Registry records and aggregation payloads shared by the VO and ME layers
// and carried over the wire.

#include <cstdint>
#include <string>
#include <vector>

#include "gridvirt/core.hpp"

namespace gridvirt {

struct VODescriptor {
    EntityId id;
    EntityId owner;
    std::string location;
    std::vector<std::string> functionalities;  // "measure:energy_kwh", "actuate:breaker"
    std::string endpoint;
    VOStatus status;
    AccessTier default_tier = AccessTier::Public;

    bool offers(const std::string& functionality) const;
    bool operator==(const VODescriptor&) const = default;
};

void validate(const VODescriptor& desc);

struct MEMember {
    EntityId vo_id;
    AccessKey key;  // empty token for PUBLIC membership

    bool operator==(const MEMember&) const = default;
};

struct MEDescriptor {
    EntityId id;
    EntityId owner;
    std::vector<MEMember> members;
    ViewSpec view;
    std::vector<std::string> requirements;
    int priority = 0;
    VisibilityMap exposure;  // over the view's output fields

    bool operator==(const MEDescriptor&) const = default;
};

/// What a service (or an ME owner) asks the composition manager for.
struct ComposeRequest {
    EntityId name;       // ME id to mint when nothing reusable exists
    EntityId requester;  // identity presenting the keys
    EntityId owner;
    std::vector<std::string> requirements;
    ViewSpec view;
    AccessTier exposure_tier = AccessTier::Friend;
    int priority = 0;

    bool operator==(const ComposeRequest&) const = default;
};

struct AggregateRow {
    Timestamp bucket_start = 0;
    std::string group;  // source id for PER_SOURCE, "ALL" otherwise
    std::map<std::string, double> values;
    int contributing_sources = 0;

    bool operator==(const AggregateRow&) const = default;
};

inline constexpr const char* kAllSourcesGroup = "ALL";

struct VOAlert {
    EntityId vo_id;
    VOStatus status;

    bool operator==(const VOAlert&) const = default;
};

enum class MEHealth { Ok, Degraded, RequirementUnmet };

std::string_view to_string(MEHealth health);
MEHealth me_health_from_string(std::string_view text);

void to_json(Json& j, const VODescriptor& desc);
void from_json(const Json& j, VODescriptor& desc);
void to_json(Json& j, const MEMember& member);
void from_json(const Json& j, MEMember& member);
void to_json(Json& j, const MEDescriptor& desc);
void from_json(const Json& j, MEDescriptor& desc);
void to_json(Json& j, const ComposeRequest& req);
void from_json(const Json& j, ComposeRequest& req);
void to_json(Json& j, const AggregateRow& row);
void from_json(const Json& j, AggregateRow& row);
void to_json(Json& j, const VOAlert& alert);
void from_json(const Json& j, VOAlert& alert);

}  // namespace gridvirt
