#pragma once

// Shared domain vocabulary for the virtualization middleware: identifiers,
// access tiers, keys, observations and aggregation views. Every type here is
// an immutable value with a canonical JSON encoding used on the wire.

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

namespace gridvirt {

using Json = nlohmann::json;
using Timestamp = std::int64_t;  // UTC seconds since the Unix epoch

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

enum class ErrorCode {
    Unauthorized,
    Forbidden,
    NotFound,
    ConflictRejected,
    BadRequest,
    Unavailable,
};

std::string_view to_string(ErrorCode code);
ErrorCode error_code_from_string(std::string_view text);
int http_status(ErrorCode code);

/// Every failure that can cross the wire. The code picks the HTTP status.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, std::string detail)
        : std::runtime_error(std::move(detail)), code_(code) {}

    ErrorCode code() const noexcept { return code_; }
    std::string detail() const { return what(); }

private:
    ErrorCode code_;
};

class MalformedId : public Error {
public:
    explicit MalformedId(std::string detail) : Error(ErrorCode::BadRequest, std::move(detail)) {}
};

// ---------------------------------------------------------------------------
// Identifiers
// ---------------------------------------------------------------------------

enum class EntityKind { VO, ME, Service, RWO };

std::string_view to_string(EntityKind kind);

struct EntityId {
    EntityKind kind = EntityKind::VO;
    std::string name;

    std::string str() const;
    static EntityId vo(std::string name) { return {EntityKind::VO, std::move(name)}; }
    static EntityId me(std::string name) { return {EntityKind::ME, std::move(name)}; }
    static EntityId service(std::string name) { return {EntityKind::Service, std::move(name)}; }
    static EntityId rwo(std::string name) { return {EntityKind::RWO, std::move(name)}; }

    auto operator<=>(const EntityId&) const = default;
    bool operator==(const EntityId&) const = default;
};

/// True when `name` is non-empty and uses only [a-z0-9-].
bool is_valid_name(std::string_view name);

/// Parses `<kind>:<name>`. Throws MalformedId.
EntityId parse_entity_id(std::string_view text);

// ---------------------------------------------------------------------------
// Access control
// ---------------------------------------------------------------------------

enum class AccessTier { Public = 0, Friend = 1, Private = 2 };

std::string_view to_string(AccessTier tier);
AccessTier tier_from_string(std::string_view text);

/// A key of tier `key_tier` may read a field whose visibility is `field_tier`.
constexpr bool tier_allows(AccessTier key_tier, AccessTier field_tier) noexcept {
    return static_cast<int>(field_tier) <= static_cast<int>(key_tier);
}

struct AccessKey {
    EntityId subject;  // the VO or ME this key opens
    AccessTier tier = AccessTier::Public;
    std::string token;  // 64 hex chars
    EntityId holder;

    bool operator==(const AccessKey&) const = default;
};

/// Source of bearer tokens. Seeded for simulation runs, OS entropy otherwise.
class TokenSource {
public:
    static TokenSource seeded(std::uint64_t seed);
    static TokenSource entropy();

    /// 32 random bytes, hex encoded.
    std::string next();

private:
    explicit TokenSource(std::uint64_t seed) : rng_(seed) {}
    std::mt19937_64 rng_;
};

/// Field-name -> tier. Fields missing from the map are PRIVATE.
class VisibilityMap {
public:
    VisibilityMap() = default;
    explicit VisibilityMap(std::map<std::string, AccessTier> entries) : entries_(std::move(entries)) {}

    AccessTier tier_of(const std::string& field) const;
    void set(const std::string& field, AccessTier tier) { entries_[field] = tier; }
    const std::map<std::string, AccessTier>& entries() const { return entries_; }

    /// Lowest tier across all entries (PRIVATE when empty).
    AccessTier min_tier() const;

    bool operator==(const VisibilityMap&) const = default;

private:
    std::map<std::string, AccessTier> entries_;
};

// ---------------------------------------------------------------------------
// Observations
// ---------------------------------------------------------------------------

using Scalar = std::variant<double, std::string, bool>;
using FieldMap = std::map<std::string, Scalar>;

struct Observation {
    EntityId source;
    Timestamp timestamp = 0;
    FieldMap fields;
    double quality = 1.0;
    std::optional<std::string> location;

    bool operator==(const Observation&) const = default;
};

/// Throws Error(BadRequest) when the observation breaks its invariants.
void validate(const Observation& obs);

std::optional<double> as_number(const Scalar& value);

// ---------------------------------------------------------------------------
// VO status
// ---------------------------------------------------------------------------

enum class VOState { Online, Degraded, Offline };

std::string_view to_string(VOState state);
VOState vo_state_from_string(std::string_view text);

struct VOStatus {
    VOState state = VOState::Offline;
    Timestamp last_seen = 0;
    double qos_latency_ms = 0.0;

    bool operator==(const VOStatus&) const = default;
};

// ---------------------------------------------------------------------------
// Aggregation views
// ---------------------------------------------------------------------------

enum class GroupBy { PerSource, AllSources };
enum class Reduce { Sum, Mean, Min, Max, Last };

std::string_view to_string(GroupBy group);
std::string_view to_string(Reduce reduce);
GroupBy group_by_from_string(std::string_view text);
Reduce reduce_from_string(std::string_view text);

inline constexpr std::int64_t kMinuteBucket = 60;
inline constexpr std::int64_t kMonthBucket = 30 * 86400;

struct ViewSpec {
    std::int64_t time_bucket_s = kMinuteBucket;
    GroupBy group_by = GroupBy::AllSources;
    Reduce reduce = Reduce::Sum;
    std::vector<std::string> fields;

    bool operator==(const ViewSpec&) const = default;
};

void validate(const ViewSpec& view);

// ---------------------------------------------------------------------------
// JSON encodings
// ---------------------------------------------------------------------------

void to_json(Json& j, const EntityId& id);
void from_json(const Json& j, EntityId& id);
void to_json(Json& j, AccessTier tier);
void from_json(const Json& j, AccessTier& tier);
void to_json(Json& j, const AccessKey& key);
void from_json(const Json& j, AccessKey& key);
void to_json(Json& j, const VisibilityMap& map);
void from_json(const Json& j, VisibilityMap& map);
void to_json(Json& j, const Scalar& value);
void from_json(const Json& j, Scalar& value);
void to_json(Json& j, const Observation& obs);
void from_json(const Json& j, Observation& obs);
void to_json(Json& j, const VOStatus& status);
void from_json(const Json& j, VOStatus& status);
void to_json(Json& j, const ViewSpec& view);
void from_json(const Json& j, ViewSpec& view);

}  // namespace gridvirt

// Scalar is a std::variant, so ADL cannot find the overloads above.
template <>
struct nlohmann::adl_serializer<gridvirt::Scalar> {
    static void to_json(gridvirt::Json& j, const gridvirt::Scalar& value) { gridvirt::to_json(j, value); }
    static void from_json(const gridvirt::Json& j, gridvirt::Scalar& value) { gridvirt::from_json(j, value); }
};
