#include "gridvirt/core.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace gridvirt {

namespace {

template <typename Enum, std::size_t N>
Enum lookup(const std::array<std::pair<std::string_view, Enum>, N>& table, std::string_view text,
            const char* what) {
    for (const auto& [name, value] : table) {
        if (name == text) return value;
    }
    throw Error(ErrorCode::BadRequest, std::string("unknown ") + what + " '" + std::string(text) + "'");
}

template <typename Enum, std::size_t N>
std::string_view name_of(const std::array<std::pair<std::string_view, Enum>, N>& table, Enum value) {
    for (const auto& [name, v] : table) {
        if (v == value) return name;
    }
    return "?";
}

constexpr std::array<std::pair<std::string_view, ErrorCode>, 6> kErrorCodes{{
    {"UNAUTHORIZED", ErrorCode::Unauthorized},
    {"FORBIDDEN", ErrorCode::Forbidden},
    {"NOT_FOUND", ErrorCode::NotFound},
    {"CONFLICT_REJECTED", ErrorCode::ConflictRejected},
    {"BAD_REQUEST", ErrorCode::BadRequest},
    {"UNAVAILABLE", ErrorCode::Unavailable},
}};

constexpr std::array<std::pair<std::string_view, EntityKind>, 4> kKinds{{
    {"vo", EntityKind::VO},
    {"me", EntityKind::ME},
    {"service", EntityKind::Service},
    {"rwo", EntityKind::RWO},
}};

constexpr std::array<std::pair<std::string_view, AccessTier>, 3> kTiers{{
    {"public", AccessTier::Public},
    {"friend", AccessTier::Friend},
    {"private", AccessTier::Private},
}};

constexpr std::array<std::pair<std::string_view, VOState>, 3> kStates{{
    {"online", VOState::Online},
    {"degraded", VOState::Degraded},
    {"offline", VOState::Offline},
}};

constexpr std::array<std::pair<std::string_view, GroupBy>, 2> kGroups{{
    {"per_source", GroupBy::PerSource},
    {"all_sources", GroupBy::AllSources},
}};

constexpr std::array<std::pair<std::string_view, Reduce>, 5> kReduces{{
    {"sum", Reduce::Sum},
    {"mean", Reduce::Mean},
    {"min", Reduce::Min},
    {"max", Reduce::Max},
    {"last", Reduce::Last},
}};

}  // namespace

std::string_view to_string(ErrorCode code) { return name_of(kErrorCodes, code); }
ErrorCode error_code_from_string(std::string_view text) { return lookup(kErrorCodes, text, "error code"); }

int http_status(ErrorCode code) {
    switch (code) {
        case ErrorCode::Unauthorized: return 401;
        case ErrorCode::Forbidden: return 403;
        case ErrorCode::NotFound: return 404;
        case ErrorCode::ConflictRejected: return 409;
        case ErrorCode::BadRequest: return 400;
        case ErrorCode::Unavailable: return 503;
    }
    return 500;
}

std::string_view to_string(EntityKind kind) { return name_of(kKinds, kind); }

std::string EntityId::str() const {
    std::string out(to_string(kind));
    out += ':';
    out += name;
    return out;
}

bool is_valid_name(std::string_view name) {
    if (name.empty()) return false;
    return std::all_of(name.begin(), name.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-';
    });
}

EntityId parse_entity_id(std::string_view text) {
    const auto colon = text.find(':');
    if (colon == std::string_view::npos) {
        throw MalformedId("entity id '" + std::string(text) + "' lacks a kind prefix");
    }
    const auto kind_text = text.substr(0, colon);
    const auto name = text.substr(colon + 1);
    EntityKind kind{};
    bool known = false;
    for (const auto& [k, v] : kKinds) {
        if (k == kind_text) {
            kind = v;
            known = true;
        }
    }
    if (!known) throw MalformedId("unknown entity kind '" + std::string(kind_text) + "'");
    if (!is_valid_name(name)) throw MalformedId("illegal entity name '" + std::string(name) + "'");
    return EntityId{kind, std::string(name)};
}

std::string_view to_string(AccessTier tier) { return name_of(kTiers, tier); }
AccessTier tier_from_string(std::string_view text) { return lookup(kTiers, text, "access tier"); }

TokenSource TokenSource::seeded(std::uint64_t seed) { return TokenSource(seed); }

TokenSource TokenSource::entropy() {
    std::random_device rd;
    const std::uint64_t seed = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    return TokenSource(seed);
}

std::string TokenSource::next() {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (int word = 0; word < 4; ++word) {
        auto bits = rng_();
        for (int nibble = 0; nibble < 16; ++nibble) {
            out += kHex[bits & 0xF];
            bits >>= 4;
        }
    }
    return out;
}

AccessTier VisibilityMap::tier_of(const std::string& field) const {
    const auto it = entries_.find(field);
    return it == entries_.end() ? AccessTier::Private : it->second;
}

AccessTier VisibilityMap::min_tier() const {
    AccessTier lowest = AccessTier::Private;
    for (const auto& [_, tier] : entries_) {
        if (static_cast<int>(tier) < static_cast<int>(lowest)) lowest = tier;
    }
    return lowest;
}

void validate(const Observation& obs) {
    if (obs.timestamp <= 0) throw Error(ErrorCode::BadRequest, "observation timestamp must be positive");
    if (obs.fields.empty()) throw Error(ErrorCode::BadRequest, "observation has no fields");
    if (!(obs.quality >= 0.0 && obs.quality <= 1.0)) {
        throw Error(ErrorCode::BadRequest, "observation quality outside [0,1]");
    }
    if (!is_valid_name(obs.source.name)) throw Error(ErrorCode::BadRequest, "observation source is invalid");
}

std::optional<double> as_number(const Scalar& value) {
    if (const auto* d = std::get_if<double>(&value)) return *d;
    return std::nullopt;
}

std::string_view to_string(VOState state) { return name_of(kStates, state); }
VOState vo_state_from_string(std::string_view text) { return lookup(kStates, text, "vo state"); }

std::string_view to_string(GroupBy group) { return name_of(kGroups, group); }
std::string_view to_string(Reduce reduce) { return name_of(kReduces, reduce); }
GroupBy group_by_from_string(std::string_view text) { return lookup(kGroups, text, "grouping"); }
Reduce reduce_from_string(std::string_view text) { return lookup(kReduces, text, "reduction"); }

void validate(const ViewSpec& view) {
    if (view.time_bucket_s <= 0) throw Error(ErrorCode::BadRequest, "time_bucket_s must be positive");
    if (view.fields.empty()) throw Error(ErrorCode::BadRequest, "view names no fields");
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

void to_json(Json& j, const EntityId& id) { j = id.str(); }

void from_json(const Json& j, EntityId& id) { id = parse_entity_id(j.get<std::string>()); }

void to_json(Json& j, AccessTier tier) { j = std::string(to_string(tier)); }

void from_json(const Json& j, AccessTier& tier) { tier = tier_from_string(j.get<std::string>()); }

void to_json(Json& j, const AccessKey& key) {
    j = Json{{"subject", key.subject}, {"tier", key.tier}, {"token", key.token}, {"holder", key.holder}};
}

void from_json(const Json& j, AccessKey& key) {
    key.subject = j.at("subject").get<EntityId>();
    key.tier = j.at("tier").get<AccessTier>();
    key.token = j.at("token").get<std::string>();
    key.holder = j.at("holder").get<EntityId>();
}

void to_json(Json& j, const VisibilityMap& map) {
    Json entries = Json::object();
    for (const auto& [field, tier] : map.entries()) entries[field] = tier;
    j = Json{{"entries", std::move(entries)}};
}

void from_json(const Json& j, VisibilityMap& map) {
    std::map<std::string, AccessTier> entries;
    for (const auto& [field, tier] : j.at("entries").items()) entries[field] = tier.get<AccessTier>();
    map = VisibilityMap(std::move(entries));
}

void to_json(Json& j, const Scalar& value) {
    std::visit([&j](const auto& v) { j = v; }, value);
}

void from_json(const Json& j, Scalar& value) {
    if (j.is_boolean()) {
        value = j.get<bool>();
    } else if (j.is_number()) {
        value = j.get<double>();
    } else if (j.is_string()) {
        value = j.get<std::string>();
    } else {
        throw Error(ErrorCode::BadRequest, "observation fields must be scalars");
    }
}

void to_json(Json& j, const Observation& obs) {
    Json fields = Json::object();
    for (const auto& [name, value] : obs.fields) fields[name] = value;
    j = Json{{"source", obs.source}, {"timestamp", obs.timestamp}, {"fields", std::move(fields)},
             {"quality", obs.quality}};
    if (obs.location) j["location"] = *obs.location;
}

void from_json(const Json& j, Observation& obs) {
    obs.source = j.at("source").get<EntityId>();
    obs.timestamp = j.at("timestamp").get<Timestamp>();
    obs.fields.clear();
    for (const auto& [name, value] : j.at("fields").items()) obs.fields[name] = value.get<Scalar>();
    obs.quality = j.contains("quality") ? j.at("quality").get<double>() : 1.0;
    obs.location.reset();
    if (j.contains("location")) obs.location = j.at("location").get<std::string>();
}

void to_json(Json& j, const VOStatus& status) {
    j = Json{{"state", std::string(to_string(status.state))},
             {"last_seen", status.last_seen},
             {"qos_latency_ms", status.qos_latency_ms}};
}

void from_json(const Json& j, VOStatus& status) {
    status.state = vo_state_from_string(j.at("state").get<std::string>());
    status.last_seen = j.at("last_seen").get<Timestamp>();
    status.qos_latency_ms = j.at("qos_latency_ms").get<double>();
    if (status.qos_latency_ms < 0) throw Error(ErrorCode::BadRequest, "qos_latency_ms must be >= 0");
}

void to_json(Json& j, const ViewSpec& view) {
    j = Json{{"time_bucket_s", view.time_bucket_s},
             {"group_by", std::string(to_string(view.group_by))},
             {"reduce", std::string(to_string(view.reduce))},
             {"fields", view.fields}};
}

void from_json(const Json& j, ViewSpec& view) {
    view.time_bucket_s = j.at("time_bucket_s").get<std::int64_t>();
    view.group_by = group_by_from_string(j.at("group_by").get<std::string>());
    view.reduce = reduce_from_string(j.at("reduce").get<std::string>());
    view.fields = j.at("fields").get<std::vector<std::string>>();
    validate(view);
}

}  // namespace gridvirt
