#pragma once

// REST/JSON protocol spoken between devices, VOs, MEs, services and the
// registries. Encoders build HttpRequest values; decode_and_route is their
// inverse and accepts arbitrary bytes.
//
// Route table (all bodies are JSON):
//
//   POST /vo/{name}/observations       Observation
//   GET  /vo/{name}/data               ?from&to[&field=..]
//   POST /vo/{name}/policy             UpdateCommand      (subscriber = X-Requester)
//   POST /vo/{name}/actuate            ActuationCommand
//   GET  /me/{name}/data               ?from&to[&bucket&group&reduce][&field=..]
//   GET  /me/{name}/status
//   POST /me/{name}/policy             UpdateCommand
//   POST /me/{name}/alerts             VOAlert
//   POST /me/compose                   ComposeRequest
//   POST /registry/vo                  {descriptor, visibility, cadence_s}
//   POST /registry/vo/{name}/status    VOStatus
//   GET  /registry/vo/search           ?req=..&req=..[&include_offline=true]
//   POST /registry/vo/{name}/grants    {holder, tier, priority}
//   POST /registry/me                  MEDescriptor
//   POST /registry/me/{name}/grants    {holder, tier, priority}
//
// Keys travel as `Authorization: Bearer <hex>[,<hex>...]`, the calling
// identity as `X-Requester: <kind>:<name>`.

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "gridvirt/core.hpp"
#include "gridvirt/descriptors.hpp"

namespace gridvirt {

// ---------------------------------------------------------------------------
// HTTP values
// ---------------------------------------------------------------------------

struct HttpRequest {
    std::string method;
    std::string path;
    std::vector<std::pair<std::string, std::string>> query;
    std::map<std::string, std::string> headers;  // lowercase names
    std::string body;

    std::optional<std::string> header(const std::string& lowercase_name) const;
    std::optional<std::string> query_one(std::string_view name) const;
    std::vector<std::string> query_all(std::string_view name) const;
    std::string target() const;  // path plus encoded query string
};

struct HttpResponse {
    int status = 200;
    std::string body;

    bool ok() const { return status >= 200 && status < 300; }
    Json json() const;
};

std::string url_encode(std::string_view text);
std::string url_decode(std::string_view text);

/// HTTP/1.1 request bytes.
std::string to_bytes(const HttpRequest& req);

/// Parses HTTP/1.1 request bytes. Throws Error(BadRequest).
HttpRequest parse_http_request(std::string_view raw);

// ---------------------------------------------------------------------------
// Protocol payloads
// ---------------------------------------------------------------------------

enum class UpdateVerb { StartPeriodic, StopPeriodic, ChangePeriodic };

std::string_view to_string(UpdateVerb verb);

struct UpdateCommand {
    UpdateVerb verb = UpdateVerb::StopPeriodic;
    std::optional<std::int64_t> period_s;
    std::vector<std::string> fields;

    static UpdateCommand start(std::int64_t period_s, std::vector<std::string> fields) {
        return {UpdateVerb::StartPeriodic, period_s, std::move(fields)};
    }
    static UpdateCommand change(std::int64_t period_s, std::vector<std::string> fields) {
        return {UpdateVerb::ChangePeriodic, period_s, std::move(fields)};
    }
    static UpdateCommand stop() { return {}; }

    bool operator==(const UpdateCommand&) const = default;
};

void validate(const UpdateCommand& cmd);

struct ActuationCommand {
    EntityId target;
    std::string action;
    FieldMap args;
    EntityId issuer;
    int priority = 0;
    Timestamp issued_at = 0;

    bool operator==(const ActuationCommand&) const = default;
};

struct WireError {
    ErrorCode code = ErrorCode::BadRequest;
    std::string detail;

    bool operator==(const WireError&) const = default;
};

struct TimeRange {
    Timestamp from = 0;
    Timestamp to = 0;

    bool contains(Timestamp t) const { return t >= from && t <= to; }
    bool operator==(const TimeRange&) const = default;
};

void to_json(Json& j, const UpdateCommand& cmd);
void from_json(const Json& j, UpdateCommand& cmd);
void to_json(Json& j, const ActuationCommand& cmd);
void from_json(const Json& j, ActuationCommand& cmd);
void to_json(Json& j, const WireError& err);
void from_json(const Json& j, WireError& err);

// ---------------------------------------------------------------------------
// Routed calls
// ---------------------------------------------------------------------------

/// Identity and keys presented with a request.
struct Credentials {
    std::optional<EntityId> requester;
    std::vector<std::string> tokens;

    const std::string* first_token() const { return tokens.empty() ? nullptr : &tokens.front(); }
    bool operator==(const Credentials&) const = default;
};

namespace call {

struct PostObservation {
    std::string vo;
    Observation obs;
    Credentials auth;
    bool operator==(const PostObservation&) const = default;
};

struct QueryData {
    EntityId target;  // vo or me
    TimeRange range;
    std::optional<ViewSpec> view;  // its fields mirror `fields`
    std::vector<std::string> fields;
    Credentials auth;
    bool operator==(const QueryData&) const = default;
};

struct PostPolicy {
    EntityId target;  // vo or me
    UpdateCommand cmd;
    Credentials auth;  // requester is the subscriber
    bool operator==(const PostPolicy&) const = default;
};

struct PostActuation {
    std::string vo;
    ActuationCommand cmd;
    Credentials auth;
    bool operator==(const PostActuation&) const = default;
};

struct RegisterVO {
    VODescriptor descriptor;
    VisibilityMap visibility;
    std::int64_t cadence_s = 60;
    bool operator==(const RegisterVO&) const = default;
};

struct PostVOStatus {
    std::string vo;
    VOStatus status;
    bool operator==(const PostVOStatus&) const = default;
};

struct SearchVO {
    std::vector<std::string> requirements;
    bool include_offline = false;
    Credentials auth;
    bool operator==(const SearchVO&) const = default;
};

struct GrantAccess {
    EntityId subject;  // vo or me
    EntityId holder;
    AccessTier tier = AccessTier::Friend;
    int priority = 0;
    Credentials auth;  // owner's PRIVATE key or the admin token
    bool operator==(const GrantAccess&) const = default;
};

struct RegisterME {
    MEDescriptor descriptor;
    Credentials auth;
    bool operator==(const RegisterME&) const = default;
};

struct ComposeME {
    ComposeRequest request;
    Credentials auth;
    bool operator==(const ComposeME&) const = default;
};

struct MEAlert {
    std::string me;
    VOAlert alert;
    bool operator==(const MEAlert&) const = default;
};

struct MEStatus {
    std::string me;
    Credentials auth;
    bool operator==(const MEStatus&) const = default;
};

}  // namespace call

using RoutedCall = std::variant<call::PostObservation, call::QueryData, call::PostPolicy, call::PostActuation,
                                call::RegisterVO, call::PostVOStatus, call::SearchVO, call::GrantAccess,
                                call::RegisterME, call::ComposeME, call::MEAlert, call::MEStatus>;

using RouteResult = std::variant<RoutedCall, WireError>;

/// Names the router accepts as targets. A null directory accepts every name.
struct RouteDirectory {
    std::function<bool(const std::string&)> has_vo;
    std::function<bool(const std::string&)> has_me;
};

// ---------------------------------------------------------------------------
// Encoders and router
// ---------------------------------------------------------------------------

/// POST /vo/{source-name}/observations. Throws Error(BadRequest) for an
/// invalid observation.
HttpRequest encode_observation_post(const Observation& obs, const std::optional<AccessKey>& key = std::nullopt);

/// GET /vo/{name}/data or /me/{name}/data. Throws Error(BadRequest) when
/// range.from > range.to.
HttpRequest encode_query_get(const EntityId& target, const std::optional<ViewSpec>& view, TimeRange range,
                             const std::optional<AccessKey>& key = std::nullopt,
                             const std::vector<std::string>& fields = {});

/// Encodes any routed call; decode_and_route(to_bytes(encode(c))) == c.
HttpRequest encode(const RoutedCall& call);

/// Total over arbitrary input: yields a call or a WireError, never throws.
RouteResult decode_and_route(std::string_view raw, const RouteDirectory* directory = nullptr);

/// Same as decode_and_route for an already-parsed request.
RouteResult route(const HttpRequest& req, const RouteDirectory* directory = nullptr);

HttpResponse json_response(int status, const Json& body);
HttpResponse error_response(const WireError& err);
HttpResponse error_response(const Error& err);

}  // namespace gridvirt
