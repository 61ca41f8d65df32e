#pragma once

// Service layer: a Service Request Manager that binds each need to an ME at
// boot, and a Service Execution Manager that supervises those bindings.
// Services only ever talk to the middleware through a Transport.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gridvirt/core.hpp"
#include "gridvirt/descriptors.hpp"
#include "gridvirt/me_layer.hpp"
#include "gridvirt/wire.hpp"

namespace gridvirt {

class Platform;

class Transport {
public:
    virtual ~Transport() = default;
    virtual HttpResponse send(const HttpRequest& req) = 0;
};

/// Serializes every request to bytes and hands it to the platform router.
class InProcessTransport : public Transport {
public:
    explicit InProcessTransport(Platform& platform) : platform_(platform) {}
    HttpResponse send(const HttpRequest& req) override;

private:
    Platform& platform_;
};

/// HTTP/1.1 to a running `gridvirt serve`.
class HttpTransport : public Transport {
public:
    HttpTransport(std::string host, int port);
    ~HttpTransport() override;
    HttpResponse send(const HttpRequest& req) override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Error carried by a non-2xx response, or BAD_REQUEST when unparseable.
WireError wire_error_of(const HttpResponse& resp);

enum class Delivery { Poll, Push };

std::string_view to_string(Delivery delivery);
Delivery delivery_from_string(std::string_view text);

struct ServiceNeed {
    EntityId me;  // name to compose under if nothing reusable exists
    std::vector<std::string> requirements;
    ViewSpec view;
    AccessTier exposure_tier = AccessTier::Friend;
    Delivery delivery = Delivery::Poll;
};

struct ServiceSpec {
    EntityId id;
    std::vector<ServiceNeed> needs;
    std::vector<AccessKey> keys;  // ME keys held by this service
};

/// Throws std::invalid_argument when the spec has no needs.
void validate(const ServiceSpec& spec);

enum class NeedHealth { Ok, Degraded, Lost };

std::string_view to_string(NeedHealth health);

inline constexpr Timestamp kReRequestBackoffS = 60;

struct NeedState {
    ServiceNeed need;
    std::optional<EntityId> bound;  // ME the need resolved to
    NeedHealth health = NeedHealth::Lost;
    std::optional<WireError> error;  // last boot or re-request failure
    std::optional<Timestamp> next_request;  // re-request due time while LOST
    int re_requests = 0;
};

struct FetchResult {
    HttpResponse response;
    std::vector<AggregateRow> rows;  // empty on failure
    AccessTier tier = AccessTier::Public;  // tier of the key presented
};

class ServiceRuntime {
public:
    ServiceRuntime(ServiceSpec spec, Transport& transport);

    const ServiceSpec& spec() const { return spec_; }
    const std::vector<NeedState>& needs() const { return needs_; }

    /// Composes (or reuses) one ME per need. Failed needs stay LOST and are
    /// retried by supervise_tick.
    void boot(Timestamp now);

    /// Polls every bound ME's status and re-requests LOST needs once the
    /// backoff has elapsed.
    std::vector<NeedHealth> supervise_tick(Timestamp now);

    /// Applies an ME notice delivered to this service's inbox.
    void on_notice(const MENotice& notice, Timestamp now);

    /// GET the bound ME's rows over `range`.
    FetchResult fetch(std::size_t need, TimeRange range, const std::vector<std::string>& fields = {});

    int total_re_requests() const;

private:
    void request(NeedState& state, Timestamp now);
    std::optional<AccessKey> key_for(const EntityId& me) const;
    Credentials credentials_for_me(const EntityId& me) const;
    void mark(NeedState& state, NeedHealth health, Timestamp now);

    ServiceSpec spec_;
    Transport& transport_;
    std::vector<NeedState> needs_;
};

}  // namespace gridvirt
