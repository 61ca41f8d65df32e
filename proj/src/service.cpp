#include "gridvirt/service.hpp"

#include "gridvirt/platform.hpp"

namespace gridvirt {

HttpResponse InProcessTransport::send(const HttpRequest& req) { return platform_.handle_raw(to_bytes(req)); }

WireError wire_error_of(const HttpResponse& resp) {
    try {
        return resp.json().get<WireError>();
    } catch (const std::exception&) {
        return WireError{ErrorCode::BadRequest, "unreadable reply with status " + std::to_string(resp.status)};
    }
}

std::string_view to_string(Delivery delivery) { return delivery == Delivery::Push ? "push" : "poll"; }

Delivery delivery_from_string(std::string_view text) {
    if (text == "push") return Delivery::Push;
    if (text == "poll") return Delivery::Poll;
    throw std::invalid_argument("delivery must be poll or push, not '" + std::string(text) + "'");
}

std::string_view to_string(NeedHealth health) {
    switch (health) {
        case NeedHealth::Ok: return "ok";
        case NeedHealth::Degraded: return "degraded";
        case NeedHealth::Lost: return "lost";
    }
    return "lost";
}

namespace {

NeedHealth need_health_of(MEHealth health) {
    switch (health) {
        case MEHealth::Ok: return NeedHealth::Ok;
        case MEHealth::Degraded: return NeedHealth::Degraded;
        case MEHealth::RequirementUnmet: return NeedHealth::Lost;
    }
    return NeedHealth::Lost;
}

}  // namespace

void validate(const ServiceSpec& spec) {
    if (spec.needs.empty()) throw std::invalid_argument(spec.id.str() + " declares no needs");
    for (const auto& need : spec.needs) {
        if (need.requirements.empty()) throw std::invalid_argument(spec.id.str() + " has a need without requirements");
        validate(need.view);
    }
}

ServiceRuntime::ServiceRuntime(ServiceSpec spec, Transport& transport)
    : spec_(std::move(spec)), transport_(transport) {
    validate(spec_);
    for (const auto& need : spec_.needs) {
        NeedState state;
        state.need = need;
        needs_.push_back(std::move(state));
    }
}

std::optional<AccessKey> ServiceRuntime::key_for(const EntityId& me) const {
    std::optional<AccessKey> best;
    for (const auto& key : spec_.keys) {
        if (key.subject != me || key.holder != spec_.id) continue;
        if (!best || static_cast<int>(key.tier) > static_cast<int>(best->tier)) best = key;
    }
    return best;
}

Credentials ServiceRuntime::credentials_for_me(const EntityId& me) const {
    Credentials auth;
    auth.requester = spec_.id;
    if (const auto key = key_for(me)) auth.tokens.push_back(key->token);
    return auth;
}

void ServiceRuntime::mark(NeedState& state, NeedHealth health, Timestamp now) {
    if (health == NeedHealth::Lost) {
        if (state.health != NeedHealth::Lost || !state.next_request) state.next_request = now + kReRequestBackoffS;
    } else {
        state.next_request.reset();
        state.error.reset();
    }
    state.health = health;
}

void ServiceRuntime::request(NeedState& state, Timestamp now) {
    ComposeRequest req;
    req.name = state.need.me;
    req.requester = spec_.id;
    req.owner = spec_.id;
    req.requirements = state.need.requirements;
    req.view = state.need.view;
    req.exposure_tier = state.need.exposure_tier;

    Credentials auth;
    auth.requester = spec_.id;
    for (const auto& key : spec_.keys) {
        if (key.holder == spec_.id) auth.tokens.push_back(key.token);
    }
    const auto resp = transport_.send(encode(call::ComposeME{req, auth}));
    if (!resp.ok()) {
        state.error = wire_error_of(resp);
        state.health = NeedHealth::Lost;
        state.next_request = now + kReRequestBackoffS;
        return;
    }
    const auto body = resp.json();
    state.bound = body.at("descriptor").at("id").get<EntityId>();
    if (body.contains("owner_key")) spec_.keys.push_back(body.at("owner_key").get<AccessKey>());
    if (state.need.delivery == Delivery::Push) {
        call::PostPolicy policy{*state.bound, UpdateCommand::start(state.need.view.time_bucket_s, state.need.view.fields),
                                credentials_for_me(*state.bound)};
        transport_.send(encode(policy));
    }
    const auto status = transport_.send(encode(call::MEStatus{state.bound->name, credentials_for_me(*state.bound)}));
    if (!status.ok()) {
        state.error = wire_error_of(status);
        mark(state, NeedHealth::Lost, now);
        return;
    }
    const auto health = me_health_from_string(status.json().at("health").get<std::string>());
    mark(state, need_health_of(health), now);
}

void ServiceRuntime::boot(Timestamp now) {
    for (auto& state : needs_) request(state, now);
}

std::vector<NeedHealth> ServiceRuntime::supervise_tick(Timestamp now) {
    std::vector<NeedHealth> report;
    for (auto& state : needs_) {
        if (state.bound) {
            const auto resp =
                transport_.send(encode(call::MEStatus{state.bound->name, credentials_for_me(*state.bound)}));
            if (resp.ok()) {
                const auto health = me_health_from_string(resp.json().at("health").get<std::string>());
                mark(state, need_health_of(health), now);
            } else {
                state.error = wire_error_of(resp);
                mark(state, NeedHealth::Lost, now);
            }
        }
        if (state.health == NeedHealth::Lost && state.next_request && now >= *state.next_request) {
            ++state.re_requests;
            state.next_request.reset();
            request(state, now);
            if (state.health == NeedHealth::Lost && !state.next_request) state.next_request = now + kReRequestBackoffS;
        }
        report.push_back(state.health);
    }
    return report;
}

void ServiceRuntime::on_notice(const MENotice& notice, Timestamp now) {
    for (auto& state : needs_) {
        if (!state.bound || *state.bound != notice.me) continue;
        mark(state, need_health_of(notice.health), now);
    }
}

FetchResult ServiceRuntime::fetch(std::size_t need, TimeRange range, const std::vector<std::string>& fields) {
    const auto& state = needs_.at(need);
    FetchResult result;
    if (!state.bound) {
        result.response = error_response(WireError{ErrorCode::Unavailable, "need is not bound to an ME"});
        return result;
    }
    const auto key = key_for(*state.bound);
    result.tier = key ? key->tier : AccessTier::Public;
    auto req = encode_query_get(*state.bound, state.need.view, range, key, fields);
    req.headers["x-requester"] = spec_.id.str();
    result.response = transport_.send(req);
    if (result.response.ok()) result.rows = result.response.json().at("rows").get<std::vector<AggregateRow>>();
    return result;
}

int ServiceRuntime::total_re_requests() const {
    int n = 0;
    for (const auto& state : needs_) n += state.re_requests;
    return n;
}

}  // namespace gridvirt
