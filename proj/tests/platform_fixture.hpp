#pragma once

// Drives a Platform through the same encoded requests a remote client sends.

#include <doctest.h>

#include "gridvirt/platform.hpp"
#include "gridvirt/wire.hpp"

namespace fixture {

using namespace gridvirt;

inline HttpResponse send(Platform& p, const RoutedCall& c) { return p.handle(encode(c)); }

inline Json ok(Platform& p, const RoutedCall& c) {
    const auto res = send(p, c);
    INFO(res.body);
    REQUIRE(res.ok());
    return res.json();
}

inline AccessKey register_vo(Platform& p, const std::string& name, const std::string& owner,
                             std::vector<std::string> functionalities, VisibilityMap visibility,
                             AccessTier default_tier, std::int64_t cadence_s = 60) {
    call::RegisterVO c;
    c.descriptor.id = EntityId::vo(name);
    c.descriptor.owner = EntityId::service(owner);
    c.descriptor.location = "test";
    c.descriptor.functionalities = std::move(functionalities);
    c.descriptor.endpoint = "/vo/" + name;
    c.descriptor.default_tier = default_tier;
    c.visibility = std::move(visibility);
    c.cadence_s = cadence_s;
    return ok(p, c).at("owner_key").get<AccessKey>();
}

inline AccessKey grant(Platform& p, const EntityId& subject, const EntityId& holder, AccessTier tier,
                       int priority = 0) {
    const auto& admin = subject.kind == EntityKind::VO ? p.vo_registry().admin_token() : p.me_registry().admin_token();
    return ok(p, call::GrantAccess{subject, holder, tier, priority, Credentials{std::nullopt, {admin}}}).get<AccessKey>();
}

inline void post(Platform& p, const std::string& vo, Timestamp t, FieldMap fields) {
    ok(p, call::PostObservation{vo, Observation{EntityId::rwo(vo), t, std::move(fields), 1.0, std::nullopt}, {}});
}

inline Credentials present(const EntityId& requester, const std::vector<AccessKey>& keys) {
    Credentials auth{requester, {}};
    for (const auto& k : keys) auth.tokens.push_back(k.token);
    return auth;
}

inline ComposeRequest request(const std::string& name, const EntityId& requester, std::vector<std::string> reqs,
                              ViewSpec view, AccessTier exposure = AccessTier::Friend) {
    ComposeRequest r;
    r.name = EntityId::me(name);
    r.requester = requester;
    r.owner = requester;
    r.requirements = std::move(reqs);
    r.view = std::move(view);
    r.exposure_tier = exposure;
    return r;
}

inline std::vector<std::string> member_names(const Json& descriptor) {
    std::vector<std::string> out;
    for (const auto& m : descriptor.at("members")) out.push_back(m.at("vo_id").get<std::string>());
    return out;
}

}  // namespace fixture
