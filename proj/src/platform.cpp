#include "gridvirt/platform.hpp"

#include <sstream>

namespace gridvirt {

EntityId bound_rwo(const EntityId& vo) { return EntityId::rwo(vo.name); }

LayerSet LayerSet::parse(std::string_view csv) {
    LayerSet set{false, false, false};
    std::stringstream in{std::string(csv)};
    std::string item;
    while (std::getline(in, item, ',')) {
        if (item == "vo") {
            set.vo = true;
        } else if (item == "me") {
            set.me = true;
        } else if (item == "registry") {
            set.registry = true;
        } else if (item == "all") {
            set = all();
        } else {
            throw std::invalid_argument("unknown layer '" + item + "'");
        }
    }
    if (!set.vo && !set.me && !set.registry) throw std::invalid_argument("no layer selected");
    return set;
}

namespace {

TokenSource token_source(const std::optional<std::uint64_t>& seed, std::uint64_t stream) {
    if (!seed) return TokenSource::entropy();
    return TokenSource::seeded(*seed * 1000003ULL + stream);
}

Json key_json(const AccessKey& key) { return Json(key); }

}  // namespace

Platform::Platform(std::optional<std::uint64_t> seed, LayerSet layers)
    : layers_(layers),
      vos_(token_source(seed, 1)),
      mes_(token_source(seed, 2)),
      composer_(vos_, mes_,
                CompositionManager::Hooks{
                    [this](const MEDescriptor& desc, std::vector<AccessKey> keys) {
                        return create_me(desc, std::move(keys));
                    },
                    [this](const EntityId& id) { return me(id.name); }}) {
    vos_.set_key_listener([this](const AccessKey& key, int priority) {
        if (const auto instance = vo(key.subject.name)) instance->install_key(key, priority);
    });
    vos_.set_revoke_listener([this](const AccessKey& key) {
        if (const auto instance = vo(key.subject.name)) instance->revoke_key(key.token);
    });
    mes_.set_key_listener([this](const AccessKey& key, int priority) {
        if (const auto instance = me(key.subject.name)) instance->install_key(key, priority);
    });
}

std::shared_ptr<VOInstance> Platform::vo(const std::string& name) const {
    std::shared_lock lock(instances_mutex_);
    const auto it = vo_instances_.find(name);
    return it == vo_instances_.end() ? nullptr : it->second;
}

std::shared_ptr<MEInstance> Platform::me(const std::string& name) const {
    std::shared_lock lock(instances_mutex_);
    const auto it = me_instances_.find(name);
    return it == me_instances_.end() ? nullptr : it->second;
}

Timestamp Platform::now() const {
    std::lock_guard lock(misc_mutex_);
    return now_;
}

void Platform::set_now(Timestamp now) {
    std::lock_guard lock(misc_mutex_);
    now_ = now;
}

void Platform::attach_inbox(const EntityId& holder, Inbox inbox) {
    std::lock_guard lock(misc_mutex_);
    inboxes_[holder] = std::move(inbox);
}

void Platform::set_hal(std::function<void(const ActuationCommand&)> hal) {
    std::lock_guard lock(misc_mutex_);
    hal_ = std::move(hal);
}

void Platform::record(std::string kind, Json detail) {
    std::lock_guard lock(misc_mutex_);
    detail["kind"] = std::move(kind);
    detail["at"] = now_;
    events_.push_back(std::move(detail));
}

std::vector<Json> Platform::events() const {
    std::lock_guard lock(misc_mutex_);
    return events_;
}

bool Platform::deliver(const EntityId& holder, const Json& message) {
    Inbox inbox;
    {
        std::lock_guard lock(misc_mutex_);
        const auto it = inboxes_.find(holder);
        if (it == inboxes_.end()) return false;
        inbox = it->second;
    }
    return inbox(message);
}

VOLinks Platform::vo_links() {
    VOLinks links;
    links.post_status = [this](const EntityId& vo, const VOStatus& status) {
        vos_.update_status(vo, status);
        record("vo_status", {{"vo", vo}, {"status", status}});
    };
    links.alert = [this](const EntityId& subscriber, const VOAlert& alert) {
        if (subscriber.kind != EntityKind::ME) return;
        if (const auto instance = me(subscriber.name)) instance->handle_vo_alert(alert, now());
    };
    links.push = [this](const EntityId& subscriber, const EntityId& vo, const std::vector<Observation>& batch) {
        if (subscriber.kind == EntityKind::ME) {
            const auto instance = me(subscriber.name);
            return instance && instance->ingest(vo, batch);
        }
        return deliver(subscriber, Json{{"type", "vo_push"}, {"vo", vo}, {"observations", batch}});
    };
    links.policy_failing = [this](const EntityId& vo, const EntityId& subscriber) {
        record("policy_failing", {{"vo", vo}, {"subscriber", subscriber}});
    };
    links.forward_to_hal = [this](const ActuationCommand& cmd) {
        std::function<void(const ActuationCommand&)> hal;
        {
            std::lock_guard lock(misc_mutex_);
            hal = hal_;
        }
        if (hal) hal(cmd);
        record("actuation_forwarded", {{"command", cmd}});
    };
    links.actuation_result = [this](const EntityId& issuer, const ActuationOutcome& outcome) {
        const bool won = outcome.winner.issuer == issuer;
        Json message{{"type", "actuation_result"},
                     {"target", outcome.winner.target},
                     {"result", won ? "accepted" : std::string(to_string(ErrorCode::ConflictRejected))},
                     {"winner", outcome.winner}};
        deliver(issuer, message);
    };
    return links;
}

MELinks Platform::me_links() {
    MELinks links;
    links.search = [this](const std::vector<std::string>& requirements, const Credentials& auth) {
        return vos_.search(requirements, auth);
    };
    links.describe = [this](const EntityId& vo) { return vos_.get(vo); };
    links.visibility = [this](const EntityId& vo) { return vos_.visibility(vo); };
    links.post_policy = [this](const EntityId& vo, const Credentials& auth, const UpdateCommand& cmd) {
        const auto instance = this->vo(vo.name);
        if (!instance) throw Error(ErrorCode::NotFound, vo.str() + " is not running");
        instance->apply_policy(*auth.requester, auth, cmd);
    };
    links.fetch = [this](const EntityId& vo, const Credentials& auth, TimeRange range,
                         const std::vector<std::string>& fields) {
        const auto instance = this->vo(vo.name);
        if (!instance) throw Error(ErrorCode::NotFound, vo.str() + " is not running");
        return instance->query(auth, range, fields);
    };
    links.update_registry = [this](const EntityId& id, const std::vector<MEMember>& members) {
        mes_.update_members(id, members);
        Json ids = Json::array();
        for (const auto& m : members) ids.push_back(m.vo_id);
        record("me_members", {{"me", id}, {"members", ids}});
    };
    links.notify = [this](const EntityId& client, const MENotice& notice) {
        record("me_notice", {{"client", client}, {"notice", notice}});
        Json message = notice;
        message["type"] = "me_notice";
        deliver(client, message);
    };
    links.push = [this](const EntityId& subscriber, const EntityId& id, const std::vector<AggregateRow>& rows) {
        return deliver(subscriber, Json{{"type", "me_push"}, {"me", id}, {"rows", rows}});
    };
    return links;
}

std::shared_ptr<MEInstance> Platform::create_me(const MEDescriptor& desc, std::vector<AccessKey> vo_keys) {
    auto instance = std::make_shared<MEInstance>(desc, std::move(vo_keys), me_links());
    std::unique_lock lock(instances_mutex_);
    me_instances_[desc.id.name] = instance;
    return instance;
}

void Platform::tick(Timestamp now) {
    set_now(now);
    std::vector<std::shared_ptr<VOInstance>> vos;
    std::vector<std::shared_ptr<MEInstance>> mes;
    {
        std::shared_lock lock(instances_mutex_);
        for (const auto& [_, v] : vo_instances_) vos.push_back(v);
        for (const auto& [_, m] : me_instances_) mes.push_back(m);
    }
    for (const auto& v : vos) v->tick(now);
    for (const auto& m : mes) m->tick(now);
}

HttpResponse Platform::handle_raw(std::string_view raw) {
    try {
        return handle(parse_http_request(raw));
    } catch (const Error& e) {
        return error_response(e);
    } catch (const std::exception& e) {
        return error_response(WireError{ErrorCode::BadRequest, e.what()});
    }
}

HttpResponse Platform::handle(const HttpRequest& req) {
    const auto& path = req.path;
    const bool registry_path = path.rfind("/registry/", 0) == 0;
    const bool me_path = !registry_path && path.rfind("/me/", 0) == 0;
    const bool vo_path = !registry_path && path.rfind("/vo/", 0) == 0;
    if ((registry_path && !layers_.registry) || (me_path && !layers_.me) || (vo_path && !layers_.vo)) {
        return error_response(WireError{ErrorCode::NotFound, "layer not served by this process"});
    }

    RouteDirectory directory{[this](const std::string& name) { return vo(name) != nullptr; },
                             [this](const std::string& name) { return me(name) != nullptr; }};
    const auto routed = route(req, &directory);
    if (const auto* err = std::get_if<WireError>(&routed)) return error_response(*err);
    try {
        return dispatch(std::get<RoutedCall>(routed));
    } catch (const Error& e) {
        return error_response(e);
    } catch (const std::invalid_argument& e) {
        return error_response(WireError{ErrorCode::BadRequest, e.what()});
    } catch (const std::exception& e) {
        return json_response(500, Json{{"code", "INTERNAL"}, {"detail", e.what()}});
    }
}

namespace {

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};

const EntityId& subscriber_of(const Credentials& auth) {
    if (!auth.requester) throw Error(ErrorCode::BadRequest, "policy requests need an X-Requester identity");
    return *auth.requester;
}

}  // namespace

HttpResponse Platform::dispatch(const RoutedCall& routed) {
    const auto need_vo = [this](const std::string& name) {
        auto instance = vo(name);
        if (!instance) throw Error(ErrorCode::NotFound, "no VO named " + name);
        return instance;
    };
    const auto need_me = [this](const std::string& name) {
        auto instance = me(name);
        if (!instance) throw Error(ErrorCode::NotFound, "no ME named " + name);
        return instance;
    };

    return std::visit(
        Overloaded{
            [&](const call::PostObservation& c) {
                const auto ack = need_vo(c.vo)->ingest(c.obs);
                return json_response(200, {{"vo", EntityId::vo(c.vo)}, {"ack", ack == IngestAck::Stored ? "stored" : "stale"}});
            },
            [&](const call::QueryData& c) {
                if (c.target.kind == EntityKind::VO) {
                    const auto rows = need_vo(c.target.name)->query(c.auth, c.range, c.fields);
                    return json_response(200, {{"vo", c.target}, {"observations", rows}});
                }
                const auto rows = need_me(c.target.name)->query(c.auth, c.range, c.view, c.fields);
                return json_response(200, {{"me", c.target}, {"rows", rows}});
            },
            [&](const call::PostPolicy& c) {
                const auto& subscriber = subscriber_of(c.auth);
                if (c.target.kind == EntityKind::VO) {
                    need_vo(c.target.name)->apply_policy(subscriber, c.auth, c.cmd);
                } else {
                    need_me(c.target.name)->apply_policy(subscriber, c.auth, c.cmd);
                }
                return json_response(200, {{"target", c.target}, {"verb", std::string(to_string(c.cmd.verb))}});
            },
            [&](const call::PostActuation& c) {
                const auto ack = need_vo(c.vo)->actuate(c.cmd, c.auth, now() * 1000);
                return json_response(202, {{"window_closes_at_ms", ack.window_closes_at_ms},
                                           {"effective_priority", ack.effective_priority}});
            },
            [&](const call::RegisterVO& c) {
                const auto& id = c.descriptor.id;
                if (id.kind != EntityKind::VO) throw Error(ErrorCode::BadRequest, "VO ids use the vo: kind");
                validate(c.descriptor);
                bool created = false;
                {
                    std::unique_lock lock(instances_mutex_);
                    if (!vo_instances_.contains(id.name)) {
                        VOConfig config{c.descriptor, bound_rwo(id), c.visibility, c.cadence_s, kDefaultConflictWindowMs};
                        vo_instances_[id.name] = std::make_shared<VOInstance>(std::move(config), vo_links());
                        created = true;
                    }
                }
                try {
                    const auto reg = vos_.register_vo(c.descriptor, c.visibility);
                    record("vo_registered", {{"vo", id}, {"revision", reg.revision}});
                    return json_response(reg.updated ? 200 : 201, {{"id", id},
                                                                   {"revision", reg.revision},
                                                                   {"owner_key", key_json(reg.owner_key)},
                                                                   {"updated", reg.updated}});
                } catch (...) {
                    if (created) {
                        std::unique_lock lock(instances_mutex_);
                        vo_instances_.erase(id.name);
                    }
                    throw;
                }
            },
            [&](const call::PostVOStatus& c) {
                const auto revision = vos_.update_status(EntityId::vo(c.vo), c.status);
                return json_response(200, {{"id", EntityId::vo(c.vo)}, {"revision", revision}});
            },
            [&](const call::SearchVO& c) {
                Json results = Json::array();
                for (const auto& hit : vos_.search(c.requirements, c.auth, c.include_offline)) {
                    results.push_back({{"descriptor", hit.descriptor}, {"tier", hit.tier}});
                }
                return json_response(200, {{"results", results}});
            },
            [&](const call::GrantAccess& c) {
                const auto key = c.subject.kind == EntityKind::VO
                                     ? vos_.grant(c.subject, c.holder, c.tier, c.priority, c.auth)
                                     : mes_.grant(c.subject, c.holder, c.tier, c.priority, c.auth);
                record("grant", {{"subject", c.subject}, {"holder", c.holder}, {"tier", c.tier}});
                return json_response(201, key_json(key));
            },
            [&](const call::RegisterME& c) {
                const auto result = composer_.adopt(c.descriptor, c.auth, now());
                Json body{{"descriptor", result.descriptor}, {"reused", result.reused}};
                if (result.owner_key) body["owner_key"] = key_json(*result.owner_key);
                return json_response(201, body);
            },
            [&](const call::ComposeME& c) {
                const auto result = composer_.compose(c.request, c.auth, now());
                record(result.reused ? "me_reused" : "me_composed",
                       {{"me", result.descriptor.id}, {"requester", c.request.requester}});
                Json body{{"descriptor", result.descriptor}, {"reused", result.reused}};
                if (result.owner_key) body["owner_key"] = key_json(*result.owner_key);
                return json_response(result.reused ? 200 : 201, body);
            },
            [&](const call::MEAlert& c) {
                const auto outcome = need_me(c.me)->handle_vo_alert(c.alert, now());
                return json_response(200, {{"outcome", std::string(to_string(outcome.kind))},
                                           {"members", outcome.members},
                                           {"unmet", outcome.unmet}});
            },
            [&](const call::MEStatus& c) { return json_response(200, Json(need_me(c.me)->status(c.auth))); },
        },
        routed);
}

Json Platform::snapshot() const {
    Json vos = Json::array();
    Json mes = Json::array();
    std::vector<std::shared_ptr<VOInstance>> vo_list;
    std::vector<std::shared_ptr<MEInstance>> me_list;
    {
        std::shared_lock lock(instances_mutex_);
        for (const auto& [_, v] : vo_instances_) vo_list.push_back(v);
        for (const auto& [_, m] : me_instances_) me_list.push_back(m);
    }
    for (const auto& v : vo_list) {
        vos.push_back({{"descriptor", v->descriptor()}, {"stored", v->stored_count()}});
    }
    for (const auto& m : me_list) {
        mes.push_back({{"descriptor", redacted(m->descriptor())},
                       {"health", std::string(to_string(m->health()))},
                       {"stored", m->stored_count()}});
    }
    std::lock_guard lock(misc_mutex_);
    return Json{{"now", now_}, {"vos", vos}, {"mes", mes}, {"events", events_.size()}};
}

}  // namespace gridvirt
