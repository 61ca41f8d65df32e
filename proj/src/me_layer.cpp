#include "gridvirt/me_layer.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

namespace gridvirt {

// --- aggregate --------------------------------------------------------------

namespace {

Timestamp bucket_of(Timestamp t, std::int64_t width) {
    Timestamp q = t / width;
    if (t % width != 0 && t < 0) --q;
    return q * width;
}

struct Accumulator {
    double sum = 0;
    double min = 0;
    double max = 0;
    std::size_t count = 0;
    std::tuple<Timestamp, std::string, double> last{};

    void add(double v, Timestamp t, const std::string& source) {
        if (count == 0) {
            min = max = v;
            last = {t, source, v};
        } else {
            min = std::min(min, v);
            max = std::max(max, v);
            last = std::max(last, std::tuple<Timestamp, std::string, double>{t, source, v});
        }
        sum += v;
        ++count;
    }

    double result(Reduce reduce) const {
        switch (reduce) {
            case Reduce::Sum: return sum;
            case Reduce::Mean: return sum / static_cast<double>(count);
            case Reduce::Min: return min;
            case Reduce::Max: return max;
            case Reduce::Last: return std::get<2>(last);
        }
        return sum;
    }
};

struct Cell {
    std::map<std::string, Accumulator> fields;
    std::set<std::string> sources;
};

}  // namespace

std::vector<AggregateRow> aggregate(std::span<const Observation> observations, const ViewSpec& view) {
    validate(view);
    std::map<std::pair<Timestamp, std::string>, Cell> cells;
    for (const auto& obs : observations) {
        if (obs.quality < kMinQuality) continue;
        const auto source = obs.source.str();
        const auto key = std::make_pair(bucket_of(obs.timestamp, view.time_bucket_s),
                                        view.group_by == GroupBy::PerSource ? source : std::string(kAllSourcesGroup));
        for (const auto& field : view.fields) {
            const auto it = obs.fields.find(field);
            if (it == obs.fields.end()) continue;
            const auto value = as_number(it->second);
            if (!value) continue;
            auto& cell = cells[key];
            cell.fields[field].add(*value, obs.timestamp, source);
            cell.sources.insert(source);
        }
    }
    std::vector<AggregateRow> rows;
    rows.reserve(cells.size());
    for (const auto& [key, cell] : cells) {
        AggregateRow row;
        row.bucket_start = key.first;
        row.group = key.second;
        for (const auto& [field, acc] : cell.fields) row.values[field] = acc.result(view.reduce);
        row.contributing_sources = static_cast<int>(cell.sources.size());
        rows.push_back(std::move(row));
    }
    return rows;
}

// --- enums and JSON ---------------------------------------------------------

std::string_view to_string(Reconfigure kind) {
    switch (kind) {
        case Reconfigure::Unchanged: return "unchanged";
        case Reconfigure::Recomposed: return "recomposed";
        case Reconfigure::RequirementUnmet: return "requirement_unmet";
    }
    return "unchanged";
}

Reconfigure reconfigure_from_string(std::string_view text) {
    if (text == "unchanged") return Reconfigure::Unchanged;
    if (text == "recomposed") return Reconfigure::Recomposed;
    if (text == "requirement_unmet") return Reconfigure::RequirementUnmet;
    throw Error(ErrorCode::BadRequest, "unknown reconfigure outcome '" + std::string(text) + "'");
}

void to_json(Json& j, const MENotice& notice) {
    j = Json{{"me", notice.me},
             {"health", std::string(to_string(notice.health))},
             {"outcome", std::string(to_string(notice.outcome.kind))},
             {"members", notice.outcome.members},
             {"unmet", notice.outcome.unmet},
             {"at", notice.at}};
}

void from_json(const Json& j, MENotice& notice) {
    notice.me = j.at("me").get<EntityId>();
    notice.health = me_health_from_string(j.at("health").get<std::string>());
    notice.outcome.kind = reconfigure_from_string(j.at("outcome").get<std::string>());
    notice.outcome.members = j.at("members").get<std::vector<EntityId>>();
    notice.outcome.unmet = j.at("unmet").get<std::vector<std::string>>();
    notice.at = j.at("at").get<Timestamp>();
}

void to_json(Json& j, const MEStatusReport& report) {
    j = Json{{"me", report.me},
             {"health", std::string(to_string(report.health))},
             {"members", report.members},
             {"unmet", report.unmet}};
}

void from_json(const Json& j, MEStatusReport& report) {
    report.me = j.at("me").get<EntityId>();
    report.health = me_health_from_string(j.at("health").get<std::string>());
    report.members = j.at("members").get<std::vector<EntityId>>();
    report.unmet = j.at("unmet").get<std::vector<std::string>>();
}

MEDescriptor redacted(MEDescriptor desc) {
    for (auto& m : desc.members) m.key.token.clear();
    return desc;
}

MEMember member_for(const SearchHit& hit, const EntityId& me, const std::vector<AccessKey>& keys) {
    MEMember member;
    member.vo_id = hit.descriptor.id;
    member.key = AccessKey{hit.descriptor.id, AccessTier::Public, "", me};
    for (const auto& key : keys) {
        if (key.subject != hit.descriptor.id || key.holder != me) continue;
        if (member.key.token.empty() || static_cast<int>(key.tier) > static_cast<int>(member.key.tier)) {
            member.key = key;
        }
    }
    return member;
}

// --- MEInstance -------------------------------------------------------------

MEInstance::MEInstance(MEDescriptor desc, std::vector<AccessKey> vo_keys, MELinks links)
    : id_(desc.id),
      view_(desc.view),
      links_(std::move(links)),
      desc_(std::move(desc)),
      vo_keys_(std::move(vo_keys)),
      access_(desc_.id, desc_.exposure.min_tier()) {
    validate(view_);
    for (const auto& m : desc_.members) members_.emplace(m.vo_id, make_member(m));
}

MEInstance::Member MEInstance::make_member(const MEMember& m) const {
    Member out;
    out.member = m;
    if (links_.describe) {
        if (const auto d = links_.describe(m.vo_id)) {
            out.functionalities = d->functionalities;
            out.state = d->status.state;
        }
    }
    return out;
}

MEDescriptor MEInstance::descriptor() const {
    std::lock_guard lock(mutex_);
    auto desc = desc_;
    desc.members.clear();
    for (const auto& [_, m] : members_) desc.members.push_back(m.member);
    return desc;
}

MEHealth MEInstance::health() const {
    std::lock_guard lock(mutex_);
    return health_locked();
}

MEHealth MEInstance::health_locked() const {
    if (!unmet_.empty()) return MEHealth::RequirementUnmet;
    for (const auto& [_, m] : members_) {
        if (m.state != VOState::Online) return MEHealth::Degraded;
    }
    return MEHealth::Ok;
}

std::vector<EntityId> MEInstance::member_ids() const {
    std::vector<EntityId> ids;
    for (const auto& [id, _] : members_) ids.push_back(id);
    return ids;
}

void MEInstance::install_key(const AccessKey& key, int priority) {
    std::lock_guard lock(mutex_);
    access_.install(key, priority);
}

void MEInstance::revoke_key(const std::string& token) {
    std::lock_guard lock(mutex_);
    access_.revoke(token);
}

void MEInstance::add_client(const EntityId& client) {
    std::lock_guard lock(mutex_);
    clients_.insert(client);
}

Credentials MEInstance::vo_credentials() const {
    Credentials auth;
    auth.requester = id_;
    for (const auto& key : vo_keys_) auth.tokens.push_back(key.token);
    return auth;
}

void MEInstance::widen_exposure_locked(const VODescriptor& vo, const VisibilityMap& visibility) {
    for (const auto& field : view_.fields) {
        if (!visibility.entries().contains(field) && !vo.offers("measure:" + field)) continue;
        desc_.exposure.set(field, std::max(desc_.exposure.tier_of(field), visibility.tier_of(field)));
    }
    access_.set_gate(desc_.exposure.min_tier());
}

void MEInstance::store(const EntityId& vo, const std::vector<Observation>& batch) {
    auto& series = store_[vo];
    for (auto obs : batch) {
        obs.source = vo;
        const auto pos = std::lower_bound(series.begin(), series.end(), obs.timestamp,
                                          [](const Observation& o, Timestamp t) { return o.timestamp < t; });
        if (pos != series.end() && pos->timestamp == obs.timestamp) continue;
        series.insert(pos, std::move(obs));
    }
}

void MEInstance::attach(Member& m, Timestamp now) {
    Credentials auth;
    auth.requester = id_;
    if (!m.member.key.token.empty()) auth.tokens.push_back(m.member.key.token);
    m.pulled = true;
    if (!m.member.key.token.empty() && tier_allows(m.member.key.tier, AccessTier::Friend) && links_.post_policy) {
        const auto period = std::min<std::int64_t>(view_.time_bucket_s, kMinuteBucket);
        links_.post_policy(m.member.vo_id, auth, UpdateCommand::start(period, view_.fields));
        m.pulled = false;
    }
    if (links_.fetch) {
        const auto backlog = links_.fetch(m.member.vo_id, auth, TimeRange{0, now}, view_.fields);
        std::lock_guard lock(mutex_);
        store(m.member.vo_id, backlog);
    }
    m.pulled_until = now;
}

void MEInstance::start(Timestamp now) {
    std::vector<Member> pending;
    {
        std::lock_guard lock(mutex_);
        for (const auto& [_, m] : members_) pending.push_back(m);
    }
    for (auto& m : pending) {
        try {
            attach(m, now);
        } catch (const Error&) {
            m.pulled = true;
        }
        std::lock_guard lock(mutex_);
        if (const auto it = members_.find(m.member.vo_id); it != members_.end()) {
            it->second.pulled = m.pulled;
            it->second.pulled_until = m.pulled_until;
        }
    }
}

bool MEInstance::ingest(const EntityId& vo, const std::vector<Observation>& batch) {
    std::lock_guard lock(mutex_);
    if (!members_.contains(vo)) return false;
    store(vo, batch);
    return true;
}

std::vector<AggregateRow> MEInstance::rows_locked(TimeRange range, AccessTier tier,
                                                  const std::vector<std::string>& fields) const {
    std::vector<Observation> selected;
    for (const auto& [_, series] : store_) {
        const auto first = std::lower_bound(series.begin(), series.end(), range.from,
                                            [](const Observation& o, Timestamp t) { return o.timestamp < t; });
        for (auto it = first; it != series.end() && it->timestamp <= range.to; ++it) selected.push_back(*it);
    }
    auto rows = aggregate(selected, view_);
    std::vector<AggregateRow> out;
    for (auto& row : rows) {
        std::erase_if(row.values, [&](const auto& entry) {
            if (!fields.empty() && std::find(fields.begin(), fields.end(), entry.first) == fields.end()) return true;
            return !tier_allows(tier, desc_.exposure.tier_of(entry.first));
        });
        if (!row.values.empty()) out.push_back(std::move(row));
    }
    return out;
}

std::vector<AggregateRow> MEInstance::query(const Credentials& auth, TimeRange range,
                                            const std::optional<ViewSpec>& view,
                                            const std::vector<std::string>& fields) const {
    if (range.from > range.to) throw Error(ErrorCode::BadRequest, "inverted time range");
    std::lock_guard lock(mutex_);
    const auto grant = access_.authorize(auth);
    if (view && (view->time_bucket_s != view_.time_bucket_s || view->group_by != view_.group_by ||
                 view->reduce != view_.reduce)) {
        throw Error(ErrorCode::BadRequest, id_.str() + " does not serve the requested view");
    }
    return rows_locked(range, grant.tier, fields);
}

MEStatusReport MEInstance::status(const Credentials& auth) const {
    std::lock_guard lock(mutex_);
    access_.authorize(auth);
    return {id_, health_locked(), member_ids(), unmet_};
}

std::vector<std::string> MEInstance::uncovered() const {
    std::vector<std::string> missing;
    for (const auto& req : desc_.requirements) {
        const bool covered = std::any_of(members_.begin(), members_.end(), [&](const auto& entry) {
            const auto& f = entry.second.functionalities;
            return std::find(f.begin(), f.end(), req) != f.end();
        });
        if (!covered) missing.push_back(req);
    }
    return missing;
}

void MEInstance::announce(const ReconfigureOutcome& outcome, Timestamp now) {
    std::vector<EntityId> clients;
    MENotice notice;
    {
        std::lock_guard lock(mutex_);
        clients.assign(clients_.begin(), clients_.end());
        notice = MENotice{id_, health_locked(), outcome, now};
    }
    if (!links_.notify) return;
    for (const auto& client : clients) links_.notify(client, notice);
}

ReconfigureOutcome MEInstance::fill(const std::vector<std::string>& missing, bool removed_any, Timestamp now) {
    std::vector<std::string> still;
    bool added_any = false;
    for (const auto& req : missing) {
        const auto hits = links_.search ? links_.search({req}, vo_credentials()) : std::vector<SearchHit>{};
        bool covered = false;
        for (const auto& hit : hits) {
            {
                std::lock_guard lock(mutex_);
                if (members_.contains(hit.descriptor.id)) {
                    covered = true;
                    continue;
                }
            }
            auto m = make_member(member_for(hit, id_, vo_keys_));
            m.functionalities = hit.descriptor.functionalities;
            m.state = hit.descriptor.status.state;
            {
                std::lock_guard lock(mutex_);
                members_.emplace(m.member.vo_id, m);
            }
            try {
                attach(m, now);
            } catch (const Error&) {
                std::lock_guard lock(mutex_);
                members_.erase(m.member.vo_id);
                continue;
            }
            const auto visibility = links_.visibility ? links_.visibility(hit.descriptor.id) : std::nullopt;
            std::lock_guard lock(mutex_);
            members_[m.member.vo_id] = m;
            if (visibility) widen_exposure_locked(hit.descriptor, *visibility);
            covered = true;
            added_any = true;
        }
        if (!covered) still.push_back(req);
    }

    ReconfigureOutcome outcome;
    std::vector<MEMember> members;
    {
        std::lock_guard lock(mutex_);
        unmet_ = still;
        outcome.members = member_ids();
        outcome.unmet = still;
        for (const auto& [_, m] : members_) members.push_back(m.member);
    }
    if (!still.empty()) {
        outcome.kind = Reconfigure::RequirementUnmet;
    } else if (removed_any || added_any) {
        outcome.kind = Reconfigure::Recomposed;
    }
    if (added_any || removed_any) {
        if (links_.update_registry) links_.update_registry(id_, members);
    }
    if (outcome.kind != Reconfigure::Unchanged) announce(outcome, now);
    return outcome;
}

ReconfigureOutcome MEInstance::handle_vo_alert(const VOAlert& alert, Timestamp now) {
    std::lock_guard reconfigure(reconfigure_mutex_);
    Member removed;
    std::vector<std::string> missing;
    std::optional<ReconfigureOutcome> health_note;
    {
        std::lock_guard lock(mutex_);
        const auto it = members_.find(alert.vo_id);
        if (it == members_.end()) return {Reconfigure::Unchanged, member_ids(), unmet_};
        if (alert.status.state != VOState::Offline) {
            const auto before = health_locked();
            it->second.state = alert.status.state;
            ReconfigureOutcome outcome{Reconfigure::Unchanged, member_ids(), unmet_};
            if (before == health_locked()) return outcome;
            health_note = outcome;
        } else {
            removed = it->second;
            members_.erase(it);
            missing = uncovered();
            missing.insert(missing.end(), unmet_.begin(), unmet_.end());
            missing = normalized(std::move(missing));
        }
    }
    if (health_note) {
        announce(*health_note, now);
        return *health_note;
    }
    if (!removed.pulled && links_.post_policy) {
        Credentials auth;
        auth.requester = id_;
        auth.tokens.push_back(removed.member.key.token);
        try {
            links_.post_policy(removed.member.vo_id, auth, UpdateCommand::stop());
        } catch (const Error&) {
        }
    }
    return fill(missing, true, now);
}

ReconfigureOutcome MEInstance::recover(Timestamp now) {
    std::lock_guard reconfigure(reconfigure_mutex_);
    std::vector<std::string> missing;
    {
        std::lock_guard lock(mutex_);
        if (unmet_.empty()) return {Reconfigure::Unchanged, member_ids(), {}};
        missing = unmet_;
    }
    return fill(missing, false, now);
}

void MEInstance::apply_policy(const EntityId& subscriber, const Credentials& auth, const UpdateCommand& cmd) {
    std::lock_guard lock(mutex_);
    if (auth.requester && *auth.requester != subscriber) {
        throw Error(ErrorCode::Forbidden, "policy subscriber must be the key holder");
    }
    Credentials as_subscriber = auth;
    as_subscriber.requester = subscriber;
    const auto grant = access_.authorize(as_subscriber);
    validate(cmd);
    if (cmd.verb == UpdateVerb::StopPeriodic) {
        subscriptions_.erase(subscriber);
        return;
    }
    auto& sub = subscriptions_[subscriber];
    sub.period_s = *cmd.period_s;
    sub.fields = cmd.fields;
    sub.tier = grant.tier;
}

void MEInstance::tick(Timestamp now) {
    std::vector<Member> snapshot;
    {
        std::lock_guard lock(mutex_);
        for (const auto& [_, m] : members_) snapshot.push_back(m);
    }
    if (links_.describe) {
        for (const auto& m : snapshot) {
            const auto d = links_.describe(m.member.vo_id);
            if (d && d->status.state != m.state) handle_vo_alert({m.member.vo_id, d->status}, now);
        }
    }

    {
        std::lock_guard lock(mutex_);
        snapshot.clear();
        for (const auto& [_, m] : members_) {
            if (m.pulled) snapshot.push_back(m);
        }
    }
    for (const auto& m : snapshot) {
        if (!links_.fetch || now <= m.pulled_until) continue;
        Credentials auth;
        auth.requester = id_;
        if (!m.member.key.token.empty()) auth.tokens.push_back(m.member.key.token);
        std::vector<Observation> batch;
        try {
            batch = links_.fetch(m.member.vo_id, auth, TimeRange{m.pulled_until + 1, now}, view_.fields);
        } catch (const Error&) {
            continue;
        }
        std::lock_guard lock(mutex_);
        const auto it = members_.find(m.member.vo_id);
        if (it == members_.end()) continue;
        store(m.member.vo_id, batch);
        it->second.pulled_until = now;
    }

    if (!links_.push) return;
    const auto closed_end = bucket_of(now, view_.time_bucket_s);
    std::vector<std::pair<EntityId, std::vector<AggregateRow>>> outgoing;
    {
        std::lock_guard lock(mutex_);
        for (auto& [subscriber, sub] : subscriptions_) {
            if (sub.last_push != 0 && now - sub.last_push < sub.period_s) continue;
            if (closed_end <= sub.next_bucket) continue;
            outgoing.emplace_back(subscriber, rows_locked({sub.next_bucket, closed_end - 1}, sub.tier, sub.fields));
        }
    }
    for (const auto& [subscriber, rows] : outgoing) {
        const bool delivered = links_.push(subscriber, id_, rows);
        std::lock_guard lock(mutex_);
        const auto it = subscriptions_.find(subscriber);
        if (delivered && it != subscriptions_.end()) {
            it->second.next_bucket = closed_end;
            it->second.last_push = now;
        }
    }
}

std::size_t MEInstance::stored_count() const {
    std::lock_guard lock(mutex_);
    std::size_t n = 0;
    for (const auto& [_, series] : store_) n += series.size();
    return n;
}

// --- CompositionManager -----------------------------------------------------

CompositionManager::CompositionManager(VORegistry& vos, MERegistry& mes, Hooks hooks)
    : vos_(vos), mes_(mes), hooks_(std::move(hooks)) {}

namespace {

VisibilityMap exposure_for(const ViewSpec& view, AccessTier floor, const std::vector<MEMember>& members,
                           VORegistry& vos) {
    VisibilityMap exposure;
    for (const auto& field : view.fields) {
        AccessTier tier = floor;
        for (const auto& m : members) {
            const auto vis = vos.visibility(m.vo_id);
            const auto desc = vos.get(m.vo_id);
            if (!vis || !desc) continue;
            // An unlisted field the VO measures is private there, so it stays private here.
            if (!vis->entries().contains(field) && !desc->offers("measure:" + field)) continue;
            tier = std::max(tier, vis->tier_of(field));
        }
        exposure.set(field, tier);
    }
    return exposure;
}

}  // namespace

Composition CompositionManager::compose(const ComposeRequest& req, const Credentials& auth, Timestamp now) {
    if (req.name.kind != EntityKind::ME || !is_valid_name(req.name.name)) {
        throw Error(ErrorCode::BadRequest, "compose needs an me: name");
    }
    if (req.requirements.empty()) throw Error(ErrorCode::BadRequest, "compose needs at least one requirement");
    validate(req.view);
    if (auth.requester && *auth.requester != req.requester) {
        throw Error(ErrorCode::Forbidden, "requester does not match the presented identity");
    }

    std::lock_guard lock(mutex_);
    std::vector<AccessKey> vo_keys;
    std::vector<AccessKey> me_keys;
    for (const auto& token : auth.tokens) {
        std::optional<AccessKey> key = vos_.lookup(token);
        const bool is_vo_key = key.has_value();
        if (!key) key = mes_.lookup(token);
        if (!key) throw Error(ErrorCode::Unauthorized, "unknown or revoked key presented to compose");
        if (key->holder != req.requester && key->holder != req.name) {
            throw Error(ErrorCode::Unauthorized, "key held by " + key->holder.str() + " presented by " + req.requester.str());
        }
        (is_vo_key ? vo_keys : me_keys).push_back(*key);
    }

    for (const auto& existing : mes_.find(req.requirements, req.view)) {
        const bool holds_key = std::any_of(me_keys.begin(), me_keys.end(), [&](const AccessKey& k) {
            return k.subject == existing.id && k.holder == req.requester;
        });
        const bool open = existing.exposure.min_tier() == AccessTier::Public;
        if (!holds_key && !open && existing.owner != req.requester) continue;
        const auto instance = hooks_.find ? hooks_.find(existing.id) : nullptr;
        if (!instance) continue;
        instance->add_client(req.requester);
        if (instance->health() == MEHealth::RequirementUnmet) instance->recover(now);
        return {redacted(instance->descriptor()), true, std::nullopt};
    }

    if (mes_.get(req.name)) throw Error(ErrorCode::ConflictRejected, req.name.str() + " already exists with another view");

    Credentials search_auth;
    search_auth.requester = req.name;
    for (const auto& key : vo_keys) search_auth.tokens.push_back(key.token);
    std::map<EntityId, SearchHit> chosen;
    for (const auto& requirement : req.requirements) {
        const auto hits = vos_.search({requirement}, search_auth);
        if (hits.empty()) throw Error(ErrorCode::Unavailable, "no reachable VO offers " + requirement);
        for (const auto& hit : hits) chosen.emplace(hit.descriptor.id, hit);
    }

    MEDescriptor desc;
    desc.id = req.name;
    desc.owner = req.owner;
    desc.view = req.view;
    desc.requirements = req.requirements;
    desc.priority = req.priority;
    for (const auto& [_, hit] : chosen) desc.members.push_back(member_for(hit, req.name, vo_keys));
    desc.exposure = exposure_for(req.view, req.exposure_tier, desc.members, vos_);

    const auto instance = hooks_.instantiate(desc, vo_keys);
    const auto registration = mes_.register_me(desc);
    instance->add_client(req.requester);
    instance->start(now);
    return {redacted(instance->descriptor()), false, registration.owner_key};
}

Composition CompositionManager::adopt(const MEDescriptor& desc, const Credentials& auth, Timestamp now) {
    validate(desc.view);
    if (desc.id.kind != EntityKind::ME) throw Error(ErrorCode::BadRequest, "ME ids use the me: kind");
    if (auth.requester && *auth.requester != desc.owner) {
        throw Error(ErrorCode::Forbidden, "only the owner may register " + desc.id.str());
    }
    std::lock_guard lock(mutex_);
    if (const auto existing = mes_.get(desc.id)) {
        if (existing->owner != desc.owner) {
            throw Error(ErrorCode::ConflictRejected, desc.id.str() + " is registered to " + existing->owner.str());
        }
        const auto instance = hooks_.find ? hooks_.find(desc.id) : nullptr;
        if (instance) return {redacted(instance->descriptor()), true, std::nullopt};
    }
    std::vector<AccessKey> vo_keys;
    for (const auto& m : desc.members) {
        if (m.key.token.empty()) {
            const auto vo = vos_.get(m.vo_id);
            if (!vo) throw Error(ErrorCode::NotFound, m.vo_id.str() + " is not registered");
            if (vo->default_tier != AccessTier::Public) {
                throw Error(ErrorCode::Unauthorized, m.vo_id.str() + " needs a key");
            }
            continue;
        }
        const auto key = vos_.lookup(m.key.token);
        if (!key || key->subject != m.vo_id || key->holder != desc.id) {
            throw Error(ErrorCode::Unauthorized, "member key for " + m.vo_id.str() + " is not valid for " + desc.id.str());
        }
        vo_keys.push_back(*key);
    }
    auto stored = desc;
    for (auto& m : stored.members) {
        if (const auto key = vos_.lookup(m.key.token)) m.key = *key;
    }
    const auto instance = hooks_.instantiate(stored, vo_keys);
    const auto registration = mes_.register_me(stored);
    instance->add_client(desc.owner);
    instance->start(now);
    return {redacted(instance->descriptor()), registration.updated, registration.owner_key};
}

}  // namespace gridvirt
