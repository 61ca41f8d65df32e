#include "gridvirt/vo_runtime.hpp"

#include <algorithm>

namespace gridvirt {

namespace {

constexpr std::string_view kActuatePrefix = "actuate:";

/// Strict "a is preferred over b" order used for arbitration.
bool preferred(const ActuationCommand& a, const ActuationCommand& b) {
    if (a.priority != b.priority) return a.priority > b.priority;
    const auto ia = a.issuer.str();
    const auto ib = b.issuer.str();
    if (ia != ib) return ia < ib;
    if (a.issued_at != b.issued_at) return a.issued_at < b.issued_at;
    if (a.action != b.action) return a.action < b.action;
    return Json(a).dump() < Json(b).dump();
}

bool contains(const std::vector<std::string>& list, const std::string& value) {
    return std::find(list.begin(), list.end(), value) != list.end();
}

}  // namespace

const ActuationCommand& select_winner(std::span<const ActuationCommand> commands) {
    if (commands.empty()) throw std::invalid_argument("select_winner needs at least one command");
    const ActuationCommand* best = &commands.front();
    for (const auto& cmd : commands.subspan(1)) {
        if (preferred(cmd, *best)) best = &cmd;
    }
    return *best;
}

VOInstance::VOInstance(VOConfig config, VOLinks links)
    : config_(std::move(config)),
      links_(std::move(links)),
      access_(config_.descriptor.id, config_.descriptor.default_tier) {
    if (config_.cadence_s <= 0) throw std::invalid_argument("cadence_s must be positive");
    if (config_.conflict_window_ms <= 0) throw std::invalid_argument("conflict window must be positive");
    status_ = config_.descriptor.status;
    status_.state = VOState::Offline;
    for (const auto& f : config_.descriptor.functionalities) {
        if (f.rfind(kActuatePrefix, 0) == 0) actions_.insert(f.substr(kActuatePrefix.size()));
    }
}

VODescriptor VOInstance::descriptor() const {
    std::lock_guard lock(mutex_);
    auto desc = config_.descriptor;
    desc.status = status_;
    return desc;
}

VOStatus VOInstance::status() const {
    std::lock_guard lock(mutex_);
    return status_;
}

std::size_t VOInstance::stored_count() const {
    std::lock_guard lock(mutex_);
    return store_.size();
}

void VOInstance::install_key(const AccessKey& key, int priority) {
    std::lock_guard lock(mutex_);
    access_.install(key, priority);
}

void VOInstance::revoke_key(const std::string& token) {
    std::lock_guard lock(mutex_);
    access_.revoke(token);
}

void VOInstance::run(Effects& effects) {
    for (auto& effect : effects) effect();
}

Observation VOInstance::filter(const Observation& obs, AccessTier tier, const std::vector<std::string>& wanted) const {
    Observation out = obs;
    out.fields.clear();
    for (const auto& [name, value] : obs.fields) {
        if (!wanted.empty() && !contains(wanted, name)) continue;
        if (!tier_allows(tier, config_.visibility.tier_of(name))) continue;
        out.fields.emplace(name, value);
    }
    return out;
}

void VOInstance::transition(VOState next, Effects& effects) {
    if (status_.state == next) return;
    status_.state = next;
    const VOStatus snapshot = status_;
    const auto vo = id();
    effects.emplace_back([this, vo, snapshot]() {
        if (links_.post_status) links_.post_status(vo, snapshot);
    });
    for (const auto& [subscriber, _] : policies_) {
        effects.emplace_back([this, subscriber = subscriber, alert = VOAlert{vo, snapshot}]() {
            if (links_.alert) links_.alert(subscriber, alert);
        });
    }
}

IngestAck VOInstance::ingest(const Observation& obs, std::optional<Timestamp> received_at, double observed_latency_ms) {
    Effects effects;
    IngestAck ack = IngestAck::Stored;
    {
        std::lock_guard lock(mutex_);
        if (obs.source != config_.rwo) {
            throw Error(ErrorCode::BadRequest, id().str() + " is bound to " + config_.rwo.str() + ", not " + obs.source.str());
        }
        validate(obs);
        if (!store_.empty() && obs.timestamp <= store_.back().timestamp) {
            ack = IngestAck::Stale;
        } else {
            store_.push_back(obs);
            seen_any_ = true;
            status_.last_seen = std::max(status_.last_seen, received_at.value_or(obs.timestamp));
            status_.qos_latency_ms = status_.qos_latency_ms == 0
                                         ? observed_latency_ms
                                         : 0.8 * status_.qos_latency_ms + 0.2 * observed_latency_ms;
            transition(VOState::Online, effects);
            serve_policies(obs, effects);
        }
    }
    run(effects);
    return ack;
}

void VOInstance::serve_policies(const Observation& latest, Effects& effects) {
    for (auto& [subscriber, policy] : policies_) {
        auto filtered = filter(latest, policy.tier, policy.fields);
        if (!filtered.fields.empty()) policy.pending.push_back(std::move(filtered));
        const bool due = !policy.pushed_once || latest.timestamp - policy.last_push >= policy.period_s;
        if (!due || policy.pending.empty()) continue;
        policy.pushed_once = true;
        policy.last_push = latest.timestamp;
        schedule_push(subscriber, std::exchange(policy.pending, {}), false, latest.timestamp, effects);
    }
}

void VOInstance::schedule_push(const EntityId& subscriber, std::vector<Observation> batch, bool is_retry, Timestamp now,
                               Effects& effects) {
    effects.emplace_back([this, subscriber, batch = std::move(batch), is_retry, now]() {
        const bool delivered = !links_.push || links_.push(subscriber, id(), batch);
        bool report_failure = false;
        {
            std::lock_guard lock(mutex_);
            const auto it = policies_.find(subscriber);
            if (it == policies_.end()) return;
            auto& policy = it->second;
            if (delivered) {
                policy.failing = false;
            } else if (!is_retry) {
                policy.retry_batch = batch;
                policy.retry_at = now + kPushRetryDelayS;
            } else {
                policy.failing = true;
                report_failure = true;
            }
        }
        if (report_failure && links_.policy_failing) links_.policy_failing(id(), subscriber);
    });
}

std::vector<Observation> VOInstance::query(const Credentials& auth, TimeRange range,
                                           const std::vector<std::string>& fields) const {
    if (range.from > range.to) throw Error(ErrorCode::BadRequest, "inverted time range");
    std::lock_guard lock(mutex_);
    const auto grant = access_.authorize(auth);
    std::vector<Observation> out;
    const auto first = std::lower_bound(store_.begin(), store_.end(), range.from,
                                        [](const Observation& o, Timestamp t) { return o.timestamp < t; });
    for (auto it = first; it != store_.end() && it->timestamp <= range.to; ++it) {
        out.push_back(filter(*it, grant.tier, fields));
    }
    return out;
}

void VOInstance::apply_policy(const EntityId& subscriber, const Credentials& auth, const UpdateCommand& cmd) {
    std::lock_guard lock(mutex_);
    if (auth.tokens.empty()) throw Error(ErrorCode::Unauthorized, "periodic updates require a friend or private key");
    if (auth.requester && *auth.requester != subscriber) {
        throw Error(ErrorCode::Forbidden, "policy subscriber must be the key holder");
    }
    Credentials as_subscriber = auth;
    as_subscriber.requester = subscriber;
    const auto grant = access_.authorize(as_subscriber);
    if (!tier_allows(grant.tier, AccessTier::Friend)) {
        throw Error(ErrorCode::Forbidden, "periodic updates require a friend or private key");
    }
    validate(cmd);
    if (cmd.verb == UpdateVerb::StopPeriodic) {
        policies_.erase(subscriber);
        return;
    }
    auto& policy = policies_[subscriber];
    policy.period_s = *cmd.period_s;
    policy.fields = cmd.fields;
    policy.tier = grant.tier;
}

std::vector<PushPolicyState> VOInstance::policies() const {
    std::lock_guard lock(mutex_);
    std::vector<PushPolicyState> out;
    for (const auto& [subscriber, p] : policies_) {
        out.push_back({subscriber, p.period_s, p.fields, p.tier, p.last_push, p.failing});
    }
    return out;
}

ActuationAck VOInstance::actuate(const ActuationCommand& cmd, const Credentials& auth, std::int64_t now_ms) {
    Effects effects;
    ActuationAck ack;
    {
        std::lock_guard lock(mutex_);
        if (cmd.target != id()) throw Error(ErrorCode::BadRequest, "command targets " + cmd.target.str());
        Credentials as_issuer = auth;
        as_issuer.requester = cmd.issuer;
        if (auth.tokens.empty()) throw Error(ErrorCode::Forbidden, "actuation requires a friend or private key");
        const auto grant = access_.authorize(as_issuer);
        if (!tier_allows(grant.tier, AccessTier::Friend)) {
            throw Error(ErrorCode::Forbidden, "actuation requires a friend or private key");
        }
        if (!actions_.contains(cmd.action)) {
            throw Error(ErrorCode::NotFound, id().str() + " offers no action '" + cmd.action + "'");
        }
        close_window_locked(now_ms, effects);
        if (window_.empty()) window_closes_at_ms_ = now_ms + config_.conflict_window_ms;
        auto queued = cmd;
        queued.priority = grant.priority;
        window_.push_back(std::move(queued));
        ack.window_closes_at_ms = window_closes_at_ms_;
        ack.effective_priority = grant.priority;
    }
    run(effects);
    return ack;
}

std::optional<ActuationOutcome> VOInstance::close_window_locked(std::int64_t now_ms, Effects& effects) {
    if (window_.empty() || now_ms < window_closes_at_ms_) return std::nullopt;
    ActuationOutcome outcome;
    outcome.winner = select_winner(window_);
    for (const auto& cmd : window_) {
        if (&cmd == &select_winner(window_)) continue;
        outcome.rejected.push_back(cmd);
    }
    window_.clear();
    effects.emplace_back([this, outcome]() {
        if (links_.forward_to_hal) links_.forward_to_hal(outcome.winner);
        if (!links_.actuation_result) return;
        links_.actuation_result(outcome.winner.issuer, outcome);
        for (const auto& loser : outcome.rejected) links_.actuation_result(loser.issuer, outcome);
    });
    return outcome;
}

std::optional<ActuationOutcome> VOInstance::close_window(std::int64_t now_ms) {
    Effects effects;
    std::optional<ActuationOutcome> outcome;
    {
        std::lock_guard lock(mutex_);
        outcome = close_window_locked(now_ms, effects);
    }
    run(effects);
    return outcome;
}

std::optional<VOState> VOInstance::monitor_tick(Timestamp now) {
    Effects effects;
    std::optional<VOState> changed;
    {
        std::lock_guard lock(mutex_);
        if (!seen_any_) return std::nullopt;
        const double silent = static_cast<double>(now - status_.last_seen);
        const double cadence = static_cast<double>(config_.cadence_s);
        VOState next = status_.state;
        if (silent >= kOfflineAfterCadences * cadence) {
            next = VOState::Offline;
        } else if (silent >= kDegradedAfterCadences * cadence) {
            next = VOState::Degraded;
        }
        if (next != status_.state) {
            transition(next, effects);
            changed = next;
        }
    }
    run(effects);
    return changed;
}

void VOInstance::tick(Timestamp now) {
    monitor_tick(now);
    Effects effects;
    {
        std::lock_guard lock(mutex_);
        for (auto& [subscriber, policy] : policies_) {
            if (policy.retry_batch && now >= policy.retry_at) {
                schedule_push(subscriber, std::move(*policy.retry_batch), true, now, effects);
                policy.retry_batch.reset();
            }
        }
        close_window_locked(now * 1000, effects);
    }
    run(effects);
}

}  // namespace gridvirt
