#pragma once

// VO execution environment: one VOInstance per virtual object, combining the
// Execution Manager (status and QoS monitoring), the Access Controller
// (tiered keys, actuation arbitration) and the Execution Container (data
// store, periodic pushes, on-demand queries).
//
// A VOInstance is a single logical actor. Public methods serialize on an
// internal mutex; every outbound effect (registry POST, ME alert, push, HAL
// forward) runs after the mutex is released, so callbacks may re-enter other
// actors freely.

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "gridvirt/access.hpp"
#include "gridvirt/core.hpp"
#include "gridvirt/descriptors.hpp"
#include "gridvirt/wire.hpp"

namespace gridvirt {

/// Result of an arbitration window.
struct ActuationOutcome {
    ActuationCommand winner;
    std::vector<ActuationCommand> rejected;  // each answered CONFLICT_REJECTED naming the winner
};

/// Deterministic winner of one window: highest priority, then the
/// lexicographically smallest issuer, then earliest issue time; remaining
/// ties fall back to action and argument encoding so the choice never
/// depends on arrival order. `commands` must be non-empty.
const ActuationCommand& select_winner(std::span<const ActuationCommand> commands);

/// Staleness thresholds as multiples of the device cadence.
inline constexpr double kDegradedAfterCadences = 1.5;
inline constexpr double kOfflineAfterCadences = 3.0;
inline constexpr std::int64_t kDefaultConflictWindowMs = 1000;
inline constexpr Timestamp kPushRetryDelayS = 1;

/// Outbound connections of a VO. Unset callbacks are skipped.
struct VOLinks {
    /// POST /registry/vo/{name}/status
    std::function<void(const EntityId& vo, const VOStatus& status)> post_status;
    /// Status change notice to a subscribed ME.
    std::function<void(const EntityId& subscriber, const VOAlert& alert)> alert;
    /// Periodic push; false means delivery failed.
    std::function<bool(const EntityId& subscriber, const EntityId& vo, const std::vector<Observation>& batch)> push;
    /// A push policy failed its retry as well.
    std::function<void(const EntityId& vo, const EntityId& subscriber)> policy_failing;
    /// Window winner handed to the hardware abstraction layer.
    std::function<void(const ActuationCommand& cmd)> forward_to_hal;
    /// Window result reported back to each issuer.
    std::function<void(const EntityId& issuer, const ActuationOutcome& outcome)> actuation_result;
};

struct VOConfig {
    VODescriptor descriptor;
    EntityId rwo;  // the one RWO this VO virtualizes
    VisibilityMap visibility;
    std::int64_t cadence_s = 60;
    std::int64_t conflict_window_ms = kDefaultConflictWindowMs;
};

enum class IngestAck { Stored, Stale };

struct ActuationAck {
    std::int64_t window_closes_at_ms = 0;
    int effective_priority = 0;
};

/// Snapshot of one push policy, for inspection and reports.
struct PushPolicyState {
    EntityId subscriber;
    std::int64_t period_s = 0;
    std::vector<std::string> fields;
    AccessTier tier = AccessTier::Friend;
    Timestamp last_push = 0;
    bool failing = false;
};

class VOInstance {
public:
    VOInstance(VOConfig config, VOLinks links);

    const EntityId& id() const { return config_.descriptor.id; }
    VODescriptor descriptor() const;
    VOStatus status() const;
    const VisibilityMap& visibility() const { return config_.visibility; }
    std::int64_t cadence_s() const { return config_.cadence_s; }

    // Access Controller -----------------------------------------------------

    void install_key(const AccessKey& key, int priority);
    void revoke_key(const std::string& token);

    // Execution Container ---------------------------------------------------

    /// Appends a reading from the bound RWO. Throws Error(BadRequest) on a
    /// source mismatch; an out-of-order reading is dropped and acked Stale.
    /// `received_at` (default: the reading's own timestamp) feeds the
    /// staleness monitor.
    IngestAck ingest(const Observation& obs, std::optional<Timestamp> received_at = std::nullopt,
                     double observed_latency_ms = 0);

    /// Stored observations in range, each filtered to the fields the caller's
    /// tier may read (and to `fields` when non-empty). Over-tier fields are
    /// silently omitted. Throws Error(Unauthorized | Forbidden | BadRequest).
    std::vector<Observation> query(const Credentials& auth, TimeRange range,
                                   const std::vector<std::string>& fields = {}) const;

    /// Creates, updates or removes the caller's push schedule. Requires a
    /// FRIEND or better key held by `subscriber`.
    void apply_policy(const EntityId& subscriber, const Credentials& auth, const UpdateCommand& cmd);

    std::vector<PushPolicyState> policies() const;

    /// Queues a command in the current conflict window. The issuer must hold
    /// FRIEND or better; its priority comes from its grant, not the request.
    ActuationAck actuate(const ActuationCommand& cmd, const Credentials& auth, std::int64_t now_ms);

    /// Closes the window when due and returns its outcome.
    std::optional<ActuationOutcome> close_window(std::int64_t now_ms);

    // Execution Manager -----------------------------------------------------

    /// Staleness check. Returns the new state when a transition happened.
    std::optional<VOState> monitor_tick(Timestamp now);

    /// monitor_tick plus push retries and window closing.
    void tick(Timestamp now);

    std::size_t stored_count() const;

private:
    struct Policy {
        std::int64_t period_s = 0;
        std::vector<std::string> fields;
        AccessTier tier = AccessTier::Friend;
        Timestamp last_push = 0;
        bool pushed_once = false;
        std::vector<Observation> pending;  // collected since the last push
        std::optional<std::vector<Observation>> retry_batch;
        Timestamp retry_at = 0;
        bool failing = false;
    };

    using Effects = std::vector<std::function<void()>>;

    Observation filter(const Observation& obs, AccessTier tier, const std::vector<std::string>& wanted) const;
    void transition(VOState next, Effects& effects);
    void serve_policies(const Observation& latest, Effects& effects);
    void schedule_push(const EntityId& subscriber, std::vector<Observation> batch, bool is_retry, Timestamp now,
                       Effects& effects);
    std::optional<ActuationOutcome> close_window_locked(std::int64_t now_ms, Effects& effects);
    static void run(Effects& effects);

    VOConfig config_;
    VOLinks links_;
    mutable std::mutex mutex_;
    AccessController access_;
    VOStatus status_;
    bool seen_any_ = false;
    std::vector<Observation> store_;
    std::map<EntityId, Policy> policies_;
    std::set<std::string> actions_;
    std::vector<ActuationCommand> window_;
    std::int64_t window_closes_at_ms_ = 0;
};

}  // namespace gridvirt
