#pragma once

// Aggregation layer: MEInstance (execution manager, access controller and
// container for one micro engine), the aggregate() reduction, and the
// composition manager that mints or reuses MEs for incoming requests.

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "gridvirt/access.hpp"
#include "gridvirt/core.hpp"
#include "gridvirt/descriptors.hpp"
#include "gridvirt/registry.hpp"
#include "gridvirt/wire.hpp"

namespace gridvirt {

/// Observations below this quality are left out of every reduction.
inline constexpr double kMinQuality = 0.5;

/// Reduces `observations` under `view`. Rows are ordered by (bucket, group).
/// An observation missing a field, or holding a non-numeric value for it, is
/// skipped for that field only.
std::vector<AggregateRow> aggregate(std::span<const Observation> observations, const ViewSpec& view);

enum class Reconfigure { Unchanged, Recomposed, RequirementUnmet };

std::string_view to_string(Reconfigure kind);

struct ReconfigureOutcome {
    Reconfigure kind = Reconfigure::Unchanged;
    std::vector<EntityId> members;  // member set after the event
    std::vector<std::string> unmet;
};

/// Sent to every client of an ME when its member set or health changes.
struct MENotice {
    EntityId me;
    MEHealth health = MEHealth::Ok;
    ReconfigureOutcome outcome;
    Timestamp at = 0;
};

struct MEStatusReport {
    EntityId me;
    MEHealth health = MEHealth::Ok;
    std::vector<EntityId> members;
    std::vector<std::string> unmet;
};

/// Descriptor as shown outside the middleware: member key tokens removed.
MEDescriptor redacted(MEDescriptor desc);

/// Outbound connections of an ME. All are called without the ME lock held.
struct MELinks {
    std::function<std::vector<SearchHit>(const std::vector<std::string>& requirements, const Credentials& auth)>
        search;
    std::function<std::optional<VODescriptor>(const EntityId& vo)> describe;
    std::function<std::optional<VisibilityMap>(const EntityId& vo)> visibility;
    /// Throws Error on refusal.
    std::function<void(const EntityId& vo, const Credentials& auth, const UpdateCommand& cmd)> post_policy;
    std::function<std::vector<Observation>(const EntityId& vo, const Credentials& auth, TimeRange range,
                                           const std::vector<std::string>& fields)>
        fetch;
    std::function<void(const EntityId& me, const std::vector<MEMember>& members)> update_registry;
    std::function<void(const EntityId& client, const MENotice& notice)> notify;
    std::function<bool(const EntityId& subscriber, const EntityId& me, const std::vector<AggregateRow>& rows)> push;
};

class MEInstance {
public:
    /// `vo_keys` are the keys this ME holds on VOs; recomposition searches
    /// with them.
    MEInstance(MEDescriptor desc, std::vector<AccessKey> vo_keys, MELinks links);

    const EntityId& id() const { return id_; }
    MEDescriptor descriptor() const;
    MEHealth health() const;
    const ViewSpec& view() const { return view_; }

    void install_key(const AccessKey& key, int priority);
    void revoke_key(const std::string& token);
    void add_client(const EntityId& client);

    /// Backfills every member and installs push policies on members held at
    /// FRIEND or better; the rest are pulled on tick().
    void start(Timestamp now);

    /// A pushed batch from a member VO. False when `vo` is not a member.
    bool ingest(const EntityId& vo, const std::vector<Observation>& batch);

    /// Aggregated rows over observations inside `range`, filtered to the
    /// exposure the caller's tier allows. A view other than the ME's own is
    /// BAD_REQUEST.
    std::vector<AggregateRow> query(const Credentials& auth, TimeRange range, const std::optional<ViewSpec>& view,
                                    const std::vector<std::string>& fields) const;

    MEStatusReport status(const Credentials& auth) const;

    /// Only OFFLINE members trigger recomposition.
    ReconfigureOutcome handle_vo_alert(const VOAlert& alert, Timestamp now);

    /// Retries unmet requirements.
    ReconfigureOutcome recover(Timestamp now);

    void apply_policy(const EntityId& subscriber, const Credentials& auth, const UpdateCommand& cmd);

    /// Member monitoring, pulls, and pushes of closed buckets to subscribers.
    void tick(Timestamp now);

    std::size_t stored_count() const;

private:
    struct Member {
        MEMember member;
        std::vector<std::string> functionalities;
        VOState state = VOState::Online;
        bool pulled = false;
        Timestamp pulled_until = 0;
    };
    struct Subscription {
        std::int64_t period_s = 0;
        std::vector<std::string> fields;
        AccessTier tier = AccessTier::Friend;
        Timestamp next_bucket = 0;  // first bucket not yet pushed
        Timestamp last_push = 0;
    };

    Member make_member(const MEMember& m) const;
    void attach(Member& m, Timestamp now);
    void store(const EntityId& vo, const std::vector<Observation>& batch);
    std::vector<std::string> uncovered() const;
    MEHealth health_locked() const;
    std::vector<EntityId> member_ids() const;
    ReconfigureOutcome fill(const std::vector<std::string>& missing, bool removed_any, Timestamp now);
    std::vector<AggregateRow> rows_locked(TimeRange range, AccessTier tier, const std::vector<std::string>& fields) const;
    Credentials vo_credentials() const;
    void widen_exposure_locked(const VODescriptor& vo, const VisibilityMap& visibility);
    void announce(const ReconfigureOutcome& outcome, Timestamp now);

    EntityId id_;
    ViewSpec view_;
    MELinks links_;

    std::mutex reconfigure_mutex_;  // serializes recompositions; never held by the data path
    mutable std::mutex mutex_;
    MEDescriptor desc_;
    std::vector<AccessKey> vo_keys_;
    AccessController access_;
    std::map<EntityId, Member> members_;
    std::vector<std::string> unmet_;
    std::set<EntityId> clients_;
    std::map<EntityId, std::vector<Observation>> store_;  // by VO, sources rewritten to the VO id
    std::map<EntityId, Subscription> subscriptions_;
};

struct Composition {
    MEDescriptor descriptor;  // redacted
    bool reused = false;
    std::optional<AccessKey> owner_key;  // only for a fresh composition
};

/// ME Request & Composition Manager.
class CompositionManager {
public:
    struct Hooks {
        std::function<std::shared_ptr<MEInstance>(const MEDescriptor& desc, std::vector<AccessKey> vo_keys)>
            instantiate;
        std::function<std::shared_ptr<MEInstance>(const EntityId& id)> find;
    };

    CompositionManager(VORegistry& vos, MERegistry& mes, Hooks hooks);

    /// Reuses an ME with the same requirement set and view when the requester
    /// may reach it; otherwise composes a new one over every matching VO.
    /// Throws Error(Unauthorized | Forbidden | ConflictRejected | Unavailable).
    Composition compose(const ComposeRequest& req, const Credentials& auth, Timestamp now);

    /// Registers an explicitly described ME (POST /registry/me).
    Composition adopt(const MEDescriptor& desc, const Credentials& auth, Timestamp now);

private:
    VORegistry& vos_;
    MERegistry& mes_;
    Hooks hooks_;
    std::mutex mutex_;
};

/// Member entry for a search hit: the best presented key opening that VO,
/// or an empty key for PUBLIC access.
MEMember member_for(const SearchHit& hit, const EntityId& me, const std::vector<AccessKey>& keys);

void to_json(Json& j, const MENotice& notice);
void from_json(const Json& j, MENotice& notice);
void to_json(Json& j, const MEStatusReport& report);
void from_json(const Json& j, MEStatusReport& report);
Reconfigure reconfigure_from_string(std::string_view text);

}  // namespace gridvirt
