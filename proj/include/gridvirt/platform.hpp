#pragma once

// The middleware process: both registries, the composition manager and every
// VO/ME instance behind one path-routed request handler.

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "gridvirt/core.hpp"
#include "gridvirt/me_layer.hpp"
#include "gridvirt/registry.hpp"
#include "gridvirt/vo_runtime.hpp"
#include "gridvirt/wire.hpp"

namespace gridvirt {

/// Which layers a process serves. Requests for other layers get NOT_FOUND.
struct LayerSet {
    bool vo = true;
    bool me = true;
    bool registry = true;

    static LayerSet all() { return {}; }
    static LayerSet parse(std::string_view csv);  // "vo,me,registry"
};

class Platform {
public:
    /// Keys are drawn from `seed`, or from OS entropy when it is empty.
    explicit Platform(std::optional<std::uint64_t> seed, LayerSet layers = LayerSet::all());

    HttpResponse handle(const HttpRequest& req);
    /// Parses raw HTTP bytes first; never throws.
    HttpResponse handle_raw(std::string_view raw);

    /// Advances the platform clock and runs every VO then every ME tick.
    void tick(Timestamp now);
    Timestamp now() const;
    void set_now(Timestamp now);

    /// Messages for a service (ME notices, ME pushes, actuation results).
    using Inbox = std::function<bool(const Json& message)>;
    void attach_inbox(const EntityId& holder, Inbox inbox);

    /// Receives every actuation winner.
    void set_hal(std::function<void(const ActuationCommand&)> hal);

    VORegistry& vo_registry() { return vos_; }
    MERegistry& me_registry() { return mes_; }
    std::shared_ptr<VOInstance> vo(const std::string& name) const;
    std::shared_ptr<MEInstance> me(const std::string& name) const;

    /// Status changes, recompositions, failing pushes, actuation outcomes.
    std::vector<Json> events() const;
    Json snapshot() const;

private:
    HttpResponse dispatch(const RoutedCall& call);
    VOLinks vo_links();
    MELinks me_links();
    std::shared_ptr<MEInstance> create_me(const MEDescriptor& desc, std::vector<AccessKey> vo_keys);
    void record(std::string kind, Json detail);
    bool deliver(const EntityId& holder, const Json& message);

    LayerSet layers_;
    VORegistry vos_;
    MERegistry mes_;
    CompositionManager composer_;

    mutable std::shared_mutex instances_mutex_;
    std::map<std::string, std::shared_ptr<VOInstance>> vo_instances_;
    std::map<std::string, std::shared_ptr<MEInstance>> me_instances_;

    mutable std::mutex misc_mutex_;
    Timestamp now_ = 0;
    std::vector<Json> events_;
    std::map<EntityId, Inbox> inboxes_;
    std::function<void(const ActuationCommand&)> hal_;
};

/// RWO a VO virtualizes: the RWO of the same name.
EntityId bound_rwo(const EntityId& vo);

}  // namespace gridvirt
