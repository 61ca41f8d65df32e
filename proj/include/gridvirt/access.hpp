#pragma once

#include <map>
#include <optional>
#include <string>

#include "gridvirt/core.hpp"
#include "gridvirt/wire.hpp"

namespace gridvirt {

/// Presented credentials for a key (the holder's identity and its token).
Credentials credentials_for(const AccessKey& key);

/// Key material held by one VO or ME, and the check every request passes.
///
/// The gate is the lowest tier that may access the entity at all: with a
/// PUBLIC gate a request without a key reads at PUBLIC tier, otherwise it is
/// UNAUTHORIZED. A presented token must match stored material (unknown or
/// revoked: UNAUTHORIZED); a stored key opening a different entity, or held
/// by someone other than the requester, is FORBIDDEN. Only the stored tier
/// counts, never anything the client claims.
class AccessController {
public:
    AccessController(EntityId subject, AccessTier gate) : subject_(std::move(subject)), gate_(gate) {}

    void install(const AccessKey& key, int priority);
    bool revoke(const std::string& token);

    struct Grant {
        AccessTier tier = AccessTier::Public;
        int priority = 0;
        std::optional<AccessKey> key;
    };

    /// Throws Error(Unauthorized | Forbidden).
    Grant authorize(const Credentials& auth) const;

    /// Highest priority granted to `holder` (0 when none).
    int priority_of(const EntityId& holder) const;

    AccessTier gate() const { return gate_; }
    void set_gate(AccessTier gate) { gate_ = gate; }
    const EntityId& subject() const { return subject_; }
    bool holds(const EntityId& holder) const;

private:
    struct Record {
        AccessKey key;
        int priority = 0;
    };

    EntityId subject_;
    AccessTier gate_;
    std::map<std::string, Record> keys_;  // by token
};

}  // namespace gridvirt
