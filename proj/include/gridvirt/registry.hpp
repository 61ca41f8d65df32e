#pragma once

// VO Registry / VO Request Manager and the ME Registry. Both are key-minting
// authorities: every AccessKey in the system comes from one of them.

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "gridvirt/core.hpp"
#include "gridvirt/descriptors.hpp"
#include "gridvirt/wire.hpp"

namespace gridvirt {

struct Registration {
    std::uint64_t revision = 0;
    AccessKey owner_key;  // PRIVATE, held by the owner
    bool updated = false;  // re-registration of an existing id
};

struct SearchHit {
    VODescriptor descriptor;
    AccessTier tier = AccessTier::Public;  // best tier the requester reaches
};

/// Called with every key minted (including owner keys), under the registry
/// lock, so a returned key is already usable at its subject.
using KeyListener = std::function<void(const AccessKey& key, int priority)>;
using RevokeListener = std::function<void(const AccessKey& key)>;

class VORegistry {
public:
    explicit VORegistry(TokenSource tokens);

    /// Token accepted by grant() and revoke() for any subject.
    const std::string& admin_token() const { return admin_token_; }

    void set_key_listener(KeyListener listener);
    void set_revoke_listener(RevokeListener listener);

    /// Throws Error(ConflictRejected) when the id is held by another owner.
    Registration register_vo(const VODescriptor& desc, const VisibilityMap& visibility = {});

    /// Throws Error(NotFound).
    std::uint64_t update_status(const EntityId& id, const VOStatus& status);

    /// Deterministic (ordered by id). Unknown tokens are ignored; a token
    /// only counts when held by `auth.requester` (when one is given).
    std::vector<SearchHit> search(const std::vector<std::string>& requirements, const Credentials& auth,
                                  bool include_offline = false) const;

    /// Requires the admin token or the subject owner's PRIVATE key.
    /// Throws Error(NotFound | Forbidden | Unauthorized).
    AccessKey grant(const EntityId& vo, const EntityId& holder, AccessTier tier, int priority,
                    const Credentials& auth);

    /// Same authority rule as grant().
    void revoke(const std::string& token, const Credentials& auth);

    std::optional<AccessKey> lookup(const std::string& token) const;
    std::optional<VODescriptor> get(const EntityId& id) const;
    std::optional<VisibilityMap> visibility(const EntityId& id) const;
    std::uint64_t revision(const EntityId& id) const;
    std::vector<VODescriptor> list() const;
    std::size_t size() const;

private:
    struct Entry {
        VODescriptor descriptor;
        VisibilityMap visibility;
        std::uint64_t revision = 0;
        AccessKey owner_key;
    };
    struct Minted {
        AccessKey key;
        int priority = 0;
    };

    void require_authority(const EntityId& subject, const Credentials& auth) const;
    AccessKey mint(const EntityId& subject, const EntityId& holder, AccessTier tier, int priority);

    mutable std::mutex mutex_;
    TokenSource tokens_;
    std::string admin_token_;
    std::map<EntityId, Entry> entries_;
    std::map<std::string, Minted> keys_;  // by token
    KeyListener on_key_;
    RevokeListener on_revoke_;
};

class MERegistry {
public:
    explicit MERegistry(TokenSource tokens);

    const std::string& admin_token() const { return admin_token_; }
    void set_key_listener(KeyListener listener);

    /// Same ownership rule as VORegistry::register_vo.
    Registration register_me(const MEDescriptor& desc);

    /// Replaces the member set after a recomposition. Throws Error(NotFound).
    std::uint64_t update_members(const EntityId& id, const std::vector<MEMember>& members);

    AccessKey grant(const EntityId& me, const EntityId& holder, AccessTier tier, int priority,
                    const Credentials& auth);

    /// MEs whose (requirements as a set, view) equal the given ones, by id.
    std::vector<MEDescriptor> find(const std::vector<std::string>& requirements, const ViewSpec& view) const;

    std::optional<AccessKey> lookup(const std::string& token) const;
    std::optional<MEDescriptor> get(const EntityId& id) const;
    std::vector<MEDescriptor> list() const;

private:
    struct Entry {
        MEDescriptor descriptor;
        std::uint64_t revision = 0;
        AccessKey owner_key;
    };

    mutable std::mutex mutex_;
    TokenSource tokens_;
    std::string admin_token_;
    std::map<EntityId, Entry> entries_;
    std::map<std::string, AccessKey> keys_;
    KeyListener on_key_;
};

/// Sorted, de-duplicated copy.
std::vector<std::string> normalized(std::vector<std::string> tags);

}  // namespace gridvirt
