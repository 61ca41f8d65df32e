#include "gridvirt/registry.hpp"

#include <algorithm>

namespace gridvirt {

std::vector<std::string> normalized(std::vector<std::string> tags) {
    std::sort(tags.begin(), tags.end());
    tags.erase(std::unique(tags.begin(), tags.end()), tags.end());
    return tags;
}

namespace {

bool offers_all(const VODescriptor& desc, const std::vector<std::string>& requirements) {
    return std::all_of(requirements.begin(), requirements.end(),
                       [&](const std::string& r) { return desc.offers(r); });
}

bool has_authority(const std::string& admin, const AccessKey& owner_key,
                   const std::function<std::optional<AccessKey>(const std::string&)>& lookup,
                   const Credentials& auth) {
    for (const auto& token : auth.tokens) {
        if (token == admin) return true;
        const auto key = lookup(token);
        if (!key) continue;
        if (key->subject == owner_key.subject && key->holder == owner_key.holder && key->tier == AccessTier::Private &&
            (!auth.requester || *auth.requester == key->holder)) {
            return true;
        }
    }
    return false;
}

}  // namespace

// --- VORegistry -------------------------------------------------------------

VORegistry::VORegistry(TokenSource tokens) : tokens_(std::move(tokens)) { admin_token_ = tokens_.next(); }

void VORegistry::set_key_listener(KeyListener listener) {
    std::lock_guard lock(mutex_);
    on_key_ = std::move(listener);
}

void VORegistry::set_revoke_listener(RevokeListener listener) {
    std::lock_guard lock(mutex_);
    on_revoke_ = std::move(listener);
}

AccessKey VORegistry::mint(const EntityId& subject, const EntityId& holder, AccessTier tier, int priority) {
    AccessKey key{subject, tier, tokens_.next(), holder};
    keys_[key.token] = Minted{key, priority};
    if (on_key_) on_key_(key, priority);
    return key;
}

Registration VORegistry::register_vo(const VODescriptor& desc, const VisibilityMap& visibility) {
    validate(desc);
    std::lock_guard lock(mutex_);
    const auto it = entries_.find(desc.id);
    if (it != entries_.end()) {
        auto& entry = it->second;
        if (entry.descriptor.owner != desc.owner) {
            throw Error(ErrorCode::ConflictRejected, desc.id.str() + " is registered to " + entry.descriptor.owner.str());
        }
        const auto status = entry.descriptor.status;
        entry.descriptor = desc;
        entry.descriptor.status = status;
        entry.visibility = visibility;
        ++entry.revision;
        return {entry.revision, entry.owner_key, true};
    }
    auto& entry = entries_[desc.id];
    entry.descriptor = desc;
    entry.visibility = visibility;
    entry.revision = 1;
    entry.owner_key = mint(desc.id, desc.owner, AccessTier::Private, 0);
    return {entry.revision, entry.owner_key, false};
}

std::uint64_t VORegistry::update_status(const EntityId& id, const VOStatus& status) {
    std::lock_guard lock(mutex_);
    const auto it = entries_.find(id);
    if (it == entries_.end()) throw Error(ErrorCode::NotFound, id.str() + " is not registered");
    it->second.descriptor.status = status;
    return ++it->second.revision;
}

std::vector<SearchHit> VORegistry::search(const std::vector<std::string>& requirements, const Credentials& auth,
                                          bool include_offline) const {
    std::lock_guard lock(mutex_);
    std::vector<SearchHit> hits;
    for (const auto& [id, entry] : entries_) {
        const auto& desc = entry.descriptor;
        if (!include_offline && desc.status.state == VOState::Offline) continue;
        if (!offers_all(desc, requirements)) continue;
        std::optional<AccessTier> best;
        if (desc.default_tier == AccessTier::Public) best = AccessTier::Public;
        for (const auto& token : auth.tokens) {
            const auto k = keys_.find(token);
            if (k == keys_.end()) continue;
            const auto& key = k->second.key;
            if (key.subject != id) continue;
            if (auth.requester && *auth.requester != key.holder) continue;
            if (!tier_allows(key.tier, desc.default_tier)) continue;
            if (!best || static_cast<int>(key.tier) > static_cast<int>(*best)) best = key.tier;
        }
        if (best) hits.push_back({desc, *best});
    }
    return hits;
}

void VORegistry::require_authority(const EntityId& subject, const Credentials& auth) const {
    const auto it = entries_.find(subject);
    if (it == entries_.end()) throw Error(ErrorCode::NotFound, subject.str() + " is not registered");
    if (auth.tokens.empty()) throw Error(ErrorCode::Unauthorized, "grants require the owner's private key");
    const auto lookup = [this](const std::string& token) -> std::optional<AccessKey> {
        const auto k = keys_.find(token);
        if (k == keys_.end()) return std::nullopt;
        return k->second.key;
    };
    if (!has_authority(admin_token_, it->second.owner_key, lookup, auth)) {
        throw Error(ErrorCode::Forbidden, "only the owner of " + subject.str() + " may grant access");
    }
}

AccessKey VORegistry::grant(const EntityId& vo, const EntityId& holder, AccessTier tier, int priority,
                            const Credentials& auth) {
    std::lock_guard lock(mutex_);
    require_authority(vo, auth);
    return mint(vo, holder, tier, priority);
}

void VORegistry::revoke(const std::string& token, const Credentials& auth) {
    std::lock_guard lock(mutex_);
    const auto it = keys_.find(token);
    if (it == keys_.end()) throw Error(ErrorCode::NotFound, "unknown key");
    const auto key = it->second.key;
    require_authority(key.subject, auth);
    keys_.erase(it);
    if (on_revoke_) on_revoke_(key);
}

std::optional<AccessKey> VORegistry::lookup(const std::string& token) const {
    std::lock_guard lock(mutex_);
    const auto it = keys_.find(token);
    if (it == keys_.end()) return std::nullopt;
    return it->second.key;
}

std::optional<VODescriptor> VORegistry::get(const EntityId& id) const {
    std::lock_guard lock(mutex_);
    const auto it = entries_.find(id);
    if (it == entries_.end()) return std::nullopt;
    return it->second.descriptor;
}

std::optional<VisibilityMap> VORegistry::visibility(const EntityId& id) const {
    std::lock_guard lock(mutex_);
    const auto it = entries_.find(id);
    if (it == entries_.end()) return std::nullopt;
    return it->second.visibility;
}

std::uint64_t VORegistry::revision(const EntityId& id) const {
    std::lock_guard lock(mutex_);
    const auto it = entries_.find(id);
    return it == entries_.end() ? 0 : it->second.revision;
}

std::vector<VODescriptor> VORegistry::list() const {
    std::lock_guard lock(mutex_);
    std::vector<VODescriptor> out;
    for (const auto& [_, entry] : entries_) out.push_back(entry.descriptor);
    return out;
}

std::size_t VORegistry::size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
}

// --- MERegistry -------------------------------------------------------------

MERegistry::MERegistry(TokenSource tokens) : tokens_(std::move(tokens)) { admin_token_ = tokens_.next(); }

void MERegistry::set_key_listener(KeyListener listener) {
    std::lock_guard lock(mutex_);
    on_key_ = std::move(listener);
}

Registration MERegistry::register_me(const MEDescriptor& desc) {
    if (desc.id.kind != EntityKind::ME) throw Error(ErrorCode::BadRequest, "ME ids use the me: kind");
    validate(desc.view);
    std::lock_guard lock(mutex_);
    const auto it = entries_.find(desc.id);
    if (it != entries_.end()) {
        auto& entry = it->second;
        if (entry.descriptor.owner != desc.owner) {
            throw Error(ErrorCode::ConflictRejected, desc.id.str() + " is registered to " + entry.descriptor.owner.str());
        }
        entry.descriptor = desc;
        ++entry.revision;
        return {entry.revision, entry.owner_key, true};
    }
    auto& entry = entries_[desc.id];
    entry.descriptor = desc;
    entry.revision = 1;
    entry.owner_key = AccessKey{desc.id, AccessTier::Private, tokens_.next(), desc.owner};
    keys_[entry.owner_key.token] = entry.owner_key;
    if (on_key_) on_key_(entry.owner_key, desc.priority);
    return {entry.revision, entry.owner_key, false};
}

std::uint64_t MERegistry::update_members(const EntityId& id, const std::vector<MEMember>& members) {
    std::lock_guard lock(mutex_);
    const auto it = entries_.find(id);
    if (it == entries_.end()) throw Error(ErrorCode::NotFound, id.str() + " is not registered");
    it->second.descriptor.members = members;
    return ++it->second.revision;
}

AccessKey MERegistry::grant(const EntityId& me, const EntityId& holder, AccessTier tier, int priority,
                            const Credentials& auth) {
    std::lock_guard lock(mutex_);
    const auto it = entries_.find(me);
    if (it == entries_.end()) throw Error(ErrorCode::NotFound, me.str() + " is not registered");
    if (auth.tokens.empty()) throw Error(ErrorCode::Unauthorized, "grants require the owner's private key");
    const auto lookup = [this](const std::string& token) -> std::optional<AccessKey> {
        const auto k = keys_.find(token);
        if (k == keys_.end()) return std::nullopt;
        return k->second;
    };
    if (!has_authority(admin_token_, it->second.owner_key, lookup, auth)) {
        throw Error(ErrorCode::Forbidden, "only the owner of " + me.str() + " may grant access");
    }
    AccessKey key{me, tier, tokens_.next(), holder};
    keys_[key.token] = key;
    if (on_key_) on_key_(key, priority);
    return key;
}

std::vector<MEDescriptor> MERegistry::find(const std::vector<std::string>& requirements, const ViewSpec& view) const {
    const auto wanted = normalized(requirements);
    std::lock_guard lock(mutex_);
    std::vector<MEDescriptor> out;
    for (const auto& [_, entry] : entries_) {
        if (entry.descriptor.view == view && normalized(entry.descriptor.requirements) == wanted) {
            out.push_back(entry.descriptor);
        }
    }
    return out;
}

std::optional<AccessKey> MERegistry::lookup(const std::string& token) const {
    std::lock_guard lock(mutex_);
    const auto it = keys_.find(token);
    if (it == keys_.end()) return std::nullopt;
    return it->second;
}

std::optional<MEDescriptor> MERegistry::get(const EntityId& id) const {
    std::lock_guard lock(mutex_);
    const auto it = entries_.find(id);
    if (it == entries_.end()) return std::nullopt;
    return it->second.descriptor;
}

std::vector<MEDescriptor> MERegistry::list() const {
    std::lock_guard lock(mutex_);
    std::vector<MEDescriptor> out;
    for (const auto& [_, entry] : entries_) out.push_back(entry.descriptor);
    return out;
}

}  // namespace gridvirt
