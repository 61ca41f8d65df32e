#include "gridvirt/access.hpp"

namespace gridvirt {

Credentials credentials_for(const AccessKey& key) {
    Credentials auth;
    auth.requester = key.holder;
    if (!key.token.empty()) auth.tokens.push_back(key.token);
    return auth;
}

void AccessController::install(const AccessKey& key, int priority) {
    if (key.token.empty()) return;
    keys_[key.token] = Record{key, priority};
}

bool AccessController::revoke(const std::string& token) { return keys_.erase(token) > 0; }

AccessController::Grant AccessController::authorize(const Credentials& auth) const {
    if (auth.tokens.empty()) {
        if (gate_ != AccessTier::Public) {
            throw Error(ErrorCode::Unauthorized, subject_.str() + " requires a " + std::string(to_string(gate_)) + " key");
        }
        return Grant{};
    }
    // With several tokens (a search-style presentation) the best valid one wins.
    std::optional<Grant> best;
    std::optional<Error> first_failure;
    for (const auto& token : auth.tokens) {
        const auto it = keys_.find(token);
        if (it == keys_.end()) {
            if (!first_failure) first_failure = Error(ErrorCode::Unauthorized, "key not recognised by " + subject_.str());
            continue;
        }
        const auto& key = it->second.key;
        if (key.subject != subject_) {
            if (!first_failure) first_failure = Error(ErrorCode::Forbidden, "key opens " + key.subject.str());
            continue;
        }
        if (auth.requester && *auth.requester != key.holder) {
            if (!first_failure) first_failure = Error(ErrorCode::Forbidden, "key is not held by " + auth.requester->str());
            continue;
        }
        if (!tier_allows(key.tier, gate_)) {
            if (!first_failure) first_failure = Error(ErrorCode::Forbidden, "key tier below the entity's gate");
            continue;
        }
        if (!best || static_cast<int>(key.tier) > static_cast<int>(best->tier)) {
            best = Grant{key.tier, it->second.priority, key};
        }
    }
    if (best) return *best;
    throw *first_failure;
}

int AccessController::priority_of(const EntityId& holder) const {
    int priority = 0;
    for (const auto& [_, record] : keys_) {
        if (record.key.holder == holder) priority = std::max(priority, record.priority);
    }
    return priority;
}

bool AccessController::holds(const EntityId& holder) const {
    for (const auto& [_, record] : keys_) {
        if (record.key.holder == holder) return true;
    }
    return false;
}

}  // namespace gridvirt
