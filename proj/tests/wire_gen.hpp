#pragma once

// Random well-formed routed calls, for round-trip and fuzz tests.

#include <random>
#include <string>
#include <vector>

#include "gridvirt/wire.hpp"
#include "support.hpp"

namespace support {

class CallGenerator {
public:
    explicit CallGenerator(std::uint64_t seed) : rng_(seed), tokens_(TokenSource::seeded(seed)) {}

    RoutedCall next() {
        switch (uniform(0, 11)) {
            case 0: return call::PostObservation{name(), observation(), credentials()};
            case 1: return query();
            case 2: return call::PostPolicy{target(), update(), credentials()};
            case 3: return call::PostActuation{name(), actuation(), credentials()};
            case 4: return call::RegisterVO{vo_descriptor(), visibility(), uniform(1, 3600)};
            case 5: return call::PostVOStatus{name(), status()};
            case 6: return call::SearchVO{strings(0, 3), coin(), credentials()};
            case 7: return call::GrantAccess{target(), id(), tier(), uniform(0, 9), credentials()};
            case 8: return call::RegisterME{me_descriptor(), credentials()};
            case 9: return call::ComposeME{compose_request(), credentials()};
            case 10: return call::MEAlert{name(), VOAlert{EntityId::vo(name()), status()}};
            default: return call::MEStatus{name(), credentials()};
        }
    }

    std::mt19937_64& rng() { return rng_; }

private:
    int uniform(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
    bool coin() { return uniform(0, 1) == 1; }
    double real() { return std::round(std::uniform_real_distribution<double>(-1e4, 1e4)(rng_) * 1e3) / 1e3; }
    Timestamp time() { return std::uniform_int_distribution<Timestamp>(1, 4'000'000'000)(rng_); }

    std::string name() {
        static const std::string alphabet = "abcdefghijklmnopqrstuvwxyz0123456789-";
        std::string out;
        const int n = uniform(1, 12);
        for (int i = 0; i < n; ++i) out += alphabet[static_cast<std::size_t>(uniform(0, 36))];
        return out;
    }

    // Printable ASCII including characters that need URL escaping.
    std::string text() {
        std::string out;
        const int n = uniform(0, 16);
        for (int i = 0; i < n; ++i) out += static_cast<char>(uniform(32, 126));
        return out;
    }

    std::vector<std::string> strings(int lo, int hi) {
        std::vector<std::string> out;
        const int n = uniform(lo, hi);
        for (int i = 0; i < n; ++i) out.push_back(text());
        return out;
    }

    EntityId id() { return {static_cast<EntityKind>(uniform(0, 3)), name()}; }
    EntityId target() { return coin() ? EntityId::vo(name()) : EntityId::me(name()); }
    AccessTier tier() { return static_cast<AccessTier>(uniform(0, 2)); }

    Credentials credentials() {
        Credentials auth;
        if (coin()) auth.requester = id();
        const int n = uniform(0, 3);
        for (int i = 0; i < n; ++i) auth.tokens.push_back(tokens_.next());
        return auth;
    }

    Scalar scalar() {
        switch (uniform(0, 2)) {
            case 0: return real();
            case 1: return text();
            default: return coin();
        }
    }

    FieldMap fields(int lo) {
        FieldMap out;
        const int n = uniform(lo, 5);
        while (static_cast<int>(out.size()) < n) out[name()] = scalar();
        return out;
    }

    Observation observation() {
        Observation obs;
        obs.source = EntityId::rwo(name());
        obs.timestamp = time();
        obs.fields = fields(1);
        obs.quality = uniform(0, 100) / 100.0;
        if (coin()) obs.location = text();
        return obs;
    }

    ViewSpec view(const std::vector<std::string>& fields) {
        return {uniform(1, 3'000'000), static_cast<GroupBy>(uniform(0, 1)), static_cast<Reduce>(uniform(0, 4)), fields};
    }

    call::QueryData query() {
        call::QueryData q;
        q.target = target();
        const auto a = time();
        const auto b = time();
        q.range = {std::min(a, b), std::max(a, b)};
        q.fields = strings(0, 4);
        if (coin()) q.view = view(q.fields);
        q.auth = credentials();
        return q;
    }

    UpdateCommand update() {
        switch (uniform(0, 2)) {
            case 0: return UpdateCommand::stop();
            case 1: return UpdateCommand::start(uniform(1, 86400), strings(1, 4));
            default: return UpdateCommand::change(uniform(1, 86400), strings(1, 4));
        }
    }

    ActuationCommand actuation() {
        return {EntityId::vo(name()), text(), fields(0), id(), uniform(0, 9), time()};
    }

    VOStatus status() { return {static_cast<VOState>(uniform(0, 2)), time(), std::abs(real())}; }

    VisibilityMap visibility() {
        VisibilityMap map;
        const int n = uniform(0, 5);
        for (int i = 0; i < n; ++i) map.set(name(), tier());
        return map;
    }

    VODescriptor vo_descriptor() {
        VODescriptor d;
        d.id = EntityId::vo(name());
        d.owner = id();
        d.location = text();
        const int n = uniform(1, 4);
        for (int i = 0; i < n; ++i) d.functionalities.push_back((coin() ? "measure:" : "actuate:") + name());
        d.endpoint = text();
        d.status = status();
        d.default_tier = tier();
        return d;
    }

    AccessKey key() { return {target(), tier(), tokens_.next(), id()}; }

    MEDescriptor me_descriptor() {
        MEDescriptor d;
        d.id = EntityId::me(name());
        d.owner = id();
        const int n = uniform(0, 3);
        for (int i = 0; i < n; ++i) d.members.push_back({EntityId::vo(name()), coin() ? key() : AccessKey{}});
        d.view = view(strings(1, 3));
        d.requirements = strings(1, 3);
        d.priority = uniform(0, 9);
        d.exposure = visibility();
        return d;
    }

    ComposeRequest compose_request() {
        ComposeRequest r;
        r.name = EntityId::me(name());
        r.requester = id();
        r.owner = id();
        r.requirements = strings(1, 3);
        r.view = view(strings(1, 3));
        r.exposure_tier = tier();
        r.priority = uniform(0, 9);
        return r;
    }

    std::mt19937_64 rng_;
    TokenSource tokens_;
};

/// Byte-level mutations of a valid request plus pure noise.
inline std::string mutate(std::mt19937_64& rng, std::string bytes) {
    std::uniform_int_distribution<int> op(0, 6);
    std::uniform_int_distribution<int> byte(0, 255);
    const auto at = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n)(rng); };
    const int rounds = std::uniform_int_distribution<int>(1, 8)(rng);
    for (int r = 0; r < rounds; ++r) {
        switch (op(rng)) {
            case 0:
                if (!bytes.empty()) bytes[at(bytes.size() - 1)] = static_cast<char>(byte(rng));
                break;
            case 1: bytes.insert(at(bytes.size()), 1, static_cast<char>(byte(rng))); break;
            case 2:
                if (!bytes.empty()) bytes.erase(at(bytes.size() - 1), 1 + at(16));
                break;
            case 3: bytes.resize(at(bytes.size())); break;
            case 4: {
                static const std::vector<std::string> tokens{"\r\n", "\r\n\r\n", "%", "%zz", "{", "}", "\"", "..",
                                                             "content-length: 99999999999999999999\r\n", "/",
                                                             "?from=&to=", "Bearer ,", "\0"};
                bytes.insert(at(bytes.size()), tokens[at(tokens.size() - 1)]);
                break;
            }
            case 5: {
                std::string noise(at(64), '\0');
                for (auto& c : noise) c = static_cast<char>(byte(rng));
                bytes.insert(at(bytes.size()), noise);
                break;
            }
            default: {
                if (bytes.size() > 1) {
                    const auto a = at(bytes.size() - 1);
                    const auto b = at(bytes.size() - 1);
                    std::swap(bytes[a], bytes[b]);
                }
                break;
            }
        }
    }
    return bytes;
}

inline std::string noise(std::mt19937_64& rng) {
    std::string out(std::uniform_int_distribution<std::size_t>(0, 512)(rng), '\0');
    for (auto& c : out) c = static_cast<char>(std::uniform_int_distribution<int>(0, 255)(rng));
    return out;
}

}  // namespace support
