#pragma once

// Generators and brute-force reference implementations shared by the tests.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "gridvirt/core.hpp"
#include "gridvirt/descriptors.hpp"

namespace support {

using namespace gridvirt;

inline bool close_rel(double a, double b, double rel = 1e-9) {
    return std::abs(a - b) <= rel * std::max({1.0, std::abs(a), std::abs(b)});
}

inline std::string pick(std::mt19937_64& rng, const std::vector<std::string>& options) {
    return options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)];
}

inline AccessTier random_tier(std::mt19937_64& rng) {
    return static_cast<AccessTier>(std::uniform_int_distribution<int>(0, 2)(rng));
}

/// Observation over a small field/source vocabulary; some fields missing,
/// some non-numeric, some low-quality.
inline Observation random_observation(std::mt19937_64& rng, Timestamp t0, Timestamp span,
                                      const std::vector<std::string>& fields, int sources) {
    Observation obs;
    obs.source = EntityId::rwo("src-" + std::to_string(std::uniform_int_distribution<int>(0, sources - 1)(rng)));
    obs.timestamp = t0 + std::uniform_int_distribution<Timestamp>(0, span - 1)(rng);
    std::uniform_real_distribution<double> value(-50.0, 50.0);
    std::uniform_int_distribution<int> shape(0, 9);
    for (const auto& f : fields) {
        const int s = shape(rng);
        if (s == 0) continue;
        if (s == 1) {
            obs.fields[f] = std::string("n/a");
        } else if (s == 2) {
            obs.fields[f] = true;
        } else {
            obs.fields[f] = std::round(value(rng) * 1000.0) / 1000.0;
        }
    }
    if (obs.fields.empty()) obs.fields["other"] = 1.0;
    obs.quality = std::uniform_int_distribution<int>(0, 4)(rng) == 0 ? 0.25 : 1.0;
    return obs;
}

/// Direct transcription of the view semantics: filter, bucket, group, then
/// reduce each (bucket, group, field) cell from its full list of samples.
inline std::vector<AggregateRow> brute_force_aggregate(const std::vector<Observation>& observations,
                                                       const ViewSpec& view) {
    using Sample = std::tuple<Timestamp, std::string, double>;
    std::map<std::pair<Timestamp, std::string>, std::map<std::string, std::vector<Sample>>> cells;
    std::map<std::pair<Timestamp, std::string>, std::set<std::string>> sources;
    for (const auto& obs : observations) {
        if (!(obs.quality >= 0.5)) continue;
        const Timestamp bucket = obs.timestamp - (obs.timestamp % view.time_bucket_s);
        const std::string group = view.group_by == GroupBy::PerSource ? obs.source.str() : "ALL";
        for (const auto& f : view.fields) {
            const auto it = obs.fields.find(f);
            if (it == obs.fields.end() || !std::holds_alternative<double>(it->second)) continue;
            cells[{bucket, group}][f].emplace_back(obs.timestamp, obs.source.str(), std::get<double>(it->second));
            sources[{bucket, group}].insert(obs.source.str());
        }
    }
    std::vector<AggregateRow> rows;
    for (const auto& [key, by_field] : cells) {
        AggregateRow row;
        row.bucket_start = key.first;
        row.group = key.second;
        row.contributing_sources = static_cast<int>(sources[key].size());
        for (const auto& [f, samples] : by_field) {
            double out = 0;
            switch (view.reduce) {
                case Reduce::Sum:
                    for (const auto& s : samples) out += std::get<2>(s);
                    break;
                case Reduce::Mean:
                    for (const auto& s : samples) out += std::get<2>(s);
                    out /= static_cast<double>(samples.size());
                    break;
                case Reduce::Min:
                    out = std::get<2>(samples.front());
                    for (const auto& s : samples) out = std::min(out, std::get<2>(s));
                    break;
                case Reduce::Max:
                    out = std::get<2>(samples.front());
                    for (const auto& s : samples) out = std::max(out, std::get<2>(s));
                    break;
                case Reduce::Last:
                    out = std::get<2>(*std::max_element(samples.begin(), samples.end()));
                    break;
            }
            row.values[f] = out;
        }
        rows.push_back(row);
    }
    return rows;
}

/// Rows equal up to floating-point reassociation.
inline bool rows_match(const std::vector<AggregateRow>& a, const std::vector<AggregateRow>& b, double rel = 1e-9) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].bucket_start != b[i].bucket_start || a[i].group != b[i].group) return false;
        if (a[i].contributing_sources != b[i].contributing_sources) return false;
        if (a[i].values.size() != b[i].values.size()) return false;
        for (const auto& [f, v] : a[i].values) {
            const auto it = b[i].values.find(f);
            if (it == b[i].values.end() || !close_rel(v, it->second, rel)) return false;
        }
    }
    return true;
}

}  // namespace support
