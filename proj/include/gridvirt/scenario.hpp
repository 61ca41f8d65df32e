#pragma once

// Scenario files and the end-to-end case-study run. The file format is
// documented in docs/scenario.md, the report in docs/report.md.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridvirt/core.hpp"
#include "gridvirt/device.hpp"
#include "gridvirt/instance_pool.hpp"
#include "gridvirt/service.hpp"

namespace gridvirt {

class Platform;

/// Bad scenario file or a failed run step; the message names the culprit.
class ScenarioError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct VOSpec {
    std::string name;  // also the RWO and corpus file stem
    DeviceKind kind = DeviceKind::SmartMeter;
    bool indoor = false;
    EntityId owner;
    AccessTier default_tier = AccessTier::Friend;
    VisibilityMap visibility;
    std::int64_t cadence_s = 60;
    std::vector<std::string> actions;
    std::optional<std::filesystem::path> csv;  // default: <corpus>/<name>.csv
    std::optional<std::string> location;       // default: derived from the name
};

struct VOGrantSpec {
    std::string vo;
    EntityId holder;
    AccessTier tier = AccessTier::Friend;
    int priority = 0;
};

struct MESpec {
    std::string name;
    EntityId owner;
    std::vector<std::string> requirements;
    ViewSpec view;
    AccessTier exposure = AccessTier::Friend;
    int priority = 0;
};

struct MEGrantSpec {
    std::string me;
    EntityId holder;
    AccessTier tier = AccessTier::Friend;
};

struct ServiceConfig {
    std::string name;
    std::vector<std::string> needs;  // ME section names
    Delivery delivery = Delivery::Poll;
};

/// A one-off query issued at the end of the run by some holder, to show
/// what that holder is allowed to see.
struct ProbeSpec {
    std::string name;
    EntityId holder;
    EntityId target;  // vo:... or me:...
};

struct ScenarioConfig {
    std::filesystem::path base_dir;  // relative paths resolve against this
    std::uint64_t seed = 42;
    int homes = 2;
    int minutes = 60;
    std::filesystem::path corpus = "corpus";
    bool generate = true;
    std::optional<std::string> kill;
    int kill_minute = 30;
    InstancePoolConfig pool = InstancePoolConfig::fixed(10);

    std::vector<VOSpec> vos;
    std::vector<VOGrantSpec> grants;
    std::vector<MESpec> mes;
    std::vector<MEGrantSpec> me_grants;
    std::vector<ServiceConfig> services;
    std::vector<ProbeSpec> probes;
};

/// Throws ScenarioError naming the file, section or key at fault.
ScenarioConfig load_scenario(const std::filesystem::path& path);

/// Cross-references (grants to unknown VOs, services needing unknown MEs...).
void validate(const ScenarioConfig& config);

struct RunOptions {
    std::filesystem::path work_dir = ".";  // generated corpora go here
    std::optional<std::uint64_t> seed_override;
};

/// Registers the config's VOs and VO grants on a running platform and
/// returns every key issued on the way.
Json provision(Platform& platform, const ScenarioConfig& config);

/// Runs the case study. Throws ScenarioError naming the failed step.
Json run_case_study(ScenarioConfig config, const RunOptions& options = {});

/// Short human-readable digest of a report.
std::string summarize_report(const Json& report);

}  // namespace gridvirt
