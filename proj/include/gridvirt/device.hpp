#pragma once

// Simulated real-world objects: CSV replay through a hardware abstraction
// layer, a deterministic synthetic corpus, and the batch load generator.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridvirt/core.hpp"
#include "gridvirt/instance_pool.hpp"
#include "gridvirt/wire.hpp"

namespace gridvirt {

enum class DeviceKind { SmartMeter, WeatherUnit, DER };

std::string_view to_string(DeviceKind kind);
DeviceKind device_kind_from_string(std::string_view text);

/// Platform field names a device kind emits. Weather units add the two
/// indoor fields only when `indoor` is set.
std::vector<std::string> field_catalog(DeviceKind kind, bool indoor = false);

/// Vendor CSV column -> platform field name, as written by the synthetic
/// corpus generator.
std::map<std::string, std::string> vendor_column_map(DeviceKind kind, bool indoor = false);

struct DeviceProfile {
    DeviceKind kind = DeviceKind::SmartMeter;
    EntityId rwo_id;
    std::string csv_path;
    std::map<std::string, std::string> column_map;  // CSV column -> field name
    std::int64_t cadence_s = 60;
    bool indoor = false;
    std::optional<std::string> location;

    /// A profile whose column map matches the synthetic corpus layout.
    static DeviceProfile make(DeviceKind kind, std::string rwo_name, std::string csv_path, bool indoor = false);
};

/// Throws std::invalid_argument: non-injective column map, bad cadence, or a
/// column map whose targets are not the kind's field catalog.
void validate(const DeviceProfile& profile);

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class BadRow : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One CSV data row keyed by header column.
using CsvRecord = std::map<std::string, std::string>;

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    CsvRecord record(std::size_t row) const;
};

/// Throws IoError when the file cannot be opened.
CsvTable read_csv(const std::filesystem::path& path);

/// Vendor row -> canonical Observation. Throws BadRow.
Observation hal_translate(const CsvRecord& row, const DeviceProfile& profile);

/// Monotonic simulated clock in Unix seconds.
class SimClock {
public:
    explicit SimClock(Timestamp start = 0) : now_(start) {}

    Timestamp now() const { return now_; }
    /// Throws std::logic_error when asked to go backwards.
    void advance_to(Timestamp t);

private:
    Timestamp now_;
};

struct ReplayReport {
    std::int64_t rows_sent = 0;
    std::int64_t rows_skipped = 0;

    bool operator==(const ReplayReport&) const = default;
};

/// A device's translated rows, consumed one cadence tick at a time.
class ReplaySession {
public:
    /// Reads and translates the whole file. Throws IoError.
    explicit ReplaySession(DeviceProfile profile);

    const DeviceProfile& profile() const { return profile_; }
    bool done() const { return next_ == observations_.size(); }
    Timestamp next_timestamp() const { return observations_.at(next_).timestamp; }
    Observation pop();

    std::int64_t rows_skipped() const { return skipped_; }
    std::int64_t rows_total() const { return static_cast<std::int64_t>(observations_.size()) + skipped_; }

private:
    DeviceProfile profile_;
    std::vector<Observation> observations_;
    std::size_t next_ = 0;
    std::int64_t skipped_ = 0;
};

using ObservationSink = std::function<void(const Observation&)>;

/// Delivers every good row to `sink` in timestamp order, advancing `clock`
/// to each row's timestamp first. Throws IoError before sending anything.
ReplayReport replay(const DeviceProfile& profile, SimClock& clock, const ObservationSink& sink);

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

inline constexpr Timestamp kCorpusEpoch = 564 * kMonthBucket;  // month-aligned, 2016-04-29T00:00Z

struct CorpusFile {
    std::string path;  // relative to the corpus directory
    std::int64_t rows = 0;
    std::optional<double> total_energy_kwh;

    bool operator==(const CorpusFile&) const = default;
};

struct CorpusManifest {
    std::vector<CorpusFile> files;
    std::uint64_t seed = 0;
    int homes = 0;
    int minutes = 0;

    const CorpusFile* find(const std::string& path) const;
};

void to_json(Json& j, const CorpusFile& file);
void from_json(const Json& j, CorpusFile& file);
void to_json(Json& j, const CorpusManifest& manifest);
void from_json(const Json& j, CorpusManifest& manifest);

/// "home-b", "home-c", ... for the i-th home (0-based).
std::string home_name(int index);

/// Writes per-home meter files, weather units for the first two homes (the
/// first with indoor sensors), one DER file and manifest.json. Pure function
/// of (seed, homes, minutes). Throws std::invalid_argument / IoError.
CorpusManifest generate_synthetic_corpus(std::uint64_t seed, int homes, int minutes,
                                         const std::filesystem::path& out_dir);

CorpusManifest load_manifest(const std::filesystem::path& corpus_dir);

/// Profiles for every file in a generated corpus, keyed by RWO name.
std::map<std::string, DeviceProfile> corpus_profiles(const CorpusManifest& manifest,
                                                     const std::filesystem::path& corpus_dir);

// ---------------------------------------------------------------------------
// Batch load generator
// ---------------------------------------------------------------------------

struct BatchTiming {
    double send_ms = 0;
    double completion_ms = 0;
    std::optional<ErrorCode> error;  // per-request failure, not fatal
};

/// Somewhere a batch of observation POSTs can be sent.
class BatchTarget {
public:
    virtual ~BatchTarget() = default;
    virtual std::vector<BatchTiming> submit(const std::vector<HttpRequest>& requests, double at_ms) = 0;
};

/// Runs the batch through the instance-pool model. Each request is also
/// executed against `handler` (when set) in start order so the platform sees
/// the traffic; non-2xx replies are recorded as errors.
class SimulatedPoolTarget : public BatchTarget {
public:
    using Handler = std::function<HttpResponse(const HttpRequest&)>;

    explicit SimulatedPoolTarget(InstancePoolConfig config, Handler handler = {})
        : pool_(std::move(config)), handler_(std::move(handler)) {}

    std::vector<BatchTiming> submit(const std::vector<HttpRequest>& requests, double at_ms) override;
    const InstancePool& pool() const { return pool_; }

private:
    InstancePool pool_;
    Handler handler_;
};

/// Sends the batch concurrently to a live server over `workers`
/// connections; wall-clock milliseconds.
class LiveHttpTarget : public BatchTarget {
public:
    LiveHttpTarget(std::string host, int port, int workers = 16)
        : host_(std::move(host)), port_(port), workers_(workers) {}
    std::vector<BatchTiming> submit(const std::vector<HttpRequest>& requests, double at_ms) override;

private:
    std::string host_;
    int port_;
    int workers_;
};

/// One meter reading per profile, all sent at the minute boundary `at`.
/// The reading is the profile's row stamped `at` (or its first row, restamped).
std::vector<BatchTiming> batch_post(const std::vector<DeviceProfile>& profiles, Timestamp at, BatchTarget& target);

}  // namespace gridvirt
