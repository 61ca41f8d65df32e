#pragma once

// Discrete-event model of a virtual entity served by a pool of cloned
// instances behind one address. Each instance processes one request at a
// time; requests wait in a single FIFO queue.

#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

namespace gridvirt {

struct StaticInstances {
    int count = 1;
    bool operator==(const StaticInstances&) const = default;
};

struct DynamicInstances {
    int min = 0;
    int max = 10;
    bool operator==(const DynamicInstances&) const = default;
};

struct InstancePoolConfig {
    std::variant<StaticInstances, DynamicInstances> mode = StaticInstances{1};
    double service_time_ms = 125.0;
    double cold_start_ms = 2000.0;
    int scale_up_queue_threshold = 5;
    double scale_down_idle_ms = 30000.0;

    static InstancePoolConfig fixed(int count);
    static InstancePoolConfig dynamic(int min, int max);

    bool is_dynamic() const { return std::holds_alternative<DynamicInstances>(mode); }
    int min_instances() const;
    int max_instances() const;

    /// "static-4", "dynamic-0-10"
    std::string label() const;

    bool operator==(const InstancePoolConfig&) const = default;
};

/// Throws std::invalid_argument.
void validate(const InstancePoolConfig& config);

struct LatencyRecord {
    std::int64_t request_id = 0;
    double arrival_ms = 0;
    double start_ms = 0;
    double completion_ms = 0;
    int instance_id = 0;

    double latency_ms() const { return completion_ms - arrival_ms; }
    bool operator==(const LatencyRecord&) const = default;
};

/// Snapshot taken after every event has been fully processed.
struct PoolProbe {
    double time_ms = 0;
    std::size_t queue_length = 0;
    int instances = 0;  // starting + idle + busy
    int idle = 0;       // ready and not serving
};

class InstancePool {
public:
    explicit InstancePool(InstancePoolConfig config);

    /// Called after each processed event; used to check pool invariants.
    void set_probe(std::function<void(const PoolProbe&)> probe) { probe_ = std::move(probe); }

    struct BatchArrival {
        double arrival_ms = 0;
        int size = 0;
    };

    /// Feeds the batches (in arrival order) through the pool and runs until
    /// every request has completed. Returns one record list per batch, in
    /// request order. Pool state (instances, idle timers) persists to the
    /// next call.
    std::vector<std::vector<LatencyRecord>> run_batches(const std::vector<BatchArrival>& batches);

    /// run_batches with a single batch.
    std::vector<LatencyRecord> submit_batch(int batch_size, double arrival_ms);

    int instance_count() const;
    const InstancePoolConfig& config() const { return config_; }

private:
    enum class State { Starting, Idle, Busy, Retired };

    struct Instance {
        int id = 0;
        State state = State::Idle;
        double ready_at = 0;
        double busy_until = 0;
        double idle_since = 0;
    };

    void dispatch(double now);
    void autoscale(double now);
    void spawn(double now);
    void probe(double now) const;

    InstancePoolConfig config_;
    std::vector<Instance> instances_;
    std::deque<LatencyRecord*> queue_;  // FIFO of waiting requests
    std::int64_t next_request_id_ = 0;
    int next_instance_id_ = 0;
    double last_time_ = 0;
    std::function<void(const PoolProbe&)> probe_;
};

std::vector<LatencyRecord> simulate_batch(const InstancePoolConfig& config, int batch_size, double arrival_ms = 0);

struct BatchStats {
    int minute = 1;
    double makespan_ms = 0;
    double mean_ms = 0;
    double p50_ms = 0;
    double p95_ms = 0;
};

/// Latency statistics of one batch that arrived at `arrival_ms`. An empty
/// batch reports zeros.
BatchStats summarize(const std::vector<LatencyRecord>& records, double arrival_ms, int minute = 1);

/// One batch at the start of each simulated minute, pool state carried over.
std::vector<BatchStats> simulate_minutes(const InstancePoolConfig& config, int batch_size, int minutes);

inline constexpr const char* kBenchCsvHeader = "config,minute,makespan_ms,mean_ms,p50_ms,p95_ms";

/// Writes the header and one row per (config, minute).
void write_bench_csv(std::ostream& out, const std::vector<InstancePoolConfig>& configs, int batch_size, int minutes);

/// write_bench_csv to a file. Throws std::runtime_error when unwritable.
void emit_bench_csv(const std::vector<InstancePoolConfig>& configs, int batch_size, int minutes,
                    const std::string& out_path);

/// Shortest decimal form that round-trips ("50000", "62.5").
std::string format_number(double value);

/// Live mode: `workers` threads drain `batch_size` requests through
/// `handler` and record wall-clock latencies (milliseconds since the call).
std::vector<LatencyRecord> run_live_batch(int workers, int batch_size,
                                          const std::function<void(std::int64_t request_id)>& handler);

}  // namespace gridvirt
