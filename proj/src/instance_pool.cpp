#include "gridvirt/instance_pool.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <thread>

namespace gridvirt {

InstancePoolConfig InstancePoolConfig::fixed(int count) {
    InstancePoolConfig config;
    config.mode = StaticInstances{count};
    return config;
}

InstancePoolConfig InstancePoolConfig::dynamic(int min, int max) {
    InstancePoolConfig config;
    config.mode = DynamicInstances{min, max};
    return config;
}

int InstancePoolConfig::min_instances() const {
    if (const auto* s = std::get_if<StaticInstances>(&mode)) return s->count;
    return std::get<DynamicInstances>(mode).min;
}

int InstancePoolConfig::max_instances() const {
    if (const auto* s = std::get_if<StaticInstances>(&mode)) return s->count;
    return std::get<DynamicInstances>(mode).max;
}

std::string InstancePoolConfig::label() const {
    if (const auto* s = std::get_if<StaticInstances>(&mode)) return "static-" + std::to_string(s->count);
    const auto& d = std::get<DynamicInstances>(mode);
    return "dynamic-" + std::to_string(d.min) + "-" + std::to_string(d.max);
}

void validate(const InstancePoolConfig& config) {
    if (const auto* s = std::get_if<StaticInstances>(&config.mode)) {
        if (s->count < 1) throw std::invalid_argument("static pool needs at least one instance");
    } else {
        const auto& d = std::get<DynamicInstances>(config.mode);
        if (d.min < 0 || d.max < d.min) throw std::invalid_argument("dynamic pool needs 0 <= min <= max");
        if (d.max < 1) throw std::invalid_argument("dynamic pool needs max >= 1");
    }
    if (!(config.service_time_ms > 0)) throw std::invalid_argument("service_time_ms must be positive");
    if (config.cold_start_ms < 0) throw std::invalid_argument("cold_start_ms must be >= 0");
    if (config.scale_up_queue_threshold < 1) throw std::invalid_argument("scale_up_queue_threshold must be >= 1");
    if (config.scale_down_idle_ms < 0) throw std::invalid_argument("scale_down_idle_ms must be >= 0");
}

InstancePool::InstancePool(InstancePoolConfig config) : config_(std::move(config)) {
    validate(config_);
    for (int i = 0; i < config_.min_instances(); ++i) {
        instances_.push_back(Instance{next_instance_id_++, State::Idle, 0, 0, 0});
    }
}

int InstancePool::instance_count() const {
    return static_cast<int>(std::count_if(instances_.begin(), instances_.end(),
                                          [](const Instance& i) { return i.state != State::Retired; }));
}

void InstancePool::spawn(double now) {
    Instance inst;
    inst.id = next_instance_id_++;
    if (config_.cold_start_ms == 0) {
        inst.state = State::Idle;
        inst.idle_since = now;
    } else {
        inst.state = State::Starting;
        inst.ready_at = now + config_.cold_start_ms;
    }
    instances_.push_back(inst);
}

void InstancePool::dispatch(double now) {
    for (auto& inst : instances_) {
        if (queue_.empty()) return;
        if (inst.state != State::Idle) continue;
        auto& rec = *queue_.front();
        queue_.pop_front();
        rec.start_ms = now;
        rec.completion_ms = now + config_.service_time_ms;
        rec.instance_id = inst.id;
        inst.state = State::Busy;
        inst.busy_until = rec.completion_ms;
    }
}

void InstancePool::autoscale(double now) {
    if (!config_.is_dynamic()) return;
    const auto queued = queue_.size();
    // A pool scaled to zero always wakes one instance for any waiting request.
    if (queued > 0 && instance_count() == 0) spawn(now);
    while (queued >= static_cast<std::size_t>(config_.scale_up_queue_threshold) &&
           instance_count() < config_.max_instances()) {
        spawn(now);
    }
    // Retire the newest idle instances first.
    for (auto it = instances_.rbegin(); it != instances_.rend(); ++it) {
        if (instance_count() <= config_.min_instances()) break;
        if (it->state == State::Idle && now - it->idle_since > config_.scale_down_idle_ms) it->state = State::Retired;
    }
}

void InstancePool::probe(double now) const {
    if (!probe_) return;
    PoolProbe p;
    p.time_ms = now;
    p.queue_length = queue_.size();
    p.instances = instance_count();
    p.idle = static_cast<int>(
        std::count_if(instances_.begin(), instances_.end(), [](const Instance& i) { return i.state == State::Idle; }));
    probe_(p);
}

std::vector<LatencyRecord> InstancePool::submit_batch(int batch_size, double arrival_ms) {
    return std::move(run_batches({{arrival_ms, batch_size}}).front());
}

std::vector<std::vector<LatencyRecord>> InstancePool::run_batches(const std::vector<BatchArrival>& batches) {
    std::vector<std::vector<LatencyRecord>> out(batches.size());
    for (std::size_t b = 0; b < batches.size(); ++b) {
        if (batches[b].size < 0) throw std::invalid_argument("batch size must be >= 0");
        if (batches[b].arrival_ms < (b ? batches[b - 1].arrival_ms : last_time_)) {
            throw std::invalid_argument("batches must arrive in time order");
        }
        out[b].resize(static_cast<std::size_t>(batches[b].size));
    }

    std::size_t next_batch = 0;
    double now = batches.empty() ? last_time_ : batches.front().arrival_ms;
    while (true) {
        for (auto& inst : instances_) {
            if (inst.state == State::Starting && inst.ready_at <= now) {
                inst.state = State::Idle;
                inst.idle_since = inst.ready_at;
            } else if (inst.state == State::Busy && inst.busy_until <= now) {
                inst.state = State::Idle;
                inst.idle_since = inst.busy_until;
            }
        }
        while (next_batch < batches.size() && batches[next_batch].arrival_ms <= now) {
            auto& records = out[next_batch];
            for (auto& rec : records) {
                rec.request_id = next_request_id_++;
                rec.arrival_ms = batches[next_batch].arrival_ms;
                queue_.push_back(&rec);
            }
            ++next_batch;
        }
        dispatch(now);
        autoscale(now);
        dispatch(now);
        probe(now);

        double next = std::numeric_limits<double>::infinity();
        if (next_batch < batches.size()) next = batches[next_batch].arrival_ms;
        for (const auto& inst : instances_) {
            if (inst.state == State::Starting) next = std::min(next, inst.ready_at);
            if (inst.state == State::Busy) next = std::min(next, inst.busy_until);
        }
        if (std::isinf(next)) break;
        now = next;
    }
    if (!queue_.empty()) throw std::logic_error("instance pool stalled with queued requests");
    last_time_ = now;
    return out;
}

std::vector<LatencyRecord> simulate_batch(const InstancePoolConfig& config, int batch_size, double arrival_ms) {
    InstancePool pool(config);
    return pool.submit_batch(batch_size, arrival_ms);
}

BatchStats summarize(const std::vector<LatencyRecord>& records, double arrival_ms, int minute) {
    BatchStats stats;
    stats.minute = minute;
    if (records.empty()) return stats;
    std::vector<double> latencies;
    latencies.reserve(records.size());
    double last_completion = arrival_ms;
    for (const auto& r : records) {
        latencies.push_back(r.latency_ms());
        last_completion = std::max(last_completion, r.completion_ms);
    }
    std::sort(latencies.begin(), latencies.end());
    const auto nearest_rank = [&](double pct) {
        const auto rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * static_cast<double>(latencies.size())));
        return latencies[std::max<std::size_t>(rank, 1) - 1];
    };
    stats.makespan_ms = last_completion - arrival_ms;
    stats.mean_ms = std::accumulate(latencies.begin(), latencies.end(), 0.0) / static_cast<double>(latencies.size());
    stats.p50_ms = nearest_rank(50);
    stats.p95_ms = nearest_rank(95);
    return stats;
}

std::vector<BatchStats> simulate_minutes(const InstancePoolConfig& config, int batch_size, int minutes) {
    if (minutes < 1) throw std::invalid_argument("minutes must be >= 1");
    InstancePool pool(config);
    std::vector<BatchStats> out;
    std::vector<InstancePool::BatchArrival> arrivals;
    for (int m = 0; m < minutes; ++m) arrivals.push_back({60000.0 * m, batch_size});
    const auto batches = pool.run_batches(arrivals);
    for (int m = 0; m < minutes; ++m) out.push_back(summarize(batches[m], arrivals[m].arrival_ms, m + 1));
    return out;
}

std::string format_number(double value) {
    if (value == 0) return "0";
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
    if (ec != std::errc{}) return "nan";
    return std::string(buf, ptr);
}

void write_bench_csv(std::ostream& out, const std::vector<InstancePoolConfig>& configs, int batch_size, int minutes) {
    out << kBenchCsvHeader << '\n';
    for (const auto& config : configs) {
        for (const auto& s : simulate_minutes(config, batch_size, minutes)) {
            out << config.label() << ',' << s.minute << ',' << format_number(s.makespan_ms) << ','
                << format_number(s.mean_ms) << ',' << format_number(s.p50_ms) << ',' << format_number(s.p95_ms)
                << '\n';
        }
    }
}

void emit_bench_csv(const std::vector<InstancePoolConfig>& configs, int batch_size, int minutes,
                    const std::string& out_path) {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + out_path);
    write_bench_csv(out, configs, batch_size, minutes);
    if (!out) throw std::runtime_error("write failed for " + out_path);
}

std::vector<LatencyRecord> run_live_batch(int workers, int batch_size,
                                          const std::function<void(std::int64_t)>& handler) {
    if (workers < 1) throw std::invalid_argument("live pool needs at least one worker");
    using Clock = std::chrono::steady_clock;
    const auto origin = Clock::now();
    const auto elapsed_ms = [&origin]() {
        return std::chrono::duration<double, std::milli>(Clock::now() - origin).count();
    };

    std::vector<LatencyRecord> records(static_cast<std::size_t>(std::max(batch_size, 0)));
    for (std::size_t i = 0; i < records.size(); ++i) records[i].request_id = static_cast<std::int64_t>(i);

    std::atomic<std::size_t> next{0};
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) {
        threads.emplace_back([&, w]() {
            while (true) {
                const auto i = next.fetch_add(1);
                if (i >= records.size()) return;
                auto& rec = records[i];
                rec.instance_id = w;
                rec.start_ms = elapsed_ms();
                handler(rec.request_id);
                rec.completion_ms = elapsed_ms();
            }
        });
    }
    for (auto& t : threads) t.join();
    return records;
}

}  // namespace gridvirt
