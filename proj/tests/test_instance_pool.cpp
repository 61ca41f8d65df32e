#include <doctest.h>

#include <atomic>
#include <cmath>
#include <set>
#include <sstream>

#include "gridvirt/instance_pool.hpp"

using namespace gridvirt;

TEST_CASE("static pool makespan is the number of service rounds") {
    for (int k = 1; k <= 12; ++k) {
        for (int n = 0; n <= 60; ++n) {
            const auto records = simulate_batch(InstancePoolConfig::fixed(k), n);
            const auto stats = summarize(records, 0);
            const double rounds = std::ceil(static_cast<double>(n) / k);
            CHECK(stats.makespan_ms == rounds * 125.0);
        }
    }
}

TEST_CASE("static pool serves requests first in, first out") {
    const int k = 3;
    const auto records = simulate_batch(InstancePoolConfig::fixed(k), 10, 500);
    REQUIRE(records.size() == 10);
    std::set<int> used;
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(records[i].request_id == static_cast<std::int64_t>(i));
        CHECK(records[i].arrival_ms == 500);
        CHECK(records[i].start_ms == 500 + static_cast<double>(i / k) * 125.0);
        CHECK(records[i].latency_ms() == static_cast<double>(i / k + 1) * 125.0);
        used.insert(records[i].instance_id);
    }
    CHECK(used.size() == static_cast<std::size_t>(k));
}

TEST_CASE("bench configurations over a batch of 400") {
    const std::pair<int, double> expected[] = {{1, 50000}, {2, 25000}, {5, 10000}, {10, 5000}};
    for (const auto& [k, makespan] : expected) {
        CHECK(simulate_minutes(InstancePoolConfig::fixed(k), 400, 1).at(0).makespan_ms == makespan);
    }
}

TEST_CASE("dynamic pool pays a cold start only in the first minute") {
    const auto dynamic = simulate_minutes(InstancePoolConfig::dynamic(0, 10), 400, 5);
    const auto fixed = simulate_minutes(InstancePoolConfig::fixed(10), 400, 5);
    REQUIRE(dynamic.size() == 5);
    for (int m = 1; m < 5; ++m) {
        CHECK(dynamic[0].makespan_ms > dynamic[m].makespan_ms);
        CHECK(std::abs(dynamic[m].makespan_ms - fixed[m].makespan_ms) <= 0.2 * fixed[m].makespan_ms);
        CHECK(dynamic[m].minute == m + 1);
    }
}

TEST_CASE("pool invariants hold after every event") {
    for (const auto& config : {InstancePoolConfig::dynamic(0, 10), InstancePoolConfig::dynamic(2, 4),
                               InstancePoolConfig::dynamic(0, 1), InstancePoolConfig::fixed(3)}) {
        InstancePool pool(config);
        int probes = 0;
        pool.set_probe([&](const PoolProbe& p) {
            ++probes;
            CHECK(p.instances <= config.max_instances());
            CHECK(p.instances >= config.min_instances());
            CHECK(p.idle <= p.instances);
            // work conserving: nobody idles while requests wait
            if (p.idle > 0) CHECK(p.queue_length == 0);
        });
        pool.run_batches({{0, 37}, {60000, 5}, {120000, 0}, {180000, 120}});
        CHECK(probes > 0);
    }
}

TEST_CASE("an idle dynamic pool shrinks back to its minimum") {
    InstancePool pool(InstancePoolConfig::dynamic(1, 6));
    pool.submit_batch(100, 0);
    CHECK(pool.instance_count() == 6);
    pool.submit_batch(0, 200000);
    CHECK(pool.instance_count() == 1);
}

TEST_CASE("a pool scaled to zero still wakes for a single request") {
    const auto records = simulate_batch(InstancePoolConfig::dynamic(0, 10), 1);
    REQUIRE(records.size() == 1);
    CHECK(records[0].latency_ms() == 2000.0 + 125.0);
}

TEST_CASE("empty batches report zeros") {
    const auto stats = simulate_minutes(InstancePoolConfig::fixed(4), 0, 2);
    for (const auto& s : stats) {
        CHECK(s.makespan_ms == 0);
        CHECK(s.mean_ms == 0);
        CHECK(s.p50_ms == 0);
        CHECK(s.p95_ms == 0);
    }
}

TEST_CASE("percentiles use the nearest rank") {
    std::vector<LatencyRecord> records;
    for (int i = 1; i <= 20; ++i) records.push_back({i, 0, 0, static_cast<double>(i), 0});
    const auto s = summarize(records, 0);
    CHECK(s.p50_ms == 10);
    CHECK(s.p95_ms == 19);
    CHECK(s.mean_ms == doctest::Approx(10.5));
    CHECK(s.makespan_ms == 20);
}

TEST_CASE("configuration validation and labels") {
    CHECK_THROWS_AS(validate(InstancePoolConfig::fixed(0)), std::invalid_argument);
    CHECK_THROWS_AS(validate(InstancePoolConfig::dynamic(3, 2)), std::invalid_argument);
    CHECK_THROWS_AS(validate(InstancePoolConfig::dynamic(0, 0)), std::invalid_argument);
    auto c = InstancePoolConfig::fixed(2);
    c.service_time_ms = 0;
    CHECK_THROWS_AS(validate(c), std::invalid_argument);
    CHECK(InstancePoolConfig::fixed(4).label() == "static-4");
    CHECK(InstancePoolConfig::dynamic(0, 10).label() == "dynamic-0-10");
    InstancePool pool(InstancePoolConfig::fixed(1));
    pool.submit_batch(1, 1000);
    CHECK_THROWS_AS(pool.submit_batch(1, 10), std::invalid_argument);
    CHECK_THROWS_AS(pool.submit_batch(-1, 5000), std::invalid_argument);
}

TEST_CASE("bench csv rows") {
    std::ostringstream out;
    write_bench_csv(out, {InstancePoolConfig::fixed(1), InstancePoolConfig::dynamic(0, 10)}, 400, 3);
    std::istringstream in(out.str());
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line)) lines.push_back(line);
    REQUIRE(lines.size() == 7);
    CHECK(lines[0] == kBenchCsvHeader);
    CHECK(lines[1].rfind("static-1,1,50000,", 0) == 0);
    CHECK(lines[4].rfind("dynamic-0-10,1,", 0) == 0);
    CHECK(format_number(62.5) == "62.5");
    CHECK(format_number(50000) == "50000");
    CHECK(format_number(0) == "0");
}

TEST_CASE("live batches record every request") {
    std::atomic<int> calls = 0;
    const auto records = run_live_batch(4, 50, [&](std::int64_t) { ++calls; });
    CHECK(calls == 50);
    REQUIRE(records.size() == 50);
    std::set<std::int64_t> ids;
    for (const auto& r : records) {
        ids.insert(r.request_id);
        CHECK(r.completion_ms >= r.start_ms);
        CHECK(r.start_ms >= r.arrival_ms);
    }
    CHECK(ids.size() == 50);
}
