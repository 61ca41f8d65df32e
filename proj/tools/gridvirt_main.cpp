#include <CLI11.hpp>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <pthread.h>
#include <thread>

#include "gridvirt/device.hpp"
#include "gridvirt/http_server.hpp"
#include "gridvirt/instance_pool.hpp"
#include "gridvirt/platform.hpp"
#include "gridvirt/scenario.hpp"

using namespace gridvirt;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Globals {
    std::optional<std::uint64_t> seed;
    bool sim_clock = false;
    bool wall_clock = false;
    std::string log_level = "info";
};

std::pair<std::string, int> parse_bind(const std::string& text) {
    const auto colon = text.rfind(':');
    if (colon == std::string::npos || colon == 0) throw UsageError("--bind wants host:port, got '" + text + "'");
    try {
        std::size_t used = 0;
        const int port = std::stoi(text.substr(colon + 1), &used);
        if (used != text.size() - colon - 1 || port < 0 || port > 65535) throw std::out_of_range("port");
        return {text.substr(0, colon), port};
    } catch (const std::logic_error&) {
        throw UsageError("--bind has a bad port: '" + text + "'");
    }
}

void write_json(const std::string& path, const Json& value) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << value.dump(2) << "\n";
    if (!out) throw std::runtime_error("failed writing " + path);
}

// --- serve ------------------------------------------------------------------

struct ServeArgs {
    std::string bind = "127.0.0.1:8080";
    std::string scenario;
    std::string layers = "vo,me,registry";
    std::string snapshot = "gridvirt-snapshot.json";
};

int cmd_serve(const Globals& g, const ServeArgs& args) {
    if (g.sim_clock) throw UsageError("serve always runs on the wall clock");
    const auto [host, port] = parse_bind(args.bind);
    LayerSet layers;
    try {
        layers = LayerSet::parse(args.layers);
    } catch (const std::exception& e) {
        throw UsageError(std::string("--layer: ") + e.what());
    }

    // Signals go to the waiter thread only.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    Platform platform(g.seed, layers);
    Json issued = Json::array();
    if (!args.scenario.empty()) {
        const auto config = load_scenario(args.scenario);
        issued = provision(platform, config);
        spdlog::info("provisioned {} VOs from {}", config.vos.size(), args.scenario);
        std::cout << Json{{"keys", issued}}.dump() << std::endl;
    }

    HttpServer server(platform);
    if (!server.bind(host, port)) {
        spdlog::error("cannot bind {}:{}", host, port);
        return kExitUsage;
    }
    spdlog::info("listening on {}:{} (layers {})", host, server.port(), args.layers);

    std::thread waiter([&server, &signals]() {
        int sig = 0;
        sigwait(&signals, &sig);
        spdlog::info("signal {}, shutting down", sig);
        server.stop();
    });
    server.run();
    if (waiter.joinable()) {
        // run() can also end on its own; wake the waiter so it exits.
        pthread_kill(waiter.native_handle(), SIGTERM);
        waiter.join();
    }

    auto snapshot = platform.snapshot();
    snapshot["issued_keys"] = issued;
    write_json(args.snapshot, snapshot);
    spdlog::info("snapshot written to {}", args.snapshot);
    return kExitOk;
}

// --- gen --------------------------------------------------------------------

struct GenArgs {
    int homes = 2;
    int minutes = 60;
    std::optional<std::uint64_t> seed;
    std::string out;
};

int cmd_gen(const Globals& g, const GenArgs& args) {
    const auto seed = args.seed.value_or(g.seed.value_or(42));
    const auto manifest = generate_synthetic_corpus(seed, args.homes, args.minutes, args.out);
    for (const auto& file : manifest.files) {
        spdlog::info("{}: {} rows", file.path, file.rows);
    }
    std::cout << "wrote " << manifest.files.size() << " device files and manifest.json to " << args.out << "\n";
    return kExitOk;
}

// --- scenario ---------------------------------------------------------------

struct ScenarioArgs {
    std::string config;
    std::string out;
    std::string work_dir = ".";
};

int cmd_scenario(const Globals& g, const ScenarioArgs& args) {
    if (g.wall_clock) throw UsageError("scenario runs on the simulated clock only");
    auto config = load_scenario(args.config);
    RunOptions options;
    options.work_dir = args.work_dir;
    options.seed_override = g.seed;
    const auto report = run_case_study(std::move(config), options);
    if (args.out.empty()) {
        std::cout << report.dump(2) << "\n";
        std::cerr << summarize_report(report);
    } else {
        write_json(args.out, report);
        std::cout << summarize_report(report);
    }
    return kExitOk;
}

// --- bench ------------------------------------------------------------------

struct BenchArgs {
    std::vector<int> instances;
    std::string dynamic;
    int batch = 400;
    int minutes = 1;
    double service_ms = 125.0;
    double cold_start_ms = 2000.0;
    std::string out;
};

InstancePoolConfig parse_dynamic(const std::string& text) {
    const auto colon = text.find(':');
    try {
        if (colon == std::string::npos) throw std::invalid_argument("no colon");
        return InstancePoolConfig::dynamic(std::stoi(text.substr(0, colon)), std::stoi(text.substr(colon + 1)));
    } catch (const std::logic_error&) {
        throw UsageError("--dynamic wants MIN:MAX, got '" + text + "'");
    }
}

std::vector<BatchStats> live_minutes(const Globals& g, int workers, int batch, int minutes) {
    Platform platform(g.seed);
    for (int i = 0; i < batch; ++i) {
        call::RegisterVO reg;
        reg.descriptor.id = EntityId::vo("bench-meter-" + std::to_string(i));
        reg.descriptor.owner = EntityId::service("bench");
        reg.descriptor.location = "bench";
        reg.descriptor.functionalities = {"measure:energy_kwh"};
        reg.descriptor.endpoint = "/vo/" + reg.descriptor.id.name;
        reg.descriptor.default_tier = AccessTier::Public;
        reg.visibility.set("energy_kwh", AccessTier::Public);
        const auto resp = platform.handle(encode(reg));
        if (!resp.ok()) throw std::runtime_error("bench registration failed: " + resp.body);
    }
    HttpServer server(platform);
    if (!server.bind("127.0.0.1", 0)) throw std::runtime_error("cannot bind a local port for the live bench");
    std::thread serving([&server]() { server.run(); });

    LiveHttpTarget target("127.0.0.1", server.port(), workers);
    const auto base = static_cast<Timestamp>(std::time(nullptr));
    std::vector<BatchStats> stats;
    for (int m = 0; m < minutes; ++m) {
        std::vector<HttpRequest> requests;
        for (int i = 0; i < batch; ++i) {
            Observation obs;
            obs.source = EntityId::rwo("bench-meter-" + std::to_string(i));
            obs.timestamp = base + m;
            obs.fields["energy_kwh"] = 0.02;
            requests.push_back(encode_observation_post(obs));
        }
        const auto timings = target.submit(requests, 0.0);
        std::vector<LatencyRecord> records;
        int errors = 0;
        for (std::size_t i = 0; i < timings.size(); ++i) {
            records.push_back({static_cast<std::int64_t>(i), 0.0, timings[i].send_ms, timings[i].completion_ms, 0});
            if (timings[i].error) ++errors;
        }
        if (errors > 0) spdlog::warn("minute {}: {} of {} posts failed", m + 1, errors, batch);
        stats.push_back(summarize(records, 0.0, m + 1));
    }
    server.stop();
    serving.join();
    return stats;
}

int cmd_bench(const Globals& g, BenchArgs args) {
    if (args.batch < 0) throw UsageError("--batch must not be negative");
    if (args.minutes < 1) throw UsageError("--minutes must be at least 1");
    if (args.instances.empty() && args.dynamic.empty()) args.instances = {1, 2, 5, 10};

    std::vector<InstancePoolConfig> configs;
    for (const int n : args.instances) {
        if (n < 1) throw UsageError("--instances entries must be at least 1");
        configs.push_back(InstancePoolConfig::fixed(n));
    }
    if (!args.dynamic.empty()) configs.push_back(parse_dynamic(args.dynamic));
    for (auto& c : configs) {
        c.service_time_ms = args.service_ms;
        c.cold_start_ms = args.cold_start_ms;
        try {
            validate(c);
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
    }

    std::ofstream file;
    if (!args.out.empty()) {
        file.open(args.out);
        if (!file) throw std::runtime_error("cannot write " + args.out);
    }
    std::ostream& out = args.out.empty() ? std::cout : file;

    if (g.wall_clock) {
        out << kBenchCsvHeader << "\n";
        for (const auto& c : configs) {
            if (c.is_dynamic()) throw UsageError("--dynamic needs the simulated clock");
            for (const auto& s : live_minutes(g, c.min_instances(), args.batch, args.minutes)) {
                out << "live-" << c.label() << "," << s.minute << "," << format_number(s.makespan_ms) << ","
                    << format_number(s.mean_ms) << "," << format_number(s.p50_ms) << "," << format_number(s.p95_ms)
                    << "\n";
            }
        }
        return kExitOk;
    }

    write_bench_csv(out, configs, args.batch, args.minutes);
    for (const auto& c : configs) {
        const auto stats = simulate_minutes(c, args.batch, args.minutes);
        std::string line;
        for (const auto& s : stats) line += " " + format_number(s.makespan_ms / 1000.0) + "s";
        spdlog::info("{}: makespan{}", c.label(), line);
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Smart-grid IoT virtualization middleware"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "Seed for every simulated-mode output");
    auto* sim = app.add_flag("--sim-clock", g.sim_clock, "Simulated clock (default)");
    auto* wall = app.add_flag("--wall-clock", g.wall_clock, "Wall clock (serve, live bench)");
    sim->excludes(wall);
    app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error, off")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"}));

    ServeArgs serve_args;
    auto* serve = app.add_subcommand("serve", "Run registries and VO/ME runtimes behind one HTTP port");
    serve->add_option("--bind", serve_args.bind, "host:port");
    serve->add_option("--scenario", serve_args.scenario, "Register the VOs and grants of a scenario file")
        ->check(CLI::ExistingFile);
    serve->add_option("--layer", serve_args.layers, "Comma list of vo, me, registry");
    serve->add_option("--snapshot", serve_args.snapshot, "State file written on shutdown");

    GenArgs gen_args;
    auto* gen = app.add_subcommand("gen", "Write a synthetic device corpus");
    gen->add_option("--homes", gen_args.homes, "Number of homes")->check(CLI::Range(1, 26));
    gen->add_option("--minutes", gen_args.minutes, "Minutes of data per device")->check(CLI::PositiveNumber);
    gen->add_option("--seed", gen_args.seed, "Corpus seed");
    gen->add_option("--out", gen_args.out, "Output directory")->required();

    ScenarioArgs scenario_args;
    auto* scenario = app.add_subcommand("scenario", "Run the case study and report");
    scenario->add_option("--config", scenario_args.config, "Scenario file")->required()->check(CLI::ExistingFile);
    scenario->add_option("--out", scenario_args.out, "Report JSON path (stdout when absent)");
    scenario->add_option("--work-dir", scenario_args.work_dir, "Where generated corpora go");

    BenchArgs bench_args;
    auto* bench = app.add_subcommand("bench", "Instance-pool scaling benchmark (CSV)");
    bench->add_option("--instances", bench_args.instances, "Static pool sizes, e.g. 1,2,5,10")->delimiter(',');
    bench->add_option("--dynamic", bench_args.dynamic, "Autoscaled pool MIN:MAX");
    bench->add_option("--batch", bench_args.batch, "Requests per minute");
    bench->add_option("--minutes", bench_args.minutes, "Simulated minutes");
    bench->add_option("--service-ms", bench_args.service_ms, "Per-request service time");
    bench->add_option("--cold-start-ms", bench_args.cold_start_ms, "Instance start-up time");
    bench->add_option("--out", bench_args.out, "CSV path (stdout when absent)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    auto logger = spdlog::stderr_color_mt("gridvirt");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::from_str(g.log_level));

    try {
        if (*serve) return cmd_serve(g, serve_args);
        if (*gen) return cmd_gen(g, gen_args);
        if (*scenario) return cmd_scenario(g, scenario_args);
        if (*bench) return cmd_bench(g, bench_args);
    } catch (const UsageError& e) {
        std::cerr << "gridvirt: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "gridvirt: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}
