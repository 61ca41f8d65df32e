#include "gridvirt/device.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

namespace gridvirt {

namespace {

const std::vector<std::pair<std::string, std::string>>& vendor_columns(DeviceKind kind) {
    static const std::vector<std::pair<std::string, std::string>> meter{{"use_kwh", "energy_kwh"}};
    static const std::vector<std::pair<std::string, std::string>> weather{
        {"temperature", "outside_temp_c"}, {"humidity", "outside_humidity_pct"}, {"windSpeed", "wind_speed_ms"},
        {"windBearing", "wind_dir_deg"},   {"windGust", "wind_gust_ms"},         {"heatIndex", "heat_index_c"},
        {"insideTemp", "inside_temp_c"},   {"insideHumidity", "inside_humidity_pct"},
    };
    static const std::vector<std::pair<std::string, std::string>> der{
        {"wind_w", "gen_wind_w"}, {"pv_w", "gen_pv_w"}, {"battery_pct", "battery_level_pct"}};
    switch (kind) {
        case DeviceKind::SmartMeter: return meter;
        case DeviceKind::WeatherUnit: return weather;
        case DeviceKind::DER: return der;
    }
    return meter;
}

bool is_indoor_field(const std::string& field) { return field == "inside_temp_c" || field == "inside_humidity_pct"; }

std::optional<double> parse_double(std::string_view text) {
    while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
    while (!text.empty() && (text.back() == ' ' || text.back() == '\r')) text.remove_suffix(1);
    if (text.empty()) return std::nullopt;
    double value = 0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc{} || ptr != end || !std::isfinite(value)) return std::nullopt;
    return value;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

std::string fixed(double value, int decimals) {
    std::ostringstream out;
    out.setf(std::ios::fixed);
    out.precision(decimals);
    out << value;
    return out.str();
}

/// Per-file random stream so a home's data does not depend on how many
/// other homes were generated.
std::mt19937_64 stream_for(std::uint64_t seed, std::uint64_t file_tag) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(file_tag), static_cast<std::uint32_t>(file_tag >> 32)};
    return std::mt19937_64(seq);
}

struct WrittenFile {
    std::int64_t rows = 0;
    double energy_total = 0;
};

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << content;
    if (!out) throw IoError("write failed for " + path.string());
}

WrittenFile write_meter(const std::filesystem::path& path, std::mt19937_64 rng, int minutes) {
    std::lognormal_distribution<double> energy(std::log(0.02), 0.6);
    std::string content = "timestamp,use_kwh\n";
    WrittenFile file;
    for (int m = 0; m < minutes; ++m) {
        const auto value = fixed(energy(rng), 6);
        file.energy_total += *parse_double(value);
        content += std::to_string(kCorpusEpoch + 60 * m) + "," + value + "\n";
        ++file.rows;
    }
    write_file(path, content);
    return file;
}

WrittenFile write_weather(const std::filesystem::path& path, std::mt19937_64 rng, int minutes, bool indoor) {
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> bearing(0.0, 360.0);
    std::string content = "timestamp,temperature,humidity,windSpeed,windBearing,windGust,heatIndex";
    if (indoor) content += ",insideTemp,insideHumidity";
    content += "\n";
    WrittenFile file;
    double wind = 4.0 + std::abs(noise(rng));
    for (int m = 0; m < minutes; ++m) {
        const Timestamp t = kCorpusEpoch + 60 * m;
        const double phase = 2.0 * std::numbers::pi * static_cast<double>(t % 86400) / 86400.0;
        const double temp = 12.0 + 6.0 * std::sin(phase - std::numbers::pi / 2) + 0.3 * noise(rng);
        const double humidity = std::clamp(65.0 - 15.0 * std::sin(phase) + 2.0 * noise(rng), 5.0, 100.0);
        wind = std::clamp(wind + 0.4 * noise(rng), 0.0, 25.0);
        const double gust = wind + std::abs(1.5 * noise(rng));
        const double heat_index = temp + 0.05 * (humidity - 40.0);
        content += std::to_string(t) + "," + fixed(temp, 2) + "," + fixed(humidity, 1) + "," + fixed(wind, 2) + "," +
                   fixed(bearing(rng), 0) + "," + fixed(gust, 2) + "," + fixed(heat_index, 2);
        if (indoor) content += "," + fixed(20.5 + 0.5 * noise(rng), 2) + "," + fixed(45.0 + 3.0 * noise(rng), 1);
        content += "\n";
        ++file.rows;
    }
    write_file(path, content);
    return file;
}

WrittenFile write_der(const std::filesystem::path& path, std::mt19937_64 rng, int minutes) {
    std::normal_distribution<double> noise(0.0, 1.0);
    std::string content = "timestamp,wind_w,pv_w,battery_pct\n";
    WrittenFile file;
    double battery = 60.0;
    for (int m = 0; m < minutes; ++m) {
        const Timestamp t = kCorpusEpoch + 60 * m;
        const double phase = 2.0 * std::numbers::pi * static_cast<double>(t % 86400) / 86400.0;
        // two turbines up to 1.5 kW each, three 250 W panels
        const double wind_w = std::clamp(900.0 + 250.0 * noise(rng), 0.0, 3000.0);
        const double pv_w = std::clamp(750.0 * std::max(0.0, -std::cos(phase)) + 20.0 * noise(rng), 0.0, 750.0);
        battery = std::clamp(battery + 0.2 * noise(rng), 20.0, 100.0);
        content += std::to_string(t) + "," + fixed(wind_w, 1) + "," + fixed(pv_w, 1) + "," + fixed(battery, 2) + "\n";
        ++file.rows;
    }
    write_file(path, content);
    return file;
}

}  // namespace

std::string_view to_string(DeviceKind kind) {
    switch (kind) {
        case DeviceKind::SmartMeter: return "smart_meter";
        case DeviceKind::WeatherUnit: return "weather_unit";
        case DeviceKind::DER: return "der";
    }
    return "?";
}

DeviceKind device_kind_from_string(std::string_view text) {
    if (text == "smart_meter") return DeviceKind::SmartMeter;
    if (text == "weather_unit") return DeviceKind::WeatherUnit;
    if (text == "der") return DeviceKind::DER;
    throw std::invalid_argument("unknown device kind '" + std::string(text) + "'");
}

std::vector<std::string> field_catalog(DeviceKind kind, bool indoor) {
    std::vector<std::string> out;
    for (const auto& [_, field] : vendor_columns(kind)) {
        if (kind == DeviceKind::WeatherUnit && !indoor && is_indoor_field(field)) continue;
        out.push_back(field);
    }
    return out;
}

std::map<std::string, std::string> vendor_column_map(DeviceKind kind, bool indoor) {
    std::map<std::string, std::string> out;
    for (const auto& [column, field] : vendor_columns(kind)) {
        if (kind == DeviceKind::WeatherUnit && !indoor && is_indoor_field(field)) continue;
        out[column] = field;
    }
    return out;
}

DeviceProfile DeviceProfile::make(DeviceKind kind, std::string rwo_name, std::string csv_path, bool indoor) {
    DeviceProfile p;
    p.kind = kind;
    p.rwo_id = EntityId::rwo(std::move(rwo_name));
    p.csv_path = std::move(csv_path);
    p.column_map = vendor_column_map(kind, indoor);
    p.indoor = indoor;
    return p;
}

void validate(const DeviceProfile& profile) {
    if (profile.cadence_s <= 0) throw std::invalid_argument("cadence_s must be positive");
    if (!is_valid_name(profile.rwo_id.name)) throw std::invalid_argument("invalid rwo id");
    std::set<std::string> targets;
    for (const auto& [_, field] : profile.column_map) {
        if (!targets.insert(field).second) throw std::invalid_argument("column map is not injective: " + field);
    }
    const auto catalog = field_catalog(profile.kind, profile.indoor);
    if (targets != std::set<std::string>(catalog.begin(), catalog.end())) {
        throw std::invalid_argument("column map does not cover the " + std::string(to_string(profile.kind)) +
                                    " field catalog");
    }
}

CsvRecord CsvTable::record(std::size_t row) const {
    CsvRecord out;
    const auto& cells = rows.at(row);
    for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i) out[header[i]] = cells[i];
    return out;
}

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    CsvTable table;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (first) {
            table.header = split_csv_line(line);
            first = false;
            continue;
        }
        if (line.empty()) continue;
        table.rows.push_back(split_csv_line(line));
    }
    return table;
}

Observation hal_translate(const CsvRecord& row, const DeviceProfile& profile) {
    Observation obs;
    obs.source = profile.rwo_id;
    obs.location = profile.location;
    const auto ts = row.find("timestamp");
    if (ts == row.end()) throw BadRow("row has no timestamp");
    const auto t = parse_double(ts->second);
    if (!t || *t <= 0 || *t != std::floor(*t)) throw BadRow("bad timestamp '" + ts->second + "'");
    obs.timestamp = static_cast<Timestamp>(*t);
    for (const auto& [column, field] : profile.column_map) {
        const auto cell = row.find(column);
        if (cell == row.end()) throw BadRow("missing column " + column);
        const auto value = parse_double(cell->second);
        if (!value) throw BadRow("unparseable " + column + " '" + cell->second + "'");
        obs.fields[field] = *value;
    }
    return obs;
}

void SimClock::advance_to(Timestamp t) {
    if (t < now_) throw std::logic_error("simulated clock cannot go backwards");
    now_ = t;
}

ReplaySession::ReplaySession(DeviceProfile profile) : profile_(std::move(profile)) {
    const auto table = read_csv(profile_.csv_path);
    Timestamp last = 0;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        try {
            auto obs = hal_translate(table.record(i), profile_);
            if (obs.timestamp <= last) throw BadRow("timestamp not increasing");
            last = obs.timestamp;
            observations_.push_back(std::move(obs));
        } catch (const BadRow&) {
            ++skipped_;
        }
    }
}

Observation ReplaySession::pop() {
    if (done()) throw std::logic_error("replay session exhausted");
    return observations_[next_++];
}

ReplayReport replay(const DeviceProfile& profile, SimClock& clock, const ObservationSink& sink) {
    ReplaySession session(profile);
    ReplayReport report;
    report.rows_skipped = session.rows_skipped();
    while (!session.done()) {
        auto obs = session.pop();
        clock.advance_to(obs.timestamp);
        sink(obs);
        ++report.rows_sent;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

const CorpusFile* CorpusManifest::find(const std::string& path) const {
    for (const auto& f : files) {
        if (f.path == path) return &f;
    }
    return nullptr;
}

void to_json(Json& j, const CorpusFile& file) {
    j = Json{{"path", file.path}, {"rows", file.rows}};
    if (file.total_energy_kwh) j["total_energy_kwh"] = *file.total_energy_kwh;
}

void from_json(const Json& j, CorpusFile& file) {
    file.path = j.at("path").get<std::string>();
    file.rows = j.at("rows").get<std::int64_t>();
    file.total_energy_kwh.reset();
    if (j.contains("total_energy_kwh")) file.total_energy_kwh = j.at("total_energy_kwh").get<double>();
}

void to_json(Json& j, const CorpusManifest& manifest) {
    j = Json{{"files", manifest.files}, {"seed", manifest.seed}, {"homes", manifest.homes}, {"minutes", manifest.minutes}};
}

void from_json(const Json& j, CorpusManifest& manifest) {
    manifest.files = j.at("files").get<std::vector<CorpusFile>>();
    manifest.seed = j.at("seed").get<std::uint64_t>();
    manifest.homes = j.at("homes").get<int>();
    manifest.minutes = j.at("minutes").get<int>();
}

std::string home_name(int index) {
    if (index < 25) return std::string("home-") + static_cast<char>('b' + index);
    return "home-" + std::to_string(index + 1);
}

CorpusManifest generate_synthetic_corpus(std::uint64_t seed, int homes, int minutes,
                                         const std::filesystem::path& out_dir) {
    if (homes < 1) throw std::invalid_argument("homes must be >= 1");
    if (minutes < 1) throw std::invalid_argument("minutes must be >= 1");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    CorpusManifest manifest;
    manifest.seed = seed;
    manifest.homes = homes;
    manifest.minutes = minutes;

    for (int h = 0; h < homes; ++h) {
        const auto name = "sm-" + home_name(h) + ".csv";
        const auto written = write_meter(out_dir / name, stream_for(seed, 1000000 + h), minutes);
        manifest.files.push_back({name, written.rows, written.energy_total});
    }
    for (int h = 0; h < std::min(homes, 2); ++h) {
        const auto name = "weather-" + home_name(h) + ".csv";
        const auto written = write_weather(out_dir / name, stream_for(seed, 2000000 + h), minutes, h == 0);
        manifest.files.push_back({name, written.rows, std::nullopt});
    }
    {
        const auto written = write_der(out_dir / "der.csv", stream_for(seed, 3000000), minutes);
        manifest.files.push_back({"der.csv", written.rows, std::nullopt});
    }

    write_file(out_dir / "manifest.json", Json(manifest).dump(2) + "\n");
    return manifest;
}

CorpusManifest load_manifest(const std::filesystem::path& corpus_dir) {
    std::ifstream in(corpus_dir / "manifest.json");
    if (!in) throw IoError("cannot read " + (corpus_dir / "manifest.json").string());
    try {
        return Json::parse(in).get<CorpusManifest>();
    } catch (const Json::exception& e) {
        throw IoError("malformed manifest: " + std::string(e.what()));
    }
}

std::map<std::string, DeviceProfile> corpus_profiles(const CorpusManifest& manifest,
                                                     const std::filesystem::path& corpus_dir) {
    std::map<std::string, DeviceProfile> out;
    for (const auto& file : manifest.files) {
        const auto stem = std::filesystem::path(file.path).stem().string();
        const auto full = (corpus_dir / file.path).string();
        DeviceProfile profile;
        if (stem.rfind("sm-", 0) == 0) {
            profile = DeviceProfile::make(DeviceKind::SmartMeter, stem, full);
            profile.location = stem.substr(3);
        } else if (stem.rfind("weather-", 0) == 0) {
            profile = DeviceProfile::make(DeviceKind::WeatherUnit, stem, full, stem == "weather-" + home_name(0));
            profile.location = stem.substr(8);
        } else {
            profile = DeviceProfile::make(DeviceKind::DER, stem, full);
            profile.location = "microgrid";
        }
        out.emplace(stem, std::move(profile));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batch load generator
// ---------------------------------------------------------------------------

std::vector<BatchTiming> SimulatedPoolTarget::submit(const std::vector<HttpRequest>& requests, double at_ms) {
    const auto records = pool_.submit_batch(static_cast<int>(requests.size()), at_ms);
    std::vector<BatchTiming> out(records.size());
    std::vector<std::size_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return records[a].start_ms < records[b].start_ms; });
    for (const auto i : order) {
        out[i].send_ms = records[i].arrival_ms;
        out[i].completion_ms = records[i].completion_ms;
        if (!handler_) continue;
        const auto response = handler_(requests[i]);
        if (!response.ok()) {
            try {
                out[i].error = response.json().get<WireError>().code;
            } catch (const std::exception&) {
                out[i].error = ErrorCode::Unavailable;
            }
        }
    }
    return out;
}

std::vector<BatchTiming> batch_post(const std::vector<DeviceProfile>& profiles, Timestamp at, BatchTarget& target) {
    if (profiles.empty()) return {};
    std::vector<HttpRequest> requests;
    requests.reserve(profiles.size());
    for (const auto& profile : profiles) {
        ReplaySession session(profile);
        std::optional<Observation> reading;
        while (!session.done()) {
            auto obs = session.pop();
            if (!reading) reading = obs;
            if (obs.timestamp == at) {
                reading = std::move(obs);
                break;
            }
        }
        if (!reading) throw IoError("no readable rows in " + profile.csv_path);
        reading->timestamp = at;
        requests.push_back(encode_observation_post(*reading));
    }
    return target.submit(requests, static_cast<double>(at) * 1000.0);
}

}  // namespace gridvirt
