#include "gridvirt/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "gridvirt/platform.hpp"

namespace gridvirt {

namespace pt = boost::property_tree;

// --- parsing ----------------------------------------------------------------

namespace {

std::string trim(std::string_view text) {
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = text.find_last_not_of(" \t\r\n");
    return std::string(text.substr(first, last - first + 1));
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        auto t = trim(item);
        if (!t.empty()) out.push_back(std::move(t));
    }
    return out;
}

/// One INI section; every key must be consumed exactly once.
class Section {
public:
    Section(std::string name, const pt::ptree& tree) : name_(std::move(name)), tree_(tree) {
        for (const auto& [key, _] : tree_) keys_.insert(key);
    }

    const std::string& name() const { return name_; }

    std::optional<std::string> optional(const std::string& key) {
        used_.insert(key);
        const auto child = tree_.get_child_optional(pt::ptree::path_type(key, '\0'));
        if (!child) return std::nullopt;
        return trim(child->data());
    }

    std::string required(const std::string& key) {
        auto value = optional(key);
        if (!value || value->empty()) fail(key, "is required");
        return *value;
    }

    template <class T, class Parse>
    T get(const std::string& key, T fallback, Parse parse) {
        const auto value = optional(key);
        if (!value) return fallback;
        try {
            return parse(*value);
        } catch (const std::exception& e) {
            fail(key, e.what());
        }
    }

    long long integer(const std::string& key, long long fallback) {
        return get<long long>(key, fallback, [](const std::string& v) {
            std::size_t used = 0;
            const auto n = std::stoll(v, &used);
            if (used != v.size()) throw std::invalid_argument("'" + v + "' is not an integer");
            return n;
        });
    }

    double number(const std::string& key, double fallback) {
        return get<double>(key, fallback, [](const std::string& v) {
            std::size_t used = 0;
            const auto n = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument("'" + v + "' is not a number");
            return n;
        });
    }

    bool boolean(const std::string& key, bool fallback) {
        return get<bool>(key, fallback, [](const std::string& v) {
            if (v == "true" || v == "yes" || v == "1") return true;
            if (v == "false" || v == "no" || v == "0") return false;
            throw std::invalid_argument("'" + v + "' is not a boolean");
        });
    }

    [[noreturn]] void fail(const std::string& key, const std::string& why) const {
        throw ScenarioError("[" + name_ + "] " + key + ": " + why);
    }

    void finish() const {
        for (const auto& key : keys_) {
            if (!used_.contains(key)) throw ScenarioError("[" + name_ + "] unknown key '" + key + "'");
        }
    }

private:
    std::string name_;
    const pt::ptree& tree_;
    std::set<std::string> keys_;
    std::set<std::string> used_;
};

EntityId holder_id(Section& s, const std::string& key) {
    const auto text = s.required(key);
    try {
        return parse_entity_id(text);
    } catch (const std::exception& e) {
        s.fail(key, e.what());
    }
}

AccessTier tier_value(Section& s, const std::string& key, AccessTier fallback) {
    return s.get<AccessTier>(key, fallback, [](const std::string& v) { return tier_from_string(v); });
}

InstancePoolConfig parse_pool_mode(const std::string& text) {
    const auto parts = [&] {
        std::vector<std::string> out;
        std::stringstream in(text);
        std::string item;
        while (std::getline(in, item, ':')) out.push_back(trim(item));
        return out;
    }();
    if (parts.size() == 2 && parts[0] == "static") return InstancePoolConfig::fixed(std::stoi(parts[1]));
    if (parts.size() == 3 && parts[0] == "dynamic") {
        return InstancePoolConfig::dynamic(std::stoi(parts[1]), std::stoi(parts[2]));
    }
    throw std::invalid_argument("mode must be static:N or dynamic:MIN:MAX");
}

}  // namespace

ScenarioConfig load_scenario(const std::filesystem::path& path) {
    pt::ptree tree;
    try {
        pt::read_ini(path.string(), tree);
    } catch (const pt::ini_parser_error& e) {
        throw ScenarioError(path.string() + ": " + e.message() + (e.line() ? " (line " + std::to_string(e.line()) + ")" : ""));
    }

    ScenarioConfig config;
    config.base_dir = path.parent_path();
    try {
        for (const auto& [section_name, child] : tree) {
            Section s(section_name, child);
            const auto suffix = [&](std::string_view prefix) { return section_name.substr(prefix.size()); };
            const auto has_prefix = [&](std::string_view prefix) { return section_name.rfind(prefix, 0) == 0; };

            if (section_name == "scenario") {
                config.seed = static_cast<std::uint64_t>(s.integer("seed", 42));
                config.homes = static_cast<int>(s.integer("homes", 2));
                config.minutes = static_cast<int>(s.integer("minutes", 60));
                config.corpus = s.optional("corpus").value_or("corpus");
                config.generate = s.boolean("generate", true);
                config.kill = s.optional("kill");
                if (config.kill && config.kill->empty()) config.kill.reset();
                config.kill_minute = static_cast<int>(s.integer("kill_minute", 30));
            } else if (section_name == "instance_pool") {
                auto pool = s.get<InstancePoolConfig>("mode", InstancePoolConfig::fixed(10), parse_pool_mode);
                pool.service_time_ms = s.number("service_time_ms", pool.service_time_ms);
                pool.cold_start_ms = s.number("cold_start_ms", pool.cold_start_ms);
                pool.scale_up_queue_threshold =
                    static_cast<int>(s.integer("scale_up_queue_threshold", pool.scale_up_queue_threshold));
                pool.scale_down_idle_ms = s.number("scale_down_idle_ms", pool.scale_down_idle_ms);
                try {
                    validate(pool);
                } catch (const std::exception& e) {
                    throw ScenarioError("[instance_pool] " + std::string(e.what()));
                }
                config.pool = pool;
            } else if (has_prefix("vo:")) {
                VOSpec vo;
                vo.name = suffix("vo:");
                vo.kind = s.get<DeviceKind>("kind", DeviceKind::SmartMeter,
                                            [](const std::string& v) { return device_kind_from_string(v); });
                vo.indoor = s.boolean("indoor", false);
                vo.owner = holder_id(s, "owner");
                vo.default_tier = tier_value(s, "default_tier", AccessTier::Friend);
                vo.cadence_s = s.integer("cadence_s", 60);
                vo.actions = split_list(s.optional("actions").value_or(""));
                for (const auto& entry : split_list(s.optional("visibility").value_or(""))) {
                    const auto colon = entry.find(':');
                    if (colon == std::string::npos) s.fail("visibility", "entries are field:tier, got '" + entry + "'");
                    try {
                        vo.visibility.set(trim(entry.substr(0, colon)), tier_from_string(trim(entry.substr(colon + 1))));
                    } catch (const Error& e) {
                        s.fail("visibility", e.what());
                    }
                }
                if (const auto csv = s.optional("csv")) vo.csv = *csv;
                vo.location = s.optional("location");
                config.vos.push_back(std::move(vo));
            } else if (has_prefix("grant:")) {
                VOGrantSpec g;
                g.vo = s.required("vo");
                g.holder = holder_id(s, "holder");
                g.tier = tier_value(s, "tier", AccessTier::Friend);
                g.priority = static_cast<int>(s.integer("priority", 0));
                config.grants.push_back(std::move(g));
            } else if (has_prefix("me:")) {
                MESpec me;
                me.name = suffix("me:");
                me.owner = holder_id(s, "owner");
                me.requirements = split_list(s.required("requirements"));
                me.view.time_bucket_s = s.integer("bucket_s", kMinuteBucket);
                me.view.group_by = s.get<GroupBy>("group_by", GroupBy::AllSources,
                                                  [](const std::string& v) { return group_by_from_string(v); });
                me.view.reduce = s.get<Reduce>("reduce", Reduce::Sum,
                                               [](const std::string& v) { return reduce_from_string(v); });
                me.view.fields = split_list(s.required("fields"));
                me.exposure = tier_value(s, "exposure", AccessTier::Friend);
                me.priority = static_cast<int>(s.integer("priority", 0));
                try {
                    validate(me.view);
                } catch (const std::exception& e) {
                    throw ScenarioError("[" + section_name + "] " + e.what());
                }
                config.mes.push_back(std::move(me));
            } else if (has_prefix("me-grant:")) {
                MEGrantSpec g;
                g.me = s.required("me");
                g.holder = holder_id(s, "holder");
                g.tier = tier_value(s, "tier", AccessTier::Friend);
                config.me_grants.push_back(std::move(g));
            } else if (has_prefix("service:")) {
                ServiceConfig svc;
                svc.name = suffix("service:");
                svc.needs = split_list(s.required("needs"));
                svc.delivery = s.get<Delivery>("delivery", Delivery::Poll,
                                               [](const std::string& v) { return delivery_from_string(v); });
                config.services.push_back(std::move(svc));
            } else if (has_prefix("probe:")) {
                ProbeSpec probe;
                probe.name = suffix("probe:");
                probe.holder = holder_id(s, "holder");
                probe.target = holder_id(s, "target");
                config.probes.push_back(std::move(probe));
            } else {
                throw ScenarioError("unknown section [" + section_name + "]");
            }
            s.finish();
        }
        validate(config);
    } catch (const ScenarioError& e) {
        throw ScenarioError(path.string() + ": " + e.what());
    }
    return config;
}

void validate(const ScenarioConfig& config) {
    if (config.homes < 1) throw ScenarioError("[scenario] homes must be at least 1");
    if (config.minutes < 1) throw ScenarioError("[scenario] minutes must be at least 1");
    if (config.vos.empty()) throw ScenarioError("no [vo:NAME] sections");
    std::set<std::string> vos;
    std::set<std::string> mes;
    for (const auto& vo : config.vos) {
        if (!is_valid_name(vo.name)) throw ScenarioError("[vo:" + vo.name + "] invalid name");
        if (vo.cadence_s <= 0) throw ScenarioError("[vo:" + vo.name + "] cadence_s must be positive");
        vos.insert(vo.name);
    }
    for (const auto& me : config.mes) {
        if (!is_valid_name(me.name)) throw ScenarioError("[me:" + me.name + "] invalid name");
        mes.insert(me.name);
    }
    for (const auto& g : config.grants) {
        if (!vos.contains(g.vo)) throw ScenarioError("grant names unknown vo '" + g.vo + "'");
    }
    for (const auto& g : config.me_grants) {
        if (!mes.contains(g.me)) throw ScenarioError("me-grant names unknown me '" + g.me + "'");
    }
    for (const auto& svc : config.services) {
        if (svc.needs.empty()) throw ScenarioError("[service:" + svc.name + "] needs is empty");
        for (const auto& need : svc.needs) {
            if (!mes.contains(need)) throw ScenarioError("[service:" + svc.name + "] needs unknown me '" + need + "'");
        }
    }
    for (const auto& probe : config.probes) {
        const bool known = (probe.target.kind == EntityKind::VO && vos.contains(probe.target.name)) ||
                           (probe.target.kind == EntityKind::ME && mes.contains(probe.target.name));
        if (!known) throw ScenarioError("[probe:" + probe.name + "] unknown target " + probe.target.str());
    }
    if (config.kill && !vos.contains(*config.kill)) throw ScenarioError("[scenario] kill names unknown vo");
}

// --- run --------------------------------------------------------------------

namespace {

struct Exchange {
    HttpRequest request;
    HttpResponse response;
};

/// Transport that keeps every exchange for the privacy scan.
class RecordingTransport : public Transport {
public:
    explicit RecordingTransport(Platform& platform) : inner_(platform) {}

    HttpResponse send(const HttpRequest& req) override {
        auto resp = inner_.send(req);
        log_.push_back({req, resp});
        return resp;
    }

    const std::vector<Exchange>& log() const { return log_; }

private:
    InProcessTransport inner_;
    std::vector<Exchange> log_;
};

// "sm-home-b" and "weather-home-b" sit in home-b, everything else in the microgrid.
std::string default_location(const std::string& vo) {
    for (const std::string prefix : {"sm-", "weather-"}) {
        if (vo.rfind(prefix, 0) == 0) return vo.substr(prefix.size());
    }
    return "microgrid";
}

call::RegisterVO registration_for(const VOSpec& vo) {
    call::RegisterVO reg;
    reg.descriptor.id = EntityId::vo(vo.name);
    reg.descriptor.owner = vo.owner;
    reg.descriptor.location = vo.location.value_or(default_location(vo.name));
    for (const auto& field : field_catalog(vo.kind, vo.indoor)) reg.descriptor.functionalities.push_back("measure:" + field);
    for (const auto& action : vo.actions) reg.descriptor.functionalities.push_back("actuate:" + action);
    reg.descriptor.endpoint = "/vo/" + vo.name;
    reg.descriptor.default_tier = vo.default_tier;
    reg.visibility = vo.visibility;
    reg.cadence_s = vo.cadence_s;
    return reg;
}

std::vector<std::string> bearer_tokens(const HttpRequest& req) {
    const auto header = req.header("authorization");
    if (!header || header->rfind("Bearer ", 0) != 0) return {};
    return split_list(header->substr(7));
}

class CaseStudy {
public:
    CaseStudy(ScenarioConfig config, RunOptions options)
        : config_(std::move(config)), options_(std::move(options)), platform_(config_.seed), transport_(platform_) {}

    Json run();

private:
    template <class F>
    auto step(const std::string& name, F&& body) {
        try {
            return body();
        } catch (const ScenarioError&) {
            throw;
        } catch (const std::exception& e) {
            throw ScenarioError("step '" + name + "' failed: " + e.what());
        }
    }

    Json expect(const HttpResponse& resp, const std::string& what) {
        if (!resp.ok()) {
            const auto err = wire_error_of(resp);
            throw ScenarioError(what + ": " + std::string(to_string(err.code)) + " " + err.detail);
        }
        return resp.json();
    }

    void prepare_corpus();
    void open_devices();
    void register_vos();
    void grant_vos();
    void deliver_minute(int minute);
    void compose_mes();
    void grant_mes();
    void boot_services();
    Json final_queries();
    Json privacy_scan() const;
    Json homes_section() const;
    Json billing_check() const;
    Json recompositions() const;

    const MESpec& me_spec(const std::string& name) const {
        for (const auto& me : config_.mes) {
            if (me.name == name) return me;
        }
        throw ScenarioError("unknown me '" + name + "'");
    }

    EntityId owner_of(const EntityId& subject) const {
        if (subject.kind == EntityKind::VO) {
            for (const auto& vo : config_.vos) {
                if (vo.name == subject.name) return vo.owner;
            }
        } else {
            for (const auto& me : config_.mes) {
                if (me.name == subject.name) return me.owner;
            }
        }
        throw ScenarioError("unknown subject " + subject.str());
    }

    AccessTier tier_of_tokens(const std::vector<std::string>& tokens) {
        AccessTier best = AccessTier::Public;
        for (const auto& token : tokens) {
            auto key = platform_.vo_registry().lookup(token);
            if (!key) key = platform_.me_registry().lookup(token);
            if (key && static_cast<int>(key->tier) > static_cast<int>(best)) best = key->tier;
        }
        return best;
    }

    ScenarioConfig config_;
    RunOptions options_;
    Platform platform_;
    RecordingTransport transport_;
    std::filesystem::path corpus_dir_;
    std::optional<CorpusManifest> manifest_;
    std::map<std::string, std::unique_ptr<ReplaySession>> sessions_;
    std::unique_ptr<SimulatedPoolTarget> pool_;
    Timestamp start_ = 0;
    Timestamp now_ = 0;
    std::map<EntityId, std::vector<AccessKey>> wallet_;  // keys by holder
    std::vector<std::unique_ptr<ServiceRuntime>> services_;
    std::vector<Json> timeline_;
    std::vector<Json> queries_;
    std::vector<Json> privacy_decisions_;
    std::map<std::string, std::set<std::string>> home_fields_;
    std::map<std::string, double> billing_;  // group -> energy total
    std::int64_t posts_ = 0;
    std::int64_t post_errors_ = 0;
    std::int64_t pushes_received_ = 0;
};

void CaseStudy::prepare_corpus() {
    if (config_.generate) {
        corpus_dir_ = options_.work_dir / config_.corpus;
        manifest_ = generate_synthetic_corpus(config_.seed, config_.homes, config_.minutes, corpus_dir_);
        return;
    }
    corpus_dir_ = config_.corpus.is_absolute() ? config_.corpus : config_.base_dir / config_.corpus;
    if (std::filesystem::exists(corpus_dir_ / "manifest.json")) manifest_ = load_manifest(corpus_dir_);
}

void CaseStudy::open_devices() {
    for (const auto& vo : config_.vos) {
        std::filesystem::path csv = vo.csv ? (vo.csv->is_absolute() ? *vo.csv : config_.base_dir / *vo.csv)
                                           : corpus_dir_ / (vo.name + ".csv");
        if (!std::filesystem::exists(csv)) throw ScenarioError("missing CSV for vo:" + vo.name + ": " + csv.string());
        auto profile = DeviceProfile::make(vo.kind, vo.name, csv.string(), vo.indoor);
        profile.cadence_s = vo.cadence_s;
        profile.location = vo.location ? vo.location : default_location(vo.name);
        try {
            sessions_[vo.name] = std::make_unique<ReplaySession>(profile);
        } catch (const IoError& e) {
            throw ScenarioError("cannot read CSV " + csv.string() + ": " + e.what());
        }
    }
    bool any = false;
    for (const auto& [_, session] : sessions_) {
        if (session->done()) continue;
        start_ = any ? std::min(start_, session->next_timestamp()) : session->next_timestamp();
        any = true;
    }
    if (!any) throw ScenarioError("no device has any readable row");
}

void CaseStudy::register_vos() {
    for (const auto& vo : config_.vos) {
        const auto body = expect(platform_.handle(encode(registration_for(vo))), "register vo:" + vo.name);
        wallet_[vo.owner].push_back(body.at("owner_key").get<AccessKey>());
    }
}

void CaseStudy::grant_vos() {
    for (const auto& g : config_.grants) {
        const auto vo = EntityId::vo(g.vo);
        const auto owner = owner_of(vo);
        call::GrantAccess grant{vo, g.holder, g.tier, g.priority, {}};
        grant.auth.requester = owner;
        for (const auto& key : wallet_[owner]) {
            if (key.subject == vo) grant.auth.tokens.push_back(key.token);
        }
        const auto body = expect(platform_.handle(encode(grant)), "grant on " + vo.str() + " to " + g.holder.str());
        wallet_[g.holder].push_back(body.get<AccessKey>());
    }
}


void CaseStudy::deliver_minute(int minute) {
    now_ = start_ + kMinuteBucket * minute;
    platform_.set_now(now_);
    std::vector<HttpRequest> requests;
    for (const auto& [name, session] : sessions_) {
        const bool killed = config_.kill && *config_.kill == name && minute >= config_.kill_minute;
        while (!session->done() && session->next_timestamp() <= now_) {
            auto obs = session->pop();
            if (!killed) requests.push_back(encode_observation_post(obs));
        }
    }
    const auto timings = pool_->submit(requests, static_cast<double>(now_) * 1000.0);
    double makespan = 0;
    for (const auto& t : timings) {
        makespan = std::max(makespan, t.completion_ms - static_cast<double>(now_) * 1000.0);
        if (t.error) ++post_errors_;
    }
    posts_ += static_cast<std::int64_t>(requests.size());
    platform_.tick(now_);

    Json services = Json::object();
    for (const auto& svc : services_) {
        Json health = Json::array();
        for (const auto h : svc->supervise_tick(now_)) health.push_back(std::string(to_string(h)));
        services[svc->spec().id.name] = health;
    }
    timeline_.push_back({{"minute", minute},
                         {"at", now_},
                         {"posts", requests.size()},
                         {"pool_makespan_ms", makespan},
                         {"services", services}});
}

void CaseStudy::compose_mes() {
    for (const auto& me : config_.mes) {
        const auto id = EntityId::me(me.name);
        call::ComposeME compose;
        compose.request = ComposeRequest{id, me.owner, me.owner, me.requirements, me.view, me.exposure, me.priority};
        compose.auth.requester = me.owner;
        for (const auto& key : wallet_[id]) compose.auth.tokens.push_back(key.token);
        const auto body = expect(platform_.handle(encode(compose)), "compose " + id.str());
        if (body.contains("owner_key")) wallet_[me.owner].push_back(body.at("owner_key").get<AccessKey>());
    }
}

void CaseStudy::grant_mes() {
    for (const auto& g : config_.me_grants) {
        const auto me = EntityId::me(g.me);
        const auto owner = owner_of(me);
        call::GrantAccess grant{me, g.holder, g.tier, 0, {}};
        grant.auth.requester = owner;
        for (const auto& key : wallet_[owner]) {
            if (key.subject == me) grant.auth.tokens.push_back(key.token);
        }
        const auto body = expect(platform_.handle(encode(grant)), "grant on " + me.str() + " to " + g.holder.str());
        wallet_[g.holder].push_back(body.get<AccessKey>());
    }
}

void CaseStudy::boot_services() {
    for (const auto& cfg : config_.services) {
        ServiceSpec spec;
        spec.id = EntityId::service(cfg.name);
        for (const auto& need : cfg.needs) {
            const auto& me = me_spec(need);
            spec.needs.push_back({EntityId::me(me.name), me.requirements, me.view, me.exposure, cfg.delivery});
        }
        spec.keys = wallet_[spec.id];
        auto runtime = std::make_unique<ServiceRuntime>(spec, transport_);
        auto* raw = runtime.get();
        platform_.attach_inbox(spec.id, [this, raw](const Json& message) {
            const auto type = message.value("type", "");
            if (type == "me_notice") raw->on_notice(message.get<MENotice>(), now_);
            if (type == "me_push") pushes_received_ += static_cast<std::int64_t>(message.at("rows").size());
            return true;
        });
        runtime->boot(now_);
        services_.push_back(std::move(runtime));
    }
}

namespace {

std::vector<std::string> fields_of_rows(const std::vector<AggregateRow>& rows) {
    std::set<std::string> seen;
    for (const auto& row : rows) {
        for (const auto& [field, _] : row.values) seen.insert(field);
    }
    return {seen.begin(), seen.end()};
}

std::vector<std::string> minus(const std::vector<std::string>& all, const std::vector<std::string>& taken) {
    std::vector<std::string> out;
    for (const auto& f : all) {
        if (std::find(taken.begin(), taken.end(), f) == taken.end()) out.push_back(f);
    }
    return out;
}

}  // namespace

Json CaseStudy::final_queries() {
    const TimeRange range{start_, start_ + kMinuteBucket * config_.minutes - 1};
    const auto location_of = [this](const std::string& group) -> std::optional<std::string> {
        const auto id = parse_entity_id(group);
        const auto it = sessions_.find(id.name);
        if (it == sessions_.end()) return std::nullopt;
        return it->second->profile().location;
    };
    const auto note_rows = [&](const std::vector<AggregateRow>& rows) {
        for (const auto& row : rows) {
            if (row.group == kAllSourcesGroup) continue;
            if (const auto home = location_of(row.group)) {
                for (const auto& [field, _] : row.values) home_fields_[*home].insert(field);
            }
        }
    };

    Json out = Json::array();
    for (const auto& svc : services_) {
        for (std::size_t i = 0; i < svc->needs().size(); ++i) {
            const auto& state = svc->needs()[i];
            Json query{{"holder", svc->spec().id}, {"target", state.need.me}};
            const auto result = svc->fetch(i, range);
            query["tier"] = result.tier;
            query["status"] = result.response.status;
            if (!result.response.ok()) {
                query["error"] = wire_error_of(result.response);
                out.push_back(query);
                continue;
            }
            const auto returned = fields_of_rows(result.rows);
            query["rows"] = result.rows;
            query["row_count"] = result.rows.size();
            query["fields_returned"] = returned;
            query["fields_withheld"] = minus(state.need.view.fields, returned);
            privacy_decisions_.push_back({{"holder", svc->spec().id},
                                          {"target", state.need.me},
                                          {"tier", result.tier},
                                          {"returned", returned},
                                          {"withheld", query["fields_withheld"]}});
            note_rows(result.rows);
            const auto& view = state.need.view;
            const bool energy = std::find(view.fields.begin(), view.fields.end(), "energy_kwh") != view.fields.end();
            if (energy && view.reduce == Reduce::Sum) {
                for (const auto& row : result.rows) {
                    const auto v = row.values.find("energy_kwh");
                    if (v == row.values.end()) continue;
                    const auto key = view.group_by == GroupBy::PerSource ? "per_source" : "all_sources";
                    billing_[std::string(key) + "|" + row.group] += v->second;
                }
            }
            out.push_back(query);
        }
    }

    for (const auto& probe : config_.probes) {
        std::optional<AccessKey> key;
        for (const auto& k : wallet_[probe.holder]) {
            if (k.subject == probe.target && (!key || static_cast<int>(k.tier) > static_cast<int>(key->tier))) key = k;
        }
        std::optional<ViewSpec> view;
        std::vector<std::string> expected;
        if (probe.target.kind == EntityKind::ME) {
            view = me_spec(probe.target.name).view;
            expected = view->fields;
        } else {
            for (const auto& vo : config_.vos) {
                if (vo.name == probe.target.name) expected = field_catalog(vo.kind, vo.indoor);
            }
        }
        auto req = encode_query_get(probe.target, view, range, key);
        req.headers["x-requester"] = probe.holder.str();
        const auto resp = transport_.send(req);
        const auto tier = key ? key->tier : AccessTier::Public;
        Json query{{"probe", probe.name}, {"holder", probe.holder}, {"target", probe.target}, {"tier", tier},
                   {"status", resp.status}};
        if (!resp.ok()) {
            query["error"] = wire_error_of(resp);
            out.push_back(query);
            continue;
        }
        std::vector<std::string> returned;
        if (probe.target.kind == EntityKind::ME) {
            const auto rows = resp.json().at("rows").get<std::vector<AggregateRow>>();
            returned = fields_of_rows(rows);
            query["rows"] = rows;
            query["row_count"] = rows.size();
            note_rows(rows);
        } else {
            const auto observations = resp.json().at("observations").get<std::vector<Observation>>();
            std::set<std::string> seen;
            for (const auto& obs : observations) {
                for (const auto& [field, _] : obs.fields) seen.insert(field);
            }
            returned.assign(seen.begin(), seen.end());
            query["row_count"] = observations.size();
            if (const auto location = sessions_.at(probe.target.name)->profile().location) {
                home_fields_[*location].insert(seen.begin(), seen.end());
            }
        }
        query["fields_returned"] = returned;
        query["fields_withheld"] = minus(expected, returned);
        privacy_decisions_.push_back({{"holder", probe.holder},
                                      {"target", probe.target},
                                      {"tier", tier},
                                      {"returned", returned},
                                      {"withheld", query["fields_withheld"]}});
        out.push_back(query);
    }
    return out;
}

Json CaseStudy::privacy_scan() const {
    std::set<std::string> private_fields;
    for (const auto& vo : config_.vos) {
        for (const auto& field : field_catalog(vo.kind, vo.indoor)) {
            if (vo.visibility.tier_of(field) == AccessTier::Private) private_fields.insert(field);
        }
    }
    Json leaks = Json::array();
    std::size_t scanned = 0;
    for (const auto& exchange : transport_.log()) {
        const auto tier = const_cast<CaseStudy*>(this)->tier_of_tokens(bearer_tokens(exchange.request));
        if (tier == AccessTier::Private) continue;
        ++scanned;
        for (const auto& field : private_fields) {
            if (exchange.response.body.find("\"" + field + "\"") != std::string::npos) {
                leaks.push_back({{"path", exchange.request.path},
                                 {"requester", exchange.request.header("x-requester").value_or("")},
                                 {"tier", tier},
                                 {"field", field}});
            }
        }
    }
    return Json{{"responses_total", transport_.log().size()},
                {"responses_scanned", scanned},
                {"private_fields", private_fields},
                {"leaks", leaks}};
}

Json CaseStudy::homes_section() const {
    const auto all = field_catalog(DeviceKind::WeatherUnit, true);
    const auto outdoor = field_catalog(DeviceKind::WeatherUnit, false);
    const auto indoor = minus(all, outdoor);
    Json homes = Json::object();
    for (int i = 0; i < config_.homes; ++i) {
        const auto home = home_name(i);
        std::vector<std::string> seen;
        if (const auto it = home_fields_.find(home); it != home_fields_.end()) seen.assign(it->second.begin(), it->second.end());
        std::vector<std::string> indoor_seen;
        for (const auto& f : seen) {
            if (std::find(indoor.begin(), indoor.end(), f) != indoor.end()) indoor_seen.push_back(f);
        }
        homes[home] = {{"fields_seen", seen}, {"indoor_fields", indoor_seen}};
    }
    return homes;
}

Json CaseStudy::billing_check() const {
    Json per_home = Json::array();
    double per_source_total = 0;
    double all_sources_total = 0;
    for (const auto& [key, value] : billing_) {
        const auto bar = key.find('|');
        const auto kind = key.substr(0, bar);
        const auto group = key.substr(bar + 1);
        if (kind == "all_sources") {
            all_sources_total += value;
            continue;
        }
        per_source_total += value;
        Json entry{{"group", group}, {"reported_kwh", value}};
        if (manifest_) {
            const auto id = parse_entity_id(group);
            if (const auto* file = manifest_->find(id.name + ".csv"); file && file->total_energy_kwh) {
                entry["manifest_kwh"] = *file->total_energy_kwh;
                entry["relative_error"] = std::abs(value - *file->total_energy_kwh) /
                                          std::max(std::abs(*file->total_energy_kwh), 1e-300);
            }
        }
        per_home.push_back(entry);
    }
    Json out{{"per_home", per_home}, {"billing_view_total_kwh", per_source_total},
             {"operations_view_total_kwh", all_sources_total}};
    if (per_source_total != 0 || all_sources_total != 0) {
        out["views_relative_difference"] =
            std::abs(per_source_total - all_sources_total) / std::max(std::abs(per_source_total), 1e-300);
    }
    return out;
}

Json CaseStudy::recompositions() const {
    Json out = Json::array();
    std::set<std::string> seen;
    for (const auto& event : platform_.events()) {
        if (event.at("kind") != "me_notice") continue;
        const auto& notice = event.at("notice");
        const auto key = notice.dump();
        if (!seen.insert(key).second) continue;
        out.push_back(notice);
    }
    return out;
}

Json CaseStudy::run() {
    if (options_.seed_override) config_.seed = *options_.seed_override;
    step("prepare corpus", [&] { prepare_corpus(); });
    step("open devices", [&] { open_devices(); });
    pool_ = std::make_unique<SimulatedPoolTarget>(config_.pool,
                                                  [this](const HttpRequest& req) { return platform_.handle(req); });
    step("register vos", [&] { register_vos(); });
    step("grant vo access", [&] { grant_vos(); });
    step("boot devices", [&] { deliver_minute(0); });
    step("compose mes", [&] { compose_mes(); });
    step("grant me access", [&] { grant_mes(); });
    step("boot services", [&] { boot_services(); });
    for (int minute = 1; minute < config_.minutes; ++minute) {
        step("replay minute " + std::to_string(minute), [&] { deliver_minute(minute); });
    }
    const auto queries = step("final queries", [&] { return final_queries(); });

    Json vos = Json::array();
    for (const auto& desc : platform_.vo_registry().list()) {
        vos.push_back({{"id", desc.id},
                       {"owner", desc.owner},
                       {"default_tier", desc.default_tier},
                       {"state", std::string(to_string(desc.status.state))},
                       {"revision", platform_.vo_registry().revision(desc.id)}});
    }
    Json mes = Json::array();
    for (const auto& spec : config_.mes) {
        const auto instance = platform_.me(spec.name);
        if (!instance) continue;
        const auto desc = instance->descriptor();
        Json members = Json::array();
        for (const auto& m : desc.members) members.push_back(m.vo_id);
        mes.push_back({{"id", desc.id},
                       {"owner", desc.owner},
                       {"view", desc.view},
                       {"exposure", desc.exposure},
                       {"members", members},
                       {"health", std::string(to_string(instance->health()))},
                       {"stored_observations", instance->stored_count()}});
    }
    Json services = Json::array();
    int booted = 0;
    for (const auto& svc : services_) {
        Json needs = Json::array();
        bool all_bound = true;
        for (const auto& state : svc->needs()) {
            Json need{{"me", state.need.me},
                      {"delivery", std::string(to_string(state.need.delivery))},
                      {"health", std::string(to_string(state.health))},
                      {"re_requests", state.re_requests}};
            if (state.bound) need["bound"] = *state.bound;
            else all_bound = false;
            if (state.error) need["error"] = *state.error;
            needs.push_back(need);
        }
        if (all_bound) ++booted;
        services.push_back({{"id", svc->spec().id}, {"needs", needs}});
    }

    const auto scan = privacy_scan();
    Json report{
        {"scenario",
         {{"seed", config_.seed},
          {"homes", config_.homes},
          {"minutes", config_.minutes},
          {"corpus", corpus_dir_.string()},
          {"start", start_},
          {"kill", config_.kill ? Json(*config_.kill) : Json(nullptr)},
          {"kill_minute", config_.kill_minute},
          {"pool", config_.pool.label()}}},
        {"vos", vos},
        {"mes", mes},
        {"services", services},
        {"queries", queries},
        {"recompositions", recompositions()},
        {"privacy", {{"decisions", privacy_decisions_}, {"scan", scan}}},
        {"homes", homes_section()},
        {"billing", billing_check()},
        {"timeline", timeline_},
        {"traffic",
         {{"observation_posts", posts_},
          {"observation_post_errors", post_errors_},
          {"service_requests", transport_.log().size()},
          {"me_push_rows", pushes_received_}}},
        {"checks",
         {{"vos_registered", vos.size()},
          {"mes_composed", mes.size()},
          {"services_booted", booted},
          {"privacy_leaks", scan.at("leaks").size()}}},
    };
    return report;
}

}  // namespace

Json provision(Platform& platform, const ScenarioConfig& config) {
    std::map<EntityId, std::vector<AccessKey>> wallet;
    const auto expect = [](const HttpResponse& resp, const std::string& what) {
        if (!resp.ok()) {
            const auto err = wire_error_of(resp);
            throw ScenarioError(what + ": " + std::string(to_string(err.code)) + " " + err.detail);
        }
        return resp.json();
    };
    for (const auto& vo : config.vos) {
        const auto body = expect(platform.handle(encode(registration_for(vo))), "register vo:" + vo.name);
        wallet[vo.owner].push_back(body.at("owner_key").get<AccessKey>());
    }
    for (const auto& g : config.grants) {
        const auto vo = EntityId::vo(g.vo);
        EntityId owner;
        for (const auto& spec : config.vos) {
            if (spec.name == g.vo) owner = spec.owner;
        }
        call::GrantAccess grant{vo, g.holder, g.tier, g.priority, {}};
        grant.auth.requester = owner;
        for (const auto& key : wallet[owner]) {
            if (key.subject == vo) grant.auth.tokens.push_back(key.token);
        }
        const auto body = expect(platform.handle(encode(grant)), "grant on " + vo.str() + " to " + g.holder.str());
        wallet[g.holder].push_back(body.get<AccessKey>());
    }
    Json keys = Json::array();
    for (const auto& [_, held] : wallet) {
        for (const auto& key : held) keys.push_back(key);
    }
    return keys;
}

Json run_case_study(ScenarioConfig config, const RunOptions& options) {
    validate(config);
    CaseStudy study(std::move(config), options);
    return study.run();
}

std::string summarize_report(const Json& report) {
    std::ostringstream out;
    const auto& sc = report.at("scenario");
    out << "scenario: seed " << sc.at("seed") << ", " << sc.at("homes") << " homes, " << sc.at("minutes")
        << " minutes, pool " << sc.at("pool").get<std::string>() << "\n";
    out << "registered VOs: " << report.at("vos").size() << "\n";
    for (const auto& me : report.at("mes")) {
        out << "  " << me.at("id").get<std::string>() << " [" << me.at("health").get<std::string>() << "] members:";
        for (const auto& m : me.at("members")) out << " " << m.get<std::string>();
        out << "\n";
    }
    for (const auto& svc : report.at("services")) {
        out << "service " << svc.at("id").get<std::string>() << ":";
        for (const auto& need : svc.at("needs")) {
            out << " " << need.at("me").get<std::string>() << "=" << need.at("health").get<std::string>();
            if (need.at("re_requests").get<int>() > 0) out << " (re-requested " << need.at("re_requests") << "x)";
        }
        out << "\n";
    }
    const auto start = sc.at("start").get<Timestamp>();
    std::map<std::string, std::string> last;  // by ME
    std::map<std::string, int> repeats;
    for (const auto& notice : report.at("recompositions")) {
        if (notice.at("outcome") == "unchanged") continue;
        const auto me = notice.at("me").get<std::string>();
        std::string line = me + ": " + notice.at("outcome").get<std::string>();
        for (const auto& m : notice.at("members")) line += " " + m.get<std::string>();
        if (line == last[me]) {
            ++repeats[me];
            continue;
        }
        out << "minute " << (notice.at("at").get<Timestamp>() - start) / kMinuteBucket << " " << line << "\n";
        last[me] = line;
    }
    for (const auto& [me, n] : repeats) out << me << ": last notice repeated " << n << " more times\n";
    const auto& scan = report.at("privacy").at("scan");
    out << "privacy scan: " << scan.at("responses_scanned") << " non-private responses, " << scan.at("leaks").size()
        << " leaks\n";
    for (const auto& [home, entry] : report.at("homes").items()) {
        out << home << " indoor fields seen: " << entry.at("indoor_fields").size() << "\n";
    }
    return out.str();
}

}  // namespace gridvirt
