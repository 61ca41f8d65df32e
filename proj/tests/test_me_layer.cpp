#include <doctest.h>

#include <random>

#include "gridvirt/me_layer.hpp"
#include "platform_fixture.hpp"
#include "support.hpp"

using namespace gridvirt;
using namespace fixture;

namespace {

const std::vector<std::string> kVocabulary = {"energy_kwh", "gen_pv_w", "gen_wind_w", "outside_temp_c"};

ViewSpec random_view(std::mt19937_64& rng) {
    ViewSpec view;
    const std::int64_t buckets[] = {1, 7, 60, 300, 3600};
    view.time_bucket_s = buckets[std::uniform_int_distribution<int>(0, 4)(rng)];
    view.group_by = std::uniform_int_distribution<int>(0, 1)(rng) ? GroupBy::PerSource : GroupBy::AllSources;
    view.reduce = static_cast<Reduce>(std::uniform_int_distribution<int>(0, 4)(rng));
    for (const auto& f : kVocabulary) {
        if (std::uniform_int_distribution<int>(0, 2)(rng) != 0) view.fields.push_back(f);
    }
    if (view.fields.empty()) view.fields.push_back(kVocabulary.front());
    return view;
}

double total(const std::vector<AggregateRow>& rows, const std::string& field) {
    double sum = 0;
    for (const auto& r : rows) {
        if (const auto it = r.values.find(field); it != r.values.end()) sum += it->second;
    }
    return sum;
}

}  // namespace

TEST_CASE("aggregate matches the brute-force reduction") {
    std::mt19937_64 rng(4242);
    for (int instance = 0; instance < 200; ++instance) {
        const auto view = random_view(rng);
        const int n = std::uniform_int_distribution<int>(0, 1000)(rng);
        const int sources = std::uniform_int_distribution<int>(1, 6)(rng);
        std::vector<Observation> observations;
        for (int i = 0; i < n; ++i) {
            observations.push_back(support::random_observation(rng, 1'461'888'000, 7200, kVocabulary, sources));
        }
        INFO("instance " << instance << " n=" << n << " view=" << Json(view).dump());
        CHECK(support::rows_match(aggregate(observations, view), support::brute_force_aggregate(observations, view)));
    }
}

TEST_CASE("sum is conserved across groupings and buckets") {
    std::mt19937_64 rng(7);
    for (int instance = 0; instance < 50; ++instance) {
        std::vector<Observation> observations;
        double expected = 0;
        for (int i = 0; i < 500; ++i) {
            auto obs = support::random_observation(rng, 1'000'000, 86400, {"energy_kwh"}, 4);
            const auto it = obs.fields.find("energy_kwh");
            if (obs.quality >= kMinQuality && it != obs.fields.end() && std::holds_alternative<double>(it->second)) {
                expected += std::get<double>(it->second);
            }
            observations.push_back(std::move(obs));
        }
        const ViewSpec per_source{60, GroupBy::PerSource, Reduce::Sum, {"energy_kwh"}};
        const ViewSpec all{3600, GroupBy::AllSources, Reduce::Sum, {"energy_kwh"}};
        const ViewSpec month{kMonthBucket, GroupBy::PerSource, Reduce::Sum, {"energy_kwh"}};
        CHECK(support::close_rel(total(aggregate(observations, per_source), "energy_kwh"), expected));
        CHECK(support::close_rel(total(aggregate(observations, all), "energy_kwh"), expected));
        CHECK(support::close_rel(total(aggregate(observations, month), "energy_kwh"), expected));
    }
}

TEST_CASE("aggregate edge cases") {
    const auto src = [](const char* n) { return EntityId::vo(n); };
    ViewSpec view{60, GroupBy::AllSources, Reduce::Last, {"energy_kwh"}};
    CHECK(aggregate(std::vector<Observation>{}, view).empty());

    // LAST ties on timestamp break on source id
    std::vector<Observation> tie = {{src("b"), 100, {{"energy_kwh", 2.0}}, 1.0, std::nullopt},
                                    {src("a"), 100, {{"energy_kwh", 1.0}}, 1.0, std::nullopt}};
    auto rows = aggregate(tie, view);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].values.at("energy_kwh") == 2.0);
    CHECK(rows[0].group == kAllSourcesGroup);
    CHECK(rows[0].contributing_sources == 2);
    CHECK(rows[0].bucket_start == 60);

    // quality exactly at the threshold counts, just below does not
    std::vector<Observation> q = {{src("a"), 100, {{"energy_kwh", 1.0}}, 0.5, std::nullopt},
                                  {src("a"), 101, {{"energy_kwh", 5.0}}, 0.49, std::nullopt}};
    view.reduce = Reduce::Sum;
    rows = aggregate(q, view);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].values.at("energy_kwh") == 1.0);

    view.time_bucket_s = 0;
    CHECK_THROWS_AS(aggregate(q, view), Error);
}

namespace {

struct Homes {
    Platform p{std::uint64_t{11}};
    EntityId service = EntityId::service("distribution-automation");

    Homes() {
        for (const auto* name : {"sm-home-b", "sm-home-c"}) {
            register_vo(p, name, "metering-operator", {"measure:energy_kwh"},
                        VisibilityMap({{"energy_kwh", AccessTier::Friend}}), AccessTier::Friend);
        }
        register_vo(p, "der", "der-operator", {"measure:gen_pv_w", "measure:energy_kwh"},
                    VisibilityMap({{"gen_pv_w", AccessTier::Friend}, {"energy_kwh", AccessTier::Friend}}),
                    AccessTier::Friend);
        for (Timestamp t = 60; t <= 600; t += 60) {
            post(p, "sm-home-b", t, {{"energy_kwh", 0.01}});
            post(p, "sm-home-c", t, {{"energy_kwh", 0.02}});
            post(p, "der", t, {{"energy_kwh", 0.5}, {"gen_pv_w", 100.0}});
        }
        p.set_now(600);
    }

    std::vector<AccessKey> keys_for(const std::string& me, std::initializer_list<const char*> vos) {
        std::vector<AccessKey> keys;
        for (const auto* vo : vos) keys.push_back(grant(p, EntityId::vo(vo), EntityId::me(me), AccessTier::Friend));
        return keys;
    }
};

const ViewSpec kLoadView{60, GroupBy::AllSources, Reduce::Sum, {"energy_kwh", "gen_pv_w"}};

}  // namespace

TEST_CASE("composition takes every reachable VO per requirement") {
    Homes h;
    const auto keys = h.keys_for("gen-and-load", {"sm-home-b", "sm-home-c", "der"});
    const auto res = ok(h.p, call::ComposeME{request("gen-and-load", h.service, {"measure:energy_kwh", "measure:gen_pv_w"},
                                                     kLoadView),
                                             present(h.service, keys)});
    CHECK_FALSE(res.at("reused").get<bool>());
    CHECK(member_names(res.at("descriptor")) == std::vector<std::string>{"vo:der", "vo:sm-home-b", "vo:sm-home-c"});
    CHECK(res.contains("owner_key"));
    // member tokens never leave the middleware
    for (const auto& m : res.at("descriptor").at("members")) {
        CHECK(m.value("key", Json::object()).value("token", "") == "");
    }

    const auto owner = res.at("owner_key").get<AccessKey>();
    const auto rows = ok(h.p, call::QueryData{EntityId::me("gen-and-load"), {0, 600}, std::nullopt, {},
                                              credentials_for(owner)})
                          .at("rows");
    REQUIRE(rows.size() == 10);
    for (const auto& row : rows) {
        CHECK(row.at("group") == "ALL");
        CHECK(row.at("values").at("energy_kwh").get<double>() == doctest::Approx(0.53));
        CHECK(row.at("values").at("gen_pv_w").get<double>() == doctest::Approx(100.0));
    }
    CHECK(rows.dump().find("sm-home") == std::string::npos);
}

TEST_CASE("an unreachable VO is left out and no reachable one is UNAVAILABLE") {
    Homes h;
    const auto keys = h.keys_for("load-b", {"sm-home-b"});
    const auto res = ok(h.p, call::ComposeME{request("load-b", h.service, {"measure:energy_kwh"}, kLoadView),
                                             present(h.service, keys)});
    CHECK(member_names(res.at("descriptor")) == std::vector<std::string>{"vo:sm-home-b"});

    const auto none = send(h.p, call::ComposeME{request("load-x", h.service, {"measure:energy_kwh"},
                                                        ViewSpec{300, GroupBy::AllSources, Reduce::Sum, {"energy_kwh"}}),
                                                present(h.service, {})});
    CHECK(none.status == 503);
    const auto nothing = send(h.p, call::ComposeME{request("wind", h.service, {"measure:gen_wind_w"}, kLoadView),
                                                   present(h.service, {})});
    CHECK(nothing.status == 503);
}

TEST_CASE("an existing ME with the same requirements and view is reused") {
    Homes h;
    const auto keys = h.keys_for("gen-and-load", {"sm-home-b", "sm-home-c", "der"});
    const auto first = ok(h.p, call::ComposeME{request("gen-and-load", h.service,
                                                       {"measure:gen_pv_w", "measure:energy_kwh"}, kLoadView),
                                               present(h.service, keys)});
    const auto owner = first.at("owner_key").get<AccessKey>();

    const auto planner = EntityId::service("planner");
    const auto me_key = grant(h.p, EntityId::me("gen-and-load"), planner, AccessTier::Friend);
    // requirement order and duplicates do not matter
    const auto again = send(h.p, call::ComposeME{request("planner-load", planner,
                                                         {"measure:energy_kwh", "measure:gen_pv_w",
                                                          "measure:energy_kwh"},
                                                         kLoadView),
                                                 present(planner, {me_key})});
    CHECK(again.status == 200);
    CHECK(again.json().at("reused").get<bool>());
    CHECK(again.json().at("descriptor").at("id") == "me:gen-and-load");
    CHECK_FALSE(again.json().contains("owner_key"));

    // same name, different view
    auto other = request("gen-and-load", h.service, {"measure:energy_kwh"}, kLoadView);
    other.view.reduce = Reduce::Mean;
    CHECK(send(h.p, call::ComposeME{other, present(h.service, {owner})}).status == 409);

    // a stranger without any key cannot ride on a friend-tier ME
    const auto stranger = EntityId::service("stranger");
    const auto denied = send(h.p, call::ComposeME{request("stranger-load", stranger,
                                                          {"measure:energy_kwh", "measure:gen_pv_w"}, kLoadView),
                                                  present(stranger, {})});
    CHECK(denied.status == 503);
}

TEST_CASE("me queries reject a different view") {
    Homes h;
    const auto keys = h.keys_for("load", {"sm-home-b"});
    const auto res = ok(h.p, call::ComposeME{request("load", h.service, {"measure:energy_kwh"}, kLoadView),
                                             present(h.service, keys)});
    const auto owner = credentials_for(res.at("owner_key").get<AccessKey>());
    auto view = kLoadView;
    view.time_bucket_s = 300;
    CHECK(send(h.p, call::QueryData{EntityId::me("load"), {0, 600}, view, view.fields, owner}).status == 400);
    CHECK(send(h.p, call::QueryData{EntityId::me("load"), {0, 600}, kLoadView, kLoadView.fields, owner}).status ==
          200);
    CHECK(send(h.p, call::QueryData{EntityId::me("load"), {0, 600}, std::nullopt, {}, {}}).status == 401);
}

TEST_CASE("per-source rows name the member VO, not the device") {
    Homes h;
    const auto keys = h.keys_for("per-home", {"sm-home-b", "sm-home-c"});
    const ViewSpec view{60, GroupBy::PerSource, Reduce::Sum, {"energy_kwh"}};
    const auto res = ok(h.p, call::ComposeME{request("per-home", h.service, {"measure:energy_kwh"}, view),
                                             present(h.service, keys)});
    // der also measures energy but was not granted
    CHECK(member_names(res.at("descriptor")).size() == 2);
    const auto rows = ok(h.p, call::QueryData{EntityId::me("per-home"), {0, 120}, std::nullopt, {},
                                              credentials_for(res.at("owner_key").get<AccessKey>())})
                          .at("rows");
    std::set<std::string> groups;
    for (const auto& r : rows) groups.insert(r.at("group").get<std::string>());
    CHECK(groups == std::set<std::string>{"vo:sm-home-b", "vo:sm-home-c"});
}

namespace {

struct Weather {
    Platform p{std::uint64_t{5}};
    EntityId town = EntityId::service("municipality");
    std::vector<Json> notices;

    Weather() {
        p.attach_inbox(town, [this](const Json& m) {
            notices.push_back(m);
            return true;
        });
        p.set_now(600);
        for (const auto* name : {"weather-home-b", "weather-home-c"}) add(name);
    }

    void add(const std::string& name) {
        register_vo(p, name, "dweller", {"measure:wind_speed_ms"}, VisibilityMap({{"wind_speed_ms", AccessTier::Public}}),
                    AccessTier::Public);
        post(p, name, p.now() + 1, {{"wind_speed_ms", 3.0}});
    }

    Json compose() {
        return ok(p, call::ComposeME{request("weather", town, {"measure:wind_speed_ms"},
                                             ViewSpec{60, GroupBy::PerSource, Reduce::Mean, {"wind_speed_ms"}},
                                             AccessTier::Public),
                                     present(town, {})});
    }

    Json alert(const std::string& vo) {
        return ok(p, call::MEAlert{"weather", VOAlert{EntityId::vo(vo), VOStatus{VOState::Offline, 0, 0}}});
    }
};

}  // namespace

TEST_CASE("losing a member recomposes, losing the last leaves the requirement unmet") {
    Weather w;
    const auto res = w.compose();
    CHECK(member_names(res.at("descriptor")) == std::vector<std::string>{"vo:weather-home-b", "vo:weather-home-c"});
    // a public ME is open to anonymous readers
    CHECK(send(w.p, call::QueryData{EntityId::me("weather"), {0, 700}, std::nullopt, {}, {}}).status == 200);

    // home b falls silent while home c keeps reporting
    Timestamp t = 601;
    for (; t <= 601 + 4 * 60; t += 60) {
        post(w.p, "weather-home-c", t + 1, {{"wind_speed_ms", 4.0}});
        w.p.tick(t + 1);
    }
    auto me = w.p.me("weather");
    CHECK(me->descriptor().members.size() == 1);
    CHECK(me->health() == MEHealth::Ok);

    // now home c goes quiet as well
    for (Timestamp end = t + 4 * 60; t <= end; t += 60) w.p.tick(t);
    CHECK(me->health() == MEHealth::RequirementUnmet);
    CHECK(me->descriptor().members.empty());
    CHECK(send(w.p, call::MEStatus{"weather", {}}).json().at("unmet") == Json::array({"measure:wind_speed_ms"}));

    w.p.set_now(t);
    w.add("weather-home-d");
    const auto recovered = me->recover(w.p.now());
    CHECK(recovered.kind == Reconfigure::Recomposed);
    CHECK(recovered.members == std::vector<EntityId>{EntityId::vo("weather-home-d")});
    CHECK(me->health() == MEHealth::Ok);

    std::vector<std::string> kinds;
    for (const auto& n : w.notices) {
        if (n.contains("outcome")) kinds.push_back(n.at("outcome").get<std::string>());
    }
    INFO(Json(w.notices).dump());
    // each member turns degraded (an unchanged notice) before it drops out
    CHECK(kinds ==
          std::vector<std::string>{"unchanged", "recomposed", "unchanged", "requirement_unmet", "recomposed"});

    // the registry tracks the new member set
    const auto registered = w.p.me_registry().get(EntityId::me("weather"));
    REQUIRE(registered);
    REQUIRE(registered->members.size() == 1);
    CHECK(registered->members[0].vo_id == EntityId::vo("weather-home-d"));
}

TEST_CASE("a degraded member is reported without recomposition") {
    Weather w;
    w.compose();
    const auto outcome =
        ok(w.p, call::MEAlert{"weather", VOAlert{EntityId::vo("weather-home-c"), VOStatus{VOState::Degraded, 0, 0}}});
    CHECK(outcome.at("outcome") == "unchanged");
    CHECK(outcome.at("members").size() == 2);
    CHECK(w.p.me("weather")->health() == MEHealth::Degraded);
}

TEST_CASE("an alert for a non-member changes nothing") {
    Weather w;
    w.compose();
    const auto outcome = ok(w.p, call::MEAlert{"weather", VOAlert{EntityId::vo("sm-home-b"), VOStatus{}}});
    CHECK(outcome.at("outcome") == "unchanged");
    CHECK(send(w.p, call::MEAlert{"nope", VOAlert{EntityId::vo("x"), VOStatus{}}}).status == 404);
}

TEST_CASE("reconfigure outcome names round-trip") {
    for (auto k : {Reconfigure::Unchanged, Reconfigure::Recomposed, Reconfigure::RequirementUnmet}) {
        CHECK(reconfigure_from_string(to_string(k)) == k);
    }
    CHECK_THROWS_AS(reconfigure_from_string("exploded"), Error);
    MENotice notice{EntityId::me("weather"), MEHealth::Ok, {Reconfigure::Recomposed, {EntityId::vo("w")}, {}}, 42};
    const auto back = Json(notice).get<MENotice>();
    CHECK(back.me == notice.me);
    CHECK(back.outcome.kind == Reconfigure::Recomposed);
    CHECK(back.at == 42);
}
