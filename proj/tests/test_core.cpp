#include <doctest.h>

#include <set>

#include "gridvirt/core.hpp"

using namespace gridvirt;

TEST_CASE("entity ids parse and print") {
    CHECK(parse_entity_id("vo:weather-home-b") == EntityId::vo("weather-home-b"));
    CHECK(parse_entity_id("me:gen-and-load") == EntityId::me("gen-and-load"));
    CHECK(EntityId::service("billing").str() == "service:billing");
    CHECK_THROWS_AS(parse_entity_id("weather-home-b"), MalformedId);
    CHECK_THROWS_AS(parse_entity_id("zz:x"), MalformedId);
    CHECK_THROWS_AS(parse_entity_id("vo:Home B"), MalformedId);
    CHECK_THROWS_AS(parse_entity_id("vo:"), MalformedId);
}

TEST_CASE("names use lowercase letters, digits and dashes only") {
    CHECK(is_valid_name("sm-home-b"));
    CHECK(is_valid_name("a1"));
    CHECK_FALSE(is_valid_name(""));
    CHECK_FALSE(is_valid_name("a_b"));
    CHECK_FALSE(is_valid_name("A"));
}

TEST_CASE("error codes map to http statuses") {
    CHECK(http_status(ErrorCode::Unauthorized) == 401);
    CHECK(http_status(ErrorCode::Forbidden) == 403);
    CHECK(http_status(ErrorCode::NotFound) == 404);
    CHECK(http_status(ErrorCode::ConflictRejected) == 409);
    CHECK(http_status(ErrorCode::BadRequest) == 400);
    CHECK(http_status(ErrorCode::Unavailable) == 503);
    for (auto code : {ErrorCode::Unauthorized, ErrorCode::Forbidden, ErrorCode::NotFound, ErrorCode::ConflictRejected,
                      ErrorCode::BadRequest, ErrorCode::Unavailable}) {
        CHECK(error_code_from_string(to_string(code)) == code);
    }
}

TEST_CASE("tier order") {
    CHECK(tier_allows(AccessTier::Private, AccessTier::Public));
    CHECK(tier_allows(AccessTier::Friend, AccessTier::Friend));
    CHECK_FALSE(tier_allows(AccessTier::Friend, AccessTier::Private));
    CHECK_FALSE(tier_allows(AccessTier::Public, AccessTier::Friend));
}

TEST_CASE("visibility defaults to private") {
    VisibilityMap map({{"outside_temp_c", AccessTier::Public}});
    CHECK(map.tier_of("outside_temp_c") == AccessTier::Public);
    CHECK(map.tier_of("inside_temp_c") == AccessTier::Private);
    CHECK(map.min_tier() == AccessTier::Public);
    CHECK(VisibilityMap{}.min_tier() == AccessTier::Private);
}

TEST_CASE("seeded tokens are reproducible 64-char hex") {
    auto a = TokenSource::seeded(7);
    auto b = TokenSource::seeded(7);
    std::set<std::string> seen;
    for (int i = 0; i < 100; ++i) {
        const auto t = a.next();
        CHECK(t == b.next());
        CHECK(t.size() == 64);
        CHECK(t.find_first_not_of("0123456789abcdef") == std::string::npos);
        seen.insert(t);
    }
    CHECK(seen.size() == 100);
}

TEST_CASE("observation validation") {
    Observation obs{EntityId::rwo("sm-home-b"), 1000, {{"energy_kwh", 0.02}}, 1.0, std::nullopt};
    CHECK_NOTHROW(validate(obs));
    auto bad = obs;
    bad.quality = 1.5;
    CHECK_THROWS_AS(validate(bad), Error);
    bad = obs;
    bad.fields.clear();
    CHECK_THROWS_AS(validate(bad), Error);
    bad = obs;
    bad.timestamp = 0;
    CHECK_THROWS_AS(validate(bad), Error);
}

TEST_CASE("json round trips") {
    Observation obs{EntityId::rwo("weather-home-b"), 1461888000,
                    {{"wind_speed_ms", 4.25}, {"state", std::string("ok")}, {"door_open", false}}, 0.75,
                    std::string("home-b")};
    CHECK(Json(obs).get<Observation>() == obs);

    AccessKey key{EntityId::vo("sm-home-b"), AccessTier::Friend, std::string(64, 'a'), EntityId::me("home-b-info")};
    CHECK(Json(key).get<AccessKey>() == key);

    ViewSpec view{kMonthBucket, GroupBy::PerSource, Reduce::Sum, {"energy_kwh"}};
    CHECK(Json(view).get<ViewSpec>() == view);

    VisibilityMap vis({{"a", AccessTier::Public}, {"b", AccessTier::Private}});
    CHECK(Json(vis).get<VisibilityMap>() == vis);

    VOStatus status{VOState::Degraded, 1234, 3.5};
    CHECK(Json(status).get<VOStatus>() == status);
}

TEST_CASE("views need fields and a positive bucket") {
    CHECK_THROWS_AS(validate(ViewSpec{0, GroupBy::AllSources, Reduce::Sum, {"x"}}), Error);
    CHECK_THROWS_AS(validate(ViewSpec{60, GroupBy::AllSources, Reduce::Sum, {}}), Error);
    CHECK(reduce_from_string("last") == Reduce::Last);
    CHECK(group_by_from_string("per_source") == GroupBy::PerSource);
    CHECK_THROWS_AS(reduce_from_string("median"), Error);
}
