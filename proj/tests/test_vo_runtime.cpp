#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "gridvirt/vo_runtime.hpp"

using namespace gridvirt;

namespace {

const EntityId kVo = EntityId::vo("sm-home-b");
const EntityId kRwo = EntityId::rwo("sm-home-b");

VOConfig meter(std::int64_t cadence = 60) {
    VOConfig config;
    config.descriptor.id = kVo;
    config.descriptor.owner = EntityId::service("metering-operator");
    config.descriptor.functionalities = {"measure:energy_kwh", "actuate:breaker", "actuate:shed"};
    config.descriptor.default_tier = AccessTier::Friend;
    config.rwo = kRwo;
    config.visibility = VisibilityMap({{"energy_kwh", AccessTier::Friend}});
    config.cadence_s = cadence;
    return config;
}

Observation reading(Timestamp t, double kwh = 0.01) {
    return Observation{kRwo, t, {{"energy_kwh", kwh}}, 1.0, std::nullopt};
}

Credentials grant(VOInstance& vo, const EntityId& holder, AccessTier tier, int priority) {
    const auto token = "tok-" + holder.str();
    vo.install_key(AccessKey{kVo, tier, token, holder}, priority);
    return Credentials{holder, {token}};
}

ActuationCommand command(const EntityId& issuer, std::string action, Timestamp issued_at, double arg = 0) {
    return ActuationCommand{kVo, std::move(action), {{"level", arg}}, issuer, 0, issued_at};
}

}  // namespace

TEST_CASE("ingest keeps timestamps strictly increasing") {
    VOInstance vo(meter(), {});
    CHECK(vo.ingest(reading(100)) == IngestAck::Stored);
    CHECK(vo.ingest(reading(100)) == IngestAck::Stale);
    CHECK(vo.ingest(reading(90)) == IngestAck::Stale);
    CHECK(vo.ingest(reading(160)) == IngestAck::Stored);
    CHECK(vo.stored_count() == 2);

    auto foreign = reading(200);
    foreign.source = EntityId::rwo("sm-home-c");
    CHECK_THROWS_AS(vo.ingest(foreign), Error);
}

TEST_CASE("query honours the time range and field list") {
    VOInstance vo(meter(), {});
    for (Timestamp t = 60; t <= 600; t += 60) vo.ingest(reading(t));
    const auto auth = grant(vo, EntityId::service("billing"), AccessTier::Friend, 0);
    CHECK(vo.query(auth, {120, 300}).size() == 4);
    CHECK(vo.query(auth, {601, 900}).empty());
    CHECK_THROWS_AS(vo.query(auth, {300, 100}), Error);
    const auto rows = vo.query(auth, {60, 60}, {"voltage_v"});
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].fields.empty());
}

TEST_CASE("staleness thresholds at 1.5 and 3 cadences") {
    std::vector<VOState> posted;
    VOLinks links;
    links.post_status = [&](const EntityId&, const VOStatus& s) { posted.push_back(s.state); };
    VOInstance vo(meter(60), links);
    CHECK_FALSE(vo.monitor_tick(1000).has_value());  // nothing seen yet

    vo.ingest(reading(1000));
    CHECK(vo.status().state == VOState::Online);
    CHECK_FALSE(vo.monitor_tick(1089).has_value());
    CHECK(vo.monitor_tick(1090) == VOState::Degraded);
    CHECK_FALSE(vo.monitor_tick(1179).has_value());
    CHECK(vo.monitor_tick(1180) == VOState::Offline);
    vo.ingest(reading(1200));
    CHECK(vo.status().state == VOState::Online);
    CHECK(posted == std::vector<VOState>{VOState::Online, VOState::Degraded, VOState::Offline, VOState::Online});
}

TEST_CASE("silence past three cadences goes straight to offline") {
    VOInstance vo(meter(10), {});
    vo.ingest(reading(100));
    CHECK(vo.monitor_tick(131) == VOState::Offline);
}

TEST_CASE("subscribers are alerted on transitions") {
    std::vector<VOAlert> alerts;
    VOLinks links;
    links.alert = [&](const EntityId& subscriber, const VOAlert& a) {
        CHECK(subscriber == EntityId::me("home-b-info"));
        alerts.push_back(a);
    };
    VOInstance vo(meter(60), links);
    const auto me = EntityId::me("home-b-info");
    vo.apply_policy(me, grant(vo, me, AccessTier::Friend, 0), UpdateCommand::start(60, {"energy_kwh"}));
    vo.ingest(reading(100));
    vo.monitor_tick(280);
    REQUIRE(alerts.size() == 2);
    CHECK(alerts[0].status.state == VOState::Online);
    CHECK(alerts[1].status.state == VOState::Offline);
    CHECK(alerts[1].vo_id == kVo);
}

TEST_CASE("push policy fires on the first reading then once per period") {
    std::vector<std::size_t> batches;
    VOLinks links;
    links.push = [&](const EntityId&, const EntityId&, const std::vector<Observation>& batch) {
        batches.push_back(batch.size());
        return true;
    };
    VOInstance vo(meter(60), links);
    const auto me = EntityId::me("one-month-cons");
    vo.apply_policy(me, grant(vo, me, AccessTier::Friend, 0), UpdateCommand::start(180, {"energy_kwh"}));
    for (Timestamp t = 60; t <= 600; t += 60) vo.ingest(reading(t));
    // pushes at 60, 240, 420 and 600
    CHECK(batches == std::vector<std::size_t>{1, 3, 3, 3});

    vo.apply_policy(me, grant(vo, me, AccessTier::Friend, 0), UpdateCommand::stop());
    vo.ingest(reading(1200));
    CHECK(batches.size() == 4);
    CHECK(vo.policies().empty());
}

TEST_CASE("push policies need a friend key held by the subscriber") {
    VOConfig config = meter();
    config.descriptor.default_tier = AccessTier::Public;
    VOInstance vo(config, {});
    const auto me = EntityId::me("weather");
    CHECK_THROWS_AS(vo.apply_policy(me, {me, {}}, UpdateCommand::start(60, {})), Error);
    const auto pub = grant(vo, me, AccessTier::Public, 0);
    try {
        vo.apply_policy(me, pub, UpdateCommand::start(60, {}));
        FAIL("public key accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Forbidden);
    }
    const auto other = grant(vo, EntityId::me("other"), AccessTier::Private, 0);
    CHECK_THROWS_AS(vo.apply_policy(me, other, UpdateCommand::start(60, {})), Error);
}

TEST_CASE("a failed push is retried once then marked failing") {
    int attempts = 0;
    int failing_reports = 0;
    VOLinks links;
    links.push = [&](const EntityId&, const EntityId&, const std::vector<Observation>&) {
        ++attempts;
        return false;
    };
    links.policy_failing = [&](const EntityId&, const EntityId&) { ++failing_reports; };
    VOInstance vo(meter(60), links);
    const auto me = EntityId::me("gen-and-load");
    vo.apply_policy(me, grant(vo, me, AccessTier::Friend, 0), UpdateCommand::start(60, {"energy_kwh"}));
    vo.ingest(reading(100));
    CHECK(attempts == 1);
    vo.tick(100);
    CHECK(attempts == 1);
    vo.tick(100 + kPushRetryDelayS);
    CHECK(attempts == 2);
    CHECK(failing_reports == 1);
    REQUIRE(vo.policies().size() == 1);
    CHECK(vo.policies()[0].failing);
    vo.tick(200);
    CHECK(attempts == 2);
}

TEST_CASE("actuation requires a friend key and an offered action") {
    VOInstance vo(meter(), {});
    const auto der = EntityId::me("gen-and-load");
    CHECK_THROWS_AS(vo.actuate(command(der, "breaker", 1), {der, {}}, 0), Error);
    const auto friend_auth = grant(vo, der, AccessTier::Friend, 5);
    try {
        vo.actuate(command(der, "launch", 1), friend_auth, 0);
        FAIL("unknown action accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NotFound);
    }
    auto cmd = command(der, "breaker", 1);
    cmd.priority = 99;  // ignored, the grant decides
    const auto ack = vo.actuate(cmd, friend_auth, 0);
    CHECK(ack.effective_priority == 5);
    CHECK(ack.window_closes_at_ms == kDefaultConflictWindowMs);
}

TEST_CASE("window closes after the conflict window and reports to every issuer") {
    std::vector<EntityId> told;
    std::vector<ActuationCommand> forwarded;
    VOLinks links;
    links.actuation_result = [&](const EntityId& issuer, const ActuationOutcome&) { told.push_back(issuer); };
    links.forward_to_hal = [&](const ActuationCommand& cmd) { forwarded.push_back(cmd); };
    VOInstance vo(meter(), links);
    const auto a = EntityId::service("distribution-automation");
    const auto b = EntityId::me("gen-and-load");
    const auto auth_a = grant(vo, a, AccessTier::Friend, 1);
    const auto auth_b = grant(vo, b, AccessTier::Friend, 5);
    vo.actuate(command(a, "breaker", 10), auth_a, 5000);
    vo.actuate(command(b, "shed", 11), auth_b, 5400);
    CHECK_FALSE(vo.close_window(5999).has_value());
    const auto outcome = vo.close_window(6000);
    REQUIRE(outcome.has_value());
    CHECK(outcome->winner.issuer == b);
    REQUIRE(outcome->rejected.size() == 1);
    CHECK(outcome->rejected[0].issuer == a);
    CHECK(told.size() == 2);
    REQUIRE(forwarded.size() == 1);
    CHECK(forwarded[0].action == "shed");
    CHECK_FALSE(vo.close_window(9000).has_value());
}

TEST_CASE("winner order: priority, issuer, issue time, then action") {
    const auto x = EntityId::service("x");
    const auto y = EntityId::service("y");
    auto c1 = command(y, "breaker", 5);
    c1.priority = 2;
    auto c2 = command(x, "breaker", 5);
    c2.priority = 1;
    CHECK(select_winner(std::vector{c1, c2}).issuer == y);
    c2.priority = 2;
    CHECK(select_winner(std::vector{c1, c2}).issuer == x);
    auto c3 = command(x, "breaker", 3);
    c3.priority = 2;
    CHECK(select_winner(std::vector{c2, c3}).issued_at == 3);
    auto c4 = command(x, "alpha", 3);
    c4.priority = 2;
    CHECK(select_winner(std::vector{c3, c4}).action == "alpha");
    CHECK_THROWS(select_winner(std::vector<ActuationCommand>{}));
}

namespace {

/// Every arrival order of `cmds` into a fresh window must yield the same winner.
void check_order_independence(const std::vector<ActuationCommand>& cmds, const std::vector<int>& priorities) {
    std::vector<std::size_t> order(cmds.size());
    std::iota(order.begin(), order.end(), 0);
    std::optional<ActuationCommand> expected;
    do {
        VOInstance vo(meter(), {});
        std::int64_t now = 0;
        for (auto i : order) {
            const auto auth = grant(vo, cmds[i].issuer, AccessTier::Friend, priorities[i]);
            vo.actuate(cmds[i], auth, now++);
        }
        const auto outcome = vo.close_window(now + kDefaultConflictWindowMs);
        REQUIRE(outcome.has_value());
        CHECK(outcome->rejected.size() == cmds.size() - 1);
        if (!expected) {
            expected = outcome->winner;
        } else {
            CHECK(outcome->winner == *expected);
        }

        std::vector<ActuationCommand> arranged;
        for (auto i : order) {
            arranged.push_back(cmds[i]);
            arranged.back().priority = priorities[i];
        }
        CHECK(select_winner(arranged) == *expected);
    } while (std::next_permutation(order.begin(), order.end()));
}

}  // namespace

TEST_CASE("arbitration is independent of arrival order") {
    const std::vector<EntityId> issuers = {EntityId::service("a"), EntityId::service("b"), EntityId::me("c")};
    const std::vector<std::string> actions = {"breaker", "shed"};
    int windows = 0;
    // Every combination over a small domain, with issuer priorities fixed per
    // issuer since the grant decides them.
    for (int pa = 0; pa <= 1; ++pa) {
        for (int pb = 0; pb <= 1; ++pb) {
            const std::map<EntityId, int> priority = {{issuers[0], pa}, {issuers[1], pb}, {issuers[2], 1}};
            std::vector<ActuationCommand> domain;
            for (const auto& who : issuers) {
                for (const auto& act : actions) {
                    for (Timestamp t : {1, 2}) domain.push_back(command(who, act, t, static_cast<double>(t)));
                }
            }
            for (std::size_t i = 0; i < domain.size(); ++i) {
                for (std::size_t j = i + 1; j < domain.size(); ++j) {
                    const std::vector pair{domain[i], domain[j]};
                    check_order_independence(pair, {priority.at(pair[0].issuer), priority.at(pair[1].issuer)});
                    ++windows;
                    for (std::size_t k = j + 1; k < domain.size(); ++k) {
                        const std::vector triple{domain[i], domain[j], domain[k]};
                        check_order_independence(triple, {priority.at(triple[0].issuer),
                                                          priority.at(triple[1].issuer),
                                                          priority.at(triple[2].issuer)});
                        ++windows;
                    }
                }
            }
        }
    }
    CHECK(windows > 500);
}

TEST_CASE("same issuer and time falls back to arguments") {
    const auto who = EntityId::service("a");
    auto lo = command(who, "breaker", 1, 0.0);
    auto hi = command(who, "breaker", 1, 1.0);
    const auto w1 = select_winner(std::vector{lo, hi});
    const auto w2 = select_winner(std::vector{hi, lo});
    CHECK(w1 == w2);
}
