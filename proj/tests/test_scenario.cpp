#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <algorithm>

#include "gridvirt/scenario.hpp"
#include "support.hpp"

using namespace gridvirt;
namespace fs = std::filesystem;

namespace {

const fs::path kConfig = fs::path(GV_SOURCE_DIR) / "config" / "smart-homes.ini";

fs::path scratch(const std::string& tag) {
    auto dir = fs::temp_directory_path() / ("gridvirt-scenario-" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string load_error(const std::string& ini) {
    const auto dir = scratch("bad");
    std::ofstream(dir / "bad.ini") << ini;
    try {
        load_scenario(dir / "bad.ini");
    } catch (const ScenarioError& e) {
        return e.what();
    }
    return "";
}

const char* kMinimal = R"([vo:weather-home-c]
kind = weather_unit
owner = service:dweller-c
default_tier = public
visibility = wind_speed_ms:public

[me:weather]
owner = service:municipality
requirements = measure:wind_speed_ms
fields = wind_speed_ms
exposure = public

[service:open-weather]
needs = weather
)";

RunOptions options_in(const std::string& tag) {
    RunOptions options;
    options.work_dir = scratch(tag);
    return options;
}

}  // namespace

TEST_CASE("the shipped configuration loads") {
    const auto config = load_scenario(kConfig);
    CHECK(config.vos.size() == 5);
    CHECK(config.grants.size() == 7);
    CHECK(config.mes.size() == 4);
    CHECK(config.me_grants.size() == 4);
    CHECK(config.services.size() == 4);
    CHECK(config.probes.size() == 3);
    CHECK(config.kill == "weather-home-b");
    CHECK(config.pool.label() == "static-10");
}

TEST_CASE("loader errors name the section and key") {
    CHECK(load_error(kMinimal).empty());
    CHECK(load_error(std::string(kMinimal) + "[vo:x]\nowner = service:a\ncolour = red\n").find("[vo:x] unknown key 'colour'") !=
          std::string::npos);
    CHECK(load_error("[vo:x]\nowner = service:a\ndefault_tier = secret\n").find("[vo:x] default_tier") !=
          std::string::npos);
    CHECK(load_error("[gadget:x]\nsize = 3\n").find("unknown section [gadget:x]") != std::string::npos);
    CHECK(load_error("[me:m]\nowner = service:a\nfields = a\n").find("[me:m] requirements") != std::string::npos);
    CHECK(load_error(std::string(kMinimal) + "[grant:1]\nvo = ghost\nholder = me:weather\n").find("unknown vo 'ghost'") !=
          std::string::npos);
    CHECK(load_error(std::string(kMinimal) + "[instance_pool]\nmode = elastic\n").find("[instance_pool] mode") !=
          std::string::npos);
    CHECK(load_error(std::string(kMinimal) + "[scenario]\nhomes = two\n").find("[scenario] homes") != std::string::npos);
    CHECK(load_error(std::string(kMinimal) + "[service:s]\nneeds = nothing\n").find("unknown me 'nothing'") !=
          std::string::npos);
    CHECK(load_error("[vo:x]\nowner = service:a\nvisibility = energy_kwh\n").find("[vo:x] visibility") !=
          std::string::npos);
    CHECK(load_error("this is not ini\n").find("bad.ini") != std::string::npos);
    CHECK(load_error(std::string(kMinimal) + "[scenario]\nkill = ghost\n").find("kill") != std::string::npos);
}

TEST_CASE("a missing CSV is reported by name") {
    const auto dir = scratch("nocsv");
    std::ofstream(dir / "s.ini") << "[scenario]\ngenerate = false\ncorpus = nowhere\n\n" << kMinimal;
    try {
        run_case_study(load_scenario(dir / "s.ini"), options_in("nocsv-work"));
        FAIL("run succeeded without its corpus");
    } catch (const ScenarioError& e) {
        CHECK(std::string(e.what()).find("missing CSV for vo:weather-home-c") != std::string::npos);
    }
}

TEST_CASE("the case study") {
    const auto report = run_case_study(load_scenario(kConfig), options_in("full"));

    const auto& checks = report.at("checks");
    CHECK(checks.at("vos_registered") == 5);
    CHECK(checks.at("mes_composed") == 4);
    CHECK(checks.at("services_booted") == 4);
    CHECK(checks.at("privacy_leaks") == 0);
    CHECK(report.at("privacy").at("scan").at("leaks").empty());
    CHECK(report.at("privacy").at("scan").at("responses_scanned").get<int>() > 0);
    CHECK(report.at("timeline").size() == 60);

    SUBCASE("home c reports no indoor fields") {
        CHECK(report.at("homes").at("home-c").at("indoor_fields").empty());
        CHECK_FALSE(report.at("homes").at("home-b").at("indoor_fields").empty());
    }

    SUBCASE("killing weather-home-b recomposes the weather ME onto home c") {
        bool found = false;
        for (const auto& n : report.at("recompositions")) {
            if (n.at("me") == "me:weather" && n.at("outcome") == "recomposed") {
                CHECK(n.at("members") == Json::array({"vo:weather-home-c"}));
                found = true;
            }
        }
        CHECK(found);
    }

    SUBCASE("billing totals match the manifest and the operations view") {
        const auto& billing = report.at("billing");
        REQUIRE(billing.at("per_home").size() == 2);
        for (const auto& home : billing.at("per_home")) {
            CHECK(support::close_rel(home.at("reported_kwh").get<double>(), home.at("manifest_kwh").get<double>()));
        }
        CHECK(support::close_rel(billing.at("billing_view_total_kwh").get<double>(),
                                 billing.at("operations_view_total_kwh").get<double>()));
    }

    SUBCASE("only the need that lost its ME re-requests") {
        for (const auto& svc : report.at("services")) {
            for (const auto& need : svc.at("needs")) {
                if (need.at("me") == "me:home-b-info") {
                    CHECK(need.at("re_requests").get<int>() > 0);
                } else {
                    CHECK(need.at("re_requests") == 0);
                    CHECK(need.at("health") == "ok");
                }
            }
        }
    }

    SUBCASE("probes see only their tier") {
        for (const auto& q : report.at("queries")) {
            if (!q.contains("probe")) continue;
            if (q.at("probe") == "public-weather-b") {
                CHECK(q.at("tier") == "public");
                CHECK_FALSE(q.at("fields_withheld").empty());
            }
            for (const auto& f : q.at("fields_returned")) CHECK(f.get<std::string>().rfind("inside_", 0) != 0);
        }
    }
}

TEST_CASE("reruns are byte-identical") {
    const auto a = run_case_study(load_scenario(kConfig), options_in("rerun-a"));
    const auto b = run_case_study(load_scenario(kConfig), options_in("rerun-b"));
    auto strip = [](Json j) {
        j["scenario"].erase("corpus");
        return j.dump();
    };
    CHECK(strip(a) == strip(b));
}

TEST_CASE("seed override changes the corpus") {
    auto options = options_in("seeded");
    options.seed_override = 7;
    const auto report = run_case_study(load_scenario(kConfig), options);
    CHECK(report.at("scenario").at("seed") == 7);
    CHECK(report.at("checks").at("privacy_leaks") == 0);
}

TEST_CASE("the summary is short and readable") {
    const auto report = run_case_study(load_scenario(kConfig), options_in("summary"));
    const auto text = summarize_report(report);
    CHECK(text.find("registered VOs: 5") != std::string::npos);
    CHECK(text.find("0 leaks") != std::string::npos);
    CHECK(std::count(text.begin(), text.end(), '\n') < 40);
}
