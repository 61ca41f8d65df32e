#include "gridvirt/descriptors.hpp"

#include <algorithm>

namespace gridvirt {

bool VODescriptor::offers(const std::string& functionality) const {
    return std::find(functionalities.begin(), functionalities.end(), functionality) != functionalities.end();
}

void validate(const VODescriptor& desc) {
    if (desc.id.kind != EntityKind::VO) throw Error(ErrorCode::BadRequest, "descriptor id must be a vo id");
    if (desc.functionalities.empty()) {
        throw Error(ErrorCode::BadRequest, "descriptor for " + desc.id.str() + " lists no functionalities");
    }
    for (const auto& f : desc.functionalities) {
        const auto colon = f.find(':');
        const auto verb = f.substr(0, colon);
        if (colon == std::string::npos || colon + 1 == f.size() || (verb != "measure" && verb != "actuate")) {
            throw Error(ErrorCode::BadRequest, "functionality '" + f + "' is not measure:<field> or actuate:<action>");
        }
    }
}

std::string_view to_string(MEHealth health) {
    switch (health) {
        case MEHealth::Ok: return "ok";
        case MEHealth::Degraded: return "degraded";
        case MEHealth::RequirementUnmet: return "requirement_unmet";
    }
    return "?";
}

MEHealth me_health_from_string(std::string_view text) {
    if (text == "ok") return MEHealth::Ok;
    if (text == "degraded") return MEHealth::Degraded;
    if (text == "requirement_unmet") return MEHealth::RequirementUnmet;
    throw Error(ErrorCode::BadRequest, "unknown ME health '" + std::string(text) + "'");
}

void to_json(Json& j, const VODescriptor& desc) {
    j = Json{{"id", desc.id},
             {"owner", desc.owner},
             {"location", desc.location},
             {"functionalities", desc.functionalities},
             {"endpoint", desc.endpoint},
             {"status", desc.status},
             {"default_tier", desc.default_tier}};
}

void from_json(const Json& j, VODescriptor& desc) {
    desc.id = j.at("id").get<EntityId>();
    desc.owner = j.at("owner").get<EntityId>();
    desc.location = j.at("location").get<std::string>();
    desc.functionalities = j.at("functionalities").get<std::vector<std::string>>();
    desc.endpoint = j.at("endpoint").get<std::string>();
    desc.status = j.at("status").get<VOStatus>();
    desc.default_tier = j.at("default_tier").get<AccessTier>();
}

void to_json(Json& j, const MEMember& member) {
    j = Json{{"vo_id", member.vo_id}};
    if (!member.key.token.empty()) j["key"] = member.key;
}

void from_json(const Json& j, MEMember& member) {
    member.vo_id = j.at("vo_id").get<EntityId>();
    member.key = j.contains("key") ? j.at("key").get<AccessKey>() : AccessKey{};
}

void to_json(Json& j, const MEDescriptor& desc) {
    j = Json{{"id", desc.id},
             {"owner", desc.owner},
             {"members", desc.members},
             {"view", desc.view},
             {"requirements", desc.requirements},
             {"priority", desc.priority},
             {"exposure", desc.exposure}};
}

void from_json(const Json& j, MEDescriptor& desc) {
    desc.id = j.at("id").get<EntityId>();
    desc.owner = j.at("owner").get<EntityId>();
    desc.members = j.at("members").get<std::vector<MEMember>>();
    desc.view = j.at("view").get<ViewSpec>();
    desc.requirements = j.at("requirements").get<std::vector<std::string>>();
    desc.priority = j.at("priority").get<int>();
    desc.exposure = j.at("exposure").get<VisibilityMap>();
}

void to_json(Json& j, const ComposeRequest& req) {
    j = Json{{"name", req.name},
             {"requester", req.requester},
             {"owner", req.owner},
             {"requirements", req.requirements},
             {"view", req.view},
             {"exposure_tier", req.exposure_tier},
             {"priority", req.priority}};
}

void from_json(const Json& j, ComposeRequest& req) {
    req.name = j.at("name").get<EntityId>();
    req.requester = j.at("requester").get<EntityId>();
    req.owner = j.at("owner").get<EntityId>();
    req.requirements = j.at("requirements").get<std::vector<std::string>>();
    req.view = j.at("view").get<ViewSpec>();
    req.exposure_tier = j.value("exposure_tier", AccessTier::Friend);
    req.priority = j.value("priority", 0);
}

void to_json(Json& j, const AggregateRow& row) {
    j = Json{{"bucket_start", row.bucket_start},
             {"group", row.group},
             {"values", row.values},
             {"contributing_sources", row.contributing_sources}};
}

void from_json(const Json& j, AggregateRow& row) {
    row.bucket_start = j.at("bucket_start").get<Timestamp>();
    row.group = j.at("group").get<std::string>();
    row.values = j.at("values").get<std::map<std::string, double>>();
    row.contributing_sources = j.at("contributing_sources").get<int>();
}

void to_json(Json& j, const VOAlert& alert) { j = Json{{"vo_id", alert.vo_id}, {"status", alert.status}}; }

void from_json(const Json& j, VOAlert& alert) {
    alert.vo_id = j.at("vo_id").get<EntityId>();
    alert.status = j.at("status").get<VOStatus>();
}

}  // namespace gridvirt
