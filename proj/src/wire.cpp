#include "gridvirt/wire.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>

namespace gridvirt {

namespace {

constexpr std::size_t kMaxHeaderBytes = 64 * 1024;
constexpr std::size_t kMaxBodyBytes = 16 * 1024 * 1024;

std::string lower(std::string_view text) {
    std::string out(text);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

std::string_view trim(std::string_view text) {
    while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
    while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) text.remove_suffix(1);
    return text;
}

std::vector<std::string_view> split(std::string_view text, char sep) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
        const auto pos = text.find(sep, start);
        parts.push_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return parts;
}

std::int64_t parse_int(std::string_view text, const char* what) {
    std::int64_t value = 0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc{} || ptr != end || text.empty()) {
        throw Error(ErrorCode::BadRequest, std::string("parameter '") + what + "' is not an integer");
    }
    return value;
}

void set_credentials(HttpRequest& req, const Credentials& auth) {
    if (auth.requester) req.headers["x-requester"] = auth.requester->str();
    if (!auth.tokens.empty()) {
        std::string value = "Bearer ";
        for (std::size_t i = 0; i < auth.tokens.size(); ++i) {
            if (i) value += ',';
            value += auth.tokens[i];
        }
        req.headers["authorization"] = std::move(value);
    }
}

Credentials read_credentials(const HttpRequest& req) {
    Credentials auth;
    if (auto requester = req.header("x-requester")) auth.requester = parse_entity_id(trim(*requester));
    if (auto header = req.header("authorization")) {
        const auto value = trim(*header);
        constexpr std::string_view kBearer = "Bearer ";
        if (value.substr(0, kBearer.size()) != kBearer) {
            throw Error(ErrorCode::Unauthorized, "authorization header must use the Bearer scheme");
        }
        for (auto token : split(value.substr(kBearer.size()), ',')) {
            token = trim(token);
            if (token.empty()) throw Error(ErrorCode::Unauthorized, "empty bearer token");
            auth.tokens.emplace_back(token);
        }
    }
    return auth;
}

HttpRequest make_request(std::string method, std::string path) {
    HttpRequest req;
    req.method = std::move(method);
    req.path = std::move(path);
    return req;
}

void set_json_body(HttpRequest& req, const Json& body) {
    req.body = body.dump(-1, ' ', false, Json::error_handler_t::replace);
    req.headers["content-type"] = "application/json";
}

Json parse_body(const HttpRequest& req) {
    try {
        return Json::parse(req.body);
    } catch (const Json::exception&) {
        throw Error(ErrorCode::BadRequest, "request body is not valid JSON");
    }
}

struct Visitor {
    HttpRequest operator()(const call::PostObservation& c) const {
        auto req = make_request("POST", "/vo/" + c.vo + "/observations");
        set_json_body(req, c.obs);
        set_credentials(req, c.auth);
        return req;
    }

    HttpRequest operator()(const call::QueryData& c) const {
        const char* prefix = c.target.kind == EntityKind::ME ? "/me/" : "/vo/";
        auto req = make_request("GET", prefix + c.target.name + "/data");
        req.query.emplace_back("from", std::to_string(c.range.from));
        req.query.emplace_back("to", std::to_string(c.range.to));
        if (c.view) {
            req.query.emplace_back("bucket", std::to_string(c.view->time_bucket_s));
            req.query.emplace_back("group", std::string(to_string(c.view->group_by)));
            req.query.emplace_back("reduce", std::string(to_string(c.view->reduce)));
        }
        for (const auto& field : c.fields) req.query.emplace_back("field", field);
        set_credentials(req, c.auth);
        return req;
    }

    HttpRequest operator()(const call::PostPolicy& c) const {
        const char* prefix = c.target.kind == EntityKind::ME ? "/me/" : "/vo/";
        auto req = make_request("POST", prefix + c.target.name + "/policy");
        set_json_body(req, c.cmd);
        set_credentials(req, c.auth);
        return req;
    }

    HttpRequest operator()(const call::PostActuation& c) const {
        auto req = make_request("POST", "/vo/" + c.vo + "/actuate");
        set_json_body(req, c.cmd);
        set_credentials(req, c.auth);
        return req;
    }

    HttpRequest operator()(const call::RegisterVO& c) const {
        auto req = make_request("POST", "/registry/vo");
        set_json_body(req, Json{{"descriptor", c.descriptor}, {"visibility", c.visibility}, {"cadence_s", c.cadence_s}});
        return req;
    }

    HttpRequest operator()(const call::PostVOStatus& c) const {
        auto req = make_request("POST", "/registry/vo/" + c.vo + "/status");
        set_json_body(req, c.status);
        return req;
    }

    HttpRequest operator()(const call::SearchVO& c) const {
        auto req = make_request("GET", "/registry/vo/search");
        for (const auto& r : c.requirements) req.query.emplace_back("req", r);
        if (c.include_offline) req.query.emplace_back("include_offline", "true");
        set_credentials(req, c.auth);
        return req;
    }

    HttpRequest operator()(const call::GrantAccess& c) const {
        const char* prefix = c.subject.kind == EntityKind::ME ? "/registry/me/" : "/registry/vo/";
        auto req = make_request("POST", prefix + c.subject.name + "/grants");
        set_json_body(req, Json{{"holder", c.holder}, {"tier", c.tier}, {"priority", c.priority}});
        set_credentials(req, c.auth);
        return req;
    }

    HttpRequest operator()(const call::RegisterME& c) const {
        auto req = make_request("POST", "/registry/me");
        set_json_body(req, c.descriptor);
        set_credentials(req, c.auth);
        return req;
    }

    HttpRequest operator()(const call::ComposeME& c) const {
        auto req = make_request("POST", "/me/compose");
        set_json_body(req, c.request);
        set_credentials(req, c.auth);
        return req;
    }

    HttpRequest operator()(const call::MEAlert& c) const {
        auto req = make_request("POST", "/me/" + c.me + "/alerts");
        set_json_body(req, c.alert);
        return req;
    }

    HttpRequest operator()(const call::MEStatus& c) const {
        auto req = make_request("GET", "/me/" + c.me + "/status");
        set_credentials(req, c.auth);
        return req;
    }
};

void require_method(const HttpRequest& req, std::string_view method) {
    if (req.method != method) {
        throw Error(ErrorCode::BadRequest, "method " + req.method + " not allowed on " + req.path);
    }
}

void require_known(const std::function<bool(const std::string&)>& known, const std::string& name, const char* kind) {
    if (!is_valid_name(name) || (known && !known(name))) {
        throw Error(ErrorCode::NotFound, std::string(kind) + " '" + name + "' is not registered");
    }
}

call::QueryData decode_query(const HttpRequest& req, EntityId target) {
    call::QueryData q;
    q.target = std::move(target);
    const auto from = req.query_one("from");
    const auto to = req.query_one("to");
    if (!from || !to) throw Error(ErrorCode::BadRequest, "query needs from and to");
    q.range = {parse_int(*from, "from"), parse_int(*to, "to")};
    if (q.range.from > q.range.to) throw Error(ErrorCode::BadRequest, "inverted time range");
    q.fields = req.query_all("field");
    const auto bucket = req.query_one("bucket");
    const auto group = req.query_one("group");
    const auto reduce = req.query_one("reduce");
    if (bucket || group || reduce) {
        if (!bucket || !group || !reduce) throw Error(ErrorCode::BadRequest, "view needs bucket, group and reduce");
        ViewSpec view;
        view.time_bucket_s = parse_int(*bucket, "bucket");
        if (view.time_bucket_s <= 0) throw Error(ErrorCode::BadRequest, "bucket must be positive");
        view.group_by = group_by_from_string(*group);
        view.reduce = reduce_from_string(*reduce);
        view.fields = q.fields;
        q.view = std::move(view);
    }
    q.auth = read_credentials(req);
    return q;
}

struct GrantBody {
    EntityId holder;
    AccessTier tier;
    int priority;
};

GrantBody decode_grant_body(const Json& body) {
    GrantBody g{body.at("holder").get<EntityId>(), body.at("tier").get<AccessTier>(), body.value("priority", 0)};
    if (g.priority < 0) throw Error(ErrorCode::BadRequest, "priority must be >= 0");
    return g;
}

RoutedCall route_or_throw(const HttpRequest& req, const RouteDirectory* dir) {
    if (req.path.empty() || req.path.front() != '/') throw Error(ErrorCode::NotFound, "no such route");
    auto segments_view = split(std::string_view(req.path).substr(1), '/');
    std::vector<std::string> seg(segments_view.begin(), segments_view.end());
    const auto not_found = [&]() { return Error(ErrorCode::NotFound, "no route for " + req.path); };
    const auto has_vo = dir ? dir->has_vo : std::function<bool(const std::string&)>{};
    const auto has_me = dir ? dir->has_me : std::function<bool(const std::string&)>{};

    if (seg.size() == 3 && seg[0] == "vo") {
        const auto& name = seg[1];
        if (seg[2] != "observations" && seg[2] != "data" && seg[2] != "policy" && seg[2] != "actuate") {
            throw not_found();
        }
        require_known(has_vo, name, "vo");
        if (seg[2] == "observations") {
            require_method(req, "POST");
            call::PostObservation c{name, parse_body(req).get<Observation>(), read_credentials(req)};
            validate(c.obs);
            return c;
        }
        if (seg[2] == "data") {
            require_method(req, "GET");
            return decode_query(req, EntityId::vo(name));
        }
        if (seg[2] == "policy") {
            require_method(req, "POST");
            call::PostPolicy c{EntityId::vo(name), parse_body(req).get<UpdateCommand>(), read_credentials(req)};
            return c;
        }
        require_method(req, "POST");
        return call::PostActuation{name, parse_body(req).get<ActuationCommand>(), read_credentials(req)};
    }

    if (seg.size() == 2 && seg[0] == "me" && seg[1] == "compose") {
        require_method(req, "POST");
        return call::ComposeME{parse_body(req).get<ComposeRequest>(), read_credentials(req)};
    }

    if (seg.size() == 3 && seg[0] == "me") {
        const auto& name = seg[1];
        if (seg[2] != "data" && seg[2] != "policy" && seg[2] != "alerts" && seg[2] != "status") throw not_found();
        require_known(has_me, name, "me");
        if (seg[2] == "data") {
            require_method(req, "GET");
            return decode_query(req, EntityId::me(name));
        }
        if (seg[2] == "status") {
            require_method(req, "GET");
            return call::MEStatus{name, read_credentials(req)};
        }
        require_method(req, "POST");
        if (seg[2] == "policy") return call::PostPolicy{EntityId::me(name), parse_body(req).get<UpdateCommand>(), read_credentials(req)};
        return call::MEAlert{name, parse_body(req).get<VOAlert>()};
    }

    if (seg.size() >= 2 && seg[0] == "registry" && seg[1] == "vo") {
        if (seg.size() == 2) {
            require_method(req, "POST");
            const auto body = parse_body(req);
            call::RegisterVO c;
            c.descriptor = body.at("descriptor").get<VODescriptor>();
            c.visibility = body.contains("visibility") ? body.at("visibility").get<VisibilityMap>() : VisibilityMap{};
            c.cadence_s = body.value("cadence_s", std::int64_t{60});
            if (c.cadence_s <= 0) throw Error(ErrorCode::BadRequest, "cadence_s must be positive");
            validate(c.descriptor);
            return c;
        }
        if (seg.size() == 3 && seg[2] == "search") {
            require_method(req, "GET");
            call::SearchVO c;
            c.requirements = req.query_all("req");
            const auto offline = req.query_one("include_offline");
            c.include_offline = offline && *offline == "true";
            c.auth = read_credentials(req);
            return c;
        }
        if (seg.size() == 4 && (seg[3] == "status" || seg[3] == "grants")) {
            require_known(has_vo, seg[2], "vo");
            require_method(req, "POST");
            if (seg[3] == "status") return call::PostVOStatus{seg[2], parse_body(req).get<VOStatus>()};
            const auto g = decode_grant_body(parse_body(req));
            return call::GrantAccess{EntityId::vo(seg[2]), g.holder, g.tier, g.priority, read_credentials(req)};
        }
        throw not_found();
    }

    if (seg.size() >= 2 && seg[0] == "registry" && seg[1] == "me") {
        if (seg.size() == 2) {
            require_method(req, "POST");
            return call::RegisterME{parse_body(req).get<MEDescriptor>(), read_credentials(req)};
        }
        if (seg.size() == 4 && seg[3] == "grants") {
            require_known(has_me, seg[2], "me");
            require_method(req, "POST");
            const auto g = decode_grant_body(parse_body(req));
            return call::GrantAccess{EntityId::me(seg[2]), g.holder, g.tier, g.priority, read_credentials(req)};
        }
        throw not_found();
    }

    throw not_found();
}

}  // namespace

// ---------------------------------------------------------------------------
// HTTP values
// ---------------------------------------------------------------------------

std::optional<std::string> HttpRequest::header(const std::string& lowercase_name) const {
    const auto it = headers.find(lowercase_name);
    if (it == headers.end()) return std::nullopt;
    return it->second;
}

std::optional<std::string> HttpRequest::query_one(std::string_view name) const {
    for (const auto& [k, v] : query) {
        if (k == name) return v;
    }
    return std::nullopt;
}

std::vector<std::string> HttpRequest::query_all(std::string_view name) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : query) {
        if (k == name) out.push_back(v);
    }
    return out;
}

std::string HttpRequest::target() const {
    std::string out = path;
    for (std::size_t i = 0; i < query.size(); ++i) {
        out += i == 0 ? '?' : '&';
        out += url_encode(query[i].first);
        out += '=';
        out += url_encode(query[i].second);
    }
    return out;
}

Json HttpResponse::json() const { return Json::parse(body); }

std::string url_encode(std::string_view text) {
    static constexpr char kHex[] = "0123456789ABCDEF";
    std::string out;
    for (const unsigned char c : text) {
        if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~' || c == ':') {
            out += static_cast<char>(c);
        } else {
            out += '%';
            out += kHex[c >> 4];
            out += kHex[c & 0xF];
        }
    }
    return out;
}

std::string url_decode(std::string_view text) {
    const auto hex = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        return -1;
    };
    std::string out;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] == '%') {
            if (i + 2 >= text.size()) {
                throw Error(ErrorCode::BadRequest, "truncated percent escape");
            }
            const int hi = hex(text[i + 1]);
            const int lo = hex(text[i + 2]);
            if (hi < 0 || lo < 0) throw Error(ErrorCode::BadRequest, "bad percent escape");
            out += static_cast<char>(hi * 16 + lo);
            i += 2;
        } else if (text[i] == '+') {
            out += ' ';
        } else {
            out += text[i];
        }
    }
    return out;
}

std::string to_bytes(const HttpRequest& req) {
    std::string out = req.method + " " + req.target() + " HTTP/1.1\r\nhost: gridvirt\r\n";
    for (const auto& [name, value] : req.headers) {
        if (name == "content-length" || name == "host") continue;
        out += name + ": " + value + "\r\n";
    }
    out += "content-length: " + std::to_string(req.body.size()) + "\r\n\r\n";
    out += req.body;
    return out;
}

HttpRequest parse_http_request(std::string_view raw) {
    const auto head_end = raw.find("\r\n\r\n");
    if (head_end == std::string_view::npos) throw Error(ErrorCode::BadRequest, "incomplete request head");
    if (head_end > kMaxHeaderBytes) throw Error(ErrorCode::BadRequest, "request head too large");
    const auto head = raw.substr(0, head_end);
    const auto body = raw.substr(head_end + 4);

    auto lines = split(head, '\n');
    const auto request_line = trim(lines.front());
    const auto parts = split(request_line, ' ');
    if (parts.size() != 3 || parts[0].empty() || parts[1].empty()) {
        throw Error(ErrorCode::BadRequest, "malformed request line");
    }
    if (parts[2] != "HTTP/1.1" && parts[2] != "HTTP/1.0") throw Error(ErrorCode::BadRequest, "unsupported protocol");
    for (const char c : parts[0]) {
        if (c < 'A' || c > 'Z') throw Error(ErrorCode::BadRequest, "malformed method");
    }

    HttpRequest req;
    req.method = std::string(parts[0]);
    const auto target = parts[1];
    const auto qmark = target.find('?');
    req.path = url_decode(target.substr(0, qmark));
    if (qmark != std::string_view::npos) {
        for (const auto pair : split(target.substr(qmark + 1), '&')) {
            if (pair.empty()) continue;
            const auto eq = pair.find('=');
            if (eq == std::string_view::npos) {
                req.query.emplace_back(url_decode(pair), "");
            } else {
                req.query.emplace_back(url_decode(pair.substr(0, eq)), url_decode(pair.substr(eq + 1)));
            }
        }
    }

    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto line = trim(lines[i]);
        if (line.empty()) continue;
        const auto colon = line.find(':');
        if (colon == std::string_view::npos || colon == 0) throw Error(ErrorCode::BadRequest, "malformed header line");
        req.headers[lower(trim(line.substr(0, colon)))] = std::string(trim(line.substr(colon + 1)));
    }

    if (auto length = req.header("content-length")) {
        const auto n = parse_int(*length, "content-length");
        if (n < 0 || static_cast<std::uint64_t>(n) > kMaxBodyBytes) throw Error(ErrorCode::BadRequest, "bad content-length");
        if (static_cast<std::size_t>(n) != body.size()) throw Error(ErrorCode::BadRequest, "body length mismatch");
    }
    req.body = std::string(body);
    return req;
}

// ---------------------------------------------------------------------------
// Payloads
// ---------------------------------------------------------------------------

std::string_view to_string(UpdateVerb verb) {
    switch (verb) {
        case UpdateVerb::StartPeriodic: return "start_periodic";
        case UpdateVerb::StopPeriodic: return "stop_periodic";
        case UpdateVerb::ChangePeriodic: return "change_periodic";
    }
    return "?";
}

void validate(const UpdateCommand& cmd) {
    if (cmd.verb == UpdateVerb::StopPeriodic) {
        if (cmd.period_s || !cmd.fields.empty()) {
            throw Error(ErrorCode::BadRequest, "stop_periodic carries no period or fields");
        }
        return;
    }
    if (!cmd.period_s || *cmd.period_s <= 0) throw Error(ErrorCode::BadRequest, "periodic update needs period_s > 0");
    if (cmd.fields.empty()) throw Error(ErrorCode::BadRequest, "periodic update needs fields");
}

void to_json(Json& j, const UpdateCommand& cmd) {
    j = Json{{"verb", std::string(to_string(cmd.verb))}};
    if (cmd.period_s) j["period_s"] = *cmd.period_s;
    if (!cmd.fields.empty()) j["fields"] = cmd.fields;
}

void from_json(const Json& j, UpdateCommand& cmd) {
    const auto verb = j.at("verb").get<std::string>();
    if (verb == "start_periodic") {
        cmd.verb = UpdateVerb::StartPeriodic;
    } else if (verb == "stop_periodic") {
        cmd.verb = UpdateVerb::StopPeriodic;
    } else if (verb == "change_periodic") {
        cmd.verb = UpdateVerb::ChangePeriodic;
    } else {
        throw Error(ErrorCode::BadRequest, "unknown update verb '" + verb + "'");
    }
    cmd.period_s.reset();
    if (j.contains("period_s")) cmd.period_s = j.at("period_s").get<std::int64_t>();
    cmd.fields = j.contains("fields") ? j.at("fields").get<std::vector<std::string>>() : std::vector<std::string>{};
}

void to_json(Json& j, const ActuationCommand& cmd) {
    Json args = Json::object();
    for (const auto& [name, value] : cmd.args) args[name] = value;
    j = Json{{"target", cmd.target}, {"action", cmd.action},     {"args", std::move(args)},
             {"issuer", cmd.issuer}, {"priority", cmd.priority}, {"issued_at", cmd.issued_at}};
}

void from_json(const Json& j, ActuationCommand& cmd) {
    cmd.target = j.at("target").get<EntityId>();
    cmd.action = j.at("action").get<std::string>();
    cmd.args.clear();
    for (const auto& [name, value] : j.at("args").items()) cmd.args[name] = value.get<Scalar>();
    cmd.issuer = j.at("issuer").get<EntityId>();
    cmd.priority = j.value("priority", 0);
    if (cmd.priority < 0) throw Error(ErrorCode::BadRequest, "priority must be >= 0");
    cmd.issued_at = j.at("issued_at").get<Timestamp>();
}

void to_json(Json& j, const WireError& err) {
    j = Json{{"code", std::string(to_string(err.code))}, {"detail", err.detail}};
}

void from_json(const Json& j, WireError& err) {
    err.code = error_code_from_string(j.at("code").get<std::string>());
    err.detail = j.at("detail").get<std::string>();
}

// ---------------------------------------------------------------------------
// Encoders and router
// ---------------------------------------------------------------------------

HttpRequest encode_observation_post(const Observation& obs, const std::optional<AccessKey>& key) {
    validate(obs);
    Credentials auth;
    if (key) {
        auth.requester = key->holder;
        auth.tokens.push_back(key->token);
    }
    return encode(call::PostObservation{obs.source.name, obs, auth});
}

HttpRequest encode_query_get(const EntityId& target, const std::optional<ViewSpec>& view, TimeRange range,
                             const std::optional<AccessKey>& key, const std::vector<std::string>& fields) {
    if (range.from > range.to) throw Error(ErrorCode::BadRequest, "inverted time range");
    call::QueryData q;
    q.target = target;
    q.range = range;
    q.view = view;
    q.fields = view && fields.empty() ? view->fields : fields;
    if (q.view) q.view->fields = q.fields;
    if (key) {
        q.auth.requester = key->holder;
        q.auth.tokens.push_back(key->token);
    }
    return encode(q);
}

HttpRequest encode(const RoutedCall& c) { return std::visit(Visitor{}, c); }

RouteResult route(const HttpRequest& req, const RouteDirectory* directory) {
    try {
        return route_or_throw(req, directory);
    } catch (const Error& e) {
        return WireError{e.code(), e.detail()};
    } catch (const std::exception& e) {
        return WireError{ErrorCode::BadRequest, std::string("malformed request: ") + e.what()};
    }
}

RouteResult decode_and_route(std::string_view raw, const RouteDirectory* directory) {
    try {
        return route(parse_http_request(raw), directory);
    } catch (const Error& e) {
        return WireError{e.code(), e.detail()};
    } catch (const std::exception& e) {
        return WireError{ErrorCode::BadRequest, std::string("malformed request: ") + e.what()};
    }
}

HttpResponse json_response(int status, const Json& body) {
    return HttpResponse{status, body.dump(-1, ' ', false, Json::error_handler_t::replace)};
}

HttpResponse error_response(const WireError& err) { return json_response(http_status(err.code), Json(err)); }

HttpResponse error_response(const Error& err) { return error_response(WireError{err.code(), err.detail()}); }

}  // namespace gridvirt
