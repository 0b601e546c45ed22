#pragma once

#include "sbo/crml.hpp"
#include "sbo/errors.hpp"
#include "sbo/provider.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

// REST binding of ProviderService.
//
//   POST   /v1/accounts                                        {account_name, secret} -> 201
//   POST   /v1/tokens                                          {account_name, secret} -> 200 {token, expires_at}
//   POST   /v1/accounts/{account}/blocklists                   {name, strictness, rule_text?} -> 201
//   POST   /v1/accounts/{account}/blocklists/{list}/contacts   {identifiers} -> 201
//   DELETE /v1/accounts/{account}/blocklists/{list}/contacts/{contact_id} -> 204
//   PUT    /v1/accounts/{account}/blocklists/{list}/rule       {rule_text} -> 200
//   GET    /v1/accounts/{account}/crml?lists=a,b[&format=markup]  (If-None-Match) -> 200 | 304
//   POST   /v1/blocked-by                                      {identifiers} -> 200 {blockers:[{account,list}]}
//
// Errors are {code, message, path?} with 400/401/404/409.

namespace sbo {

namespace detail {

using ojson = nlohmann::ordered_json;

inline int http_status_for(const Error& e) {
    const auto& code = e.code();
    if (code == "Unauthorized") return 401;
    if (code == "NotFound") return 404;
    if (code == "Conflict") return 409;
    return 400;
}

inline ojson error_body(const std::string& code, const std::string& message, const std::string& path) {
    ojson body{{"code", code}, {"message", message}};
    if (!path.empty()) body["path"] = path;
    return body;
}

inline ojson parse_request_body(const std::string& body) {
    try {
        auto j = ojson::parse(body);
        if (!j.is_object()) throw ValidationError("request body must be a JSON object");
        return j;
    } catch (const ojson::parse_error& e) {
        throw ValidationError(std::string("malformed JSON body: ") + e.what());
    }
}

inline std::string body_string(const ojson& body, const char* key) {
    const auto it = body.find(key);
    if (it == body.end() || !it->is_string()) throw ValidationError(std::string("missing string field '") + key + "'", key);
    return it->get<std::string>();
}

// Request identifiers; schema problems surface as ValidationError.
inline IdentifierMap request_identifiers(const ojson& body) {
    const auto it = body.find("identifiers");
    if (it == body.end()) throw ValidationError("missing field 'identifiers'", "identifiers");
    try {
        return identifiers_from_json(*it, "identifiers");
    } catch (const SchemaError& e) {
        throw ValidationError(e.what(), e.path());
    }
}

inline std::string bearer_token(const httplib::Request& req) {
    const auto auth = req.get_header_value("Authorization");
    const std::string prefix = "Bearer ";
    if (auth.compare(0, prefix.size(), prefix) != 0) throw Unauthorized("missing bearer token");
    return auth.substr(prefix.size());
}

inline std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    if (s.empty()) return out;
    std::size_t start = 0;
    for (;;) {
        const auto comma = s.find(',', start);
        out.push_back(s.substr(start, comma - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

inline std::string unquote_etag(std::string v) {
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
    return v;
}


}  // namespace detail

class ProviderHttpServer {
public:
    explicit ProviderHttpServer(ProviderService& service) : service_(service) { install_routes(); }

    // Binds to `host`; port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port) {
        port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
        if (port_ < 0) throw Error("IoError", "cannot bind " + host + ":" + std::to_string(port));
        return port_;
    }

    // Blocks until stop().
    bool listen_after_bind() { return server_.listen_after_bind(); }
    void stop() { server_.stop(); }
    void wait_until_ready() const { server_.wait_until_ready(); }
    int port() const { return port_; }

private:
    using Request = httplib::Request;
    using Response = httplib::Response;
    using ojson = detail::ojson;

    ProviderService& service_;
    httplib::Server server_;
    int port_ = -1;

    template <typename Fn>
    httplib::Server::Handler guarded(Fn fn) {
        return [fn](const Request& req, Response& res) {
            try {
                fn(req, res);
            } catch (const Error& e) {
                res.status = detail::http_status_for(e);
                res.set_content(detail::error_body(e.code(), e.what(), e.path()).dump(), "application/json");
            } catch (const std::exception& e) {
                res.status = 400;
                res.set_content(detail::error_body("BadRequest", e.what(), "").dump(), "application/json");
            }
        };
    }

    static void reply(Response& res, int status, const ojson& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    void install_routes() {
        server_.Post("/v1/accounts", guarded([this](const Request& req, Response& res) {
            const auto body = detail::parse_request_body(req.body);
            const auto acc = service_.create_account(detail::body_string(body, "account_name"),
                                                     detail::body_string(body, "secret"));
            reply(res, 201, ojson{{"account_name", acc.account_name}});
        }));

        server_.Post("/v1/tokens", guarded([this](const Request& req, Response& res) {
            const auto body = detail::parse_request_body(req.body);
            const auto t = service_.issue_token(detail::body_string(body, "account_name"),
                                                detail::body_string(body, "secret"));
            reply(res, 200, ojson{{"token", t.token}, {"expires_at", format_utc(t.expires_at)}});
        }));

        server_.Post("/v1/accounts/:account/blocklists", guarded([this](const Request& req, Response& res) {
            const auto body = detail::parse_request_body(req.body);
            const auto st_text = detail::body_string(body, "strictness");
            const auto strictness = strictness_from_wire(st_text);
            if (!strictness) throw ValidationError("unknown strictness '" + st_text + "'", "strictness");
            std::optional<std::string> rule;
            if (body.contains("rule_text") && !body["rule_text"].is_null()) rule = detail::body_string(body, "rule_text");
            const auto list = service_.create_block_list(detail::bearer_token(req), req.path_params.at("account"),
                                                         detail::body_string(body, "name"), *strictness, rule);
            reply(res, 201, detail::list_to_json(list));
        }));

        server_.Post("/v1/accounts/:account/blocklists/:list/contacts",
                     guarded([this](const Request& req, Response& res) {
                         const auto body = detail::parse_request_body(req.body);
                         const auto c = service_.add_contact(detail::bearer_token(req), req.path_params.at("account"),
                                                             req.path_params.at("list"), detail::request_identifiers(body));
                         reply(res, 201,
                               ojson{{"contact_id", c.contact_id}, {"identifiers", detail::identifiers_to_json(c.identifiers)}});
                     }));

        server_.Delete("/v1/accounts/:account/blocklists/:list/contacts/:contact_id",
                       guarded([this](const Request& req, Response& res) {
                           service_.remove_contact(detail::bearer_token(req), req.path_params.at("account"),
                                                   req.path_params.at("list"), req.path_params.at("contact_id"));
                           res.status = 204;
                       }));

        server_.Put("/v1/accounts/:account/blocklists/:list/rule", guarded([this](const Request& req, Response& res) {
            const auto body = detail::parse_request_body(req.body);
            const auto list = service_.set_rule(detail::bearer_token(req), req.path_params.at("account"),
                                                req.path_params.at("list"), detail::body_string(body, "rule_text"));
            reply(res, 200, detail::list_to_json(list));
        }));

        server_.Get("/v1/accounts/:account/crml", guarded([this](const Request& req, Response& res) {
            std::optional<std::string> inm;
            if (req.has_header("If-None-Match")) inm = detail::unquote_etag(req.get_header_value("If-None-Match"));
            const auto format = req.get_param_value("format") == "markup" ? CrmlFormat::Markup : CrmlFormat::Object;
            const auto result = service_.export_crml(detail::bearer_token(req), req.path_params.at("account"),
                                                     detail::split_csv(req.get_param_value("lists")), inm);
            res.set_header("ETag", "\"" + result.digest + "\"");
            if (result.not_modified) {
                res.status = 304;
                return;
            }
            res.status = 200;
            res.set_content(serialize_crml(*result.document, format),
                            format == CrmlFormat::Markup ? "application/xml" : "application/json");
        }));

        server_.Post("/v1/blocked-by", guarded([this](const Request& req, Response& res) {
            const auto body = detail::parse_request_body(req.body);
            ojson blockers = ojson::array();
            for (const auto& b : service_.blocked_by(detail::request_identifiers(body)))
                blockers.push_back(ojson{{"account", b.account}, {"list", b.list}});
            reply(res, 200, ojson{{"blockers", blockers}});
        }));
    }
};

}  // namespace sbo
