#pragma once

#include "sbo/client.hpp"
#include "sbo/crml.hpp"
#include "sbo/errors.hpp"
#include "sbo/provider.hpp"
#include "sbo/provider_http.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <cctype>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace sbo {

// Thin REST client for one provider. Non-2xx responses are rethrown as the
// matching library error carrying the service's {code, message}.
class ProviderRestClient {
public:
    using ojson = nlohmann::ordered_json;

    ProviderRestClient(std::string host, int port) : http_(std::move(host), port) {
        http_.set_connection_timeout(5);
        http_.set_read_timeout(30);
    }

    // Accepts "host:port" (port defaults to 80).
    static ProviderRestClient from_address(const std::string& address) {
        const auto colon = address.rfind(':');
        if (colon == std::string::npos) return {address, 80};
        return {address.substr(0, colon), std::stoi(address.substr(colon + 1))};
    }

    void set_token(std::string token) { token_ = std::move(token); }

    ojson create_account(const std::string& name, const std::string& secret) {
        return send("POST", "/v1/accounts", ojson{{"account_name", name}, {"secret", secret}}, 201);
    }

    AccessToken issue_token(const std::string& name, const std::string& secret) {
        const auto j = send("POST", "/v1/tokens", ojson{{"account_name", name}, {"secret", secret}}, 200);
        return {j.at("token").get<std::string>(), name,
                parse_utc(j.at("expires_at").get<std::string>()).value_or(Timestamp{})};
    }

    ojson create_block_list(const std::string& account, const std::string& name, Strictness strictness,
                            const std::optional<std::string>& rule_text) {
        ojson body{{"name", name}, {"strictness", std::string(to_string(strictness))}};
        if (rule_text) body["rule_text"] = *rule_text;
        return send("POST", "/v1/accounts/" + encode(account) + "/blocklists", body, 201);
    }

    ojson add_contact(const std::string& account, const std::string& list, const IdentifierMap& ids) {
        return send("POST", list_path(account, list) + "/contacts",
                    ojson{{"identifiers", detail::identifiers_to_json(ids)}}, 201);
    }

    void remove_contact(const std::string& account, const std::string& list, const std::string& contact_id) {
        send("DELETE", list_path(account, list) + "/contacts/" + encode(contact_id), std::nullopt, 204);
    }

    ojson set_rule(const std::string& account, const std::string& list, const std::string& rule_text) {
        return send("PUT", list_path(account, list) + "/rule", ojson{{"rule_text", rule_text}}, 200);
    }

    struct RawExport {
        int status = 0;
        std::string etag;
        std::string body;
    };

    RawExport export_raw(const std::string& account, const std::vector<std::string>& lists, CrmlFormat format,
                         const std::optional<std::string>& if_none_match) {
        std::string path = "/v1/accounts/" + encode(account) + "/crml";
        std::string query;
        if (!lists.empty()) {
            std::string joined;
            for (const auto& l : lists) joined += (joined.empty() ? "" : ",") + l;
            query += "lists=" + encode(joined);
        }
        if (format == CrmlFormat::Markup) query += std::string(query.empty() ? "" : "&") + "format=markup";
        if (!query.empty()) path += "?" + query;
        httplib::Headers headers = auth_headers();
        if (if_none_match) headers.emplace("If-None-Match", "\"" + *if_none_match + "\"");
        auto res = http_.Get(path, headers);
        if (!res) throw FetchError("GET " + path + " failed: " + httplib::to_string(res.error()));
        if (res->status != 200 && res->status != 304) throw_service_error(res->status, res->body);
        RawExport out{res->status, detail::unquote_etag(res->get_header_value("ETag")), res->body};
        return out;
    }

    std::vector<BlockerRef> blocked_by(const IdentifierMap& ids) {
        const auto j = send("POST", "/v1/blocked-by", ojson{{"identifiers", detail::identifiers_to_json(ids)}}, 200);
        std::vector<BlockerRef> out;
        for (const auto& b : j.at("blockers")) out.push_back({b.at("account").get<std::string>(), b.at("list").get<std::string>()});
        return out;
    }

    static std::string encode(const std::string& s) {
        static constexpr char hex[] = "0123456789ABCDEF";
        std::string out;
        for (unsigned char c : s) {
            if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
                out += static_cast<char>(c);
            } else {
                out += '%';
                out += hex[c >> 4];
                out += hex[c & 0xf];
            }
        }
        return out;
    }

private:
    httplib::Client http_;
    std::string token_;

    std::string list_path(const std::string& account, const std::string& list) const {
        return "/v1/accounts/" + encode(account) + "/blocklists/" + encode(list);
    }

    httplib::Headers auth_headers() const {
        httplib::Headers h;
        if (!token_.empty()) h.emplace("Authorization", "Bearer " + token_);
        return h;
    }

    [[noreturn]] static void throw_service_error(int status, const std::string& body) {
        std::string code = "HttpError", message = "HTTP " + std::to_string(status), path;
        try {
            const auto j = ojson::parse(body);
            code = j.value("code", code);
            message = j.value("message", message);
            path = j.value("path", std::string());
        } catch (const std::exception&) {
        }
        if (status == 401) throw Unauthorized(message);
        if (status == 404) throw NotFound(message);
        if (status == 409) throw Conflict(message);
        throw Error(code, message, path);
    }

    ojson send(const std::string& method, const std::string& path, const std::optional<ojson>& body, int expect) {
        httplib::Result res{nullptr, httplib::Error::Unknown};
        const auto headers = auth_headers();
        const std::string payload = body ? body->dump() : std::string();
        if (method == "POST")
            res = http_.Post(path, headers, payload, "application/json");
        else if (method == "PUT")
            res = http_.Put(path, headers, payload, "application/json");
        else if (method == "DELETE")
            res = http_.Delete(path, headers);
        else
            res = http_.Get(path, headers);
        if (!res) throw FetchError(method + " " + path + " failed: " + httplib::to_string(res.error()));
        if (res->status != expect) throw_service_error(res->status, res->body);
        if (res->body.empty()) return ojson::object();
        return ojson::parse(res->body);
    }
};

// ProviderEndpoint over REST.
class HttpEndpoint : public ProviderEndpoint {
public:
    HttpEndpoint(std::string host, int port) : host_(std::move(host)), port_(port) {}

    AccessToken issue_token(const std::string& account, const std::string& secret) override {
        return client().issue_token(account, secret);
    }

    FetchResponse fetch_crml(const std::string& token, const std::string& account,
                             const std::vector<std::string>& lists,
                             const std::optional<std::string>& if_none_match) override {
        auto c = client();
        c.set_token(token);
        const auto raw = c.export_raw(account, lists, CrmlFormat::Object, if_none_match);
        FetchResponse out;
        out.digest = raw.etag;
        out.not_modified = raw.status == 304;
        if (!out.not_modified) {
            try {
                out.document = parse_crml(raw.body, CrmlFormat::Object);
            } catch (const Error& e) {
                throw FetchError(std::string("provider sent an invalid document: ") + e.what());
            }
        }
        return out;
    }

    std::vector<BlockerRef> blocked_by(const IdentifierMap& identifiers) override {
        return client().blocked_by(identifiers);
    }

private:
    std::string host_;
    int port_;

    ProviderRestClient client() const { return {host_, port_}; }
};

}  // namespace sbo
