#pragma once

#include "sbo/client.hpp"
#include "sbo/crml.hpp"
#include "sbo/errors.hpp"
#include "sbo/provider.hpp"
#include "sbo/similarity.hpp"
#include "sbo/timestamp.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

// End-to-end scenario runner. A scenario file (object format) spawns
// in-process providers, seeds accounts and lists, builds simulated
// applications and then drives a simulated clock through a timeline of
// events, checking each event's expectations.
//
// Event types: start, block, unblock, set_rule, tick, request, login,
// logout, blocked_user_login, manual_refresh, provider_down, provider_up,
// broker, remove_integration, expect_integration.

namespace sbo {

struct ScenarioReport {
    bool pass = false;
    nlohmann::ordered_json report;
};

namespace detail {

using ojson = nlohmann::ordered_json;

// Identifier maps in scenarios may give ProfileImage as an 8x8 grayscale
// grid ({"pixels": [[...], ...]}); it is reduced to its average hash.
inline IdentifierMap scenario_identifiers(const ojson& j, const std::string& path) {
    if (!j.is_object()) throw ScenarioError("identifiers must be an object", path);
    ojson copy = j;
    if (copy.contains("ProfileImage") && copy["ProfileImage"].is_object() && copy["ProfileImage"].contains("pixels")) {
        const auto& px = copy["ProfileImage"]["pixels"];
        GrayGrid8 grid{};
        if (!px.is_array() || px.size() != 8) throw ScenarioError("pixels must be 8 rows", path + ".ProfileImage");
        for (std::size_t r = 0; r < 8; ++r) {
            if (!px[r].is_array() || px[r].size() != 8) throw ScenarioError("pixels rows must have 8 values", path + ".ProfileImage");
            for (std::size_t c = 0; c < 8; ++c) {
                const int v = px[r][c].get<int>();
                if (v < 0 || v > 255) throw ScenarioError("pixel out of range", path + ".ProfileImage");
                grid[r][c] = static_cast<std::uint8_t>(v);
            }
        }
        copy["ProfileImage"] = ojson{{"phash64", to_hex(average_hash(grid))}};
    }
    try {
        return identifiers_from_json(copy, path);
    } catch (const SchemaError& e) {
        throw ScenarioError(e.what(), e.path());
    }
}

inline ojson trace_to_json(const MatchResult& r) {
    ojson trace = ojson::array();
    for (const auto& p : r.trace) {
        ojson o{{"kind", std::string(to_string(p.kind))}, {"op", std::string(to_string(p.op))}};
        o["score"] = p.score ? ojson(*p.score) : ojson(nullptr);
        o["threshold"] = p.threshold ? ojson(*p.threshold) : ojson(nullptr);
        o["verdict"] = p.verdict;
        if (!p.note.empty()) o["note"] = p.note;
        trace.push_back(std::move(o));
    }
    return trace;
}

inline ojson decision_to_json(const BlockDecision& d) {
    ojson matches = ojson::array();
    for (const auto& m : d.matches)
        matches.push_back(ojson{{"provider", m.provider_host},
                                {"account", m.account},
                                {"list", m.list_name},
                                {"contact_id", m.contact_id},
                                {"trace", trace_to_json(m.result)}});
    ojson out{{"blocked", d.blocked}, {"matches", std::move(matches)}};
    if (!d.errors.empty()) {
        ojson errors = ojson::array();
        for (const auto& e : d.errors)
            errors.push_back(ojson{{"provider", e.provider_host},
                                   {"account", e.account},
                                   {"list", e.list_name},
                                   {"contact_id", e.contact_id},
                                   {"message", e.message}});
        out["errors"] = std::move(errors);
    }
    return out;
}

// Every contact's evaluation, matched or not; attached to failed checks.
inline ojson full_traces(const Profile& profile, const BlockSet& set, const Thresholds& thresholds) {
    ojson out = ojson::array();
    for (const auto& e : set.entries) {
        for (const auto& c : e.list.contacts) {
            ojson item{{"provider", e.provider_host}, {"account", e.account}, {"list", e.list.name}, {"contact_id", c.contact_id}};
            try {
                const auto r = evaluate_rule(e.rule, c, profile, e.list.strictness, thresholds);
                item["matched"] = r.matched;
                item["trace"] = trace_to_json(r);
            } catch (const Error& err) {
                item["matched"] = false;
                item["error"] = err.what();
            }
            out.push_back(std::move(item));
        }
    }
    return out;
}

class ScenarioRunner {
public:
    explicit ScenarioRunner(const ojson& scenario) : s_(scenario) {}

    ScenarioReport run() {
        setup();
        ojson events = ojson::array();
        bool pass = true;
        const auto& evs = s_.at("events");
        for (std::size_t i = 0; i < evs.size(); ++i) {
            auto outcome = run_event(evs[i], i);
            pass = pass && outcome.value("pass", true);
            events.push_back(std::move(outcome));
        }

        ojson propagation = ojson::array();
        for (const auto& b : blocks_) {
            for (const auto& [app_name, app] : apps_) {
                ojson item{{"block", b.label}, {"app", app_name}};
                const auto it = b.first_blocked.find(app_name);
                item["latency_seconds"] = it == b.first_blocked.end() ? ojson(nullptr) : ojson(it->second);
                propagation.push_back(std::move(item));
            }
        }

        ScenarioReport rep;
        rep.pass = pass;
        rep.report = ojson{{"scenario", s_.value("name", std::string())},
                           {"pass", pass},
                           {"events", std::move(events)},
                           {"propagation", std::move(propagation)}};
        return rep;
    }

private:
    struct App {
        std::unique_ptr<EnforcementClient> client;
    };
    struct BlockRecord {
        std::string label;
        std::string provider;
        std::string account;
        std::string list;
        std::string contact_id;
        long long at = 0;
        bool removed = false;
        std::map<std::string, long long> first_blocked;  // app -> latency
    };

    const ojson& s_;
    Timestamp start_{};
    long long t_ = 0;
    std::map<std::string, std::shared_ptr<LocalEndpoint>> providers_;
    std::map<std::string, std::map<std::string, std::string>> secrets_;  // provider -> account -> secret
    std::map<std::string, App> apps_;
    std::vector<BlockRecord> blocks_;

    Timestamp now() const { return start_ + std::chrono::seconds(t_); }

    static const ojson& need(const ojson& j, const char* key, const std::string& path) {
        if (!j.is_object() || !j.contains(key)) throw ScenarioError(std::string("missing '") + key + "'", path);
        return j[key];
    }
    static std::string need_string(const ojson& j, const char* key, const std::string& path) {
        const auto& v = need(j, key, path);
        if (!v.is_string()) throw ScenarioError(std::string("'") + key + "' must be a string", path + "." + key);
        return v.get<std::string>();
    }

    std::shared_ptr<LocalEndpoint> provider(const std::string& host, const std::string& path) {
        const auto it = providers_.find(host);
        if (it == providers_.end()) throw ScenarioError("unknown provider '" + host + "'", path);
        return it->second;
    }

    App& app(const std::string& name, const std::string& path) {
        const auto it = apps_.find(name);
        if (it == apps_.end()) throw ScenarioError("unknown application '" + name + "'", path);
        return it->second;
    }

    std::string token_for(const std::string& host, const std::string& account, const std::string& path) {
        const auto p = secrets_.find(host);
        if (p == secrets_.end() || !p->second.count(account))
            throw ScenarioError("unknown account '" + account + "' at '" + host + "'", path);
        return provider(host, path)->service().issue_token(account, p->second.at(account)).token;
    }

    void setup() {
        if (!s_.is_object()) throw ScenarioError("scenario must be an object");
        const auto start = parse_utc(s_.value("start_time", std::string("2025-01-01T00:00:00Z")));
        if (!start) throw ScenarioError("bad start_time", "start_time");
        start_ = *start;
        const auto seed = s_.value("seed", std::uint64_t{1});

        const auto& provs = need(s_, "providers", "");
        for (std::size_t i = 0; i < provs.size(); ++i) {
            const std::string path = "providers[" + std::to_string(i) + "]";
            ProviderConfig cfg;
            cfg.host_name = need_string(provs[i], "host", path);
            cfg.rng_seed = seed + i;
            if (provs[i].contains("thresholds")) cfg.thresholds = thresholds_from_json(provs[i]["thresholds"], path + ".thresholds");
            if (providers_.count(cfg.host_name)) throw ScenarioError("duplicate provider", path);
            auto svc = std::make_shared<ProviderService>(cfg, [this] { return now(); });
            providers_[cfg.host_name] = std::make_shared<LocalEndpoint>(std::move(svc));
        }

        if (s_.contains("accounts")) {
            const auto& accs = s_["accounts"];
            for (std::size_t i = 0; i < accs.size(); ++i) {
                const std::string path = "accounts[" + std::to_string(i) + "]";
                const auto host = need_string(accs[i], "provider", path);
                const auto name = need_string(accs[i], "account_name", path);
                const auto secret = need_string(accs[i], "secret", path);
                auto& svc = provider(host, path + ".provider")->service();
                svc.create_account(name, secret);
                secrets_[host][name] = secret;
                if (!accs[i].contains("lists")) continue;
                const auto token = svc.issue_token(name, secret).token;
                for (std::size_t j = 0; j < accs[i]["lists"].size(); ++j) {
                    const auto& jl = accs[i]["lists"][j];
                    const std::string lpath = path + ".lists[" + std::to_string(j) + "]";
                    const auto st = strictness_from_wire(jl.value("strictness", std::string("Medium")));
                    if (!st) throw ScenarioError("unknown strictness", lpath + ".strictness");
                    std::optional<std::string> rule;
                    if (jl.contains("rule_text")) rule = jl["rule_text"].get<std::string>();
                    const auto list_name = need_string(jl, "name", lpath);
                    svc.create_block_list(token, name, list_name, *st, rule);
                    if (jl.contains("contacts"))
                        for (std::size_t k = 0; k < jl["contacts"].size(); ++k)
                            svc.add_contact(token, name, list_name,
                                            scenario_identifiers(jl["contacts"][k], lpath + ".contacts[" + std::to_string(k) + "]"));
                }
            }
        }

        const auto& apps = need(s_, "applications", "");
        for (std::size_t i = 0; i < apps.size(); ++i) {
            const std::string path = "applications[" + std::to_string(i) + "]";
            const auto& ja = apps[i];
            const auto name = need_string(ja, "name", path);
            if (apps_.count(name)) throw ScenarioError("duplicate application", path);
            ClientConfig cfg;
            try {
                ojson client_json{{"providers", need(ja, "integrations", path)}};
                if (ja.contains("refresh_policy")) client_json["refresh_policy"] = ja["refresh_policy"];
                if (ja.contains("thresholds")) client_json["thresholds"] = ja["thresholds"];
                cfg = client_config_from_json(client_json);
            } catch (const ConfigError& e) {
                throw ScenarioError(e.what(), path + "." + e.path());
            }
            IntegrationEnvironment env;
            for (const auto& c : cfg.providers) env.endpoints[c.provider_host] = provider(c.provider_host, path + ".integrations");
            if (ja.contains("direct_credentials"))
                for (auto it = ja["direct_credentials"].begin(); it != ja["direct_credentials"].end(); ++it)
                    env.direct_credentials[it.key()] = it.value().get<std::string>();
            env.sso = make_broker("sso", ja, "sso_broker");
            env.ldap = make_broker("ldap", ja, "ldap_broker");
            apps_[name].client = std::make_unique<EnforcementClient>(std::move(cfg), std::move(env));
        }

        // Timeline checks up front so a bad file fails before anything runs.
        const auto& evs = need(s_, "events", "");
        long long last = 0;
        for (std::size_t i = 0; i < evs.size(); ++i) {
            const std::string path = "events[" + std::to_string(i) + "]";
            if (!evs[i].is_object() || !evs[i].contains("t") || !evs[i]["t"].is_number_integer())
                throw ScenarioError("event needs an integer 't'", path);
            const auto t = evs[i]["t"].get<long long>();
            if (t < last) throw ScenarioError("event timestamps must be non-decreasing", path + ".t");
            last = t;
            if (evs[i].contains("app") && !apps_.count(evs[i]["app"].get<std::string>()))
                throw ScenarioError("unknown application '" + evs[i]["app"].get<std::string>() + "'", path + ".app");
            if (evs[i].contains("provider") && !providers_.count(evs[i]["provider"].get<std::string>()))
                throw ScenarioError("unknown provider '" + evs[i]["provider"].get<std::string>() + "'", path + ".provider");
        }
    }

    static std::shared_ptr<CredentialBroker> make_broker(const std::string& name, const ojson& app, const char* key) {
        if (!app.contains(key)) return nullptr;
        auto b = std::make_shared<CredentialBroker>(name);
        const auto& j = app[key];
        b->set_enabled(j.value("enabled", true));
        if (j.contains("delegations"))
            for (auto it = j["delegations"].begin(); it != j["delegations"].end(); ++it)
                b->delegate(it.key(), it.value().get<std::string>());
        return b;
    }

    template <typename Fn>
    static void record_refresh(ojson& out, Fn&& fn) {
        try {
            out["refreshed"] = fn();
        } catch (const Error& e) {
            out["refreshed"] = false;
            out["error"] = ojson{{"code", e.code()}, {"message", e.what()}};
        }
    }

    void expect_equal(ojson& out, const char* what, const ojson& expected, const ojson& actual) {
        if (expected == actual) return;
        out["pass"] = false;
        out["failures"].push_back(ojson{{"expectation", what}, {"expected", expected}, {"actual", actual}});
    }

    ojson run_event(const ojson& ev, std::size_t index) {
        const std::string path = "events[" + std::to_string(index) + "]";
        t_ = ev["t"].get<long long>();
        const auto type = need_string(ev, "type", path);
        ojson out{{"index", index}, {"t", t_}, {"type", type}};
        if (ev.contains("app")) out["app"] = ev["app"];
        out["pass"] = true;
        out["failures"] = ojson::array();
        const ojson expect = ev.value("expect", ojson::object());

        if (type == "start") {
            auto& a = app(need_string(ev, "app", path), path);
            record_refresh(out, [&] {
                a.client->refresh_now(now());
                return true;
            });
        } else if (type == "block") {
            const auto host = need_string(ev, "provider", path);
            const auto account = need_string(ev, "account", path);
            const auto list = need_string(ev, "list", path);
            auto& svc = provider(host, path)->service();
            const auto c = svc.add_contact(token_for(host, account, path), account, list,
                                           scenario_identifiers(need(ev, "identifiers", path), path + ".identifiers"));
            BlockRecord b{ev.value("label", c.contact_id), host, account, list, c.contact_id, t_, false, {}};
            out["contact_id"] = c.contact_id;
            blocks_.push_back(std::move(b));
        } else if (type == "unblock") {
            const auto label = need_string(ev, "label", path);
            BlockRecord* b = nullptr;
            for (auto& r : blocks_)
                if (r.label == label) b = &r;
            if (!b) throw ScenarioError("unknown block label '" + label + "'", path + ".label");
            provider(b->provider, path)->service().remove_contact(token_for(b->provider, b->account, path), b->account,
                                                                 b->list, b->contact_id);
            b->removed = true;
        } else if (type == "set_rule") {
            const auto host = need_string(ev, "provider", path);
            const auto account = need_string(ev, "account", path);
            provider(host, path)->service().set_rule(token_for(host, account, path), account,
                                                     need_string(ev, "list", path), need_string(ev, "rule_text", path));
        } else if (type == "tick") {
            ojson refreshed = ojson::object();
            for (auto& [name, a] : apps_) {
                if (ev.contains("app") && ev["app"] != name) continue;
                ojson r;
                record_refresh(r, [&] { return a.client->on_trigger(Trigger::Timer, now()); });
                refreshed[name] = r["refreshed"];
            }
            out["refreshed"] = std::move(refreshed);
        } else if (type == "request") {
            const auto app_name = need_string(ev, "app", path);
            auto& a = app(app_name, path);
            record_refresh(out, [&] { return a.client->on_trigger(Trigger::Request, now()); });
            const auto& jp = need(ev, "profile", path);
            Profile p{jp.value("profile_id", std::string()), scenario_identifiers(need(jp, "identifiers", path + ".profile"),
                                                                                 path + ".profile.identifiers")};
            const auto d = a.client->check(p);
            out["decision"] = decision_to_json(d);
            for (const auto& m : d.matches)
                for (auto& b : blocks_)
                    if (!b.removed && b.provider == m.provider_host && b.account == m.account && b.list == m.list_name &&
                        b.contact_id == m.contact_id && !b.first_blocked.count(app_name))
                        b.first_blocked[app_name] = t_ - b.at;
            if (expect.contains("blocked")) expect_equal(out, "blocked", expect["blocked"], d.blocked);
            if (expect.contains("matches")) expect_equal(out, "matches", expect["matches"], d.matches.size());
            if (!out["pass"].get<bool>()) {
                const auto set = a.client->block_set();
                out["traces"] = set ? full_traces(p, *set, a.client->config().thresholds) : ojson::array();
            }
        } else if (type == "login") {
            auto& a = app(need_string(ev, "app", path), path);
            if (ev.contains("credentials"))
                for (auto it = ev["credentials"].begin(); it != ev["credentials"].end(); ++it)
                    a.client->environment().login_credentials[it.key()] = it.value().get<std::string>();
            record_refresh(out, [&] { return a.client->on_trigger(Trigger::Login, now()); });
        } else if (type == "logout") {
            app(need_string(ev, "app", path), path).client->environment().login_credentials.clear();
        } else if (type == "manual_refresh") {
            auto& a = app(need_string(ev, "app", path), path);
            record_refresh(out, [&] { return a.client->on_trigger(Trigger::Manual, now()); });
        } else if (type == "blocked_user_login") {
            auto& a = app(need_string(ev, "app", path), path);
            const auto result = a.client->blocked_user_login(scenario_identifiers(need(ev, "user", path), path + ".user"));
            ojson hidden = ojson::array();
            for (const auto& b : result.blockers)
                hidden.push_back(ojson{{"provider", b.provider_host}, {"account", b.account}, {"list", b.list}});
            out["hidden"] = hidden;
            if (!result.errors.empty()) {
                ojson errors = ojson::array();
                for (const auto& [host, msg] : result.errors) errors.push_back(ojson{{"provider", host}, {"message", msg}});
                out["errors"] = errors;
            }
            if (expect.contains("hidden")) expect_equal(out, "hidden", expect["hidden"], hidden);
        } else if (type == "provider_down" || type == "provider_up") {
            provider(need_string(ev, "provider", path), path)->set_down(type == "provider_down");
        } else if (type == "broker") {
            auto& env = app(need_string(ev, "app", path), path).client->environment();
            const auto which = need_string(ev, "broker", path);
            auto& broker = which == "sso" ? env.sso : which == "ldap" ? env.ldap : throw ScenarioError("broker must be sso or ldap", path + ".broker");
            if (!broker) throw ScenarioError("application has no " + which + " broker", path);
            broker->set_enabled(ev.value("enabled", true));
        } else if (type == "remove_integration") {
            app(need_string(ev, "app", path), path).client->remove_provider(need_string(ev, "provider_host", path));
        } else if (type == "expect_integration") {
            auto& a = app(need_string(ev, "app", path), path);
            const auto host = need_string(ev, "provider_host", path);
            const auto set = a.client->block_set();
            ojson method = nullptr;
            if (set) {
                const auto it = set->providers.find(host);
                if (it != set->providers.end() && it->second.method) method = std::string(to_string(*it->second.method));
            }
            out["method"] = method;
            if (expect.contains("method")) expect_equal(out, "method", expect["method"], method);
        } else {
            throw ScenarioError("unknown event type '" + type + "'", path + ".type");
        }
        if (out["failures"].empty()) out.erase("failures");
        return out;
    }
};

}  // namespace detail

// Runs a parsed scenario. Deterministic for a given file: tokens come from
// seeded generators and every timestamp from the simulated clock.
inline ScenarioReport run_scenario(const nlohmann::ordered_json& scenario) {
    try {
        return detail::ScenarioRunner(scenario).run();
    } catch (const ScenarioError&) {
        throw;
    } catch (const nlohmann::ordered_json::exception& e) {
        throw ScenarioError(std::string("malformed scenario: ") + e.what());
    }
}

inline ScenarioReport run_scenario_file(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw ScenarioError("cannot open scenario file " + file.string());
    std::stringstream buf;
    buf << in.rdbuf();
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(buf.str());
    } catch (const nlohmann::ordered_json::parse_error& e) {
        throw ScenarioError(std::string("scenario is not valid JSON: ") + e.what());
    }
    return run_scenario(j);
}

}  // namespace sbo
