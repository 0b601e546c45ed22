#pragma once

#include "sbo/crml.hpp"
#include "sbo/digest.hpp"
#include "sbo/errors.hpp"
#include "sbo/evaluate.hpp"
#include "sbo/provider.hpp"
#include "sbo/rule.hpp"
#include "sbo/timestamp.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

// Application-side enforcement: picks an integration per provider, fetches
// and merges CRML, keeps a cache under a refresh policy and answers block
// decisions in both directions.

namespace sbo {

enum class IntegrationMethod { SsoDelegated, LdapDelegated, Direct, LoginTimeProvided };

inline std::string_view to_string(IntegrationMethod m) {
    switch (m) {
        case IntegrationMethod::SsoDelegated:      return "SsoDelegated";
        case IntegrationMethod::LdapDelegated:     return "LdapDelegated";
        case IntegrationMethod::Direct:            return "Direct";
        case IntegrationMethod::LoginTimeProvided: return "LoginTimeProvided";
    }
    return "?";
}

inline std::optional<IntegrationMethod> integration_method_from_wire(std::string_view s) {
    for (auto m : {IntegrationMethod::SsoDelegated, IntegrationMethod::LdapDelegated, IntegrationMethod::Direct,
                   IntegrationMethod::LoginTimeProvided})
        if (to_string(m) == s) return m;
    return std::nullopt;
}

struct IntegrationConfig {
    IntegrationMethod method = IntegrationMethod::Direct;
    std::string provider_host;
    std::string account_name;
    std::string credential_ref;
    int priority_rank = 1;  // 1 = highest
    std::vector<std::string> lists;  // empty: every list of the account

    friend bool operator==(const IntegrationConfig&, const IntegrationConfig&) = default;
};

// The available config with the smallest rank. Pure and deterministic.
inline IntegrationConfig resolve_integration(std::span<const IntegrationConfig> configs,
                                             const std::set<IntegrationMethod>& available) {
    const IntegrationConfig* best = nullptr;
    for (const auto& c : configs) {
        if (!available.count(c.method)) continue;
        if (!best || c.priority_rank < best->priority_rank) best = &c;
    }
    if (!best) throw NoIntegrationAvailable("no configured integration method is available");
    return *best;
}

struct RefreshPolicy {
    enum class Type { Periodic, OnLogin, PerRequest, Manual };
    Type type = Type::Manual;
    std::chrono::seconds interval{0};  // Periodic only, > 0

    static RefreshPolicy periodic(std::chrono::seconds s) { return {Type::Periodic, s}; }
    static RefreshPolicy on_login() { return {Type::OnLogin, {}}; }
    static RefreshPolicy per_request() { return {Type::PerRequest, {}}; }
    static RefreshPolicy manual() { return {Type::Manual, {}}; }

    friend bool operator==(const RefreshPolicy&, const RefreshPolicy&) = default;
};

inline std::string_view to_string(RefreshPolicy::Type t) {
    switch (t) {
        case RefreshPolicy::Type::Periodic:   return "Periodic";
        case RefreshPolicy::Type::OnLogin:    return "OnLogin";
        case RefreshPolicy::Type::PerRequest: return "PerRequest";
        case RefreshPolicy::Type::Manual:     return "Manual";
    }
    return "?";
}

enum class Trigger { Timer, Login, Request, Manual };

// Whether `trigger` at `now` calls for a refresh under `policy`, given the
// time of the last refresh attempt.
inline bool should_refresh(const RefreshPolicy& policy, std::optional<Timestamp> last_refresh, Timestamp now,
                           Trigger trigger) {
    switch (policy.type) {
        case RefreshPolicy::Type::Periodic:
            return trigger == Trigger::Timer && (!last_refresh || now - *last_refresh >= policy.interval);
        case RefreshPolicy::Type::OnLogin:    return trigger == Trigger::Login;
        case RefreshPolicy::Type::PerRequest: return trigger == Trigger::Request;
        case RefreshPolicy::Type::Manual:     return trigger == Trigger::Manual;
    }
    return false;
}

// ---- provider access -------------------------------------------------------

struct FetchResponse {
    bool not_modified = false;
    std::string digest;
    std::optional<CRMLDocument> document;
};

// How a client talks to one provider (in-process or over REST).
class ProviderEndpoint {
public:
    virtual ~ProviderEndpoint() = default;
    virtual AccessToken issue_token(const std::string& account, const std::string& secret) = 0;
    virtual FetchResponse fetch_crml(const std::string& token, const std::string& account,
                                     const std::vector<std::string>& lists,
                                     const std::optional<std::string>& if_none_match) = 0;
    virtual std::vector<BlockerRef> blocked_by(const IdentifierMap& identifiers) = 0;
};

// Calls a ProviderService directly. `set_down(true)` simulates an outage.
class LocalEndpoint : public ProviderEndpoint {
public:
    explicit LocalEndpoint(std::shared_ptr<ProviderService> service) : service_(std::move(service)) {}

    void set_down(bool down) { down_ = down; }
    bool down() const { return down_; }
    std::size_t fetches() const { return fetches_; }
    ProviderService& service() { return *service_; }

    AccessToken issue_token(const std::string& account, const std::string& secret) override {
        check_up();
        return service_->issue_token(account, secret);
    }

    FetchResponse fetch_crml(const std::string& token, const std::string& account,
                             const std::vector<std::string>& lists,
                             const std::optional<std::string>& if_none_match) override {
        check_up();
        ++fetches_;
        auto r = service_->export_crml(token, account, lists, if_none_match);
        return {r.not_modified, std::move(r.digest), std::move(r.document)};
    }

    std::vector<BlockerRef> blocked_by(const IdentifierMap& identifiers) override {
        check_up();
        return service_->blocked_by(identifiers);
    }

private:
    std::shared_ptr<ProviderService> service_;
    bool down_ = false;
    std::size_t fetches_ = 0;

    void check_up() const {
        if (down_) throw FetchError("provider " + service_->host_name() + " is unreachable");
    }
};

// Stub SSO/LDAP credential broker: exchanges an application assertion
// (the config's credential_ref) for a provider token using secrets the
// user delegated to it. No OAuth or LDAP wire protocol is involved.
class CredentialBroker {
public:
    explicit CredentialBroker(std::string name) : name_(std::move(name)) {}

    const std::string& name() const { return name_; }
    bool enabled() const { return enabled_; }
    void set_enabled(bool on) { enabled_ = on; }
    void delegate(const std::string& assertion, const std::string& secret) { secrets_[assertion] = secret; }
    bool knows(const std::string& assertion) const { return secrets_.count(assertion) != 0; }
    std::size_t exchanges() const { return exchanges_; }

    std::string exchange(const IntegrationConfig& cfg, ProviderEndpoint& endpoint) {
        if (!enabled_) throw FetchError(name_ + " broker is unavailable");
        const auto it = secrets_.find(cfg.credential_ref);
        if (it == secrets_.end()) throw FetchError(name_ + " broker has no delegation for '" + cfg.credential_ref + "'");
        ++exchanges_;
        return endpoint.issue_token(cfg.account_name, it->second).token;
    }

private:
    std::string name_;
    bool enabled_ = true;
    std::map<std::string, std::string> secrets_;
    std::size_t exchanges_ = 0;
};

// Everything a client can use to reach providers and obtain tokens.
struct IntegrationEnvironment {
    std::map<std::string, std::shared_ptr<ProviderEndpoint>> endpoints;  // by provider host
    std::shared_ptr<CredentialBroker> sso;
    std::shared_ptr<CredentialBroker> ldap;
    std::map<std::string, std::string> direct_credentials;  // credential_ref -> secret
    std::map<std::string, std::string> login_credentials;   // supplied at login time

    bool can_use(const IntegrationConfig& c) const {
        switch (c.method) {
            case IntegrationMethod::SsoDelegated:      return sso && sso->enabled() && sso->knows(c.credential_ref);
            case IntegrationMethod::LdapDelegated:     return ldap && ldap->enabled() && ldap->knows(c.credential_ref);
            case IntegrationMethod::Direct:            return direct_credentials.count(c.credential_ref) != 0;
            case IntegrationMethod::LoginTimeProvided: return login_credentials.count(c.credential_ref) != 0;
        }
        return false;
    }

    std::shared_ptr<ProviderEndpoint> endpoint(const std::string& host) const {
        const auto it = endpoints.find(host);
        if (it == endpoints.end()) throw FetchError("no endpoint for provider '" + host + "'");
        return it->second;
    }

    std::string token_for(const IntegrationConfig& c) const {
        auto ep = endpoint(c.provider_host);
        switch (c.method) {
            case IntegrationMethod::SsoDelegated:
                if (!sso) throw FetchError("no SSO broker configured");
                return sso->exchange(c, *ep);
            case IntegrationMethod::LdapDelegated:
                if (!ldap) throw FetchError("no LDAP broker configured");
                return ldap->exchange(c, *ep);
            case IntegrationMethod::Direct:
                return ep->issue_token(c.account_name, direct_credentials.at(c.credential_ref)).token;
            case IntegrationMethod::LoginTimeProvided:
                return ep->issue_token(c.account_name, login_credentials.at(c.credential_ref)).token;
        }
        throw FetchError("unknown integration method");
    }
};

// ---- block set -------------------------------------------------------------

struct BlockSetEntry {
    std::string provider_host;
    std::string account;
    BlockListRecord list;
    RuleAST rule;

    friend bool operator==(const BlockSetEntry&, const BlockSetEntry&) = default;
};

struct ProviderFetchState {
    std::string account;
    std::optional<Timestamp> fetched_at;  // last successful 200
    std::string digest;
    std::optional<IntegrationMethod> method;  // integration used by the last attempt
    std::optional<std::string> error;         // last attempt's failure

    friend bool operator==(const ProviderFetchState&, const ProviderFetchState&) = default;
};

// Union of every fetched list, keyed by (provider, account, list).
struct BlockSet {
    std::vector<BlockSetEntry> entries;  // sorted by key
    std::map<std::string, ProviderFetchState> providers;
    std::optional<Timestamp> refreshed_at;  // last refresh attempt

    friend bool operator==(const BlockSet&, const BlockSet&) = default;
};

// Content digest of the merged lists and per-provider digests.
inline std::string block_set_digest(const BlockSet& set) {
    std::string input;
    for (const auto& e : set.entries)
        input += e.provider_host + "\n" + e.account + "\n" + detail::list_to_json_string(e.list) + "\n";
    for (const auto& [host, st] : set.providers) input += host + "=" + st.digest + "\n";
    return sha256_hex(input);
}

namespace detail {

inline std::map<std::string, std::vector<IntegrationConfig>> group_by_provider(std::span<const IntegrationConfig> configs) {
    std::map<std::string, std::vector<IntegrationConfig>> out;
    for (const auto& c : configs) out[c.provider_host].push_back(c);
    return out;
}

}  // namespace detail

// Fetches every configured provider and merges the results. A provider that
// fails keeps its previous lists (marked with the error); providers no
// longer configured are dropped. Throws EmptyBlockSetError only when every
// provider failed and nothing was ever fetched.
inline BlockSet fetch_block_set(std::span<const IntegrationConfig> configs, const BlockSet* previous,
                                const IntegrationEnvironment& env, Timestamp now) {
    if (configs.empty()) throw ConfigError("no integrations configured");
    BlockSet next;
    next.refreshed_at = now;
    std::size_t failures = 0;
    const auto groups = detail::group_by_provider(configs);

    for (const auto& [host, group] : groups) {
        const ProviderFetchState* prev_state = nullptr;
        if (previous) {
            const auto it = previous->providers.find(host);
            if (it != previous->providers.end()) prev_state = &it->second;
        }
        const auto keep_previous = [&](const std::string& account) {
            if (!previous) return;
            for (const auto& e : previous->entries)
                if (e.provider_host == host && (account.empty() || e.account == account)) next.entries.push_back(e);
        };

        ProviderFetchState state = prev_state ? *prev_state : ProviderFetchState{};
        try {
            std::set<IntegrationMethod> available;
            for (const auto& c : group)
                if (env.can_use(c)) available.insert(c.method);
            const auto cfg = resolve_integration(group, available);
            state.method = cfg.method;
            const bool same_account = prev_state && prev_state->account == cfg.account_name && prev_state->fetched_at;
            const auto token = env.token_for(cfg);
            auto resp = env.endpoint(host)->fetch_crml(token, cfg.account_name, cfg.lists,
                                                       same_account ? std::optional(prev_state->digest) : std::nullopt);
            state.error.reset();
            if (resp.not_modified) {
                keep_previous(cfg.account_name);
            } else {
                if (!resp.document) throw FetchError("provider returned no document");
                for (auto& l : resp.document->block_lists) {
                    auto rule = parse_rule(l.rule_text);
                    next.entries.push_back({host, cfg.account_name, std::move(l), std::move(rule)});
                }
                state.account = cfg.account_name;
                state.digest = resp.digest;
                state.fetched_at = now;
            }
        } catch (const Error& e) {
            ++failures;
            state.error = e.what();
            keep_previous(state.account);
        }
        next.providers[host] = std::move(state);
    }

    if (failures == groups.size()) {
        bool ever_fetched = false;
        for (const auto& [host, st] : next.providers) ever_fetched = ever_fetched || st.fetched_at.has_value();
        if (!ever_fetched) {
            std::string msg = "every provider failed:";
            for (const auto& [host, st] : next.providers) msg += " " + host + ": " + st.error.value_or("?") + ";";
            throw EmptyBlockSetError(msg);
        }
    }

    std::sort(next.entries.begin(), next.entries.end(), [](const BlockSetEntry& a, const BlockSetEntry& b) {
        return std::tie(a.provider_host, a.account, a.list.name) < std::tie(b.provider_host, b.account, b.list.name);
    });
    return next;
}

struct RefreshOutcome {
    std::shared_ptr<const BlockSet> cache;
    bool refreshed = false;
};

// Refreshes `cache` when the policy asks for it. On EmptyBlockSetError the
// error propagates and the caller keeps whatever it had.
inline RefreshOutcome maybe_refresh(const RefreshPolicy& policy, std::shared_ptr<const BlockSet> cache, Timestamp now,
                                    Trigger trigger, std::span<const IntegrationConfig> configs,
                                    const IntegrationEnvironment& env) {
    const std::optional<Timestamp> last = cache ? cache->refreshed_at : std::nullopt;
    if (!should_refresh(policy, last, now, trigger)) return {std::move(cache), false};
    auto fresh = std::make_shared<const BlockSet>(fetch_block_set(configs, cache.get(), env, now));
    return {std::move(fresh), true};
}

// ---- decisions -------------------------------------------------------------

struct BlockMatch {
    std::string provider_host;
    std::string account;
    std::string list_name;
    std::string contact_id;
    MatchResult result;
};

struct EvaluationFailure {
    std::string provider_host;
    std::string account;
    std::string list_name;
    std::string contact_id;
    std::string message;
};

struct BlockDecision {
    bool blocked = false;  // iff matches is non-empty
    std::vector<BlockMatch> matches;
    std::vector<EvaluationFailure> errors;  // contacts skipped as non-matches
};

// Evaluates every contact of every list against `profile`.
inline BlockDecision is_blocked(const Profile& profile, const BlockSet& set, const Thresholds& thresholds = {}) {
    BlockDecision d;
    for (const auto& e : set.entries) {
        for (const auto& c : e.list.contacts) {
            try {
                auto r = evaluate_rule(e.rule, c, profile, e.list.strictness, thresholds);
                if (r.matched) d.matches.push_back({e.provider_host, e.account, e.list.name, c.contact_id, std::move(r)});
            } catch (const EvalError& err) {
                d.errors.push_back({e.provider_host, e.account, e.list.name, c.contact_id, err.what()});
            }
        }
    }
    d.blocked = !d.matches.empty();
    return d;
}

struct BlockerEntry {
    std::string provider_host;
    std::string account;
    std::string list;
    friend bool operator==(const BlockerEntry&, const BlockerEntry&) = default;
    friend auto operator<=>(const BlockerEntry&, const BlockerEntry&) = default;
};

struct BlockedUserLogin {
    std::vector<BlockerEntry> blockers;  // accounts to hide from the user
    std::vector<std::pair<std::string, std::string>> errors;  // (provider, message)
};

// Union of reverse lookups across providers; failures are reported and the
// remaining providers still answer.
inline BlockedUserLogin on_blocked_user_login(const IdentifierMap& user_identifiers,
                                              const std::vector<std::string>& providers,
                                              const IntegrationEnvironment& env) {
    BlockedUserLogin out;
    std::set<BlockerEntry> seen;
    for (const auto& host : providers) {
        try {
            for (auto& b : env.endpoint(host)->blocked_by(user_identifiers)) seen.insert({host, b.account, b.list});
        } catch (const Error& e) {
            out.errors.emplace_back(host, e.what());
        }
    }
    out.blockers.assign(seen.begin(), seen.end());
    return out;
}

// ---- client configuration file ---------------------------------------------

struct ClientConfig {
    std::vector<IntegrationConfig> providers;
    RefreshPolicy refresh_policy = RefreshPolicy::manual();
    Thresholds thresholds;
};

inline void validate_client_config(const ClientConfig& cfg) {
    if (cfg.providers.empty()) throw ConfigError("at least one provider is required", "providers");
    std::set<int> ranks;
    for (std::size_t i = 0; i < cfg.providers.size(); ++i) {
        const auto& p = cfg.providers[i];
        const auto path = "providers[" + std::to_string(i) + "]";
        if (p.priority_rank < 1) throw ConfigError("priority_rank must be a positive integer", path + ".priority_rank");
        if (!ranks.insert(p.priority_rank).second) throw ConfigError("duplicate priority_rank", path + ".priority_rank");
        if (p.provider_host.empty()) throw ConfigError("provider_host is empty", path + ".provider_host");
    }
    if (cfg.refresh_policy.type == RefreshPolicy::Type::Periodic && cfg.refresh_policy.interval.count() <= 0)
        throw ConfigError("Periodic interval must be > 0", "refresh_policy.interval_seconds");
    if (!cfg.thresholds.is_ordered()) throw ConfigError("thresholds must be ordered", "thresholds");
}

template <typename Json>
RefreshPolicy refresh_policy_from_json(const Json& j, const std::string& path) {
    if (!j.is_object()) throw ConfigError("expected an object", path);
    const auto type = j.value("type", std::string());
    if (type == "Periodic") {
        if (!j.contains("interval_seconds") || !j["interval_seconds"].is_number_integer())
            throw ConfigError("Periodic requires integer interval_seconds", path + ".interval_seconds");
        return RefreshPolicy::periodic(std::chrono::seconds(j["interval_seconds"].template get<long long>()));
    }
    if (type == "OnLogin") return RefreshPolicy::on_login();
    if (type == "PerRequest") return RefreshPolicy::per_request();
    if (type == "Manual") return RefreshPolicy::manual();
    throw ConfigError("unknown refresh policy type '" + type + "'", path + ".type");
}

template <typename Json>
Thresholds thresholds_from_json(const Json& j, const std::string& path) {
    Thresholds t;
    if (!j.is_object()) throw ConfigError("expected an object", path);
    for (auto s : kAllStrictness) {
        const std::string name(to_string(s));
        if (j.contains("text") && j["text"].contains(name))
            t.text[static_cast<std::size_t>(s)] = j["text"][name].template get<double>();
        if (j.contains("image") && j["image"].contains(name))
            t.image[static_cast<std::size_t>(s)] = j["image"][name].template get<int>();
    }
    return t;
}

template <typename Json>
IntegrationConfig integration_from_json(const Json& j, const std::string& path) {
    if (!j.is_object()) throw ConfigError("expected an object", path);
    IntegrationConfig c;
    const auto method = j.value("method", std::string());
    const auto m = integration_method_from_wire(method);
    if (!m) throw ConfigError("unknown integration method '" + method + "'", path + ".method");
    c.method = *m;
    c.provider_host = j.value("provider_host", std::string());
    c.account_name = j.value("account_name", std::string());
    c.credential_ref = j.value("credential_ref", std::string());
    if (!j.contains("priority_rank") || !j["priority_rank"].is_number_integer())
        throw ConfigError("priority_rank must be an integer", path + ".priority_rank");
    c.priority_rank = j["priority_rank"].template get<int>();
    if (j.contains("lists"))
        for (const auto& l : j["lists"]) c.lists.push_back(l.template get<std::string>());
    return c;
}

template <typename Json>
ClientConfig client_config_from_json(const Json& j) {
    ClientConfig cfg;
    if (!j.is_object() || !j.contains("providers") || !j["providers"].is_array())
        throw ConfigError("missing providers array", "providers");
    for (std::size_t i = 0; i < j["providers"].size(); ++i)
        cfg.providers.push_back(integration_from_json(j["providers"][i], "providers[" + std::to_string(i) + "]"));
    if (j.contains("refresh_policy")) cfg.refresh_policy = refresh_policy_from_json(j["refresh_policy"], "refresh_policy");
    if (j.contains("thresholds")) cfg.thresholds = thresholds_from_json(j["thresholds"], "thresholds");
    validate_client_config(cfg);
    return cfg;
}

// ---- client ----------------------------------------------------------------

// Holds the published block set. Refreshes build a complete new set and
// swap it in under a lock, so readers see either the old or the new set.
class EnforcementClient {
public:
    EnforcementClient(ClientConfig config, IntegrationEnvironment env)
        : config_(std::move(config)), env_(std::move(env)) {
        validate_client_config(config_);
    }

    const ClientConfig& config() const { return config_; }
    IntegrationEnvironment& environment() { return env_; }

    std::shared_ptr<const BlockSet> block_set() const {
        std::lock_guard lock(mutex_);
        return cache_;
    }

    // Unconditional fetch, e.g. at application start.
    void refresh_now(Timestamp now) {
        auto fresh = std::make_shared<const BlockSet>(fetch_block_set(config_.providers, block_set().get(), env_, now));
        publish(std::move(fresh));
    }

    // Returns true when a refresh happened.
    bool on_trigger(Trigger trigger, Timestamp now) {
        auto out = maybe_refresh(config_.refresh_policy, block_set(), now, trigger, config_.providers, env_);
        if (out.refreshed) publish(std::move(out.cache));
        return out.refreshed;
    }

    BlockDecision check(const Profile& profile) const {
        const auto set = block_set();
        if (!set) return {};
        return is_blocked(profile, *set, config_.thresholds);
    }

    BlockedUserLogin blocked_user_login(const IdentifierMap& ids) const {
        std::vector<std::string> hosts;
        for (const auto& p : config_.providers)
            if (std::find(hosts.begin(), hosts.end(), p.provider_host) == hosts.end()) hosts.push_back(p.provider_host);
        return on_blocked_user_login(ids, hosts, env_);
    }

    // Drops every integration for `host` along with its cached lists.
    void remove_provider(const std::string& host) {
        std::erase_if(config_.providers, [&](const IntegrationConfig& c) { return c.provider_host == host; });
        const auto current = block_set();
        if (!current) return;
        auto pruned = std::make_shared<BlockSet>(*current);
        std::erase_if(pruned->entries, [&](const BlockSetEntry& e) { return e.provider_host == host; });
        pruned->providers.erase(host);
        publish(std::move(pruned));
    }

    void add_integration(IntegrationConfig c) {
        auto next = config_;
        next.providers.push_back(std::move(c));
        validate_client_config(next);
        config_ = std::move(next);
    }

private:
    ClientConfig config_;
    IntegrationEnvironment env_;
    mutable std::mutex mutex_;
    std::shared_ptr<const BlockSet> cache_;

    void publish(std::shared_ptr<const BlockSet> set) {
        std::lock_guard lock(mutex_);
        cache_ = std::move(set);
    }
};

}  // namespace sbo
