#pragma once

#include "sbo/crml.hpp"
#include "sbo/digest.hpp"
#include "sbo/errors.hpp"
#include "sbo/evaluate.hpp"
#include "sbo/identifiers.hpp"
#include "sbo/journal.hpp"
#include "sbo/normalize.hpp"
#include "sbo/rule.hpp"
#include "sbo/timestamp.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <shared_mutex>
#include <string>
#include <utility>
#include <vector>

namespace sbo {

using Clock = std::function<Timestamp()>;

inline Timestamp system_now() {
    return std::chrono::time_point_cast<std::chrono::seconds>(std::chrono::system_clock::now());
}

struct ProviderConfig {
    std::string host_name = "sbo.local";
    std::filesystem::path data_path;  // empty: in-memory only
    std::chrono::seconds token_ttl{3600};
    Thresholds thresholds;
    std::size_t snapshot_every = 1000;  // log records between compactions; 0 disables
    bool fsync = false;
    std::optional<std::uint64_t> rng_seed;  // fixed seed for reproducible tokens
};

struct Account {
    std::string account_name;
    std::string salt;
    std::string credential_hash;
};

struct AccessToken {
    std::string token;
    std::string account_name;
    Timestamp expires_at;
};

// (account, list) pair reported by reverse lookups.
struct BlockerRef {
    std::string account;
    std::string list;
    friend bool operator==(const BlockerRef&, const BlockerRef&) = default;
    friend auto operator<=>(const BlockerRef&, const BlockerRef&) = default;
};

// (kind, normalized value) -> lists holding a contact with that value, with
// the number of such contacts per list.
using ReverseIndexKey = std::pair<IdentifierKind, std::string>;
using ReverseIndex = std::map<ReverseIndexKey, std::map<BlockerRef, std::size_t>>;

struct ExportResult {
    bool not_modified = false;
    std::string digest;
    std::optional<CRMLDocument> document;  // absent when not_modified
};

namespace detail {

inline std::string index_value(const IdentifierValue& v) {
    if (const auto* text = std::get_if<std::string>(&v)) return *text;
    return "phash64:" + to_hex(std::get<ImageHash>(v));
}

struct StoredList {
    BlockListRecord record;
    RuleAST rule;
    std::uint64_t next_contact = 1;
    std::uint64_t revision = 0;
    Timestamp updated_at{};
};

struct StoredAccount {
    Account account;
    std::vector<StoredList> lists;  // creation order

    StoredList* find(const std::string& name) {
        for (auto& l : lists)
            if (l.record.name == name) return &l;
        return nullptr;
    }
    const StoredList* find(const std::string& name) const {
        for (const auto& l : lists)
            if (l.record.name == name) return &l;
        return nullptr;
    }
};

inline std::string format_contact_id(std::uint64_t n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "c-%03llu", static_cast<unsigned long long>(n));
    return buf;
}

}  // namespace detail

// The SBO provider: accounts, block lists, rules, CRML export and reverse
// lookup. All mutations go through one writer lock and are appended to the
// journal before they are applied; readers take a shared lock and therefore
// only ever observe committed state.
class ProviderService {
public:
    using json = nlohmann::ordered_json;

    explicit ProviderService(ProviderConfig config, Clock clock = system_now)
        : config_(std::move(config)), clock_(std::move(clock)) {
        if (!config_.thresholds.is_ordered()) throw ConfigError("thresholds must be ordered Strict >= Medium >= Lenient");
        if (config_.rng_seed)
            rng_.seed(*config_.rng_seed);
        else
            rng_.seed(std::random_device{}() ^ (static_cast<std::uint64_t>(std::random_device{}()) << 32));
        if (!config_.data_path.empty()) {
            journal_ = std::make_unique<Journal>(config_.data_path, config_.fsync);
            recover();
        }
    }

    const ProviderConfig& config() const { return config_; }
    const std::string& host_name() const { return config_.host_name; }

    Account create_account(const std::string& account_name, const std::string& secret) {
        if (account_name.empty()) throw ValidationError("account_name is empty", "account_name");
        if (secret.empty()) throw ValidationError("secret is empty", "secret");
        std::unique_lock lock(mutex_);
        if (accounts_.count(account_name)) throw Conflict("account '" + account_name + "' already exists");
        const std::string salt = random_hex(1);
        json rec{{"op", "create_account"},
                 {"account", account_name},
                 {"salt", salt},
                 {"credential_hash", hash_secret(salt, secret)},
                 {"at", format_utc(clock_())}};
        commit(rec);
        return accounts_.at(account_name).account;
    }

    AccessToken issue_token(const std::string& account_name, const std::string& secret) {
        {
            std::shared_lock lock(mutex_);
            const auto it = accounts_.find(account_name);
            if (it == accounts_.end() ||
                hash_secret(it->second.account.salt, secret) != it->second.account.credential_hash)
                throw Unauthorized("bad account name or secret");
        }
        std::lock_guard tl(token_mutex_);
        AccessToken t{random_hex(2), account_name, clock_() + config_.token_ttl};
        tokens_[t.token] = t;
        return t;
    }

    BlockListRecord create_block_list(const std::string& token, const std::string& account,
                                      const std::string& name, Strictness strictness,
                                      const std::optional<std::string>& rule_text = std::nullopt) {
        authorize(token, account);
        if (name.empty()) throw ValidationError("list name is empty", "name");
        if (name.find('/') != std::string::npos) throw ValidationError("list name contains '/'", "name");
        const std::string text = rule_text ? *rule_text : render_rule(default_rule());
        check_rule(name, text);
        std::unique_lock lock(mutex_);
        auto& acc = account_ref(account);
        if (acc.find(name)) throw Conflict("list '" + name + "' already exists");
        commit(json{{"op", "create_list"},
                    {"account", account},
                    {"list", name},
                    {"strictness", std::string(to_string(strictness))},
                    {"rule_text", text},
                    {"at", format_utc(clock_())}});
        return acc.find(name)->record;
    }

    ContactRecord add_contact(const std::string& token, const std::string& account,
                              const std::string& list_name, const IdentifierMap& identifiers) {
        authorize(token, account);
        if (identifiers.empty()) throw ValidationError("identifiers are empty", "identifiers");
        IdentifierMap normalized;
        for (const auto& [kind, value] : identifiers) {
            if (!value_shape_matches(kind, value))
                throw ValidationError(std::string(to_string(kind)) + " has the wrong value type",
                                      "identifiers." + std::string(to_string(kind)));
            try {
                if (const auto* text = std::get_if<std::string>(&value))
                    normalized.emplace(kind, normalize_identifier(kind, *text));
                else
                    normalized.emplace(kind, value);
            } catch (const NormalizeError& e) {
                throw ValidationError(e.what(), "identifiers." + std::string(to_string(kind)));
            }
        }
        std::unique_lock lock(mutex_);
        auto& list = list_ref(account, list_name);
        const std::string id = detail::format_contact_id(list.next_contact);
        commit(json{{"op", "add_contact"},
                    {"account", account},
                    {"list", list_name},
                    {"contact_id", id},
                    {"identifiers", detail::identifiers_to_json(normalized)},
                    {"at", format_utc(clock_())}});
        return list.record.contacts.back();
    }

    void remove_contact(const std::string& token, const std::string& account,
                        const std::string& list_name, const std::string& contact_id) {
        authorize(token, account);
        std::unique_lock lock(mutex_);
        auto& list = list_ref(account, list_name);
        bool found = false;
        for (const auto& c : list.record.contacts) found = found || c.contact_id == contact_id;
        if (!found) throw NotFound("contact '" + contact_id + "' not found in list '" + list_name + "'");
        commit(json{{"op", "remove_contact"},
                    {"account", account},
                    {"list", list_name},
                    {"contact_id", contact_id},
                    {"at", format_utc(clock_())}});
    }

    BlockListRecord set_rule(const std::string& token, const std::string& account,
                             const std::string& list_name, const std::string& rule_text) {
        authorize(token, account);
        check_rule(list_name, rule_text);
        std::unique_lock lock(mutex_);
        auto& list = list_ref(account, list_name);
        commit(json{{"op", "set_rule"},
                    {"account", account},
                    {"list", list_name},
                    {"rule_text", rule_text},
                    {"at", format_utc(clock_())}});
        return list.record;
    }

    // Exports the named lists (all when `list_names` is empty). When
    // `if_none_match` equals the current digest the document is omitted.
    ExportResult export_crml(const std::string& token, const std::string& account,
                             const std::vector<std::string>& list_names = {},
                             const std::optional<std::string>& if_none_match = std::nullopt) const {
        authorize(token, account);
        std::shared_lock lock(mutex_);
        const auto& acc = account_ref(account);
        std::vector<const detail::StoredList*> chosen;
        if (list_names.empty()) {
            for (const auto& l : acc.lists) chosen.push_back(&l);
        } else {
            for (const auto& name : list_names) {
                const auto* l = acc.find(name);
                if (!l) throw NotFound("list '" + name + "' not found");
                chosen.push_back(l);
            }
        }

        CRMLDocument doc;
        doc.provider = config_.host_name;
        doc.account = account;
        doc.issued_at = clock_();
        std::string digest_input = config_.host_name + "\n" + account + "\n";
        for (const auto* l : chosen) {
            doc.block_lists.push_back(l->record);
            digest_input += std::to_string(l->revision) + "\n" + detail::list_to_json_string(l->record) + "\n";
        }
        ExportResult out;
        out.digest = sha256_hex(digest_input);
        if (if_none_match && *if_none_match == out.digest) {
            out.not_modified = true;
            return out;
        }
        out.document = std::move(doc);
        return out;
    }

    // Every (account, list) whose rule matches some contact when the
    // submitted identifiers are taken as the profile. Unauthenticated;
    // reveals only names.
    std::vector<BlockerRef> blocked_by(const IdentifierMap& identifiers) const {
        for (const auto& [kind, value] : identifiers)
            if (!value_shape_matches(kind, value))
                throw ValidationError(std::string(to_string(kind)) + " has the wrong value type",
                                      "identifiers." + std::string(to_string(kind)));
        const Profile profile{"", identifiers};
        std::shared_lock lock(mutex_);

        // No NOT operator: a rule can only match a contact that shares at
        // least one kind with the profile, so the index bounds the search.
        std::set<BlockerRef> candidates;
        for (const auto& [kind, value] : identifiers) {
            for (auto it = index_.lower_bound({kind, std::string()}); it != index_.end() && it->first.first == kind; ++it)
                for (const auto& [ref, count] : it->second) candidates.insert(ref);
        }

        std::vector<BlockerRef> out;
        for (const auto& ref : candidates) {
            const auto& list = *accounts_.at(ref.account).find(ref.list);
            if (list_matches(list, profile)) out.push_back(ref);
        }
        return out;
    }

    ReverseIndex reverse_index() const {
        std::shared_lock lock(mutex_);
        return index_;
    }

    // Index rebuilt from scratch out of the stored lists.
    ReverseIndex recompute_reverse_index() const {
        std::shared_lock lock(mutex_);
        ReverseIndex idx;
        for (const auto& [name, acc] : accounts_)
            for (const auto& l : acc.lists)
                for (const auto& c : l.record.contacts)
                    for (const auto& [kind, value] : c.identifiers)
                        ++idx[{kind, detail::index_value(value)}][{name, l.record.name}];
        return idx;
    }

    // Every stored list with its owner, for offline checks.
    std::vector<std::pair<std::string, BlockListRecord>> all_lists() const {
        std::shared_lock lock(mutex_);
        std::vector<std::pair<std::string, BlockListRecord>> out;
        for (const auto& [name, acc] : accounts_)
            for (const auto& l : acc.lists) out.emplace_back(name, l.record);
        return out;
    }

    std::vector<std::string> account_names() const {
        std::shared_lock lock(mutex_);
        std::vector<std::string> out;
        for (const auto& [name, acc] : accounts_) out.push_back(name);
        return out;
    }

    std::optional<Timestamp> list_updated_at(const std::string& account, const std::string& list) const {
        std::shared_lock lock(mutex_);
        const auto it = accounts_.find(account);
        if (it == accounts_.end()) return std::nullopt;
        const auto* l = it->second.find(list);
        if (!l) return std::nullopt;
        return l->updated_at;
    }

    // Forces a snapshot compaction of the journal.
    void compact() {
        std::unique_lock lock(mutex_);
        if (journal_) journal_->compact(snapshot_json());
    }

    bool list_matches(const detail::StoredList& list, const Profile& profile) const {
        for (const auto& c : list.record.contacts) {
            try {
                if (evaluate_rule(list.rule, c, profile, list.record.strictness, config_.thresholds).matched)
                    return true;
            } catch (const EvalError&) {
                // A malformed pairing never blocks.
            }
        }
        return false;
    }

private:
    ProviderConfig config_;
    Clock clock_;
    mutable std::shared_mutex mutex_;
    std::map<std::string, detail::StoredAccount> accounts_;
    ReverseIndex index_;
    std::unique_ptr<Journal> journal_;

    mutable std::mutex token_mutex_;
    std::map<std::string, AccessToken> tokens_;
    std::mt19937_64 rng_;

    std::string random_hex(int words) {
        std::string out;
        for (int i = 0; i < words; ++i) out += to_hex(ImageHash{rng_()});
        return out;
    }

    static std::string hash_secret(const std::string& salt, const std::string& secret) {
        return sha256_hex(salt + ":" + secret);
    }

    static void check_rule(const std::string& list_name, const std::string& text) {
        try {
            (void)parse_rule(text);
        } catch (const ParseError& e) {
            throw RuleError(list_name, e, "rule_text");
        }
    }

    void authorize(const std::string& token, const std::string& account) const {
        std::lock_guard tl(token_mutex_);
        const auto it = tokens_.find(token);
        if (it == tokens_.end()) throw Unauthorized("unknown token");
        if (clock_() >= it->second.expires_at) throw Unauthorized("token expired");
        if (it->second.account_name != account) throw Unauthorized("token is not valid for account '" + account + "'");
    }

    detail::StoredAccount& account_ref(const std::string& account) {
        const auto it = accounts_.find(account);
        if (it == accounts_.end()) throw NotFound("account '" + account + "' not found");
        return it->second;
    }
    const detail::StoredAccount& account_ref(const std::string& account) const {
        const auto it = accounts_.find(account);
        if (it == accounts_.end()) throw NotFound("account '" + account + "' not found");
        return it->second;
    }

    detail::StoredList& list_ref(const std::string& account, const std::string& list) {
        auto* l = account_ref(account).find(list);
        if (!l) throw NotFound("list '" + list + "' not found");
        return *l;
    }

    // Caller holds the writer lock and has validated `rec`.
    void commit(const json& rec) {
        if (journal_) journal_->append(rec);
        apply(rec);
        if (journal_ && config_.snapshot_every && journal_->records_since_snapshot() >= config_.snapshot_every)
            journal_->compact(snapshot_json());
    }

    void index_contact(const std::string& account, const std::string& list, const ContactRecord& c, bool add) {
        for (const auto& [kind, value] : c.identifiers) {
            const ReverseIndexKey key{kind, detail::index_value(value)};
            auto& refs = index_[key];
            const BlockerRef ref{account, list};
            if (add) {
                ++refs[ref];
            } else if (--refs[ref] == 0) {
                refs.erase(ref);
                if (refs.empty()) index_.erase(key);
            }
        }
    }

    // Applies one validated mutation record; shared by live writes and replay.
    void apply(const json& rec) {
        const auto& op = rec.at("op").get_ref<const std::string&>();
        const auto at = parse_utc(rec.at("at").get<std::string>()).value_or(Timestamp{});
        const auto& account = rec.at("account").get_ref<const std::string&>();
        if (op == "create_account") {
            detail::StoredAccount acc;
            acc.account = {account, rec.at("salt").get<std::string>(), rec.at("credential_hash").get<std::string>()};
            accounts_.emplace(account, std::move(acc));
            return;
        }
        const auto& list_name = rec.at("list").get_ref<const std::string&>();
        if (op == "create_list") {
            detail::StoredList l;
            l.record.name = list_name;
            l.record.strictness = strictness_from_wire(rec.at("strictness").get<std::string>()).value();
            l.record.rule_text = rec.at("rule_text").get<std::string>();
            l.rule = parse_rule(l.record.rule_text);
            l.updated_at = at;
            account_ref(account).lists.push_back(std::move(l));
            return;
        }
        auto& list = list_ref(account, list_name);
        if (op == "add_contact") {
            ContactRecord c{rec.at("contact_id").get<std::string>(),
                            detail::identifiers_from_json(rec.at("identifiers"), "identifiers")};
            index_contact(account, list_name, c, true);
            list.record.contacts.push_back(std::move(c));
            ++list.next_contact;
        } else if (op == "remove_contact") {
            auto& cs = list.record.contacts;
            const auto& id = rec.at("contact_id").get_ref<const std::string&>();
            for (auto it = cs.begin(); it != cs.end(); ++it) {
                if (it->contact_id == id) {
                    index_contact(account, list_name, *it, false);
                    cs.erase(it);
                    break;
                }
            }
        } else if (op == "set_rule") {
            list.record.rule_text = rec.at("rule_text").get<std::string>();
            list.rule = parse_rule(list.record.rule_text);
        } else {
            throw Error("CorruptJournal", "unknown journal op '" + op + "'");
        }
        ++list.revision;
        list.updated_at = at;
    }

    json snapshot_json() const {
        json accounts = json::array();
        for (const auto& [name, acc] : accounts_) {
            json lists = json::array();
            for (const auto& l : acc.lists) {
                json contacts = json::array();
                for (const auto& c : l.record.contacts)
                    contacts.push_back({{"contact_id", c.contact_id},
                                        {"identifiers", detail::identifiers_to_json(c.identifiers)}});
                lists.push_back({{"name", l.record.name},
                                 {"strictness", std::string(to_string(l.record.strictness))},
                                 {"rule_text", l.record.rule_text},
                                 {"contacts", contacts},
                                 {"next_contact", l.next_contact},
                                 {"revision", l.revision},
                                 {"updated_at", format_utc(l.updated_at)}});
            }
            accounts.push_back({{"account", name},
                                {"salt", acc.account.salt},
                                {"credential_hash", acc.account.credential_hash},
                                {"lists", lists}});
        }
        return {{"last_seq", journal_ ? journal_->last_seq() : 0}, {"accounts", accounts}};
    }

    void load_snapshot(const json& snap) {
        for (const auto& ja : snap.at("accounts")) {
            detail::StoredAccount acc;
            const auto name = ja.at("account").get<std::string>();
            acc.account = {name, ja.at("salt").get<std::string>(), ja.at("credential_hash").get<std::string>()};
            for (const auto& jl : ja.at("lists")) {
                detail::StoredList l;
                l.record.name = jl.at("name").get<std::string>();
                l.record.strictness = strictness_from_wire(jl.at("strictness").get<std::string>()).value();
                l.record.rule_text = jl.at("rule_text").get<std::string>();
                l.rule = parse_rule(l.record.rule_text);
                for (const auto& jc : jl.at("contacts"))
                    l.record.contacts.push_back({jc.at("contact_id").get<std::string>(),
                                                 detail::identifiers_from_json(jc.at("identifiers"), "identifiers")});
                l.next_contact = jl.at("next_contact").get<std::uint64_t>();
                l.revision = jl.at("revision").get<std::uint64_t>();
                l.updated_at = parse_utc(jl.at("updated_at").get<std::string>()).value_or(Timestamp{});
                for (const auto& c : l.record.contacts) index_contact(name, l.record.name, c, true);
                acc.lists.push_back(std::move(l));
            }
            accounts_.emplace(name, std::move(acc));
        }
    }

    void recover() {
        auto loaded = journal_->load();
        if (loaded.snapshot) load_snapshot(*loaded.snapshot);
        for (const auto& rec : loaded.records) apply(rec);
    }
};

}  // namespace sbo
