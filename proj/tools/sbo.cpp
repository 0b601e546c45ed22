#include "sbo/client.hpp"
#include "sbo/crml.hpp"
#include "sbo/errors.hpp"
#include "sbo/provider.hpp"
#include "sbo/provider_client.hpp"
#include "sbo/provider_http.hpp"
#include "sbo/scenario.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using ojson = nlohmann::ordered_json;

sbo::ProviderHttpServer* g_server = nullptr;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw sbo::Error("IoError", "cannot read " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

ojson read_json(const std::string& path) {
    try {
        return ojson::parse(read_file(path));
    } catch (const ojson::parse_error& e) {
        throw sbo::Error("SyntaxError", path + ": " + e.what());
    }
}

// Accepts either {"identifiers": {...}} or a bare identifier object.
sbo::IdentifierMap identifiers_file(const std::string& path) {
    const auto j = read_json(path);
    const auto& ids = j.contains("identifiers") ? j["identifiers"] : j;
    return sbo::detail::scenario_identifiers(ids, "identifiers");
}

sbo::CrmlFormat format_from(const std::string& s) {
    if (s == "object" || s == "json") return sbo::CrmlFormat::Object;
    if (s == "markup" || s == "xml") return sbo::CrmlFormat::Markup;
    throw sbo::Error("UsageError", "unknown format '" + s + "'");
}

struct Connection {
    std::string provider = "localhost:8080";
    std::string account;
    std::string token;
    std::string secret;

    sbo::ProviderRestClient client(bool authenticated) const {
        auto c = sbo::ProviderRestClient::from_address(provider);
        if (!authenticated) return c;
        std::string t = token;
        if (t.empty())
            if (const char* env = std::getenv("SBO_TOKEN")) t = env;
        if (t.empty() && !secret.empty()) t = c.issue_token(account, secret).token;
        if (t.empty()) throw sbo::Error("UsageError", "a token is required (--token, SBO_TOKEN or --secret)");
        c.set_token(t);
        return c;
    }
};

void add_connection(CLI::App* cmd, Connection& conn, bool with_account = true) {
    cmd->add_option("--provider", conn.provider, "Provider address host:port")->capture_default_str();
    if (with_account) cmd->add_option("--account", conn.account, "Account name")->required();
    cmd->add_option("--token", conn.token, "Bearer token (defaults to $SBO_TOKEN)");
    cmd->add_option("--secret", conn.secret, "Account secret, used to obtain a token");
}

ojson decision_json(const sbo::BlockDecision& d) { return sbo::detail::decision_to_json(d); }

int serve(const std::string& listen, const std::string& host_name, const std::string& data_file, long long ttl,
          bool fsync, std::size_t snapshot_every, const std::string& thresholds_file) {
    sbo::ProviderConfig cfg;
    cfg.host_name = host_name;
    cfg.data_path = data_file;
    cfg.token_ttl = std::chrono::seconds(ttl);
    cfg.fsync = fsync;
    cfg.snapshot_every = snapshot_every;
    if (!thresholds_file.empty()) cfg.thresholds = sbo::thresholds_from_json(read_json(thresholds_file), "thresholds");
    sbo::ProviderService service(cfg);
    sbo::ProviderHttpServer server(service);

    const auto colon = listen.rfind(':');
    const std::string host = colon == std::string::npos ? "127.0.0.1" : listen.substr(0, colon);
    const int port = std::stoi(colon == std::string::npos ? listen : listen.substr(colon + 1));
    const int bound = server.bind(host, port);
    std::cerr << "sbo provider " << host_name << " listening on " << host << ":" << bound << "\n";

    g_server = &server;
    std::signal(SIGINT, [](int) { g_server->stop(); });
    std::signal(SIGTERM, [](int) { g_server->stop(); });
    server.listen_after_bind();
    g_server = nullptr;
    return 0;
}

int check_profile(const std::string& file, const std::vector<std::string>& crml_files, const std::string& crml_format,
                  const Connection& conn, const std::vector<std::string>& lists, const std::string& thresholds_file) {
    const auto pj = read_json(file);
    sbo::Profile profile;
    profile.profile_id = pj.value("profile_id", std::string());
    profile.identifiers = sbo::detail::scenario_identifiers(pj.contains("identifiers") ? pj["identifiers"] : pj, "identifiers");

    std::vector<sbo::CRMLDocument> docs;
    for (const auto& f : crml_files) docs.push_back(sbo::parse_crml(read_file(f), format_from(crml_format)));
    if (docs.empty()) {
        auto c = conn.client(true);
        const auto raw = c.export_raw(conn.account, lists, sbo::CrmlFormat::Object, std::nullopt);
        docs.push_back(sbo::parse_crml(raw.body, sbo::CrmlFormat::Object));
    }

    sbo::BlockSet set;
    for (const auto& d : docs)
        for (const auto& l : d.block_lists) set.entries.push_back({d.provider, d.account, l, sbo::parse_rule(l.rule_text)});
    sbo::Thresholds thresholds;
    if (!thresholds_file.empty()) thresholds = sbo::thresholds_from_json(read_json(thresholds_file), "thresholds");

    const auto decision = sbo::is_blocked(profile, set, thresholds);
    std::cout << (decision.blocked ? "BLOCKED" : "NOT BLOCKED") << "\n" << decision_json(decision).dump(2) << "\n";
    return 0;
}

void print_error(const std::string& code, const std::string& message) {
    std::cerr << ojson{{"code", code}, {"message", message}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Single Block On provider and harness"};
    app.require_subcommand(1);

    Connection conn;
    std::string name, secret, list, strictness = "Medium", rule, file, contact, format = "object";
    std::vector<std::string> lists, crml_files;
    std::string thresholds_file;

    auto* serve_cmd = app.add_subcommand("serve", "Run a provider");
    std::string listen = "127.0.0.1:8080", host_name = "sbo.local", data_file;
    long long ttl = 3600;
    bool fsync = false;
    std::size_t snapshot_every = 1000;
    serve_cmd->add_option("--listen", listen, "Address to bind, host:port")->capture_default_str()->envname("SBO_LISTEN");
    serve_cmd->add_option("--host-name", host_name, "Provider name written into exports")->capture_default_str()->envname("SBO_HOST_NAME");
    serve_cmd->add_option("--data-file", data_file, "Journal path; in-memory when empty")->envname("SBO_DATA_FILE");
    serve_cmd->add_option("--token-ttl", ttl, "Token lifetime in seconds")->capture_default_str();
    serve_cmd->add_option("--snapshot-every", snapshot_every, "Journal records between snapshots")->capture_default_str();
    serve_cmd->add_option("--thresholds", thresholds_file, "Threshold override file");
    serve_cmd->add_flag("--fsync", fsync, "fsync every journal append");

    auto* create_account = app.add_subcommand("create-account", "Register an account");
    create_account->add_option("--provider", conn.provider)->capture_default_str();
    create_account->add_option("--account", conn.account)->required();
    create_account->add_option("--secret", secret)->required();

    auto* issue_token = app.add_subcommand("issue-token", "Obtain a bearer token");
    issue_token->add_option("--provider", conn.provider)->capture_default_str();
    issue_token->add_option("--account", conn.account)->required();
    issue_token->add_option("--secret", secret)->required();

    auto* create_list = app.add_subcommand("create-list", "Create a block list");
    add_connection(create_list, conn);
    create_list->add_option("--name", name)->required();
    create_list->add_option("--strictness", strictness)->capture_default_str();
    create_list->add_option("--rule", rule, "Rule text; the default rule when omitted");

    auto* add_contact = app.add_subcommand("add-contact", "Add a contact to a list");
    add_connection(add_contact, conn);
    add_contact->add_option("--list", list)->required();
    add_contact->add_option("--file", file, "Identifier file")->required()->check(CLI::ExistingFile);

    auto* remove_contact = app.add_subcommand("remove-contact", "Remove a contact from a list");
    add_connection(remove_contact, conn);
    remove_contact->add_option("--list", list)->required();
    remove_contact->add_option("--contact", contact)->required();

    auto* set_rule = app.add_subcommand("set-rule", "Replace a list's rule");
    add_connection(set_rule, conn);
    set_rule->add_option("--list", list)->required();
    set_rule->add_option("--rule", rule)->required();

    auto* export_cmd = app.add_subcommand("export", "Print the account's CRML");
    add_connection(export_cmd, conn);
    export_cmd->add_option("--lists", lists, "Restrict to these lists")->delimiter(',');
    export_cmd->add_option("--format", format, "object or markup")->capture_default_str();

    auto* check = app.add_subcommand("check-profile", "Evaluate a profile against block lists");
    check->add_option("--file", file, "Profile file")->required()->check(CLI::ExistingFile);
    check->add_option("--crml", crml_files, "CRML documents; fetched from --provider when omitted");
    check->add_option("--format", format, "Format of --crml files")->capture_default_str();
    check->add_option("--provider", conn.provider)->capture_default_str();
    check->add_option("--account", conn.account);
    check->add_option("--token", conn.token);
    check->add_option("--secret", conn.secret);
    check->add_option("--lists", lists)->delimiter(',');
    check->add_option("--thresholds", thresholds_file);

    auto* blocked_by = app.add_subcommand("blocked-by", "List accounts whose lists match the identifiers");
    blocked_by->add_option("--provider", conn.provider)->capture_default_str();
    blocked_by->add_option("--file", file, "Identifier file")->required()->check(CLI::ExistingFile);

    auto* scenario = app.add_subcommand("run-scenario", "Run a scenario file and print its report");
    scenario->add_option("--file", file)->required()->check(CLI::ExistingFile);

    auto* validate = app.add_subcommand("validate", "Validate a CRML document");
    validate->add_option("--file", file)->required()->check(CLI::ExistingFile);
    validate->add_option("--format", format)->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*serve_cmd) return serve(listen, host_name, data_file, ttl, fsync, snapshot_every, thresholds_file);
        if (*create_account) {
            std::cout << conn.client(false).create_account(conn.account, secret).dump() << "\n";
        } else if (*issue_token) {
            const auto t = conn.client(false).issue_token(conn.account, secret);
            std::cout << ojson{{"token", t.token}, {"expires_at", sbo::format_utc(t.expires_at)}}.dump() << "\n";
        } else if (*create_list) {
            const auto st = sbo::strictness_from_wire(strictness);
            if (!st) throw sbo::Error("UsageError", "unknown strictness '" + strictness + "'");
            std::optional<std::string> r;
            if (!rule.empty()) r = rule;
            std::cout << conn.client(true).create_block_list(conn.account, name, *st, r).dump() << "\n";
        } else if (*add_contact) {
            std::cout << conn.client(true).add_contact(conn.account, list, identifiers_file(file)).dump() << "\n";
        } else if (*remove_contact) {
            conn.client(true).remove_contact(conn.account, list, contact);
        } else if (*set_rule) {
            std::cout << conn.client(true).set_rule(conn.account, list, rule).dump() << "\n";
        } else if (*export_cmd) {
            std::cout << conn.client(true).export_raw(conn.account, lists, format_from(format), std::nullopt).body;
        } else if (*check) {
            return check_profile(file, crml_files, format, conn, lists, thresholds_file);
        } else if (*blocked_by) {
            ojson out = ojson::array();
            for (const auto& b : conn.client(false).blocked_by(identifiers_file(file)))
                out.push_back(ojson{{"account", b.account}, {"list", b.list}});
            std::cout << ojson{{"blockers", out}}.dump(2) << "\n";
        } else if (*scenario) {
            const auto rep = sbo::run_scenario_file(file);
            std::cout << rep.report.dump(2) << "\n";
            return rep.pass ? 0 : 1;
        } else if (*validate) {
            const auto doc = sbo::parse_crml(read_file(file), format_from(format));
            std::cout << "valid: " << doc.block_lists.size() << " list(s)\n";
        }
    } catch (const sbo::Error& e) {
        print_error(e.code(), e.what());
        return 2;
    } catch (const std::exception& e) {
        print_error("Error", e.what());
        return 2;
    }
    return 0;
}
