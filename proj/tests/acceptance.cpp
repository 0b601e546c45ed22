// Acceptance checks. Prints one [PASS]/[FAIL] line per criterion and exits
// non-zero if any criterion fails.

#include "sbo/client.hpp"
#include "sbo/crml.hpp"
#include "sbo/evaluate.hpp"
#include "sbo/provider.hpp"
#include "sbo/scenario.hpp"
#include "sbo/similarity.hpp"

#include "eval_oracle.hpp"
#include "mutator.hpp"
#include "support.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <csignal>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>

using namespace sbo;
using ojson = nlohmann::ordered_json;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (ok) return;
        if (pass) detail = what;
        pass = false;
    }
};

std::filesystem::path scenario_path(const std::string& name) {
    return sbo::test::source_dir() / "scenarios" / name;
}

double elapsed(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

Outcome crml_round_trip() {
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(1000);
    int mismatches = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto doc = sbo::test::random_document(rng);
        const auto json_text = serialize_crml(doc, CrmlFormat::Object);
        const auto xml_text = serialize_crml(doc, CrmlFormat::Markup);
        const auto from_json = parse_crml(json_text, CrmlFormat::Object);
        const auto from_xml = parse_crml(xml_text, CrmlFormat::Markup);
        if (from_json != doc || from_xml != doc || serialize_crml(from_json, CrmlFormat::Object) != json_text ||
            serialize_crml(from_xml, CrmlFormat::Markup) != xml_text ||
            serialize_crml(from_xml, CrmlFormat::Object) != json_text)
            ++mismatches;
    }
    o.require(mismatches == 0, std::to_string(mismatches) + " of 1000 documents did not round-trip");

    const auto canonical = sbo::test::slurp(sbo::test::source_dir() / "tests/data/canonical.crml.json");
    const auto doc = parse_crml(canonical, CrmlFormat::Object);
    o.require(serialize_crml(doc, CrmlFormat::Object) == canonical, "canonical fixture did not re-serialize exactly");
    o.require(doc.account == "alexandergrahambell" && doc.block_lists.size() == 1 &&
                  doc.block_lists[0].name == "Block List 1",
              "canonical fixture content");
    const double secs = elapsed(start);
    o.require(secs < 10.0, "took " + std::to_string(secs) + " s");
    if (o.pass) o.detail = "1000/1000 documents, both encodings, canonical exact, " + std::to_string(secs).substr(0, 4) + " s";
    return o;
}

Outcome rule_oracle() {
    Outcome o;
    const std::vector<IdentifierKind> kinds = {IdentifierKind::FullName, IdentifierKind::Username,
                                               IdentifierKind::EmailId, IdentifierKind::ProfileImage};
    std::mt19937_64 rng(2024);
    int agree = 0;
    constexpr int kCases = 10000;
    for (int i = 0; i < kCases; ++i) {
        const auto ast = sbo::test::random_ast(rng, 4, kinds);
        const ContactRecord c{"c-001", sbo::test::random_identifiers(rng, kinds)};
        const Profile q{"p", sbo::test::random_identifiers(rng, kinds)};
        const auto s = kAllStrictness[rng() % 3];
        std::vector<bool> verdicts;
        sbo::test::collect_verdicts(ast, c.identifiers, q.identifiers, s, verdicts);
        std::size_t next = 0;
        const bool expected = sbo::test::oracle_fold(ast, verdicts, next);
        const auto r = evaluate_rule(ast, c, q, s);
        bool same = sbo::test::ast_depth(ast) <= 4 && r.matched == expected && r.trace.size() == verdicts.size();
        for (std::size_t k = 0; same && k < verdicts.size(); ++k) same = r.trace[k].verdict == verdicts[k];
        agree += same;
    }
    o.require(agree == kCases, std::to_string(agree) + "/" + std::to_string(kCases) + " agree with the fold oracle");

    const auto four_clause = parse_rule(
        "(Username MATCHES AND FullName Matches) OR (Photograph MATCHES AND Bio MATCHES) OR "
        "(Bio MATCHES AND Email Id Matches) OR (Full Name MATCHES AND Age EQUALS)");
    const ContactRecord c{"c-001", {{IdentifierKind::Biodata, std::string("inventor of the telephone")},
                                    {IdentifierKind::EmailId, std::string("agb@example.com")}}};
    const Profile p{"p", {{IdentifierKind::Biodata, std::string("inventor of the telephony")},
                          {IdentifierKind::EmailId, std::string("agb@example.com")},
                          {IdentifierKind::Username, std::string("agb")}}};
    const auto r = evaluate_rule(four_clause, c, p, Strictness::Medium);
    o.require(four_clause.children.size() == 4, "four-clause rule should have 4 clauses");
    o.require(r.trace.size() == 8, "four-clause rule trace should have 8 entries");
    o.require(r.matched, "four-clause rule should match via the Bio AND Email clause");
    if (o.pass) o.detail = "10000/10000 agree; four-clause rule: 4 clauses, 8-entry trace, matched";
    return o;
}

Outcome similarity_metric() {
    Outcome o;
    std::mt19937_64 rng(3);
    int exact = 0, monotone = 0;
    constexpr int kPairs = 10000;
    const auto rule = parse_rule("FullName MATCHES");
    for (int i = 0; i < kPairs; ++i) {
        const auto a = sbo::test::random_u32(rng, 12), b = sbo::test::random_u32(rng, 12);
        const auto ea = sbo::test::encode_utf8(a), eb = sbo::test::encode_utf8(b);
        exact += levenshtein(ea, eb) == sbo::test::oracle_edit_distance(a, b);
        const ContactRecord c{"c", {{IdentifierKind::FullName, ea}}};
        const Profile p{"p", {{IdentifierKind::FullName, eb}}};
        const bool s = evaluate_rule(rule, c, p, Strictness::Strict).matched;
        const bool m = evaluate_rule(rule, c, p, Strictness::Medium).matched;
        const bool l = evaluate_rule(rule, c, p, Strictness::Lenient).matched;
        monotone += (!s || m) && (!m || l);
    }
    o.require(exact == kPairs, std::to_string(exact) + "/10000 distances equal the oracle");
    o.require(monotone == kPairs, std::to_string(monotone) + "/10000 pairs monotone");
    const double ks = text_similarity("kitten", "sitting");
    o.require(std::abs(ks - 4.0 / 7.0) <= 1e-9, "kitten/sitting is not 4/7");
    o.require(std::round(ks * 1e4) / 1e4 == 0.5714, "kitten/sitting does not round to 0.5714");
    if (o.pass) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.10f", ks);
        o.detail = "10000/10000 exact, 10000/10000 monotone, kitten/sitting = " + std::string(buf);
    }
    return o;
}

// Runs 500 mutations in a child process that is then SIGKILLed; the parent
// restarts from the data file and compares digests.
Outcome provider_durability() {
    Outcome o;
    const auto dir = sbo::test::scratch_dir("acceptance");
    ProviderConfig cfg;
    cfg.host_name = "sbo.aws.com";
    cfg.data_path = dir / "provider.log";
    cfg.snapshot_every = 200;
    cfg.rng_seed = 9;
    const Timestamp fixed = *parse_utc("2025-01-01T00:00:00Z");
    const Clock clock = [fixed] { return fixed; };

    int fds[2];
    if (::pipe(fds) != 0) {
        o.require(false, "pipe failed");
        return o;
    }
    const pid_t pid = ::fork();
    if (pid == 0) {
        ::close(fds[0]);
        ProviderService svc(cfg, clock);
        sbo::test::Mutator m(500);
        m.setup(svc);
        for (int i = 0; i < 500; ++i) m.step(svc);
        std::string out;
        for (const auto& [account, entry] : m.snapshot(svc)) out += account + " " + entry.first + "\n";
        (void)!::write(fds[1], out.data(), out.size());
        ::close(fds[1]);
        ::raise(SIGKILL);
        ::_exit(0);
    }
    ::close(fds[1]);
    std::string before;
    char buf[4096];
    for (ssize_t n; (n = ::read(fds[0], buf, sizeof buf)) > 0;) before.append(buf, static_cast<std::size_t>(n));
    ::close(fds[0]);
    int status = 0;
    ::waitpid(pid, &status, 0);
    o.require(WIFSIGNALED(status) && WTERMSIG(status) == SIGKILL, "child was not killed");

    ProviderService restarted(cfg, clock);
    sbo::test::Mutator m(500);
    m.login(restarted);
    std::string after;
    for (const auto& [account, entry] : m.snapshot(restarted)) after += account + " " + entry.first + "\n";
    o.require(!before.empty() && before == after, "export digests differ after restart");
    o.require(restarted.reverse_index() == restarted.recompute_reverse_index(),
              "reverse index differs from recomputation");
    std::filesystem::remove_all(dir);
    if (o.pass) o.detail = "500 mutations, SIGKILL, restart: digests identical, reverse index consistent";
    return o;
}

std::string policy_of(const ojson& scenario, const std::string& app) {
    for (const auto& a : scenario.at("applications"))
        if (a.at("name") == app) return a.at("refresh_policy").at("type").get<std::string>();
    return {};
}

Outcome end_to_end_propagation() {
    Outcome o;
    const auto scenario = ojson::parse(sbo::test::slurp(scenario_path("block_once_enforced_everywhere.json")));
    const auto r = run_scenario(scenario);
    o.require(r.pass, "scenario expectations failed");
    const auto& events = r.report.at("events");

    long long block_t = -1;
    std::size_t block_index = 0;
    long long tick_gap = 0, last_tick = -1;
    for (const auto& e : events) {
        if (e.at("type") == "block" && block_t < 0) {
            block_t = e.at("t").get<long long>();
            block_index = e.at("index").get<std::size_t>();
        }
        if (e.at("type") == "tick") {
            const auto t = e.at("t").get<long long>();
            if (last_tick >= 0) tick_gap = std::max(tick_gap, t - last_tick);
            last_tick = t;
        }
    }
    o.require(block_t >= 0, "no block event");

    // First event of `type` for `app` after the block.
    const auto first_after = [&](const std::string& type, const std::string& app) -> std::optional<long long> {
        for (const auto& e : events)
            if (e.at("index").get<std::size_t>() > block_index && e.at("type") == type && e.value("app", "") == app)
                return e.at("t").get<long long>();
        return std::nullopt;
    };
    // Requests answered before the latency must not be blocked.
    const auto blocked_early = [&](const std::string& app, long long latency) {
        for (const auto& e : events)
            if (e.at("index").get<std::size_t>() > block_index && e.at("type") == "request" &&
                e.value("app", "") == app && e.at("t").get<long long>() - block_t < latency &&
                e.at("decision").at("blocked").get<bool>())
                return true;
        return false;
    };

    std::set<std::string> policies;
    std::ostringstream summary;
    for (const auto& p : r.report.at("propagation")) {
        const auto app = p.at("app").get<std::string>();
        const auto policy = policy_of(scenario, app);
        policies.insert(policy);
        if (p.at("latency_seconds").is_null()) {
            o.require(false, app + " never enforced the block");
            continue;
        }
        const auto latency = p.at("latency_seconds").get<long long>();
        summary << " " << app << "(" << policy << ")=" << latency << "s";
        o.require(!blocked_early(app, latency), app + " blocked before its refresh");
        if (policy == "PerRequest") {
            o.require(first_after("request", app) == block_t + latency, app + " not blocked at the next request");
        } else if (policy == "Periodic") {
            long long interval = 0;
            for (const auto& a : scenario.at("applications"))
                if (a.at("name") == app) interval = a.at("refresh_policy").at("interval_seconds").get<long long>();
            o.require(latency <= interval + tick_gap, app + " exceeded interval + tick");
        } else if (policy == "OnLogin") {
            o.require(first_after("login", app) == block_t + latency, app + " not blocked at the first login");
        } else if (policy == "Manual") {
            o.require(first_after("manual_refresh", app) == block_t + latency, app + " enforced without a manual trigger");
        }
    }
    o.require(policies == std::set<std::string>{"Periodic", "OnLogin", "PerRequest", "Manual"},
              "scenario does not cover all four policies");

    bool hidden_from_blocked = false;
    for (const auto& e : events)
        if (e.at("type") == "blocked_user_login")
            for (const auto& h : e.at("hidden"))
                hidden_from_blocked = hidden_from_blocked || h.at("account") == "alexandergrahambell";
    o.require(hidden_from_blocked, "blocker not hidden from the blocked user at login");
    if (o.pass) o.detail = "block at t=" + std::to_string(block_t) + ";" + summary.str() + "; symmetric hiding holds";
    return o;
}

Outcome priority_override() {
    Outcome o;
    const auto r = run_scenario_file(scenario_path("priority_override.json"));
    o.require(r.pass, "scenario expectations failed");
    std::vector<std::string> methods;
    bool disabled_before_direct = false;
    for (const auto& e : r.report.at("events")) {
        if (e.at("type") == "broker") disabled_before_direct = true;
        if (e.at("type") == "expect_integration") {
            methods.push_back(e.at("method").is_null() ? "none" : e.at("method").get<std::string>());
            if (methods.size() == 2) o.require(disabled_before_direct, "Direct used before the broker was disabled");
        }
    }
    o.require(methods.size() >= 2 && methods[0] == "SsoDelegated" && methods[1] == "Direct",
              "expected SsoDelegated then Direct");
    if (o.pass) {
        std::string seq;
        for (const auto& m : methods) seq += (seq.empty() ? "" : " -> ") + m;
        o.detail = seq;
    }
    return o;
}

Outcome multi_provider_union() {
    Outcome o;
    const auto r = run_scenario_file(scenario_path("multi_provider_union.json"));
    o.require(r.pass, "scenario expectations failed");
    bool blocked_via_b = false, unblocked_after_removal = false, removed = false;
    for (const auto& e : r.report.at("events")) {
        if (e.at("type") == "remove_integration") removed = true;
        if (e.at("type") != "request" || e.at("decision").is_null()) continue;
        const auto& d = e.at("decision");
        bool only_b = d.at("blocked").get<bool>();
        for (const auto& m : d.at("matches")) only_b = only_b && m.at("provider") == "sbo.azure.com";
        if (!removed && only_b) blocked_via_b = true;
        if (removed && e.at("pass").get<bool>() && !d.at("blocked").get<bool>()) unblocked_after_removal = true;
    }
    o.require(blocked_via_b, "no profile blocked only through provider B");
    o.require(unblocked_after_removal, "profile still blocked after removing provider B");
    if (o.pass) o.detail = "blocked via sbo.azure.com only; unblocked after removing its config";
    return o;
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"AC1 CRML round-trip", crml_round_trip},
        {"AC2 rule-engine oracle equivalence", rule_oracle},
        {"AC3 similarity metric", similarity_metric},
        {"AC4 provider durability", provider_durability},
        {"AC5 end-to-end propagation", end_to_end_propagation},
        {"AC6 priority override", priority_override},
        {"AC7 multi-provider union", multi_provider_union},
    };
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        failed += !o.pass;
        std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << name << ": " << o.detail << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
