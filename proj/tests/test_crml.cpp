#include "sbo/crml.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <random>
#include <regex>

using namespace sbo;
using ojson = nlohmann::ordered_json;

namespace {

const std::string kCanonical = sbo::test::slurp(sbo::test::source_dir() / "tests/data/canonical.crml.json");

CRMLDocument minimal_document() {
    CRMLDocument d;
    d.provider = "sbo.aws.com";
    d.account = "alexandergrahambell";
    d.issued_at = *parse_utc("2025-01-01T00:00:00Z");
    d.block_lists.push_back({"Block List 1", Strictness::Medium, render_rule(default_rule()), {}});
    return d;
}

template <typename E>
void expect_rejected(const std::string& text, CrmlFormat format) {
    EXPECT_THROW(parse_crml(text, format), E) << text;
}

}  // namespace

TEST(Crml, CanonicalDocumentParses) {
    const auto d = parse_crml(kCanonical, CrmlFormat::Object);
    EXPECT_EQ(d.crml_version, "1.0");
    EXPECT_EQ(d.provider, "sbo.aws.com");
    EXPECT_EQ(d.account, "alexandergrahambell");
    EXPECT_EQ(format_utc(d.issued_at), "2025-01-01T00:00:00Z");
    ASSERT_EQ(d.block_lists.size(), 1u);
    const auto& l = d.block_lists[0];
    EXPECT_EQ(l.name, "Block List 1");
    EXPECT_EQ(l.strictness, Strictness::Medium);
    ASSERT_EQ(l.contacts.size(), 1u);
    EXPECT_EQ(l.contacts[0].contact_id, "c-001");
    EXPECT_EQ(l.contacts[0].identifiers.size(), 4u);
    EXPECT_EQ(std::get<std::string>(*l.contacts[0].identifiers.get(IdentifierKind::FullName)), "John Smith");
    EXPECT_TRUE(validate_document(d).empty());
}

TEST(Crml, CanonicalDocumentReserializesExactly) {
    const auto d = parse_crml(kCanonical, CrmlFormat::Object);
    EXPECT_EQ(serialize_crml(d, CrmlFormat::Object), kCanonical);
    const auto markup = serialize_crml(d, CrmlFormat::Markup);
    EXPECT_EQ(parse_crml(markup, CrmlFormat::Markup), d);
}

TEST(Crml, MinimalDocumentMatchesGoldenFiles) {
    const auto d = minimal_document();
    EXPECT_EQ(serialize_crml(d, CrmlFormat::Object),
              sbo::test::slurp(sbo::test::source_dir() / "tests/data/minimal.crml.json"));
    EXPECT_EQ(serialize_crml(d, CrmlFormat::Markup),
              sbo::test::slurp(sbo::test::source_dir() / "tests/data/minimal.crml.xml"));
}

TEST(Crml, SerializationIsDeterministic) {
    std::mt19937_64 rng(8);
    for (int i = 0; i < 50; ++i) {
        const auto d = sbo::test::random_document(rng);
        for (auto f : {CrmlFormat::Object, CrmlFormat::Markup}) {
            const auto copy = d;
            ASSERT_EQ(serialize_crml(d, f), serialize_crml(copy, f));
        }
    }
}

TEST(Crml, RoundTripAndCrossFormatAgreement) {
    std::mt19937_64 rng(31337);
    for (int i = 0; i < 1000; ++i) {
        const auto d = sbo::test::random_document(rng);
        ASSERT_TRUE(validate_document(d).empty());
        const auto obj = serialize_crml(d, CrmlFormat::Object);
        const auto xml = serialize_crml(d, CrmlFormat::Markup);
        const auto from_obj = parse_crml(obj, CrmlFormat::Object);
        const auto from_xml = parse_crml(xml, CrmlFormat::Markup);
        ASSERT_EQ(from_obj, d) << obj;
        ASSERT_EQ(from_xml, d) << xml;
        ASSERT_EQ(serialize_crml(from_obj, CrmlFormat::Object), obj);
        ASSERT_EQ(serialize_crml(from_xml, CrmlFormat::Markup), xml);
    }
}

TEST(Crml, MarkupTagNamesAreObjectKeys) {
    const auto d = parse_crml(kCanonical, CrmlFormat::Object);
    const auto xml = serialize_crml(d, CrmlFormat::Markup);
    std::set<std::string> keys;
    std::function<void(const ojson&)> walk = [&](const ojson& j) {
        if (j.is_object())
            for (auto it = j.begin(); it != j.end(); ++it) {
                keys.insert(it.key());
                walk(it.value());
            }
        else if (j.is_array())
            for (const auto& x : j) walk(x);
    };
    walk(ojson::parse(serialize_crml(d, CrmlFormat::Object)));

    const std::regex tag("<([A-Za-z_]+)>");
    std::set<std::string> tags;
    for (auto it = std::sregex_iterator(xml.begin(), xml.end(), tag); it != std::sregex_iterator(); ++it)
        tags.insert((*it)[1]);
    tags.erase("crml");
    EXPECT_EQ(tags, keys);
    EXPECT_EQ(xml.substr(xml.find('\n')).find('='), std::string::npos);  // no attributes
}

TEST(Crml, ProfileImageWireShape) {
    auto d = minimal_document();
    ContactRecord c{"c-001", {}};
    c.identifiers.emplace(IdentifierKind::ProfileImage, ImageHash{0x0123456789abcdefULL});
    d.block_lists[0].contacts.push_back(c);
    const auto obj = serialize_crml(d, CrmlFormat::Object);
    EXPECT_NE(obj.find(R"("ProfileImage":{"phash64":"0123456789abcdef"})"), std::string::npos);
    EXPECT_NE(serialize_crml(d, CrmlFormat::Markup).find("<ProfileImage>\n          <phash64>0123456789abcdef</phash64>"),
              std::string::npos);
    EXPECT_EQ(parse_crml(obj, CrmlFormat::Object), d);
}

TEST(CrmlErrors, UnsupportedVersion) {
    auto text = kCanonical;
    text.replace(text.find("\"1.0\""), 5, "\"2.0\"");
    expect_rejected<SchemaError>(text, CrmlFormat::Object);
}

TEST(CrmlErrors, MalformedEncodingsReportPosition) {
    try {
        parse_crml(R"({"crml_version": "1.0",, })", CrmlFormat::Object);
        FAIL();
    } catch (const SyntaxError& e) {
        EXPECT_EQ(e.offset(), 23u);
    }
    expect_rejected<SyntaxError>("<crml><provider>x</crml>", CrmlFormat::Markup);
    expect_rejected<SyntaxError>("<crml>", CrmlFormat::Markup);
    expect_rejected<SyntaxError>("<crml></crml><extra/>", CrmlFormat::Markup);
    expect_rejected<SyntaxError>("<crml><provider>&bogus;</provider></crml>", CrmlFormat::Markup);
}

TEST(CrmlErrors, SchemaViolations) {
    auto j = ojson::parse(kCanonical);
    j["extra"] = 1;
    expect_rejected<SchemaError>(j.dump(), CrmlFormat::Object);

    j = ojson::parse(kCanonical);
    j["block_lists"][0]["contacts"][0]["identifiers"]["ShoeSize"] = "44";
    expect_rejected<SchemaError>(j.dump(), CrmlFormat::Object);

    j = ojson::parse(kCanonical);
    j["block_lists"][0]["strictness"] = "Harsh";
    expect_rejected<SchemaError>(j.dump(), CrmlFormat::Object);

    j = ojson::parse(kCanonical);
    j["issued_at"] = "yesterday";
    expect_rejected<SchemaError>(j.dump(), CrmlFormat::Object);

    j = ojson::parse(kCanonical);
    j["block_lists"][0]["contacts"][0]["identifiers"]["ProfileImage"] = {{"phash64", "0123456789ABCDEF"}};
    expect_rejected<SchemaError>(j.dump(), CrmlFormat::Object);

    j = ojson::parse(kCanonical);
    j["provider"] = "";
    expect_rejected<SchemaError>(j.dump(), CrmlFormat::Object);

    expect_rejected<SchemaError>(R"({"crml_version":"1.0","crml_version":"1.0"})", CrmlFormat::Object);
    expect_rejected<SchemaError>("<crml><provider a=\"1\">x</provider></crml>", CrmlFormat::Markup);
    expect_rejected<SchemaError>("<crml>text<provider>x</provider></crml>", CrmlFormat::Markup);
    expect_rejected<SchemaError>("<other/>", CrmlFormat::Markup);
}

TEST(CrmlErrors, BadRuleNamesTheList) {
    auto j = ojson::parse(kCanonical);
    j["block_lists"][0]["rule_text"] = "FullName MATCHES AND";
    try {
        parse_crml(j.dump(), CrmlFormat::Object);
        FAIL();
    } catch (const RuleError& e) {
        EXPECT_EQ(e.list_name(), "Block List 1");
        EXPECT_EQ(e.position(), 20u);
        EXPECT_EQ(e.path(), "block_lists[0].rule_text");
    }
}

TEST(CrmlMarkup, AcceptsCommentsCdataAndCharacterReferences) {
    const std::string xml =
        "<?xml version=\"1.0\"?>\n<!-- exported -->\n<crml><crml_version>1.0</crml_version>"
        "<provider><![CDATA[sbo.aws.com]]></provider><account>al&#101;x&#x41;</account>"
        "<issued_at>2025-01-01T00:00:00Z</issued_at></crml>";
    const auto d = parse_crml(xml, CrmlFormat::Markup);
    EXPECT_EQ(d.provider, "sbo.aws.com");
    EXPECT_EQ(d.account, "alexA");
    EXPECT_TRUE(d.block_lists.empty());
}

TEST(CrmlMarkup, EscapesSpecialCharacters) {
    auto d = minimal_document();
    d.block_lists[0].name = "a<b & c>d \"q\" 'x'";
    const auto xml = serialize_crml(d, CrmlFormat::Markup);
    EXPECT_NE(xml.find("a&lt;b &amp; c&gt;d \"q\" 'x'"), std::string::npos);
    EXPECT_EQ(parse_crml(xml, CrmlFormat::Markup), d);
}

TEST(ValidateDocument, Examples) {
    EXPECT_TRUE(validate_document(parse_crml(kCanonical, CrmlFormat::Object)).empty());

    auto d = minimal_document();
    d.block_lists.push_back(d.block_lists[0]);
    const auto dup = validate_document(d);
    ASSERT_EQ(dup.size(), 1u);
    EXPECT_EQ(dup[0], (Violation{"DuplicateListName", "block_lists[1]", dup[0].message}));

    d = minimal_document();
    d.block_lists[0].contacts.push_back({"c-001", {}});
    const auto empty = validate_document(d);
    ASSERT_EQ(empty.size(), 1u);
    EXPECT_EQ(empty[0].code, "EmptyIdentifierSet");
    EXPECT_EQ(empty[0].path, "block_lists[0].contacts[0].identifiers");
}

TEST(ValidateDocument, ReportsEveryViolation) {
    CRMLDocument d;
    d.crml_version = "0.9";
    BlockListRecord l{"", Strictness::Lenient, "Age GREATERTHAN", {}};
    ContactRecord c{"", {}};
    c.identifiers.emplace(IdentifierKind::ProfileImage, std::string("abc"));
    l.contacts = {c, c};
    d.block_lists.push_back(l);
    std::set<std::string> codes;
    for (const auto& v : validate_document(d)) codes.insert(v.code);
    EXPECT_EQ(codes, (std::set<std::string>{"UnsupportedVersion", "EmptyProvider", "EmptyAccount", "EmptyListName",
                                            "InvalidRule", "EmptyContactId", "DuplicateContactId",
                                            "IdentifierTypeMismatch"}));
}

namespace {

// Object-format text with the key at `target` written twice.
void dump_dup(const ojson& j, const ojson* target, std::string& out) {
    if (j.is_object()) {
        out += '{';
        bool first = true;
        for (auto it = j.begin(); it != j.end(); ++it) {
            const int times = &it.value() == target ? 2 : 1;
            for (int t = 0; t < times; ++t) {
                if (!first) out += ',';
                first = false;
                out += ojson(it.key()).dump() + ":";
                dump_dup(it.value(), target, out);
            }
        }
        out += '}';
    } else if (j.is_array()) {
        out += '[';
        bool first = true;
        for (const auto& x : j) {
            const int times = &x == target ? 2 : 1;
            for (int t = 0; t < times; ++t) {
                if (!first) out += ',';
                first = false;
                dump_dup(x, target, out);
            }
        }
        out += ']';
    } else {
        out += j.dump();
    }
}

void collect_nodes(const ojson& j, std::vector<const ojson*>& out) {
    if (j.is_object())
        for (auto it = j.begin(); it != j.end(); ++it) {
            out.push_back(&it.value());
            collect_nodes(it.value(), out);
        }
    else if (j.is_array())
        for (const auto& x : j) {
            out.push_back(&x);
            collect_nodes(x, out);
        }
}

bool is_identifier_key(const std::string& pointer) {
    return pointer.find("/identifiers/") != std::string::npos && pointer.rfind("/phash64") != pointer.size() - 8;
}

}  // namespace

TEST(CrmlRejection, ObjectFormatFieldDeletionAndDuplication) {
    std::mt19937_64 rng(77);
    int deletions = 0, duplications = 0;
    for (int i = 0; i < 60; ++i) {
        const auto d = sbo::test::random_document(rng);
        const auto j = ojson::parse(serialize_crml(d, CrmlFormat::Object));

        // Deletion of any object member breaks the schema, except dropping one
        // of several identifiers, which leaves a valid contact.
        const auto flat = j.flatten();
        std::set<std::string> members;
        for (auto it = flat.begin(); it != flat.end(); ++it) {
            auto ptr = it.key();
            while (!ptr.empty()) {
                const auto slash = ptr.rfind('/');
                const auto last = ptr.substr(slash + 1);
                if (!last.empty() && !std::all_of(last.begin(), last.end(), ::isdigit)) members.insert(ptr);
                ptr = ptr.substr(0, slash);
            }
        }
        for (const auto& m : members) {
            auto copy = j;
            const ojson::json_pointer ptr(m);
            copy[ptr.parent_pointer()].erase(ptr.back());
            const bool identifier = is_identifier_key(m);
            const bool still_valid = identifier && !copy[ptr.parent_pointer()].empty();
            if (still_valid) {
                ASSERT_NO_THROW(parse_crml(copy.dump(), CrmlFormat::Object)) << m;
            } else {
                ASSERT_THROW(parse_crml(copy.dump(), CrmlFormat::Object), Error) << m;
                ++deletions;
            }
        }

        // Duplicating any key or any list/contact entry is rejected.
        std::vector<const ojson*> nodes;
        collect_nodes(j, nodes);
        for (const auto* n : nodes) {
            std::string text;
            dump_dup(j, n, text);
            ASSERT_THROW(parse_crml(text, CrmlFormat::Object), Error) << text;
            ++duplications;
        }
    }
    EXPECT_GT(deletions, 500);
    EXPECT_GT(duplications, 500);
}

TEST(CrmlRejection, MarkupElementDeletionAndDuplication) {
    std::mt19937_64 rng(78);
    int checked = 0;
    for (int i = 0; i < 40; ++i) {
        const auto d = sbo::test::random_document(rng);
        const auto xml = serialize_crml(d, CrmlFormat::Markup);
        std::vector<std::string> lines;
        std::stringstream ss(xml);
        for (std::string line; std::getline(ss, line);) lines.push_back(line);

        // Lines 2 .. n-2 are elements inside <crml>; each spans to the next
        // line with the same indentation that closes it.
        for (std::size_t start = 2; start + 1 < lines.size(); ++start) {
            const auto indent = lines[start].find('<');
            if (lines[start].compare(indent, 2, "</") == 0) continue;
            const auto name = lines[start].substr(indent + 1, lines[start].find('>') - indent - 1);
            std::size_t end = start;
            while (lines[end].find("</" + name + ">") == std::string::npos) ++end;

            const auto rebuild = [&](bool duplicate) {
                std::string out;
                for (std::size_t k = 0; k < lines.size(); ++k) {
                    const bool in = k >= start && k <= end;
                    if (!in || duplicate) out += lines[k] + "\n";
                    if (duplicate && k == end)
                        for (std::size_t r = start; r <= end; ++r) out += lines[r] + "\n";
                }
                return out;
            };

            ASSERT_THROW(parse_crml(rebuild(true), CrmlFormat::Markup), Error) << name;
            const bool array_item = name == "block_lists" || name == "contacts";
            const bool identifier = indent == 8;
            if (array_item) continue;
            if (identifier) {
                // Siblings inside <identifiers> are at the same indentation.
                const bool has_sibling = lines[start - 1].find("<identifiers>") == std::string::npos ||
                                         lines[end + 1].find("</identifiers>") == std::string::npos;
                if (has_sibling) {
                    ASSERT_NO_THROW(parse_crml(rebuild(false), CrmlFormat::Markup)) << name;
                    continue;
                }
            }
            ASSERT_THROW(parse_crml(rebuild(false), CrmlFormat::Markup), Error) << name;
            ++checked;
        }
    }
    EXPECT_GT(checked, 200);
}
