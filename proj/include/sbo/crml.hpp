#pragma once

#include "sbo/errors.hpp"
#include "sbo/identifiers.hpp"
#include "sbo/rule.hpp"
#include "sbo/timestamp.hpp"

#include <nlohmann/json.hpp>

#include <cctype>
#include <cstddef>
#include <initializer_list>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

// Contact Rule Markup Language: the document a provider exports. One schema,
// two encodings. The object format is JSON; the markup format is XML whose
// element names are exactly the object-format keys (no attributes).

namespace sbo {

inline constexpr std::string_view kCrmlVersion = "1.0";

struct BlockListRecord {
    std::string name;
    Strictness strictness = Strictness::Medium;
    std::string rule_text;
    std::vector<ContactRecord> contacts;
    friend bool operator==(const BlockListRecord&, const BlockListRecord&) = default;
};

struct CRMLDocument {
    std::string crml_version{kCrmlVersion};
    std::string provider;
    std::string account;
    Timestamp issued_at{};
    std::vector<BlockListRecord> block_lists;
    friend bool operator==(const CRMLDocument&, const CRMLDocument&) = default;
};

enum class CrmlFormat { Object, Markup };

struct Violation {
    std::string code;
    std::string path;
    std::string message;
    friend bool operator==(const Violation&, const Violation&) = default;
};

// Lists every invariant the document breaks; empty iff valid.
inline std::vector<Violation> validate_document(const CRMLDocument& doc) {
    std::vector<Violation> out;
    if (doc.crml_version != kCrmlVersion)
        out.push_back({"UnsupportedVersion", "crml_version",
                       "unsupported crml_version '" + doc.crml_version + "'"});
    if (doc.provider.empty()) out.push_back({"EmptyProvider", "provider", "provider is empty"});
    if (doc.account.empty()) out.push_back({"EmptyAccount", "account", "account is empty"});

    std::set<std::string> list_names;
    for (std::size_t i = 0; i < doc.block_lists.size(); ++i) {
        const auto& list = doc.block_lists[i];
        const std::string lpath = "block_lists[" + std::to_string(i) + "]";
        if (list.name.empty()) out.push_back({"EmptyListName", lpath + ".name", "list name is empty"});
        if (!list_names.insert(list.name).second)
            out.push_back({"DuplicateListName", lpath, "duplicate list name '" + list.name + "'"});
        try {
            (void)parse_rule(list.rule_text);
        } catch (const ParseError& e) {
            out.push_back({"InvalidRule", lpath + ".rule_text", e.what()});
        }

        std::set<std::string> ids;
        for (std::size_t j = 0; j < list.contacts.size(); ++j) {
            const auto& contact = list.contacts[j];
            const std::string cpath = lpath + ".contacts[" + std::to_string(j) + "]";
            if (contact.contact_id.empty())
                out.push_back({"EmptyContactId", cpath + ".contact_id", "contact_id is empty"});
            if (!ids.insert(contact.contact_id).second)
                out.push_back({"DuplicateContactId", cpath,
                               "duplicate contact_id '" + contact.contact_id + "'"});
            if (contact.identifiers.empty())
                out.push_back({"EmptyIdentifierSet", cpath + ".identifiers", "contact has no identifiers"});
            for (const auto& [kind, value] : contact.identifiers) {
                if (!value_shape_matches(kind, value))
                    out.push_back({"IdentifierTypeMismatch",
                                   cpath + ".identifiers." + std::string(to_string(kind)),
                                   std::string(to_string(kind)) + " has the wrong value type"});
            }
        }
    }
    return out;
}

namespace detail {

using ojson = nlohmann::ordered_json;

inline ojson identifiers_to_json(const IdentifierMap& ids) {
    ojson out = ojson::object();
    for (const auto& [kind, value] : ids) {
        const std::string key(to_string(kind));
        if (const auto* text = std::get_if<std::string>(&value))
            out[key] = *text;
        else
            out[key] = ojson{{"phash64", to_hex(std::get<ImageHash>(value))}};
    }
    return out;
}

inline ojson list_to_json(const BlockListRecord& list) {
    ojson contacts = ojson::array();
    for (const auto& c : list.contacts)
        contacts.push_back(ojson{{"contact_id", c.contact_id}, {"identifiers", identifiers_to_json(c.identifiers)}});
    return ojson{{"name", list.name},
                 {"strictness", std::string(to_string(list.strictness))},
                 {"rule_text", list.rule_text},
                 {"contacts", std::move(contacts)}};
}

inline std::string list_to_json_string(const BlockListRecord& list) { return list_to_json(list).dump(); }

inline ojson document_to_json(const CRMLDocument& doc) {
    ojson lists = ojson::array();
    for (const auto& l : doc.block_lists) lists.push_back(list_to_json(l));
    return ojson{{"crml_version", doc.crml_version},
                 {"provider", doc.provider},
                 {"account", doc.account},
                 {"issued_at", format_utc(doc.issued_at)},
                 {"block_lists", std::move(lists)}};
}

template <typename Json>
const Json& require_field(const Json& obj, const char* key, const std::string& path) {
    const auto it = obj.find(key);
    if (it == obj.end()) throw SchemaError(std::string("missing field '") + key + "'", path);
    return *it;
}

template <typename Json>
void reject_unknown_fields(const Json& obj, std::initializer_list<std::string_view> known,
                           const std::string& path) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (auto k : known) ok = ok || k == it.key();
        if (!ok) throw SchemaError("unknown field '" + it.key() + "'", path);
    }
}

template <typename Json>
const std::string& require_string(const Json& v, const std::string& path) {
    if (!v.is_string()) throw SchemaError("expected a string", path);
    return v.template get_ref<const std::string&>();
}

template <typename Json>
void require_object(const Json& v, const std::string& path) {
    if (!v.is_object()) throw SchemaError("expected an object", path);
}

// Shared by CRML contacts, provider requests and client profile files.
template <typename Json>
IdentifierMap identifiers_from_json(const Json& obj, const std::string& path) {
    require_object(obj, path);
    IdentifierMap ids;
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        const std::string kpath = path + "." + it.key();
        const auto kind = identifier_kind_from_wire(it.key());
        if (!kind) throw SchemaError("unknown identifier kind '" + it.key() + "'", kpath);
        if (*kind == IdentifierKind::ProfileImage) {
            require_object(it.value(), kpath);
            reject_unknown_fields(it.value(), {"phash64"}, kpath);
            const auto& hex = require_string(require_field(it.value(), "phash64", kpath), kpath + ".phash64");
            const auto hash = image_hash_from_hex(hex);
            if (!hash) throw SchemaError("phash64 must be 16 lowercase hex characters", kpath + ".phash64");
            ids.emplace(*kind, *hash);
        } else {
            ids.emplace(*kind, require_string(it.value(), kpath));
        }
    }
    return ids;
}

template <typename Json>
CRMLDocument document_from_json(const Json& root) {
    require_object(root, "");
    reject_unknown_fields(root, {"crml_version", "provider", "account", "issued_at", "block_lists"}, "");
    CRMLDocument doc;
    doc.crml_version = require_string(require_field(root, "crml_version", ""), "crml_version");
    if (doc.crml_version != kCrmlVersion)
        throw SchemaError("unsupported crml_version '" + doc.crml_version + "'", "crml_version");
    doc.provider = require_string(require_field(root, "provider", ""), "provider");
    doc.account = require_string(require_field(root, "account", ""), "account");
    const auto& issued = require_string(require_field(root, "issued_at", ""), "issued_at");
    const auto ts = parse_utc(issued);
    if (!ts) throw SchemaError("issued_at must be YYYY-MM-DDTHH:MM:SSZ", "issued_at");
    doc.issued_at = *ts;

    const auto& lists = require_field(root, "block_lists", "");
    if (!lists.is_array()) throw SchemaError("expected an array", "block_lists");
    for (std::size_t i = 0; i < lists.size(); ++i) {
        const auto& jl = lists[i];
        const std::string lpath = "block_lists[" + std::to_string(i) + "]";
        require_object(jl, lpath);
        reject_unknown_fields(jl, {"name", "strictness", "rule_text", "contacts"}, lpath);
        BlockListRecord list;
        list.name = require_string(require_field(jl, "name", lpath), lpath + ".name");
        const auto& st = require_string(require_field(jl, "strictness", lpath), lpath + ".strictness");
        const auto strictness = strictness_from_wire(st);
        if (!strictness) throw SchemaError("unknown strictness '" + st + "'", lpath + ".strictness");
        list.strictness = *strictness;
        list.rule_text = require_string(require_field(jl, "rule_text", lpath), lpath + ".rule_text");

        const auto& contacts = require_field(jl, "contacts", lpath);
        if (!contacts.is_array()) throw SchemaError("expected an array", lpath + ".contacts");
        for (std::size_t j = 0; j < contacts.size(); ++j) {
            const auto& jc = contacts[j];
            const std::string cpath = lpath + ".contacts[" + std::to_string(j) + "]";
            require_object(jc, cpath);
            reject_unknown_fields(jc, {"contact_id", "identifiers"}, cpath);
            ContactRecord c;
            c.contact_id = require_string(require_field(jc, "contact_id", cpath), cpath + ".contact_id");
            c.identifiers = identifiers_from_json(require_field(jc, "identifiers", cpath), cpath + ".identifiers");
            list.contacts.push_back(std::move(c));
        }
        doc.block_lists.push_back(std::move(list));
    }
    return doc;
}

// Parses JSON text, rejecting duplicate keys within any object.
inline ojson parse_json_strict(std::string_view text) {
    std::vector<std::set<std::string>> seen;
    const ojson::parser_callback_t cb = [&seen](int, ojson::parse_event_t event, ojson& parsed) {
        switch (event) {
            case ojson::parse_event_t::object_start:
                seen.emplace_back();
                break;
            case ojson::parse_event_t::object_end:
                seen.pop_back();
                break;
            case ojson::parse_event_t::key:
                if (!seen.back().insert(parsed.template get<std::string>()).second)
                    throw SchemaError("duplicate key '" + parsed.template get<std::string>() + "'");
                break;
            default:
                break;
        }
        return true;
    };
    try {
        return ojson::parse(text.begin(), text.end(), cb);
    } catch (const ojson::parse_error& e) {
        throw SyntaxError(e.what(), e.byte == 0 ? 0 : e.byte - 1);
    }
}

// ---- markup encoding ------------------------------------------------------

inline void append_escaped(std::string& out, std::string_view text) {
    for (char c : text) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out += c;
        }
    }
}

inline void write_markup(std::string& out, const std::string& key, const ojson& value, int depth) {
    const std::string indent(static_cast<std::size_t>(depth) * 2, ' ');
    if (value.is_array()) {
        // Arrays are repeated elements named after the key.
        for (const auto& item : value) write_markup(out, key, item, depth);
        return;
    }
    out += indent + "<" + key + ">";
    if (value.is_object()) {
        out += "\n";
        for (auto it = value.begin(); it != value.end(); ++it) write_markup(out, it.key(), it.value(), depth + 1);
        out += indent;
    } else {
        append_escaped(out, value.get_ref<const std::string&>());
    }
    out += "</" + key + ">\n";
}

struct XmlElement {
    std::string name;
    std::string text;
    std::vector<XmlElement> children;
    std::size_t offset = 0;
};

class XmlReader {
public:
    explicit XmlReader(std::string_view text) : s_(text) {}

    XmlElement read_document() {
        skip_misc();
        if (starts_with("<?xml")) {
            const auto end = s_.find("?>", i_);
            if (end == std::string_view::npos) fail("unterminated XML declaration");
            i_ = end + 2;
        }
        skip_misc();
        if (i_ >= s_.size() || s_[i_] != '<') fail("expected root element");
        XmlElement root = read_element();
        skip_misc();
        if (i_ != s_.size()) fail("content after root element");
        return root;
    }

private:
    std::string_view s_;
    std::size_t i_ = 0;

    [[noreturn]] void fail(const std::string& what) const { throw SyntaxError(what, i_); }

    bool starts_with(std::string_view p) const { return s_.substr(i_, p.size()) == p; }

    void skip_misc() {
        for (;;) {
            while (i_ < s_.size() && is_space(s_[i_])) ++i_;
            if (starts_with("<!--")) {
                const auto end = s_.find("-->", i_ + 4);
                if (end == std::string_view::npos) fail("unterminated comment");
                i_ = end + 3;
            } else {
                return;
            }
        }
    }

    static bool name_char(char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.' || c == ':';
    }

    std::string read_name() {
        const auto start = i_;
        while (i_ < s_.size() && name_char(s_[i_])) ++i_;
        if (start == i_) fail("expected element name");
        return std::string(s_.substr(start, i_ - start));
    }

    static void append_utf8(std::string& out, std::uint32_t cp) {
        if (cp < 0x80) {
            out += static_cast<char>(cp);
        } else if (cp < 0x800) {
            out += static_cast<char>(0xC0 | (cp >> 6));
            out += static_cast<char>(0x80 | (cp & 0x3F));
        } else if (cp < 0x10000) {
            out += static_cast<char>(0xE0 | (cp >> 12));
            out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
            out += static_cast<char>(0x80 | (cp & 0x3F));
        } else {
            out += static_cast<char>(0xF0 | (cp >> 18));
            out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
            out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
            out += static_cast<char>(0x80 | (cp & 0x3F));
        }
    }

    void read_entity(std::string& out) {
        const auto semi = s_.find(';', i_);
        if (semi == std::string_view::npos || semi - i_ > 12) fail("malformed entity");
        const auto ent = s_.substr(i_ + 1, semi - i_ - 1);
        if (ent == "amp") out += '&';
        else if (ent == "lt") out += '<';
        else if (ent == "gt") out += '>';
        else if (ent == "quot") out += '"';
        else if (ent == "apos") out += '\'';
        else if (ent.size() > 1 && ent[0] == '#') {
            const bool hex = ent[1] == 'x';
            const auto digits = ent.substr(hex ? 2 : 1);
            if (digits.empty()) fail("malformed character reference");
            std::uint32_t cp = 0;
            for (char c : digits) {
                const int v = std::isdigit(static_cast<unsigned char>(c)) ? c - '0'
                              : hex && std::isxdigit(static_cast<unsigned char>(c))
                                  ? std::tolower(static_cast<unsigned char>(c)) - 'a' + 10
                                  : -1;
                if (v < 0) fail("malformed character reference");
                cp = cp * (hex ? 16u : 10u) + static_cast<std::uint32_t>(v);
                if (cp > 0x10FFFF) fail("character reference out of range");
            }
            append_utf8(out, cp);
        } else {
            fail("unknown entity '&" + std::string(ent) + ";'");
        }
        i_ = semi + 1;
    }

    XmlElement read_element() {
        XmlElement el;
        el.offset = i_;
        ++i_;  // '<'
        el.name = read_name();
        while (i_ < s_.size() && is_space(s_[i_])) ++i_;
        if (starts_with("/>")) {
            i_ += 2;
            return el;
        }
        if (i_ >= s_.size()) fail("unterminated start tag");
        if (s_[i_] != '>') throw SchemaError("attributes are not allowed", el.name);
        ++i_;

        std::string text;
        bool has_non_space_text = false;
        for (;;) {
            if (i_ >= s_.size()) fail("unterminated element <" + el.name + ">");
            const char c = s_[i_];
            if (c == '<') {
                if (starts_with("</")) {
                    i_ += 2;
                    const auto closing = read_name();
                    if (closing != el.name)
                        fail("mismatched closing tag </" + closing + "> for <" + el.name + ">");
                    while (i_ < s_.size() && is_space(s_[i_])) ++i_;
                    if (i_ >= s_.size() || s_[i_] != '>') fail("expected '>'");
                    ++i_;
                    break;
                }
                if (starts_with("<!--")) {
                    const auto end = s_.find("-->", i_ + 4);
                    if (end == std::string_view::npos) fail("unterminated comment");
                    i_ = end + 3;
                    continue;
                }
                if (starts_with("<![CDATA[")) {
                    const auto end = s_.find("]]>", i_ + 9);
                    if (end == std::string_view::npos) fail("unterminated CDATA");
                    text.append(s_.substr(i_ + 9, end - i_ - 9));
                    has_non_space_text = true;
                    i_ = end + 3;
                    continue;
                }
                el.children.push_back(read_element());
            } else if (c == '&') {
                read_entity(text);
                has_non_space_text = true;
            } else {
                if (!is_space(c)) has_non_space_text = true;
                text += c;
                ++i_;
            }
        }
        if (!el.children.empty() && has_non_space_text)
            throw SchemaError("mixed text and element content", el.name);
        if (el.children.empty()) el.text = std::move(text);
        return el;
    }
};

inline bool is_container_tag(const std::string& name) {
    return name == "block_lists" || name == "contacts" || name == "identifiers" || name == "ProfileImage";
}

inline bool is_array_tag(const std::string& name) { return name == "block_lists" || name == "contacts"; }

// Maps a markup element onto the object-format tree so both encodings share
// one schema check.
inline ojson markup_to_json(const XmlElement& el, const std::string& path) {
    if (el.children.empty() && !is_container_tag(el.name)) return el.text;
    if (el.children.empty() && !trim(el.text).empty())
        throw SchemaError("expected child elements", path);
    ojson obj = ojson::object();
    for (const auto& child : el.children) {
        const std::string cpath = path.empty() ? child.name : path + "." + child.name;
        if (is_array_tag(child.name)) {
            auto& arr = obj[child.name];
            if (arr.is_null()) arr = ojson::array();
            arr.push_back(markup_to_json(child, cpath + "[" + std::to_string(arr.size()) + "]"));
        } else {
            if (obj.contains(child.name)) throw SchemaError("duplicate element <" + child.name + ">", cpath);
            obj[child.name] = markup_to_json(child, cpath);
        }
    }
    // Zero repeated elements encode an empty array.
    if (el.name == "crml" && !obj.contains("block_lists")) obj["block_lists"] = ojson::array();
    if (el.name == "block_lists" && !obj.contains("contacts")) obj["contacts"] = ojson::array();
    return obj;
}

}  // namespace detail

// Deterministic: the same document always yields the same bytes.
inline std::string serialize_crml(const CRMLDocument& doc, CrmlFormat format) {
    const auto tree = detail::document_to_json(doc);
    if (format == CrmlFormat::Object) return tree.dump();

    std::string out = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<crml>\n";
    for (auto it = tree.begin(); it != tree.end(); ++it) detail::write_markup(out, it.key(), it.value(), 1);
    out += "</crml>\n";
    return out;
}

namespace detail {

inline void throw_on_violations(const CRMLDocument& doc) {
    const auto violations = validate_document(doc);
    if (violations.empty()) return;
    for (const auto& v : violations) {
        if (v.code != "InvalidRule") continue;
        // Recover the list index from the path to name the list.
        const auto open = v.path.find('[');
        const auto idx = std::stoul(v.path.substr(open + 1));
        const auto& list = doc.block_lists[idx];
        try {
            (void)parse_rule(list.rule_text);
        } catch (const ParseError& e) {
            throw RuleError(list.name, e, v.path);
        }
    }
    throw SchemaError(violations.front().message, violations.front().path);
}

}  // namespace detail

// Parses and fully validates a document, including every rule_text.
inline CRMLDocument parse_crml(std::string_view text, CrmlFormat format) {
    CRMLDocument doc;
    if (format == CrmlFormat::Object) {
        doc = detail::document_from_json(detail::parse_json_strict(text));
    } else {
        const auto root = detail::XmlReader(text).read_document();
        if (root.name != "crml") throw SchemaError("root element must be <crml>", root.name);
        const auto tree = detail::markup_to_json(root, "");
        if (!tree.is_object()) throw SchemaError("root element must contain fields");
        doc = detail::document_from_json(tree);
    }
    detail::throw_on_violations(doc);
    return doc;
}

}  // namespace sbo
