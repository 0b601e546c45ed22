#pragma once

// Test-only oracles and generators. The oracles are deliberately naive and
// share no code with the library.

#include "sbo/crml.hpp"
#include "sbo/identifiers.hpp"
#include "sbo/rule.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace sbo::test {

inline std::filesystem::path source_dir() { return SBO_SOURCE_DIR; }

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    auto dir = std::filesystem::temp_directory_path() / ("sbo-test-" + tag + "-" + std::to_string(rng()));
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string encode_utf8(const std::u32string& s) {
    std::string out;
    for (char32_t c : s) {
        if (c < 0x80) {
            out += static_cast<char>(c);
        } else if (c < 0x800) {
            out += static_cast<char>(0xC0 | (c >> 6));
            out += static_cast<char>(0x80 | (c & 0x3F));
        } else if (c < 0x10000) {
            out += static_cast<char>(0xE0 | (c >> 12));
            out += static_cast<char>(0x80 | ((c >> 6) & 0x3F));
            out += static_cast<char>(0x80 | (c & 0x3F));
        } else {
            out += static_cast<char>(0xF0 | (c >> 18));
            out += static_cast<char>(0x80 | ((c >> 12) & 0x3F));
            out += static_cast<char>(0x80 | ((c >> 6) & 0x3F));
            out += static_cast<char>(0x80 | (c & 0x3F));
        }
    }
    return out;
}

// Full (n+1) x (m+1) Wagner-Fischer table.
inline std::size_t oracle_edit_distance(const std::u32string& a, const std::u32string& b) {
    std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
    for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
    for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i)
        for (std::size_t j = 1; j <= b.size(); ++j)
            d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    return d[a.size()][b.size()];
}

inline double oracle_similarity(const std::u32string& a, const std::u32string& b) {
    const auto n = std::max(a.size(), b.size());
    if (n == 0) return 1.0;
    return 1.0 - static_cast<double>(oracle_edit_distance(a, b)) / static_cast<double>(n);
}

inline std::u32string ascii32(const std::string& s) { return std::u32string(s.begin(), s.end()); }

// Random code-point string over a small alphabet with some multi-byte
// characters, so edits collide often.
inline std::u32string random_u32(std::mt19937_64& rng, std::size_t max_len) {
    static const std::u32string alphabet = U"abcdeéß中\U0001F600";
    std::uniform_int_distribution<std::size_t> len(0, max_len), pick(0, alphabet.size() - 1);
    std::u32string s(len(rng), U'a');
    for (auto& c : s) c = alphabet[pick(rng)];
    return s;
}

inline std::string random_word(std::mt19937_64& rng, std::size_t min_len, std::size_t max_len,
                               std::string_view alphabet = "abcdefghij") {
    std::uniform_int_distribution<std::size_t> len(min_len, max_len), pick(0, alphabet.size() - 1);
    std::string s(len(rng), 'a');
    for (auto& c : s) c = alphabet[pick(rng)];
    return s;
}

// Random AST of the given maximum depth. Compound nodes get 2-3 children.
inline RuleNode random_ast(std::mt19937_64& rng, int depth, const std::vector<IdentifierKind>& kinds,
                           bool allow_greater_than = false) {
    std::uniform_int_distribution<int> coin(0, 2);
    if (depth <= 1 || coin(rng) == 0) {
        const auto kind = kinds[std::uniform_int_distribution<std::size_t>(0, kinds.size() - 1)(rng)];
        if (allow_greater_than && kind == IdentifierKind::Age && coin(rng) == 0)
            return predicate(kind, Operator::GreaterThan, std::to_string(std::uniform_int_distribution<int>(0, 99)(rng)));
        static constexpr Operator ops[] = {Operator::Matches, Operator::Equals, Operator::FuzzyMatches};
        return predicate(kind, ops[std::uniform_int_distribution<int>(0, 2)(rng)]);
    }
    std::vector<RuleNode> children(std::uniform_int_distribution<std::size_t>(2, 3)(rng));
    for (auto& c : children) c = random_ast(rng, depth - 1, kinds, allow_greater_than);
    return coin(rng) == 0 ? all_of(std::move(children)) : any_of(std::move(children));
}

inline std::size_t ast_depth(const RuleNode& n) {
    std::size_t d = 0;
    for (const auto& c : n.children) d = std::max(d, ast_depth(c));
    return d + 1;
}

inline std::size_t predicate_count(const RuleNode& n) {
    if (n.type == NodeType::Predicate) return 1;
    std::size_t k = 0;
    for (const auto& c : n.children) k += predicate_count(c);
    return k;
}

// Random valid CRML document. Identifier values are already normalized so
// the document survives a provider round-trip unchanged.
inline CRMLDocument random_document(std::mt19937_64& rng) {
    static const std::vector<IdentifierKind> rule_kinds(kAllIdentifierKinds.begin(), kAllIdentifierKinds.end());
    std::uniform_int_distribution<int> small(0, 4);
    CRMLDocument d;
    d.provider = "sbo." + random_word(rng, 1, 8) + ".com";
    d.account = random_word(rng, 1, 12, "abcdefghijklmnopqrstuvwxyz0123456789");
    d.issued_at = Timestamp{std::chrono::seconds(std::uniform_int_distribution<long long>(0, 4102444799LL)(rng))};
    const int lists = small(rng);
    for (int i = 0; i < lists; ++i) {
        BlockListRecord l;
        l.name = "List " + std::to_string(i) + " " + random_word(rng, 0, 6, "abc <>&\"'xyz");
        l.strictness = kAllStrictness[std::uniform_int_distribution<int>(0, 2)(rng)];
        l.rule_text = render_rule(random_ast(rng, 3, rule_kinds, true));
        const int contacts = small(rng);
        for (int j = 0; j < contacts; ++j) {
            ContactRecord c;
            c.contact_id = "c-" + std::to_string(100 + j);
            std::vector<IdentifierKind> kinds(kAllIdentifierKinds.begin(), kAllIdentifierKinds.end());
            std::shuffle(kinds.begin(), kinds.end(), rng);
            const auto n = std::uniform_int_distribution<std::size_t>(1, kinds.size())(rng);
            for (std::size_t k = 0; k < n; ++k) {
                switch (kinds[k]) {
                    case IdentifierKind::ProfileImage: c.identifiers.emplace(kinds[k], ImageHash{rng()}); break;
                    case IdentifierKind::Age: c.identifiers.emplace(kinds[k], std::to_string(small(rng) * 17)); break;
                    case IdentifierKind::PhoneNumber: c.identifiers.emplace(kinds[k], random_word(rng, 7, 12, "0123456789")); break;
                    default: {
                        const auto extra = encode_utf8(random_u32(rng, 4));
                        c.identifiers.emplace(kinds[k], random_word(rng, 1, 8) + (extra.empty() ? "" : " " + extra));
                    }
                }
            }
            l.contacts.push_back(std::move(c));
        }
        d.block_lists.push_back(std::move(l));
    }
    return d;
}

}  // namespace sbo::test
