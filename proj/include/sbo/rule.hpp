#pragma once

#include "sbo/errors.hpp"
#include "sbo/identifiers.hpp"
#include "sbo/normalize.hpp"

#include <cctype>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sbo {

enum class Operator { Matches, Equals, FuzzyMatches, GreaterThan };

inline std::string_view to_string(Operator op) {
    switch (op) {
        case Operator::Matches:      return "MATCHES";
        case Operator::Equals:       return "EQUALS";
        case Operator::FuzzyMatches: return "FUZZYMATCHES";
        case Operator::GreaterThan:  return "GREATERTHAN";
    }
    return "?";
}

enum class NodeType { Or, And, Predicate };

// Boolean matching expression. Or/And nodes own two or more children;
// predicate nodes own none and use kind/op/literal.
struct RuleNode {
    NodeType type = NodeType::Predicate;
    std::vector<RuleNode> children;
    IdentifierKind kind = IdentifierKind::FullName;
    Operator op = Operator::Matches;
    std::optional<std::string> literal;  // GREATERTHAN only, canonical digits

    friend bool operator==(const RuleNode&, const RuleNode&) = default;
};

using RuleAST = RuleNode;

inline RuleNode predicate(IdentifierKind kind, Operator op, std::optional<std::string> literal = {}) {
    RuleNode n;
    n.type = NodeType::Predicate;
    n.kind = kind;
    n.op = op;
    n.literal = std::move(literal);
    return n;
}

inline RuleNode all_of(std::vector<RuleNode> children) {
    RuleNode n;
    n.type = NodeType::And;
    n.children = std::move(children);
    return n;
}

inline RuleNode any_of(std::vector<RuleNode> children) {
    RuleNode n;
    n.type = NodeType::Or;
    n.children = std::move(children);
    return n;
}

// Calls `fn` on every predicate in left-to-right order.
template <typename Fn>
void for_each_predicate(const RuleNode& node, Fn&& fn) {
    if (node.type == NodeType::Predicate) {
        fn(node);
        return;
    }
    for (const auto& child : node.children) for_each_predicate(child, fn);
}

namespace detail {

// Lowercase compact spellings and common aliases.
inline std::optional<IdentifierKind> lookup_kind_name(std::string_view compact_lower) {
    struct Alias {
        std::string_view name;
        IdentifierKind kind;
    };
    static constexpr Alias aliases[] = {
        {"fullname", IdentifierKind::FullName},       {"name", IdentifierKind::FullName},
        {"emailid", IdentifierKind::EmailId},         {"email", IdentifierKind::EmailId},
        {"phonenumber", IdentifierKind::PhoneNumber}, {"phone", IdentifierKind::PhoneNumber},
        {"profileimage", IdentifierKind::ProfileImage},
        {"photograph", IdentifierKind::ProfileImage}, {"photo", IdentifierKind::ProfileImage},
        {"profilepicture", IdentifierKind::ProfileImage},
        {"username", IdentifierKind::Username},       {"gender", IdentifierKind::Gender},
        {"age", IdentifierKind::Age},                 {"location", IdentifierKind::Location},
        {"biodata", IdentifierKind::Biodata},         {"bio", IdentifierKind::Biodata},
    };
    for (const auto& a : aliases)
        if (a.name == compact_lower) return a.kind;
    return std::nullopt;
}

class RuleParser {
public:
    explicit RuleParser(std::string_view text) : text_(text) { tokenize(); }

    RuleNode parse() {
        if (tokens_.size() == 1) fail("empty rule", {"(", "identifier"});
        RuleNode root = parse_or();
        if (peek().kind != Tok::End) {
            if (peek().kind == Tok::RParen) fail("unbalanced ')'", {"AND", "OR", "end of input"});
            fail("unexpected '" + peek().text + "'", {"AND", "OR", "end of input"});
        }
        return root;
    }

private:
    enum class Tok { LParen, RParen, Word, Integer, End };
    struct Token {
        Tok kind;
        std::string text;
        std::size_t pos;
    };

    std::string_view text_;
    std::vector<Token> tokens_;
    std::size_t at_ = 0;

    void tokenize() {
        std::size_t i = 0;
        while (i < text_.size()) {
            const char c = text_[i];
            if (std::isspace(static_cast<unsigned char>(c))) {
                ++i;
            } else if (c == '(') {
                tokens_.push_back({Tok::LParen, "(", i++});
            } else if (c == ')') {
                tokens_.push_back({Tok::RParen, ")", i++});
            } else if (std::isalnum(static_cast<unsigned char>(c)) || c == '_') {
                const std::size_t start = i;
                bool digits = true;
                while (i < text_.size() &&
                       (std::isalnum(static_cast<unsigned char>(text_[i])) || text_[i] == '_')) {
                    digits = digits && std::isdigit(static_cast<unsigned char>(text_[i]));
                    ++i;
                }
                tokens_.push_back({digits ? Tok::Integer : Tok::Word,
                                   std::string(text_.substr(start, i - start)), start});
            } else {
                throw ParseError("unexpected character '" + std::string(1, c) + "' at position " +
                                     std::to_string(i),
                                 i, {"(", ")", "identifier", "keyword"});
            }
        }
        tokens_.push_back({Tok::End, "", text_.size()});
    }

    const Token& peek() const { return tokens_[at_]; }
    const Token& advance() { return tokens_[at_++]; }

    [[noreturn]] void fail(const std::string& what, std::vector<std::string> expected) const {
        const auto pos = peek().pos;
        std::string message = what + " at position " + std::to_string(pos) + "; expected one of:";
        for (const auto& e : expected) message += " " + e;
        throw ParseError(message, pos, std::move(expected));
    }

    static std::string upper(std::string_view s) {
        std::string out(s);
        for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        return out;
    }

    bool at_keyword(std::string_view kw) const {
        return peek().kind == Tok::Word && upper(peek().text) == kw;
    }

    static bool is_reserved(const std::string& upper_word) {
        return upper_word == "AND" || upper_word == "OR" || upper_word == "MATCHES" ||
               upper_word == "EQUALS" || upper_word == "FUZZYMATCHES" ||
               upper_word == "GREATERTHAN" || upper_word == "GREATER" || upper_word == "THAN";
    }

    RuleNode parse_or() {
        std::vector<RuleNode> terms;
        terms.push_back(parse_and());
        while (at_keyword("OR")) {
            advance();
            terms.push_back(parse_and());
        }
        return terms.size() == 1 ? std::move(terms.front()) : any_of(std::move(terms));
    }

    RuleNode parse_and() {
        std::vector<RuleNode> factors;
        factors.push_back(parse_primary());
        while (at_keyword("AND")) {
            advance();
            factors.push_back(parse_primary());
        }
        return factors.size() == 1 ? std::move(factors.front()) : all_of(std::move(factors));
    }

    RuleNode parse_primary() {
        if (peek().kind == Tok::LParen) {
            advance();
            RuleNode inner = parse_or();
            if (peek().kind != Tok::RParen) fail("unbalanced '('", {")", "AND", "OR"});
            advance();
            return inner;
        }
        return parse_predicate();
    }

    RuleNode parse_predicate() {
        if (peek().kind != Tok::Word || is_reserved(upper(peek().text))) {
            if (peek().kind == Tok::End) fail("dangling operator", {"(", "identifier"});
            fail("unexpected '" + peek().text + "'", {"(", "identifier"});
        }
        const std::size_t name_at = at_;
        std::string compact;
        std::string spelled;
        while (peek().kind == Tok::Word && !is_reserved(upper(peek().text))) {
            compact += ascii_lower(peek().text);
            spelled += (spelled.empty() ? "" : " ") + peek().text;
            advance();
        }
        const auto kind = lookup_kind_name(compact);
        if (!kind) {
            at_ = name_at;
            fail("unknown identifier '" + spelled + "'", {"identifier"});
        }

        Operator op;
        std::optional<std::string> literal;
        if (at_keyword("MATCHES")) {
            op = Operator::Matches;
            advance();
        } else if (at_keyword("EQUALS")) {
            op = Operator::Equals;
            advance();
        } else if (at_keyword("FUZZYMATCHES")) {
            op = Operator::FuzzyMatches;
            advance();
        } else if (at_keyword("GREATERTHAN") || at_keyword("GREATER")) {
            op = Operator::GreaterThan;
            if (upper(advance().text) == "GREATER") {
                if (!at_keyword("THAN")) fail("expected THAN after GREATER", {"THAN"});
                advance();
            }
            if (peek().kind != Tok::Integer) fail("missing GREATERTHAN literal", {"integer"});
            std::string digits = advance().text;
            const auto nz = digits.find_first_not_of('0');
            literal = nz == std::string::npos ? "0" : digits.substr(nz);
            if (*kind != IdentifierKind::Age) {
                at_ = name_at;
                fail("GREATERTHAN applies only to Age", {"MATCHES", "EQUALS", "FUZZYMATCHES"});
            }
        } else {
            fail("expected operator after '" + spelled + "'",
                 {"MATCHES", "EQUALS", "FUZZYMATCHES", "GREATERTHAN"});
        }
        return predicate(*kind, op, std::move(literal));
    }
};

inline void render_into(const RuleNode& node, std::string& out) {
    if (node.type == NodeType::Predicate) {
        out += to_string(node.kind);
        out += ' ';
        out += to_string(node.op);
        if (node.literal) {
            out += ' ';
            out += *node.literal;
        }
        return;
    }
    const std::string_view sep = node.type == NodeType::And ? " AND " : " OR ";
    for (std::size_t i = 0; i < node.children.size(); ++i) {
        if (i) out += sep;
        const auto& child = node.children[i];
        if (child.type == NodeType::Predicate) {
            render_into(child, out);
        } else {
            out += '(';
            render_into(child, out);
            out += ')';
        }
    }
}

}  // namespace detail

// Grammar:
//   expr    := and_expr ("OR" and_expr)*
//   and_expr:= primary ("AND" primary)*
//   primary := "(" expr ")" | kind_name op
// Kind names are case-insensitive and may be spaced ("Full Name") or
// compact ("FullName"). Parenthesized groups stay separate nodes.
inline RuleAST parse_rule(std::string_view text) { return detail::RuleParser(text).parse(); }

// Canonical source: compact kind names, single spaces, parentheses around
// compound operands only. parse_rule(render_rule(a)) == a.
inline std::string render_rule(const RuleAST& ast) {
    std::string out;
    detail::render_into(ast, out);
    return out;
}

inline constexpr std::string_view kDefaultRuleText =
    "(EmailId EQUALS) OR (PhoneNumber EQUALS) OR (Username MATCHES AND FullName MATCHES)";

// Rule a provider assigns to lists created without one.
inline RuleAST default_rule() {
    return any_of({
        predicate(IdentifierKind::EmailId, Operator::Equals),
        predicate(IdentifierKind::PhoneNumber, Operator::Equals),
        all_of({predicate(IdentifierKind::Username, Operator::Matches),
                predicate(IdentifierKind::FullName, Operator::Matches)}),
    });
}

// Structural invariants a hand-built AST must satisfy.
inline bool is_well_formed(const RuleNode& node) {
    if (node.type == NodeType::Predicate) {
        if (!node.children.empty()) return false;
        if (node.op == Operator::GreaterThan)
            return node.kind == IdentifierKind::Age && node.literal.has_value();
        return !node.literal.has_value();
    }
    if (node.children.size() < 2) return false;
    for (const auto& c : node.children)
        if (!is_well_formed(c)) return false;
    return true;
}

}  // namespace sbo
