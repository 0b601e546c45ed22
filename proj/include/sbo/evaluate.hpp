#pragma once

#include "sbo/errors.hpp"
#include "sbo/identifiers.hpp"
#include "sbo/normalize.hpp"
#include "sbo/rule.hpp"
#include "sbo/similarity.hpp"

#include <array>
#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

namespace sbo {

// Per-strictness match thresholds. Text: minimum similarity. Image: maximum
// Hamming distance. Indexed by Strictness.
struct Thresholds {
    std::array<double, 3> text{0.90, 0.75, 0.60};
    std::array<int, 3> image{4, 10, 16};

    double text_for(Strictness s) const { return text[static_cast<std::size_t>(s)]; }
    int image_for(Strictness s) const { return image[static_cast<std::size_t>(s)]; }

    // Strict must demand at least as much as Medium, Medium as much as Lenient.
    bool is_ordered() const {
        return text[0] >= text[1] && text[1] >= text[2] && image[0] <= image[1] &&
               image[1] <= image[2] && text[2] >= 0.0 && text[0] <= 1.0 && image[0] >= 0 &&
               image[2] <= 64;
    }

    friend bool operator==(const Thresholds&, const Thresholds&) = default;
};

// Absorbs rounding in 1 - d/n so that e.g. 1 - 4/10 still meets 0.60.
inline constexpr double kSimilarityEpsilon = 1e-12;

struct PredicateOutcome {
    IdentifierKind kind;
    Operator op;
    std::optional<double> score;      // similarity, Hamming distance, 0/1, or profile value
    std::optional<double> threshold;  // bound applied to `score`
    bool verdict = false;
    std::string note;  // "absent", "error: ..." or empty

    friend bool operator==(const PredicateOutcome&, const PredicateOutcome&) = default;
};

struct MatchResult {
    bool matched = false;
    std::vector<PredicateOutcome> trace;  // one entry per predicate, left to right
};

namespace detail {

// Compares two canonical digit strings numerically.
inline bool digits_greater(const std::string& a, const std::string& b) {
    const auto strip = [](const std::string& s) {
        const auto nz = s.find_first_not_of('0');
        return nz == std::string::npos ? std::string("0") : s.substr(nz);
    };
    const auto x = strip(a), y = strip(b);
    if (x.size() != y.size()) return x.size() > y.size();
    return x > y;
}

inline std::string normalized_text(IdentifierKind kind, const IdentifierValue& value) {
    const auto* text = std::get_if<std::string>(&value);
    if (!text) throw EvalError(std::string(to_string(kind)) + " carries an image hash, expected text");
    try {
        return normalize_identifier(kind, *text);
    } catch (const NormalizeError& e) {
        throw EvalError(e.what());
    }
}

inline ImageHash image_value(const IdentifierValue& value) {
    const auto* hash = std::get_if<ImageHash>(&value);
    if (!hash) throw EvalError("ProfileImage carries text, expected an image hash");
    return *hash;
}

inline PredicateOutcome evaluate_predicate(const RuleNode& p, const IdentifierMap& contact,
                                           const IdentifierMap& profile, Strictness strictness,
                                           const Thresholds& thresholds) {
    PredicateOutcome out{p.kind, p.op, std::nullopt, std::nullopt, false, {}};
    const auto c = contact.find(p.kind);
    const auto q = profile.find(p.kind);
    if (c == contact.end() || q == profile.end()) {
        out.note = "absent";
        return out;
    }

    switch (p.op) {
        case Operator::FuzzyMatches:
            strictness = Strictness::Lenient;
            [[fallthrough]];
        case Operator::Matches:
            if (p.kind == IdentifierKind::ProfileImage) {
                const int distance = image_distance(image_value(c->second), image_value(q->second));
                const int bound = thresholds.image_for(strictness);
                out.score = distance;
                out.threshold = bound;
                out.verdict = distance <= bound;
            } else {
                const double sim = text_similarity(normalized_text(p.kind, c->second),
                                                   normalized_text(p.kind, q->second));
                const double bound = thresholds.text_for(strictness);
                out.score = sim;
                out.threshold = bound;
                out.verdict = sim >= bound - kSimilarityEpsilon;
            }
            break;
        case Operator::Equals:
            if (p.kind == IdentifierKind::ProfileImage)
                out.verdict = image_value(c->second) == image_value(q->second);
            else
                out.verdict =
                    normalized_text(p.kind, c->second) == normalized_text(p.kind, q->second);
            out.score = out.verdict ? 1.0 : 0.0;
            out.threshold = 1.0;
            break;
        case Operator::GreaterThan: {
            if (p.kind != IdentifierKind::Age || !p.literal)
                throw EvalError("GREATERTHAN requires Age and a literal");
            const std::string value = normalized_text(p.kind, q->second);
            out.score = std::strtod(value.c_str(), nullptr);
            out.threshold = std::strtod(p.literal->c_str(), nullptr);
            out.verdict = digits_greater(value, *p.literal);
            break;
        }
    }
    return out;
}

inline bool fold(const RuleNode& node, const std::vector<PredicateOutcome>& trace, std::size_t& next) {
    if (node.type == NodeType::Predicate) return trace[next++].verdict;
    // Every child is visited; no short-circuit.
    bool acc = node.type == NodeType::And;
    for (const auto& child : node.children) {
        const bool v = fold(child, trace, next);
        acc = node.type == NodeType::And ? (acc && v) : (acc || v);
    }
    return acc;
}

}  // namespace detail

// Evaluates `ast` for one contact/profile pair. Every predicate is evaluated
// and traced. A kind missing on either side makes its predicate false.
// Throws EvalError on type mismatches (e.g. a non-numeric Age).
inline MatchResult evaluate_rule(const RuleAST& ast, const ContactRecord& contact,
                                 const Profile& profile, Strictness strictness,
                                 const Thresholds& thresholds = {}) {
    MatchResult result;
    for_each_predicate(ast, [&](const RuleNode& p) {
        result.trace.push_back(detail::evaluate_predicate(p, contact.identifiers, profile.identifiers,
                                                          strictness, thresholds));
    });
    std::size_t next = 0;
    result.matched = detail::fold(ast, result.trace, next);
    return result;
}

}  // namespace sbo
