#pragma once

#include "sbo/errors.hpp"
#include "sbo/identifiers.hpp"

#include <cctype>
#include <string>
#include <string_view>

namespace sbo {

namespace detail {

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

inline std::string ascii_lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

inline std::string collapse_spaces(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending = false;
    for (char c : trim(s)) {
        if (is_space(c)) {
            pending = true;
            continue;
        }
        if (pending) out.push_back(' ');
        pending = false;
        out.push_back(c);
    }
    return out;
}

}  // namespace detail

// Canonical text form used for matching and storage. Idempotent.
// Case folding is ASCII-only; non-ASCII bytes pass through unchanged.
inline std::string normalize_identifier(IdentifierKind kind, std::string_view raw) {
    using detail::ascii_lower;
    switch (kind) {
        case IdentifierKind::EmailId:
        case IdentifierKind::Username:
        case IdentifierKind::Gender:
            return ascii_lower(detail::trim(raw));
        case IdentifierKind::PhoneNumber: {
            std::string digits;
            for (char c : raw)
                if (c >= '0' && c <= '9') digits.push_back(c);
            return digits;
        }
        case IdentifierKind::FullName:
        case IdentifierKind::Location:
        case IdentifierKind::Biodata:
            return ascii_lower(detail::collapse_spaces(raw));
        case IdentifierKind::Age: {
            std::string digits;
            for (char c : raw) {
                if (detail::is_space(c)) continue;
                if (c < '0' || c > '9')
                    throw NormalizeError("Age must be a non-negative integer, got '" + std::string(raw) + "'");
                digits.push_back(c);
            }
            if (digits.empty()) throw NormalizeError("Age is empty");
            return digits;
        }
        case IdentifierKind::ProfileImage:
            break;
    }
    throw NormalizeError("ProfileImage is not a textual identifier");
}

// Normalizes every textual value; image hashes are passed through.
inline IdentifierMap normalize_identifiers(const IdentifierMap& ids) {
    IdentifierMap out;
    for (const auto& [kind, value] : ids) {
        if (const auto* text = std::get_if<std::string>(&value))
            out.emplace(kind, normalize_identifier(kind, *text));
        else
            out.emplace(kind, value);
    }
    return out;
}

}  // namespace sbo
