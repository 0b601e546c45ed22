#pragma once

#include "sbo/errors.hpp"

#include <algorithm>
#include <array>
#include <initializer_list>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace sbo {

enum class IdentifierKind {
    FullName,
    EmailId,
    PhoneNumber,
    ProfileImage,
    Username,
    Gender,
    Age,
    Location,
    Biodata,
};

inline constexpr std::array<IdentifierKind, 9> kAllIdentifierKinds = {
    IdentifierKind::FullName, IdentifierKind::EmailId,  IdentifierKind::PhoneNumber,
    IdentifierKind::ProfileImage, IdentifierKind::Username, IdentifierKind::Gender,
    IdentifierKind::Age,      IdentifierKind::Location, IdentifierKind::Biodata,
};

inline std::string_view to_string(IdentifierKind kind) {
    switch (kind) {
        case IdentifierKind::FullName:     return "FullName";
        case IdentifierKind::EmailId:      return "EmailId";
        case IdentifierKind::PhoneNumber:  return "PhoneNumber";
        case IdentifierKind::ProfileImage: return "ProfileImage";
        case IdentifierKind::Username:     return "Username";
        case IdentifierKind::Gender:       return "Gender";
        case IdentifierKind::Age:          return "Age";
        case IdentifierKind::Location:     return "Location";
        case IdentifierKind::Biodata:      return "Biodata";
    }
    return "?";
}

// Exact wire-name lookup (case-sensitive).
inline std::optional<IdentifierKind> identifier_kind_from_wire(std::string_view name) {
    for (auto kind : kAllIdentifierKinds)
        if (to_string(kind) == name) return kind;
    return std::nullopt;
}

// 64-bit average hash of a profile image.
struct ImageHash {
    std::uint64_t bits = 0;
    friend bool operator==(const ImageHash&, const ImageHash&) = default;
    friend auto operator<=>(const ImageHash&, const ImageHash&) = default;
};

// 16 lowercase hex characters, most significant nibble first.
inline std::string to_hex(ImageHash hash) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[hash.bits & 0xfu];
        hash.bits >>= 4;
    }
    return out;
}

// Accepts exactly 16 lowercase hex characters.
inline std::optional<ImageHash> image_hash_from_hex(std::string_view hex) {
    if (hex.size() != 16) return std::nullopt;
    std::uint64_t bits = 0;
    for (char c : hex) {
        unsigned nibble;
        if (c >= '0' && c <= '9')
            nibble = static_cast<unsigned>(c - '0');
        else if (c >= 'a' && c <= 'f')
            nibble = static_cast<unsigned>(c - 'a' + 10);
        else
            return std::nullopt;
        bits = (bits << 4) | nibble;
    }
    return ImageHash{bits};
}

using IdentifierValue = std::variant<std::string, ImageHash>;

// Identifier bag keyed by kind. Keeps insertion order (the wire order of a
// parsed document) and holds each kind at most once.
class IdentifierMap {
public:
    using value_type = std::pair<IdentifierKind, IdentifierValue>;
    using const_iterator = std::vector<value_type>::const_iterator;

    IdentifierMap() = default;
    IdentifierMap(std::initializer_list<value_type> items) {
        for (const auto& item : items) insert_or_assign(item.first, item.second);
    }

    const_iterator begin() const { return items_.begin(); }
    const_iterator end() const { return items_.end(); }
    std::size_t size() const { return items_.size(); }
    bool empty() const { return items_.empty(); }

    const_iterator find(IdentifierKind kind) const {
        return std::find_if(items_.begin(), items_.end(),
                            [kind](const value_type& v) { return v.first == kind; });
    }
    bool contains(IdentifierKind kind) const { return find(kind) != end(); }

    const IdentifierValue* get(IdentifierKind kind) const {
        const auto it = find(kind);
        return it == end() ? nullptr : &it->second;
    }

    // Returns false (and leaves the map unchanged) if `kind` is already present.
    bool emplace(IdentifierKind kind, IdentifierValue value) {
        if (contains(kind)) return false;
        items_.emplace_back(kind, std::move(value));
        return true;
    }

    void insert_or_assign(IdentifierKind kind, IdentifierValue value) {
        for (auto& item : items_) {
            if (item.first == kind) {
                item.second = std::move(value);
                return;
            }
        }
        items_.emplace_back(kind, std::move(value));
    }

    bool erase(IdentifierKind kind) {
        const auto it = std::find_if(items_.begin(), items_.end(),
                                     [kind](const value_type& v) { return v.first == kind; });
        if (it == items_.end()) return false;
        items_.erase(it);
        return true;
    }

    friend bool operator==(const IdentifierMap&, const IdentifierMap&) = default;

private:
    std::vector<value_type> items_;
};

inline bool holds_text(const IdentifierValue& v) { return std::holds_alternative<std::string>(v); }

// ProfileImage carries an ImageHash; every other kind carries text.
inline bool value_shape_matches(IdentifierKind kind, const IdentifierValue& value) {
    return (kind == IdentifierKind::ProfileImage) != holds_text(value);
}

enum class Strictness { Strict, Medium, Lenient };

inline std::string_view to_string(Strictness s) {
    switch (s) {
        case Strictness::Strict:  return "Strict";
        case Strictness::Medium:  return "Medium";
        case Strictness::Lenient: return "Lenient";
    }
    return "?";
}

inline std::optional<Strictness> strictness_from_wire(std::string_view name) {
    if (name == "Strict") return Strictness::Strict;
    if (name == "Medium") return Strictness::Medium;
    if (name == "Lenient") return Strictness::Lenient;
    return std::nullopt;
}

inline constexpr std::array<Strictness, 3> kAllStrictness = {
    Strictness::Strict, Strictness::Medium, Strictness::Lenient};

// A blocked entry in a list.
struct ContactRecord {
    std::string contact_id;
    IdentifierMap identifiers;
    friend bool operator==(const ContactRecord&, const ContactRecord&) = default;
};

// A candidate application user checked against block lists.
struct Profile {
    std::string profile_id;
    IdentifierMap identifiers;
    friend bool operator==(const Profile&, const Profile&) = default;
};

}  // namespace sbo
