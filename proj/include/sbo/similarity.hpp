#pragma once

#include "sbo/identifiers.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace sbo {

namespace detail {

// Splits UTF-8 into code points. Bytes that do not start a well-formed
// sequence are kept as single units so every input has a decoding.
inline std::vector<char32_t> decode_utf8(std::string_view s) {
    std::vector<char32_t> out;
    out.reserve(s.size());
    std::size_t i = 0;
    while (i < s.size()) {
        const auto b0 = static_cast<unsigned char>(s[i]);
        std::size_t len = 1;
        char32_t cp = b0;
        if (b0 >= 0xC2 && b0 <= 0xDF) {
            len = 2;
            cp = b0 & 0x1Fu;
        } else if (b0 >= 0xE0 && b0 <= 0xEF) {
            len = 3;
            cp = b0 & 0x0Fu;
        } else if (b0 >= 0xF0 && b0 <= 0xF4) {
            len = 4;
            cp = b0 & 0x07u;
        }
        bool ok = len == 1 || i + len <= s.size();
        for (std::size_t k = 1; ok && k < len; ++k) {
            const auto b = static_cast<unsigned char>(s[i + k]);
            if ((b & 0xC0u) != 0x80u)
                ok = false;
            else
                cp = (cp << 6) | (b & 0x3Fu);
        }
        if (!ok) {
            len = 1;
            cp = 0xDC00u + b0;  // lone byte, mapped out of the valid range
        }
        out.push_back(cp);
        i += len;
    }
    return out;
}

}  // namespace detail

// Unit-cost edit distance (insert, delete, substitute) over code points.
inline std::size_t levenshtein(std::string_view a, std::string_view b) {
    auto s = detail::decode_utf8(a);
    auto t = detail::decode_utf8(b);

    // Common prefix and suffix never contribute to the distance.
    std::size_t lo = 0;
    while (lo < s.size() && lo < t.size() && s[lo] == t[lo]) ++lo;
    std::size_t s_hi = s.size(), t_hi = t.size();
    while (s_hi > lo && t_hi > lo && s[s_hi - 1] == t[t_hi - 1]) {
        --s_hi;
        --t_hi;
    }
    std::basic_string_view<char32_t> x(s.data() + lo, s_hi - lo);
    std::basic_string_view<char32_t> y(t.data() + lo, t_hi - lo);
    if (x.size() < y.size()) std::swap(x, y);
    if (y.empty()) return x.size();

    std::vector<std::size_t> row(y.size() + 1);
    for (std::size_t j = 0; j <= y.size(); ++j) row[j] = j;
    for (std::size_t i = 1; i <= x.size(); ++i) {
        std::size_t diag = row[0];
        row[0] = i;
        for (std::size_t j = 1; j <= y.size(); ++j) {
            const std::size_t up = row[j];
            row[j] = std::min({up + 1, row[j - 1] + 1, diag + (x[i - 1] == y[j - 1] ? 0u : 1u)});
            diag = up;
        }
    }
    return row[y.size()];
}

inline std::size_t code_point_length(std::string_view s) { return detail::decode_utf8(s).size(); }

// 1 - levenshtein / max length, in [0, 1]. Both empty is a perfect match.
inline double text_similarity(std::string_view a, std::string_view b) {
    const std::size_t longest = std::max(code_point_length(a), code_point_length(b));
    if (longest == 0) return 1.0;
    return 1.0 - static_cast<double>(levenshtein(a, b)) / static_cast<double>(longest);
}

// Hamming distance between two average hashes, in [0, 64].
inline int image_distance(ImageHash a, ImageHash b) { return std::popcount(a.bits ^ b.bits); }

using GrayGrid8 = std::array<std::array<std::uint8_t, 8>, 8>;

// Average hash of an 8x8 grayscale grid: bit set where pixel > mean.
// Row-major, first pixel is the most significant bit. The mean comparison
// is done on integer sums, so there is no rounding.
inline ImageHash average_hash(const GrayGrid8& grid) {
    unsigned sum = 0;
    for (const auto& row : grid)
        for (auto px : row) sum += px;
    std::uint64_t bits = 0;
    for (const auto& row : grid)
        for (auto px : row) bits = (bits << 1) | (static_cast<unsigned>(px) * 64u > sum ? 1u : 0u);
    return ImageHash{bits};
}

}  // namespace sbo
