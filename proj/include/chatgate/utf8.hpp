#pragma once

#include <string>
#include <string_view>

namespace chatgate::utf8 {

// Invalid byte sequences decode to U+FFFD.
std::u32string decode(std::string_view bytes);
std::string encode(std::u32string_view text);
std::string encode(char32_t cp);

// Number of code points.
std::size_t length(std::string_view bytes);

std::string trim(std::string_view text);

// NFKC, lowercase, trim, collapse internal whitespace runs to one space.
std::string normalize_query(std::string_view text);

}  // namespace chatgate::utf8
