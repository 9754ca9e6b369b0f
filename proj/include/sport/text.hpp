#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace sport {

/// Lower-cased whitespace tokenization with every punctuation character split
/// off as its own token: "Put A left of B." -> {put, a, left, of, b, .}.
std::vector<std::string> tokenize(std::string_view text);

/// Same as tokenize() with punctuation tokens removed.
std::vector<std::string> word_tokens(std::string_view text);

}  // namespace sport
