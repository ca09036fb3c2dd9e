// Copyright (c) 2026, peftport authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace peftport {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kEosId = 1;
inline constexpr TokenId kUnkId = 2;

// Closed whitespace vocabulary. Ids 0..2 are <pad>, </s>, <unk>.
class Vocabulary {
public:
    Vocabulary();
    explicit Vocabulary(const std::vector<std::string>& words);

    // Returns the id of `word`, adding it if absent.
    TokenId add(std::string_view word);
    TokenId id(std::string_view word) const;  // kUnkId when absent
    bool contains(std::string_view word) const;
    const std::string& word(TokenId id) const;
    std::size_t size() const noexcept { return words_.size(); }
    const std::vector<std::string>& words() const noexcept { return words_; }

    TokenSeq encode(std::string_view text) const;
    std::string decode(const TokenSeq& ids) const;

    bool operator==(const Vocabulary& other) const { return words_ == other.words_; }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, TokenId> index_;
};

}  // namespace peftport
