// Copyright (c) 2026, peftport authors
// SPDX-License-Identifier: Apache-2.0
//

#include "peftport/vocab.h"

#include <sstream>

#include "peftport/errors.h"

namespace peftport {

Vocabulary::Vocabulary() {
    add("<pad>");
    add("</s>");
    add("<unk>");
}

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
    if (words.size() < 3 || words[0] != "<pad>" || words[1] != "</s>" || words[2] != "<unk>") {
        fail(ErrorKind::InvalidArgument, "vocabulary must start with <pad>, </s>, <unk>");
    }
    for (const auto& w : words) {
        if (contains(w)) {
            fail(ErrorKind::InvalidArgument, "duplicate vocabulary entry '" + w + "'");
        }
        add(w);
    }
}

TokenId Vocabulary::add(std::string_view word) {
    if (auto it = index_.find(std::string(word)); it != index_.end()) {
        return it->second;
    }
    const auto id = static_cast<TokenId>(words_.size());
    words_.emplace_back(word);
    index_.emplace(words_.back(), id);
    return id;
}

TokenId Vocabulary::id(std::string_view word) const {
    auto it = index_.find(std::string(word));
    return it == index_.end() ? kUnkId : it->second;
}

bool Vocabulary::contains(std::string_view word) const {
    return index_.count(std::string(word)) != 0;
}

const std::string& Vocabulary::word(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
        fail(ErrorKind::IndexOutOfVocab, "token id " + std::to_string(id));
    }
    return words_[static_cast<std::size_t>(id)];
}

TokenSeq Vocabulary::encode(std::string_view text) const {
    TokenSeq out;
    std::istringstream is{std::string(text)};
    std::string w;
    while (is >> w) {
        out.push_back(id(w));
    }
    return out;
}

std::string Vocabulary::decode(const TokenSeq& ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) {
            out += ' ';
        }
        out += word(ids[i]);
    }
    return out;
}

}  // namespace peftport
