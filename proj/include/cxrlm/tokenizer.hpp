#pragma once

#include "cxrlm/errors.hpp"

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace cxrlm::tok {

using TokenId = int32_t;

// Special token ids are fixed at the head of every vocabulary.
inline constexpr TokenId PAD = 0;
inline constexpr TokenId SEP = 1;
inline constexpr TokenId BOS = 2;
inline constexpr TokenId EOS = 3;
inline constexpr TokenId UNK = 4;
inline constexpr size_t NUM_SPECIALS = 5;

struct TokenSeq {
    std::vector<TokenId> ids;

    bool operator==(const TokenSeq&) const = default;
    size_t size() const { return ids.size(); }
};

// Word-level vocabulary; bijection between token strings and ids, specials first.
class Vocabulary {
public:
    Vocabulary();

    static Vocabulary build(const std::vector<std::string>& corpus);

    TokenId add(const std::string& token); // returns existing id if present
    TokenId id_of(const std::string& token) const; // UNK when absent
    const std::string& token_of(TokenId id) const;
    bool contains(const std::string& token) const { return to_id_.count(token) > 0; }
    size_t size() const { return tokens_.size(); }

    TokenSeq encode(const std::vector<std::string>& tokens) const;
    std::vector<std::string> decode(const TokenSeq& seq) const;
    TokenSeq encode_text(const std::string& text) const;
    std::string decode_text(const TokenSeq& seq) const; // tokens joined by single spaces

    void save(const std::string& path) const; // "id<TAB>token" lines
    static Vocabulary load(const std::string& path);

    bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> to_id_;
};

// Splits on whitespace; the punctuation marks of the findings grammar
// (: @ / { } = , -> #) are standalone tokens.
std::vector<std::string> tokenize(const std::string& text);

// S = [img, SEP, instr]; throws DataError when L+M+1 exceeds max_seq_len.
TokenSeq build_input(const TokenSeq& img, const TokenSeq& instr, size_t max_seq_len);

} // namespace cxrlm::tok
