#include "cxrlm/tokenizer.hpp"

#include <fstream>
#include <sstream>

namespace cxrlm::tok {

namespace {
const char* kSpecialNames[NUM_SPECIALS] = {"<pad>", "<sep>", "<bos>", "<eos>", "<unk>"};

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }
bool is_mark(char c) {
    switch (c) {
        case ':': case '@': case '/': case '{': case '}': case '=': case ',': case '#':
            return true;
        default:
            return false;
    }
}
} // namespace

Vocabulary::Vocabulary() {
    for (size_t i = 0; i < NUM_SPECIALS; ++i) {
        tokens_.emplace_back(kSpecialNames[i]);
        to_id_.emplace(kSpecialNames[i], static_cast<TokenId>(i));
    }
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus) {
    Vocabulary v;
    for (const auto& text : corpus)
        for (const auto& t : tokenize(text)) v.add(t);
    return v;
}

TokenId Vocabulary::add(const std::string& token) {
    auto it = to_id_.find(token);
    if (it != to_id_.end()) return it->second;
    TokenId id = static_cast<TokenId>(tokens_.size());
    tokens_.push_back(token);
    to_id_.emplace(token, id);
    return id;
}

TokenId Vocabulary::id_of(const std::string& token) const {
    auto it = to_id_.find(token);
    return it == to_id_.end() ? UNK : it->second;
}

const std::string& Vocabulary::token_of(TokenId id) const {
    if (id < 0 || static_cast<size_t>(id) >= tokens_.size())
        throw DataError("vocab: token id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<size_t>(id)];
}

TokenSeq Vocabulary::encode(const std::vector<std::string>& tokens) const {
    TokenSeq seq;
    seq.ids.reserve(tokens.size());
    for (const auto& t : tokens) seq.ids.push_back(id_of(t));
    return seq;
}

std::vector<std::string> Vocabulary::decode(const TokenSeq& seq) const {
    std::vector<std::string> out;
    out.reserve(seq.ids.size());
    for (TokenId id : seq.ids) out.push_back(token_of(id));
    return out;
}

TokenSeq Vocabulary::encode_text(const std::string& text) const { return encode(tokenize(text)); }

std::string Vocabulary::decode_text(const TokenSeq& seq) const {
    std::string out;
    for (size_t i = 0; i < seq.ids.size(); ++i) {
        if (i) out += ' ';
        out += token_of(seq.ids[i]);
    }
    return out;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("vocab: cannot write '" + path + "'");
    for (size_t i = 0; i < tokens_.size(); ++i) out << i << '\t' << tokens_[i] << '\n';
    if (!out) throw DataError("vocab: write failed for '" + path + "'");
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("vocab: cannot open '" + path + "'");
    Vocabulary v;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError("vocab: line " + std::to_string(line_no) + " has no tab");
        size_t id = 0;
        try {
            id = std::stoul(line.substr(0, tab));
        } catch (const std::exception&) {
            throw DataError("vocab: bad id on line " + std::to_string(line_no));
        }
        std::string token = line.substr(tab + 1);
        if (id < NUM_SPECIALS) {
            if (token != kSpecialNames[id])
                throw DataError("vocab: special id " + std::to_string(id) + " must be " +
                                kSpecialNames[id]);
            continue;
        }
        if (id != v.size())
            throw DataError("vocab: non-contiguous id on line " + std::to_string(line_no));
        v.add(token);
    }
    return v;
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    size_t i = 0;
    const size_t n = text.size();
    while (i < n) {
        char c = text[i];
        if (is_space(c)) {
            ++i;
            continue;
        }
        if (is_mark(c)) {
            out.emplace_back(1, c);
            ++i;
            continue;
        }
        if (c == '-' && i + 1 < n && text[i + 1] == '>') {
            out.emplace_back("->");
            i += 2;
            continue;
        }
        size_t start = i;
        while (i < n && !is_space(text[i]) && !is_mark(text[i]) &&
               !(text[i] == '-' && i + 1 < n && text[i + 1] == '>'))
            ++i;
        out.push_back(text.substr(start, i - start));
    }
    return out;
}

TokenSeq build_input(const TokenSeq& img, const TokenSeq& instr, size_t max_seq_len) {
    const size_t total = img.size() + instr.size() + 1;
    if (total > max_seq_len)
        throw DataError("input sequence length " + std::to_string(total) +
                        " exceeds max_seq_len " + std::to_string(max_seq_len));
    TokenSeq s;
    s.ids.reserve(total);
    s.ids.insert(s.ids.end(), img.ids.begin(), img.ids.end());
    s.ids.push_back(SEP);
    s.ids.insert(s.ids.end(), instr.ids.begin(), instr.ids.end());
    return s;
}

} // namespace cxrlm::tok
