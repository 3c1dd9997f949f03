#include "remifill/token.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace remifill {

namespace {

struct Row {
    TokenKind kind;
    int base_id;
    int count;
};

// Dense-id layout, frozen. Bar 0..31, Struct 32..47, Tempo 48..94,
// Position 95..110, Pitch 111..196, Duration 197..212, specials 213..215.
constexpr Row kRows[] = {
    {TokenKind::Bar, 0, 32},       {TokenKind::Struct, 32, 16},
    {TokenKind::Tempo, 48, 47},    {TokenKind::Position, 95, 16},
    {TokenKind::Pitch, 111, 86},   {TokenKind::Duration, 197, 16},
};

int value_slot(const Token& token) {
    using R = TokenRanges;
    switch (token.kind) {
    case TokenKind::Bar: return token.value - R::kBarMin;
    case TokenKind::Struct: return token.value - R::kStructMin;
    case TokenKind::Tempo:
        if ((token.value - R::kTempoMin) % R::kTempoStep != 0) return -1;
        return (token.value - R::kTempoMin) / R::kTempoStep;
    case TokenKind::Position: return token.value - R::kPositionMin;
    case TokenKind::Pitch: return token.value - R::kPitchMin;
    case TokenKind::Duration: return token.value - R::kDurationMin;
    default: return -1;
    }
}

int slot_value(TokenKind kind, int slot) {
    using R = TokenRanges;
    switch (kind) {
    case TokenKind::Bar: return slot + R::kBarMin;
    case TokenKind::Struct: return slot + R::kStructMin;
    case TokenKind::Tempo: return slot * R::kTempoStep + R::kTempoMin;
    case TokenKind::Position: return slot + R::kPositionMin;
    case TokenKind::Pitch: return slot + R::kPitchMin;
    case TokenKind::Duration: return slot + R::kDurationMin;
    default: return 0;
    }
}

} // namespace

const char* kind_name(TokenKind kind) {
    switch (kind) {
    case TokenKind::Bar: return "BAR";
    case TokenKind::Struct: return "STRUCT";
    case TokenKind::Tempo: return "TEMPO";
    case TokenKind::Position: return "POS";
    case TokenKind::Pitch: return "PITCH";
    case TokenKind::Duration: return "DUR";
    case TokenKind::Bos: return "BOS";
    case TokenKind::Sep: return "SEP";
    case TokenKind::Eos: return "EOS";
    }
    return "?";
}

bool is_special(TokenKind kind) {
    return kind == TokenKind::Bos || kind == TokenKind::Sep || kind == TokenKind::Eos;
}

int snap_tempo(double bpm) {
    using R = TokenRanges;
    if (bpm <= R::kTempoMin) return R::kTempoMin;
    if (bpm >= R::kTempoMax) return R::kTempoMax;
    int below = R::kTempoMin + static_cast<int>((bpm - R::kTempoMin) / R::kTempoStep) * R::kTempoStep;
    int above = below + R::kTempoStep;
    // Ties snap downward.
    return (bpm - below <= above - bpm) ? below : above;
}

int Vocabulary::id_of(const Token& token) const {
    if (token.kind == TokenKind::Bos) return bos_id();
    if (token.kind == TokenKind::Sep) return sep_id();
    if (token.kind == TokenKind::Eos) return eos_id();
    for (const Row& row : kRows) {
        if (row.kind != token.kind) continue;
        int slot = value_slot(token);
        if (slot < 0 || slot >= row.count)
            throw RangeError(std::string(kind_name(token.kind)) + " value " +
                             std::to_string(token.value) + " out of range");
        return row.base_id + slot;
    }
    throw RangeError("unknown token kind");
}

Token Vocabulary::token_of(int id) const {
    if (id == bos_id()) return bos_token();
    if (id == sep_id()) return sep_token();
    if (id == eos_id()) return eos_token();
    for (const Row& row : kRows) {
        if (id >= row.base_id && id < row.base_id + row.count)
            return {row.kind, slot_value(row.kind, id - row.base_id)};
    }
    throw RangeError("token id " + std::to_string(id) + " out of range");
}

bool Vocabulary::contains(const Token& token) const {
    try {
        (void)id_of(token);
        return true;
    } catch (const RangeError&) {
        return false;
    }
}

std::vector<int> ids_of(const Vocabulary& vocab, const TokenSeq& seq) {
    std::vector<int> ids;
    ids.reserve(seq.size());
    for (const Token& t : seq) ids.push_back(vocab.id_of(t));
    return ids;
}

std::string token_text(const Token& token) {
    if (is_special(token.kind)) return kind_name(token.kind);
    return std::string(kind_name(token.kind)) + "(" + std::to_string(token.value) + ")";
}

std::string seq_to_text(const TokenSeq& seq) {
    std::string out;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (i) out += ' ';
        out += token_text(seq[i]);
    }
    return out;
}

namespace {

TokenKind kind_from_name(std::string_view name, std::size_t word_index) {
    for (TokenKind k : {TokenKind::Bar, TokenKind::Struct, TokenKind::Tempo,
                        TokenKind::Position, TokenKind::Pitch, TokenKind::Duration,
                        TokenKind::Bos, TokenKind::Sep, TokenKind::Eos}) {
        if (name == kind_name(k)) return k;
    }
    throw ParseError("unknown token kind '" + std::string(name) + "' at word " +
                     std::to_string(word_index));
}

} // namespace

TokenSeq seq_from_text(std::string_view text) {
    Vocabulary vocab;
    TokenSeq seq;
    std::istringstream in{std::string(text)};
    std::string word;
    std::size_t index = 0;
    while (in >> word) {
        auto paren = word.find('(');
        Token token;
        if (paren == std::string::npos) {
            token.kind = kind_from_name(word, index);
            if (!is_special(token.kind))
                throw ParseError("token '" + word + "' missing value at word " + std::to_string(index));
        } else {
            if (word.back() != ')')
                throw ParseError("malformed token '" + word + "' at word " + std::to_string(index));
            token.kind = kind_from_name(word.substr(0, paren), index);
            if (is_special(token.kind))
                throw ParseError("special token with payload at word " + std::to_string(index));
            std::string digits = word.substr(paren + 1, word.size() - paren - 2);
            if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos)
                throw ParseError("bad value in '" + word + "' at word " + std::to_string(index));
            token.value = std::stoi(digits);
        }
        (void)vocab.id_of(token); // range check; throws RangeError
        seq.push_back(token);
        ++index;
    }
    return seq;
}

} // namespace remifill
