#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "remifill/errors.hpp"

namespace remifill {

// Token kinds of the extended REMI representation. Bar payloads are either
// remaining-bar counts (count-down encoding, used for infill targets) or
// 1-based bar ordinals (contexts). Struct carries the per-bar structure
// label id, 0 meaning "no structural context".
enum class TokenKind : std::uint8_t {
    Bar,
    Struct,
    Tempo,
    Position,
    Pitch,
    Duration,
    Bos,
    Sep,
    Eos,
};

const char* kind_name(TokenKind kind);
bool is_special(TokenKind kind);

struct Token {
    TokenKind kind;
    int value = 0; // unused for specials

    bool operator==(const Token&) const = default;
};

inline Token bar_token(int v) { return {TokenKind::Bar, v}; }
inline Token struct_token(int v) { return {TokenKind::Struct, v}; }
inline Token tempo_token(int v) { return {TokenKind::Tempo, v}; }
inline Token position_token(int v) { return {TokenKind::Position, v}; }
inline Token pitch_token(int v) { return {TokenKind::Pitch, v}; }
inline Token duration_token(int v) { return {TokenKind::Duration, v}; }
inline Token bos_token() { return {TokenKind::Bos, 0}; }
inline Token sep_token() { return {TokenKind::Sep, 0}; }
inline Token eos_token() { return {TokenKind::Eos, 0}; }

using TokenSeq = std::vector<Token>;

// Value ranges, one row per token kind.
struct TokenRanges {
    static constexpr int kBarMin = 1, kBarMax = 32;
    static constexpr int kStructMin = 0, kStructMax = 15;
    static constexpr int kTempoMin = 28, kTempoMax = 212, kTempoStep = 4;
    static constexpr int kPositionMin = 0, kPositionMax = 15;
    static constexpr int kPitchMin = 22, kPitchMax = 107;
    static constexpr int kDurationMin = 1, kDurationMax = 16;
    static constexpr int kPositionsPerBar = 16;
};

// Snaps a raw BPM to the nearest member of {28, 32, ..., 212}; exact
// midpoints snap downward.
int snap_tempo(double bpm);

// Dense ids: content tokens in Table-row order (Bar, Struct, Tempo,
// Position, Pitch, Duration), then BOS/SEP/EOS. 213 + 3 = 216 ids total.
class Vocabulary {
public:
    static constexpr int kContentSize = 213;
    static constexpr int kSize = 216;

    int size() const { return kSize; }
    int id_of(const Token& token) const;     // throws RangeError for out-of-range payloads
    Token token_of(int id) const;            // throws RangeError for bad ids
    bool contains(const Token& token) const;

    int bos_id() const { return kContentSize; }
    int sep_id() const { return kContentSize + 1; }
    int eos_id() const { return kContentSize + 2; }
};

std::vector<int> ids_of(const Vocabulary& vocab, const TokenSeq& seq);

// Text form: whitespace-separated `KIND(value)` words, specials bare, e.g.
//   BAR(2) STRUCT(1) TEMPO(120) POS(0) PITCH(60) DUR(4)
// One sequence per line in files.
std::string token_text(const Token& token);
std::string seq_to_text(const TokenSeq& seq);
TokenSeq seq_from_text(std::string_view text); // throws ParseError / RangeError

// A quantized note. `bar` is 0-based and absolute within its sequence,
// `position` and `duration` are in 16th notes, tempo is on the Table grid.
struct NoteEvent {
    int bar = 0;
    int position = 0;
    int pitch = 0;
    int duration = 1;
    int tempo_bpm = 120;

    bool operator==(const NoteEvent&) const = default;
};

} // namespace remifill
