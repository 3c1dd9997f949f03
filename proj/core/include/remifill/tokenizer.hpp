#pragma once

#include <vector>

#include "remifill/token.hpp"

namespace remifill {

// Notes of one bar, positions relative to the bar start.
using BarNotes = std::vector<NoteEvent>;

// Encodes bars into the extended REMI stream. Per bar the canonical order is
//   Bar -> Struct -> Tempo -> (Position, Pitch, Duration)*
// with note groups sorted by (position, pitch), ties keeping input order.
// With countdown=true Bar payloads run n..1 (infill targets); otherwise they
// are the 1-based bar ordinal within the segment. A bar's Tempo is the tempo
// of its first note; empty bars inherit the previous bar's tempo (or the
// next known one at the very start, 120 if the segment is silent).
//
// Throws CapacityError for more than 32 bars and RangeError (naming the
// offending token kind) for out-of-range fields.
TokenSeq encode_bars(const std::vector<BarNotes>& bars, const std::vector<int>& struct_ids,
                     bool countdown);

// Inverse of encode_bars. Bar indices in the result are 0-based ordinals of
// the Bar tokens in sequence order, regardless of the Bar payloads. Kind
// grammar is enforced (GrammarError with the token index); note order within
// a bar is not.
std::vector<NoteEvent> decode(const TokenSeq& seq);

// Bar-structured decode: keeps empty bars and per-bar struct/tempo values.
struct DecodedBar {
    int struct_id = 0;
    int tempo = 120;
    BarNotes notes; // note.bar is the 0-based bar ordinal
};
std::vector<DecodedBar> decode_to_bars(const TokenSeq& seq);

// Grammar check without materializing notes.
void validate_grammar(const TokenSeq& seq);

// Number of Bar tokens in a sequence.
int count_bars(const TokenSeq& seq);

// Quantizes raw MIDI values onto the token grid: positions to 16ths of a
// bar, duration clamped to [1,16], tempo snapped to the grid, pitch clamped
// to [22,107]. Throws ConfigError if ticks_per_16th is not positive.
NoteEvent quantize(int raw_pitch, long raw_onset_ticks, long raw_duration_ticks, double raw_bpm,
                   long ticks_per_16th);

} // namespace remifill
