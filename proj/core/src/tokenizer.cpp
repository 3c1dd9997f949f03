#include "remifill/tokenizer.hpp"

#include <algorithm>
#include <cmath>

namespace remifill {

namespace {

using R = TokenRanges;

void check_range(bool ok, TokenKind kind, int value) {
    if (!ok)
        throw RangeError(std::string(kind_name(kind)) + " value " + std::to_string(value) +
                         " out of range");
}

int bar_tempo(const std::vector<BarNotes>& bars, std::size_t index, int previous) {
    if (!bars[index].empty()) return bars[index].front().tempo_bpm;
    if (previous > 0) return previous;
    for (std::size_t j = index + 1; j < bars.size(); ++j)
        if (!bars[j].empty()) return bars[j].front().tempo_bpm;
    return 120;
}

} // namespace

TokenSeq encode_bars(const std::vector<BarNotes>& bars, const std::vector<int>& struct_ids,
                     bool countdown) {
    if (bars.size() > static_cast<std::size_t>(R::kBarMax))
        throw CapacityError("segment of " + std::to_string(bars.size()) + " bars exceeds " +
                            std::to_string(R::kBarMax));
    if (struct_ids.size() != bars.size())
        throw ConfigError("struct_ids length " + std::to_string(struct_ids.size()) +
                          " != bar count " + std::to_string(bars.size()));

    const int n = static_cast<int>(bars.size());
    TokenSeq seq;
    int tempo = 0;
    for (int b = 0; b < n; ++b) {
        int bar_value = countdown ? n - b : std::min(b + 1, R::kBarMax);
        check_range(bar_value >= R::kBarMin && bar_value <= R::kBarMax, TokenKind::Bar, bar_value);
        check_range(struct_ids[b] >= R::kStructMin && struct_ids[b] <= R::kStructMax,
                    TokenKind::Struct, struct_ids[b]);
        tempo = bar_tempo(bars, b, tempo);
        check_range(tempo >= R::kTempoMin && tempo <= R::kTempoMax &&
                        (tempo - R::kTempoMin) % R::kTempoStep == 0,
                    TokenKind::Tempo, tempo);

        seq.push_back(bar_token(bar_value));
        seq.push_back(struct_token(struct_ids[b]));
        seq.push_back(tempo_token(tempo));

        BarNotes notes = bars[b];
        std::stable_sort(notes.begin(), notes.end(), [](const NoteEvent& a, const NoteEvent& b) {
            return a.position != b.position ? a.position < b.position : a.pitch < b.pitch;
        });
        for (const NoteEvent& note : notes) {
            check_range(note.position >= R::kPositionMin && note.position <= R::kPositionMax,
                        TokenKind::Position, note.position);
            check_range(note.pitch >= R::kPitchMin && note.pitch <= R::kPitchMax, TokenKind::Pitch,
                        note.pitch);
            check_range(note.duration >= R::kDurationMin && note.duration <= R::kDurationMax,
                        TokenKind::Duration, note.duration);
            seq.push_back(position_token(note.position));
            seq.push_back(pitch_token(note.pitch));
            seq.push_back(duration_token(note.duration));
        }
    }
    return seq;
}

namespace {

enum class State { BarStart, AfterBar, AfterStruct, InBar, AfterPosition, AfterPitch };

[[noreturn]] void grammar_fail(std::size_t index, const std::string& what) {
    throw GrammarError(what + " at token " + std::to_string(index));
}

template <typename OnBar, typename OnNote>
void walk_grammar(const TokenSeq& seq, OnBar&& on_bar, OnNote&& on_note) {
    Vocabulary vocab;
    State state = State::BarStart;
    int cur_struct = 0, cur_tempo = 0, cur_position = 0, cur_pitch = 0;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        const Token& t = seq[i];
        if (!vocab.contains(t))
            throw RangeError(std::string(kind_name(t.kind)) + " value " +
                             std::to_string(t.value) + " out of range at token " +
                             std::to_string(i));
        if (is_special(t.kind)) grammar_fail(i, "special token inside bar stream");
        switch (state) {
        case State::BarStart:
            if (t.kind != TokenKind::Bar) grammar_fail(i, "expected BAR");
            state = State::AfterBar;
            break;
        case State::AfterBar:
            if (t.kind != TokenKind::Struct) grammar_fail(i, "expected STRUCT after BAR");
            cur_struct = t.value;
            state = State::AfterStruct;
            break;
        case State::AfterStruct:
            if (t.kind != TokenKind::Tempo) grammar_fail(i, "expected TEMPO after STRUCT");
            cur_tempo = t.value;
            on_bar(cur_struct, cur_tempo);
            state = State::InBar;
            break;
        case State::InBar:
            if (t.kind == TokenKind::Bar) {
                state = State::AfterBar;
            } else if (t.kind == TokenKind::Position) {
                cur_position = t.value;
                state = State::AfterPosition;
            } else {
                grammar_fail(i, "expected POS or BAR");
            }
            break;
        case State::AfterPosition:
            if (t.kind != TokenKind::Pitch) grammar_fail(i, "expected PITCH after POS");
            cur_pitch = t.value;
            state = State::AfterPitch;
            break;
        case State::AfterPitch:
            if (t.kind != TokenKind::Duration) grammar_fail(i, "expected DUR after PITCH");
            on_note(cur_position, cur_pitch, t.value, cur_tempo);
            state = State::InBar;
            break;
        }
    }
    if (state != State::BarStart && state != State::InBar)
        grammar_fail(seq.size(), "truncated sequence");
}

} // namespace

std::vector<NoteEvent> decode(const TokenSeq& seq) {
    std::vector<NoteEvent> notes;
    int bar = -1;
    walk_grammar(
        seq, [&](int, int) { ++bar; },
        [&](int position, int pitch, int duration, int tempo) {
            notes.push_back({bar, position, pitch, duration, tempo});
        });
    return notes;
}

std::vector<DecodedBar> decode_to_bars(const TokenSeq& seq) {
    std::vector<DecodedBar> bars;
    walk_grammar(
        seq,
        [&](int struct_id, int tempo) {
            DecodedBar bar;
            bar.struct_id = struct_id;
            bar.tempo = tempo;
            bars.push_back(std::move(bar));
        },
        [&](int position, int pitch, int duration, int tempo) {
            bars.back().notes.push_back(
                {static_cast<int>(bars.size()) - 1, position, pitch, duration, tempo});
        });
    return bars;
}

void validate_grammar(const TokenSeq& seq) {
    walk_grammar(seq, [](int, int) {}, [](int, int, int, int) {});
}

int count_bars(const TokenSeq& seq) {
    int n = 0;
    for (const Token& t : seq)
        if (t.kind == TokenKind::Bar) ++n;
    return n;
}

NoteEvent quantize(int raw_pitch, long raw_onset_ticks, long raw_duration_ticks, double raw_bpm,
                   long ticks_per_16th) {
    if (ticks_per_16th <= 0)
        throw ConfigError("ticks_per_16th must be positive, got " + std::to_string(ticks_per_16th));

    auto round_div = [](long value, long unit) {
        return (2 * value + unit) / (2 * unit); // round half up, value >= 0
    };
    long onset = round_div(std::max(raw_onset_ticks, 0L), ticks_per_16th);
    long dur = round_div(std::max(raw_duration_ticks, 0L), ticks_per_16th);

    NoteEvent note;
    note.bar = static_cast<int>(onset / R::kPositionsPerBar);
    note.position = static_cast<int>(onset % R::kPositionsPerBar);
    note.duration = static_cast<int>(std::clamp(dur, static_cast<long>(R::kDurationMin),
                                                static_cast<long>(R::kDurationMax)));
    note.pitch = std::clamp(raw_pitch, R::kPitchMin, R::kPitchMax);
    note.tempo_bpm = snap_tempo(raw_bpm);
    return note;
}

} // namespace remifill
