#include <doctest.h>

#include <algorithm>
#include <set>

#include "remifill/rng.hpp"
#include "remifill/token.hpp"
#include "remifill/tokenizer.hpp"

using namespace remifill;

namespace {

// Random quantized note sets for round-trip properties. Per-bar tempo is
// drawn once (the encoding carries one Tempo per bar).
std::vector<BarNotes> random_bars(Rng& rng, int max_bars = 6) {
    int n_bars = static_cast<int>(rng.next_below(max_bars + 1));
    std::vector<BarNotes> bars(n_bars);
    for (int b = 0; b < n_bars; ++b) {
        int tempo = 28 + 4 * static_cast<int>(rng.next_below(47));
        int n_notes = static_cast<int>(rng.next_below(6));
        for (int i = 0; i < n_notes; ++i) {
            NoteEvent note;
            note.bar = b;
            note.position = static_cast<int>(rng.next_below(16));
            note.pitch = 22 + static_cast<int>(rng.next_below(86));
            note.duration = 1 + static_cast<int>(rng.next_below(16));
            note.tempo_bpm = tempo;
            bars[b].push_back(note);
        }
    }
    return bars;
}

std::vector<NoteEvent> flatten_sorted(const std::vector<BarNotes>& bars) {
    std::vector<NoteEvent> notes;
    for (std::size_t b = 0; b < bars.size(); ++b) {
        BarNotes bar = bars[b];
        std::stable_sort(bar.begin(), bar.end(), [](const NoteEvent& x, const NoteEvent& y) {
            return x.position != y.position ? x.position < y.position : x.pitch < y.pitch;
        });
        for (NoteEvent note : bar) {
            note.bar = static_cast<int>(b);
            notes.push_back(note);
        }
    }
    return notes;
}

} // namespace

TEST_CASE("vocabulary bijection over all 216 ids") {
    Vocabulary vocab;
    CHECK(vocab.size() == 216);
    std::set<std::pair<int, int>> seen;
    for (int id = 0; id < vocab.size(); ++id) {
        Token token = vocab.token_of(id);
        CHECK(vocab.id_of(token) == id);
        CHECK(seen.insert({static_cast<int>(token.kind), token.value}).second);
    }
    CHECK_THROWS_AS((void)vocab.token_of(216), RangeError);
    CHECK_THROWS_AS((void)vocab.token_of(-1), RangeError);
    CHECK_THROWS_AS((void)vocab.id_of(tempo_token(30)), RangeError); // off-grid
    CHECK_THROWS_AS((void)vocab.id_of(pitch_token(108)), RangeError);
}

TEST_CASE("tempo snapping: ties break downward") {
    CHECK(snap_tempo(30.0) == 28);
    CHECK(snap_tempo(30.1) == 32);
    CHECK(snap_tempo(29.9) == 28);
    CHECK(snap_tempo(120.0) == 120);
    CHECK(snap_tempo(5.0) == 28);
    CHECK(snap_tempo(500.0) == 212);
}

TEST_CASE("two-bar segment counts down from two") {
    std::vector<BarNotes> bars(2);
    bars[0].push_back({0, 0, 60, 4, 120});
    bars[1].push_back({1, 0, 64, 4, 120});
    TokenSeq seq = encode_bars(bars, {1, 1}, true);

    std::vector<int> bar_values;
    for (const Token& t : seq)
        if (t.kind == TokenKind::Bar) bar_values.push_back(t.value);
    CHECK(bar_values == std::vector<int>{2, 1});

    // Canonical order of one bar.
    TokenSeq expected{bar_token(2),     struct_token(1),   tempo_token(120), position_token(0),
                      pitch_token(60),  duration_token(4), bar_token(1),     struct_token(1),
                      tempo_token(120), position_token(0), pitch_token(64),  duration_token(4)};
    CHECK(seq == expected);
}

TEST_CASE("empty bar emits only Bar, Struct, Tempo") {
    TokenSeq seq = encode_bars({{}}, {0}, true);
    REQUIRE(seq.size() == 3);
    CHECK(seq[0] == bar_token(1));
    CHECK(seq[1] == struct_token(0));
    CHECK(seq[2].kind == TokenKind::Tempo);
}

TEST_CASE("per-bar grammar gives 3 + 3*notes tokens") {
    // Three bars, one note each: counted from the grammar, not the encoder.
    std::vector<BarNotes> bars(3);
    for (int b = 0; b < 3; ++b) bars[b].push_back({b, 0, 60 + b, 2, 96});
    int expected = 0;
    for (const BarNotes& bar : bars) expected += 3 + 3 * static_cast<int>(bar.size());
    CHECK(expected == 18);
    CHECK(encode_bars(bars, {0, 0, 0}, true).size() == 18);
}

TEST_CASE("ordinal numbering when countdown is off") {
    std::vector<BarNotes> bars(3);
    TokenSeq seq = encode_bars(bars, {0, 0, 0}, false);
    std::vector<int> values;
    for (const Token& t : seq)
        if (t.kind == TokenKind::Bar) values.push_back(t.value);
    CHECK(values == std::vector<int>{1, 2, 3});
}

TEST_CASE("notes are sorted by (position, pitch) inside a bar") {
    std::vector<BarNotes> bars(1);
    bars[0] = {{0, 8, 60, 2, 120}, {0, 0, 70, 2, 120}, {0, 0, 50, 2, 120}};
    auto notes = decode(encode_bars(bars, {0}, true));
    REQUIRE(notes.size() == 3);
    CHECK(notes[0].pitch == 50);
    CHECK(notes[1].pitch == 70);
    CHECK(notes[2].pitch == 60);
}

TEST_CASE("encode errors: capacity and ranges") {
    CHECK_THROWS_AS((void)encode_bars(std::vector<BarNotes>(33), std::vector<int>(33, 0), false),
                    CapacityError);

    std::vector<BarNotes> bars(1);
    bars[0].push_back({0, 0, 108, 2, 120}); // pitch beyond the table
    try {
        (void)encode_bars(bars, {0}, true);
        FAIL("expected RangeError");
    } catch (const RangeError& e) {
        CHECK(std::string(e.what()).find("PITCH") != std::string::npos);
    }

    bars[0][0] = {0, 0, 60, 2, 120};
    CHECK_THROWS_AS((void)encode_bars(bars, {16}, true), RangeError);
    CHECK_THROWS_AS((void)encode_bars(bars, {0, 0}, true), ConfigError);
}

TEST_CASE("decode grammar errors carry the token index") {
    TokenSeq missing_duration{bar_token(1),     struct_token(0), tempo_token(120),
                              position_token(0), pitch_token(60), pitch_token(61)};
    try {
        (void)decode(missing_duration);
        FAIL("expected GrammarError");
    } catch (const GrammarError& e) {
        CHECK(std::string(e.what()).find("token 5") != std::string::npos);
    }

    TokenSeq pitch_without_position{bar_token(1), struct_token(0), tempo_token(120),
                                    pitch_token(60)};
    CHECK_THROWS_AS((void)decode(pitch_without_position), GrammarError);

    TokenSeq truncated{bar_token(1), struct_token(0), tempo_token(120), position_token(3)};
    CHECK_THROWS_AS((void)decode(truncated), GrammarError);

    CHECK_THROWS_AS((void)decode(TokenSeq{bar_token(1), sep_token()}), GrammarError);
}

TEST_CASE("round-trip equality on randomized note sets") {
    Rng rng(42);
    for (int trial = 0; trial < 300; ++trial) {
        auto bars = random_bars(rng);
        std::vector<int> struct_ids(bars.size());
        for (auto& id : struct_ids) id = static_cast<int>(rng.next_below(16));
        bool countdown = rng.next_below(2) == 0;

        TokenSeq seq = encode_bars(bars, struct_ids, countdown);
        Vocabulary vocab;
        for (const Token& t : seq) CHECK(vocab.contains(t));

        CHECK(decode(seq) == flatten_sorted(bars));

        if (countdown) {
            int expect = static_cast<int>(bars.size());
            for (const Token& t : seq)
                if (t.kind == TokenKind::Bar) CHECK(t.value == expect--);
            CHECK(expect == 0);
        }
    }
}

TEST_CASE("decode_to_bars keeps empty bars and tempi") {
    std::vector<BarNotes> bars(3);
    bars[0].push_back({0, 0, 60, 4, 96});
    bars[2].push_back({2, 4, 64, 2, 96});
    auto decoded = decode_to_bars(encode_bars(bars, {1, 0, 2}, false));
    REQUIRE(decoded.size() == 3);
    CHECK(decoded[0].struct_id == 1);
    CHECK(decoded[1].notes.empty());
    CHECK(decoded[1].tempo == 96); // inherited from the previous bar
    CHECK(decoded[2].struct_id == 2);
    CHECK(decoded[2].notes.size() == 1);
}

TEST_CASE("quantize clamps and snaps") {
    NoteEvent note = quantize(60, 0, 0, 30.0, 120);
    CHECK(note.tempo_bpm == 28); // tie at 30 snaps down
    CHECK(note.duration == 1);   // zero ticks clamps up

    CHECK(quantize(108, 0, 480, 120.0, 120).pitch == 107);
    CHECK(quantize(10, 0, 480, 120.0, 120).pitch == 22);

    NoteEvent placed = quantize(60, 17 * 120, 2 * 120, 120.0, 120);
    CHECK(placed.bar == 1);
    CHECK(placed.position == 1);
    CHECK(placed.duration == 2);

    NoteEvent rounded = quantize(60, 59, 480, 120.0, 120); // 59/120 rounds to 0
    CHECK(rounded.position == 0);
    CHECK(quantize(60, 61, 480, 120.0, 120).position == 1);

    CHECK(quantize(60, 0, 99999, 120.0, 120).duration == 16);
    CHECK_THROWS_AS((void)quantize(60, 0, 0, 120.0, 0), ConfigError);
}

TEST_CASE("token text round-trips and matches the documented shape") {
    TokenSeq seq{bar_token(2),    struct_token(1), tempo_token(120),
                 position_token(0), pitch_token(60), duration_token(4)};
    CHECK(seq_to_text(seq) == "BAR(2) STRUCT(1) TEMPO(120) POS(0) PITCH(60) DUR(4)");
    CHECK(seq_from_text(seq_to_text(seq)) == seq);

    TokenSeq specials{bos_token(), sep_token(), eos_token()};
    CHECK(seq_to_text(specials) == "BOS SEP EOS");
    CHECK(seq_from_text("BOS SEP EOS") == specials);

    CHECK(seq_from_text("").empty());
    CHECK_THROWS_AS((void)seq_from_text("BAR"), ParseError);
    CHECK_THROWS_AS((void)seq_from_text("BOS(1)"), ParseError);
    CHECK_THROWS_AS((void)seq_from_text("NOPE(1)"), ParseError);
    CHECK_THROWS_AS((void)seq_from_text("BAR(x)"), ParseError);
    CHECK_THROWS_AS((void)seq_from_text("BAR(99)"), RangeError);
}
