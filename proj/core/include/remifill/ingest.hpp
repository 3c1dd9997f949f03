#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "remifill/structure.hpp"
#include "remifill/token.hpp"
#include "remifill/tokenizer.hpp"

namespace remifill {

struct Song {
    std::string id;
    std::vector<BarNotes> bars; // sized to annotation.total_bars()
    StructureAnnotation annotation;
};

// One training or evaluation item. Segment token sequences are stored with
// their per-token structure indices; the model-ready reordered form comes
// from reorder_and_wrap.
struct InfillingExample {
    std::string song_id;
    int target_phrase = 0;

    TokenSeq past;    // ordinal bar numbering, up to 6 bars
    TokenSeq future;  // ordinal bar numbering, up to 6 bars
    TokenSeq target;  // count-down bar numbering
    std::vector<TokenSeq> contexts; // G_1..G_N, first occurrence per struct id

    std::vector<int> past_indices;
    std::vector<int> future_indices;
    std::vector<int> target_indices;

    int target_bars = 0;
};

// Index ranges of the content segments inside a wrapped sequence
// {BOS, past, SEP, future, SEP, target, EOS}; half-open, specials excluded.
struct SegmentBoundaries {
    std::size_t past_begin = 0, past_end = 0;
    std::size_t future_begin = 0, future_end = 0;
    std::size_t target_begin = 0, target_end = 0;
    std::size_t total = 0;

    std::size_t sep1() const { return past_end; }
    std::size_t sep2() const { return future_end; }
    std::size_t eos() const { return target_end; }
};

struct WrappedSequence {
    TokenSeq tokens;
    std::vector<int> indices; // structure index per token, specials = 0
    SegmentBoundaries bounds;
};

// Reads a MIDI file, merges the MELODY and BRIDGE tracks (union on
// (bar, position, pitch)), quantizes to the 16th grid and groups per bar.
// Notes past the annotated length are dropped. Throws MissingTrackError if
// neither track is present.
Song load_midi(const std::string& path, const std::string& song_id,
               const StructureAnnotation& annotation);

// Desk-scale corpus: deterministic per seed. Phrases sharing a label share a
// motif up to octave shifts (so pitch classes repeat across occurrences);
// bridge/intro/ending bars are freshly sampled each time.
std::vector<Song> make_synthetic_corpus(std::uint64_t seed, int n_songs,
                                        const std::vector<std::string>& forms);

// One example per phrase except the first and last: target = the phrase
// (count-down encoded), past/future = up to 6 surrounding bars, contexts =
// all first-occurrence phrases. Songs with fewer than 3 phrases yield
// nothing. Targets longer than 32 bars are skipped.
std::vector<InfillingExample> build_training_examples(const Song& song);

// 4-bar phrases (with both neighbors present) that share a label with
// exactly one neighbor.
std::vector<InfillingExample> build_test_cases(const std::vector<Song>& songs);

WrappedSequence reorder_and_wrap(const InfillingExample& example);

// Encodes bars [begin, end) of a song with the annotation's per-bar struct
// ids; ordinal bar numbering unless countdown is set.
TokenSeq encode_song_slice(const Song& song, int begin_bar, int end_bar, bool countdown);

// Deterministic shuffled split; train gets floor(ratio * n) songs.
std::pair<std::vector<Song>, std::vector<Song>> split_corpus(std::vector<Song> songs, double ratio,
                                                             std::uint64_t seed);

// Dataset file: one example per line,
//   past|future|target|G_1|...|G_N|<indices of the wrapped sequence>
// Segments use the tokenizer text format; the index list is space-separated.
void save_dataset(const std::string& path, const std::vector<InfillingExample>& examples);
std::vector<InfillingExample> load_dataset(const std::string& path);

std::string example_to_line(const InfillingExample& example);
InfillingExample example_from_line(const std::string& line);

} // namespace remifill
