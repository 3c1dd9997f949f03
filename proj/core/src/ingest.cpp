#include "remifill/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "remifill/midi.hpp"
#include "remifill/rng.hpp"

namespace remifill {

namespace {

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

TokenSeq encode_slice(const Song& song, const std::vector<int>& bar_ids, int begin, int end,
                      bool countdown, std::vector<int>* indices_out) {
    std::vector<BarNotes> bars(song.bars.begin() + begin, song.bars.begin() + end);
    std::vector<int> ids(bar_ids.begin() + begin, bar_ids.begin() + end);
    TokenSeq seq = encode_bars(bars, ids, countdown);
    if (indices_out) *indices_out = assign_structure_indices(seq, ids);
    return seq;
}

std::vector<TokenSeq> encode_contexts_for_song(const Song& song, const std::vector<int>& bar_ids) {
    auto ranges = select_structural_contexts(song.annotation);
    std::vector<TokenSeq> contexts;
    for (int n = 1; n <= song.annotation.max_struct_id(); ++n) {
        const BarRange& range = ranges.at(n);
        contexts.push_back(encode_slice(song, bar_ids, range.begin, range.end, false, nullptr));
    }
    return contexts;
}

InfillingExample make_example(const Song& song, int phrase_index,
                              const std::vector<int>& bar_ids,
                              const std::vector<TokenSeq>& contexts) {
    const Phrase& phrase = song.annotation.phrases[phrase_index];
    const int total = static_cast<int>(song.bars.size());
    const int t_begin = phrase.start_bar;
    const int t_end = phrase.start_bar + phrase.length_bars;

    InfillingExample ex;
    ex.song_id = song.id;
    ex.target_phrase = phrase_index;
    ex.past = encode_slice(song, bar_ids, std::max(0, t_begin - 6), t_begin, false,
                           &ex.past_indices);
    ex.future = encode_slice(song, bar_ids, t_end, std::min(total, t_end + 6), false,
                             &ex.future_indices);
    ex.target = encode_slice(song, bar_ids, t_begin, t_end, true, &ex.target_indices);
    ex.contexts = contexts;
    ex.target_bars = phrase.length_bars;
    return ex;
}

} // namespace

Song load_midi(const std::string& path, const std::string& song_id,
               const StructureAnnotation& annotation) {
    MidiFile file = read_midi(path);

    std::vector<const MidiTrack*> sources;
    for (const char* wanted : {"melody", "bridge"}) {
        for (const MidiTrack& track : file.tracks)
            if (lower(track.name) == wanted) sources.push_back(&track);
    }
    if (sources.empty())
        throw MissingTrackError("no MELODY or BRIDGE track in " + path);

    const long ticks_per_16th = std::max(file.division / 4, 1);
    Song song;
    song.id = song_id;
    song.annotation = annotation;
    song.bars.resize(annotation.total_bars());

    std::set<std::tuple<int, int, int>> seen; // (bar, position, pitch)
    std::size_t dropped = 0;
    for (const MidiTrack* track : sources) {
        for (const MidiNote& raw : track->notes) {
            NoteEvent note = quantize(raw.pitch, raw.onset_ticks, raw.duration_ticks,
                                      file.bpm_at(raw.onset_ticks), ticks_per_16th);
            if (!seen.insert({note.bar, note.position, note.pitch}).second) continue;
            if (note.bar >= static_cast<int>(song.bars.size())) {
                ++dropped;
                continue;
            }
            song.bars[note.bar].push_back(note);
        }
    }
    if (dropped > 0)
        std::cerr << "warning: " << song_id << ": dropped " << dropped
                  << " notes beyond the annotated " << annotation.total_bars() << " bars\n";
    for (BarNotes& bar : song.bars)
        std::stable_sort(bar.begin(), bar.end(), [](const NoteEvent& a, const NoteEvent& b) {
            return a.position != b.position ? a.position < b.position : a.pitch < b.pitch;
        });
    return song;
}

namespace {

struct MotifNote {
    int position;
    int offset; // semitones above the label's base pitch
    int duration;
};

// Distinct rhythm/contour families so different labels are audibly (and
// metrically) far apart.
const std::vector<std::vector<MotifNote>> kMotifFamilies = {
    {{0, 0, 4}, {4, 4, 4}, {8, 7, 4}, {12, 12, 4}},
    {{0, 12, 2}, {2, 9, 2}, {4, 7, 2}, {8, 5, 2}, {10, 2, 2}, {12, 0, 2}},
    {{0, 0, 3}, {6, 7, 2}, {8, 3, 4}, {14, 10, 2}},
    {{0, 5, 2}, {3, 9, 2}, {6, 2, 2}, {9, 7, 4}, {12, 0, 4}},
};

BarNotes bridge_bar(Rng& rng, int abs_bar, int tempo) {
    BarNotes notes;
    int count = 1 + static_cast<int>(rng.next_below(3));
    std::set<int> positions;
    for (int i = 0; i < count; ++i) positions.insert(static_cast<int>(rng.next_below(16)));
    for (int pos : positions) {
        NoteEvent note;
        note.bar = abs_bar;
        note.position = pos;
        note.pitch = 50 + static_cast<int>(rng.next_below(16));
        note.duration = 1 + static_cast<int>(rng.next_below(4));
        note.tempo_bpm = tempo;
        notes.push_back(note);
    }
    return notes;
}

} // namespace

std::vector<Song> make_synthetic_corpus(std::uint64_t seed, int n_songs,
                                        const std::vector<std::string>& forms) {
    if (forms.empty()) throw ConfigError("synthetic corpus needs at least one form");
    std::vector<Song> songs;
    songs.reserve(std::max(n_songs, 0));

    for (int s = 0; s < n_songs; ++s) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(s)));
        Song song;
        song.id = "synth-" + std::to_string(s);
        song.annotation = parse_annotation(forms[s % forms.size()]);
        song.bars.resize(song.annotation.total_bars());

        const int tempo = std::array{96, 108, 120, 132}[rng.next_below(4)];

        // Longest occurrence per label decides how many motif bars to draw.
        std::map<char, int> motif_len;
        for (const Phrase& p : song.annotation.phrases)
            if (!is_special_label(p.label))
                motif_len[p.label] = std::max(motif_len[p.label], p.length_bars);

        // Frozen per-label motifs; labels are visited in first-appearance
        // order so the rng stream is stable.
        std::map<char, std::vector<BarNotes>> motifs;
        for (const Phrase& p : song.annotation.phrases) {
            if (is_special_label(p.label) || motifs.count(p.label)) continue;
            int family = (song.annotation.struct_id(p.label) - 1) %
                         static_cast<int>(kMotifFamilies.size());
            int base = 52 + static_cast<int>(rng.next_below(12));
            std::vector<BarNotes> bars;
            for (int j = 0; j < motif_len[p.label]; ++j) {
                BarNotes bar;
                for (const MotifNote& m : kMotifFamilies[family]) {
                    NoteEvent note;
                    note.position = m.position;
                    note.pitch = base + m.offset + static_cast<int>(rng.next_below(3)) - 1;
                    note.duration = m.duration;
                    note.tempo_bpm = tempo;
                    bar.push_back(note);
                }
                bars.push_back(bar);
            }
            motifs[p.label] = std::move(bars);
        }

        std::map<char, int> occurrence;
        for (const Phrase& p : song.annotation.phrases) {
            if (is_special_label(p.label)) {
                for (int j = 0; j < p.length_bars; ++j)
                    song.bars[p.start_bar + j] = bridge_bar(rng, p.start_bar + j, tempo);
                continue;
            }
            // Repeats keep pitch classes: shifts are whole octaves.
            int occ = occurrence[p.label]++;
            int shift = occ == 0 ? 0 : std::array{-12, 0, 12}[rng.next_below(3)];
            for (int j = 0; j < p.length_bars; ++j) {
                BarNotes bar = motifs[p.label][j];
                for (NoteEvent& note : bar) {
                    note.bar = p.start_bar + j;
                    note.pitch = std::clamp(note.pitch + shift, TokenRanges::kPitchMin,
                                            TokenRanges::kPitchMax);
                }
                song.bars[p.start_bar + j] = std::move(bar);
            }
        }
        songs.push_back(std::move(song));
    }
    return songs;
}

std::vector<InfillingExample> build_training_examples(const Song& song) {
    std::vector<InfillingExample> out;
    const auto& phrases = song.annotation.phrases;
    if (phrases.size() < 3) return out;

    const auto bar_ids = song.annotation.bar_struct_ids();
    const auto contexts = encode_contexts_for_song(song, bar_ids);

    for (std::size_t p = 1; p + 1 < phrases.size(); ++p) {
        if (phrases[p].length_bars > TokenRanges::kBarMax) {
            std::cerr << "warning: " << song.id << ": skipping " << phrases[p].length_bars
                      << "-bar target phrase " << p << " (over the " << TokenRanges::kBarMax
                      << "-bar cap)\n";
            continue;
        }
        out.push_back(make_example(song, static_cast<int>(p), bar_ids, contexts));
    }
    return out;
}

std::vector<InfillingExample> build_test_cases(const std::vector<Song>& songs) {
    std::vector<InfillingExample> out;
    for (const Song& song : songs) {
        const auto& phrases = song.annotation.phrases;
        if (phrases.size() < 3) continue;
        const auto bar_ids = song.annotation.bar_struct_ids();
        const auto contexts = encode_contexts_for_song(song, bar_ids);
        for (std::size_t p = 1; p + 1 < phrases.size(); ++p) {
            if (phrases[p].length_bars != 4) continue;
            if (is_special_label(phrases[p].label)) continue;
            bool same_prev = phrases[p - 1].label == phrases[p].label;
            bool same_next = phrases[p + 1].label == phrases[p].label;
            if (same_prev == same_next) continue; // need exactly one matching neighbor
            out.push_back(make_example(song, static_cast<int>(p), bar_ids, contexts));
        }
    }
    return out;
}

TokenSeq encode_song_slice(const Song& song, int begin_bar, int end_bar, bool countdown) {
    if (begin_bar < 0 || end_bar > static_cast<int>(song.bars.size()) || begin_bar > end_bar)
        throw RangeError("bar slice [" + std::to_string(begin_bar) + "," +
                         std::to_string(end_bar) + ") outside song of " +
                         std::to_string(song.bars.size()) + " bars");
    return encode_slice(song, song.annotation.bar_struct_ids(), begin_bar, end_bar, countdown,
                        nullptr);
}

WrappedSequence reorder_and_wrap(const InfillingExample& example) {
    if (example.past_indices.size() != example.past.size() ||
        example.future_indices.size() != example.future.size() ||
        example.target_indices.size() != example.target.size())
        throw ConfigError("segment/index length mismatch in example");

    WrappedSequence w;
    auto append = [&](const TokenSeq& seq, const std::vector<int>& indices) {
        w.tokens.insert(w.tokens.end(), seq.begin(), seq.end());
        w.indices.insert(w.indices.end(), indices.begin(), indices.end());
    };
    auto special = [&](Token token) {
        w.tokens.push_back(token);
        w.indices.push_back(0);
    };

    special(bos_token());
    w.bounds.past_begin = w.tokens.size();
    append(example.past, example.past_indices);
    w.bounds.past_end = w.tokens.size();
    special(sep_token());
    w.bounds.future_begin = w.tokens.size();
    append(example.future, example.future_indices);
    w.bounds.future_end = w.tokens.size();
    special(sep_token());
    w.bounds.target_begin = w.tokens.size();
    append(example.target, example.target_indices);
    w.bounds.target_end = w.tokens.size();
    special(eos_token());
    w.bounds.total = w.tokens.size();
    return w;
}

std::pair<std::vector<Song>, std::vector<Song>> split_corpus(std::vector<Song> songs, double ratio,
                                                             std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0))
        throw ConfigError("split ratio must be in (0,1), got " + std::to_string(ratio));
    Rng rng(seed);
    // Fisher-Yates, hand-rolled for cross-platform reproducibility.
    for (std::size_t i = 0; i + 1 < songs.size(); ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.next_below(songs.size() - i));
        std::swap(songs[i], songs[j]);
    }
    std::size_t n_train = static_cast<std::size_t>(ratio * static_cast<double>(songs.size()));
    std::vector<Song> train(songs.begin(), songs.begin() + n_train);
    std::vector<Song> test(songs.begin() + n_train, songs.end());
    return {std::move(train), std::move(test)};
}

std::string example_to_line(const InfillingExample& example) {
    WrappedSequence wrapped = reorder_and_wrap(example);
    std::string line = seq_to_text(example.past);
    line += '|';
    line += seq_to_text(example.future);
    line += '|';
    line += seq_to_text(example.target);
    for (const TokenSeq& ctx : example.contexts) {
        line += '|';
        line += seq_to_text(ctx);
    }
    line += '|';
    for (std::size_t i = 0; i < wrapped.indices.size(); ++i) {
        if (i) line += ' ';
        line += std::to_string(wrapped.indices[i]);
    }
    return line;
}

InfillingExample example_from_line(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        auto bar = line.find('|', start);
        if (bar == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, bar - start));
        start = bar + 1;
    }
    if (fields.size() < 4)
        throw ParseError("dataset line needs past|future|target|...|indices, got " +
                         std::to_string(fields.size()) + " fields");

    InfillingExample ex;
    ex.past = seq_from_text(fields[0]);
    ex.future = seq_from_text(fields[1]);
    ex.target = seq_from_text(fields[2]);
    for (std::size_t i = 3; i + 1 < fields.size(); ++i)
        ex.contexts.push_back(seq_from_text(fields[i]));

    std::vector<int> indices;
    {
        std::istringstream in(fields.back());
        int value;
        while (in >> value) indices.push_back(value);
    }
    const std::size_t expected = ex.past.size() + ex.future.size() + ex.target.size() + 4;
    if (indices.size() != expected)
        throw ParseError("index list length " + std::to_string(indices.size()) + " != " +
                         std::to_string(expected));

    auto cut = [&](std::size_t begin, std::size_t count) {
        return std::vector<int>(indices.begin() + begin, indices.begin() + begin + count);
    };
    ex.past_indices = cut(1, ex.past.size());
    ex.future_indices = cut(2 + ex.past.size(), ex.future.size());
    ex.target_indices = cut(3 + ex.past.size() + ex.future.size(), ex.target.size());
    ex.target_bars = count_bars(ex.target);
    return ex;
}

void save_dataset(const std::string& path, const std::vector<InfillingExample>& examples) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write dataset file " + path);
    for (const InfillingExample& ex : examples) out << example_to_line(ex) << '\n';
    if (!out) throw IoError("failed writing dataset file " + path);
}

std::vector<InfillingExample> load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset file " + path);
    std::vector<InfillingExample> examples;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        examples.push_back(example_from_line(line));
    }
    return examples;
}

} // namespace remifill
