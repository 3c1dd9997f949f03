#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "remifill/token.hpp"
#include "remifill/tokenizer.hpp"

namespace remifill {

// A decoded melody segment; `bars` keeps trailing empty bars that the note
// list alone would lose.
struct Segment {
    std::vector<NoteEvent> notes;
    int bars = 0;
};

Segment segment_from_tokens(const TokenSeq& tokens);

// Normalized 12-bin pitch-class counts. Throws EmptySegmentError.
std::array<double, 12> pitch_class_histogram(const std::vector<NoteEvent>& notes);

// Cross entropy (natural log) between the target's pitch-class histogram
// and the smoothed histogram of the concatenated contexts
// (q' = (q + eps) / (1 + 12 eps), eps = 1e-6).
double cross_entropy_H(const std::vector<NoteEvent>& target_notes,
                       const std::vector<NoteEvent>& past_notes,
                       const std::vector<NoteEvent>& future_notes);

// Bit i set iff some onset falls on 16th position i.
std::uint16_t grooving_vector(const BarNotes& bar_notes);
std::vector<std::uint16_t> grooving_vectors(const Segment& segment);

// Mean over all (target bar, context bar) pairs of 1 - popcount(xor)/16.
double grooving_similarity_GS(const std::vector<std::uint16_t>& target_bars,
                              const std::vector<std::uint16_t>& context_bars);

// Pitch curve on the 16th grid: held pitch across durations, rests carry
// the previous pitch, a leading rest carries the first pitch.
std::vector<double> pitch_curve(const Segment& segment);

// Dynamic time warping with per-step cost |a - b|, minimizing
// total cost / path length over all monotone warping paths.
// O(n * m * (n + m)).
double dtw_mean_cost(const std::vector<double>& a, const std::vector<double>& b);

// Transposition-invariant melody dissimilarity: both pitch curves are
// mean-centered, aligned with dtw_mean_cost, and scaled by 16 to
// bar-comparable units.
double melody_distance_D(const Segment& a, const Segment& b);

struct EvalCase {
    std::string id;
    Segment past;
    Segment future;
    Segment target; // ground truth
};

struct CaseMetrics {
    std::string id;
    bool ok = false;
    std::string error;
    double H = 0.0, GS = 0.0, D = 0.0;
};

struct Aggregate {
    double mean = 0.0;
    double stddev = 0.0; // population
};

struct MetricsReport {
    std::vector<CaseMetrics> cases;
    Aggregate H, GS, D;
    int evaluated = 0;
    int failed = 0;
};

// Per-case H/GS/D plus mean +/- population std; failed cases are recorded,
// counted and left out of the aggregates. Throws AlignmentError when the
// two lists differ in length.
MetricsReport evaluate(const std::vector<EvalCase>& cases, const std::vector<Segment>& outputs);

std::string format_report(const MetricsReport& report);
std::string per_case_records(const MetricsReport& report); // "id,H,GS,D" lines

} // namespace remifill
