#include "remifill/metrics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "remifill/errors.hpp"

namespace remifill {

Segment segment_from_tokens(const TokenSeq& tokens) {
    Segment segment;
    auto bars = decode_to_bars(tokens);
    segment.bars = static_cast<int>(bars.size());
    for (const DecodedBar& bar : bars)
        segment.notes.insert(segment.notes.end(), bar.notes.begin(), bar.notes.end());
    return segment;
}

std::array<double, 12> pitch_class_histogram(const std::vector<NoteEvent>& notes) {
    if (notes.empty()) throw EmptySegmentError("pitch class histogram of an empty segment");
    std::array<double, 12> hist{};
    for (const NoteEvent& note : notes) hist[static_cast<std::size_t>(note.pitch % 12)] += 1.0;
    for (double& h : hist) h /= static_cast<double>(notes.size());
    return hist;
}

double cross_entropy_H(const std::vector<NoteEvent>& target_notes,
                       const std::vector<NoteEvent>& past_notes,
                       const std::vector<NoteEvent>& future_notes) {
    if (past_notes.empty() && future_notes.empty())
        throw EmptySegmentError("cross entropy against empty contexts");
    std::array<double, 12> p = pitch_class_histogram(target_notes);

    std::vector<NoteEvent> contexts(past_notes);
    contexts.insert(contexts.end(), future_notes.begin(), future_notes.end());
    std::array<double, 12> q = pitch_class_histogram(contexts);

    constexpr double kEps = 1e-6;
    double h = 0.0;
    for (int c = 0; c < 12; ++c) {
        double smoothed = (q[static_cast<std::size_t>(c)] + kEps) / (1.0 + 12.0 * kEps);
        if (p[static_cast<std::size_t>(c)] > 0.0)
            h -= p[static_cast<std::size_t>(c)] * std::log(smoothed);
    }
    return h;
}

std::uint16_t grooving_vector(const BarNotes& bar_notes) {
    std::uint16_t bits = 0;
    for (const NoteEvent& note : bar_notes)
        bits = static_cast<std::uint16_t>(bits | (1u << note.position));
    return bits;
}

std::vector<std::uint16_t> grooving_vectors(const Segment& segment) {
    std::vector<BarNotes> bars(static_cast<std::size_t>(std::max(segment.bars, 0)));
    for (const NoteEvent& note : segment.notes) {
        if (note.bar >= 0 && note.bar < segment.bars)
            bars[static_cast<std::size_t>(note.bar)].push_back(note);
    }
    std::vector<std::uint16_t> vectors;
    vectors.reserve(bars.size());
    for (const BarNotes& bar : bars) vectors.push_back(grooving_vector(bar));
    return vectors;
}

double grooving_similarity_GS(const std::vector<std::uint16_t>& target_bars,
                              const std::vector<std::uint16_t>& context_bars) {
    if (target_bars.empty() || context_bars.empty())
        throw EmptySegmentError("grooving similarity over an empty bar list");
    double total = 0.0;
    for (std::uint16_t t : target_bars)
        for (std::uint16_t c : context_bars)
            total += 1.0 - std::popcount(static_cast<unsigned>(t ^ c)) / 16.0;
    return total / (static_cast<double>(target_bars.size()) *
                    static_cast<double>(context_bars.size()));
}

std::vector<double> pitch_curve(const Segment& segment) {
    if (segment.notes.empty()) throw EmptySegmentError("pitch curve of an empty segment");
    const int slots = std::max(segment.bars, 0) * TokenRanges::kPositionsPerBar;
    if (slots == 0) throw EmptySegmentError("pitch curve of a zero-bar segment");

    std::vector<double> curve(static_cast<std::size_t>(slots), 0.0);
    std::vector<char> painted(static_cast<std::size_t>(slots), 0);

    std::vector<NoteEvent> notes = segment.notes;
    std::sort(notes.begin(), notes.end(), [](const NoteEvent& a, const NoteEvent& b) {
        int oa = a.bar * 16 + a.position, ob = b.bar * 16 + b.position;
        return oa != ob ? oa < ob : a.pitch < b.pitch;
    });
    for (const NoteEvent& note : notes) {
        int onset = note.bar * 16 + note.position;
        for (int s = onset; s < std::min(onset + note.duration, slots); ++s) {
            if (s < 0) continue;
            curve[static_cast<std::size_t>(s)] = note.pitch;
            painted[static_cast<std::size_t>(s)] = 1;
        }
    }

    int first = -1;
    for (int s = 0; s < slots; ++s)
        if (painted[static_cast<std::size_t>(s)]) {
            first = s;
            break;
        }
    if (first < 0) throw EmptySegmentError("no sounding slots in segment");
    for (int s = 0; s < first; ++s) curve[static_cast<std::size_t>(s)] = curve[static_cast<std::size_t>(first)];
    for (int s = first + 1; s < slots; ++s)
        if (!painted[static_cast<std::size_t>(s)])
            curve[static_cast<std::size_t>(s)] = curve[static_cast<std::size_t>(s - 1)];
    return curve;
}

namespace {

std::vector<double> centered(std::vector<double> curve) {
    double mean = 0.0;
    for (double v : curve) mean += v;
    mean /= static_cast<double>(curve.size());
    for (double& v : curve) v -= mean;
    return curve;
}

} // namespace

double dtw_mean_cost(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.empty() || y.empty()) throw EmptySegmentError("warping an empty curve");
    const int n = static_cast<int>(x.size());
    const int m = static_cast<int>(y.size());
    constexpr double kInf = std::numeric_limits<double>::infinity();

    auto cost = [&](int i, int j) { return std::abs(x[static_cast<std::size_t>(i)] -
                                                    y[static_cast<std::size_t>(j)]); };

    // Layered DP over path length L: prev(i,j) = best total over L-1 steps.
    // Minimizing total/length needs the length-explicit form; two rolling
    // layers keep memory at O(n*m).
    std::vector<double> prev(static_cast<std::size_t>(n) * m, kInf);
    std::vector<double> cur(static_cast<std::size_t>(n) * m, kInf);
    auto at = [m](std::vector<double>& layer, int i, int j) -> double& {
        return layer[static_cast<std::size_t>(i) * m + j];
    };

    double best = kInf;
    for (int L = 1; L <= n + m - 1; ++L) {
        if (L == 1) {
            at(cur, 0, 0) = cost(0, 0);
        } else {
            std::fill(cur.begin(), cur.end(), kInf);
            for (int i = std::max(0, L - m); i < std::min(n, L); ++i) {
                // Path of L steps ending at (i,j): max(i,j)+1 <= L <= i+j+1.
                int j_lo = std::max(0, L - 1 - i);
                int j_hi = std::min(m - 1, L - 1);
                for (int j = j_lo; j <= j_hi; ++j) {
                    double from = kInf;
                    if (i > 0) from = std::min(from, at(prev, i - 1, j));
                    if (j > 0) from = std::min(from, at(prev, i, j - 1));
                    if (i > 0 && j > 0) from = std::min(from, at(prev, i - 1, j - 1));
                    if (from < kInf) at(cur, i, j) = from + cost(i, j);
                }
            }
        }
        double total = at(cur, n - 1, m - 1);
        if (total < kInf) best = std::min(best, total / static_cast<double>(L));
        std::swap(prev, cur);
    }
    return best;
}

double melody_distance_D(const Segment& a, const Segment& b) {
    return 16.0 * dtw_mean_cost(centered(pitch_curve(a)), centered(pitch_curve(b)));
}

MetricsReport evaluate(const std::vector<EvalCase>& cases, const std::vector<Segment>& outputs) {
    if (cases.size() != outputs.size())
        throw AlignmentError("have " + std::to_string(cases.size()) + " cases but " +
                             std::to_string(outputs.size()) + " outputs");
    MetricsReport report;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        CaseMetrics cm;
        cm.id = cases[i].id.empty() ? "case-" + std::to_string(i) : cases[i].id;
        try {
            cm.H = cross_entropy_H(outputs[i].notes, cases[i].past.notes, cases[i].future.notes);
            Segment contexts;
            contexts.bars = cases[i].past.bars + cases[i].future.bars;
            contexts.notes = cases[i].past.notes;
            for (NoteEvent note : cases[i].future.notes) {
                note.bar += cases[i].past.bars;
                contexts.notes.push_back(note);
            }
            cm.GS = grooving_similarity_GS(grooving_vectors(outputs[i]),
                                           grooving_vectors(contexts));
            cm.D = melody_distance_D(outputs[i], cases[i].target);
            cm.ok = true;
            ++report.evaluated;
        } catch (const Error& e) {
            cm.ok = false;
            cm.error = e.what();
            ++report.failed;
        }
        report.cases.push_back(std::move(cm));
    }

    auto aggregate = [&](auto field) {
        Aggregate agg;
        if (report.evaluated == 0) return agg;
        double sum = 0.0;
        for (const CaseMetrics& cm : report.cases)
            if (cm.ok) sum += field(cm);
        agg.mean = sum / report.evaluated;
        double sq = 0.0;
        for (const CaseMetrics& cm : report.cases)
            if (cm.ok) sq += (field(cm) - agg.mean) * (field(cm) - agg.mean);
        agg.stddev = std::sqrt(sq / report.evaluated);
        return agg;
    };
    report.H = aggregate([](const CaseMetrics& c) { return c.H; });
    report.GS = aggregate([](const CaseMetrics& c) { return c.GS; });
    report.D = aggregate([](const CaseMetrics& c) { return c.D; });
    return report;
}

namespace {

std::string cell(const Aggregate& a, int evaluated) {
    if (evaluated == 0) return "-";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f±%.2f", a.mean, a.stddev);
    return buf;
}

} // namespace

std::string format_report(const MetricsReport& report) {
    std::ostringstream out;
    out << "         H              GS             D\n";
    out << "result   " << cell(report.H, report.evaluated) << "      "
        << cell(report.GS, report.evaluated) << "      " << cell(report.D, report.evaluated)
        << "\n";
    out << "cases: " << report.evaluated << " evaluated, " << report.failed << " failed\n";
    return out.str();
}

std::string per_case_records(const MetricsReport& report) {
    std::ostringstream out;
    for (const CaseMetrics& cm : report.cases) {
        if (cm.ok)
            out << cm.id << ',' << cm.H << ',' << cm.GS << ',' << cm.D << '\n';
        else
            out << cm.id << ",failed," << cm.error << '\n';
    }
    return out.str();
}

} // namespace remifill
