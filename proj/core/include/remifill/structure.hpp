#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "remifill/token.hpp"

namespace remifill {

// One phrase of a song form. Labels are grouped case-insensitively; the
// original case is kept as the melodic flag (uppercase = melodic), which is
// preserved but not used downstream.
struct Phrase {
    char label = 'a'; // lowercase identity
    bool melodic = false;
    int length_bars = 0;
    int start_bar = 0; // 0-based absolute

    bool operator==(const Phrase&) const = default;
};

// Parsed phrase plan. Labels i/x/o (intro, bridge, ending) have no
// structural context and map to struct id 0; every other label gets
// 1, 2, ... in order of first appearance, capped at 15 by the Struct
// vocabulary row.
struct StructureAnnotation {
    std::vector<Phrase> phrases;
    std::map<char, int> label_ids; // non-special labels only

    int total_bars() const;
    int struct_id(char label) const;   // 0 for specials / unknown
    int max_struct_id() const;         // N, the number of structural contexts
    std::vector<int> bar_struct_ids() const; // per-bar struct id, length total_bars()
    int phrase_of_bar(int bar) const;  // phrase index containing an absolute bar
};

bool is_special_label(char label);

// Parses whitespace-separated `<letter><integer>` words, e.g.
// "i4 A8 B8 x4 ...". Throws ParseError (with the word index) on malformed
// words and CapacityError past 15 non-special labels.
StructureAnnotation parse_annotation(std::string_view text);

std::string serialize_annotation(const StructureAnnotation& annotation);

// Half-open bar range [begin, end), 0-based.
struct BarRange {
    int begin = 0;
    int end = 0;

    bool operator==(const BarRange&) const = default;
};

// First-occurrence phrase of each non-special label, keyed by struct id.
// Empty for songs made of specials only.
std::map<int, BarRange> select_structural_contexts(const StructureAnnotation& annotation);

// Per-token structure indices: every token of a bar takes that bar's struct
// id from `bar_to_struct_id`; specials take 0. Bars beyond the mapping
// raise CoverageError.
std::vector<int> assign_structure_indices(const TokenSeq& seq,
                                          const std::vector<int>& bar_to_struct_id);

// Annotation file: one song per line, `<song_id>\t<annotation>`.
std::map<std::string, StructureAnnotation> load_annotation_file(const std::string& path);

} // namespace remifill
