#include "remifill/structure.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace remifill {

bool is_special_label(char label) { return label == 'i' || label == 'x' || label == 'o'; }

int StructureAnnotation::total_bars() const {
    int bars = 0;
    for (const Phrase& p : phrases) bars += p.length_bars;
    return bars;
}

int StructureAnnotation::struct_id(char label) const {
    auto it = label_ids.find(static_cast<char>(std::tolower(static_cast<unsigned char>(label))));
    return it == label_ids.end() ? 0 : it->second;
}

int StructureAnnotation::max_struct_id() const {
    int n = 0;
    for (const auto& [label, id] : label_ids) n = std::max(n, id);
    return n;
}

std::vector<int> StructureAnnotation::bar_struct_ids() const {
    std::vector<int> ids;
    ids.reserve(total_bars());
    for (const Phrase& p : phrases)
        ids.insert(ids.end(), p.length_bars, struct_id(p.label));
    return ids;
}

int StructureAnnotation::phrase_of_bar(int bar) const {
    for (std::size_t i = 0; i < phrases.size(); ++i) {
        if (bar >= phrases[i].start_bar && bar < phrases[i].start_bar + phrases[i].length_bars)
            return static_cast<int>(i);
    }
    throw CoverageError("bar " + std::to_string(bar) + " outside annotation");
}

StructureAnnotation parse_annotation(std::string_view text) {
    StructureAnnotation annotation;
    std::istringstream in{std::string(text)};
    std::string word;
    std::size_t index = 0;
    int next_bar = 0;
    int next_id = 1;
    while (in >> word) {
        if (word.size() < 2 || !std::isalpha(static_cast<unsigned char>(word[0])))
            throw ParseError("malformed word '" + word + "' at index " + std::to_string(index));
        for (std::size_t i = 1; i < word.size(); ++i)
            if (!std::isdigit(static_cast<unsigned char>(word[i])))
                throw ParseError("malformed word '" + word + "' at index " + std::to_string(index));

        Phrase phrase;
        char raw = word[0];
        phrase.label = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
        phrase.melodic = std::isupper(static_cast<unsigned char>(raw)) != 0;
        phrase.length_bars = std::stoi(word.substr(1));
        if (phrase.length_bars < 1)
            throw ParseError("zero-length phrase '" + word + "' at index " + std::to_string(index));
        phrase.start_bar = next_bar;
        next_bar += phrase.length_bars;

        if (!is_special_label(phrase.label) && !annotation.label_ids.count(phrase.label)) {
            if (next_id > TokenRanges::kStructMax)
                throw CapacityError("more than " + std::to_string(TokenRanges::kStructMax) +
                                    " structure labels");
            annotation.label_ids[phrase.label] = next_id++;
        }
        annotation.phrases.push_back(phrase);
        ++index;
    }
    return annotation;
}

std::string serialize_annotation(const StructureAnnotation& annotation) {
    std::string out;
    for (std::size_t i = 0; i < annotation.phrases.size(); ++i) {
        const Phrase& p = annotation.phrases[i];
        if (i) out += ' ';
        char letter = p.melodic ? static_cast<char>(std::toupper(static_cast<unsigned char>(p.label)))
                                : p.label;
        out += letter;
        out += std::to_string(p.length_bars);
    }
    return out;
}

std::map<int, BarRange> select_structural_contexts(const StructureAnnotation& annotation) {
    std::map<int, BarRange> contexts;
    for (const Phrase& p : annotation.phrases) {
        if (is_special_label(p.label)) continue;
        int id = annotation.struct_id(p.label);
        if (!contexts.count(id))
            contexts[id] = {p.start_bar, p.start_bar + p.length_bars};
    }
    return contexts;
}

std::vector<int> assign_structure_indices(const TokenSeq& seq,
                                          const std::vector<int>& bar_to_struct_id) {
    std::vector<int> indices;
    indices.reserve(seq.size());
    int bar = -1;
    for (const Token& t : seq) {
        if (is_special(t.kind)) {
            indices.push_back(0);
            continue;
        }
        if (t.kind == TokenKind::Bar) ++bar;
        if (bar < 0 || bar >= static_cast<int>(bar_to_struct_id.size()))
            throw CoverageError("bar " + std::to_string(bar) + " has no structure mapping");
        indices.push_back(bar_to_struct_id[bar]);
    }
    return indices;
}

std::map<std::string, StructureAnnotation> load_annotation_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open annotation file " + path);
    std::map<std::string, StructureAnnotation> result;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw ParseError("missing tab separator at line " + std::to_string(lineno) + " of " +
                             path);
        result[line.substr(0, tab)] = parse_annotation(line.substr(tab + 1));
    }
    return result;
}

} // namespace remifill
