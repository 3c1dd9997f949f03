#include "remifill/infill.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "remifill/structure.hpp"
#include "remifill/tokenizer.hpp"

namespace remifill {

using json = nlohmann::json;

void InfillRequest::validate() const {
    if (bar_count < TokenRanges::kBarMin || bar_count > TokenRanges::kBarMax)
        throw ConfigError("bar_count must be in [1,32], got " + std::to_string(bar_count));
    if (bar_plan.size() != static_cast<std::size_t>(bar_count))
        throw ConfigError("bar_plan length " + std::to_string(bar_plan.size()) +
                          " != bar_count " + std::to_string(bar_count));
    for (int y : bar_plan)
        if (y < 0 || y > static_cast<int>(contexts.size()))
            throw IndexError("bar_plan index " + std::to_string(y) + " exceeds " +
                             std::to_string(contexts.size()) + " contexts");
    if (!past_indices.empty() && past_indices.size() != past.size())
        throw ConfigError("past_indices length mismatch");
    if (!future_indices.empty() && future_indices.size() != future.size())
        throw ConfigError("future_indices length mismatch");
    if (!(sampling.top_p > 0.0 && sampling.top_p <= 1.0))
        throw ConfigError("top_p must be in (0,1]");
    if (sampling.temperature <= 0.0) throw ConfigError("temperature must be positive");
    if (max_tokens < 1) throw ConfigError("max_tokens must be positive");
}

InfillRequest request_from_example(const InfillingExample& example, SamplingConfig sampling) {
    InfillRequest request;
    request.past = example.past;
    request.future = example.future;
    request.contexts = example.contexts;
    request.past_indices = example.past_indices;
    request.future_indices = example.future_indices;
    request.bar_count = example.target_bars;
    for (std::size_t i = 0; i < example.target.size(); ++i)
        if (example.target[i].kind == TokenKind::Bar)
            request.bar_plan.push_back(example.target_indices[i]);
    request.sampling = sampling;
    return request;
}

int nucleus_sample(const std::vector<double>& distribution, double top_p, Rng& rng) {
    if (distribution.empty()) throw DistributionError("empty distribution");
    double sum = 0.0;
    for (double p : distribution) {
        if (!std::isfinite(p) || p < 0.0)
            throw DistributionError("distribution has an invalid entry");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw DistributionError("distribution sums to " + std::to_string(sum));

    std::vector<int> order(distribution.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return distribution[a] != distribution[b] ? distribution[a] > distribution[b] : a < b;
    });

    double mass = 0.0;
    std::size_t nucleus = 0;
    while (nucleus < order.size()) {
        mass += distribution[order[nucleus]];
        ++nucleus;
        if (mass >= top_p) break;
    }

    double u = rng.next_double() * mass;
    for (std::size_t i = 0; i < nucleus; ++i) {
        u -= distribution[order[i]];
        if (u <= 0.0) return order[i];
    }
    return order[nucleus - 1];
}

namespace {

// Vocabulary id blocks, resolved once.
struct IdBlocks {
    int bar, strct, tempo, position, pitch, duration;
    int bos, sep, eos;

    IdBlocks() {
        Vocabulary v;
        bar = v.id_of(bar_token(TokenRanges::kBarMin));
        strct = v.id_of(struct_token(TokenRanges::kStructMin));
        tempo = v.id_of(tempo_token(TokenRanges::kTempoMin));
        position = v.id_of(position_token(TokenRanges::kPositionMin));
        pitch = v.id_of(pitch_token(TokenRanges::kPitchMin));
        duration = v.id_of(duration_token(TokenRanges::kDurationMin));
        bos = v.bos_id();
        sep = v.sep_id();
        eos = v.eos_id();
    }
};

enum class GenState { AfterBar, AfterStruct, InBar, AfterPosition, AfterPitch };

std::vector<int> indices_or_zero(const std::vector<int>& given, std::size_t n) {
    return given.empty() ? std::vector<int>(n, 0) : given;
}

} // namespace

GenerationResult generate(const InfillRequest& request, const Model& model) {
    request.validate();
    Vocabulary vocab;
    const IdBlocks blocks;
    const ModelConfig& config = model.config();
    const auto [off_past, off_target, off_future] = config.order_offsets;

    // Wrapped prompt {BOS, past, SEP, future, SEP}; the target grows after it.
    std::vector<int> ids, positions, indices;
    auto push = [&](int id, int position, int index) {
        ids.push_back(id);
        positions.push_back(position);
        indices.push_back(index);
    };
    std::vector<int> past_idx = indices_or_zero(request.past_indices, request.past.size());
    std::vector<int> future_idx = indices_or_zero(request.future_indices, request.future.size());

    push(vocab.bos_id(), off_past, 0);
    for (std::size_t i = 0; i < request.past.size(); ++i)
        push(vocab.id_of(request.past[i]), static_cast<int>(ids.size()) + off_past, past_idx[i]);
    const int sep1_at = static_cast<int>(ids.size());
    push(vocab.sep_id(), sep1_at + off_future, 0);
    for (std::size_t i = 0; i < request.future.size(); ++i)
        push(vocab.id_of(request.future[i]), static_cast<int>(ids.size()) + off_future,
             future_idx[i]);
    const int future_end = static_cast<int>(ids.size());
    push(vocab.sep_id(), future_end + off_target, 0);
    const int target_begin = static_cast<int>(ids.size());

    // Segment ordering and position-table limits cap how far we can decode.
    if (!request.past.empty() && !(static_cast<int>(request.past.size()) + off_past <
                                   target_begin + off_target))
        throw ConfigError("order offsets do not place the past before the target");
    int limit = request.max_tokens;
    if (!request.future.empty())
        limit = std::min(limit, (sep1_at + 1) + off_future - off_target - target_begin - 1);
    limit = std::min(limit, config.max_position - 1 - off_target - target_begin);
    if (limit < 2) throw ConfigError("order offsets leave no room for the requested bars");

    std::vector<std::vector<int>> context_ids;
    for (const TokenSeq& ctx : request.contexts) context_ids.push_back(ids_of(vocab, ctx));

    Rng rng(request.sampling.seed);
    TokenSeq generated;
    auto emit = [&](const Token& token, int bar_ordinal) {
        generated.push_back(token);
        push(vocab.id_of(token), static_cast<int>(ids.size()) + off_target,
             request.bar_plan[static_cast<std::size_t>(bar_ordinal)]);
    };

    GenState state = GenState::AfterBar;
    int remaining = request.bar_count;
    int bar_ordinal = 0;
    emit(bar_token(remaining), bar_ordinal); // forced first token

    GenerationResult result;
    result.complete = false;
    while (static_cast<int>(generated.size()) < limit) {
        // Kind mask for the current grammar state; Bar payloads are pinned
        // to the count-down schedule.
        std::vector<char> allowed(static_cast<std::size_t>(vocab.size()), 0);
        switch (state) {
        case GenState::AfterBar:
            for (int i = 0; i < 16; ++i) allowed[static_cast<std::size_t>(blocks.strct + i)] = 1;
            break;
        case GenState::AfterStruct:
            for (int i = 0; i < 47; ++i) allowed[static_cast<std::size_t>(blocks.tempo + i)] = 1;
            break;
        case GenState::InBar:
            for (int i = 0; i < 16; ++i) allowed[static_cast<std::size_t>(blocks.position + i)] = 1;
            if (remaining > 1)
                allowed[static_cast<std::size_t>(blocks.bar + remaining - 2)] = 1; // Bar(remaining-1)
            else
                allowed[static_cast<std::size_t>(blocks.eos)] = 1;
            break;
        case GenState::AfterPosition:
            for (int i = 0; i < 86; ++i) allowed[static_cast<std::size_t>(blocks.pitch + i)] = 1;
            break;
        case GenState::AfterPitch:
            for (int i = 0; i < 16; ++i) allowed[static_cast<std::size_t>(blocks.duration + i)] = 1;
            break;
        }

        BatchExample ex;
        ex.ids = ids;
        ex.positions = positions;
        ex.indices = indices;
        ex.loss_mask.assign(ids.size(), 0);
        ex.context_ids = context_ids;
        Eigen::MatrixXd logits = model.forward_example(ex);
        Eigen::VectorXd row = logits.row(logits.rows() - 1);

        int chosen;
        if (request.sampling.greedy) {
            chosen = -1;
            double best = 0.0;
            for (int i = 0; i < vocab.size(); ++i) {
                if (!allowed[static_cast<std::size_t>(i)]) continue;
                if (chosen < 0 || row(i) > best) {
                    chosen = i;
                    best = row(i);
                }
            }
        } else {
            double mx = -std::numeric_limits<double>::infinity();
            for (int i = 0; i < vocab.size(); ++i)
                if (allowed[static_cast<std::size_t>(i)]) mx = std::max(mx, row(i));
            std::vector<double> probs(static_cast<std::size_t>(vocab.size()), 0.0);
            double z = 0.0;
            for (int i = 0; i < vocab.size(); ++i) {
                if (!allowed[static_cast<std::size_t>(i)]) continue;
                double p = std::exp((row(i) - mx) / request.sampling.temperature);
                probs[static_cast<std::size_t>(i)] = p;
                z += p;
            }
            for (double& p : probs) p /= z;
            chosen = nucleus_sample(probs, request.sampling.top_p, rng);
            if (!allowed[static_cast<std::size_t>(chosen)])
                throw GrammarError("sampled token left the constrained nucleus");
        }

        if (chosen == blocks.eos) {
            result.complete = true;
            break;
        }
        Token token = vocab.token_of(chosen);
        switch (token.kind) {
        case TokenKind::Bar:
            --remaining;
            ++bar_ordinal;
            state = GenState::AfterBar;
            break;
        case TokenKind::Struct: state = GenState::AfterStruct; break;
        case TokenKind::Tempo: state = GenState::InBar; break;
        case TokenKind::Position: state = GenState::AfterPosition; break;
        case TokenKind::Pitch: state = GenState::AfterPitch; break;
        case TokenKind::Duration: state = GenState::InBar; break;
        default: throw GrammarError("sampled an impossible special token");
        }
        emit(token, bar_ordinal);
    }

    if (!result.complete) {
        // Drop any dangling partial bar header or note group so the
        // truncated sequence still decodes.
        while (!generated.empty() &&
               (generated.back().kind == TokenKind::Position ||
                generated.back().kind == TokenKind::Pitch ||
                generated.back().kind == TokenKind::Struct ||
                generated.back().kind == TokenKind::Bar))
            generated.pop_back();
    }
    result.tokens = std::move(generated);
    return result;
}

TokenSeq copy_baseline(const InfillRequest& request) {
    request.validate();
    if (request.contexts.empty())
        throw ConfigError("copy baseline needs at least one structural context");

    std::vector<std::vector<DecodedBar>> context_bars;
    for (const TokenSeq& ctx : request.contexts) {
        auto bars = decode_to_bars(ctx);
        if (bars.empty()) throw ConfigError("structural context with no bars");
        context_bars.push_back(std::move(bars));
    }
    const int default_tempo = context_bars[0][0].tempo;

    TokenSeq out;
    for (int i = 0; i < request.bar_count; ++i) {
        const int plan = request.bar_plan[static_cast<std::size_t>(i)];
        out.push_back(bar_token(request.bar_count - i));
        out.push_back(struct_token(plan));
        if (plan == 0) {
            out.push_back(tempo_token(default_tempo));
            continue;
        }
        const auto& bars = context_bars[static_cast<std::size_t>(plan - 1)];
        const DecodedBar& src = bars[static_cast<std::size_t>(i) % bars.size()];
        out.push_back(tempo_token(src.tempo));
        for (const NoteEvent& note : src.notes) {
            out.push_back(position_token(note.position));
            out.push_back(pitch_token(note.pitch));
            out.push_back(duration_token(note.duration));
        }
    }
    return out;
}

namespace {

constexpr int kDivision = 480;
constexpr int kTicksPer16th = kDivision / 4;

MidiFile midi_from_decoded(const std::vector<DecodedBar>& bars) {
    MidiFile file;
    file.division = kDivision;
    MidiTrack track;
    track.name = "MELODY";
    int tempo = 0;
    for (std::size_t b = 0; b < bars.size(); ++b) {
        if (bars[b].tempo != tempo) {
            tempo = bars[b].tempo;
            file.tempo_changes.push_back(
                {static_cast<long>(b) * 16 * kTicksPer16th, static_cast<double>(tempo)});
        }
        for (const NoteEvent& note : bars[b].notes) {
            MidiNote raw;
            raw.onset_ticks = (static_cast<long>(b) * 16 + note.position) * kTicksPer16th;
            raw.duration_ticks = static_cast<long>(note.duration) * kTicksPer16th;
            raw.pitch = note.pitch;
            track.notes.push_back(raw);
        }
    }
    file.tracks.push_back(std::move(track));
    return file;
}

} // namespace

MidiFile midi_from_tokens(const TokenSeq& tokens) { return midi_from_decoded(decode_to_bars(tokens)); }

MidiFile midi_from_segments(const TokenSeq& past, const TokenSeq& target, const TokenSeq& future) {
    std::vector<DecodedBar> all;
    for (const TokenSeq* seq : {&past, &target, &future}) {
        auto bars = decode_to_bars(*seq);
        all.insert(all.end(), bars.begin(), bars.end());
    }
    return midi_from_decoded(all);
}

namespace {

TokenSeq tokens_from_midi(const std::string& path, const std::vector<int>& bar_plan) {
    MidiFile file = read_midi(path);
    std::vector<const MidiTrack*> sources;
    for (const MidiTrack& track : file.tracks) {
        std::string name = track.name;
        for (char& c : name) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (name == "melody" || name == "bridge") sources.push_back(&track);
    }
    if (sources.empty()) // fall back to every track for ad-hoc request inputs
        for (const MidiTrack& track : file.tracks) sources.push_back(&track);

    const long t16 = std::max(file.division / 4, 1);
    std::vector<BarNotes> bars;
    for (const MidiTrack* track : sources) {
        for (const MidiNote& raw : track->notes) {
            NoteEvent note = quantize(raw.pitch, raw.onset_ticks, raw.duration_ticks,
                                      file.bpm_at(raw.onset_ticks), t16);
            if (note.bar >= static_cast<int>(bars.size())) bars.resize(note.bar + 1);
            bars[static_cast<std::size_t>(note.bar)].push_back(note);
        }
    }
    std::vector<int> struct_ids(bars.size(), 0);
    if (!bar_plan.empty()) {
        if (bar_plan.size() != bars.size())
            throw ConfigError("per-bar plan length " + std::to_string(bar_plan.size()) +
                              " != " + std::to_string(bars.size()) + " bars in " + path);
        struct_ids = bar_plan;
    }
    return encode_bars(bars, struct_ids, false);
}

TokenSeq segment_from_json(const json& j, const std::string& request_path,
                           const std::vector<int>& bar_plan) {
    if (j.is_null()) return {};
    if (j.contains("text")) return seq_from_text(j.at("text").get<std::string>());
    if (j.contains("file")) {
        std::ifstream in(j.at("file").get<std::string>());
        if (!in) throw IoError("cannot open token file " + j.at("file").get<std::string>());
        std::string line;
        std::getline(in, line);
        return seq_from_text(line);
    }
    if (j.contains("midi")) return tokens_from_midi(j.at("midi").get<std::string>(), bar_plan);
    throw ParseError("segment in " + request_path + " needs one of text/file/midi");
}

} // namespace

InfillRequest load_request(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open request file " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError("bad request JSON in " + path + ": " + e.what());
    }

    InfillRequest request;
    if (j.contains("dataset")) {
        auto examples = load_dataset(j.at("dataset").get<std::string>());
        auto index = j.value("case", 0);
        if (index < 0 || static_cast<std::size_t>(index) >= examples.size())
            throw IndexError("case " + std::to_string(index) + " outside dataset of " +
                             std::to_string(examples.size()));
        request = request_from_example(examples[static_cast<std::size_t>(index)], {});
    } else {
        std::vector<int> past_plan = j.value("past_plan", std::vector<int>{});
        std::vector<int> future_plan = j.value("future_plan", std::vector<int>{});
        request.past = segment_from_json(j.value("past", json()), path, past_plan);
        request.future = segment_from_json(j.value("future", json()), path, future_plan);
        if (j.contains("contexts"))
            for (const json& ctx : j.at("contexts"))
                request.contexts.push_back(segment_from_json(ctx, path, {}));
        if (!past_plan.empty())
            request.past_indices = assign_structure_indices(request.past, past_plan);
        if (!future_plan.empty())
            request.future_indices = assign_structure_indices(request.future, future_plan);
    }

    if (j.contains("bar_count")) request.bar_count = j.at("bar_count").get<int>();
    if (j.contains("bar_plan")) request.bar_plan = j.at("bar_plan").get<std::vector<int>>();
    if (request.bar_plan.empty() && !request.contexts.empty())
        request.bar_plan.assign(static_cast<std::size_t>(request.bar_count), 1);
    if (j.contains("sampling")) {
        const json& s = j.at("sampling");
        request.sampling.top_p = s.value("top_p", request.sampling.top_p);
        request.sampling.temperature = s.value("temperature", request.sampling.temperature);
        request.sampling.seed = s.value("seed", request.sampling.seed);
        request.sampling.greedy = s.value("greedy", request.sampling.greedy);
    }
    request.max_tokens = j.value("max_tokens", request.max_tokens);
    request.validate();
    return request;
}

} // namespace remifill
