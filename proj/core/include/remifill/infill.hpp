#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "remifill/midi.hpp"
#include "remifill/model.hpp"
#include "remifill/token.hpp"

namespace remifill {

struct SamplingConfig {
    double top_p = 0.9;
    double temperature = 1.0;
    std::uint64_t seed = 0;
    bool greedy = false; // argmax decoding, ignores top_p/seed
};

// A declarative infill job: surrounding contexts, structural contexts, how
// many bars to produce and which structural context each bar follows
// (bar_plan, 0 = none). Past/future structure indices default to zero when
// not supplied.
struct InfillRequest {
    TokenSeq past;
    TokenSeq future;
    std::vector<TokenSeq> contexts;
    std::vector<int> past_indices;   // per token; empty means all zero
    std::vector<int> future_indices;
    int bar_count = 4;
    std::vector<int> bar_plan; // length bar_count, values in [0, contexts.size()]
    SamplingConfig sampling;
    int max_tokens = 4096;

    void validate() const; // throws ConfigError / IndexError
};

InfillRequest request_from_example(const InfillingExample& example, SamplingConfig sampling);

// JSON request file. Segments come as {"text": "..."} inline token text,
// {"file": path} (first line of a token file) or {"midi": path}; or the
// whole request derives from {"dataset": path, "case": n}.
InfillRequest load_request(const std::string& path);

// Samples from the smallest probability-sorted prefix reaching top_p,
// renormalized; probability ties order by ascending id. Throws
// DistributionError for NaN entries or a sum off from 1 by more than 1e-6.
int nucleus_sample(const std::vector<double>& distribution, double top_p, Rng& rng);

struct GenerationResult {
    TokenSeq tokens;      // the infilled segment, specials excluded
    bool complete = true; // false when max_tokens (or the position table) cut it off
};

// Grammar-constrained nucleus decoding with forced bar count-down: the
// first token is Bar(bar_count), every later Bar payload is masked to the
// remaining count, and EOS only unmasks once the final bar is open.
GenerationResult generate(const InfillRequest& request, const Model& model);

// Copies bars (cyclically) out of the structural context named per bar by
// the plan; plan value 0 emits an empty bar. Bar payloads count down.
TokenSeq copy_baseline(const InfillRequest& request);

// MIDI rendering of decoded segments at 480 ticks per quarter.
MidiFile midi_from_tokens(const TokenSeq& tokens);
MidiFile midi_from_segments(const TokenSeq& past, const TokenSeq& target, const TokenSeq& future);

} // namespace remifill
