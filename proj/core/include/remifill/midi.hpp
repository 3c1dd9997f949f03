#pragma once

#include <string>
#include <vector>

#include "remifill/errors.hpp"

namespace remifill {

// Minimal standard-MIDI-file support: note on/off, track names, tempo.
// Enough to ingest POP909-style melody files and to emit infill results.

struct MidiNote {
    long onset_ticks = 0;
    long duration_ticks = 0;
    int pitch = 60;
    int velocity = 80;
};

struct MidiTrack {
    std::string name;
    std::vector<MidiNote> notes;
};

struct TempoChange {
    long tick = 0;
    double bpm = 120.0;
};

struct MidiFile {
    int division = 480; // ticks per quarter note
    std::vector<TempoChange> tempo_changes;
    std::vector<MidiTrack> tracks;

    double bpm_at(long tick) const;
};

MidiFile read_midi(const std::string& path);             // throws IoError
void write_midi(const std::string& path, const MidiFile& file);

} // namespace remifill
