#include "remifill/midi.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>

namespace remifill {

double MidiFile::bpm_at(long tick) const {
    double bpm = 120.0;
    for (const TempoChange& change : tempo_changes) {
        if (change.tick > tick) break;
        bpm = change.bpm;
    }
    return bpm;
}

namespace {

class ByteReader {
public:
    ByteReader(const std::string& path) : path_(path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open MIDI file " + path);
        data_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }

    bool eof() const { return pos_ >= data_.size(); }
    std::size_t pos() const { return pos_; }
    void seek(std::size_t pos) { pos_ = pos; }

    std::uint8_t u8() {
        if (pos_ >= data_.size()) throw IoError("truncated MIDI file " + path_);
        return static_cast<std::uint8_t>(data_[pos_++]);
    }
    std::uint32_t u16() { return (static_cast<std::uint32_t>(u8()) << 8) | u8(); }
    std::uint32_t u32() { return (static_cast<std::uint32_t>(u16()) << 16) | u16(); }

    std::uint32_t varint() {
        std::uint32_t value = 0;
        for (int i = 0; i < 4; ++i) {
            std::uint8_t byte = u8();
            value = (value << 7) | (byte & 0x7f);
            if (!(byte & 0x80)) return value;
        }
        throw IoError("bad variable-length quantity in " + path_);
    }

    std::string bytes(std::uint32_t n) {
        std::string out;
        out.reserve(n);
        for (std::uint32_t i = 0; i < n; ++i) out += static_cast<char>(u8());
        return out;
    }

    void skip(std::uint32_t n) {
        for (std::uint32_t i = 0; i < n; ++i) (void)u8();
    }

private:
    std::string path_;
    std::string data_;
    std::size_t pos_ = 0;
};

struct PendingNote {
    long onset = 0;
    int velocity = 0;
};

} // namespace

MidiFile read_midi(const std::string& path) {
    ByteReader r(path);
    if (r.bytes(4) != "MThd") throw IoError("not a MIDI file: " + path);
    std::uint32_t header_len = r.u32();
    (void)r.u16(); // format
    std::uint32_t ntracks = r.u16();
    std::uint32_t division = r.u16();
    if (division & 0x8000) throw IoError("SMPTE time division unsupported: " + path);
    if (header_len > 6) r.skip(header_len - 6);

    MidiFile file;
    file.division = static_cast<int>(division);

    for (std::uint32_t t = 0; t < ntracks; ++t) {
        if (r.bytes(4) != "MTrk") throw IoError("missing MTrk chunk in " + path);
        std::uint32_t length = r.u32();
        std::size_t end = r.pos() + length;

        MidiTrack track;
        std::map<int, PendingNote> pending; // pitch -> open note
        long tick = 0;
        std::uint8_t status = 0;

        auto close_note = [&](int pitch, long at) {
            auto it = pending.find(pitch);
            if (it == pending.end()) return;
            track.notes.push_back(
                {it->second.onset, std::max(at - it->second.onset, 1L), pitch, it->second.velocity});
            pending.erase(it);
        };

        while (r.pos() < end) {
            tick += r.varint();
            std::uint8_t byte = r.u8();
            if (byte & 0x80) {
                status = byte;
            } else {
                r.seek(r.pos() - 1); // running status
            }
            if (status == 0xff) {
                std::uint8_t type = r.u8();
                std::uint32_t len = r.varint();
                if (type == 0x03) {
                    track.name = r.bytes(len);
                } else if (type == 0x51 && len == 3) {
                    std::uint32_t uspq = (static_cast<std::uint32_t>(r.u8()) << 16);
                    uspq |= static_cast<std::uint32_t>(r.u8()) << 8;
                    uspq |= r.u8();
                    if (uspq > 0) file.tempo_changes.push_back({tick, 60000000.0 / uspq});
                } else {
                    r.skip(len);
                }
            } else if (status == 0xf0 || status == 0xf7) {
                r.skip(r.varint());
            } else {
                std::uint8_t kind = status & 0xf0;
                if (kind == 0x90) {
                    int pitch = r.u8();
                    int velocity = r.u8();
                    if (velocity > 0) {
                        close_note(pitch, tick); // restruck note ends the open one
                        pending[pitch] = {tick, velocity};
                    } else {
                        close_note(pitch, tick);
                    }
                } else if (kind == 0x80) {
                    int pitch = r.u8();
                    (void)r.u8();
                    close_note(pitch, tick);
                } else if (kind == 0xc0 || kind == 0xd0) {
                    r.skip(1);
                } else {
                    r.skip(2);
                }
            }
        }
        for (auto& [pitch, open] : std::map<int, PendingNote>(pending)) close_note(pitch, tick);
        std::sort(track.notes.begin(), track.notes.end(), [](const MidiNote& a, const MidiNote& b) {
            return a.onset_ticks != b.onset_ticks ? a.onset_ticks < b.onset_ticks
                                                  : a.pitch < b.pitch;
        });
        file.tracks.push_back(std::move(track));
        r.seek(end);
    }
    std::sort(file.tempo_changes.begin(), file.tempo_changes.end(),
              [](const TempoChange& a, const TempoChange& b) { return a.tick < b.tick; });
    return file;
}

namespace {

void put_u16(std::string& out, std::uint32_t v) {
    out += static_cast<char>((v >> 8) & 0xff);
    out += static_cast<char>(v & 0xff);
}

void put_u32(std::string& out, std::uint32_t v) {
    put_u16(out, (v >> 16) & 0xffff);
    put_u16(out, v & 0xffff);
}

void put_varint(std::string& out, std::uint32_t v) {
    char buf[4];
    int n = 0;
    buf[n++] = static_cast<char>(v & 0x7f);
    while ((v >>= 7) != 0) buf[n++] = static_cast<char>((v & 0x7f) | 0x80);
    while (n) out += buf[--n];
}

struct RawEvent {
    long tick;
    int order; // stable ordering for simultaneous events
    std::string payload;
};

std::string render_track(const MidiTrack& track, const std::vector<TempoChange>* tempi) {
    std::vector<RawEvent> events;
    if (!track.name.empty()) {
        std::string meta;
        meta += '\xff';
        meta += '\x03';
        put_varint(meta, static_cast<std::uint32_t>(track.name.size()));
        meta += track.name;
        events.push_back({0, 0, meta});
    }
    if (tempi) {
        for (const TempoChange& change : *tempi) {
            std::uint32_t uspq = static_cast<std::uint32_t>(60000000.0 / change.bpm + 0.5);
            std::string meta;
            meta += '\xff';
            meta += '\x51';
            meta += '\x03';
            meta += static_cast<char>((uspq >> 16) & 0xff);
            meta += static_cast<char>((uspq >> 8) & 0xff);
            meta += static_cast<char>(uspq & 0xff);
            events.push_back({change.tick, 1, meta});
        }
    }
    for (const MidiNote& note : track.notes) {
        std::string on;
        on += '\x90';
        on += static_cast<char>(note.pitch & 0x7f);
        on += static_cast<char>(std::clamp(note.velocity, 1, 127));
        events.push_back({note.onset_ticks, 3, on});
        std::string off;
        off += '\x80';
        off += static_cast<char>(note.pitch & 0x7f);
        off += '\x40';
        events.push_back({note.onset_ticks + std::max(note.duration_ticks, 1L), 2, off});
    }
    std::stable_sort(events.begin(), events.end(), [](const RawEvent& a, const RawEvent& b) {
        return a.tick != b.tick ? a.tick < b.tick : a.order < b.order;
    });

    std::string body;
    long tick = 0;
    for (const RawEvent& ev : events) {
        put_varint(body, static_cast<std::uint32_t>(ev.tick - tick));
        tick = ev.tick;
        body += ev.payload;
    }
    body += '\x00';
    body += '\xff';
    body += '\x2f';
    body += '\x00'; // end of track
    return body;
}

} // namespace

void write_midi(const std::string& path, const MidiFile& file) {
    std::string out;
    out += "MThd";
    put_u32(out, 6);
    put_u16(out, 1); // format 1
    put_u16(out, static_cast<std::uint32_t>(file.tracks.size()));
    put_u16(out, static_cast<std::uint32_t>(file.division));
    for (std::size_t i = 0; i < file.tracks.size(); ++i) {
        std::string body = render_track(file.tracks[i], i == 0 ? &file.tempo_changes : nullptr);
        out += "MTrk";
        put_u32(out, static_cast<std::uint32_t>(body.size()));
        out += body;
    }
    std::ofstream stream(path, std::ios::binary);
    if (!stream) throw IoError("cannot write MIDI file " + path);
    stream.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!stream) throw IoError("failed writing MIDI file " + path);
}

} // namespace remifill
