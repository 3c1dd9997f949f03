#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "remifill/midi.hpp"
#include "remifill/structure.hpp"

using namespace remifill;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

fs::path work_dir() {
    fs::path dir = fs::temp_directory_path() / "remifill_cli_tests";
    fs::create_directories(dir);
    return dir;
}

RunResult run_cli(const std::string& args) {
    fs::path dir = work_dir();
    fs::path out = dir / "stdout.txt";
    fs::path err = dir / "stderr.txt";
    std::string cmd = std::string(REMIFILL_CLI_PATH) + " " + args + " > " + out.string() + " 2> " +
                      err.string();
    int status = std::system(cmd.c_str());
    int code = status < 0 ? status : WEXITSTATUS(status);
    return {code, slurp(out), slurp(err)};
}

// Two-bar fixture: one note per bar, constant tempo 120, annotation "A1 B1".
void write_fixture(const fs::path& dir) {
    MidiFile file;
    file.division = 480;
    file.tempo_changes.push_back({0, 120.0});
    MidiTrack melody;
    melody.name = "MELODY";
    melody.notes.push_back({0, 480, 60, 90});
    melody.notes.push_back({16 * 120, 480, 62, 90});
    file.tracks.push_back(melody);
    write_midi((dir / "fixture.mid").string(), file);

    std::ofstream ann(dir / "annotations.txt");
    ann << "fixture\tA1 B1\n";
}

} // namespace

TEST_CASE("tokenize writes golden phrase lines and reruns are identical") {
    fs::path dir = work_dir();
    write_fixture(dir);
    fs::path out = dir / "tokens.txt";

    RunResult r = run_cli("tokenize --midi " + (dir / "fixture.mid").string() + " --annotation " +
                          (dir / "annotations.txt").string() + " --out " + out.string());
    REQUIRE(r.exit_code == 0);
    CHECK(slurp(out) == "BAR(1) STRUCT(1) TEMPO(120) POS(0) PITCH(60) DUR(4)\n"
                        "BAR(1) STRUCT(2) TEMPO(120) POS(0) PITCH(62) DUR(4)\n");

    std::string first = slurp(out);
    RunResult again = run_cli("tokenize --midi " + (dir / "fixture.mid").string() +
                              " --annotation " + (dir / "annotations.txt").string() + " --out " +
                              out.string());
    CHECK(again.exit_code == 0);
    CHECK(slurp(out) == first);
}

TEST_CASE("tokenize fails with a one-line reason for unknown song ids") {
    fs::path dir = work_dir();
    write_fixture(dir);
    RunResult r = run_cli("tokenize --midi " + (dir / "fixture.mid").string() + " --annotation " +
                          (dir / "annotations.txt").string() + " --out " +
                          (dir / "x.txt").string() + " --song-id nope");
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("error: ParseError") != std::string::npos);
    CHECK(r.err.find("nope") != std::string::npos);
    CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
}

TEST_CASE("build-dataset --synthetic is byte-deterministic") {
    fs::path dir = work_dir();
    auto build = [&](const std::string& tag) {
        fs::path train = dir / ("train_" + tag + ".txt");
        fs::path test = dir / ("test_" + tag + ".txt");
        RunResult r = run_cli("build-dataset --synthetic --songs 4 --seed 7 --train-out " +
                              train.string() + " --test-out " + test.string());
        REQUIRE(r.exit_code == 0);
        return slurp(train) + "\x01" + slurp(test);
    };
    CHECK(build("a") == build("b"));
}

TEST_CASE("train with 0 steps writes the seeded init checkpoint, deterministically") {
    fs::path dir = work_dir();
    fs::path train = dir / "train.txt";
    RunResult built = run_cli("build-dataset --synthetic --songs 2 --forms \"i1 A2 B2 A2 o1\""
                              " --seed 3 --train-out " +
                              train.string() + " --test-out " + (dir / "test.txt").string());
    REQUIRE(built.exit_code == 0);

    std::ofstream cfg(dir / "cfg.json");
    cfg << R"({"model": {"d_model": 16, "encoder_layers": 1, "decoder_layers": 1,
               "heads": 2, "cross_heads": 2, "ffn_dim": 32,
               "max_position": 256, "order_offsets": [0,0,128], "dropout": 0.0}})";
    cfg.close();

    auto train_once = [&](const std::string& tag) {
        fs::path ckpt = dir / ("model_" + tag + ".ckpt");
        RunResult r = run_cli("train --dataset " + train.string() + " --checkpoint-out " +
                              ckpt.string() + " --config " + (dir / "cfg.json").string() +
                              " --steps 0 --seed 5");
        REQUIRE(r.exit_code == 0);
        std::ifstream in(ckpt, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    };
    std::string a = train_once("a");
    CHECK(!a.empty());
    CHECK(a == train_once("b"));
}

TEST_CASE("infill copy baseline and eval round the pipeline") {
    fs::path dir = work_dir();
    fs::path test = dir / "pipeline_test.txt";
    RunResult built = run_cli("build-dataset --synthetic --songs 4 --forms \"i2 A4 A4 B4 B4 o2\""
                              " --seed 9 --train-out " +
                              (dir / "pipeline_train.txt").string() + " --test-out " +
                              test.string());
    REQUIRE(built.exit_code == 0);

    std::ofstream req(dir / "req.json");
    req << "{\"dataset\": \"" << test.string() << "\"}";
    req.close();

    fs::path outs = dir / "outs.txt";
    RunResult infill = run_cli("infill --request " + (dir / "req.json").string() +
                               " --baseline copy --all-cases --tokens-out " + outs.string());
    REQUIRE(infill.exit_code == 0);

    fs::path report = dir / "report.txt";
    fs::path records = dir / "records.csv";
    RunResult eval = run_cli("eval --cases " + test.string() + " --outputs " + outs.string() +
                             " --report-out " + report.string() + " --records-out " +
                             records.string());
    REQUIRE(eval.exit_code == 0);
    CHECK(slurp(report).find("cases:") != std::string::npos);
    CHECK(eval.out.find("0.00±0.00") != std::string::npos); // copy vs its own motif family

    // mismatched outputs exit nonzero with an AlignmentError line
    std::ofstream trunc(outs, std::ios::trunc);
    trunc << "BAR(1) STRUCT(0) TEMPO(120)\n";
    trunc.close();
    RunResult bad = run_cli("eval --cases " + test.string() + " --outputs " + outs.string() +
                            " --report-out " + report.string());
    CHECK(bad.exit_code == 1);
    CHECK(bad.err.find("AlignmentError") != std::string::npos);
}

TEST_CASE("infill rejects a plan index beyond the contexts") {
    fs::path dir = work_dir();
    std::ofstream req(dir / "bad_plan.json");
    req << R"json({
        "past": {"text": "BAR(1) STRUCT(0) TEMPO(120) POS(0) PITCH(50) DUR(2)"},
        "future": {"text": ""},
        "contexts": [{"text": "BAR(1) STRUCT(1) TEMPO(120) POS(0) PITCH(60) DUR(2)"}],
        "bar_count": 2, "bar_plan": [1, 2]
    })json";
    req.close();
    RunResult r = run_cli("infill --request " + (dir / "bad_plan.json").string() +
                          " --baseline copy --tokens-out " + (dir / "nope.txt").string());
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("IndexError") != std::string::npos);
}
