// remifill: structure-aware melody infilling over extended REMI tokens.
// Subcommands cover the full pipeline: tokenize, build-dataset, train,
// infill, eval. All are deterministic for a fixed --seed; errors exit
// nonzero with a single machine-parsable line on stderr.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "remifill/infill.hpp"
#include "remifill/ingest.hpp"
#include "remifill/metrics.hpp"
#include "remifill/midi.hpp"
#include "remifill/model.hpp"
#include "remifill/structure.hpp"
#include "remifill/token.hpp"
#include "remifill/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace remifill;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    if (!out) throw IoError("failed writing " + path);
}

std::vector<std::string> split_list(const std::string& text, char delim) {
    std::vector<std::string> parts;
    std::string item;
    std::istringstream in(text);
    while (std::getline(in, item, delim))
        if (!item.empty()) parts.push_back(item);
    return parts;
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> values;
    for (const std::string& word : split_list(text, ',')) values.push_back(std::stoi(word));
    return values;
}

struct PipelineConfig {
    ModelConfig model;
    TrainConfig train;
};

PipelineConfig load_pipeline_config(const std::string& path) {
    PipelineConfig config;
    if (path.empty()) return config;
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ParseError("bad config JSON in " + path + ": " + e.what());
    }
    if (j.contains("model")) config.model = config_from_json(j.at("model").dump());
    if (j.contains("train")) config.train = train_config_from_json(j.at("train").dump());
    return config;
}

// ---- tokenize ----------------------------------------------------------

struct TokenizeArgs {
    std::string midi, annotation, out, song_id;
};

void cmd_tokenize(const TokenizeArgs& args) {
    std::string song_id = args.song_id.empty() ? fs::path(args.midi).stem().string() : args.song_id;
    auto annotations = load_annotation_file(args.annotation);
    auto found = annotations.find(song_id);
    if (found == annotations.end())
        throw ParseError("no annotation line for song id '" + song_id + "'");

    Song song = load_midi(args.midi, song_id, found->second);
    std::string out;
    for (const Phrase& phrase : song.annotation.phrases) {
        TokenSeq seq = encode_song_slice(song, phrase.start_bar,
                                         phrase.start_bar + phrase.length_bars, false);
        out += seq_to_text(seq);
        out += '\n';
    }
    write_file(args.out, out);
    std::cout << song_id << ": " << song.annotation.phrases.size() << " phrases, "
              << song.annotation.total_bars() << " bars -> " << args.out << "\n";
}

// ---- build-dataset -----------------------------------------------------

struct BuildArgs {
    std::string corpus_dir;
    bool synthetic = false;
    int songs = 16;
    std::string forms = "i2 A4 B4 A4 B4 o2;i2 A4 A4 B4 B4 o2;i2 A4 B4 C4 A4 B4 C4 o2";
    std::uint64_t seed = 7;
    double ratio = 0.9;
    std::string train_out, test_out;
};

std::vector<Song> load_corpus_dir(const std::string& dir) {
    fs::path index = fs::path(dir) / "annotations.txt";
    if (!fs::exists(index))
        throw CoverageError("no annotations.txt under " + dir + " (empty corpus)");
    auto annotations = load_annotation_file(index.string());
    std::vector<Song> songs;
    for (const auto& [song_id, annotation] : annotations) {
        fs::path midi = fs::path(dir) / (song_id + ".mid");
        if (!fs::exists(midi)) midi = fs::path(dir) / (song_id + ".midi");
        if (!fs::exists(midi)) throw IoError("no MIDI file for song id '" + song_id + "'");
        songs.push_back(load_midi(midi.string(), song_id, annotation));
    }
    return songs;
}

void cmd_build_dataset(const BuildArgs& args) {
    std::vector<Song> songs;
    if (args.synthetic) {
        songs = make_synthetic_corpus(args.seed, args.songs, split_list(args.forms, ';'));
    } else {
        if (args.corpus_dir.empty())
            throw ConfigError("build-dataset needs --corpus or --synthetic");
        songs = load_corpus_dir(args.corpus_dir);
    }
    if (songs.empty()) throw CoverageError("corpus has no songs");

    auto [train_songs, test_songs] = split_corpus(songs, args.ratio, args.seed);
    std::vector<InfillingExample> train_examples;
    for (const Song& song : train_songs) {
        auto examples = build_training_examples(song);
        train_examples.insert(train_examples.end(), examples.begin(), examples.end());
    }
    std::vector<InfillingExample> test_cases = build_test_cases(test_songs);

    save_dataset(args.train_out, train_examples);
    save_dataset(args.test_out, test_cases);
    std::cout << "songs: " << songs.size() << " (train " << train_songs.size() << ", test "
              << test_songs.size() << ")\n"
              << "training examples: " << train_examples.size() << " -> " << args.train_out << "\n"
              << "test cases: " << test_cases.size() << " -> " << args.test_out << "\n";
}

// ---- train -------------------------------------------------------------

struct TrainArgs {
    std::string dataset, checkpoint_out, config_path, loss_log;
    std::optional<int> steps;
    std::optional<int> batch_size;
    std::optional<double> lr;
    std::optional<double> stop_at_loss;
    std::optional<std::uint64_t> seed;
    bool full_sequence_loss = false;
};

void cmd_train(const TrainArgs& args) {
    PipelineConfig config = load_pipeline_config(args.config_path);
    if (args.steps) config.train.max_steps = *args.steps;
    if (args.batch_size) config.train.batch_size = *args.batch_size;
    if (args.lr) config.train.learning_rate = *args.lr;
    if (args.stop_at_loss) config.train.stop_at_loss = *args.stop_at_loss;
    if (args.seed) config.train.seed = *args.seed;
    if (args.full_sequence_loss) config.train.full_sequence_loss = true;
    if (!args.loss_log.empty()) config.train.loss_log_path = args.loss_log;
    config.train.checkpoint_path = args.checkpoint_out;

    auto dataset = load_dataset(args.dataset);
    Model model(config.model, config.train.seed);
    TrainResult result = train_loop(model, dataset, config.train);
    model.save_checkpoint(args.checkpoint_out);

    if (result.loss_curve.empty())
        std::cout << "0 steps; wrote the initialized checkpoint to " << args.checkpoint_out << "\n";
    else
        std::cout << result.loss_curve.size() << " steps; final loss "
                  << result.loss_curve.back() << "; checkpoint -> " << args.checkpoint_out << "\n";
}

// ---- infill ------------------------------------------------------------

struct InfillArgs {
    std::string checkpoint, request, midi_out, tokens_out, splice_out, baseline, plan;
    std::optional<std::uint64_t> seed;
    std::optional<double> top_p;
    std::optional<int> bars;
    bool greedy = false;
    bool all_cases = false;
};

void apply_overrides(InfillRequest& request, const InfillArgs& args) {
    if (args.seed) request.sampling.seed = *args.seed;
    if (args.top_p) request.sampling.top_p = *args.top_p;
    if (args.greedy) request.sampling.greedy = true;
    if (args.bars) request.bar_count = *args.bars;
    if (!args.plan.empty()) request.bar_plan = parse_int_list(args.plan);
    if (args.bars && args.plan.empty() &&
        request.bar_plan.size() != static_cast<std::size_t>(request.bar_count))
        request.bar_plan.assign(static_cast<std::size_t>(request.bar_count),
                                request.contexts.empty() ? 0 : 1);
    request.validate();
}

TokenSeq run_one(const InfillRequest& request, const std::optional<Model>& model,
                 const std::string& baseline, bool* complete) {
    if (baseline == "copy") {
        if (complete) *complete = true;
        return copy_baseline(request);
    }
    GenerationResult result = generate(request, *model);
    if (complete) *complete = result.complete;
    return result.tokens;
}

void cmd_infill(const InfillArgs& args) {
    if (!args.baseline.empty() && args.baseline != "copy")
        throw ConfigError("unknown baseline '" + args.baseline + "'");
    std::optional<Model> model;
    if (args.baseline.empty()) {
        if (args.checkpoint.empty()) throw ConfigError("infill needs --checkpoint");
        model.emplace(Model::load_checkpoint(args.checkpoint));
    }

    if (args.all_cases) {
        json j = json::parse(read_file(args.request));
        if (!j.contains("dataset"))
            throw ConfigError("--all-cases needs a request file with a dataset field");
        if (args.tokens_out.empty()) throw ConfigError("--all-cases needs --tokens-out");
        auto examples = load_dataset(j.at("dataset").get<std::string>());

        SamplingConfig sampling;
        std::uint64_t base_seed = args.seed.value_or(0);
        std::string out;
        int incomplete = 0;
        for (std::size_t i = 0; i < examples.size(); ++i) {
            InfillRequest request = request_from_example(examples[i], sampling);
            InfillArgs per_case = args;
            per_case.bars = std::nullopt; // case geometry comes from the dataset
            per_case.plan.clear();
            apply_overrides(request, per_case);
            request.sampling.seed = mix_seed(base_seed, i);
            bool complete = true;
            TokenSeq tokens = run_one(request, model, args.baseline, &complete);
            if (!complete) ++incomplete;
            out += seq_to_text(tokens);
            out += '\n';
        }
        write_file(args.tokens_out, out);
        std::cout << examples.size() << " cases -> " << args.tokens_out;
        if (incomplete) std::cout << " (" << incomplete << " truncated)";
        std::cout << "\n";
        return;
    }

    InfillRequest request = load_request(args.request);
    apply_overrides(request, args);
    bool complete = true;
    TokenSeq tokens = run_one(request, model, args.baseline, &complete);

    if (!args.tokens_out.empty()) write_file(args.tokens_out, seq_to_text(tokens) + "\n");
    if (!args.midi_out.empty()) write_midi(args.midi_out, midi_from_tokens(tokens));
    if (!args.splice_out.empty())
        write_midi(args.splice_out, midi_from_segments(request.past, tokens, request.future));
    std::cout << count_bars(tokens) << " bars, " << tokens.size() << " tokens"
              << (complete ? "" : " (truncated: max_tokens reached before EOS)") << "\n";
}

// ---- eval --------------------------------------------------------------

struct EvalArgs {
    std::string cases, outputs, report_out, records_out;
};

void cmd_eval(const EvalArgs& args) {
    auto examples = load_dataset(args.cases);
    std::vector<EvalCase> cases;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        EvalCase c;
        c.id = "case-" + std::to_string(i);
        c.past = segment_from_tokens(examples[i].past);
        c.future = segment_from_tokens(examples[i].future);
        c.target = segment_from_tokens(examples[i].target);
        cases.push_back(std::move(c));
    }

    std::vector<Segment> outputs;
    {
        std::ifstream in(args.outputs);
        if (!in) throw IoError("cannot open outputs file " + args.outputs);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            outputs.push_back(segment_from_tokens(seq_from_text(line)));
        }
    }

    MetricsReport report = evaluate(cases, outputs);
    std::string text = format_report(report);
    if (!args.report_out.empty()) write_file(args.report_out, text);
    if (!args.records_out.empty()) write_file(args.records_out, per_case_records(report));
    std::cout << text;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"structure-aware melody infilling (extended REMI tokens)"};
    app.require_subcommand(1);

    TokenizeArgs tok;
    auto* tokenize = app.add_subcommand("tokenize", "MIDI + annotation -> token text");
    tokenize->add_option("--midi", tok.midi, "input MIDI file")->required();
    tokenize->add_option("--annotation", tok.annotation, "annotation file (id<TAB>form)")
        ->required()
        ->envname("REMIFILL_ANNOTATION");
    tokenize->add_option("--out", tok.out, "output token file")->required();
    tokenize->add_option("--song-id", tok.song_id, "song id (default: MIDI filename stem)");

    BuildArgs build;
    auto* build_cmd = app.add_subcommand("build-dataset", "corpus -> train/test datasets");
    build_cmd->add_option("--corpus", build.corpus_dir, "directory with *.mid + annotations.txt")
        ->envname("REMIFILL_CORPUS");
    build_cmd->add_flag("--synthetic", build.synthetic, "generate the synthetic corpus instead");
    build_cmd->add_option("--songs", build.songs, "synthetic song count");
    build_cmd->add_option("--forms", build.forms, "semicolon-separated synthetic forms");
    build_cmd->add_option("--seed", build.seed, "corpus + split seed")->envname("REMIFILL_SEED");
    build_cmd->add_option("--ratio", build.ratio, "train split ratio");
    build_cmd->add_option("--train-out", build.train_out, "training dataset file")->required();
    build_cmd->add_option("--test-out", build.test_out, "test dataset file")->required();

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "teacher-forced training");
    train_cmd->add_option("--dataset", train.dataset, "training dataset file")->required();
    train_cmd->add_option("--checkpoint-out", train.checkpoint_out, "checkpoint path")->required();
    train_cmd->add_option("--config", train.config_path, "JSON with model/train sections")
        ->envname("REMIFILL_CONFIG");
    train_cmd->add_option("--steps", train.steps, "max steps");
    train_cmd->add_option("--batch-size", train.batch_size, "batch size");
    train_cmd->add_option("--lr", train.lr, "learning rate");
    train_cmd->add_option("--stop-at-loss", train.stop_at_loss, "early-stop threshold");
    train_cmd->add_option("--seed", train.seed, "training seed")->envname("REMIFILL_SEED");
    train_cmd->add_flag("--full-sequence-loss", train.full_sequence_loss,
                        "score every position, not just the target region");
    train_cmd->add_option("--loss-log", train.loss_log, "per-step loss log file");

    InfillArgs infill;
    auto* infill_cmd = app.add_subcommand("infill", "generate an infilled segment");
    infill_cmd->add_option("--checkpoint", infill.checkpoint, "model checkpoint");
    infill_cmd->add_option("--request", infill.request, "declarative request JSON")->required();
    infill_cmd->add_option("--midi-out", infill.midi_out, "MIDI of the infilled segment");
    infill_cmd->add_option("--tokens-out", infill.tokens_out, "token text output");
    infill_cmd->add_option("--splice-out", infill.splice_out, "MIDI of past+target+future");
    infill_cmd->add_option("--baseline", infill.baseline, "'copy' for the copy baseline");
    infill_cmd->add_option("--seed", infill.seed, "sampling seed")->envname("REMIFILL_SEED");
    infill_cmd->add_option("--top-p", infill.top_p, "nucleus threshold")
        ->envname("REMIFILL_TOP_P");
    infill_cmd->add_option("--bars", infill.bars, "bar count override");
    infill_cmd->add_option("--plan", infill.plan, "comma-separated bar plan override");
    infill_cmd->add_flag("--greedy", infill.greedy, "argmax decoding");
    infill_cmd->add_flag("--all-cases", infill.all_cases,
                         "infill every case of the request's dataset");

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "H/GS/D metrics report");
    eval_cmd->add_option("--cases", eval.cases, "test dataset file")->required();
    eval_cmd->add_option("--outputs", eval.outputs, "generated token file")->required();
    eval_cmd->add_option("--report-out", eval.report_out, "report file");
    eval_cmd->add_option("--records-out", eval.records_out, "per-case CSV");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*tokenize) cmd_tokenize(tok);
        if (*build_cmd) cmd_build_dataset(build);
        if (*train_cmd) cmd_train(train);
        if (*infill_cmd) cmd_infill(infill);
        if (*eval_cmd) cmd_eval(eval);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: unexpected: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
