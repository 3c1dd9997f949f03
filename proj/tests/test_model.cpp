#include <doctest.h>

#include <filesystem>

#include "remifill/ingest.hpp"
#include "remifill/model.hpp"
#include "remifill/rng.hpp"

using namespace remifill;
using Mat = Eigen::MatrixXd;

namespace {

SegmentBoundaries bounds_for(std::size_t past, std::size_t future, std::size_t target) {
    SegmentBoundaries b;
    b.past_begin = 1;
    b.past_end = b.past_begin + past;
    b.future_begin = b.past_end + 1;
    b.future_end = b.future_begin + future;
    b.target_begin = b.future_end + 1;
    b.target_end = b.target_begin + target;
    b.total = b.target_end + 1;
    return b;
}

ModelConfig micro_config() {
    ModelConfig config = ModelConfig::tiny();
    config.d_model = 16;
    config.heads = 2;
    config.cross_heads = 2;
    config.ffn_dim = 32;
    config.max_position = 256;
    config.order_offsets = {0, 0, 128};
    return config;
}

std::vector<InfillingExample> micro_examples() {
    auto songs = make_synthetic_corpus(21, 2, {"i1 A1 B1 A1 o1"});
    std::vector<InfillingExample> examples;
    for (const Song& song : songs) {
        auto built = build_training_examples(song);
        examples.insert(examples.end(), built.begin(), built.end());
    }
    return examples;
}

} // namespace

TEST_CASE("effective positions: worked arithmetic with offsets (0,0,4096)") {
    auto positions = effective_positions(bounds_for(10, 8, 12), {0, 0, 4096});

    CHECK(positions[0] == 0); // BOS with the past block
    for (int k = 1; k <= 10; ++k) CHECK(positions[static_cast<std::size_t>(k)] == k);
    CHECK(positions[11] == 11 + 4096); // SEP opening the future block
    CHECK(positions[12] == 12 + 4096);
    CHECK(positions[19] == 19 + 4096);
    CHECK(positions[20] == 20); // SEP opening the target block
    CHECK(positions[21] == 21); // first target token, >= 19
    CHECK(positions[33] == 33); // EOS with the target

    // every past < every target < every future (content segments)
    int max_past = 10, min_target = 21, max_target = 32, min_future = 12 + 4096;
    CHECK(max_past < min_target);
    CHECK(max_target < min_future);
}

TEST_CASE("zero offsets fail whenever a target precedes a nonempty future") {
    CHECK_THROWS_AS((void)effective_positions(bounds_for(4, 4, 4), {0, 0, 0}), ConfigError);
    // vacuous when only the target is nonempty
    CHECK_NOTHROW((void)effective_positions(bounds_for(0, 0, 4), {0, 0, 0}));
}

TEST_CASE("ordering property over random segment-length triples") {
    Rng rng(17);
    const std::array<int, 3> offsets{0, 0, 256};
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t past = rng.next_below(60);
        std::size_t future = rng.next_below(60);
        std::size_t target = rng.next_below(60);
        SegmentBoundaries b = bounds_for(past, future, target);
        auto pos = effective_positions(b, offsets);
        REQUIRE(pos.size() == b.total);
        for (std::size_t i = b.past_begin; i < b.past_end; ++i)
            for (std::size_t t = b.target_begin; t < b.target_end; ++t) CHECK(pos[i] < pos[t]);
        for (std::size_t t = b.target_begin; t < b.target_end; ++t)
            for (std::size_t f = b.future_begin; f < b.future_end; ++f) CHECK(pos[t] < pos[f]);
    }
}

TEST_CASE("encoder memories have the contract shapes") {
    Model model(micro_config(), 3);
    std::vector<int> ctx_a(20), ctx_b(30), ctx_c(25);
    Rng rng(5);
    for (auto* ctx : {&ctx_a, &ctx_b, &ctx_c})
        for (int& id : *ctx) id = static_cast<int>(rng.next_below(216));

    auto memories = model.encode_contexts({ctx_a, ctx_b, ctx_c});
    REQUIRE(memories.size() == 3);
    CHECK(memories[0].rows() == 20);
    CHECK(memories[1].rows() == 30);
    CHECK(memories[2].rows() == 25);
    for (const Mat& m : memories) CHECK(m.cols() == 16);

    auto dup = model.encode_contexts({ctx_a, ctx_a});
    CHECK((dup[0] - dup[1]).cwiseAbs().maxCoeff() == 0.0);

    CHECK(model.encode_contexts({ctx_b}).size() == 1);
    CHECK(model.encode_contexts({}).empty());
}

TEST_CASE("attention-selecting sublayer") {
    Model model(micro_config(), 9);
    Rng rng(31);
    const int n = 12, d = 16;
    Mat x_values(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) x_values(i, j) = rng.next_normal();

    std::vector<int> ctx1(7), ctx2(9);
    for (auto* ctx : {&ctx1, &ctx2})
        for (int& id : *ctx) id = static_cast<int>(rng.next_below(216));
    auto memories = model.encode_context_vars({ctx1, ctx2});

    SUBCASE("all-zero indices: sublayer is the identity") {
        ad::Var x = ad::Var::constant(x_values);
        ad::Var out = model.cross_attention_sublayer(0, x, memories, std::vector<int>(n, 0));
        CHECK((out.value() - x_values).cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("unselected memories cannot influence the output") {
        std::vector<int> indices(n, 1);
        ad::Var x = ad::Var::constant(x_values);
        Mat base = model.cross_attention_sublayer(0, x, memories, indices).value();

        std::vector<int> ctx2_changed = ctx2;
        ctx2_changed[0] = (ctx2_changed[0] + 1) % 216;
        auto perturbed = model.encode_context_vars({ctx1, ctx2_changed});
        Mat after = model.cross_attention_sublayer(0, x, perturbed, indices).value();
        CHECK((base - after).cwiseAbs().maxCoeff() == 0.0);
        // sanity: the selected memory does matter
        std::vector<int> ctx1_changed = ctx1;
        ctx1_changed[0] = (ctx1_changed[0] + 1) % 216;
        auto selected = model.encode_context_vars({ctx1_changed, ctx2});
        Mat moved = model.cross_attention_sublayer(0, x, selected, indices).value();
        CHECK((base - moved).cwiseAbs().maxCoeff() > 0.0);
    }

    SUBCASE("batched selector equals the per-token reference") {
        std::vector<int> indices(n);
        for (int i = 0; i < n; ++i) indices[static_cast<std::size_t>(i)] = static_cast<int>(rng.next_below(3));
        indices[0] = 1;
        indices[1] = 2; // force both attend branches
        ad::Var x = ad::Var::constant(x_values);
        Mat batched =
            model.cross_attention_sublayer(0, x, memories, indices, SelectorMode::Batched).value();
        Mat reference =
            model.cross_attention_sublayer(0, x, memories, indices, SelectorMode::PerToken).value();
        CHECK((batched - reference).cwiseAbs().maxCoeff() < 1e-6);
    }

    SUBCASE("index beyond the memory count raises IndexError") {
        ad::Var x = ad::Var::constant(x_values);
        CHECK_THROWS_AS((void)model.cross_attention_sublayer(0, x, memories, std::vector<int>(n, 3)),
                        IndexError);
    }

    SUBCASE("no memories at all: bypass everywhere, nonzero index rejected") {
        ad::Var x = ad::Var::constant(x_values);
        ad::Var out = model.cross_attention_sublayer(0, x, {}, std::vector<int>(n, 0));
        CHECK((out.value() - x_values).cwiseAbs().maxCoeff() == 0.0);
        CHECK_THROWS_AS((void)model.cross_attention_sublayer(0, x, {}, std::vector<int>(n, 1)),
                        IndexError);
    }
}

TEST_CASE("forward: softmax rows normalize and runs are deterministic") {
    auto examples = micro_examples();
    REQUIRE(!examples.empty());
    ModelConfig config = micro_config();
    Model model(config, 7);
    Batch batch = Batch::from_examples({examples[0]}, config);

    Mat logits = model.forward_example(batch.examples[0]);
    CHECK(logits.cols() == 216);
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        Eigen::VectorXd p = softmax(logits.row(r).transpose());
        CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-6));
    }

    Mat again = model.forward_example(batch.examples[0]);
    CHECK((logits - again).cwiseAbs().maxCoeff() == 0.0);

    Model clone(config, 7);
    Mat cloned = clone.forward_example(batch.examples[0]);
    CHECK((logits - cloned).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("causality: model-view-future tokens cannot move earlier logits") {
    auto examples = micro_examples();
    ModelConfig config = micro_config();
    Model model(config, 13);
    Batch batch = Batch::from_examples({examples[0]}, config);
    const BatchExample& base = batch.examples[0];
    Mat logits = model.forward_example(base);

    for (std::size_t j : {base.bounds.target_begin, base.bounds.target_begin + 2,
                          base.bounds.total - 2}) {
        BatchExample perturbed = base;
        perturbed.ids[j] = (perturbed.ids[j] + 1) % 216;
        Mat moved = model.forward_example(perturbed);
        CHECK((logits.topRows(static_cast<Eigen::Index>(j)) -
               moved.topRows(static_cast<Eigen::Index>(j)))
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
        // and it does move the row that can see it
        CHECK((logits.row(static_cast<Eigen::Index>(j)) - moved.row(static_cast<Eigen::Index>(j)))
                  .cwiseAbs()
                  .maxCoeff() > 0.0);
    }
}

TEST_CASE("all-zero structure indices make logits independent of contexts") {
    auto examples = micro_examples();
    ModelConfig config = micro_config();
    Model model(config, 19);
    InfillingExample stripped = examples[0];
    std::fill(stripped.past_indices.begin(), stripped.past_indices.end(), 0);
    std::fill(stripped.future_indices.begin(), stripped.future_indices.end(), 0);
    std::fill(stripped.target_indices.begin(), stripped.target_indices.end(), 0);

    Batch batch = Batch::from_examples({stripped}, config);
    Mat logits = model.forward_example(batch.examples[0]);

    BatchExample altered = batch.examples[0];
    for (auto& ctx : altered.context_ids)
        for (int& id : ctx) id = (id + 3) % 216;
    Mat moved = model.forward_example(altered);
    CHECK((logits - moved).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sequences past the position table raise CapacityError") {
    ModelConfig config = micro_config();
    config.max_position = 32;
    config.order_offsets = {0, 0, 16};
    Model model(config, 1);

    BatchExample ex;
    for (int i = 0; i < 40; ++i) {
        ex.ids.push_back(0);
        ex.positions.push_back(i); // exceeds the 32-entry table
        ex.indices.push_back(0);
    }
    ex.loss_mask.assign(40, 0);
    CHECK_THROWS_AS((void)model.forward_example(ex), CapacityError);
}

TEST_CASE("checkpoints round-trip bit-exactly and reject mismatched configs") {
    namespace fs = std::filesystem;
    std::string path = (fs::temp_directory_path() / "remifill_model.ckpt").string();

    ModelConfig config = micro_config();
    Model model(config, 23);
    model.save_checkpoint(path);

    Model loaded = Model::load_checkpoint(path);
    REQUIRE(loaded.parameters().items.size() == model.parameters().items.size());
    for (std::size_t i = 0; i < model.parameters().items.size(); ++i) {
        const auto& [name, var] = model.parameters().items[i];
        const auto& [loaded_name, loaded_var] = loaded.parameters().items[i];
        CHECK(name == loaded_name);
        CHECK((var.value() - loaded_var.value()).cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK(loaded.config() == config);

    CHECK_NOTHROW((void)Model::load_checkpoint(path, config));
    ModelConfig other = config;
    other.ffn_dim *= 2;
    CHECK_THROWS_AS((void)Model::load_checkpoint(path, other), ConfigError);
    CHECK_THROWS_AS((void)Model::load_checkpoint("/nonexistent/m.ckpt"), IoError);
}

TEST_CASE("model config json survives a round trip and validates") {
    ModelConfig config = micro_config();
    ModelConfig back = config_from_json(config_to_json(config));
    CHECK(back == config);

    ModelConfig bad = config;
    bad.heads = 3; // 16 % 3 != 0
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = config;
    bad.dropout = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK_THROWS_AS((void)config_from_json("{"), ParseError);
}
