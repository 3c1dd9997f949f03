#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "remifill/autodiff.hpp"
#include "remifill/ingest.hpp"
#include "remifill/token.hpp"

namespace remifill {

// Architecture hyperparameters. Defaults mirror the full-size setup
// (512-dim embeddings, six 8-head layers each side, 2048-dim FFN); tests use
// much smaller instances. Order offsets realize the order embedding as
// integer shifts applied to the position index before the learned
// positional-embedding lookup; with the defaults, sequences of up to
// max_position/2 tokens keep past < target < future in effective positions.
struct ModelConfig {
    int d_model = 512;
    int encoder_layers = 6;
    int decoder_layers = 6;
    int heads = 8;
    int cross_heads = 8;
    int ffn_dim = 2048;
    int max_position = 4096;
    std::array<int, 3> order_offsets{0, 0, 2048}; // O_past, O_target, O_future
    int vocab_size = Vocabulary::kSize;
    double dropout = 0.1;

    void validate() const; // throws ConfigError
    bool operator==(const ModelConfig&) const = default;

    static ModelConfig tiny(); // small preset used by verification tools
};

std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& json_text);

// Effective position of every token of a wrapped sequence: the model-view
// position shifted by the segment's order offset. Specials take the offset
// of the segment they introduce (BOS with past, each SEP with what follows,
// EOS with the target). Throws ConfigError when the offsets do not give
// every past position < every target position < every future position for
// these segment lengths.
std::vector<int> effective_positions(const SegmentBoundaries& bounds,
                                     const std::array<int, 3>& order_offsets);

// One model-ready example.
struct BatchExample {
    std::vector<int> ids;
    std::vector<int> positions; // effective positions
    std::vector<int> indices;   // structure index per token
    std::vector<char> loss_mask; // rows whose next-token prediction is scored
    std::vector<std::vector<int>> context_ids;
    SegmentBoundaries bounds;
};

// Padded id/position/index matrices (rows = examples, pad value 0) with the
// loss mask zero on padding; `examples` keeps the ragged per-example view
// the forward pass consumes. Contexts stay ragged per example.
struct Batch {
    std::vector<BatchExample> examples;
    Eigen::MatrixXi ids;
    Eigen::MatrixXi positions;
    Eigen::MatrixXi indices;
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> loss_mask;
    std::vector<std::size_t> lengths;

    static Batch from_examples(const std::vector<InfillingExample>& examples,
                               const ModelConfig& config, bool full_sequence_loss = false);
};

// Named weight tensors in a fixed creation order.
struct Parameters {
    std::vector<std::pair<std::string, ad::Var>> items;

    ad::Var& at(const std::string& name);
    const ad::Var& at(const std::string& name) const;
    void zero_grads();
    std::size_t count_scalars() const;
};

enum class SelectorMode {
    Batched,  // attend to every memory, select rows afterwards (default)
    PerToken, // reference path: one query at a time against its own memory
};

class Model {
public:
    Model(ModelConfig config, std::uint64_t init_seed);

    const ModelConfig& config() const { return config_; }
    Parameters& parameters() { return params_; }
    const Parameters& parameters() const { return params_; }

    // Graph-building entry points (gradients flow to parameters).
    std::vector<ad::Var> encode_context_vars(const std::vector<std::vector<int>>& contexts) const;
    ad::Var forward_example_var(const BatchExample& example, SelectorMode mode = SelectorMode::Batched,
                                bool training = false, Rng* dropout_rng = nullptr) const;

    // The attention-selecting cross-attention sublayer, exposed for direct
    // verification. Position k with index y_k = 0 passes through untouched;
    // y_k = n >= 1 adds cross-attention against memory n. y_k beyond the
    // memory count raises IndexError.
    ad::Var cross_attention_sublayer(int layer, const ad::Var& x,
                                     const std::vector<ad::Var>& memories,
                                     const std::vector<int>& indices,
                                     SelectorMode mode = SelectorMode::Batched) const;

    // Value-level conveniences.
    std::vector<Eigen::MatrixXd> encode_contexts(const std::vector<std::vector<int>>& contexts) const;
    Eigen::MatrixXd forward_example(const BatchExample& example,
                                    SelectorMode mode = SelectorMode::Batched) const;
    std::vector<Eigen::MatrixXd> forward(const Batch& batch,
                                         SelectorMode mode = SelectorMode::Batched) const;

    void save_checkpoint(const std::string& path) const;
    // Rebuilds a model from a checkpoint; when `expected` is given, a
    // checkpoint with a different config is rejected with ConfigError.
    static Model load_checkpoint(const std::string& path,
                                 const std::optional<ModelConfig>& expected = std::nullopt);

private:
    ModelConfig config_;
    Parameters params_;

    ad::Var embed(const std::vector<int>& ids, const std::vector<int>& positions) const;
    ad::Var attention(const ad::Var& q_in, const ad::Var& kv_in, const Eigen::MatrixXd* mask,
                      const std::string& prefix, int heads) const;
    ad::Var ffn(const ad::Var& x, const std::string& prefix) const;
    ad::Var maybe_dropout(const ad::Var& x, bool training, Rng* rng) const;
};

// Row-wise softmax of plain values (sampling, diagnostics).
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

} // namespace remifill
