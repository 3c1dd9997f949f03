#include "remifill/model.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include <nlohmann/json.hpp>

#include "remifill/errors.hpp"

namespace remifill {

using ad::Var;
using Mat = Eigen::MatrixXd;
using json = nlohmann::json;

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
} // namespace

void ModelConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v <= 0) throw ConfigError(std::string(name) + " must be positive");
    };
    positive(d_model, "d_model");
    positive(encoder_layers, "encoder_layers");
    positive(decoder_layers, "decoder_layers");
    positive(heads, "heads");
    positive(cross_heads, "cross_heads");
    positive(ffn_dim, "ffn_dim");
    positive(max_position, "max_position");
    positive(vocab_size, "vocab_size");
    if (d_model % heads != 0) throw ConfigError("d_model must be divisible by heads");
    if (d_model % cross_heads != 0) throw ConfigError("d_model must be divisible by cross_heads");
    for (int off : order_offsets)
        if (off < 0) throw ConfigError("order offsets must be non-negative");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
}

ModelConfig ModelConfig::tiny() {
    ModelConfig config;
    config.d_model = 64;
    config.encoder_layers = 2;
    config.decoder_layers = 2;
    config.heads = 4;
    config.cross_heads = 4;
    config.ffn_dim = 128;
    config.max_position = 512;
    config.order_offsets = {0, 0, 256};
    config.dropout = 0.0;
    return config;
}

std::string config_to_json(const ModelConfig& c) {
    json j{{"d_model", c.d_model},
           {"encoder_layers", c.encoder_layers},
           {"decoder_layers", c.decoder_layers},
           {"heads", c.heads},
           {"cross_heads", c.cross_heads},
           {"ffn_dim", c.ffn_dim},
           {"max_position", c.max_position},
           {"order_offsets", c.order_offsets},
           {"vocab_size", c.vocab_size},
           {"dropout", c.dropout}};
    return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("bad model config JSON: ") + e.what());
    }
    ModelConfig c;
    c.d_model = j.value("d_model", c.d_model);
    c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
    c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
    c.heads = j.value("heads", c.heads);
    c.cross_heads = j.value("cross_heads", c.cross_heads);
    c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
    c.max_position = j.value("max_position", c.max_position);
    if (j.contains("order_offsets")) {
        auto arr = j.at("order_offsets");
        if (!arr.is_array() || arr.size() != 3)
            throw ParseError("order_offsets must be a 3-element array");
        for (int i = 0; i < 3; ++i) c.order_offsets[i] = arr[i].get<int>();
    }
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.dropout = j.value("dropout", c.dropout);
    c.validate();
    return c;
}

std::vector<int> effective_positions(const SegmentBoundaries& b,
                                     const std::array<int, 3>& off) {
    std::vector<int> positions(b.total, 0);
    positions[0] = off[0]; // BOS opens the past block
    for (std::size_t k = b.past_begin; k < b.past_end; ++k)
        positions[k] = static_cast<int>(k) + off[0];
    positions[b.sep1()] = static_cast<int>(b.sep1()) + off[2];
    for (std::size_t k = b.future_begin; k < b.future_end; ++k)
        positions[k] = static_cast<int>(k) + off[2];
    positions[b.sep2()] = static_cast<int>(b.sep2()) + off[1];
    for (std::size_t k = b.target_begin; k < b.target_end; ++k)
        positions[k] = static_cast<int>(k) + off[1];
    positions[b.eos()] = static_cast<int>(b.eos()) + off[1];

    // Ordering over the content segments: past < target < future.
    const bool has_past = b.past_end > b.past_begin;
    const bool has_future = b.future_end > b.future_begin;
    const bool has_target = b.target_end > b.target_begin;
    if (has_past && has_target) {
        int max_past = static_cast<int>(b.past_end - 1) + off[0];
        int min_target = static_cast<int>(b.target_begin) + off[1];
        if (!(max_past < min_target))
            throw ConfigError("order offsets do not place the past before the target");
    }
    if (has_target && has_future) {
        int max_target = static_cast<int>(b.target_end - 1) + off[1];
        int min_future = static_cast<int>(b.future_begin) + off[2];
        if (!(max_target < min_future))
            throw ConfigError("order offsets do not place the target before the future");
    }
    return positions;
}

Batch Batch::from_examples(const std::vector<InfillingExample>& examples,
                           const ModelConfig& config, bool full_sequence_loss) {
    Vocabulary vocab;
    Batch batch;
    std::size_t max_len = 1;
    for (const InfillingExample& ex : examples) {
        WrappedSequence wrapped = reorder_and_wrap(ex);
        BatchExample item;
        item.ids = ids_of(vocab, wrapped.tokens);
        item.positions = effective_positions(wrapped.bounds, config.order_offsets);
        item.indices = wrapped.indices;
        item.bounds = wrapped.bounds;
        item.loss_mask.assign(wrapped.bounds.total, 0);
        if (full_sequence_loss) {
            for (std::size_t k = 0; k + 1 < wrapped.bounds.total; ++k) item.loss_mask[k] = 1;
        } else {
            for (std::size_t k = wrapped.bounds.sep2(); k < wrapped.bounds.target_end; ++k)
                item.loss_mask[k] = 1;
        }
        for (const TokenSeq& ctx : ex.contexts) item.context_ids.push_back(ids_of(vocab, ctx));
        max_len = std::max(max_len, wrapped.bounds.total);
        batch.examples.push_back(std::move(item));
    }

    const auto n = static_cast<Eigen::Index>(batch.examples.size());
    const auto w = static_cast<Eigen::Index>(max_len);
    batch.ids = Eigen::MatrixXi::Zero(n, w);
    batch.positions = Eigen::MatrixXi::Zero(n, w);
    batch.indices = Eigen::MatrixXi::Zero(n, w);
    batch.loss_mask.setZero(n, w);
    for (Eigen::Index r = 0; r < n; ++r) {
        const BatchExample& item = batch.examples[static_cast<std::size_t>(r)];
        batch.lengths.push_back(item.ids.size());
        for (std::size_t k = 0; k < item.ids.size(); ++k) {
            auto c = static_cast<Eigen::Index>(k);
            batch.ids(r, c) = item.ids[k];
            batch.positions(r, c) = item.positions[k];
            batch.indices(r, c) = item.indices[k];
            batch.loss_mask(r, c) = item.loss_mask[k];
        }
    }
    return batch;
}

ad::Var& Parameters::at(const std::string& name) {
    for (auto& [key, var] : items)
        if (key == name) return var;
    throw ConfigError("unknown parameter " + name);
}

const ad::Var& Parameters::at(const std::string& name) const {
    for (const auto& [key, var] : items)
        if (key == name) return var;
    throw ConfigError("unknown parameter " + name);
}

void Parameters::zero_grads() {
    for (auto& [key, var] : items) var.zero_grad();
}

std::size_t Parameters::count_scalars() const {
    std::size_t n = 0;
    for (const auto& [key, var] : items)
        n += static_cast<std::size_t>(var.value().size());
    return n;
}

Model::Model(ModelConfig config, std::uint64_t init_seed) : config_(config) {
    config_.validate();
    Rng rng(mix_seed(init_seed, 0x6d6f64656cULL)); // "model"
    const int d = config_.d_model;

    auto normal_mat = [&](int rows, int cols) {
        Mat m(rows, cols);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) m(i, j) = 0.02 * rng.next_normal();
        return m;
    };
    auto add = [&](const std::string& name, Mat m) {
        params_.items.emplace_back(name, Var::parameter(std::move(m)));
    };
    auto add_norm = [&](const std::string& prefix) {
        add(prefix + ".gamma", Mat::Ones(1, d));
        add(prefix + ".beta", Mat::Zero(1, d));
    };
    auto add_attention = [&](const std::string& prefix) {
        for (const char* w : {"wq", "wk", "wv", "wo"}) add(prefix + "." + w, normal_mat(d, d));
        for (const char* b : {"bq", "bk", "bv", "bo"}) add(prefix + "." + b, Mat::Zero(1, d));
    };
    auto add_ffn = [&](const std::string& prefix) {
        add(prefix + ".w1", normal_mat(d, config_.ffn_dim));
        add(prefix + ".b1", Mat::Zero(1, config_.ffn_dim));
        add(prefix + ".w2", normal_mat(config_.ffn_dim, d));
        add(prefix + ".b2", Mat::Zero(1, d));
    };

    add("token_embedding", normal_mat(config_.vocab_size, d));
    add("position_embedding", normal_mat(config_.max_position, d));
    for (int i = 0; i < config_.encoder_layers; ++i) {
        std::string p = "enc." + std::to_string(i);
        add_norm(p + ".ln1");
        add_attention(p + ".attn");
        add_norm(p + ".ln2");
        add_ffn(p + ".ffn");
    }
    add_norm("enc.final");
    for (int i = 0; i < config_.decoder_layers; ++i) {
        std::string p = "dec." + std::to_string(i);
        add_norm(p + ".ln1");
        add_attention(p + ".self");
        add_norm(p + ".ln2");
        add_attention(p + ".cross");
        add_norm(p + ".ln3");
        add_ffn(p + ".ffn");
    }
    add_norm("dec.final");
    add("out.w", normal_mat(d, config_.vocab_size));
    add("out.b", Mat::Zero(1, config_.vocab_size));
}

Var Model::embed(const std::vector<int>& ids, const std::vector<int>& positions) const {
    if (ids.size() != positions.size())
        throw ConfigError("ids/positions length mismatch");
    for (int p : positions)
        if (p < 0 || p >= config_.max_position)
            throw CapacityError("effective position " + std::to_string(p) +
                                " outside the position table of " +
                                std::to_string(config_.max_position));
    for (int id : ids)
        if (id < 0 || id >= config_.vocab_size)
            throw RangeError("token id " + std::to_string(id) + " outside the vocabulary");
    return ad::add(ad::embedding_rows(params_.at("token_embedding"), ids),
                   ad::embedding_rows(params_.at("position_embedding"), positions));
}

Var Model::attention(const Var& q_in, const Var& kv_in, const Mat* mask,
                     const std::string& prefix, int heads) const {
    Var q = ad::add_rowvec(ad::matmul(q_in, params_.at(prefix + ".wq")), params_.at(prefix + ".bq"));
    Var k = ad::add_rowvec(ad::matmul(kv_in, params_.at(prefix + ".wk")), params_.at(prefix + ".bk"));
    Var v = ad::add_rowvec(ad::matmul(kv_in, params_.at(prefix + ".wv")), params_.at(prefix + ".bv"));
    const int dh = config_.d_model / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<Var> outputs;
    outputs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        Var qh = ad::slice_cols(q, h * dh, dh);
        Var kh = ad::slice_cols(k, h * dh, dh);
        Var vh = ad::slice_cols(v, h * dh, dh);
        Var scores = ad::scale(ad::matmul_nt(qh, kh), inv_sqrt);
        if (mask) scores = ad::add_const(scores, *mask);
        outputs.push_back(ad::matmul(ad::softmax_rows(scores), vh));
    }
    Var cat = outputs.size() == 1 ? outputs[0] : ad::concat_cols(outputs);
    return ad::add_rowvec(ad::matmul(cat, params_.at(prefix + ".wo")), params_.at(prefix + ".bo"));
}

Var Model::ffn(const Var& x, const std::string& prefix) const {
    Var h = ad::gelu(
        ad::add_rowvec(ad::matmul(x, params_.at(prefix + ".w1")), params_.at(prefix + ".b1")));
    return ad::add_rowvec(ad::matmul(h, params_.at(prefix + ".w2")), params_.at(prefix + ".b2"));
}

Var Model::maybe_dropout(const Var& x, bool training, Rng* rng) const {
    if (!training || config_.dropout <= 0.0 || rng == nullptr) return x;
    return ad::dropout(x, config_.dropout, *rng);
}

std::vector<Var> Model::encode_context_vars(const std::vector<std::vector<int>>& contexts) const {
    std::vector<Var> memories;
    memories.reserve(contexts.size());
    for (const std::vector<int>& ids : contexts) {
        if (ids.empty()) throw ConfigError("empty structural context");
        std::vector<int> positions(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<int>(i);
        Var x = embed(ids, positions);
        for (int i = 0; i < config_.encoder_layers; ++i) {
            std::string p = "enc." + std::to_string(i);
            Var n1 = ad::layer_norm_rows(x, params_.at(p + ".ln1.gamma"), params_.at(p + ".ln1.beta"));
            x = ad::add(x, attention(n1, n1, nullptr, p + ".attn", config_.heads));
            Var n2 = ad::layer_norm_rows(x, params_.at(p + ".ln2.gamma"), params_.at(p + ".ln2.beta"));
            x = ad::add(x, ffn(n2, p + ".ffn"));
        }
        memories.push_back(
            ad::layer_norm_rows(x, params_.at("enc.final.gamma"), params_.at("enc.final.beta")));
    }
    return memories;
}

Var Model::cross_attention_sublayer(int layer, const Var& x, const std::vector<Var>& memories,
                                    const std::vector<int>& indices, SelectorMode mode) const {
    if (indices.size() != static_cast<std::size_t>(x.rows()))
        throw ConfigError("structure index count does not match sequence length");
    for (int y : indices)
        if (y < 0 || y > static_cast<int>(memories.size()))
            throw IndexError("structure index " + std::to_string(y) + " exceeds " +
                             std::to_string(memories.size()) + " structural contexts");

    bool any_selected = false;
    for (int y : indices) any_selected = any_selected || y > 0;
    if (memories.empty() || !any_selected) return x; // selector bypass everywhere

    const std::string prefix = "dec." + std::to_string(layer) + ".cross";
    Var q_in = ad::layer_norm_rows(x, params_.at("dec." + std::to_string(layer) + ".ln2.gamma"),
                                   params_.at("dec." + std::to_string(layer) + ".ln2.beta"));

    if (mode == SelectorMode::Batched) {
        // Attend to every selected memory in one shot, then keep only the
        // rows whose index picked it.
        Var acc = x;
        for (std::size_t m = 1; m <= memories.size(); ++m) {
            std::vector<char> keep(indices.size(), 0);
            bool used = false;
            for (std::size_t k = 0; k < indices.size(); ++k) {
                if (indices[k] == static_cast<int>(m)) {
                    keep[k] = 1;
                    used = true;
                }
            }
            if (!used) continue;
            Var att = attention(q_in, memories[m - 1], nullptr, prefix, config_.cross_heads);
            acc = ad::add(acc, ad::mask_rows(att, std::move(keep)));
        }
        return acc;
    }

    // Per-token reference path: one query row at a time against its own
    // memory. Kept for equivalence checks against the batched form.
    const int dh = config_.d_model / config_.cross_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    Var q_all = ad::add_rowvec(ad::matmul(q_in, params_.at(prefix + ".wq")),
                               params_.at(prefix + ".bq"));
    std::vector<Var> keys, values;
    for (const Var& memory : memories) {
        keys.push_back(ad::add_rowvec(ad::matmul(memory, params_.at(prefix + ".wk")),
                                      params_.at(prefix + ".bk")));
        values.push_back(ad::add_rowvec(ad::matmul(memory, params_.at(prefix + ".wv")),
                                        params_.at(prefix + ".bv")));
    }
    Var zero_row = Var::constant(Mat::Zero(1, config_.d_model));
    std::vector<Var> rows;
    rows.reserve(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
        if (indices[k] == 0) {
            rows.push_back(zero_row);
            continue;
        }
        const int m = indices[k] - 1;
        Var q_row = ad::slice_rows(q_all, static_cast<int>(k), 1);
        std::vector<Var> head_outs;
        for (int h = 0; h < config_.cross_heads; ++h) {
            Var qh = ad::slice_cols(q_row, h * dh, dh);
            Var kh = ad::slice_cols(keys[m], h * dh, dh);
            Var vh = ad::slice_cols(values[m], h * dh, dh);
            Var att = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt));
            head_outs.push_back(ad::matmul(att, vh));
        }
        Var cat = head_outs.size() == 1 ? head_outs[0] : ad::concat_cols(head_outs);
        rows.push_back(ad::add_rowvec(ad::matmul(cat, params_.at(prefix + ".wo")),
                                      params_.at(prefix + ".bo")));
    }
    return ad::add(x, ad::concat_rows(rows));
}

Var Model::forward_example_var(const BatchExample& example, SelectorMode mode, bool training,
                               Rng* dropout_rng) const {
    const std::size_t n = example.ids.size();
    if (n < 2) throw ConfigError("sequence too short to model");
    if (example.positions.size() != n || example.indices.size() != n)
        throw ConfigError("example field lengths disagree");

    std::vector<Var> memories = encode_context_vars(example.context_ids);

    Var x = embed(example.ids, example.positions);
    x = maybe_dropout(x, training, dropout_rng);

    Mat causal = Mat::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < causal.rows(); ++i)
        for (Eigen::Index j = i + 1; j < causal.cols(); ++j) causal(i, j) = kNegInf;

    for (int i = 0; i < config_.decoder_layers; ++i) {
        std::string p = "dec." + std::to_string(i);
        Var n1 = ad::layer_norm_rows(x, params_.at(p + ".ln1.gamma"), params_.at(p + ".ln1.beta"));
        Var self_out = attention(n1, n1, &causal, p + ".self", config_.heads);
        x = ad::add(x, maybe_dropout(self_out, training, dropout_rng));
        x = cross_attention_sublayer(i, x, memories, example.indices, mode);
        Var n3 = ad::layer_norm_rows(x, params_.at(p + ".ln3.gamma"), params_.at(p + ".ln3.beta"));
        x = ad::add(x, maybe_dropout(ffn(n3, p + ".ffn"), training, dropout_rng));
    }
    x = ad::layer_norm_rows(x, params_.at("dec.final.gamma"), params_.at("dec.final.beta"));
    return ad::add_rowvec(ad::matmul(x, params_.at("out.w")), params_.at("out.b"));
}

std::vector<Eigen::MatrixXd> Model::encode_contexts(
    const std::vector<std::vector<int>>& contexts) const {
    std::vector<Mat> out;
    for (Var& memory : encode_context_vars(contexts)) out.push_back(memory.value());
    return out;
}

Eigen::MatrixXd Model::forward_example(const BatchExample& example, SelectorMode mode) const {
    return forward_example_var(example, mode).value();
}

std::vector<Eigen::MatrixXd> Model::forward(const Batch& batch, SelectorMode mode) const {
    std::vector<Mat> logits;
    logits.reserve(batch.examples.size());
    for (const BatchExample& example : batch.examples)
        logits.push_back(forward_example(example, mode));
    return logits;
}

namespace {

constexpr char kCheckpointMagic[8] = {'R', 'E', 'M', 'I', 'F', 'I', 'L', 'L'};
constexpr std::uint32_t kCheckpointVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw IoError("truncated checkpoint " + path);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace

void Model::save_checkpoint(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path);
    out.write(kCheckpointMagic, 8);
    write_u32(out, kCheckpointVersion);

    std::string config_json = config_to_json(config_);
    write_u32(out, static_cast<std::uint32_t>(config_json.size()));
    out.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));

    write_u32(out, static_cast<std::uint32_t>(params_.items.size()));
    for (const auto& [name, var] : params_.items) {
        write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        const Mat& m = var.value();
        write_u32(out, static_cast<std::uint32_t>(m.rows()));
        write_u32(out, static_cast<std::uint32_t>(m.cols()));
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                double v = m(r, c);
                out.write(reinterpret_cast<const char*>(&v), sizeof(double));
            }
    }
    if (!out) throw IoError("failed writing checkpoint " + path);
}

Model Model::load_checkpoint(const std::string& path, const std::optional<ModelConfig>& expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string(magic, 8) != std::string(kCheckpointMagic, 8))
        throw IoError("not a checkpoint file: " + path);
    if (read_u32(in, path) != kCheckpointVersion)
        throw IoError("unsupported checkpoint version in " + path);

    std::uint32_t config_len = read_u32(in, path);
    std::string config_json(config_len, '\0');
    in.read(config_json.data(), config_len);
    if (!in) throw IoError("truncated checkpoint " + path);
    ModelConfig config = config_from_json(config_json);
    if (expected && !(*expected == config))
        throw ConfigError("checkpoint config does not match the requested config");

    Model model(config, 0);
    std::uint32_t count = read_u32(in, path);
    if (count != model.params_.items.size())
        throw IoError("checkpoint holds " + std::to_string(count) + " arrays, expected " +
                      std::to_string(model.params_.items.size()));
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t name_len = read_u32(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        std::uint32_t rows = read_u32(in, path);
        std::uint32_t cols = read_u32(in, path);
        Var& var = model.params_.at(name);
        if (var.rows() != static_cast<Eigen::Index>(rows) ||
            var.cols() != static_cast<Eigen::Index>(cols))
            throw IoError("checkpoint array " + name + " has unexpected shape");
        Mat& m = var.raw_value();
        for (std::uint32_t r = 0; r < rows; ++r)
            for (std::uint32_t c = 0; c < cols; ++c) {
                double v;
                in.read(reinterpret_cast<char*>(&v), sizeof(double));
                m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
            }
        if (!in) throw IoError("truncated checkpoint " + path);
    }
    return model;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    double mx = logits.maxCoeff();
    Eigen::ArrayXd e = (logits.array() - mx).exp();
    return (e / e.sum()).matrix();
}

} // namespace remifill
