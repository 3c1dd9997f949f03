#include "remifill/train.hpp"

#include <cmath>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "remifill/errors.hpp"

namespace remifill {

using ad::Var;
using Mat = Eigen::MatrixXd;
using json = nlohmann::json;

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (max_steps < 0) throw ConfigError("max_steps must be non-negative");
    if (clip_norm <= 0.0) throw ConfigError("clip_norm must be positive");
}

std::string train_config_to_json(const TrainConfig& c) {
    json j{{"learning_rate", c.learning_rate},
           {"batch_size", c.batch_size},
           {"max_steps", c.max_steps},
           {"seed", c.seed},
           {"full_sequence_loss", c.full_sequence_loss},
           {"clip_norm", c.clip_norm},
           {"stop_at_loss", c.stop_at_loss},
           {"checkpoint_every", c.checkpoint_every}};
    return j.dump();
}

TrainConfig train_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("bad train config JSON: ") + e.what());
    }
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.seed = j.value("seed", c.seed);
    c.full_sequence_loss = j.value("full_sequence_loss", c.full_sequence_loss);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.stop_at_loss = j.value("stop_at_loss", c.stop_at_loss);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.validate();
    return c;
}

namespace {

std::vector<int> next_token_targets(const BatchExample& example) {
    std::vector<int> targets(example.ids.size(), 0);
    for (std::size_t k = 0; k + 1 < example.ids.size(); ++k) targets[k] = example.ids[k + 1];
    return targets;
}

std::vector<char> scored_rows(const BatchExample& example) {
    // The last row predicts nothing; everything else follows the loss mask.
    std::vector<char> mask(example.ids.size(), 0);
    for (std::size_t k = 0; k + 1 < example.ids.size(); ++k) mask[k] = example.loss_mask[k];
    return mask;
}

} // namespace

double loss_value(const std::vector<Mat>& logits, const Batch& batch) {
    if (logits.size() != batch.examples.size())
        throw ConfigError("logits/batch size mismatch");
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t e = 0; e < batch.examples.size(); ++e) {
        const BatchExample& ex = batch.examples[e];
        const Mat& x = logits[e];
        std::vector<char> mask = scored_rows(ex);
        for (std::size_t k = 0; k < mask.size(); ++k) {
            if (!mask[k]) continue;
            const auto row = static_cast<Eigen::Index>(k);
            double mx = x.row(row).maxCoeff();
            double z = (x.row(row).array() - mx).exp().sum();
            total += std::log(z) + mx - x(row, ex.ids[k + 1]);
            ++count;
        }
    }
    if (count == 0) throw MaskError("loss mask scores no positions");
    return total / static_cast<double>(count);
}

Var loss_var(const Model& model, const Batch& batch, bool training, Rng* dropout_rng) {
    Var total;
    std::size_t count = 0;
    for (const BatchExample& example : batch.examples) {
        Var logits = model.forward_example_var(example, SelectorMode::Batched, training,
                                               dropout_rng);
        std::size_t n = 0;
        Var part = ad::cross_entropy_sum(logits, next_token_targets(example),
                                         scored_rows(example), &n);
        count += n;
        total = total.defined() ? ad::add(total, part) : part;
    }
    if (count == 0) throw MaskError("loss mask scores no positions");
    return ad::scale(total, 1.0 / static_cast<double>(count));
}

namespace {

// Adam with fixed hyperparameters apart from the learning rate.
class Adam {
public:
    Adam(Parameters& params, double lr, double clip_norm)
        : params_(params), lr_(lr), clip_norm_(clip_norm) {
        for (auto& [name, var] : params.items) {
            m_.push_back(Mat::Zero(var.rows(), var.cols()));
            v_.push_back(Mat::Zero(var.rows(), var.cols()));
        }
    }

    void step() {
        ++t_;
        double norm_sq = 0.0;
        for (auto& [name, var] : params_.items) norm_sq += var.grad().squaredNorm();
        double scale = 1.0;
        double norm = std::sqrt(norm_sq);
        if (norm > clip_norm_) scale = clip_norm_ / norm;

        const double bc1 = 1.0 - std::pow(kBeta1, t_);
        const double bc2 = 1.0 - std::pow(kBeta2, t_);
        for (std::size_t i = 0; i < params_.items.size(); ++i) {
            Mat g = params_.items[i].second.grad() * scale;
            m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * g;
            v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * g.cwiseProduct(g);
            Mat m_hat = m_[i] / bc1;
            Mat v_hat = v_[i] / bc2;
            params_.items[i].second.raw_value() -=
                lr_ * (m_hat.array() / (v_hat.array().sqrt() + kEps)).matrix();
        }
    }

private:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

    Parameters& params_;
    double lr_;
    double clip_norm_;
    std::vector<Mat> m_, v_;
    int t_ = 0;
};

} // namespace

TrainResult train_loop(Model& model, const std::vector<InfillingExample>& dataset,
                       const TrainConfig& config) {
    config.validate();
    if (dataset.empty()) throw ConfigError("empty training dataset");

    std::ofstream loss_log;
    if (!config.loss_log_path.empty()) {
        loss_log.open(config.loss_log_path);
        if (!loss_log) throw IoError("cannot write loss log " + config.loss_log_path);
    }

    Adam optimizer(model.parameters(), config.learning_rate, config.clip_norm);
    Rng shuffle_rng(mix_seed(config.seed, 0x73687566ULL));

    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t cursor = order.size(); // forces a shuffle on first use

    TrainResult result;
    for (int step = 0; step < config.max_steps; ++step) {
        std::vector<InfillingExample> chosen;
        for (int b = 0; b < config.batch_size; ++b) {
            if (cursor >= order.size()) {
                for (std::size_t i = 0; i + 1 < order.size(); ++i) {
                    std::size_t j =
                        i + static_cast<std::size_t>(shuffle_rng.next_below(order.size() - i));
                    std::swap(order[i], order[j]);
                }
                cursor = 0;
            }
            chosen.push_back(dataset[order[cursor++]]);
        }
        Batch batch = Batch::from_examples(chosen, model.config(), config.full_sequence_loss);

        Rng dropout_rng(mix_seed(config.seed, 0xd0d0ULL + static_cast<std::uint64_t>(step)));
        Var loss = loss_var(model, batch, true, &dropout_rng);
        double value = loss.value()(0, 0);
        if (!std::isfinite(value))
            throw DivergenceError("non-finite loss at step " + std::to_string(step) + ", batch of " +
                                  std::to_string(chosen.size()) + " starting with example " +
                                  std::to_string(order[(cursor - chosen.size()) % order.size()]));
        result.loss_curve.push_back(value);
        if (loss_log) loss_log << step << ',' << value << '\n';

        ad::backward(loss);
        optimizer.step();
        model.parameters().zero_grads();

        if (config.checkpoint_every > 0 && !config.checkpoint_path.empty() &&
            (step + 1) % config.checkpoint_every == 0)
            model.save_checkpoint(config.checkpoint_path);

        if (config.stop_at_loss > 0.0 && value < config.stop_at_loss) break;
    }
    return result;
}

double gradient_check(Model& model, const Batch& batch, double epsilon,
                      GradientCheckReport* report) {
    model.parameters().zero_grads();
    Var loss = loss_var(model, batch);
    ad::backward(loss);

    std::vector<Mat> analytic;
    for (auto& [name, var] : model.parameters().items) analytic.push_back(var.grad());
    model.parameters().zero_grads();

    auto loss_at = [&]() { return loss_var(model, batch).value()(0, 0); };

    double worst = 0.0;
    GradientCheckReport local;
    for (std::size_t p = 0; p < model.parameters().items.size(); ++p) {
        auto& [name, var] = model.parameters().items[p];
        Mat& values = var.raw_value();
        GradientCheckReport::Group group;
        group.name = name;
        for (Eigen::Index r = 0; r < values.rows(); ++r) {
            for (Eigen::Index c = 0; c < values.cols(); ++c) {
                const double saved = values(r, c);
                values(r, c) = saved + epsilon;
                double up = loss_at();
                values(r, c) = saved - epsilon;
                double down = loss_at();
                values(r, c) = saved;

                double numeric = (up - down) / (2.0 * epsilon);
                double exact = analytic[p](r, c);
                // Central differences at 64-bit resolve the derivative to
                // about machine_eps * |loss| / epsilon (~1e-10 here);
                // gradients below the floor are compared absolutely.
                double denom = std::max({std::abs(numeric), std::abs(exact), 1e-5});
                double rel = std::abs(numeric - exact) / denom;
                group.max_rel_err = std::max(group.max_rel_err, rel);
                group.max_abs_grad = std::max(group.max_abs_grad, std::abs(exact));
            }
        }
        worst = std::max(worst, group.max_rel_err);
        local.groups.push_back(std::move(group));
    }
    local.max_rel_err = worst;
    if (report) *report = std::move(local);
    return worst;
}

} // namespace remifill
