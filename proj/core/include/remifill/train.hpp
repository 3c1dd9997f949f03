#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "remifill/model.hpp"

namespace remifill {

struct TrainConfig {
    double learning_rate = 1e-4;
    int batch_size = 8;
    int max_steps = 1000;
    std::uint64_t seed = 0;
    bool full_sequence_loss = false; // default scores the target region only
    double clip_norm = 1.0;
    double stop_at_loss = 0.0; // > 0 enables early stopping
    int checkpoint_every = 0;  // 0 disables periodic checkpoints
    std::string checkpoint_path;
    std::string loss_log_path; // one "step,loss" line per step

    void validate() const;
};

std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& json_text);

// Mean negative log-likelihood per scored position over the whole batch.
// Pure value-level form; the training loop uses the graph equivalent.
// Throws MaskError when no position is scored.
double loss_value(const std::vector<Eigen::MatrixXd>& logits, const Batch& batch);

// Graph form: returns the scalar loss Var; scored-position count via out-param.
ad::Var loss_var(const Model& model, const Batch& batch, bool training = false,
                 Rng* dropout_rng = nullptr);

struct TrainResult {
    std::vector<double> loss_curve; // one entry per executed step
};

// Teacher-forced Adam training. Deterministic for a fixed seed: shuffling,
// dropout and batch order all derive from TrainConfig::seed. A NaN loss
// aborts with DivergenceError naming the step and batch.
TrainResult train_loop(Model& model, const std::vector<InfillingExample>& dataset,
                       const TrainConfig& config);

struct GradientCheckReport {
    struct Group {
        std::string name;
        double max_rel_err = 0.0;
        double max_abs_grad = 0.0;
    };
    std::vector<Group> groups;
    double max_rel_err = 0.0;
};

// Central-finite-difference check of every parameter scalar against the
// analytic gradients; returns the max relative error. Meant for tiny
// configs at 64-bit precision.
double gradient_check(Model& model, const Batch& batch, double epsilon,
                      GradientCheckReport* report = nullptr);

} // namespace remifill
