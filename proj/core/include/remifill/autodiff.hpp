#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "remifill/rng.hpp"

namespace remifill::ad {

using Mat = Eigen::MatrixXd;

// A node in the reverse-mode tape. Nodes are created in topological order;
// backward() replays them in reverse creation order.
struct Node {
    Mat value;
    Mat grad; // empty until needed
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backprop;
    bool requires_grad = false;
    std::uint64_t order = 0;

    void ensure_grad() {
        if (grad.size() == 0) grad = Mat::Zero(value.rows(), value.cols());
    }
};

// Value-semantics handle on a graph node.
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Var constant(Mat value);
    static Var parameter(Mat value); // requires_grad, grad pre-allocated

    bool defined() const { return static_cast<bool>(node_); }
    const Mat& value() const { return node_->value; }
    Mat& raw_value() { return node_->value; } // in-place updates (optimizer)
    const Mat& grad() const { return node_->grad; }
    void zero_grad() { node_->grad.setZero(); }
    bool requires_grad() const { return node_->requires_grad; }
    Eigen::Index rows() const { return node_->value.rows(); }
    Eigen::Index cols() const { return node_->value.cols(); }

    std::shared_ptr<Node> node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Accumulates d(root)/d(leaf) into every reachable parameter's grad.
// root must be 1x1.
void backward(const Var& root);

Var add(const Var& a, const Var& b);            // same shape
Var add_rowvec(const Var& a, const Var& b);     // b is 1 x cols, broadcast over rows
Var scale(const Var& a, double s);
Var add_const(const Var& a, const Mat& m);      // m not differentiated (masks)
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);      // a * b^T
Var softmax_rows(const Var& a);                 // -inf entries get weight exactly 0
Var gelu(const Var& a);                         // erf form; smooth everywhere
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var embedding_rows(const Var& table, std::vector<int> ids);
Var slice_cols(const Var& a, int begin, int count);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(const Var& a, int begin, int count);
Var concat_rows(const std::vector<Var>& parts);
Var mask_rows(const Var& a, std::vector<char> keep); // zeroes rows where !keep
Var dropout(const Var& a, double rate, Rng& rng);

// Sum over masked rows of -log softmax(logits_row)[target]; returns a 1x1
// node. mask/targets run over logits rows. mask_count reports the number of
// scored rows.
Var cross_entropy_sum(const Var& logits, std::vector<int> targets, std::vector<char> mask,
                      std::size_t* mask_count = nullptr);

} // namespace remifill::ad
