#include "remifill/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "remifill/errors.hpp"

namespace remifill::ad {

namespace {

std::atomic<std::uint64_t> g_order{0};

std::shared_ptr<Node> make_node(Mat value, std::vector<std::shared_ptr<Node>> inputs,
                                std::function<void(Node&)> backprop) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->order = ++g_order;
    bool rg = false;
    for (const auto& in : inputs) rg = rg || in->requires_grad;
    node->requires_grad = rg;
    if (rg) {
        node->inputs = std::move(inputs);
        node->backprop = std::move(backprop);
    }
    return node;
}

// Adds into an input's grad only when it participates in differentiation.
template <typename Expr>
void accum(Node& self, std::size_t index, const Expr& delta) {
    Node& input = *self.inputs[index];
    if (!input.requires_grad) return;
    input.ensure_grad();
    input.grad += delta;
}

} // namespace

Var Var::constant(Mat value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->order = ++g_order;
    return Var(node);
}

Var Var::parameter(Mat value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->grad = Mat::Zero(node->value.rows(), node->value.cols());
    node->requires_grad = true;
    node->order = ++g_order;
    return Var(node);
}

void backward(const Var& root) {
    Node* start = root.node().get();
    if (start->value.rows() != 1 || start->value.cols() != 1)
        throw std::logic_error("backward() root must be scalar");

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{start};
    while (!stack.empty()) {
        Node* node = stack.back();
        stack.pop_back();
        if (!seen.insert(node).second) continue;
        order.push_back(node);
        for (const auto& input : node->inputs) stack.push_back(input.get());
    }
    std::sort(order.begin(), order.end(),
              [](const Node* a, const Node* b) { return a->order > b->order; });

    start->grad = Mat::Ones(1, 1);
    for (Node* node : order) {
        if (node->backprop && node->grad.size() != 0) node->backprop(*node);
    }
}

Var add(const Var& a, const Var& b) {
    return Var(make_node(a.value() + b.value(), {a.node(), b.node()}, [](Node& self) {
        accum(self, 0, self.grad);
        accum(self, 1, self.grad);
    }));
}

Var add_rowvec(const Var& a, const Var& b) {
    Mat out = a.value();
    out.rowwise() += b.value().row(0);
    return Var(make_node(std::move(out), {a.node(), b.node()}, [](Node& self) {
        accum(self, 0, self.grad);
        accum(self, 1, self.grad.colwise().sum());
    }));
}

Var scale(const Var& a, double s) {
    return Var(make_node(a.value() * s, {a.node()},
                         [s](Node& self) { accum(self, 0, self.grad * s); }));
}

Var add_const(const Var& a, const Mat& m) {
    return Var(make_node(a.value() + m, {a.node()},
                         [](Node& self) { accum(self, 0, self.grad); }));
}

Var matmul(const Var& a, const Var& b) {
    return Var(make_node(a.value() * b.value(), {a.node(), b.node()}, [](Node& self) {
        accum(self, 0, self.grad * self.inputs[1]->value.transpose());
        accum(self, 1, self.inputs[0]->value.transpose() * self.grad);
    }));
}

Var matmul_nt(const Var& a, const Var& b) {
    return Var(make_node(a.value() * b.value().transpose(), {a.node(), b.node()}, [](Node& self) {
        accum(self, 0, self.grad * self.inputs[1]->value);
        accum(self, 1, self.grad.transpose() * self.inputs[0]->value);
    }));
}

Var softmax_rows(const Var& a) {
    const Mat& x = a.value();
    Mat y(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double mx = x.row(i).maxCoeff();
        Eigen::Array<double, 1, Eigen::Dynamic> e = (x.row(i).array() - mx).exp();
        y.row(i) = (e / e.sum()).matrix();
    }
    return Var(make_node(std::move(y), {a.node()}, [](Node& self) {
        const Mat& s = self.value;
        Mat dx(s.rows(), s.cols());
        for (Eigen::Index i = 0; i < s.rows(); ++i) {
            double dot = self.grad.row(i).dot(s.row(i));
            dx.row(i) = (s.row(i).array() * (self.grad.row(i).array() - dot)).matrix();
        }
        accum(self, 0, dx);
    }));
}

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
} // namespace

Var gelu(const Var& a) {
    Mat y = a.value().unaryExpr(
        [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
    return Var(make_node(std::move(y), {a.node()}, [](Node& self) {
        const Mat& x = self.inputs[0]->value;
        Mat d = x.unaryExpr([](double v) {
            double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            return cdf + v * pdf;
        });
        accum(self, 0, (self.grad.array() * d.array()).matrix());
    }));
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const Mat& in = x.value();
    const Eigen::Index n = in.rows(), d = in.cols();
    auto xhat = std::make_shared<Mat>(n, d);
    auto inv_sigma = std::make_shared<Eigen::VectorXd>(n);
    Mat out(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        double mu = in.row(i).mean();
        double var = (in.row(i).array() - mu).square().mean();
        double inv = 1.0 / std::sqrt(var + eps);
        (*inv_sigma)(i) = inv;
        xhat->row(i) = ((in.row(i).array() - mu) * inv).matrix();
        out.row(i) = (xhat->row(i).array() * gamma.value().row(0).array()).matrix() +
                     beta.value().row(0);
    }
    return Var(make_node(std::move(out), {x.node(), gamma.node(), beta.node()},
                         [xhat, inv_sigma](Node& self) {
                             const Mat& g = self.grad;
                             const Mat& gam = self.inputs[1]->value;
                             const Eigen::Index n = g.rows(), d = g.cols();
                             accum(self, 2, g.colwise().sum());
                             accum(self, 1, (g.array() * xhat->array()).colwise().sum().matrix());
                             if (!self.inputs[0]->requires_grad) return;
                             Mat dx(n, d);
                             for (Eigen::Index i = 0; i < n; ++i) {
                                 Eigen::Array<double, 1, Eigen::Dynamic> dy =
                                     g.row(i).array() * gam.row(0).array();
                                 double m1 = dy.mean();
                                 double m2 = (dy * xhat->row(i).array()).mean();
                                 dx.row(i) = ((dy - m1 - xhat->row(i).array() * m2) *
                                              (*inv_sigma)(i))
                                                 .matrix();
                             }
                             accum(self, 0, dx);
                         }));
}

Var embedding_rows(const Var& table, std::vector<int> ids) {
    const Mat& tab = table.value();
    Mat out(static_cast<Eigen::Index>(ids.size()), tab.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = tab.row(ids[i]);
    return Var(make_node(std::move(out), {table.node()}, [ids = std::move(ids)](Node& self) {
        Node& table_node = *self.inputs[0];
        if (!table_node.requires_grad) return;
        table_node.ensure_grad();
        for (std::size_t i = 0; i < ids.size(); ++i)
            table_node.grad.row(ids[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    }));
}

Var slice_cols(const Var& a, int begin, int count) {
    return Var(make_node(a.value().middleCols(begin, count), {a.node()}, [begin, count](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        in.ensure_grad();
        in.grad.middleCols(begin, count) += self.grad;
    }));
}

Var concat_cols(const std::vector<Var>& parts) {
    Eigen::Index rows = parts.front().rows(), cols = 0;
    for (const Var& p : parts) cols += p.cols();
    Mat out(rows, cols);
    std::vector<std::shared_ptr<Node>> inputs;
    Eigen::Index at = 0;
    for (const Var& p : parts) {
        out.middleCols(at, p.cols()) = p.value();
        at += p.cols();
        inputs.push_back(p.node());
    }
    return Var(make_node(std::move(out), std::move(inputs), [](Node& self) {
        Eigen::Index at = 0;
        for (std::size_t i = 0; i < self.inputs.size(); ++i) {
            Eigen::Index w = self.inputs[i]->value.cols();
            accum(self, i, self.grad.middleCols(at, w));
            at += w;
        }
    }));
}

Var slice_rows(const Var& a, int begin, int count) {
    return Var(make_node(a.value().middleRows(begin, count), {a.node()}, [begin, count](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        in.ensure_grad();
        in.grad.middleRows(begin, count) += self.grad;
    }));
}

Var concat_rows(const std::vector<Var>& parts) {
    Eigen::Index cols = parts.front().cols(), rows = 0;
    for (const Var& p : parts) rows += p.rows();
    Mat out(rows, cols);
    std::vector<std::shared_ptr<Node>> inputs;
    Eigen::Index at = 0;
    for (const Var& p : parts) {
        out.middleRows(at, p.rows()) = p.value();
        at += p.rows();
        inputs.push_back(p.node());
    }
    return Var(make_node(std::move(out), std::move(inputs), [](Node& self) {
        Eigen::Index at = 0;
        for (std::size_t i = 0; i < self.inputs.size(); ++i) {
            Eigen::Index h = self.inputs[i]->value.rows();
            accum(self, i, self.grad.middleRows(at, h));
            at += h;
        }
    }));
}

Var mask_rows(const Var& a, std::vector<char> keep) {
    Mat out = a.value();
    for (Eigen::Index i = 0; i < out.rows(); ++i)
        if (!keep[static_cast<std::size_t>(i)]) out.row(i).setZero();
    return Var(make_node(std::move(out), {a.node()}, [keep = std::move(keep)](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        in.ensure_grad();
        for (Eigen::Index i = 0; i < self.grad.rows(); ++i)
            if (keep[static_cast<std::size_t>(i)]) in.grad.row(i) += self.grad.row(i);
    }));
}

Var dropout(const Var& a, double rate, Rng& rng) {
    const double keep_scale = 1.0 / (1.0 - rate);
    auto mask = std::make_shared<Mat>(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < mask->rows(); ++i)
        for (Eigen::Index j = 0; j < mask->cols(); ++j)
            (*mask)(i, j) = rng.next_double() < rate ? 0.0 : keep_scale;
    return Var(make_node((a.value().array() * mask->array()).matrix(), {a.node()},
                         [mask](Node& self) {
                             accum(self, 0, (self.grad.array() * mask->array()).matrix());
                         }));
}

Var cross_entropy_sum(const Var& logits, std::vector<int> targets, std::vector<char> mask,
                      std::size_t* mask_count) {
    const Mat& x = logits.value();
    if (targets.size() != mask.size() ||
        static_cast<Eigen::Index>(mask.size()) > x.rows())
        throw std::logic_error("cross_entropy_sum: targets/mask misaligned with logits");

    auto probs = std::make_shared<Mat>(Mat::Zero(x.rows(), x.cols()));
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        const Eigen::Index row = static_cast<Eigen::Index>(i);
        double mx = x.row(row).maxCoeff();
        Eigen::Array<double, 1, Eigen::Dynamic> e = (x.row(row).array() - mx).exp();
        double z = e.sum();
        probs->row(row) = (e / z).matrix();
        total += std::log(z) + mx - x(row, targets[i]);
        ++count;
    }
    if (mask_count) *mask_count = count;

    Mat out(1, 1);
    out(0, 0) = total;
    return Var(make_node(std::move(out), {logits.node()},
                         [probs, targets = std::move(targets), mask = std::move(mask)](Node& self) {
                             Node& in = *self.inputs[0];
                             if (!in.requires_grad) return;
                             in.ensure_grad();
                             double g = self.grad(0, 0);
                             for (std::size_t i = 0; i < mask.size(); ++i) {
                                 if (!mask[i]) continue;
                                 const Eigen::Index row = static_cast<Eigen::Index>(i);
                                 in.grad.row(row) += g * probs->row(row);
                                 in.grad(row, targets[i]) -= g;
                             }
                         }));
}

} // namespace remifill::ad
