#pragma once

// Minimal reverse-mode autodiff over Eigen matrices. A Var wraps a graph
// node holding a value, an accumulated gradient and a backprop closure.
// Graphs are built dynamically per forward pass; parameters are long-lived
// nodes whose gradients are accumulated across backward() calls until
// zero_grad().

#include "spot/common.hpp"

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>

namespace spot::ag {

using spot::Mat;

struct Node {
    Mat value;
    Mat grad;                 // lazily sized; empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // scatter node.grad into parents

    void accum_grad(const Mat& g) {
        if (grad.size() == 0) grad = Mat::Zero(value.rows(), value.cols());
        grad += g;
    }
};

using NodePtr = std::shared_ptr<Node>;

class Var {
public:
    Var() = default;
    explicit Var(NodePtr n) : n_(std::move(n)) {}

    static Var constant(Mat v) {
        auto n = std::make_shared<Node>();
        n->value = std::move(v);
        return Var(n);
    }
    static Var param(Mat v) {
        auto n = std::make_shared<Node>();
        n->value = std::move(v);
        n->requires_grad = true;
        return Var(n);
    }

    bool defined() const { return n_ != nullptr; }
    const Mat& value() const { return n_->value; }
    Mat& value_mut() { return n_->value; }
    const Mat& grad() const { return n_->grad; }
    bool requires_grad() const { return n_ && n_->requires_grad; }
    NodePtr node() const { return n_; }

    Eigen::Index rows() const { return n_->value.rows(); }
    Eigen::Index cols() const { return n_->value.cols(); }

    void zero_grad() { if (n_) n_->grad.setZero(); }

    /// Backward from a scalar (1x1) output.
    void backward() const {
        if (rows() != 1 || cols() != 1)
            throw NumericError("backward() requires a scalar output");
        // topological order via iterative DFS
        std::vector<Node*> order;
        std::unordered_set<Node*> seen;
        std::vector<std::pair<Node*, size_t>> stack;
        stack.emplace_back(n_.get(), 0);
        seen.insert(n_.get());
        while (!stack.empty()) {
            auto& [node, idx] = stack.back();
            if (idx < node->parents.size()) {
                Node* p = node->parents[idx++].get();
                if (!seen.count(p)) {
                    seen.insert(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
        n_->accum_grad(Mat::Ones(1, 1));
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* node = *it;
            if (node->backprop && node->grad.size() != 0) node->backprop(*node);
        }
    }

private:
    NodePtr n_;
};

namespace detail {
inline Var make_op(Mat value, std::vector<Var> inputs,
                   std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    for (auto& v : inputs) {
        n->parents.push_back(v.node());
        if (v.requires_grad() || v.node()->backprop) n->requires_grad = true;
    }
    if (n->requires_grad) n->backprop = std::move(backprop);
    return Var(n);
}
}  // namespace detail

// ---- arithmetic -----------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
    return detail::make_op(a.value() + b.value(), {a, b}, [](Node& n) {
        n.parents[0]->accum_grad(n.grad);
        n.parents[1]->accum_grad(n.grad);
    });
}

inline Var sub(const Var& a, const Var& b) {
    return detail::make_op(a.value() - b.value(), {a, b}, [](Node& n) {
        n.parents[0]->accum_grad(n.grad);
        n.parents[1]->accum_grad(-n.grad);
    });
}

inline Var mul(const Var& a, const Var& b) {  // elementwise
    return detail::make_op(a.value().cwiseProduct(b.value()), {a, b}, [](Node& n) {
        n.parents[0]->accum_grad(n.grad.cwiseProduct(n.parents[1]->value));
        n.parents[1]->accum_grad(n.grad.cwiseProduct(n.parents[0]->value));
    });
}

inline Var div(const Var& a, const Var& b) {  // elementwise
    return detail::make_op(a.value().cwiseQuotient(b.value()), {a, b}, [](Node& n) {
        const Mat& bv = n.parents[1]->value;
        n.parents[0]->accum_grad(n.grad.cwiseQuotient(bv));
        n.parents[1]->accum_grad(
            -n.grad.cwiseProduct(n.value).cwiseQuotient(bv));
    });
}

inline Var scale(const Var& a, double s) {
    return detail::make_op(a.value() * s, {a}, [s](Node& n) {
        n.parents[0]->accum_grad(n.grad * s);
    });
}

inline Var offset(const Var& a, double c) {
    return detail::make_op(a.value().array() + c, {a}, [](Node& n) {
        n.parents[0]->accum_grad(n.grad);
    });
}

inline Var neg(const Var& a) { return scale(a, -1.0); }

inline Var matmul(const Var& a, const Var& b) {
    return detail::make_op(a.value() * b.value(), {a, b}, [](Node& n) {
        n.parents[0]->accum_grad(n.grad * n.parents[1]->value.transpose());
        n.parents[1]->accum_grad(n.parents[0]->value.transpose() * n.grad);
    });
}

inline Var transpose(const Var& a) {
    return detail::make_op(a.value().transpose(), {a}, [](Node& n) {
        n.parents[0]->accum_grad(n.grad.transpose());
    });
}

/// Broadcast-add a column vector to every column of a matrix.
inline Var add_colvec(const Var& m, const Var& col) {
    return detail::make_op(m.value().colwise() + Eigen::VectorXd(col.value().col(0)),
                           {m, col}, [](Node& n) {
        n.parents[0]->accum_grad(n.grad);
        n.parents[1]->accum_grad(n.grad.rowwise().sum());
    });
}

// ---- elementwise nonlinearities ------------------------------------------

inline Var sigmoid(const Var& a) {
    Mat y = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
    return detail::make_op(std::move(y), {a}, [](Node& n) {
        Mat d = n.value.array() * (1.0 - n.value.array());
        n.parents[0]->accum_grad(n.grad.cwiseProduct(d));
    });
}

inline Var tanh_(const Var& a) {
    Mat y = a.value().array().tanh().matrix();
    return detail::make_op(std::move(y), {a}, [](Node& n) {
        Mat d = 1.0 - n.value.array().square();
        n.parents[0]->accum_grad(n.grad.cwiseProduct(d));
    });
}

inline Var exp_(const Var& a) {
    Mat y = a.value().array().exp().matrix();
    return detail::make_op(std::move(y), {a}, [](Node& n) {
        n.parents[0]->accum_grad(n.grad.cwiseProduct(n.value));
    });
}

inline Var log_(const Var& a) {
    Mat y = a.value().array().log().matrix();
    return detail::make_op(std::move(y), {a}, [](Node& n) {
        n.parents[0]->accum_grad(n.grad.cwiseQuotient(n.parents[0]->value));
    });
}

inline Var relu(const Var& a) {
    Mat y = a.value().cwiseMax(0.0);
    return detail::make_op(std::move(y), {a}, [](Node& n) {
        Mat d = (n.parents[0]->value.array() > 0.0).cast<double>();
        n.parents[0]->accum_grad(n.grad.cwiseProduct(d));
    });
}

/// Tanh-approximation GELU.
inline Var gelu(const Var& a) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    const auto& x = a.value().array();
    Eigen::ArrayXXd inner = c * (x + 0.044715 * x.cube());
    Eigen::ArrayXXd t = inner.tanh();
    Mat y = (0.5 * x * (1.0 + t)).matrix();
    return detail::make_op(std::move(y), {a}, [c](Node& n) {
        const auto& x = n.parents[0]->value.array();
        Eigen::ArrayXXd inner = c * (x + 0.044715 * x.cube());
        Eigen::ArrayXXd t = inner.tanh();
        Eigen::ArrayXXd dinner = c * (1.0 + 3.0 * 0.044715 * x.square());
        Eigen::ArrayXXd d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t.square()) * dinner;
        n.parents[0]->accum_grad(n.grad.cwiseProduct(d.matrix()));
    });
}

/// Clamp with straight-through-zero gradient outside [lo, hi].
inline Var clamp(const Var& a, double lo, double hi) {
    Mat y = a.value().cwiseMax(lo).cwiseMin(hi);
    return detail::make_op(std::move(y), {a}, [lo, hi](Node& n) {
        const auto& x = n.parents[0]->value.array();
        Mat d = ((x >= lo) && (x <= hi)).cast<double>();
        n.parents[0]->accum_grad(n.grad.cwiseProduct(d));
    });
}

// ---- reductions and shape ops --------------------------------------------

inline Var sum_all(const Var& a) {
    Mat y(1, 1);
    y(0, 0) = a.value().sum();
    return detail::make_op(std::move(y), {a}, [](Node& n) {
        n.parents[0]->accum_grad(
            Mat::Constant(n.parents[0]->value.rows(), n.parents[0]->value.cols(),
                          n.grad(0, 0)));
    });
}

inline Var mean_all(const Var& a) {
    return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size()));
}

/// Column sums as a (1, C)-shaped row vector.
inline Var sum_cols(const Var& a) {
    Mat y = a.value().colwise().sum();
    return detail::make_op(std::move(y), {a}, [](Node& n) {
        Mat g = Mat::Ones(n.parents[0]->value.rows(), 1) * n.grad;
        n.parents[0]->accum_grad(g);
    });
}

inline Var slice_rows(const Var& a, Eigen::Index r0, Eigen::Index nrows) {
    Mat y = a.value().middleRows(r0, nrows);
    return detail::make_op(std::move(y), {a}, [r0, nrows](Node& n) {
        Mat g = Mat::Zero(n.parents[0]->value.rows(), n.parents[0]->value.cols());
        g.middleRows(r0, nrows) = n.grad;
        n.parents[0]->accum_grad(g);
    });
}

inline Var concat_rows(const std::vector<Var>& parts) {
    Eigen::Index rows = 0;
    const Eigen::Index cols = parts.front().cols();
    for (const auto& p : parts) rows += p.rows();
    Mat y(rows, cols);
    Eigen::Index r = 0;
    for (const auto& p : parts) {
        y.middleRows(r, p.rows()) = p.value();
        r += p.rows();
    }
    return detail::make_op(std::move(y), parts, [](Node& n) {
        Eigen::Index r = 0;
        for (auto& p : n.parents) {
            p->accum_grad(n.grad.middleRows(r, p->value.rows()));
            r += p->value.rows();
        }
    });
}

/// Gather columns by index (duplicates allowed).
inline Var select_cols(const Var& a, std::vector<int> idx) {
    Mat y(a.rows(), static_cast<Eigen::Index>(idx.size()));
    for (size_t j = 0; j < idx.size(); ++j) y.col(j) = a.value().col(idx[j]);
    return detail::make_op(std::move(y), {a}, [idx = std::move(idx)](Node& n) {
        Mat g = Mat::Zero(n.parents[0]->value.rows(), n.parents[0]->value.cols());
        for (size_t j = 0; j < idx.size(); ++j) g.col(idx[j]) += n.grad.col(j);
        n.parents[0]->accum_grad(g);
    });
}

// ---- normalizations -------------------------------------------------------

inline Var softmax_cols(const Var& a) {
    Mat y = a.value();
    for (Eigen::Index c = 0; c < y.cols(); ++c) {
        Eigen::VectorXd col = y.col(c);
        double m = col.maxCoeff();
        Eigen::VectorXd e = (col.array() - m).exp();
        y.col(c) = e / e.sum();
    }
    return detail::make_op(std::move(y), {a}, [](Node& n) {
        Mat g(n.value.rows(), n.value.cols());
        for (Eigen::Index c = 0; c < n.value.cols(); ++c) {
            Eigen::VectorXd s = n.value.col(c);
            Eigen::VectorXd gy = n.grad.col(c);
            double dot = s.dot(gy);
            g.col(c) = s.array() * (gy.array() - dot);
        }
        n.parents[0]->accum_grad(g);
    });
}

/// Per-column standardization with learnable gain/bias (both (C,1)).
inline Var layer_norm_cols(const Var& x, const Var& gain, const Var& bias,
                           double eps = 1e-5) {
    const Mat& v = x.value();
    const Eigen::Index C = v.rows(), T = v.cols();
    Mat xhat(C, T);
    Eigen::VectorXd inv_std(T);
    for (Eigen::Index t = 0; t < T; ++t) {
        double mu = v.col(t).mean();
        double var = (v.col(t).array() - mu).square().mean();
        inv_std(t) = 1.0 / std::sqrt(var + eps);
        xhat.col(t) = (v.col(t).array() - mu) * inv_std(t);
    }
    Mat y = (xhat.array().colwise() * gain.value().col(0).array()).colwise() +
            bias.value().col(0).array();
    return detail::make_op(std::move(y), {x, gain, bias},
                           [xhat, inv_std](Node& n) {
        const Eigen::Index C = xhat.rows(), T = xhat.cols();
        const Eigen::VectorXd g = n.parents[1]->value.col(0);
        Mat dx(C, T);
        Eigen::VectorXd dgain = Eigen::VectorXd::Zero(C);
        Eigen::VectorXd dbias = Eigen::VectorXd::Zero(C);
        for (Eigen::Index t = 0; t < T; ++t) {
            Eigen::VectorXd gy = n.grad.col(t);
            dgain += gy.cwiseProduct(xhat.col(t));
            dbias += gy;
            Eigen::VectorXd dxhat = gy.cwiseProduct(g);
            double m1 = dxhat.mean();
            double m2 = dxhat.cwiseProduct(xhat.col(t)).mean();
            dx.col(t) = inv_std(t) *
                        (dxhat.array() - m1 - xhat.col(t).array() * m2);
        }
        n.parents[0]->accum_grad(dx);
        n.parents[1]->accum_grad(dgain);
        n.parents[2]->accum_grad(dbias);
    });
}

/// L2-normalize every column; columns with norm below eps pass through scaled
/// by 1/eps.
inline Var l2_normalize_cols(const Var& x, double eps = 1e-12) {
    const Mat& v = x.value();
    Eigen::VectorXd norms(v.cols());
    Mat y(v.rows(), v.cols());
    for (Eigen::Index t = 0; t < v.cols(); ++t) {
        norms(t) = std::max(v.col(t).norm(), eps);
        y.col(t) = v.col(t) / norms(t);
    }
    return detail::make_op(std::move(y), {x}, [norms](Node& n) {
        Mat dx(n.value.rows(), n.value.cols());
        for (Eigen::Index t = 0; t < n.value.cols(); ++t) {
            Eigen::VectorXd u = n.value.col(t);
            Eigen::VectorXd gy = n.grad.col(t);
            dx.col(t) = (gy - u * u.dot(gy)) / norms(t);
        }
        n.parents[0]->accum_grad(dx);
    });
}

// ---- 1-D convolution along the column (time) axis -------------------------

/// x: (Cin, T); w: (Cout, Cin*kw) with tap j stored in block j*Cin; b: (Cout,1).
/// Zero padding keeps the output length at T. kw must be odd.
inline Var conv1d(const Var& x, const Var& w, const Var& b, int kw) {
    const Mat& xv = x.value();
    const Eigen::Index cin = xv.rows(), T = xv.cols();
    const Eigen::Index cout = w.value().rows();
    const int hw = kw / 2;
    Mat y = b.value().col(0).replicate(1, T);
    for (int j = 0; j < kw; ++j) {
        const Mat wj = w.value().middleCols(static_cast<Eigen::Index>(j) * cin, cin);
        const int off = j - hw;
        const Eigen::Index lo = std::max<Eigen::Index>(0, -off);
        const Eigen::Index hi = std::min<Eigen::Index>(T, T - off);
        if (lo >= hi) continue;
        y.middleCols(lo, hi - lo) += wj * xv.middleCols(lo + off, hi - lo);
    }
    return detail::make_op(std::move(y), {x, w, b}, [kw, cin, cout, T](Node& n) {
        const int hw = kw / 2;
        const Mat& xv = n.parents[0]->value;
        const Mat& wv = n.parents[1]->value;
        Mat dx = Mat::Zero(cin, T);
        Mat dw = Mat::Zero(cout, static_cast<Eigen::Index>(kw) * cin);
        for (int j = 0; j < kw; ++j) {
            const int off = j - hw;
            const Eigen::Index lo = std::max<Eigen::Index>(0, -off);
            const Eigen::Index hi = std::min<Eigen::Index>(T, T - off);
            if (lo >= hi) continue;
            const Mat wj = wv.middleCols(static_cast<Eigen::Index>(j) * cin, cin);
            const auto gy = n.grad.middleCols(lo, hi - lo);
            dx.middleCols(lo + off, hi - lo) += wj.transpose() * gy;
            dw.middleCols(static_cast<Eigen::Index>(j) * cin, cin) +=
                gy * xv.middleCols(lo + off, hi - lo).transpose();
        }
        n.parents[0]->accum_grad(dx);
        n.parents[1]->accum_grad(dw);
        n.parents[2]->accum_grad(n.grad.rowwise().sum());
    });
}

}  // namespace spot::ag
