#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

#include "facediff/params.hpp"
#include "facediff/tensor.hpp"

// Define-by-run reverse-mode tape. Values are computed eagerly at op
// construction; backward() walks the graph in reverse topological order.
// Graphs are built per call and freed when the root goes out of scope, so
// concurrent forward passes over frozen weights never share mutable state.

namespace facediff {

template <typename Real>
struct Node {
    Tensor<Real> val;
    Tensor<Real> grad;  // allocated lazily, zeros
    bool needs_grad = false;
    Parameter<Real>* param = nullptr;
    std::vector<std::shared_ptr<Node<Real>>> inputs;
    std::function<void()> backprop;  // accumulates this->grad into the inputs' grads

    void ensure_grad() {
        if (grad.size() == 0) grad = Tensor<Real>::zeros_like(val);
    }
};

template <typename Real>
using NodePtr = std::shared_ptr<Node<Real>>;

template <typename Real>
NodePtr<Real> make_node(Tensor<Real> val, std::vector<NodePtr<Real>> inputs) {
    auto n = std::make_shared<Node<Real>>();
    n->val = std::move(val);
    n->inputs = std::move(inputs);
    for (const auto& i : n->inputs) n->needs_grad = n->needs_grad || i->needs_grad;
    return n;
}

template <typename Real>
NodePtr<Real> constant(Tensor<Real> t) {
    return make_node(std::move(t), {});
}

template <typename Real>
NodePtr<Real> leaf(Tensor<Real> t, bool needs_grad = true) {
    auto n = make_node(std::move(t), {});
    n->needs_grad = needs_grad;
    return n;
}

// Leaf backed by a stored parameter; backward() adds the leaf's gradient into
// Parameter::grad. Frozen parameters take no gradient at all.
template <typename Real>
NodePtr<Real> param_leaf(Parameter<Real>& p) {
    auto n = make_node(Tensor<Real>(p.value), {});
    n->needs_grad = p.trainable;
    n->param = &p;
    return n;
}

template <typename Real>
void backward(const NodePtr<Real>& root) {
    if (root->val.size() != 1) throw std::invalid_argument("backward: root must be scalar");
    // Post-order DFS over grad-requiring nodes; reversed it is topological.
    std::vector<Node<Real>*> order;
    std::unordered_set<Node<Real>*> seen;
    std::vector<std::pair<Node<Real>*, size_t>> stack;
    stack.push_back({root.get(), 0});
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->inputs.size()) {
            Node<Real>* c = n->inputs[idx++].get();
            if (c->needs_grad && !seen.count(c)) {
                seen.insert(c);
                stack.push_back({c, 0});
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad.v[0] = Real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<Real>* n = *it;
        if (!n->needs_grad) continue;
        n->ensure_grad();
        if (n->backprop) n->backprop();
        if (n->param && n->param->trainable) n->param->grad.add_inplace(n->grad);
    }
}

// ---------------------------------------------------------------------------
// Primitive ops
// ---------------------------------------------------------------------------

template <typename Real>
NodePtr<Real> matmul(NodePtr<Real> a, NodePtr<Real> b) {
    Tensor<Real> out(a->val.rows(), b->val.cols());
    gemm(a->val, false, b->val, false, out, false);
    auto n = make_node(std::move(out), {a, b});
    if (n->needs_grad) {
        Node<Real>* np = n.get();
        n->backprop = [np, a, b]() {
            if (a->needs_grad) {
                a->ensure_grad();
                gemm(np->grad, false, b->val, true, a->grad, true);
            }
            if (b->needs_grad) {
                b->ensure_grad();
                gemm(a->val, true, np->grad, false, b->grad, true);
            }
        };
    }
    return n;
}

template <typename Real>
NodePtr<Real> transpose(NodePtr<Real> a) {
    Tensor<Real> out(a->val.cols(), a->val.rows());
    for (int64_t i = 0; i < a->val.rows(); ++i)
        for (int64_t j = 0; j < a->val.cols(); ++j) out.at(j, i) = a->val.at(i, j);
    auto n = make_node(std::move(out), {a});
    if (n->needs_grad) {
        Node<Real>* np = n.get();
        n->backprop = [np, a]() {
            a->ensure_grad();
            for (int64_t i = 0; i < a->val.rows(); ++i)
                for (int64_t j = 0; j < a->val.cols(); ++j) a->grad.at(i, j) += np->grad.at(j, i);
        };
    }
    return n;
}

namespace detail {

// b must match a's shape, or be a single row broadcast over a's rows.
template <typename Real>
void check_bcast(const Tensor<Real>& a, const Tensor<Real>& b, const char* what) {
    if (b.cols() != a.cols() || (b.rows() != a.rows() && b.rows() != 1))
        throw std::invalid_argument(std::string(what) + ": shape mismatch (" + a.shape_str() +
                                    " vs " + b.shape_str() + ")");
}

}  // namespace detail

// out = a + b, b broadcast over rows when it has one row
template <typename Real>
NodePtr<Real> add(NodePtr<Real> a, NodePtr<Real> b) {
    detail::check_bcast(a->val, b->val, "add");
    const bool bcast = b->val.rows() == 1 && a->val.rows() != 1;
    Tensor<Real> out = a->val;
    for (int64_t i = 0; i < out.rows(); ++i)
        for (int64_t j = 0; j < out.cols(); ++j) out.at(i, j) += b->val.at(bcast ? 0 : i, j);
    auto n = make_node(std::move(out), {a, b});
    if (n->needs_grad) {
        Node<Real>* np = n.get();
        n->backprop = [np, a, b, bcast]() {
            if (a->needs_grad) {
                a->ensure_grad();
                a->grad.add_inplace(np->grad);
            }
            if (b->needs_grad) {
                b->ensure_grad();
                for (int64_t i = 0; i < np->grad.rows(); ++i)
                    for (int64_t j = 0; j < np->grad.cols(); ++j)
                        b->grad.at(bcast ? 0 : i, j) += np->grad.at(i, j);
            }
        };
    }
    return n;
}

template <typename Real>
NodePtr<Real> sub(NodePtr<Real> a, NodePtr<Real> b) {
    detail::check_bcast(a->val, b->val, "sub");
    const bool bcast = b->val.rows() == 1 && a->val.rows() != 1;
    Tensor<Real> out = a->val;
    for (int64_t i = 0; i < out.rows(); ++i)
        for (int64_t j = 0; j < out.cols(); ++j) out.at(i, j) -= b->val.at(bcast ? 0 : i, j);
    auto n = make_node(std::move(out), {a, b});
    if (n->needs_grad) {
        Node<Real>* np = n.get();
        n->backprop = [np, a, b, bcast]() {
            if (a->needs_grad) {
                a->ensure_grad();
                a->grad.add_inplace(np->grad);
            }
            if (b->needs_grad) {
                b->ensure_grad();
                for (int64_t i = 0; i < np->grad.rows(); ++i)
                    for (int64_t j = 0; j < np->grad.cols(); ++j)
                        b->grad.at(bcast ? 0 : i, j) -= np->grad.at(i, j);
            }
        };
    }
    return n;
}

// out = a ⊙ b, b broadcast over rows when it has one row
template <typename Real>
NodePtr<Real> mul(NodePtr<Real> a, NodePtr<Real> b) {
    detail::check_bcast(a->val, b->val, "mul");
    const bool bcast = b->val.rows() == 1 && a->val.rows() != 1;
    Tensor<Real> out = a->val;
    for (int64_t i = 0; i < out.rows(); ++i)
        for (int64_t j = 0; j < out.cols(); ++j) out.at(i, j) *= b->val.at(bcast ? 0 : i, j);
    auto n = make_node(std::move(out), {a, b});
    if (n->needs_grad) {
        Node<Real>* np = n.get();
        n->backprop = [np, a, b, bcast]() {
            if (a->needs_grad) {
                a->ensure_grad();
                for (int64_t i = 0; i < np->grad.rows(); ++i)
                    for (int64_t j = 0; j < np->grad.cols(); ++j)
                        a->grad.at(i, j) += np->grad.at(i, j) * b->val.at(bcast ? 0 : i, j);
            }
            if (b->needs_grad) {
                b->ensure_grad();
                for (int64_t i = 0; i < np->grad.rows(); ++i)
                    for (int64_t j = 0; j < np->grad.cols(); ++j)
                        b->grad.at(bcast ? 0 : i, j) += np->grad.at(i, j) * a->val.at(i, j);
            }
        };
    }
    return n;
}

template <typename Real>
NodePtr<Real> scale(NodePtr<Real> a, Real c) {
    Tensor<Real> out = a->val;
    for (auto& x : out.v) x *= c;
    auto n = make_node(std::move(out), {a});
    if (n->needs_grad) {
        Node<Real>* np = n.get();
        n->backprop = [np, a, c]() {
            a->ensure_grad();
            for (size_t i = 0; i < a->grad.v.size(); ++i) a->grad.v[i] += c * np->grad.v[i];
        };
    }
    return n;
}

template <typename Real>
NodePtr<Real> add_const(NodePtr<Real> a, Real c) {
    Tensor<Real> out = a->val;
    for (auto& x : out.v) x += c;
    auto n = make_node(std::move(out), {a});
    if (n->needs_grad) {
        Node<Real>* np = n.get();
        n->backprop = [np, a]() {
            a->ensure_grad();
            a->grad.add_inplace(np->grad);
        };
    }
    return n;
}

// Row-wise softmax, numerically stable. A masked score of -1e9 underflows
// exp() to exactly +0, so sentinel-masked positions get weight exactly 0.
template <typename Real>
NodePtr<Real> softmax_rows(NodePtr<Real> a) {
    Tensor<Real> out = a->val;
    for (int64_t i = 0; i < out.rows(); ++i) {
        Real* row = out.row_ptr(i);
        Real m = row[0];
        for (int64_t j = 1; j < out.cols(); ++j) m = std::max(m, row[j]);
        Real sum = 0;
        for (int64_t j = 0; j < out.cols(); ++j) {
            row[j] = std::exp(row[j] - m);
            sum += row[j];
        }
        for (int64_t j = 0; j < out.cols(); ++j) row[j] /= sum;
    }
    auto n = make_node(std::move(out), {a});
    if (n->needs_grad) {
        Node<Real>* np = n.get();
        n->backprop = [np, a]() {
            a->ensure_grad();
            for (int64_t i = 0; i < np->val.rows(); ++i) {
                const Real* y = np->val.row_ptr(i);
                const Real* g = np->grad.row_ptr(i);
                Real dot = 0;
                for (int64_t j = 0; j < np->val.cols(); ++j) dot += y[j] * g[j];
                Real* da = a->grad.row_ptr(i);
                for (int64_t j = 0; j < np->val.cols(); ++j) da[j] += y[j] * (g[j] - dot);
            }
        };
    }
    return n;
}

// Row-wise layer norm without learned affine (modulation layers supply scale
// and shift where needed).
template <typename Real>
NodePtr<Real> layernorm_rows(NodePtr<Real> a, Real eps = Real(1e-5)) {
    const int64_t R = a->val.rows(), C = a->val.cols();
    Tensor<Real> out(R, C);
    Tensor<Real> inv_std(R, 1);
    for (int64_t i = 0; i < R; ++i) {
        const Real* x = a->val.row_ptr(i);
        Real mean = 0;
        for (int64_t j = 0; j < C; ++j) mean += x[j];
        mean /= Real(C);
        Real var = 0;
        for (int64_t j = 0; j < C; ++j) var += (x[j] - mean) * (x[j] - mean);
        var /= Real(C);
        Real is = Real(1) / std::sqrt(var + eps);
        inv_std.at(i, 0) = is;
        for (int64_t j = 0; j < C; ++j) out.at(i, j) = (x[j] - mean) * is;
    }
    auto n = make_node(std::move(out), {a});
    if (n->needs_grad) {
        Node<Real>* np = n.get();
        n->backprop = [np, a, inv_std = std::move(inv_std)]() {
            a->ensure_grad();
            const int64_t R = np->val.rows(), C = np->val.cols();
            for (int64_t i = 0; i < R; ++i) {
                const Real* y = np->val.row_ptr(i);
                const Real* g = np->grad.row_ptr(i);
                Real g_mean = 0, gy_mean = 0;
                for (int64_t j = 0; j < C; ++j) {
                    g_mean += g[j];
                    gy_mean += g[j] * y[j];
                }
                g_mean /= Real(C);
                gy_mean /= Real(C);
                Real is = inv_std.at(i, 0);
                Real* da = a->grad.row_ptr(i);
                for (int64_t j = 0; j < C; ++j) da[j] += is * (g[j] - g_mean - y[j] * gy_mean);
            }
        };
    }
    return n;
}

template <typename Real>
NodePtr<Real> gelu(NodePtr<Real> a) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    Tensor<Real> out = a->val;
    for (auto& x : out.v) {
        double xd = double(x);
        x = Real(xd * 0.5 * (1.0 + std::erf(xd * inv_sqrt2)));
    }
    auto n = make_node(std::move(out), {a});
    if (n->needs_grad) {
        Node<Real>* np = n.get();
        n->backprop = [np, a]() {
            a->ensure_grad();
            for (size_t i = 0; i < a->grad.v.size(); ++i) {
                double x = double(a->val.v[i]);
                double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                a->grad.v[i] += np->grad.v[i] * Real(cdf + x * pdf);
            }
        };
    }
    return n;
}

template <typename Real>
NodePtr<Real> silu(NodePtr<Real> a) {
    Tensor<Real> out = a->val;
    for (auto& x : out.v) {
        double s = 1.0 / (1.0 + std::exp(-double(x)));
        x = Real(double(x) * s);
    }
    auto n = make_node(std::move(out), {a});
    if (n->needs_grad) {
        Node<Real>* np = n.get();
        n->backprop = [np, a]() {
            a->ensure_grad();
            for (size_t i = 0; i < a->grad.v.size(); ++i) {
                double x = double(a->val.v[i]);
                double s = 1.0 / (1.0 + std::exp(-x));
                a->grad.v[i] += np->grad.v[i] * Real(s * (1.0 + x * (1.0 - s)));
            }
        };
    }
    return n;
}

template <typename Real>
NodePtr<Real> sum_all(NodePtr<Real> a) {
    Real s = 0;
    for (Real x : a->val.v) s += x;
    auto n = make_node(Tensor<Real>::scalar(s), {a});
    if (n->needs_grad) {
        Node<Real>* np = n.get();
        n->backprop = [np, a]() {
            a->ensure_grad();
            Real g = np->grad.v[0];
            for (auto& x : a->grad.v) x += g;
        };
    }
    return n;
}

template <typename Real>
NodePtr<Real> col_slice(NodePtr<Real> a, int64_t c0, int64_t c1) {
    if (c0 < 0 || c1 > a->val.cols() || c0 >= c1)
        throw std::invalid_argument("col_slice: bad range");
    Tensor<Real> out(a->val.rows(), c1 - c0);
    for (int64_t i = 0; i < out.rows(); ++i)
        for (int64_t j = 0; j < out.cols(); ++j) out.at(i, j) = a->val.at(i, c0 + j);
    auto n = make_node(std::move(out), {a});
    if (n->needs_grad) {
        Node<Real>* np = n.get();
        n->backprop = [np, a, c0]() {
            a->ensure_grad();
            for (int64_t i = 0; i < np->grad.rows(); ++i)
                for (int64_t j = 0; j < np->grad.cols(); ++j)
                    a->grad.at(i, c0 + j) += np->grad.at(i, j);
        };
    }
    return n;
}

template <typename Real>
NodePtr<Real> col_concat(const std::vector<NodePtr<Real>>& parts) {
    if (parts.empty()) throw std::invalid_argument("col_concat: no parts");
    int64_t rows = parts[0]->val.rows(), cols = 0;
    for (const auto& p : parts) {
        if (p->val.rows() != rows) throw std::invalid_argument("col_concat: row mismatch");
        cols += p->val.cols();
    }
    Tensor<Real> out(rows, cols);
    int64_t off = 0;
    for (const auto& p : parts) {
        for (int64_t i = 0; i < rows; ++i)
            for (int64_t j = 0; j < p->val.cols(); ++j) out.at(i, off + j) = p->val.at(i, j);
        off += p->val.cols();
    }
    auto n = make_node(std::move(out), parts);
    if (n->needs_grad) {
        Node<Real>* np = n.get();
        n->backprop = [np, parts]() {
            int64_t off = 0;
            for (const auto& p : parts) {
                if (p->needs_grad) {
                    p->ensure_grad();
                    for (int64_t i = 0; i < p->grad.rows(); ++i)
                        for (int64_t j = 0; j < p->grad.cols(); ++j)
                            p->grad.at(i, j) += np->grad.at(i, off + j);
                }
                off += p->val.cols();
            }
        };
    }
    return n;
}

template <typename Real>
NodePtr<Real> row_slice(NodePtr<Real> a, int64_t r0, int64_t r1) {
    if (r0 < 0 || r1 > a->val.rows() || r0 >= r1)
        throw std::invalid_argument("row_slice: bad range");
    Tensor<Real> out(r1 - r0, a->val.cols());
    for (int64_t i = 0; i < out.rows(); ++i)
        for (int64_t j = 0; j < out.cols(); ++j) out.at(i, j) = a->val.at(r0 + i, j);
    auto n = make_node(std::move(out), {a});
    if (n->needs_grad) {
        Node<Real>* np = n.get();
        n->backprop = [np, a, r0]() {
            a->ensure_grad();
            for (int64_t i = 0; i < np->grad.rows(); ++i)
                for (int64_t j = 0; j < np->grad.cols(); ++j)
                    a->grad.at(r0 + i, j) += np->grad.at(i, j);
        };
    }
    return n;
}

template <typename Real>
NodePtr<Real> row_concat(const std::vector<NodePtr<Real>>& parts) {
    if (parts.empty()) throw std::invalid_argument("row_concat: no parts");
    int64_t cols = parts[0]->val.cols(), rows = 0;
    for (const auto& p : parts) {
        if (p->val.cols() != cols) throw std::invalid_argument("row_concat: column mismatch");
        rows += p->val.rows();
    }
    Tensor<Real> out(rows, cols);
    int64_t off = 0;
    for (const auto& p : parts) {
        for (int64_t i = 0; i < p->val.rows(); ++i)
            for (int64_t j = 0; j < cols; ++j) out.at(off + i, j) = p->val.at(i, j);
        off += p->val.rows();
    }
    auto n = make_node(std::move(out), parts);
    if (n->needs_grad) {
        Node<Real>* np = n.get();
        n->backprop = [np, parts]() {
            int64_t off = 0;
            for (const auto& p : parts) {
                if (p->needs_grad) {
                    p->ensure_grad();
                    for (int64_t i = 0; i < p->grad.rows(); ++i)
                        for (int64_t j = 0; j < p->grad.cols(); ++j)
                            p->grad.at(i, j) += np->grad.at(off + i, j);
                }
                off += p->val.rows();
            }
        };
    }
    return n;
}

// Broadcast a single row to `rows` copies.
template <typename Real>
NodePtr<Real> broadcast_rows(NodePtr<Real> a, int64_t rows) {
    if (a->val.rows() != 1) throw std::invalid_argument("broadcast_rows: input must be a row");
    Tensor<Real> out(rows, a->val.cols());
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < out.cols(); ++j) out.at(i, j) = a->val.at(0, j);
    auto n = make_node(std::move(out), {a});
    if (n->needs_grad) {
        Node<Real>* np = n.get();
        n->backprop = [np, a]() {
            a->ensure_grad();
            for (int64_t i = 0; i < np->grad.rows(); ++i)
                for (int64_t j = 0; j < np->grad.cols(); ++j) a->grad.at(0, j) += np->grad.at(i, j);
        };
    }
    return n;
}

// Cross entropy of a single-row logit vector against an integer label,
// computed with a fused stable log-sum-exp.
template <typename Real>
NodePtr<Real> cross_entropy_row(NodePtr<Real> logits, int64_t label) {
    if (logits->val.rows() != 1) throw std::invalid_argument("cross_entropy_row: logits must be 1xE");
    if (label < 0 || label >= logits->val.cols())
        throw std::out_of_range("cross_entropy_row: label out of range");
    const int64_t E = logits->val.cols();
    Real m = logits->val.v[0];
    for (int64_t j = 1; j < E; ++j) m = std::max(m, logits->val.v[size_t(j)]);
    Real sum = 0;
    for (int64_t j = 0; j < E; ++j) sum += std::exp(logits->val.v[size_t(j)] - m);
    Real lse = m + std::log(sum);
    auto n = make_node(Tensor<Real>::scalar(lse - logits->val.v[size_t(label)]), {logits});
    if (n->needs_grad) {
        Node<Real>* np = n.get();
        n->backprop = [np, logits, label, m, sum]() {
            logits->ensure_grad();
            Real g = np->grad.v[0];
            for (int64_t j = 0; j < logits->val.cols(); ++j) {
                Real p = std::exp(logits->val.v[size_t(j)] - m) / sum;
                logits->grad.v[size_t(j)] += g * (p - (j == label ? Real(1) : Real(0)));
            }
        };
    }
    return n;
}

// sum((a - b)^2), the simple reconstruction loss. b never takes gradient here.
template <typename Real>
NodePtr<Real> sum_sq_diff(NodePtr<Real> a, NodePtr<Real> b) {
    a->val.require_same_shape(b->val, "sum_sq_diff");
    auto d = sub(a, b);
    return sum_all(mul(d, d));
}

}  // namespace facediff
