// Copyright 2026 the cuside authors
// Minimal deterministic tensor core with reverse-mode automatic
// differentiation: dense double-precision matrices, a tape of shared_ptr
// nodes, the layers the pipeline needs (linear, sigmoid, log-softmax,
// dropout, L1, fused LSTM/GRU sequences), Adam with gradient clipping,
// and versioned checkpoint I/O.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cuside/common.hpp"

namespace cuside::neural {

// ---------------------------------------------------------------------------
// Dense row-major matrix

struct Mat {
    size_t rows = 0, cols = 0;
    std::vector<Real> v;

    Mat() = default;
    Mat(size_t r, size_t c, Real fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}

    Real& at(size_t r, size_t c) { return v[r * cols + c]; }
    Real at(size_t r, size_t c) const { return v[r * cols + c]; }
    Real* row(size_t r) { return v.data() + r * cols; }
    const Real* row(size_t r) const { return v.data() + r * cols; }
    size_t size() const { return v.size(); }
    bool empty() const { return v.empty(); }

    static Mat scalar(Real x) {
        Mat m(1, 1);
        m.v[0] = x;
        return m;
    }
};

inline Mat uniform_init(size_t rows, size_t cols, Real bound, Rng& rng) {
    Mat m(rows, cols);
    for (auto& x : m.v) x = rng.uniform(-bound, bound);
    return m;
}

// out (+)= a * b
inline void matmul_acc(const Mat& a, const Mat& b, Mat& out, bool accumulate) {
    require(a.cols == b.rows, "matmul: inner dimension mismatch");
    if (!accumulate) {
        out = Mat(a.rows, b.cols);
    } else {
        require(out.rows == a.rows && out.cols == b.cols, "matmul: bad accumulator shape");
    }
    for (size_t i = 0; i < a.rows; ++i) {
        const Real* arow = a.row(i);
        Real* orow = out.row(i);
        for (size_t k = 0; k < a.cols; ++k) {
            const Real aik = arow[k];
            if (aik == 0.0) continue;
            const Real* brow = b.row(k);
            for (size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
        }
    }
}

inline Mat matmul(const Mat& a, const Mat& b) {
    Mat out;
    matmul_acc(a, b, out, false);
    return out;
}

// out += a^T * b
inline void matmul_at_b_acc(const Mat& a, const Mat& b, Mat& out) {
    require(a.rows == b.rows && out.rows == a.cols && out.cols == b.cols,
            "matmul_at_b: shape mismatch");
    for (size_t k = 0; k < a.rows; ++k) {
        const Real* arow = a.row(k);
        const Real* brow = b.row(k);
        for (size_t i = 0; i < a.cols; ++i) {
            const Real aki = arow[i];
            if (aki == 0.0) continue;
            Real* orow = out.row(i);
            for (size_t j = 0; j < b.cols; ++j) orow[j] += aki * brow[j];
        }
    }
}

// out += a * b^T
inline void matmul_a_bt_acc(const Mat& a, const Mat& b, Mat& out) {
    require(a.cols == b.cols && out.rows == a.rows && out.cols == b.rows,
            "matmul_a_bt: shape mismatch");
    for (size_t i = 0; i < a.rows; ++i) {
        const Real* arow = a.row(i);
        Real* orow = out.row(i);
        for (size_t j = 0; j < b.rows; ++j) {
            const Real* brow = b.row(j);
            Real acc = 0.0;
            for (size_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
            orow[j] += acc;
        }
    }
}

// ---------------------------------------------------------------------------
// Autodiff tape

// Optional NaN/Inf detection on every freshly created node value.
inline bool& finite_checks() {
    static bool enabled = false;
    return enabled;
}

struct Node {
    Mat value;
    Mat grad;  // allocated on first use
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // pulls grad, pushes into parents

    Mat& ensure_grad() {
        if (grad.empty()) grad = Mat(value.rows, value.cols);
        return grad;
    }
};

using Var = std::shared_ptr<Node>;

inline Var make_node(Mat value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (finite_checks())
        require(all_finite(n->value.v), "neural: non-finite value produced by an op");
    return n;
}

inline Var constant(Mat m) { return make_node(std::move(m), {}, nullptr); }

inline Var make_param(Mat m) {
    auto n = constant(std::move(m));
    n->requires_grad = true;
    return n;
}

// Reverse topological sweep from a scalar loss.
inline void backward(const Var& loss) {
    require(loss->value.rows == 1 && loss->value.cols == 1,
            "backward: loss must be a scalar");
    // iterative DFS postorder over parents
    std::vector<Node*> order;
    std::vector<std::pair<Node*, size_t>> stack;
    std::map<Node*, int> seen;  // 0 in progress, 1 done
    stack.push_back({loss.get(), 0});
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx == 0 && seen.count(node)) {
            stack.pop_back();
            continue;
        }
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx].get();
            ++idx;
            if (!seen.count(p)) stack.push_back({p, 0});
        } else {
            if (!seen.count(node)) {
                seen[node] = 1;
                order.push_back(node);
            }
            stack.pop_back();
        }
    }
    loss->ensure_grad().v[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->requires_grad && n->backprop && !n->grad.empty()) n->backprop(*n);
    }
}

// ---------------------------------------------------------------------------
// Ops

inline Var add(const Var& a, const Var& b) {
    require(a->value.rows == b->value.rows && a->value.cols == b->value.cols,
            "add: shape mismatch");
    Mat out = a->value;
    for (size_t i = 0; i < out.size(); ++i) out.v[i] += b->value.v[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            auto& g = a->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g.v[i] += n.grad.v[i];
        }
        if (b->requires_grad) {
            auto& g = b->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g.v[i] += n.grad.v[i];
        }
    });
}

inline Var sub(const Var& a, const Var& b) {
    require(a->value.rows == b->value.rows && a->value.cols == b->value.cols,
            "sub: shape mismatch");
    Mat out = a->value;
    for (size_t i = 0; i < out.size(); ++i) out.v[i] -= b->value.v[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            auto& g = a->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g.v[i] += n.grad.v[i];
        }
        if (b->requires_grad) {
            auto& g = b->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g.v[i] -= n.grad.v[i];
        }
    });
}

inline Var mul(const Var& a, const Var& b) {
    require(a->value.rows == b->value.rows && a->value.cols == b->value.cols,
            "mul: shape mismatch");
    Mat out = a->value;
    for (size_t i = 0; i < out.size(); ++i) out.v[i] *= b->value.v[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            auto& g = a->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g.v[i] += n.grad.v[i] * b->value.v[i];
        }
        if (b->requires_grad) {
            auto& g = b->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g.v[i] += n.grad.v[i] * a->value.v[i];
        }
    });
}

inline Var scale(const Var& a, Real s) {
    Mat out = a->value;
    for (auto& x : out.v) x *= s;
    return make_node(std::move(out), {a}, [a, s](Node& n) {
        if (!a->requires_grad) return;
        auto& g = a->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g.v[i] += s * n.grad.v[i];
    });
}

inline Var matmul(const Var& a, const Var& b) {
    Mat out = matmul(a->value, b->value);
    return make_node(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) matmul_a_bt_acc(n.grad, b->value, a->ensure_grad());
        if (b->requires_grad) matmul_at_b_acc(a->value, n.grad, b->ensure_grad());
    });
}

// bias [1,C] added to every row
inline Var add_rowvec(const Var& a, const Var& bias) {
    require(bias->value.rows == 1 && bias->value.cols == a->value.cols,
            "add_rowvec: bias shape mismatch");
    Mat out = a->value;
    for (size_t r = 0; r < out.rows; ++r)
        for (size_t c = 0; c < out.cols; ++c) out.at(r, c) += bias->value.v[c];
    return make_node(std::move(out), {a, bias}, [a, bias](Node& n) {
        if (a->requires_grad) {
            auto& g = a->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g.v[i] += n.grad.v[i];
        }
        if (bias->requires_grad) {
            auto& g = bias->ensure_grad();
            for (size_t r = 0; r < n.grad.rows; ++r)
                for (size_t c = 0; c < n.grad.cols; ++c) g.v[c] += n.grad.at(r, c);
        }
    });
}

inline Var sigmoid(const Var& a) {
    Mat out = a->value;
    for (auto& x : out.v) x = 1.0 / (1.0 + std::exp(-x));
    auto n = make_node(std::move(out), {a}, nullptr);
    std::weak_ptr<Node> self = n;
    n->backprop = [a, self](Node& nn) {
        if (!a->requires_grad) return;
        auto& g = a->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) {
            const Real y = nn.value.v[i];
            g.v[i] += nn.grad.v[i] * y * (1.0 - y);
        }
    };
    return n;
}

// log(max(floor, x)); zero gradient below the floor
inline Var log_floor(const Var& a, Real floor_val) {
    Mat out = a->value;
    for (auto& x : out.v) x = std::log(std::max(floor_val, x));
    return make_node(std::move(out), {a}, [a, floor_val](Node& n) {
        if (!a->requires_grad) return;
        auto& g = a->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) {
            const Real x = a->value.v[i];
            if (x > floor_val) g.v[i] += n.grad.v[i] / x;
        }
    });
}

inline Var log_softmax_rows(const Var& a) {
    Mat out = a->value;
    for (size_t r = 0; r < out.rows; ++r) {
        Real* row = out.row(r);
        Real mx = row[0];
        for (size_t c = 1; c < out.cols; ++c) mx = std::max(mx, row[c]);
        Real lse = 0.0;
        for (size_t c = 0; c < out.cols; ++c) lse += std::exp(row[c] - mx);
        lse = mx + std::log(lse);
        for (size_t c = 0; c < out.cols; ++c) row[c] -= lse;
    }
    auto n = make_node(std::move(out), {a}, nullptr);
    n->backprop = [a, raw = n.get()](Node& nn) {
        if (!a->requires_grad) return;
        (void)raw;
        auto& g = a->ensure_grad();
        for (size_t r = 0; r < nn.grad.rows; ++r) {
            Real rowsum = 0.0;
            for (size_t c = 0; c < nn.grad.cols; ++c) rowsum += nn.grad.at(r, c);
            for (size_t c = 0; c < nn.grad.cols; ++c)
                g.at(r, c) += nn.grad.at(r, c) - std::exp(nn.value.at(r, c)) * rowsum;
        }
    };
    return n;
}

// Inverted dropout: active only in train mode, identity otherwise.
inline Var dropout(const Var& a, Real p, Rng& rng, bool train) {
    if (!train || p <= 0.0) return a;
    require(p < 1.0, "dropout: rate must be < 1");
    auto mask = std::make_shared<Mat>(a->value.rows, a->value.cols);
    const Real keep = 1.0 - p;
    Mat out = a->value;
    for (size_t i = 0; i < out.size(); ++i) {
        const Real m = rng.next_real() < p ? 0.0 : 1.0 / keep;
        mask->v[i] = m;
        out.v[i] *= m;
    }
    return make_node(std::move(out), {a}, [a, mask](Node& n) {
        if (!a->requires_grad) return;
        auto& g = a->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g.v[i] += n.grad.v[i] * mask->v[i];
    });
}

inline Var concat_cols(const Var& a, const Var& b) {
    require(a->value.rows == b->value.rows, "concat_cols: row mismatch");
    Mat out(a->value.rows, a->value.cols + b->value.cols);
    for (size_t r = 0; r < out.rows; ++r) {
        std::memcpy(out.row(r), a->value.row(r), a->value.cols * sizeof(Real));
        std::memcpy(out.row(r) + a->value.cols, b->value.row(r), b->value.cols * sizeof(Real));
    }
    return make_node(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            auto& g = a->ensure_grad();
            for (size_t r = 0; r < g.rows; ++r)
                for (size_t c = 0; c < g.cols; ++c) g.at(r, c) += n.grad.at(r, c);
        }
        if (b->requires_grad) {
            auto& g = b->ensure_grad();
            for (size_t r = 0; r < g.rows; ++r)
                for (size_t c = 0; c < g.cols; ++c) g.at(r, c) += n.grad.at(r, a->value.cols + c);
        }
    });
}

inline Var concat_rows(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_rows: empty list");
    const size_t cols = parts[0]->value.cols;
    size_t rows = 0;
    for (const auto& p : parts) {
        require(p->value.cols == cols, "concat_rows: column mismatch");
        rows += p->value.rows;
    }
    Mat out(rows, cols);
    size_t r0 = 0;
    for (const auto& p : parts) {
        std::memcpy(out.row(r0), p->value.v.data(), p->value.size() * sizeof(Real));
        r0 += p->value.rows;
    }
    return make_node(std::move(out), parts, [parts](Node& n) {
        size_t r0 = 0;
        for (const auto& p : parts) {
            if (p->requires_grad) {
                auto& g = p->ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) g.v[i] += n.grad.v[r0 * n.grad.cols + i];
            }
            r0 += p->value.rows;
        }
    });
}

inline Var slice_rows(const Var& a, size_t r0, size_t r1) {
    require(r0 < r1 && r1 <= a->value.rows, "slice_rows: bad range");
    Mat out(r1 - r0, a->value.cols);
    std::memcpy(out.v.data(), a->value.row(r0), out.size() * sizeof(Real));
    return make_node(std::move(out), {a}, [a, r0](Node& n) {
        if (!a->requires_grad) return;
        auto& g = a->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) g.v[r0 * g.cols + i] += n.grad.v[i];
    });
}

inline Var reshape(const Var& a, size_t rows, size_t cols) {
    require(rows * cols == a->value.size(), "reshape: element count mismatch");
    Mat out = a->value;
    out.rows = rows;
    out.cols = cols;
    return make_node(std::move(out), {a}, [a](Node& n) {
        if (!a->requires_grad) return;
        auto& g = a->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g.v[i] += n.grad.v[i];
    });
}

inline Var sum_all(const Var& a) {
    Real s = 0.0;
    for (Real x : a->value.v) s += x;
    return make_node(Mat::scalar(s), {a}, [a](Node& n) {
        if (!a->requires_grad) return;
        auto& g = a->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g.v[i] += n.grad.v[0];
    });
}

inline Var mean_all(const Var& a) {
    return scale(sum_all(a), 1.0 / static_cast<Real>(a->value.size()));
}

// Mean absolute error against a constant target over entries where
// mask > 0. A fully-masked target contributes 0.
inline Var l1_loss_masked(const Var& pred, const Mat& target, const Mat& mask,
                          size_t* fully_masked_counter = nullptr) {
    require(pred->value.rows == target.rows && pred->value.cols == target.cols,
            "l1_loss: shape mismatch");
    require(mask.rows == target.rows && mask.cols == target.cols, "l1_loss: mask shape mismatch");
    Real count = 0.0, acc = 0.0;
    for (size_t i = 0; i < mask.size(); ++i) {
        if (mask.v[i] > 0) {
            acc += std::abs(pred->value.v[i] - target.v[i]);
            count += 1.0;
        }
    }
    if (count == 0.0) {
        if (fully_masked_counter) ++*fully_masked_counter;
        return make_node(Mat::scalar(0.0), {pred}, [](Node&) {});
    }
    const Real inv = 1.0 / count;
    auto target_copy = std::make_shared<Mat>(target);
    auto mask_copy = std::make_shared<Mat>(mask);
    return make_node(Mat::scalar(acc * inv), {pred}, [pred, target_copy, mask_copy, inv](Node& n) {
        if (!pred->requires_grad) return;
        auto& g = pred->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) {
            if (mask_copy->v[i] <= 0) continue;
            const Real d = pred->value.v[i] - target_copy->v[i];
            const Real s = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
            g.v[i] += n.grad.v[0] * inv * s;
        }
    });
}

inline Var l1_loss(const Var& pred, const Mat& target) {
    return l1_loss_masked(pred, target, Mat(target.rows, target.cols, 1.0));
}

// ---------------------------------------------------------------------------
// Fused LSTM / GRU sequence nodes (BPTT runs inside the node)

struct LstmDirParams {
    Var wx;  // [D, 4H], gate order i f g o
    Var wh;  // [H, 4H]
    Var b;   // [1, 4H]
};

inline Var lstm_seq(const Var& x, const LstmDirParams& p, bool reverse) {
    const size_t T = x->value.rows;
    const size_t H = p.wh->value.rows;
    require(p.wx->value.rows == x->value.cols && p.wx->value.cols == 4 * H &&
                p.wh->value.cols == 4 * H && p.b->value.cols == 4 * H,
            "lstm_seq: parameter shape mismatch");

    auto gates = std::make_shared<Mat>(T, 4 * H);  // post-activation
    auto cells = std::make_shared<Mat>(T, H);
    Mat y(T, H);

    Mat xw = matmul(x->value, p.wx->value);
    for (size_t r = 0; r < T; ++r)
        for (size_t c = 0; c < 4 * H; ++c) xw.at(r, c) += p.b->value.v[c];

    std::vector<Real> gate_pre(4 * H);
    for (size_t s = 0; s < T; ++s) {
        const size_t t = reverse ? T - 1 - s : s;
        const Real* h_prev = s == 0 ? nullptr : y.row(reverse ? t + 1 : t - 1);
        std::memcpy(gate_pre.data(), xw.row(t), 4 * H * sizeof(Real));
        if (h_prev)
            for (size_t k = 0; k < H; ++k) {
                const Real hk = h_prev[k];
                if (hk == 0.0) continue;
                const Real* wrow = p.wh->value.row(k);
                for (size_t c = 0; c < 4 * H; ++c) gate_pre[c] += hk * wrow[c];
            }
        Real* grow = gates->row(t);
        Real* crow = cells->row(t);
        const Real* c_prev = s == 0 ? nullptr : cells->row(reverse ? t + 1 : t - 1);
        for (size_t u = 0; u < H; ++u) {
            const Real i = 1.0 / (1.0 + std::exp(-gate_pre[u]));
            const Real f = 1.0 / (1.0 + std::exp(-gate_pre[H + u]));
            const Real gg = std::tanh(gate_pre[2 * H + u]);
            const Real o = 1.0 / (1.0 + std::exp(-gate_pre[3 * H + u]));
            grow[u] = i;
            grow[H + u] = f;
            grow[2 * H + u] = gg;
            grow[3 * H + u] = o;
            const Real c = (c_prev ? f * c_prev[u] : 0.0) + i * gg;
            crow[u] = c;
            y.row(t)[u] = o * std::tanh(c);
        }
    }

    auto n = make_node(std::move(y), {x, p.wx, p.wh, p.b}, nullptr);
    n->backprop = [x, p, gates, cells, reverse, T, H](Node& nn) {
        Mat dgate_pre(T, 4 * H);
        std::vector<Real> dh(H, 0.0), dc(H, 0.0);
        for (size_t s = T; s-- > 0;) {
            // walk in reverse emission order
            const size_t t = reverse ? T - 1 - s : s;
            const Real* grow = gates->row(t);
            const Real* crow = cells->row(t);
            const Real* c_prev = s == 0 ? nullptr : cells->row(reverse ? t + 1 : t - 1);
            Real* dgp = dgate_pre.row(t);
            for (size_t u = 0; u < H; ++u) {
                const Real dy = nn.grad.at(t, u) + dh[u];
                const Real i = grow[u], f = grow[H + u], gg = grow[2 * H + u], o = grow[3 * H + u];
                const Real tc = std::tanh(crow[u]);
                const Real dcu = dy * o * (1.0 - tc * tc) + dc[u];
                dgp[u] = dcu * gg * i * (1.0 - i);
                dgp[H + u] = c_prev ? dcu * c_prev[u] * f * (1.0 - f) : 0.0;
                dgp[2 * H + u] = dcu * i * (1.0 - gg * gg);
                dgp[3 * H + u] = dy * tc * o * (1.0 - o);
                dc[u] = dcu * f;  // to previous step
                dh[u] = 0.0;
            }
            // dh_prev += dgate_pre[t] * wh^T
            if (s > 0) {
                for (size_t k = 0; k < H; ++k) {
                    const Real* wrow = p.wh->value.row(k);
                    Real acc = 0.0;
                    for (size_t c = 0; c < 4 * H; ++c) acc += dgp[c] * wrow[c];
                    dh[k] = acc;
                }
            }
        }
        if (x->requires_grad) matmul_a_bt_acc(dgate_pre, p.wx->value, x->ensure_grad());
        if (p.wx->requires_grad) matmul_at_b_acc(x->value, dgate_pre, p.wx->ensure_grad());
        if (p.wh->requires_grad) {
            auto& g = p.wh->ensure_grad();
            for (size_t s = 1; s < T; ++s) {
                const size_t t = reverse ? T - 1 - s : s;
                const size_t t_prev = reverse ? t + 1 : t - 1;
                const Real* hp = nn.value.row(t_prev);
                const Real* dgp = dgate_pre.row(t);
                for (size_t k = 0; k < H; ++k) {
                    const Real hk = hp[k];
                    if (hk == 0.0) continue;
                    Real* grow = g.row(k);
                    for (size_t c = 0; c < 4 * H; ++c) grow[c] += hk * dgp[c];
                }
            }
        }
        if (p.b->requires_grad) {
            auto& g = p.b->ensure_grad();
            for (size_t t = 0; t < T; ++t)
                for (size_t c = 0; c < 4 * H; ++c) g.v[c] += dgate_pre.at(t, c);
        }
    };
    return n;
}

inline Var blstm(const Var& x, const LstmDirParams& fwd, const LstmDirParams& bwd) {
    return concat_cols(lstm_seq(x, fwd, false), lstm_seq(x, bwd, true));
}

struct GruParams {
    Var wx;  // [D, 3H], gate order r z n
    Var wh;  // [H, 3H]
    Var bx;  // [1, 3H]
    Var bh;  // [1, 3H] hidden-side bias (the n-gate part sits inside r * (.))
};

// Standard GRU:
//   r = sig(x Wr + br_x + h Whr + br_h)
//   z = sig(x Wz + bz_x + h Whz + bz_h)
//   n = tanh(x Wn + bn_x + r * (h Whn + bn_h))
//   h' = (1 - z) * n + z * h
// Returns the output sequence [T,H]; the initial state h0 [1,H] is a
// differentiable input, so state can be threaded across chunk calls.
inline Var gru_seq(const Var& x, const Var& h0, const GruParams& p) {
    const size_t T = x->value.rows;
    const size_t H = p.wh->value.rows;
    require(p.wx->value.rows == x->value.cols && p.wx->value.cols == 3 * H &&
                p.wh->value.cols == 3 * H && p.bx->value.cols == 3 * H &&
                p.bh->value.cols == 3 * H && h0->value.rows == 1 && h0->value.cols == H,
            "gru_seq: parameter shape mismatch");

    auto gates = std::make_shared<Mat>(T, 3 * H);  // r, z, n post-activation
    auto hwn = std::make_shared<Mat>(T, H);        // h_prev Whn + bn_h, needed for backward
    Mat y(T, H);

    Mat xw = matmul(x->value, p.wx->value);
    for (size_t r = 0; r < T; ++r)
        for (size_t c = 0; c < 3 * H; ++c) xw.at(r, c) += p.bx->value.v[c];

    std::vector<Real> hw(3 * H);
    for (size_t t = 0; t < T; ++t) {
        const Real* h_prev = t == 0 ? h0->value.row(0) : y.row(t - 1);
        std::memcpy(hw.data(), p.bh->value.row(0), 3 * H * sizeof(Real));
        for (size_t k = 0; k < H; ++k) {
            const Real hk = h_prev[k];
            if (hk == 0.0) continue;
            const Real* wrow = p.wh->value.row(k);
            for (size_t c = 0; c < 3 * H; ++c) hw[c] += hk * wrow[c];
        }
        Real* grow = gates->row(t);
        Real* hwrow = hwn->row(t);
        const Real* xrow = xw.row(t);
        for (size_t u = 0; u < H; ++u) {
            const Real r = 1.0 / (1.0 + std::exp(-(xrow[u] + hw[u])));
            const Real z = 1.0 / (1.0 + std::exp(-(xrow[H + u] + hw[H + u])));
            const Real n_pre = xrow[2 * H + u] + r * hw[2 * H + u];
            const Real nn = std::tanh(n_pre);
            grow[u] = r;
            grow[H + u] = z;
            grow[2 * H + u] = nn;
            hwrow[u] = hw[2 * H + u];
            y.row(t)[u] = (1.0 - z) * nn + z * h_prev[u];
        }
    }

    auto n = make_node(std::move(y), {x, h0, p.wx, p.wh, p.bx, p.bh}, nullptr);
    n->backprop = [x, h0, p, gates, hwn, T, H](Node& nn) {
        Mat dgate_pre(T, 3 * H);  // d wrt (r_pre, z_pre, n_pre)
        Mat dhw(T, 3 * H);        // d wrt (h_prev Wh + bh) rows
        std::vector<Real> dh(H, 0.0);
        for (size_t t = T; t-- > 0;) {
            const Real* h_prev = t == 0 ? h0->value.row(0) : nn.value.row(t - 1);
            const Real* grow = gates->row(t);
            const Real* hwrow = hwn->row(t);
            Real* dgp = dgate_pre.row(t);
            Real* dhwrow = dhw.row(t);
            std::vector<Real> dh_next(H, 0.0);
            for (size_t u = 0; u < H; ++u) {
                const Real dy = nn.grad.at(t, u) + dh[u];
                const Real r = grow[u], z = grow[H + u], nv = grow[2 * H + u];
                const Real dz = dy * (h_prev[u] - nv);
                const Real dn = dy * (1.0 - z);
                dh_next[u] += dy * z;
                const Real dn_pre = dn * (1.0 - nv * nv);
                const Real dr = dn_pre * hwrow[u];
                dgp[2 * H + u] = dn_pre;
                dhwrow[2 * H + u] = dn_pre * r;
                dgp[u] = dr * r * (1.0 - r);
                dgp[H + u] = dz * z * (1.0 - z);
                dhwrow[u] = dgp[u];
                dhwrow[H + u] = dgp[H + u];
            }
            // dh_prev += dhw_row * wh^T
            for (size_t k = 0; k < H; ++k) {
                const Real* wrow = p.wh->value.row(k);
                Real acc = 0.0;
                for (size_t c = 0; c < 3 * H; ++c) acc += dhwrow[c] * wrow[c];
                dh_next[k] += acc;
            }
            dh = std::move(dh_next);
        }
        if (x->requires_grad) matmul_a_bt_acc(dgate_pre, p.wx->value, x->ensure_grad());
        if (h0->requires_grad) {
            auto& g = h0->ensure_grad();
            for (size_t u = 0; u < H; ++u) g.v[u] += dh[u];
        }
        if (p.wx->requires_grad) matmul_at_b_acc(x->value, dgate_pre, p.wx->ensure_grad());
        if (p.wh->requires_grad) {
            auto& g = p.wh->ensure_grad();
            for (size_t t = 0; t < T; ++t) {
                const Real* hp = t == 0 ? h0->value.row(0) : nn.value.row(t - 1);
                const Real* dhwrow = dhw.row(t);
                for (size_t k = 0; k < H; ++k) {
                    const Real hk = hp[k];
                    if (hk == 0.0) continue;
                    Real* grow = g.row(k);
                    for (size_t c = 0; c < 3 * H; ++c) grow[c] += hk * dhwrow[c];
                }
            }
        }
        if (p.bx->requires_grad) {
            auto& g = p.bx->ensure_grad();
            for (size_t t = 0; t < T; ++t)
                for (size_t c = 0; c < 3 * H; ++c) g.v[c] += dgate_pre.at(t, c);
        }
        if (p.bh->requires_grad) {
            auto& g = p.bh->ensure_grad();
            for (size_t t = 0; t < T; ++t)
                for (size_t c = 0; c < 3 * H; ++c) g.v[c] += dhw.at(t, c);
        }
    };
    return n;
}

// ---------------------------------------------------------------------------
// Named parameter set

struct ModelParams {
    std::map<std::string, Var> map;  // ordered: deterministic iteration
    std::string arch_desc;

    uint64_t arch_hash() const { return hash_str(arch_desc); }

    Var add(const std::string& name, Mat init) {
        require(!map.count(name), "ModelParams: duplicate parameter " + name);
        auto v = make_param(std::move(init));
        map[name] = v;
        return v;
    }

    const Var& at(const std::string& name) const {
        auto it = map.find(name);
        require(it != map.end(), "ModelParams: missing parameter " + name);
        return it->second;
    }

    bool has(const std::string& name) const { return map.count(name) != 0; }

    void zero_grad() {
        for (auto& [name, v] : map) {
            (void)name;
            if (!v->grad.empty()) std::fill(v->grad.v.begin(), v->grad.v.end(), 0.0);
        }
    }

    size_t num_values() const {
        size_t n = 0;
        for (const auto& [name, v] : map) {
            (void)name;
            n += v->value.size();
        }
        return n;
    }
};

struct Linear {
    Var w, b;

    static void init(ModelParams& p, const std::string& prefix, size_t in, size_t out, Rng& rng) {
        const Real bound = 1.0 / std::sqrt(static_cast<Real>(in));
        p.add(prefix + ".w", uniform_init(in, out, bound, rng));
        p.add(prefix + ".b", Mat(1, out));
    }

    Linear(const ModelParams& p, const std::string& prefix)
        : w(p.at(prefix + ".w")), b(p.at(prefix + ".b")) {}

    Var forward(const Var& x) const { return add_rowvec(matmul(x, w), b); }
};

inline void init_lstm_dir(ModelParams& p, const std::string& prefix, size_t in, size_t hidden,
                          Rng& rng) {
    const Real bound = 1.0 / std::sqrt(static_cast<Real>(hidden));
    p.add(prefix + ".wx", uniform_init(in, 4 * hidden, bound, rng));
    p.add(prefix + ".wh", uniform_init(hidden, 4 * hidden, bound, rng));
    Mat b(1, 4 * hidden);
    for (size_t u = 0; u < hidden; ++u) b.v[hidden + u] = 1.0;  // forget-gate bias
    p.add(prefix + ".b", std::move(b));
}

inline LstmDirParams lstm_dir(const ModelParams& p, const std::string& prefix) {
    return {p.at(prefix + ".wx"), p.at(prefix + ".wh"), p.at(prefix + ".b")};
}

inline void init_gru_layer(ModelParams& p, const std::string& prefix, size_t in, size_t hidden,
                           Rng& rng) {
    const Real bound = 1.0 / std::sqrt(static_cast<Real>(hidden));
    p.add(prefix + ".wx", uniform_init(in, 3 * hidden, bound, rng));
    p.add(prefix + ".wh", uniform_init(hidden, 3 * hidden, bound, rng));
    p.add(prefix + ".bx", Mat(1, 3 * hidden));
    p.add(prefix + ".bh", Mat(1, 3 * hidden));
}

inline GruParams gru_layer(const ModelParams& p, const std::string& prefix) {
    return {p.at(prefix + ".wx"), p.at(prefix + ".wh"), p.at(prefix + ".bx"),
            p.at(prefix + ".bh")};
}

// ---------------------------------------------------------------------------
// Adam with global-norm gradient clipping

struct AdamConfig {
    Real lr = 1e-3;
    Real beta1 = 0.9;
    Real beta2 = 0.999;
    Real eps = 1e-8;
};

struct AdamState {
    long step = 0;
    std::map<std::string, Mat> m, v;
};

inline void adam_init(AdamState& st, const ModelParams& params) {
    st.step = 0;
    st.m.clear();
    st.v.clear();
    for (const auto& [name, p] : params.map) {
        st.m[name] = Mat(p->value.rows, p->value.cols);
        st.v[name] = Mat(p->value.rows, p->value.cols);
    }
}

// Rescales gradients in place when the global L2 norm exceeds max_norm.
// Returns the pre-clip norm.
inline Real clip_grad_norm(ModelParams& params, Real max_norm) {
    Real sq = 0.0;
    for (const auto& [name, p] : params.map) {
        (void)name;
        if (p->grad.empty()) continue;
        for (Real g : p->grad.v) sq += g * g;
    }
    const Real norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const Real s = max_norm / norm;
        for (auto& [name, p] : params.map) {
            (void)name;
            if (p->grad.empty()) continue;
            for (Real& g : p->grad.v) g *= s;
        }
    }
    return norm;
}

inline void adam_step(ModelParams& params, AdamState& st, const AdamConfig& cfg) {
    st.step += 1;
    const Real bc1 = 1.0 - std::pow(cfg.beta1, static_cast<Real>(st.step));
    const Real bc2 = 1.0 - std::pow(cfg.beta2, static_cast<Real>(st.step));
    for (auto& [name, p] : params.map) {
        auto& m = st.m.at(name);
        auto& v = st.v.at(name);
        require(m.rows == p->value.rows && m.cols == p->value.cols,
                "adam_step: state shape mismatch for " + name);
        for (size_t i = 0; i < p->value.size(); ++i) {
            const Real gi = p->grad.empty() ? 0.0 : p->grad.v[i];
            m.v[i] = cfg.beta1 * m.v[i] + (1.0 - cfg.beta1) * gi;
            v.v[i] = cfg.beta2 * v.v[i] + (1.0 - cfg.beta2) * gi * gi;
            const Real mhat = m.v[i] / bc1;
            const Real vhat = v.v[i] / bc2;
            p->value.v[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoints: magic, version, architecture hash, then length-prefixed
// (name, shape, raw little-endian doubles) records.

constexpr char kCheckpointMagic[8] = {'C', 'S', 'D', 'C', 'K', 'P', 'T', '\0'};
constexpr uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const ModelParams& params, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    require(os.good(), "save_checkpoint: cannot open " + path);
    os.write(kCheckpointMagic, 8);
    const uint32_t version = kCheckpointVersion;
    os.write(reinterpret_cast<const char*>(&version), 4);
    const uint64_t hash = params.arch_hash();
    os.write(reinterpret_cast<const char*>(&hash), 8);
    const uint32_t count = static_cast<uint32_t>(params.map.size());
    os.write(reinterpret_cast<const char*>(&count), 4);
    for (const auto& [name, p] : params.map) {
        const uint32_t len = static_cast<uint32_t>(name.size());
        os.write(reinterpret_cast<const char*>(&len), 4);
        os.write(name.data(), len);
        const uint32_t rows = static_cast<uint32_t>(p->value.rows);
        const uint32_t cols = static_cast<uint32_t>(p->value.cols);
        os.write(reinterpret_cast<const char*>(&rows), 4);
        os.write(reinterpret_cast<const char*>(&cols), 4);
        os.write(reinterpret_cast<const char*>(p->value.v.data()),
                 static_cast<std::streamsize>(p->value.size() * sizeof(Real)));
    }
    require(os.good(), "save_checkpoint: write failed for " + path);
}

// arch_desc of the caller's architecture; its hash must match the file.
inline ModelParams load_checkpoint(const std::string& path, const std::string& arch_desc) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), "load_checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    require(is.good() && std::memcmp(magic, kCheckpointMagic, 8) == 0,
            "load_checkpoint: bad magic in " + path);
    uint32_t version = 0;
    is.read(reinterpret_cast<char*>(&version), 4);
    require(version == kCheckpointVersion, "load_checkpoint: unsupported version in " + path);
    uint64_t hash = 0;
    is.read(reinterpret_cast<char*>(&hash), 8);
    require(hash == hash_str(arch_desc),
            "load_checkpoint: architecture hash mismatch for " + path);
    uint32_t count = 0;
    is.read(reinterpret_cast<char*>(&count), 4);

    ModelParams params;
    params.arch_desc = arch_desc;
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t len = 0, rows = 0, cols = 0;
        is.read(reinterpret_cast<char*>(&len), 4);
        std::string name(len, '\0');
        is.read(name.data(), len);
        is.read(reinterpret_cast<char*>(&rows), 4);
        is.read(reinterpret_cast<char*>(&cols), 4);
        Mat m(rows, cols);
        is.read(reinterpret_cast<char*>(m.v.data()),
                static_cast<std::streamsize>(m.size() * sizeof(Real)));
        require(is.good(), "load_checkpoint: truncated record in " + path);
        params.add(name, std::move(m));
    }
    return params;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking (central differences)

struct GradCheckResult {
    bool pass = true;
    Real max_rel_err = 0.0;
    std::string worst;
};

// loss_fn must rebuild the graph from current parameter values and return the
// scalar loss node. Checks every element of every listed parameter.
inline GradCheckResult finite_diff_check(ModelParams& params,
                                         const std::vector<std::string>& names,
                                         const std::function<Var()>& loss_fn, Real eps = 1e-5,
                                         Real tol = 1e-3) {
    params.zero_grad();
    auto loss = loss_fn();
    backward(loss);

    std::map<std::string, Mat> analytic;
    for (const auto& name : names) {
        const auto& p = params.at(name);
        analytic[name] = p->grad.empty() ? Mat(p->value.rows, p->value.cols) : p->grad;
    }

    GradCheckResult res;
    for (const auto& name : names) {
        auto& p = params.map.at(name);
        for (size_t i = 0; i < p->value.size(); ++i) {
            const Real saved = p->value.v[i];
            p->value.v[i] = saved + eps;
            const Real lp = loss_fn()->value.v[0];
            p->value.v[i] = saved - eps;
            const Real lm = loss_fn()->value.v[0];
            p->value.v[i] = saved;
            const Real fd = (lp - lm) / (2.0 * eps);
            const Real an = analytic[name].v[i];
            const Real denom = std::max(std::abs(an), std::abs(fd));
            const Real abs_err = std::abs(an - fd);
            const Real rel = denom > 0 ? abs_err / denom : 0.0;
            const bool ok = abs_err <= tol * denom || abs_err <= 1e-8;
            if (rel > res.max_rel_err && !(abs_err <= 1e-8)) {
                res.max_rel_err = rel;
                res.worst = name + "[" + std::to_string(i) + "]";
            }
            if (!ok) res.pass = false;
        }
    }
    params.zero_grad();
    return res;
}

}  // namespace cuside::neural
