#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "tracemark/tensor.hpp"

namespace tracemark::ad {

using MatrixRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily on first accumulation
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;
    std::uint64_t order = 0;

    Tensor& grad_buf() {
        if (grad.numel() == 0) grad = Tensor(value.shape(), 0.0f);
        return grad;
    }
};

inline std::uint64_t next_order() {
    static std::uint64_t counter = 0;
    return ++counter;
}

inline Var make_node(Tensor value, std::vector<Var> parents,
                     std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    n->backward_fn = n->requires_grad ? std::move(backward_fn) : nullptr;
    n->order = next_order();
    return n;
}

inline Var constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    n->order = next_order();
    return n;
}

inline Var param(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    n->requires_grad = true;
    n->order = next_order();
    return n;
}

// Reverse sweep from a scalar root. Gradients accumulate into node.grad.
inline void backward(const Var& root) {
    if (root->value.numel() != 1)
        throw std::invalid_argument("ad::backward: root must be scalar");
    if (!root->requires_grad) return;

    std::vector<Var> topo;
    std::unordered_set<Node*> seen;
    std::vector<Var> stack{root};
    while (!stack.empty()) {
        Var v = stack.back();
        stack.pop_back();
        if (!v->requires_grad || seen.count(v.get())) continue;
        seen.insert(v.get());
        topo.push_back(v);
        for (const auto& p : v->parents) stack.push_back(p);
    }
    std::sort(topo.begin(), topo.end(),
              [](const Var& a, const Var& b) { return a->order > b->order; });

    root->grad_buf()[0] = 1.0f;
    for (const auto& v : topo)
        if (v->backward_fn && v->grad.numel() != 0) v->backward_fn(*v);
}

// ----------------------------------------------------------------------------
// Elementwise ops

inline Var add(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "ad::add");
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            Tensor& g = a->grad_buf();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
        }
        if (b->requires_grad) {
            Tensor& g = b->grad_buf();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
        }
    });
}

// (N,C,H,W) + (C,H,W) with the second operand broadcast over the batch
inline Var add_chw(const Var& a, const Var& b) {
    if (a->value.shape().size() != 4 || b->value.shape().size() != 3 ||
        a->value.dim(1) != b->value.dim(0) || a->value.dim(2) != b->value.dim(1) ||
        a->value.dim(3) != b->value.dim(2))
        throw std::invalid_argument("ad::add_chw: need (N,C,H,W) + (C,H,W)");
    const std::int64_t n = a->value.dim(0), m = b->value.numel();
    Tensor out = a->value;
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < m; ++j) out[i * m + j] += b->value[j];
    return make_node(std::move(out), {a, b}, [a, b, n, m](Node& nd) {
        if (a->requires_grad) {
            Tensor& g = a->grad_buf();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += nd.grad[i];
        }
        if (b->requires_grad) {
            Tensor& g = b->grad_buf();
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < m; ++j) g[j] += nd.grad[i * m + j];
        }
    });
}

// reorder the batch dimension of an (N,...) tensor; perm need not be a
// bijection, backward scatter-adds into the source rows
inline Var permute_batch(const Var& a, std::vector<std::int64_t> perm) {
    const std::int64_t n = a->value.dim(0);
    if (static_cast<std::int64_t>(perm.size()) != n)
        throw std::invalid_argument("ad::permute_batch: perm size != batch");
    for (std::int64_t p : perm)
        if (p < 0 || p >= n) throw std::invalid_argument("ad::permute_batch: index out of range");
    const std::int64_t m = a->value.numel() / n;
    Tensor out = a->value;
    for (std::int64_t i = 0; i < n; ++i)
        std::copy_n(a->value.data() + perm[static_cast<std::size_t>(i)] * m, m,
                    out.data() + i * m);
    return make_node(std::move(out), {a}, [a, perm = std::move(perm), n, m](Node& nd) {
        if (!a->requires_grad) return;
        Tensor& g = a->grad_buf();
        for (std::int64_t i = 0; i < n; ++i) {
            const float* src = nd.grad.data() + i * m;
            float* dst = g.data() + perm[static_cast<std::size_t>(i)] * m;
            for (std::int64_t j = 0; j < m; ++j) dst[j] += src[j];
        }
    });
}

inline Var sub(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "ad::sub");
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            Tensor& g = a->grad_buf();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
        }
        if (b->requires_grad) {
            Tensor& g = b->grad_buf();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
        }
    });
}

inline Var mul(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "ad::mul");
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            Tensor& g = a->grad_buf();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            Tensor& g = b->grad_buf();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * a->value[i];
        }
    });
}

inline Var div(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "ad::div");
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] /= b->value[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            Tensor& g = a->grad_buf();
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] / b->value[i];
        }
        if (b->requires_grad) {
            Tensor& g = b->grad_buf();
            for (std::int64_t i = 0; i < g.numel(); ++i) {
                const float bv = b->value[i];
                g[i] -= n.grad[i] * a->value[i] / (bv * bv);
            }
        }
    });
}

inline Var scale(const Var& a, float s) {
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
    return make_node(std::move(out), {a}, [a, s](Node& n) {
        if (!a->requires_grad) return;
        Tensor& g = a->grad_buf();
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * s;
    });
}

inline Var add_scalar(const Var& a, float s) {
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += s;
    return make_node(std::move(out), {a}, [a](Node& n) {
        if (!a->requires_grad) return;
        Tensor& g = a->grad_buf();
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    });
}

inline Var relu(const Var& a) {
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::max(0.0f, out[i]);
    return make_node(std::move(out), {a}, [a](Node& n) {
        if (!a->requires_grad) return;
        Tensor& g = a->grad_buf();
        for (std::int64_t i = 0; i < g.numel(); ++i)
            if (a->value[i] > 0.0f) g[i] += n.grad[i];
    });
}

inline Var leaky_relu(const Var& a, float alpha = 0.2f) {
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i)
        if (out[i] < 0.0f) out[i] *= alpha;
    return make_node(std::move(out), {a}, [a, alpha](Node& n) {
        if (!a->requires_grad) return;
        Tensor& g = a->grad_buf();
        for (std::int64_t i = 0; i < g.numel(); ++i)
            g[i] += n.grad[i] * (a->value[i] > 0.0f ? 1.0f : alpha);
    });
}

inline Var sigmoid(const Var& a) {
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out[i] = 1.0f / (1.0f + std::exp(-out[i]));
    auto node = make_node(std::move(out), {a}, nullptr);
    Node* raw = node.get();
    if (node->requires_grad)
        node->backward_fn = [a, raw](Node& n) {
            Tensor& g = a->grad_buf();
            for (std::int64_t i = 0; i < g.numel(); ++i) {
                const float y = raw->value[i];
                g[i] += n.grad[i] * y * (1.0f - y);
            }
        };
    return node;
}

inline Var abs(const Var& a) {
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::fabs(out[i]);
    return make_node(std::move(out), {a}, [a](Node& n) {
        if (!a->requires_grad) return;
        Tensor& g = a->grad_buf();
        for (std::int64_t i = 0; i < g.numel(); ++i)
            g[i] += n.grad[i] * (a->value[i] > 0.0f ? 1.0f : (a->value[i] < 0.0f ? -1.0f : 0.0f));
    });
}

// Clamp to [lo, hi]; gradient passes only strictly inside the interval.
inline Var clamp(const Var& a, float lo, float hi) {
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out[i] = std::min(hi, std::max(lo, out[i]));
    return make_node(std::move(out), {a}, [a, lo, hi](Node& n) {
        if (!a->requires_grad) return;
        Tensor& g = a->grad_buf();
        for (std::int64_t i = 0; i < g.numel(); ++i)
            if (a->value[i] > lo && a->value[i] < hi) g[i] += n.grad[i];
    });
}

// Elementwise multiply by a fixed mask tensor.
inline Var mul_mask(const Var& a, const Tensor& mask) {
    check_same_shape(a->value, mask, "ad::mul_mask");
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= mask[i];
    return make_node(std::move(out), {a}, [a, mask](Node& n) {
        if (!a->requires_grad) return;
        Tensor& g = a->grad_buf();
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * mask[i];
    });
}

// Forward takes the replacement value; backward treats the op as identity.
// Used to train through non-differentiable image codecs.
inline Var straight_through(const Var& a, Tensor replaced) {
    check_same_shape(a->value, replaced, "ad::straight_through");
    return make_node(std::move(replaced), {a}, [a](Node& n) {
        if (!a->requires_grad) return;
        Tensor& g = a->grad_buf();
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    });
}

// ----------------------------------------------------------------------------
// Shape ops

inline Var reshape(const Var& a, std::vector<std::int64_t> shape) {
    Tensor out = a->value.reshaped(std::move(shape));
    return make_node(std::move(out), {a}, [a](Node& n) {
        if (!a->requires_grad) return;
        Tensor& g = a->grad_buf();
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    });
}

// Concatenate along the channel axis of (N,C,H,W) tensors.
inline Var concat_channels(const Var& a, const Var& b) {
    const auto& sa = a->value.shape();
    const auto& sb = b->value.shape();
    if (sa.size() != 4 || sb.size() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
        throw std::invalid_argument("ad::concat_channels: incompatible shapes");
    const std::int64_t n = sa[0], ca = sa[1], cb = sb[1], hw = sa[2] * sa[3];
    Tensor out({n, ca + cb, sa[2], sa[3]});
    for (std::int64_t i = 0; i < n; ++i) {
        std::copy_n(a->value.data() + i * ca * hw, ca * hw, out.data() + i * (ca + cb) * hw);
        std::copy_n(b->value.data() + i * cb * hw, cb * hw,
                    out.data() + i * (ca + cb) * hw + ca * hw);
    }
    return make_node(std::move(out), {a, b}, [a, b, n, ca, cb, hw](Node& nd) {
        for (std::int64_t i = 0; i < n; ++i) {
            if (a->requires_grad) {
                Tensor& g = a->grad_buf();
                const float* src = nd.grad.data() + i * (ca + cb) * hw;
                float* dst = g.data() + i * ca * hw;
                for (std::int64_t j = 0; j < ca * hw; ++j) dst[j] += src[j];
            }
            if (b->requires_grad) {
                Tensor& g = b->grad_buf();
                const float* src = nd.grad.data() + i * (ca + cb) * hw + ca * hw;
                float* dst = g.data() + i * cb * hw;
                for (std::int64_t j = 0; j < cb * hw; ++j) dst[j] += src[j];
            }
        }
    });
}

// ----------------------------------------------------------------------------
// Reductions

inline Var mean_all(const Var& a) {
    Tensor out({1});
    out[0] = static_cast<float>(a->value.mean());
    const double inv = 1.0 / static_cast<double>(a->value.numel());
    return make_node(std::move(out), {a}, [a, inv](Node& n) {
        if (!a->requires_grad) return;
        Tensor& g = a->grad_buf();
        const float s = n.grad[0] * static_cast<float>(inv);
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += s;
    });
}

inline Var sum_all(const Var& a) {
    Tensor out({1});
    out[0] = static_cast<float>(a->value.sum());
    return make_node(std::move(out), {a}, [a](Node& n) {
        if (!a->requires_grad) return;
        Tensor& g = a->grad_buf();
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[0];
    });
}

// Mean over the batch of per-sample Euclidean norms of (N, ...) tensors.
inline Var l2_norm_batch_mean(const Var& a, float eps = 1e-12f) {
    const std::int64_t n = a->value.dim(0);
    const std::int64_t per = a->value.numel() / n;
    std::vector<float> norms(static_cast<std::size_t>(n));
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        double ss = 0.0;
        const float* p = a->value.data() + i * per;
        for (std::int64_t j = 0; j < per; ++j) ss += static_cast<double>(p[j]) * p[j];
        norms[static_cast<std::size_t>(i)] = static_cast<float>(std::sqrt(ss + eps));
        total += norms[static_cast<std::size_t>(i)];
    }
    Tensor out({1});
    out[0] = static_cast<float>(total / static_cast<double>(n));
    return make_node(std::move(out), {a}, [a, n, per, norms](Node& nd) {
        if (!a->requires_grad) return;
        Tensor& g = a->grad_buf();
        const float s = nd.grad[0] / static_cast<float>(n);
        for (std::int64_t i = 0; i < n; ++i) {
            const float inv_norm = 1.0f / norms[static_cast<std::size_t>(i)];
            const float* p = a->value.data() + i * per;
            float* gp = g.data() + i * per;
            for (std::int64_t j = 0; j < per; ++j) gp[j] += s * p[j] * inv_norm;
        }
    });
}

// Summed binary cross-entropy against fixed 0/1 targets, averaged over the
// batch dimension. Probabilities are clamped to [eps, 1-eps].
inline Var bce_loss(const Var& probs, const Tensor& target, float eps = 1e-7f) {
    check_same_shape(probs->value, target, "ad::bce_loss");
    const std::int64_t n = probs->value.dim(0);
    double total = 0.0;
    for (std::int64_t i = 0; i < probs->value.numel(); ++i) {
        const float p = std::min(1.0f - eps, std::max(eps, probs->value[i]));
        const float t = target[i];
        total += -(t * std::log(static_cast<double>(p)) +
                   (1.0 - t) * std::log(1.0 - static_cast<double>(p)));
    }
    Tensor out({1});
    out[0] = static_cast<float>(total / static_cast<double>(n));
    return make_node(std::move(out), {probs}, [probs, target, eps, n](Node& nd) {
        if (!probs->requires_grad) return;
        Tensor& g = probs->grad_buf();
        const float s = nd.grad[0] / static_cast<float>(n);
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            const float p = std::min(1.0f - eps, std::max(eps, probs->value[i]));
            const float t = target[i];
            g[i] += s * (p - t) / (p * (1.0f - p));
        }
    });
}

// ----------------------------------------------------------------------------
// Neural-net ops on (N,C,H,W)

namespace detail {

inline void im2col(const float* x, std::int64_t c, std::int64_t h, std::int64_t w,
                   std::int64_t k, std::int64_t stride, std::int64_t pad,
                   std::int64_t oh, std::int64_t ow, float* col) {
    // col layout: (c*k*k) x (oh*ow)
    for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t ki = 0; ki < k; ++ki) {
            for (std::int64_t kj = 0; kj < k; ++kj) {
                float* dst = col + ((ch * k + ki) * k + kj) * oh * ow;
                for (std::int64_t oi = 0; oi < oh; ++oi) {
                    const std::int64_t ii = oi * stride + ki - pad;
                    if (ii < 0 || ii >= h) {
                        std::fill_n(dst + oi * ow, ow, 0.0f);
                        continue;
                    }
                    const float* src_row = x + (ch * h + ii) * w;
                    for (std::int64_t oj = 0; oj < ow; ++oj) {
                        const std::int64_t jj = oj * stride + kj - pad;
                        dst[oi * ow + oj] = (jj < 0 || jj >= w) ? 0.0f : src_row[jj];
                    }
                }
            }
        }
    }
}

inline void col2im_add(const float* col, std::int64_t c, std::int64_t h, std::int64_t w,
                       std::int64_t k, std::int64_t stride, std::int64_t pad,
                       std::int64_t oh, std::int64_t ow, float* x) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t ki = 0; ki < k; ++ki) {
            for (std::int64_t kj = 0; kj < k; ++kj) {
                const float* src = col + ((ch * k + ki) * k + kj) * oh * ow;
                for (std::int64_t oi = 0; oi < oh; ++oi) {
                    const std::int64_t ii = oi * stride + ki - pad;
                    if (ii < 0 || ii >= h) continue;
                    float* dst_row = x + (ch * h + ii) * w;
                    for (std::int64_t oj = 0; oj < ow; ++oj) {
                        const std::int64_t jj = oj * stride + kj - pad;
                        if (jj >= 0 && jj < w) dst_row[jj] += src[oi * ow + oj];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// 2-D convolution, square kernel. x: (N,C,H,W), w: (O,C,k,k), b: (O).
inline Var conv2d(const Var& x, const Var& w, const Var& b, std::int64_t stride,
                  std::int64_t pad) {
    const auto& xs = x->value.shape();
    const auto& ws = w->value.shape();
    if (xs.size() != 4 || ws.size() != 4 || ws[2] != ws[3] || xs[1] != ws[1])
        throw std::invalid_argument("ad::conv2d: bad shapes");
    const std::int64_t n = xs[0], c = xs[1], h = xs[2], wd = xs[3];
    const std::int64_t o = ws[0], k = ws[2];
    const std::int64_t oh = (h + 2 * pad - k) / stride + 1;
    const std::int64_t ow = (wd + 2 * pad - k) / stride + 1;
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("ad::conv2d: empty output");
    if (b->value.numel() != o) throw std::invalid_argument("ad::conv2d: bias size");

    Tensor out({n, o, oh, ow});
    const std::int64_t ck2 = c * k * k;
    std::vector<float> col(static_cast<std::size_t>(ck2 * oh * ow));
    ConstMapRM wm(w->value.data(), o, ck2);
    for (std::int64_t i = 0; i < n; ++i) {
        detail::im2col(x->value.data() + i * c * h * wd, c, h, wd, k, stride, pad, oh, ow,
                       col.data());
        ConstMapRM cm(col.data(), ck2, oh * ow);
        MapRM om(out.data() + i * o * oh * ow, o, oh * ow);
        om.noalias() = wm * cm;
        for (std::int64_t oc = 0; oc < o; ++oc)
            om.row(oc).array() += b->value[oc];
    }

    return make_node(std::move(out), {x, w, b},
                     [x, w, b, n, c, h, wd, o, k, stride, pad, oh, ow, ck2](Node& nd) {
        std::vector<float> col(static_cast<std::size_t>(ck2 * oh * ow));
        std::vector<float> dcol(static_cast<std::size_t>(ck2 * oh * ow));
        ConstMapRM wm(w->value.data(), o, ck2);
        for (std::int64_t i = 0; i < n; ++i) {
            ConstMapRM gm(nd.grad.data() + i * o * oh * ow, o, oh * ow);
            if (w->requires_grad || b->requires_grad) {
                detail::im2col(x->value.data() + i * c * h * wd, c, h, wd, k, stride, pad,
                               oh, ow, col.data());
                ConstMapRM cm(col.data(), ck2, oh * ow);
                if (w->requires_grad) {
                    MapRM gw(w->grad_buf().data(), o, ck2);
                    gw.noalias() += gm * cm.transpose();
                }
                if (b->requires_grad) {
                    Tensor& gb = b->grad_buf();
                    for (std::int64_t oc = 0; oc < o; ++oc) gb[oc] += gm.row(oc).sum();
                }
            }
            if (x->requires_grad) {
                MapRM dcm(dcol.data(), ck2, oh * ow);
                dcm.noalias() = wm.transpose() * gm;
                detail::col2im_add(dcol.data(), c, h, wd, k, stride, pad, oh, ow,
                                   x->grad_buf().data() + i * c * h * wd);
            }
        }
    });
}

// Fully connected layer. x: (N,D), w: (O,D), b: (O).
inline Var linear(const Var& x, const Var& w, const Var& b) {
    const auto& xs = x->value.shape();
    const auto& ws = w->value.shape();
    if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1])
        throw std::invalid_argument("ad::linear: bad shapes");
    const std::int64_t n = xs[0], d = xs[1], o = ws[0];
    if (b->value.numel() != o) throw std::invalid_argument("ad::linear: bias size");

    Tensor out({n, o});
    ConstMapRM xm(x->value.data(), n, d);
    ConstMapRM wm(w->value.data(), o, d);
    MapRM om(out.data(), n, o);
    om.noalias() = xm * wm.transpose();
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < o; ++j) om(i, j) += b->value[j];

    return make_node(std::move(out), {x, w, b}, [x, w, b, n, d, o](Node& nd) {
        ConstMapRM gm(nd.grad.data(), n, o);
        if (w->requires_grad) {
            ConstMapRM xm(x->value.data(), n, d);
            MapRM gw(w->grad_buf().data(), o, d);
            gw.noalias() += gm.transpose() * xm;
        }
        if (b->requires_grad) {
            Tensor& gb = b->grad_buf();
            for (std::int64_t j = 0; j < o; ++j) gb[j] += gm.col(j).sum();
        }
        if (x->requires_grad) {
            ConstMapRM wm(w->value.data(), o, d);
            MapRM gx(x->grad_buf().data(), n, d);
            gx.noalias() += gm * wm;
        }
    });
}

// Nearest-neighbor 2x upsampling of (N,C,H,W).
inline Var upsample_nearest2(const Var& x) {
    const auto& s = x->value.shape();
    if (s.size() != 4) throw std::invalid_argument("ad::upsample_nearest2: expected 4-D");
    const std::int64_t n = s[0], c = s[1], h = s[2], w = s[3];
    Tensor out({n, c, h * 2, w * 2});
    for (std::int64_t nc = 0; nc < n * c; ++nc) {
        const float* src = x->value.data() + nc * h * w;
        float* dst = out.data() + nc * h * w * 4;
        for (std::int64_t i = 0; i < h; ++i) {
            for (std::int64_t j = 0; j < w; ++j) {
                const float v = src[i * w + j];
                dst[(2 * i) * (2 * w) + 2 * j] = v;
                dst[(2 * i) * (2 * w) + 2 * j + 1] = v;
                dst[(2 * i + 1) * (2 * w) + 2 * j] = v;
                dst[(2 * i + 1) * (2 * w) + 2 * j + 1] = v;
            }
        }
    }
    return make_node(std::move(out), {x}, [x, n, c, h, w](Node& nd) {
        if (!x->requires_grad) return;
        Tensor& g = x->grad_buf();
        for (std::int64_t nc = 0; nc < n * c; ++nc) {
            float* dst = g.data() + nc * h * w;
            const float* src = nd.grad.data() + nc * h * w * 4;
            for (std::int64_t i = 0; i < h; ++i)
                for (std::int64_t j = 0; j < w; ++j)
                    dst[i * w + j] += src[(2 * i) * (2 * w) + 2 * j] +
                                      src[(2 * i) * (2 * w) + 2 * j + 1] +
                                      src[(2 * i + 1) * (2 * w) + 2 * j] +
                                      src[(2 * i + 1) * (2 * w) + 2 * j + 1];
        }
    });
}

// Depthwise valid-mode filtering with a fixed square kernel (no kernel grad).
// The kernel is symmetric in our uses, so the adjoint is the same scatter.
inline Var filter_valid(const Var& x, const Tensor& kernel) {
    const auto& s = x->value.shape();
    if (s.size() != 4 || kernel.ndim() != 2 || kernel.dim(0) != kernel.dim(1))
        throw std::invalid_argument("ad::filter_valid: bad shapes");
    const std::int64_t n = s[0], c = s[1], h = s[2], w = s[3], k = kernel.dim(0);
    const std::int64_t oh = h - k + 1, ow = w - k + 1;
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("ad::filter_valid: image smaller than kernel");
    Tensor out({n, c, oh, ow});
    for (std::int64_t nc = 0; nc < n * c; ++nc) {
        const float* src = x->value.data() + nc * h * w;
        float* dst = out.data() + nc * oh * ow;
        for (std::int64_t i = 0; i < oh; ++i) {
            for (std::int64_t j = 0; j < ow; ++j) {
                double acc = 0.0;
                for (std::int64_t ki = 0; ki < k; ++ki)
                    for (std::int64_t kj = 0; kj < k; ++kj)
                        acc += static_cast<double>(kernel[ki * k + kj]) *
                               src[(i + ki) * w + (j + kj)];
                dst[i * ow + j] = static_cast<float>(acc);
            }
        }
    }
    return make_node(std::move(out), {x}, [x, kernel, n, c, h, w, k, oh, ow](Node& nd) {
        if (!x->requires_grad) return;
        Tensor& g = x->grad_buf();
        for (std::int64_t nc = 0; nc < n * c; ++nc) {
            float* dst = g.data() + nc * h * w;
            const float* src = nd.grad.data() + nc * oh * ow;
            for (std::int64_t i = 0; i < oh; ++i)
                for (std::int64_t j = 0; j < ow; ++j) {
                    const float gv = src[i * ow + j];
                    if (gv == 0.0f) continue;
                    for (std::int64_t ki = 0; ki < k; ++ki)
                        for (std::int64_t kj = 0; kj < k; ++kj)
                            dst[(i + ki) * w + (j + kj)] += gv * kernel[ki * k + kj];
                }
        }
    });
}

}  // namespace tracemark::ad
