#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "debias/common.hpp"

// Minimal dense-tensor reverse-mode differentiation: 64-bit values, row-major
// layout, define-by-run graphs confined to one worker. Convolution follows
// the cross-correlation convention (no kernel flip).

namespace debias::ad {

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s, double fill = 0.0)
        : shape(std::move(s)), data(numel_of(shape), fill) {}
    Tensor(std::vector<std::size_t> s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
        require(data.size() == numel_of(shape), "Tensor: data length does not match shape");
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (auto d : s) n *= d;
        return n;
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    std::string shape_str() const {
        std::ostringstream out;
        out << '(';
        for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? ", " : "") << shape[i];
        out << ')';
        return out.str();
    }
};

class Node;
using Var = std::shared_ptr<Node>;

class Node {
public:
    Tensor value;
    Tensor grad;  // allocated on first use, same shape as value
    bool requires_grad = false;
    bool backward_done = false;  // set on a node used as a backward root
    std::vector<Var> inputs;
    std::function<void(Node&)> backprop;  // reads this->grad, accumulates into inputs
    const char* op = "leaf";

    bool is_leaf() const { return inputs.empty(); }

    void ensure_grad() {
        if (grad.data.empty()) grad = Tensor(value.shape);
    }
    void zero_grad() {
        std::fill(grad.data.begin(), grad.data.end(), 0.0);
        backward_done = false;
    }
};

inline Var constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    return n;
}

inline Var parameter(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    n->requires_grad = true;
    n->ensure_grad();
    return n;
}

namespace detail {

inline Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backprop, const char* op) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->inputs = std::move(inputs);
    n->op = op;
    for (const Var& in : n->inputs)
        if (in->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backprop = std::move(backprop);
    return n;
}

inline void check_same_shape(const Var& a, const Var& b, const char* op) {
    require(a->value.shape == b->value.shape, std::string(op) + ": shape mismatch " + a->value.shape_str() +
                                                  " vs " + b->value.shape_str());
}

}  // namespace detail

// --- elementwise ----------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
    detail::check_same_shape(a, b, "add");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
    return detail::make_node(std::move(out), {a, b},
                             [](Node& n) {
                                 for (auto& in : n.inputs) {
                                     if (!in->requires_grad) continue;
                                     in->ensure_grad();
                                     for (std::size_t i = 0; i < n.grad.numel(); ++i) in->grad[i] += n.grad[i];
                                 }
                             },
                             "add");
}

inline Var mul(const Var& a, const Var& b) {
    detail::check_same_shape(a, b, "mul");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
    return detail::make_node(std::move(out), {a, b},
                             [](Node& n) {
                                 Node &a = *n.inputs[0], &b = *n.inputs[1];
                                 if (a.requires_grad) {
                                     a.ensure_grad();
                                     for (std::size_t i = 0; i < n.grad.numel(); ++i)
                                         a.grad[i] += n.grad[i] * b.value[i];
                                 }
                                 if (b.requires_grad) {
                                     b.ensure_grad();
                                     for (std::size_t i = 0; i < n.grad.numel(); ++i)
                                         b.grad[i] += n.grad[i] * a.value[i];
                                 }
                             },
                             "mul");
}

inline Var scale(const Var& a, double c) {
    Tensor out = a->value;
    for (auto& v : out.data) v *= c;
    return detail::make_node(std::move(out), {a},
                             [c](Node& n) {
                                 Node& a = *n.inputs[0];
                                 a.ensure_grad();
                                 for (std::size_t i = 0; i < n.grad.numel(); ++i) a.grad[i] += c * n.grad[i];
                             },
                             "scale");
}

inline Var relu(const Var& a) {
    Tensor out = a->value;
    for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
    return detail::make_node(std::move(out), {a},
                             [](Node& n) {
                                 Node& a = *n.inputs[0];
                                 a.ensure_grad();
                                 for (std::size_t i = 0; i < n.grad.numel(); ++i)
                                     if (a.value[i] > 0.0) a.grad[i] += n.grad[i];
                             },
                             "relu");
}

inline Var log(const Var& a) {
    Tensor out = a->value;
    for (auto& v : out.data) v = std::log(v);
    return detail::make_node(std::move(out), {a},
                             [](Node& n) {
                                 Node& a = *n.inputs[0];
                                 a.ensure_grad();
                                 for (std::size_t i = 0; i < n.grad.numel(); ++i)
                                     a.grad[i] += n.grad[i] / a.value[i];
                             },
                             "log");
}

inline Var clamp_min(const Var& a, double lo) {
    Tensor out = a->value;
    for (auto& v : out.data) v = v < lo ? lo : v;
    return detail::make_node(std::move(out), {a},
                             [lo](Node& n) {
                                 Node& a = *n.inputs[0];
                                 a.ensure_grad();
                                 for (std::size_t i = 0; i < n.grad.numel(); ++i)
                                     if (a.value[i] >= lo) a.grad[i] += n.grad[i];
                             },
                             "clamp_min");
}

inline Var softplus(const Var& a) {
    Tensor out = a->value;
    for (auto& v : out.data) v = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
    return detail::make_node(std::move(out), {a},
                             [](Node& n) {
                                 Node& a = *n.inputs[0];
                                 a.ensure_grad();
                                 for (std::size_t i = 0; i < n.grad.numel(); ++i)
                                     a.grad[i] += n.grad[i] / (1.0 + std::exp(-a.value[i]));
                             },
                             "softplus");
}

// --- structure ------------------------------------------------------------

inline Var reshape(const Var& a, std::vector<std::size_t> new_shape) {
    require(Tensor::numel_of(new_shape) == a->value.numel(),
            "reshape: element count mismatch " + a->value.shape_str());
    Tensor out(std::move(new_shape), a->value.data);
    return detail::make_node(std::move(out), {a},
                             [](Node& n) {
                                 Node& a = *n.inputs[0];
                                 a.ensure_grad();
                                 for (std::size_t i = 0; i < n.grad.numel(); ++i) a.grad[i] += n.grad[i];
                             },
                             "reshape");
}

inline Var sum(const Var& a) {
    double total = 0.0;
    for (double v : a->value.data) total += v;
    return detail::make_node(Tensor({1}, {total}), {a},
                             [](Node& n) {
                                 Node& a = *n.inputs[0];
                                 a.ensure_grad();
                                 for (std::size_t i = 0; i < a.grad.numel(); ++i) a.grad[i] += n.grad[0];
                             },
                             "sum");
}

// Identity forward; backward multiplies the upstream gradient by -lambda.
inline Var grad_reverse(const Var& a, double lambda) {
    Tensor out = a->value;  // bit-identical copy
    return detail::make_node(std::move(out), {a},
                             [lambda](Node& n) {
                                 Node& a = *n.inputs[0];
                                 a.ensure_grad();
                                 for (std::size_t i = 0; i < n.grad.numel(); ++i)
                                     a.grad[i] += -lambda * n.grad[i];
                             },
                             "grad_reverse");
}

// --- linear algebra -------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
    require(a->value.rank() == 2 && b->value.rank() == 2 && a->value.dim(1) == b->value.dim(0),
            "matmul: incompatible shapes " + a->value.shape_str() + " vs " + b->value.shape_str());
    const std::size_t n = a->value.dim(0), k = a->value.dim(1), m = b->value.dim(1);
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            double av = a->value[i * k + j];
            for (std::size_t l = 0; l < m; ++l) out[i * m + l] += av * b->value[j * m + l];
        }
    return detail::make_node(std::move(out), {a, b},
                             [n, k, m](Node& node) {
                                 Node &a = *node.inputs[0], &b = *node.inputs[1];
                                 if (a.requires_grad) {
                                     a.ensure_grad();
                                     for (std::size_t i = 0; i < n; ++i)
                                         for (std::size_t l = 0; l < m; ++l) {
                                             double g = node.grad[i * m + l];
                                             for (std::size_t j = 0; j < k; ++j)
                                                 a.grad[i * k + j] += g * b.value[j * m + l];
                                         }
                                 }
                                 if (b.requires_grad) {
                                     b.ensure_grad();
                                     for (std::size_t i = 0; i < n; ++i)
                                         for (std::size_t l = 0; l < m; ++l) {
                                             double g = node.grad[i * m + l];
                                             for (std::size_t j = 0; j < k; ++j)
                                                 b.grad[j * m + l] += g * a.value[i * k + j];
                                         }
                                 }
                             },
                             "matmul");
}

namespace detail {

struct ConvDims {
    std::size_t frames;  // N, or N*T for rank-5 input
    std::size_t n;       // leading dim
    std::size_t t;       // 1 for rank-4
    std::size_t cin, h, w;
};

inline ConvDims conv_dims(const Tensor& x, const Tensor& kernel) {
    require(x.rank() == 4 || x.rank() == 5,
            "conv2d: input must be (N,C,H,W) or (N,C,T,H,W), got " + x.shape_str());
    require(kernel.rank() == 4 && kernel.dim(2) == 3 && kernel.dim(3) == 3,
            "conv2d: kernel must be (F,C,3,3), got " + kernel.shape_str());
    ConvDims d;
    d.n = x.dim(0);
    d.cin = x.dim(1);
    d.t = x.rank() == 5 ? x.dim(2) : 1;
    d.h = x.dim(x.rank() - 2);
    d.w = x.dim(x.rank() - 1);
    d.frames = d.n * d.t;
    require(kernel.dim(1) == d.cin, "conv2d: channel mismatch, input " + x.shape_str() + " vs kernel " +
                                        kernel.shape_str());
    return d;
}

}  // namespace detail

// 3x3 convolution, stride 1, zero padding 1, cross-correlation. Rank-5
// inputs are convolved frame by frame along the temporal axis.
inline Var conv2d(const Var& x, const Var& kernel) {
    auto d = detail::conv_dims(x->value, kernel->value);
    const std::size_t cout = kernel->value.dim(0);
    std::vector<std::size_t> out_shape = x->value.shape;
    out_shape[1] = cout;
    Tensor out(out_shape);

    const std::size_t in_plane = d.h * d.w;
    const std::size_t in_frame_ch = d.t * in_plane;  // stride of channel axis
    const double* kw = kernel->value.data.data();
    for (std::size_t nf = 0; nf < d.frames; ++nf) {
        const std::size_t ni = nf / d.t, ti = nf % d.t;
        const double* in_base = x->value.data.data() + (ni * d.cin) * in_frame_ch + ti * in_plane;
        double* out_base = out.data.data() + (ni * cout) * in_frame_ch + ti * in_plane;
        for (std::size_t f = 0; f < cout; ++f)
            for (std::size_t y = 0; y < d.h; ++y)
                for (std::size_t xw = 0; xw < d.w; ++xw) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < d.cin; ++c) {
                        const double* in_ch = in_base + c * in_frame_ch;
                        const double* k = kw + (f * d.cin + c) * 9;
                        for (std::size_t dy = 0; dy < 3; ++dy) {
                            const std::size_t iy = y + dy;
                            if (iy < 1 || iy > d.h) continue;
                            const double* row = in_ch + (iy - 1) * d.w;
                            for (std::size_t dx = 0; dx < 3; ++dx) {
                                const std::size_t ix = xw + dx;
                                if (ix < 1 || ix > d.w) continue;
                                acc += k[dy * 3 + dx] * row[ix - 1];
                            }
                        }
                    }
                    out_base[f * in_frame_ch + y * d.w + xw] = acc;
                }
    }

    return detail::make_node(std::move(out), {x, kernel},
                             [d, cout](Node& node) {
                                 Node &x = *node.inputs[0], &k = *node.inputs[1];
                                 const std::size_t in_plane = d.h * d.w;
                                 const std::size_t in_frame_ch = d.t * in_plane;
                                 if (x.requires_grad) x.ensure_grad();
                                 if (k.requires_grad) k.ensure_grad();
                                 for (std::size_t nf = 0; nf < d.frames; ++nf) {
                                     const std::size_t ni = nf / d.t, ti = nf % d.t;
                                     const std::size_t in_off = (ni * d.cin) * in_frame_ch + ti * in_plane;
                                     const std::size_t out_off = (ni * cout) * in_frame_ch + ti * in_plane;
                                     for (std::size_t f = 0; f < cout; ++f)
                                         for (std::size_t y = 0; y < d.h; ++y)
                                             for (std::size_t xw = 0; xw < d.w; ++xw) {
                                                 double g = node.grad[out_off + f * in_frame_ch + y * d.w + xw];
                                                 if (g == 0.0) continue;
                                                 for (std::size_t c = 0; c < d.cin; ++c)
                                                     for (std::size_t dy = 0; dy < 3; ++dy) {
                                                         const std::size_t iy = y + dy;
                                                         if (iy < 1 || iy > d.h) continue;
                                                         for (std::size_t dx = 0; dx < 3; ++dx) {
                                                             const std::size_t ix = xw + dx;
                                                             if (ix < 1 || ix > d.w) continue;
                                                             const std::size_t xi =
                                                                 in_off + c * in_frame_ch + (iy - 1) * d.w +
                                                                 (ix - 1);
                                                             const std::size_t ki =
                                                                 (f * d.cin + c) * 9 + dy * 3 + dx;
                                                             if (k.requires_grad)
                                                                 k.grad[ki] += g * x.value[xi];
                                                             if (x.requires_grad)
                                                                 x.grad[xi] += g * k.value[ki];
                                                         }
                                                     }
                                             }
                                 }
                             },
                             "conv2d");
}

// Mean over every axis after the first two: (N, C, ...) -> (N, C).
inline Var global_mean_pool(const Var& x) {
    require(x->value.rank() >= 3, "global_mean_pool: need rank >= 3, got " + x->value.shape_str());
    const std::size_t n = x->value.dim(0), c = x->value.dim(1);
    std::size_t inner = 1;
    for (std::size_t i = 2; i < x->value.rank(); ++i) inner *= x->value.dim(i);
    Tensor out({n, c});
    for (std::size_t i = 0; i < n * c; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < inner; ++j) acc += x->value[i * inner + j];
        out[i] = acc / static_cast<double>(inner);
    }
    return detail::make_node(std::move(out), {x},
                             [inner](Node& node) {
                                 Node& x = *node.inputs[0];
                                 x.ensure_grad();
                                 const double inv = 1.0 / static_cast<double>(inner);
                                 for (std::size_t i = 0; i < node.grad.numel(); ++i) {
                                     double g = node.grad[i] * inv;
                                     for (std::size_t j = 0; j < inner; ++j) x.grad[i * inner + j] += g;
                                 }
                             },
                             "global_mean_pool");
}

namespace detail {

inline void softmax_slices(const Tensor& in, Tensor& out, std::size_t slice) {
    const std::size_t count = in.numel() / slice;
    for (std::size_t s = 0; s < count; ++s) {
        const double* xi = in.data.data() + s * slice;
        double* yo = out.data.data() + s * slice;
        double mx = xi[0];
        for (std::size_t i = 1; i < slice; ++i) mx = std::max(mx, xi[i]);
        double total = 0.0;
        for (std::size_t i = 0; i < slice; ++i) {
            yo[i] = std::exp(xi[i] - mx);
            total += yo[i];
        }
        for (std::size_t i = 0; i < slice; ++i) yo[i] /= total;
    }
}

inline void softmax_backward_slices(const Node& node, Node& x, std::size_t slice) {
    const std::size_t count = node.value.numel() / slice;
    for (std::size_t s = 0; s < count; ++s) {
        const double* y = node.value.data.data() + s * slice;
        const double* g = node.grad.data.data() + s * slice;
        double dot = 0.0;
        for (std::size_t i = 0; i < slice; ++i) dot += g[i] * y[i];
        double* dx = x.grad.data.data() + s * slice;
        for (std::size_t i = 0; i < slice; ++i) dx[i] += y[i] * (g[i] - dot);
    }
}

inline Var softmax_over(const Var& a, std::size_t slice, const char* op) {
    Tensor out(a->value.shape);
    softmax_slices(a->value, out, slice);
    return make_node(std::move(out), {a},
                     [slice](Node& n) {
                         Node& x = *n.inputs[0];
                         x.ensure_grad();
                         softmax_backward_slices(n, x, slice);
                     },
                     op);
}

}  // namespace detail

inline Var softmax(const Var& a) {
    require(a->value.rank() >= 1 && a->value.shape.back() > 0, "softmax: empty last axis");
    return detail::softmax_over(a, a->value.shape.back(), "softmax");
}

// Normalizes each trailing HxW slice to sum to 1.
inline Var spatial_softmax(const Var& a) {
    require(a->value.rank() >= 2, "spatial_softmax: need rank >= 2, got " + a->value.shape_str());
    const std::size_t slice = a->value.dim(a->value.rank() - 2) * a->value.dim(a->value.rank() - 1);
    return detail::softmax_over(a, slice, "spatial_softmax");
}

// Per-location mask multiply: mask matches x except the channel axis is 1.
inline Var mul_mask(const Var& x, const Var& mask) {
    require(x->value.rank() == mask->value.rank() && x->value.rank() >= 3 && mask->value.dim(1) == 1,
            "mul_mask: mask must be " + x->value.shape_str() + " with channel 1, got " +
                mask->value.shape_str());
    for (std::size_t i = 0; i < x->value.rank(); ++i)
        require(i == 1 || x->value.dim(i) == mask->value.dim(i),
                "mul_mask: shape mismatch " + x->value.shape_str() + " vs " + mask->value.shape_str());
    const std::size_t n = x->value.dim(0), c = x->value.dim(1);
    const std::size_t inner = x->value.numel() / (n * c);
    Tensor out(x->value.shape);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t j = 0; j < inner; ++j)
                out[(b * c + ch) * inner + j] = x->value[(b * c + ch) * inner + j] * mask->value[b * inner + j];
    return detail::make_node(std::move(out), {x, mask},
                             [n, c, inner](Node& node) {
                                 Node &x = *node.inputs[0], &m = *node.inputs[1];
                                 if (x.requires_grad) x.ensure_grad();
                                 if (m.requires_grad) m.ensure_grad();
                                 for (std::size_t b = 0; b < n; ++b)
                                     for (std::size_t ch = 0; ch < c; ++ch)
                                         for (std::size_t j = 0; j < inner; ++j) {
                                             const std::size_t xi = (b * c + ch) * inner + j;
                                             const std::size_t mi = b * inner + j;
                                             double g = node.grad[xi];
                                             if (x.requires_grad) x.grad[xi] += g * m.value[mi];
                                             if (m.requires_grad) m.grad[mi] += g * x.value[xi];
                                         }
                             },
                             "mul_mask");
}

// --- backward -------------------------------------------------------------

// Topologically ordered operation records reachable from a root.
struct Graph {
    std::vector<Node*> order;  // inputs precede users

    static Graph from(const Var& root) {
        Graph g;
        std::unordered_set<Node*> visited;
        std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
        visited.insert(root.get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->inputs.size()) {
                Node* in = node->inputs[next++].get();
                if (in->requires_grad && visited.insert(in).second) stack.push_back({in, 0});
            } else {
                g.order.push_back(node);
                stack.pop_back();
            }
        }
        return g;
    }
};

// Populates d(root)/d(tensor) for every tensor with requires_grad. Leaf
// gradients accumulate; calling backward twice on the same root is an error.
inline void backward(const Var& root) {
    require(root->value.numel() == 1, "backward: loss must be scalar, got " + root->value.shape_str());
    require(root->requires_grad, "backward: loss is detached from every differentiable tensor");
    require(!root->backward_done, "backward: repeated backward on the same graph without grad reset");

    Graph graph = Graph::from(root);
    // Intermediates may be shared with a previously differentiated root;
    // their buffers start from zero, leaf gradients accumulate.
    for (Node* n : graph.order)
        if (!n->is_leaf()) n->ensure_grad(), n->zero_grad();
    root->backward_done = true;
    root->ensure_grad();
    root->grad[0] = 1.0;
    for (auto it = graph.order.rbegin(); it != graph.order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

}  // namespace debias::ad
