#include "voxdream/nn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "voxdream/nn/rng.hpp"

namespace voxdream::nn {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

bool Tensor::all_finite() const {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// broadcast class of b against a: 0 same, 1 scalar, 2 suffix
int bcast_kind(const Shape& a, const Shape& b, const char* op) {
    if (a == b) return 0;
    if (shape_size(b) == 1) return 1;
    const std::int64_t na = shape_size(a), nb = shape_size(b);
    if (nb > 0 && na % nb == 0 && b.size() <= a.size()) {
        bool suffix = true;
        for (size_t i = 0; i < b.size(); ++i)
            if (b[b.size() - 1 - i] != a[a.size() - 1 - i]) suffix = false;
        if (suffix) return 2;
    }
    shape_error(op, a, b);
}

}  // namespace

Node* Graph::make(Tensor val, std::vector<Node*> parents) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.val = std::move(val);
    for (Node* p : parents)
        if (p->needs_grad) n.needs_grad = true;
    return &n;
}

Node* Graph::leaf(Tensor t, bool needs_grad) {
    Node* n = make(std::move(t), {});
    n->needs_grad = needs_grad;
    return n;
}

Node* Graph::param(Param& p) {
    Node* n = make(p.value, {});
    n->needs_grad = true;
    n->param = &p;
    return n;
}

Node* Graph::add(Node* a, Node* b) {
    const int k = bcast_kind(a->val.shape, b->val.shape, "add");
    Tensor out = a->val;
    const std::int64_t nb = b->val.size();
    if (k == 0) {
        for (std::int64_t i = 0; i < out.size(); ++i) out[i] += b->val[i];
    } else if (k == 1) {
        for (std::int64_t i = 0; i < out.size(); ++i) out[i] += b->val[0];
    } else {
        for (std::int64_t i = 0; i < out.size(); ++i) out[i] += b->val[i % nb];
    }
    Node* n = make(std::move(out), {a, b});
    n->backward = [n, a, b, k, nb] {
        if (a->needs_grad) {
            auto& ga = a->g();
            for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += n->grad[i];
        }
        if (b->needs_grad) {
            auto& gb = b->g();
            if (k == 0)
                for (std::int64_t i = 0; i < gb.size(); ++i) gb[i] += n->grad[i];
            else if (k == 1)
                for (std::int64_t i = 0; i < n->grad.size(); ++i) gb[0] += n->grad[i];
            else
                for (std::int64_t i = 0; i < n->grad.size(); ++i) gb[i % nb] += n->grad[i];
        }
    };
    return n;
}

Node* Graph::sub(Node* a, Node* b) { return add(a, scale(b, -1.0)); }

Node* Graph::mul(Node* a, Node* b) {
    const int k = bcast_kind(a->val.shape, b->val.shape, "mul");
    Tensor out = a->val;
    const std::int64_t nb = b->val.size();
    for (std::int64_t i = 0; i < out.size(); ++i)
        out[i] *= (k == 0) ? b->val[i] : (k == 1 ? b->val[0] : b->val[i % nb]);
    Node* n = make(std::move(out), {a, b});
    n->backward = [n, a, b, k, nb] {
        if (a->needs_grad) {
            auto& ga = a->g();
            for (std::int64_t i = 0; i < ga.size(); ++i)
                ga[i] += n->grad[i] * ((k == 0) ? b->val[i] : (k == 1 ? b->val[0] : b->val[i % nb]));
        }
        if (b->needs_grad) {
            auto& gb = b->g();
            for (std::int64_t i = 0; i < n->grad.size(); ++i) {
                const std::int64_t j = (k == 0) ? i : (k == 1 ? 0 : i % nb);
                gb[j] += n->grad[i] * a->val[i];
            }
        }
    };
    return n;
}

Node* Graph::div(Node* a, Node* b) {
    const int k = bcast_kind(a->val.shape, b->val.shape, "div");
    if (k == 2) shape_error("div", a->val.shape, b->val.shape);
    Tensor out = a->val;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] /= (k == 0) ? b->val[i] : b->val[0];
    Node* n = make(std::move(out), {a, b});
    n->backward = [n, a, b, k] {
        if (a->needs_grad) {
            auto& ga = a->g();
            for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += n->grad[i] / ((k == 0) ? b->val[i] : b->val[0]);
        }
        if (b->needs_grad) {
            auto& gb = b->g();
            for (std::int64_t i = 0; i < n->grad.size(); ++i) {
                const double bv = (k == 0) ? b->val[i] : b->val[0];
                gb[(k == 0) ? i : 0] += -n->grad[i] * a->val[i] / (bv * bv);
            }
        }
    };
    return n;
}

Node* Graph::scale(Node* a, double c) {
    Tensor out = a->val;
    for (auto& x : out.v) x *= c;
    Node* n = make(std::move(out), {a});
    n->backward = [n, a, c] {
        if (!a->needs_grad) return;
        auto& ga = a->g();
        for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += c * n->grad[i];
    };
    return n;
}

Node* Graph::add_const(Node* a, double c) {
    Tensor out = a->val;
    for (auto& x : out.v) x += c;
    Node* n = make(std::move(out), {a});
    n->backward = [n, a] {
        if (!a->needs_grad) return;
        auto& ga = a->g();
        for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += n->grad[i];
    };
    return n;
}

Node* Graph::matmul(Node* a, Node* b) {
    if (a->val.shape.size() != 2 || b->val.shape.size() != 2 || a->val.shape[1] != b->val.shape[0])
        shape_error("matmul", a->val.shape, b->val.shape);
    const int m = a->val.shape[0], k = a->val.shape[1], p = b->val.shape[1];
    Tensor out({m, p});
    for (int i = 0; i < m; ++i)
        for (int kk = 0; kk < k; ++kk) {
            const double av = a->val[i * k + kk];
            if (av == 0.0) continue;
            const double* brow = &b->val.v[static_cast<size_t>(kk) * p];
            double* orow = &out.v[static_cast<size_t>(i) * p];
            for (int j = 0; j < p; ++j) orow[j] += av * brow[j];
        }
    Node* n = make(std::move(out), {a, b});
    n->backward = [n, a, b, m, k, p] {
        if (a->needs_grad) {
            auto& ga = a->g();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < p; ++j) {
                    const double gv = n->grad[i * p + j];
                    if (gv == 0.0) continue;
                    const double* brow = &b->val.v[0];
                    for (int kk = 0; kk < k; ++kk) ga[i * k + kk] += gv * brow[kk * p + j];
                }
        }
        if (b->needs_grad) {
            auto& gb = b->g();
            for (int i = 0; i < m; ++i)
                for (int kk = 0; kk < k; ++kk) {
                    const double av = a->val[i * k + kk];
                    if (av == 0.0) continue;
                    const double* grow = &n->grad.v[static_cast<size_t>(i) * p];
                    double* gbrow = &gb.v[static_cast<size_t>(kk) * p];
                    for (int j = 0; j < p; ++j) gbrow[j] += av * grow[j];
                }
        }
    };
    return n;
}

Node* Graph::transpose(Node* a) {
    if (a->val.shape.size() != 2) throw std::invalid_argument("transpose: need 2-D");
    const int m = a->val.shape[0], k = a->val.shape[1];
    Tensor out({k, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < k; ++j) out[j * m + i] = a->val[i * k + j];
    Node* n = make(std::move(out), {a});
    n->backward = [n, a, m, k] {
        if (!a->needs_grad) return;
        auto& ga = a->g();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < k; ++j) ga[i * k + j] += n->grad[j * m + i];
    };
    return n;
}

Node* Graph::reshape(Node* a, Shape s) {
    if (shape_size(s) != a->val.size()) shape_error("reshape", a->val.shape, s);
    Tensor out(std::move(s), a->val.v);
    Node* n = make(std::move(out), {a});
    n->backward = [n, a] {
        if (!a->needs_grad) return;
        auto& ga = a->g();
        for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += n->grad[i];
    };
    return n;
}

Node* Graph::concat_last(const std::vector<Node*>& xs) {
    const Shape& s0 = xs[0]->val.shape;
    std::int64_t rows = 1;
    for (size_t i = 0; i + 1 < s0.size(); ++i) rows *= s0[i];
    int total = 0;
    std::vector<int> widths;
    for (Node* x : xs) {
        const Shape& s = x->val.shape;
        for (size_t i = 0; i + 1 < s0.size(); ++i)
            if (s[i] != s0[i]) shape_error("concat_last", s0, s);
        widths.push_back(s.back());
        total += s.back();
    }
    Shape os = s0;
    os.back() = total;
    Tensor out(os);
    std::int64_t off = 0;
    for (size_t xi = 0; xi < xs.size(); ++xi) {
        const int w = widths[xi];
        for (std::int64_t r = 0; r < rows; ++r)
            for (int c = 0; c < w; ++c) out[r * total + off + c] = xs[xi]->val[r * w + c];
        off += w;
    }
    Node* n = make(std::move(out), xs);
    auto parents = xs;
    n->backward = [n, parents, widths, rows, total] {
        std::int64_t off2 = 0;
        for (size_t xi = 0; xi < parents.size(); ++xi) {
            const int w = widths[xi];
            if (parents[xi]->needs_grad) {
                auto& g = parents[xi]->g();
                for (std::int64_t r = 0; r < rows; ++r)
                    for (int c = 0; c < w; ++c) g[r * w + c] += n->grad[r * total + off2 + c];
            }
            off2 += w;
        }
    };
    return n;
}

Node* Graph::concat_rows(const std::vector<Node*>& xs) {
    Shape s0 = xs[0]->val.shape;
    std::int64_t total = 0;
    for (Node* x : xs) total += x->val.size();
    Shape os = s0;
    std::int64_t inner = shape_size(s0) / s0[0];
    os[0] = static_cast<int>(total / inner);
    Tensor out(os);
    std::int64_t off = 0;
    for (Node* x : xs) {
        for (std::int64_t i = 0; i < x->val.size(); ++i) out[off + i] = x->val[i];
        off += x->val.size();
    }
    Node* n = make(std::move(out), xs);
    auto parents = xs;
    n->backward = [n, parents] {
        std::int64_t off2 = 0;
        for (Node* p : parents) {
            if (p->needs_grad) {
                auto& g = p->g();
                for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n->grad[off2 + i];
            }
            off2 += p->val.size();
        }
    };
    return n;
}

Node* Graph::slice_rows(Node* a, int start, int len) {
    const std::int64_t inner = a->val.size() / a->val.shape[0];
    Shape os = a->val.shape;
    os[0] = len;
    Tensor out(os);
    for (std::int64_t i = 0; i < len * inner; ++i) out[i] = a->val[start * inner + i];
    Node* n = make(std::move(out), {a});
    n->backward = [n, a, start, len, inner] {
        if (!a->needs_grad) return;
        auto& g = a->g();
        for (std::int64_t i = 0; i < len * inner; ++i) g[start * inner + i] += n->grad[i];
    };
    return n;
}

Node* Graph::gather_rows(Node* a, const std::vector<int>& idx) {
    const std::int64_t inner = a->val.size() / a->val.shape[0];
    Shape os = a->val.shape;
    os[0] = static_cast<int>(idx.size());
    Tensor out(os);
    for (size_t r = 0; r < idx.size(); ++r)
        for (std::int64_t c = 0; c < inner; ++c) out[r * inner + c] = a->val[idx[r] * inner + c];
    Node* n = make(std::move(out), {a});
    n->backward = [n, a, idx, inner] {
        if (!a->needs_grad) return;
        auto& g = a->g();
        for (size_t r = 0; r < idx.size(); ++r)
            for (std::int64_t c = 0; c < inner; ++c) g[idx[r] * inner + c] += n->grad[r * inner + c];
    };
    return n;
}

Node* Graph::mean_rows(Node* a) {
    const int rows = a->val.shape[0];
    const std::int64_t inner = a->val.size() / rows;
    Shape os(a->val.shape.begin() + 1, a->val.shape.end());
    if (os.empty()) os = {1};
    Tensor out(os);
    for (int r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < inner; ++c) out[c] += a->val[r * inner + c] / rows;
    Node* n = make(std::move(out), {a});
    n->backward = [n, a, rows, inner] {
        if (!a->needs_grad) return;
        auto& g = a->g();
        for (int r = 0; r < rows; ++r)
            for (std::int64_t c = 0; c < inner; ++c) g[r * inner + c] += n->grad[c] / rows;
    };
    return n;
}

Node* Graph::relu(Node* a) {
    Tensor out = a->val;
    for (auto& x : out.v) x = x > 0 ? x : 0.0;
    Node* n = make(std::move(out), {a});
    n->backward = [n, a] {
        if (!a->needs_grad) return;
        auto& g = a->g();
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += (a->val[i] > 0 ? n->grad[i] : 0.0);
    };
    return n;
}

Node* Graph::tanh_op(Node* a) {
    Tensor out = a->val;
    for (auto& x : out.v) x = std::tanh(x);
    Node* n = make(std::move(out), {a});
    n->backward = [n, a] {
        if (!a->needs_grad) return;
        auto& g = a->g();
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += (1.0 - n->val[i] * n->val[i]) * n->grad[i];
    };
    return n;
}

Node* Graph::exp_op(Node* a) {
    Tensor out = a->val;
    for (auto& x : out.v) x = std::exp(x);
    Node* n = make(std::move(out), {a});
    n->backward = [n, a] {
        if (!a->needs_grad) return;
        auto& g = a->g();
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n->val[i] * n->grad[i];
    };
    return n;
}

Node* Graph::log_op(Node* a) {
    Tensor out = a->val;
    for (auto& x : out.v) x = std::log(x);
    Node* n = make(std::move(out), {a});
    n->backward = [n, a] {
        if (!a->needs_grad) return;
        auto& g = a->g();
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n->grad[i] / a->val[i];
    };
    return n;
}

Node* Graph::sqrt_op(Node* a) {
    Tensor out = a->val;
    for (auto& x : out.v) x = std::sqrt(x);
    Node* n = make(std::move(out), {a});
    n->backward = [n, a] {
        if (!a->needs_grad) return;
        auto& g = a->g();
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += 0.5 / n->val[i] * n->grad[i];
    };
    return n;
}

Node* Graph::square(Node* a) {
    Tensor out = a->val;
    for (auto& x : out.v) x = x * x;
    Node* n = make(std::move(out), {a});
    n->backward = [n, a] {
        if (!a->needs_grad) return;
        auto& g = a->g();
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += 2.0 * a->val[i] * n->grad[i];
    };
    return n;
}

Node* Graph::layer_norm_raw(Node* a, double eps) {
    const int d = a->val.shape.back();
    const std::int64_t rows = a->val.size() / d;
    Tensor out(a->val.shape);
    Tensor invstd({static_cast<int>(rows)});
    Tensor mean({static_cast<int>(rows)});
    for (std::int64_t r = 0; r < rows; ++r) {
        double mu = 0;
        for (int c = 0; c < d; ++c) mu += a->val[r * d + c];
        mu /= d;
        double var = 0;
        for (int c = 0; c < d; ++c) {
            const double dx = a->val[r * d + c] - mu;
            var += dx * dx;
        }
        var /= d;
        const double is = 1.0 / std::sqrt(var + eps);
        mean[r] = mu;
        invstd[r] = is;
        for (int c = 0; c < d; ++c) out[r * d + c] = (a->val[r * d + c] - mu) * is;
    }
    Node* n = make(std::move(out), {a});
    n->backward = [n, a, d, rows, mean, invstd] {
        if (!a->needs_grad) return;
        auto& g = a->g();
        for (std::int64_t r = 0; r < rows; ++r) {
            double gsum = 0, gxsum = 0;
            for (int c = 0; c < d; ++c) {
                gsum += n->grad[r * d + c];
                gxsum += n->grad[r * d + c] * n->val[r * d + c];
            }
            for (int c = 0; c < d; ++c) {
                const double xhat = n->val[r * d + c];
                g[r * d + c] += invstd[r] * (n->grad[r * d + c] - gsum / d - xhat * gxsum / d);
            }
        }
    };
    return n;
}

Node* Graph::layer_norm(Node* a, Node* gain, Node* bias, double eps) {
    Node* raw = layer_norm_raw(a, eps);
    return add(mul(raw, gain), bias);
}

Node* Graph::softmax_last(Node* a) {
    const int d = a->val.shape.back();
    const std::int64_t rows = a->val.size() / d;
    Tensor out(a->val.shape);
    for (std::int64_t r = 0; r < rows; ++r) {
        double mx = a->val[r * d];
        for (int c = 1; c < d; ++c) mx = std::max(mx, a->val[r * d + c]);
        double z = 0;
        for (int c = 0; c < d; ++c) {
            out[r * d + c] = std::exp(a->val[r * d + c] - mx);
            z += out[r * d + c];
        }
        for (int c = 0; c < d; ++c) out[r * d + c] /= z;
    }
    Node* n = make(std::move(out), {a});
    n->backward = [n, a, d, rows] {
        if (!a->needs_grad) return;
        auto& g = a->g();
        for (std::int64_t r = 0; r < rows; ++r) {
            double dotv = 0;
            for (int c = 0; c < d; ++c) dotv += n->grad[r * d + c] * n->val[r * d + c];
            for (int c = 0; c < d; ++c) g[r * d + c] += n->val[r * d + c] * (n->grad[r * d + c] - dotv);
        }
    };
    return n;
}

Node* Graph::log_softmax_last(Node* a) {
    const int d = a->val.shape.back();
    const std::int64_t rows = a->val.size() / d;
    Tensor out(a->val.shape);
    for (std::int64_t r = 0; r < rows; ++r) {
        double mx = a->val[r * d];
        for (int c = 1; c < d; ++c) mx = std::max(mx, a->val[r * d + c]);
        double z = 0;
        for (int c = 0; c < d; ++c) z += std::exp(a->val[r * d + c] - mx);
        const double lz = mx + std::log(z);
        for (int c = 0; c < d; ++c) out[r * d + c] = a->val[r * d + c] - lz;
    }
    Node* n = make(std::move(out), {a});
    n->backward = [n, a, d, rows] {
        if (!a->needs_grad) return;
        auto& g = a->g();
        for (std::int64_t r = 0; r < rows; ++r) {
            double gsum = 0;
            for (int c = 0; c < d; ++c) gsum += n->grad[r * d + c];
            for (int c = 0; c < d; ++c) g[r * d + c] += n->grad[r * d + c] - std::exp(n->val[r * d + c]) * gsum;
        }
    };
    return n;
}

Node* Graph::cross_entropy_sum(Node* logits, const std::vector<int>& targets) {
    Node* lsm = log_softmax_last(logits);
    const int d = logits->val.shape.back();
    Tensor out({1});
    for (size_t r = 0; r < targets.size(); ++r) out[0] -= lsm->val[static_cast<std::int64_t>(r) * d + targets[r]];
    Node* n = make(std::move(out), {lsm});
    n->backward = [n, lsm, targets, d] {
        if (!lsm->needs_grad) return;
        auto& g = lsm->g();
        for (size_t r = 0; r < targets.size(); ++r) g[static_cast<std::int64_t>(r) * d + targets[r]] -= n->grad[0];
    };
    return n;
}

Node* Graph::sum_all(Node* a) {
    Tensor out({1});
    for (double x : a->val.v) out[0] += x;
    Node* n = make(std::move(out), {a});
    n->backward = [n, a] {
        if (!a->needs_grad) return;
        auto& g = a->g();
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n->grad[0];
    };
    return n;
}

Node* Graph::mean_all(Node* a) { return scale(sum_all(a), 1.0 / static_cast<double>(a->val.size())); }

Node* Graph::conv3d(Node* x, Node* k, Node* b, int stride, int pad) {
    const Shape& xs = x->val.shape;  // [D,H,W,Ci]
    const Shape& ks = k->val.shape;  // [kd,kh,kw,Ci,Co]
    if (xs.size() != 4 || ks.size() != 5 || xs[3] != ks[3]) shape_error("conv3d", xs, ks);
    const int D = xs[0], H = xs[1], W = xs[2], Ci = xs[3];
    const int kd = ks[0], kh = ks[1], kw = ks[2], Co = ks[4];
    const int Do = (D + 2 * pad - kd) / stride + 1;
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    Tensor out({Do, Ho, Wo, Co});
    for (int od = 0; od < Do; ++od)
        for (int oh = 0; oh < Ho; ++oh)
            for (int ow = 0; ow < Wo; ++ow) {
                double* optr = &out.v[((static_cast<size_t>(od) * Ho + oh) * Wo + ow) * Co];
                for (int c = 0; c < Co; ++c) optr[c] = b->val[c];
                for (int zd = 0; zd < kd; ++zd) {
                    const int id = od * stride + zd - pad;
                    if (id < 0 || id >= D) continue;
                    for (int zh = 0; zh < kh; ++zh) {
                        const int ih = oh * stride + zh - pad;
                        if (ih < 0 || ih >= H) continue;
                        for (int zw = 0; zw < kw; ++zw) {
                            const int iw = ow * stride + zw - pad;
                            if (iw < 0 || iw >= W) continue;
                            const double* xptr = &x->val.v[((static_cast<size_t>(id) * H + ih) * W + iw) * Ci];
                            const double* kptr = &k->val.v[(((static_cast<size_t>(zd) * kh + zh) * kw + zw) * Ci) * Co];
                            for (int ci = 0; ci < Ci; ++ci) {
                                const double xv = xptr[ci];
                                if (xv == 0.0) continue;
                                const double* kr = kptr + static_cast<size_t>(ci) * Co;
                                for (int c = 0; c < Co; ++c) optr[c] += xv * kr[c];
                            }
                        }
                    }
                }
            }
    Node* n = make(std::move(out), {x, k, b});
    n->backward = [n, x, k, b, D, H, W, Ci, kd, kh, kw, Co, Do, Ho, Wo, stride, pad] {
        Tensor* gx = x->needs_grad ? &x->g() : nullptr;
        Tensor* gk = k->needs_grad ? &k->g() : nullptr;
        Tensor* gb = b->needs_grad ? &b->g() : nullptr;
        for (int od = 0; od < Do; ++od)
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow) {
                    const double* gptr = &n->grad.v[((static_cast<size_t>(od) * Ho + oh) * Wo + ow) * Co];
                    if (gb)
                        for (int c = 0; c < Co; ++c) gb->v[c] += gptr[c];
                    for (int zd = 0; zd < kd; ++zd) {
                        const int id = od * stride + zd - pad;
                        if (id < 0 || id >= D) continue;
                        for (int zh = 0; zh < kh; ++zh) {
                            const int ih = oh * stride + zh - pad;
                            if (ih < 0 || ih >= H) continue;
                            for (int zw = 0; zw < kw; ++zw) {
                                const int iw = ow * stride + zw - pad;
                                if (iw < 0 || iw >= W) continue;
                                const size_t xoff = ((static_cast<size_t>(id) * H + ih) * W + iw) * Ci;
                                const size_t koff = ((static_cast<size_t>(zd) * kh + zh) * kw + zw) * Ci * Co;
                                for (int ci = 0; ci < Ci; ++ci) {
                                    const double xv = x->val.v[xoff + ci];
                                    const double* kr = &k->val.v[koff + static_cast<size_t>(ci) * Co];
                                    double acc = 0;
                                    for (int c = 0; c < Co; ++c) {
                                        acc += gptr[c] * kr[c];
                                        if (gk) gk->v[koff + static_cast<size_t>(ci) * Co + c] += xv * gptr[c];
                                    }
                                    if (gx) gx->v[xoff + ci] += acc;
                                }
                            }
                        }
                    }
                }
    };
    return n;
}

Node* Graph::upsample3d(Node* x, int dt, int ht, int wt) {
    const Shape& xs = x->val.shape;
    const int D = xs[0], H = xs[1], W = xs[2], C = xs[3];
    Tensor out({dt, ht, wt, C});
    auto src = [](int i, int n_in, int n_out) { return i * n_in / n_out; };
    for (int od = 0; od < dt; ++od)
        for (int oh = 0; oh < ht; ++oh)
            for (int ow = 0; ow < wt; ++ow) {
                const int id = src(od, D, dt), ih = src(oh, H, ht), iw = src(ow, W, wt);
                for (int c = 0; c < C; ++c)
                    out[((static_cast<std::int64_t>(od) * ht + oh) * wt + ow) * C + c] =
                        x->val[((static_cast<std::int64_t>(id) * H + ih) * W + iw) * C + c];
            }
    Node* n = make(std::move(out), {x});
    n->backward = [n, x, D, H, W, C, dt, ht, wt, src] {
        if (!x->needs_grad) return;
        auto& g = x->g();
        for (int od = 0; od < dt; ++od)
            for (int oh = 0; oh < ht; ++oh)
                for (int ow = 0; ow < wt; ++ow) {
                    const int id = src(od, D, dt), ih = src(oh, H, ht), iw = src(ow, W, wt);
                    for (int c = 0; c < C; ++c)
                        g[((static_cast<std::int64_t>(id) * H + ih) * W + iw) * C + c] +=
                            n->grad[((static_cast<std::int64_t>(od) * ht + oh) * wt + ow) * C + c];
                }
    };
    return n;
}

Node* Graph::normalize(Node* a, double eps) {
    Node* nrm = sqrt_op(add_const(sum_all(square(a)), eps));
    return div(a, nrm);
}

void Graph::backward(Node* root) {
    if (root->val.size() != 1) throw std::invalid_argument("backward: root must be scalar");
    root->g()[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node& n = *it;
        if (!n.needs_grad || n.grad.v.empty()) continue;
        if (n.backward) n.backward();
        if (n.param) {
            for (std::int64_t i = 0; i < n.grad.size(); ++i) n.param->grad[i] += n.grad[i];
        }
    }
}

Node* Dense::operator()(Graph& g, Node* x) const {
    Shape orig = x->val.shape;
    const std::int64_t rows = x->val.size() / in;
    Node* flat = g.reshape(x, {static_cast<int>(rows), in});
    Node* y = g.add(g.matmul(flat, g.param(*w)), g.param(*b));
    Shape os = orig;
    os.back() = out;
    return g.reshape(y, os);
}

Tensor fanin_uniform_init(int in, int out, Rng& rng) {
    Tensor t({in, out});
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& x : t.v) x = rng.uniform(-bound, bound);
    return t;
}

Tensor gaussian_init(Shape s, double sigma, Rng& rng) {
    Tensor t(std::move(s));
    for (auto& x : t.v) x = sigma * rng.normal();
    return t;
}

Dense make_dense(ParamStore& ps, const std::string& name, int in, int out, Rng& rng) {
    Dense d;
    d.in = in;
    d.out = out;
    d.w = &ps.add(name + ".w", fanin_uniform_init(in, out, rng));
    d.b = &ps.add(name + ".b", Tensor({out}));
    return d;
}

}  // namespace voxdream::nn
