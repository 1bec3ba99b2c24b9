#include "voxdream/nn/layers.hpp"

#include <cmath>

namespace voxdream::nn {

LayerSpec& LayerStack::dense(int in, int out) {
    const std::string n = "stack." + std::to_string(idx_++) + ".dense";
    LayerSpec l{LayerKind::dense, in, out};
    l.params = {&ps_->add(n + ".w", fanin_uniform_init(in, out, *rng_)), &ps_->add(n + ".b", Tensor({out}))};
    layers_.push_back(l);
    return layers_.back();
}

LayerSpec& LayerStack::layer_norm(int dim) {
    const std::string n = "stack." + std::to_string(idx_++) + ".ln";
    LayerSpec l{LayerKind::layer_norm, dim, dim};
    l.params = {&ps_->add(n + ".g", Tensor({dim}, 1.0)), &ps_->add(n + ".b", Tensor({dim}))};
    layers_.push_back(l);
    return layers_.back();
}

LayerSpec& LayerStack::embedding_table(int vocab, int dim) {
    const std::string n = "stack." + std::to_string(idx_++) + ".emb";
    LayerSpec l{LayerKind::embedding_table, vocab, dim};
    l.params = {&ps_->add(n + ".e", gaussian_init({vocab, dim}, 0.02, *rng_))};
    layers_.push_back(l);
    return layers_.back();
}

LayerSpec& LayerStack::causal_self_attention(int dim, int heads) {
    if (dim % heads != 0) throw std::invalid_argument("attention heads must divide model dim");
    const std::string n = "stack." + std::to_string(idx_++) + ".attn";
    LayerSpec l{LayerKind::causal_self_attention, dim, dim};
    l.heads = heads;
    for (const char* part : {"q", "k", "v", "o"}) {
        l.params.push_back(&ps_->add(n + "." + part + ".w", fanin_uniform_init(dim, dim, *rng_)));
        l.params.push_back(&ps_->add(n + "." + part + ".b", Tensor({dim})));
    }
    layers_.push_back(l);
    return layers_.back();
}

LayerSpec& LayerStack::softmax_head(int in, int out) {
    const std::string n = "stack." + std::to_string(idx_++) + ".head";
    LayerSpec l{LayerKind::softmax_head, in, out};
    l.params = {&ps_->add(n + ".w", fanin_uniform_init(in, out, *rng_)), &ps_->add(n + ".b", Tensor({out}))};
    layers_.push_back(l);
    return layers_.back();
}

namespace {

Dense as_dense(const LayerSpec& l, int wi, int bi) {
    Dense d;
    d.w = l.params[wi];
    d.b = l.params[bi];
    d.in = l.params[wi]->value.shape[0];
    d.out = l.params[wi]->value.shape[1];
    return d;
}

}  // namespace

Node* LayerStack::forward(Graph& g, Node* input) const {
    Node* x = input;
    for (const auto& l : layers_) {
        switch (l.kind) {
            case LayerKind::dense: {
                if (x->val.shape.back() != l.in)
                    throw std::invalid_argument("forward: input shape " + shape_str(x->val.shape) +
                                                " does not match dense layer " + shape_str({l.in, l.out}));
                x = as_dense(l, 0, 1)(g, x);
                break;
            }
            case LayerKind::layer_norm:
                x = g.layer_norm(x, g.param(*l.params[0]), g.param(*l.params[1]));
                break;
            case LayerKind::embedding_table: {
                std::vector<int> ids;
                ids.reserve(static_cast<size_t>(x->val.size()));
                for (double v : x->val.v) ids.push_back(static_cast<int>(v));
                x = g.gather_rows(g.param(*l.params[0]), ids);
                break;
            }
            case LayerKind::causal_self_attention: {
                Attention a;
                a.q = as_dense(l, 0, 1);
                a.k = as_dense(l, 2, 3);
                a.v = as_dense(l, 4, 5);
                a.o = as_dense(l, 6, 7);
                a.dim = l.in;
                a.heads = l.heads;
                x = attention_forward(g, a, x, x, /*causal=*/true);
                break;
            }
            case LayerKind::softmax_head: {
                if (x->val.shape.back() != l.in)
                    throw std::invalid_argument("forward: input shape " + shape_str(x->val.shape) +
                                                " does not match head layer " + shape_str({l.in, l.out}));
                x = g.softmax_last(as_dense(l, 0, 1)(g, x));
                break;
            }
            default:
                throw std::invalid_argument("forward: unsupported layer kind in stack");
        }
    }
    if (!x->val.all_finite()) throw std::runtime_error("forward: non-finite output");
    return x;
}

Attention make_attention(ParamStore& ps, const std::string& name, int dim, int heads, Rng& rng) {
    if (dim % heads != 0) throw std::invalid_argument("attention heads must divide model dim");
    Attention a;
    a.dim = dim;
    a.heads = heads;
    a.q = make_dense(ps, name + ".q", dim, dim, rng);
    a.k = make_dense(ps, name + ".k", dim, dim, rng);
    a.v = make_dense(ps, name + ".v", dim, dim, rng);
    a.o = make_dense(ps, name + ".o", dim, dim, rng);
    return a;
}

Node* attention_forward(Graph& g, const Attention& a, Node* x, Node* kv, bool causal) {
    const int T = x->val.shape[0];
    const int S = kv->val.shape[0];
    const int dh = a.dim / a.heads;
    Node* q = a.q(g, x);
    Node* k = a.k(g, kv);
    Node* v = a.v(g, kv);

    Node* mask = nullptr;
    if (causal) {
        Tensor m({T, S});
        for (int i = 0; i < T; ++i)
            for (int j = 0; j < S; ++j) m[i * S + j] = j > i ? -1e9 : 0.0;
        mask = g.constant(std::move(m));
    }

    auto head_slice = [&](Node* t, int rows, int h) {
        // [rows,dim] -> columns [h*dh, (h+1)*dh)
        Node* tt = g.transpose(t);                   // [dim,rows]
        Node* s = g.slice_rows(tt, h * dh, dh);      // [dh,rows]
        return g.transpose(s);                       // [rows,dh]
    };

    std::vector<Node*> heads;
    const double scl = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int h = 0; h < a.heads; ++h) {
        Node* qh = head_slice(q, T, h);
        Node* kh = head_slice(k, S, h);
        Node* vh = head_slice(v, S, h);
        Node* scores = g.scale(g.matmul(qh, g.transpose(kh)), scl);  // [T,S]
        if (mask) scores = g.add(scores, mask);
        Node* w = g.softmax_last(scores);
        heads.push_back(g.matmul(w, vh));  // [T,dh]
    }
    Node* cat = a.heads == 1 ? heads[0] : g.concat_last(heads);
    return a.o(g, cat);
}

TransformerBlock make_transformer_block(ParamStore& ps, const std::string& name, int dim, int heads, int ff, Rng& rng) {
    TransformerBlock b;
    b.attn = make_attention(ps, name + ".attn", dim, heads, rng);
    b.fc1 = make_dense(ps, name + ".fc1", dim, ff, rng);
    b.fc2 = make_dense(ps, name + ".fc2", ff, dim, rng);
    b.ln1_g = &ps.add(name + ".ln1.g", Tensor({dim}, 1.0));
    b.ln1_b = &ps.add(name + ".ln1.b", Tensor({dim}));
    b.ln2_g = &ps.add(name + ".ln2.g", Tensor({dim}, 1.0));
    b.ln2_b = &ps.add(name + ".ln2.b", Tensor({dim}));
    return b;
}

Node* transformer_block_forward(Graph& g, const TransformerBlock& b, Node* x, bool causal) {
    Node* h = g.layer_norm(x, g.param(*b.ln1_g), g.param(*b.ln1_b));
    x = g.add(x, attention_forward(g, b.attn, h, h, causal));
    Node* h2 = g.layer_norm(x, g.param(*b.ln2_g), g.param(*b.ln2_b));
    return g.add(x, b.fc2(g, g.tanh_op(b.fc1(g, h2))));
}

Node* Mlp::operator()(Graph& g, Node* x) const {
    for (size_t i = 0; i < layers.size(); ++i) {
        x = layers[i](g, x);
        if (i + 1 < layers.size()) {
            if (i < norms.size() && norms[i].first)
                x = g.layer_norm(x, g.param(*norms[i].first), g.param(*norms[i].second));
            x = g.tanh_op(x);
        }
    }
    return x;
}

Mlp make_mlp(ParamStore& ps, const std::string& name, const std::vector<int>& dims, Rng& rng, bool layer_norm) {
    Mlp m;
    for (size_t i = 0; i + 1 < dims.size(); ++i) {
        m.layers.push_back(make_dense(ps, name + ".l" + std::to_string(i), dims[i], dims[i + 1], rng));
        if (layer_norm && i + 2 < dims.size()) {
            m.norms.emplace_back(&ps.add(name + ".ln" + std::to_string(i) + ".g", Tensor({dims[i + 1]}, 1.0)),
                                 &ps.add(name + ".ln" + std::to_string(i) + ".b", Tensor({dims[i + 1]})));
        } else {
            m.norms.emplace_back(nullptr, nullptr);
        }
    }
    return m;
}

}  // namespace voxdream::nn
