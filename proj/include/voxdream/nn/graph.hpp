#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxdream/nn/tensor.hpp"

namespace voxdream::nn {

// Named trainable tensor plus its accumulated gradient and optimizer state.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m, v;  // AdamW moments

    explicit Param(std::string n, Tensor init)
        : name(std::move(n)), value(std::move(init)), grad(value.shape), m(value.shape), v(value.shape) {}

    void zero_grad() { std::fill(grad.v.begin(), grad.v.end(), 0.0); }
};

struct ParamStore {
    std::deque<Param> items;

    Param& add(const std::string& name, Tensor init) {
        items.emplace_back(name, std::move(init));
        return items.back();
    }
    Param* find(const std::string& name) {
        for (auto& p : items)
            if (p.name == name) return &p;
        return nullptr;
    }
    std::vector<Param*> all() {
        std::vector<Param*> out;
        for (auto& p : items) out.push_back(&p);
        return out;
    }
    std::int64_t count() const {
        std::int64_t n = 0;
        for (const auto& p : items) n += p.value.size();
        return n;
    }
    void zero_grads() {
        for (auto& p : items) p.zero_grad();
    }
};

struct Node {
    Tensor val;
    Tensor grad;  // allocated lazily
    bool needs_grad = false;
    std::function<void()> backward;  // accumulates into parents' grads
    Param* param = nullptr;          // set for parameter leaves

    Tensor& g() {
        if (grad.v.empty()) grad = Tensor(val.shape);
        return grad;
    }
};

// Dynamic tape. Nodes are whole-tensor operations with hand-written backward
// passes; backward() walks the tape in reverse creation order.
class Graph {
  public:
    Node* leaf(Tensor t, bool needs_grad = false);
    Node* constant(Tensor t) { return leaf(std::move(t), false); }
    Node* param(Param& p);

    // elementwise / broadcast arithmetic. b may be same-shape, scalar [1], or a
    // suffix of a's shape (row broadcast).
    Node* add(Node* a, Node* b);
    Node* sub(Node* a, Node* b);
    Node* mul(Node* a, Node* b);
    Node* div(Node* a, Node* b);  // b same-shape or scalar
    Node* scale(Node* a, double c);
    Node* add_const(Node* a, double c);

    Node* matmul(Node* a, Node* b);  // [m,k]x[k,n]
    Node* transpose(Node* a);        // 2-D
    Node* reshape(Node* a, Shape s);
    Node* concat_last(const std::vector<Node*>& xs);
    Node* concat_rows(const std::vector<Node*>& xs);  // along axis 0
    Node* slice_rows(Node* a, int start, int len);
    Node* gather_rows(Node* a, const std::vector<int>& idx);
    Node* mean_rows(Node* a);  // [T,d] -> [d]

    Node* relu(Node* a);
    Node* tanh_op(Node* a);
    Node* exp_op(Node* a);
    Node* log_op(Node* a);
    Node* sqrt_op(Node* a);
    Node* square(Node* a);

    // layer norm over the last dim; raw variant has no gain/bias.
    Node* layer_norm_raw(Node* a, double eps = 1e-6);
    Node* layer_norm(Node* a, Node* gain, Node* bias, double eps = 1e-6);

    Node* softmax_last(Node* a);
    Node* log_softmax_last(Node* a);
    // sum over rows of -log softmax(logits)[target]; logits [T,V]
    Node* cross_entropy_sum(Node* logits, const std::vector<int>& targets);

    Node* sum_all(Node* a);
    Node* mean_all(Node* a);

    // x [D,H,W,Ci], k [kd,kh,kw,Ci,Co], b [Co]; zero padding.
    Node* conv3d(Node* x, Node* k, Node* b, int stride, int pad);
    // nearest-neighbour resize to (dt,ht,wt), index map floor(i*src/dst)
    Node* upsample3d(Node* x, int dt, int ht, int wt);

    // unit-normalize a flat vector (adds eps inside the sqrt)
    Node* normalize(Node* a, double eps = 1e-12);
    Node* dot(Node* a, Node* b) { return sum_all(mul(a, b)); }

    void backward(Node* root);

    size_t node_count() const { return nodes_.size(); }

  private:
    Node* make(Tensor val, std::vector<Node*> parents);
    std::deque<Node> nodes_;
};

// ---- convenience model pieces ----

class Rng;

struct Dense {
    Param *w = nullptr, *b = nullptr;
    int in = 0, out = 0;
    Node* operator()(Graph& g, Node* x) const;  // x [...,in]
};

// fan-in scaled uniform init
Dense make_dense(ParamStore& ps, const std::string& name, int in, int out, Rng& rng);

// Gaussian(0, sigma) init, used for embedding tables
Tensor gaussian_init(Shape s, double sigma, Rng& rng);
Tensor fanin_uniform_init(int in, int out, Rng& rng);

}  // namespace voxdream::nn
