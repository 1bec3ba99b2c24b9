#pragma once

#include <string>
#include <vector>

#include "voxdream/nn/graph.hpp"
#include "voxdream/nn/rng.hpp"

namespace voxdream::nn {

// ---- generic layer stack ----
// Used by the layer-stack forward contract and its tests; the larger models
// compose Graph ops directly.

enum class LayerKind { dense, layer_norm, embedding_table, causal_self_attention, cross_attention, conv3d, softmax_head };

struct LayerSpec {
    LayerKind kind;
    int in = 0, out = 0;
    int heads = 1;
    int stride = 1, pad = 1;
    std::vector<Param*> params;  // layout documented per make_* helper
};

class LayerStack {
  public:
    LayerStack(ParamStore& ps, Rng& rng) : ps_(&ps), rng_(&rng) {}

    LayerSpec& dense(int in, int out);
    LayerSpec& layer_norm(int dim);
    LayerSpec& embedding_table(int vocab, int dim);
    LayerSpec& causal_self_attention(int dim, int heads);
    LayerSpec& softmax_head(int in, int out);

    // input shape must match the first layer
    Node* forward(Graph& g, Node* input) const;

    const std::vector<LayerSpec>& layers() const { return layers_; }

  private:
    ParamStore* ps_;
    Rng* rng_;
    std::vector<LayerSpec> layers_;
    int idx_ = 0;
};

// ---- transformer pieces ----

struct Attention {
    Dense q, k, v, o;
    int dim = 0, heads = 0;
};

Attention make_attention(ParamStore& ps, const std::string& name, int dim, int heads, Rng& rng);

// x [T,dim]; causal=true masks positions > t. For cross attention pass a
// separate key/value source kv [S,dim].
Node* attention_forward(Graph& g, const Attention& a, Node* x, Node* kv, bool causal);

struct TransformerBlock {
    Attention attn;
    Dense fc1, fc2;
    Param *ln1_g, *ln1_b, *ln2_g, *ln2_b;
};

TransformerBlock make_transformer_block(ParamStore& ps, const std::string& name, int dim, int heads, int ff, Rng& rng);

// pre-norm residual block over [T,dim]
Node* transformer_block_forward(Graph& g, const TransformerBlock& b, Node* x, bool causal);

struct Mlp {
    std::vector<Dense> layers;
    std::vector<std::pair<Param*, Param*>> norms;  // optional layer norms after hidden layers
    Node* operator()(Graph& g, Node* x) const;
};

// n_layers dense layers with tanh between; layer_norm adds normalization on
// hidden activations ("512 hidden units and layer normalization" analog).
Mlp make_mlp(ParamStore& ps, const std::string& name, const std::vector<int>& dims, Rng& rng, bool layer_norm = false);

}  // namespace voxdream::nn
