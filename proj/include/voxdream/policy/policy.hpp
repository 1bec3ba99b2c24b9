#pragma once

#include <string>
#include <vector>

#include "voxdream/embed/embed.hpp"
#include "voxdream/nn/graph.hpp"
#include "voxdream/nn/train.hpp"
#include "voxdream/prompt/prompt.hpp"
#include "voxdream/world/trajectory.hpp"

namespace voxdream::policy {

struct PolicyConfig {
    int d_p = 64;        // model dim = prompt dim
    int context_T = 32;  // sliding window
    int heads = 4;
    int ff = 128;
    int conv_base = 8;  // visual encoder widths: base, 2*base
    int hidden = 64;    // MLP between conv features and d_p
    int d_e = 32;       // projection input dim (embedding space)
    std::uint64_t seed = 0;
};

struct GuidanceConfig {
    double lambda = 6.0;
    double temperature = 1.0;
};

// conv observation encoder + additive prompt injection + 2-layer causal
// transformer over the last context_T frames + 12-way action head
class PolicyNet {
  public:
    PolicyNet(const PolicyConfig& cfg, nn::Rng& rng);

    // f_t = V(O_t), deterministic, [d_p]
    std::vector<double> encode_obs(const world::Observation& o) const;
    nn::Node* encode_obs_node(nn::Graph& g, const world::Observation& o) const;

    // history rows are o_i = f_i + p_i; only the last context_T rows are used;
    // returns the 12 logits at the final position
    std::vector<double> policy_logits(const std::vector<std::vector<double>>& history) const;

    // [L,12] logits for a whole window (training); o_seq is [L, d_p]
    nn::Node* logits_node(nn::Graph& g, nn::Node* o_seq) const;

    // the shared project() map (d_e -> d_p), trained by the BC objective
    prompt::Projection projection() const;

    const PolicyConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return ps_; }
    const nn::ParamStore& params() const { return ps_; }

  private:
    PolicyConfig cfg_;
    mutable nn::ParamStore ps_;
};

// (1 + lambda) * cond - lambda * uncond
std::vector<double> cfg_logits(const std::vector<double>& cond, const std::vector<double>& uncond, double lambda);

// categorical sample at the configured temperature; temperature -> 0 is argmax
world::Action sample_action(const std::vector<double>& logits, const GuidanceConfig& cfg, nn::Rng& rng);

struct BcConfig {
    int iterations = 400;
    int batch_windows = 4;
    double learning_rate = 1e-3;
    double prompt_dropout = 0.1;  // zero-prompt probability (trains the CFG unconditional branch)
    int delta_min = 16, delta_max = 200;  // hindsight horizon, frames past the window end
    std::uint64_t seed = 0;
};

struct BcResult {
    nn::LossCurve curve;
    double val_accuracy = 0;      // action accuracy on held-out windows
    double majority_baseline = 0; // most-frequent-action rate on the same windows
};

// packed hindsight relabeling: per window, goal frame g uniform in
// [end+delta_min, end+delta_max] clamped to the trajectory; prompt =
// project(encode_segment(g-15..g)), zeroed with prompt_dropout probability;
// cross-entropy on the logged action at every position
BcResult train_bc_hindsight(PolicyNet& net, const std::vector<world::Trajectory>& corpus,
                            const embed::DualEncoder& enc, const BcConfig& cfg);

}  // namespace voxdream::policy
