#pragma once

#include <string>
#include <vector>

#include "voxdream/nn/graph.hpp"
#include "voxdream/nn/layers.hpp"
#include "voxdream/nn/train.hpp"
#include "voxdream/world/world.hpp"

namespace voxdream::imaginator {

// variance-preserving linear-beta schedule; betas are scaled by 1000/S so the
// signal is fully destroyed at s=S even with few steps
struct DiffusionSchedule {
    int S = 50;
    std::vector<double> beta;       // 1-based: beta[s], s in [1,S]
    std::vector<double> alpha_bar;  // alpha_bar[0] = 1, strictly decreasing

    explicit DiffusionSchedule(int steps, double beta_min = 1e-4, double beta_max = 0.02);
};

struct ImaginatorConfig {
    // goal LM
    int k = 8;  // learnable GOAL tokens
    int model_dim = 64;
    int heads = 4;
    int ff = 128;
    int max_seq = 32;
    int prefix_dim = world::kObsFeatDim;  // flattened observation input
    // q-former
    int q_queries = 8;
    int d_f = 32;
    // denoiser
    int crop = world::kCrop;
    int channels = world::kNumBlocks;
    int base = 16;
    int S = 50;
    int sampler_steps = 50;
    double lambda_llm = 1.0;
};

struct Imagination {
    nn::Tensor tensor;            // [crop,crop,crop,channels], continuous
    world::Observation decoded;   // argmax crop; aux carried from the source observation
};

class Imaginator {
  public:
    Imaginator(const ImaginatorConfig& cfg, std::vector<std::string> vocab, nn::Rng& rng);

    // sequence = [obs prefix, instruction tokens, GOAL_1..GOAL_k]; returns the
    // k final hidden states at the GOAL positions, [k, model_dim]
    nn::Node* goal_hidden(nn::Graph& g, const nn::Tensor& obs_feat, const std::string& y) const;

    // sum of k next-token cross-entropy terms at the GOAL positions
    nn::Node* goal_token_loss(nn::Graph& g, const nn::Tensor& obs_feat, const std::string& y) const;

    // f* from h_GOAL via learnable queries and 2 cross-attention layers, [d_f]
    nn::Node* qform(nn::Graph& g, nn::Node* h_goal) const;

    // noise prediction eps_delta(s, concat[z_s, cond_channels] + f*), channel-last
    nn::Node* denoise(nn::Graph& g, int s, nn::Node* z_s, const nn::Tensor& cond_channels, nn::Node* f_star) const;

    // ||eps - eps_delta(...)||^2 with z_s = sqrt(ab_s) z + sqrt(1-ab_s) eps,
    // end-to-end through the LM and q-former
    nn::Node* dream_loss(nn::Graph& g, const nn::Tensor& obs_feat, const nn::Tensor& cond_channels,
                         const nn::Tensor& goal_channels, const std::string& y, int s, const nn::Tensor& eps) const;

    // ancestral DDPM sampling; pure function of (params, o, y, rng state)
    Imagination imagine(const world::Observation& o, const std::string& y, int sampler_steps, nn::Rng& rng) const;

    int vocab_size() const { return static_cast<int>(vocab_.size()) + cfg_.k; }
    int goal_id(int i) const { return static_cast<int>(vocab_.size()) + i; }
    int token_id(const std::string& word) const;
    const ImaginatorConfig& config() const { return cfg_; }
    const DiffusionSchedule& schedule() const { return sched_; }
    nn::ParamStore& params() { return ps_; }
    const nn::ParamStore& params() const { return ps_; }

  private:
    ImaginatorConfig cfg_;
    DiffusionSchedule sched_;
    std::vector<std::string> vocab_;
    mutable nn::ParamStore ps_;
};

// Table 2 "Random Noise" ablation: standard-normal tensor, decoded
Imagination random_noise_imagination(const nn::Shape& shape, std::uint64_t seed);

// one training sample drawn from the triplet dataset
struct DreamSample {
    world::Observation current;
    world::Observation goal;
    std::string instruction;
};

struct DreamTrainResult {
    nn::LossCurve curve;
    double initial_val_loss = 0;
    double final_val_loss = 0;
};

DreamTrainResult train_imaginator(Imaginator& im, const std::vector<DreamSample>& train_set,
                                  const std::vector<DreamSample>& val_set, const nn::TrainConfig& cfg);

// loads (current, goal, instruction) samples from a triplet dataset + corpus
std::vector<DreamSample> load_dream_samples(const std::string& dataset_dir, const std::string& corpus_dir,
                                            const std::string& split, int limit = 0);

}  // namespace voxdream::imaginator
