#pragma once

#include <string>
#include <vector>

#include "voxdream/drift/drift.hpp"
#include "voxdream/embed/embed.hpp"
#include "voxdream/imaginator/imaginator.hpp"
#include "voxdream/nn/graph.hpp"
#include "voxdream/nn/train.hpp"

namespace voxdream::prompt {

struct CvaeConfig {
    int d_e = 32;
    int d_z = 16;
    int hidden = 64;
    double beta = 0.001;
    int epochs = 150;
    int batch = 64;
    int patience = 10;  // early stopping on validation ELBO
    double learning_rate = 1e-4;
    std::uint64_t seed = 0;
};

// embedding-space training example: all vectors unit-norm, d_e each
struct CvaeExample {
    std::vector<double> current, goal, text, target;
};

enum class PromptStrategy { full = 0, only_gi, wo_gi };
const char* prompt_strategy_name(PromptStrategy s);

// conditional VAE with Gaussian prior and posterior nets; decoder output is
// unit-normalized
class Cvae {
  public:
    Cvae(const CvaeConfig& cfg, nn::Rng& rng);

    struct Gauss {
        nn::Node* mu;
        nn::Node* logvar;
    };

    // posterior from (conditions, target); prior from conditions alone
    Gauss posterior(nn::Graph& g, nn::Node* cur, nn::Node* goal, nn::Node* text, nn::Node* target) const;
    Gauss prior(nn::Graph& g, nn::Node* cur, nn::Node* goal, nn::Node* text) const;
    nn::Node* decode(nn::Graph& g, nn::Node* z, nn::Node* cur, nn::Node* goal, nn::Node* text) const;

    // (1 - cosine(decoded, target)) + beta * KL(posterior || prior), with the
    // reparameterized latent z = mu + exp(logvar/2) * eps
    nn::Node* elbo(nn::Graph& g, const CvaeExample& ex, const nn::Tensor& eps, PromptStrategy strategy,
                   double beta_override = -1) const;

    // embedding-space reconstruction from the prior latent
    std::vector<double> reconstruct(const CvaeExample& conditions, bool mean_mode, PromptStrategy strategy,
                                    nn::Rng& rng) const;

    const CvaeConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return ps_; }
    const nn::ParamStore& params() const { return ps_; }

  private:
    CvaeConfig cfg_;
    mutable nn::ParamStore ps_;
};

// closed-form diagonal-Gaussian KL(q || p), summed over dims
nn::Node* gaussian_kl(nn::Graph& g, const Cvae::Gauss& q, const Cvae::Gauss& p);

struct CvaeTrainResult {
    std::vector<double> train_elbo;       // per epoch
    std::vector<double> validation_elbo;  // per epoch
    int stopped_epoch = 0;                // epochs actually run
};

// epoch loop with early stopping (patience on validation ELBO); deterministic
// per seed; restores the best-validation parameters
CvaeTrainResult train_cvae(Cvae& cvae, const std::vector<CvaeExample>& train_set,
                           const std::vector<CvaeExample>& val_set, PromptStrategy strategy = PromptStrategy::full);

// mean reconstruction cosine against targets (validation fidelity gate)
double reconstruction_cosine(const Cvae& cvae, const std::vector<CvaeExample>& examples, PromptStrategy strategy);

// linear map d_e -> d_p, trained by policynet's BC objective
struct Projection {
    const nn::Param* w = nullptr;  // [d_e, d_p]
    const nn::Param* b = nullptr;  // [d_p]
};
std::vector<double> project(const Projection& p, const std::vector<double>& e);

// p_t <- project(CVAE(O_t, I_next, y)); mean mode is deterministic
std::vector<double> generate_prompt(const Cvae& cvae, const embed::DualEncoder& enc, const Projection& proj,
                                    const world::Observation& o_t, const imaginator::Imagination& i_next,
                                    const std::string& y, bool mean_mode, PromptStrategy strategy, nn::Rng& rng);

// builds embedding-space examples from CVAE quadruplets
std::vector<CvaeExample> make_cvae_examples(const std::vector<drift::CvaeQuad>& quads, const std::string& corpus_dir,
                                            const embed::DualEncoder& enc);

}  // namespace voxdream::prompt
