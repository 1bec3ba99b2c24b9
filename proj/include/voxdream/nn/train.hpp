#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "voxdream/nn/graph.hpp"
#include "voxdream/nn/rng.hpp"

namespace voxdream::nn {

struct TrainConfig {
    double learning_rate = 1e-3;
    double weight_decay = 0.01;
    double warmup_ratio = 0.05;
    int batch_size = 8;
    int iterations = 1000;
    std::uint64_t seed = 0;

    void validate() const {
        if (learning_rate <= 0) throw std::invalid_argument("learning_rate must be > 0");
        if (batch_size < 1 || iterations < 0) throw std::invalid_argument("bad batch/iterations");
    }
};

class AdamW {
  public:
    AdamW(std::vector<Param*> params, const TrainConfig& cfg)
        : params_(std::move(params)), cfg_(cfg) {}

    // lr warmup is linear over warmup_ratio * total iterations
    void step() {
        ++t_;
        const int warm = std::max(1, static_cast<int>(cfg_.warmup_ratio * cfg_.iterations));
        const double lr = cfg_.learning_rate * (t_ < warm ? static_cast<double>(t_) / warm : 1.0);
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double bc1 = 1.0 - std::pow(b1, t_);
        const double bc2 = 1.0 - std::pow(b2, t_);
        for (Param* p : params_) {
            for (std::int64_t i = 0; i < p->value.size(); ++i) {
                const double g = p->grad[i];
                p->m[i] = b1 * p->m[i] + (1 - b1) * g;
                p->v[i] = b2 * p->v[i] + (1 - b2) * g * g;
                const double mhat = p->m[i] / bc1;
                const double vhat = p->v[i] / bc2;
                p->value[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + cfg_.weight_decay * p->value[i]);
            }
            p->zero_grad();
        }
    }

  private:
    std::vector<Param*> params_;
    TrainConfig cfg_;
    std::int64_t t_ = 0;
};

struct LossCurve {
    std::vector<double> train;       // per logged step
    std::vector<double> validation;  // per validation pass
};

// Generic seeded training loop: the step function builds the loss graph for
// one batch (drawing batch indices from rng), runs backward, and returns the
// loss value.  NaN loss aborts with the iteration index.
LossCurve run_training(ParamStore& ps, const TrainConfig& cfg,
                       const std::function<double(Graph&, Rng&, int iter)>& step_fn,
                       const std::function<double()>& validation_fn = {},
                       int validate_every = 0);

// -------- gradient verification --------

struct GradCheckEntry {
    std::string param;
    std::int64_t index;
    double analytic, fd, rel_err;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    bool pass = false;
    GradCheckEntry worst;
    std::string error;  // non-empty if the loss went non-finite
};

// Central-difference check of every element of every listed parameter against
// the tape gradients. build must be a deterministic pure function of the
// current parameter values.
GradCheckReport grad_check(const std::function<Node*(Graph&)>& build,
                           const std::vector<Param*>& params, double epsilon = 1e-5,
                           double tolerance = 1e-4);

}  // namespace voxdream::nn
