#include "voxdream/nn/train.hpp"

#include <cmath>

namespace voxdream::nn {

LossCurve run_training(ParamStore& ps, const TrainConfig& cfg,
                       const std::function<double(Graph&, Rng&, int)>& step_fn,
                       const std::function<double()>& validation_fn, int validate_every) {
    cfg.validate();
    LossCurve curve;
    Rng rng(cfg.seed);
    AdamW opt(ps.all(), cfg);
    if (validation_fn) curve.validation.push_back(validation_fn());
    for (int it = 0; it < cfg.iterations; ++it) {
        Graph g;
        const double loss = step_fn(g, rng, it);
        if (!std::isfinite(loss))
            throw std::runtime_error("training loss non-finite at iteration " + std::to_string(it));
        opt.step();
        curve.train.push_back(loss);
        if (validation_fn && validate_every > 0 && (it + 1) % validate_every == 0)
            curve.validation.push_back(validation_fn());
    }
    if (validation_fn && (validate_every <= 0 || cfg.iterations % std::max(1, validate_every) != 0))
        curve.validation.push_back(validation_fn());
    return curve;
}

GradCheckReport grad_check(const std::function<Node*(Graph&)>& build,
                           const std::vector<Param*>& params, double epsilon, double tolerance) {
    GradCheckReport rep;
    for (Param* p : params) p->zero_grad();

    std::vector<Tensor> analytic;
    {
        Graph g;
        Node* loss = build(g);
        if (!loss->val.all_finite()) {
            rep.error = "non-finite loss in analytic pass";
            return rep;
        }
        g.backward(loss);
        for (Param* p : params) {
            analytic.push_back(p->grad);
            p->zero_grad();
        }
    }

    auto eval = [&]() -> double {
        Graph g;
        return build(g)->val[0];
    };

    for (size_t pi = 0; pi < params.size(); ++pi) {
        Param* p = params[pi];
        for (std::int64_t i = 0; i < p->value.size(); ++i) {
            const double keep = p->value[i];
            // 4th-order central stencil keeps truncation error negligible at a
            // step large enough to beat double-precision roundoff
            auto at = [&](double d) {
                p->value[i] = keep + d;
                return eval();
            };
            const double lp = at(epsilon), lm = at(-epsilon);
            const double lp2 = at(2 * epsilon), lm2 = at(-2 * epsilon);
            p->value[i] = keep;
            if (!std::isfinite(lp) || !std::isfinite(lm) || !std::isfinite(lp2) || !std::isfinite(lm2)) {
                rep.error = "non-finite loss while perturbing " + p->name;
                return rep;
            }
            const double fd = (8 * (lp - lm) - (lp2 - lm2)) / (12 * epsilon);
            const double an = analytic[pi][i];
            // entries where both gradients are negligible cannot be resolved
            // against loss-evaluation roundoff; treat them as matching
            if (std::max(std::fabs(an), std::fabs(fd)) < 1e-7) continue;
            const double denom = std::max({std::fabs(an), std::fabs(fd), 1e-8});
            const double rel = std::fabs(an - fd) / denom;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst = {p->name, i, an, fd, rel};
            }
        }
    }
    rep.pass = rep.max_rel_err <= tolerance;
    return rep;
}

}  // namespace voxdream::nn
