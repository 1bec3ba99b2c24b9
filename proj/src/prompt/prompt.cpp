#include "voxdream/prompt/prompt.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "voxdream/nn/layers.hpp"

namespace voxdream::prompt {

const char* prompt_strategy_name(PromptStrategy s) {
    switch (s) {
        case PromptStrategy::full: return "full";
        case PromptStrategy::only_gi: return "only_gi";
        case PromptStrategy::wo_gi: return "wo_gi";
    }
    throw std::invalid_argument("bad strategy");
}

namespace {

nn::Node* vec_node(nn::Graph& g, const std::vector<double>& v) {
    return g.constant(nn::Tensor({static_cast<int>(v.size())}, v));
}

struct CvaeNets {
    nn::Mlp enc_trunk, pri_trunk, dec;
    nn::Dense enc_mu, enc_lv, pri_mu, pri_lv;
};

CvaeNets& nets_of(nn::ParamStore& ps, const CvaeConfig& cfg) {
    // views are rebuilt per call so checkpoint loads stay transparent
    static thread_local CvaeNets n;
    auto dense = [&](const std::string& name, int in, int out) {
        nn::Dense d;
        d.w = ps.find(name + ".w");
        d.b = ps.find(name + ".b");
        d.in = in;
        d.out = out;
        if (!d.w || !d.b) throw std::runtime_error("missing cvae param " + name);
        return d;
    };
    auto mlp = [&](const std::string& name, const std::vector<int>& dims, bool norm) {
        nn::Mlp m;
        for (size_t i = 0; i + 1 < dims.size(); ++i) {
            m.layers.push_back(dense(name + ".l" + std::to_string(i), dims[i], dims[i + 1]));
            if (norm && i + 2 < dims.size())
                m.norms.emplace_back(ps.find(name + ".ln" + std::to_string(i) + ".g"),
                                     ps.find(name + ".ln" + std::to_string(i) + ".b"));
            else
                m.norms.emplace_back(nullptr, nullptr);
        }
        return m;
    };
    const int de = cfg.d_e, h = cfg.hidden, dz = cfg.d_z;
    n.enc_trunk = mlp("cvae.enc", {4 * de, h, h}, true);
    n.pri_trunk = mlp("cvae.pri", {3 * de, h, h}, true);
    n.dec = mlp("cvae.dec", {dz + 3 * de, h, h, de}, true);
    n.enc_mu = dense("cvae.enc.mu", h, dz);
    n.enc_lv = dense("cvae.enc.lv", h, dz);
    n.pri_mu = dense("cvae.pri.mu", h, dz);
    n.pri_lv = dense("cvae.pri.lv", h, dz);
    return n;
}

}  // namespace

Cvae::Cvae(const CvaeConfig& cfg, nn::Rng& rng) : cfg_(cfg) {
    if (cfg.d_e < 1 || cfg.d_z < 1 || cfg.hidden < 1) throw std::invalid_argument("bad cvae dims");
    const int de = cfg.d_e, h = cfg.hidden, dz = cfg.d_z;
    auto mlp = [&](const std::string& name, const std::vector<int>& dims) {
        nn::make_mlp(ps_, name, dims, rng, true);
    };
    mlp("cvae.enc", {4 * de, h, h});
    mlp("cvae.pri", {3 * de, h, h});
    mlp("cvae.dec", {dz + 3 * de, h, h, de});
    nn::make_dense(ps_, "cvae.enc.mu", h, dz, rng);
    nn::make_dense(ps_, "cvae.enc.lv", h, dz, rng);
    nn::make_dense(ps_, "cvae.pri.mu", h, dz, rng);
    nn::make_dense(ps_, "cvae.pri.lv", h, dz, rng);
}

Cvae::Gauss Cvae::posterior(nn::Graph& g, nn::Node* cur, nn::Node* goal, nn::Node* text, nn::Node* target) const {
    auto& n = nets_of(ps_, cfg_);
    nn::Node* h = n.enc_trunk(g, g.concat_last({cur, goal, text, target}));
    return {n.enc_mu(g, h), n.enc_lv(g, h)};
}

Cvae::Gauss Cvae::prior(nn::Graph& g, nn::Node* cur, nn::Node* goal, nn::Node* text) const {
    auto& n = nets_of(ps_, cfg_);
    nn::Node* h = n.pri_trunk(g, g.concat_last({cur, goal, text}));
    return {n.pri_mu(g, h), n.pri_lv(g, h)};
}

nn::Node* Cvae::decode(nn::Graph& g, nn::Node* z, nn::Node* cur, nn::Node* goal, nn::Node* text) const {
    auto& n = nets_of(ps_, cfg_);
    return g.normalize(n.dec(g, g.concat_last({z, cur, goal, text})));
}

nn::Node* gaussian_kl(nn::Graph& g, const Cvae::Gauss& q, const Cvae::Gauss& p) {
    nn::Node* diff = g.sub(q.mu, p.mu);
    nn::Node* ratio = g.div(g.add(g.exp_op(q.logvar), g.square(diff)), g.exp_op(p.logvar));
    nn::Node* inner = g.add(g.sub(p.logvar, q.logvar), g.add_const(ratio, -1.0));
    return g.scale(g.sum_all(inner), 0.5);
}

nn::Node* Cvae::elbo(nn::Graph& g, const CvaeExample& ex, const nn::Tensor& eps, PromptStrategy strategy,
                     double beta_override) const {
    if (static_cast<int>(eps.size()) != cfg_.d_z) throw std::invalid_argument("eps must be d_z");
    std::vector<double> goal_v = ex.goal;
    if (strategy == PromptStrategy::wo_gi) std::fill(goal_v.begin(), goal_v.end(), 0.0);
    nn::Node* cur = vec_node(g, ex.current);
    nn::Node* goal = vec_node(g, goal_v);
    nn::Node* text = vec_node(g, ex.text);
    nn::Node* target = g.normalize(vec_node(g, ex.target));

    Gauss q = posterior(g, cur, goal, text, target);
    Gauss p = prior(g, cur, goal, text);
    nn::Node* z = g.add(q.mu, g.mul(g.exp_op(g.scale(q.logvar, 0.5)), g.constant(eps)));
    nn::Node* dec = decode(g, z, cur, goal, text);

    nn::Node* rec = g.add_const(g.scale(g.dot(dec, target), -1.0), 1.0);
    const double beta = beta_override >= 0 ? beta_override : cfg_.beta;
    return g.add(rec, g.scale(gaussian_kl(g, q, p), beta));
}

std::vector<double> Cvae::reconstruct(const CvaeExample& conditions, bool mean_mode, PromptStrategy strategy,
                                      nn::Rng& rng) const {
    nn::Graph g;
    std::vector<double> goal_v = conditions.goal;
    if (strategy == PromptStrategy::wo_gi) std::fill(goal_v.begin(), goal_v.end(), 0.0);
    nn::Node* cur_n = vec_node(g, conditions.current);
    nn::Node* goal_n = vec_node(g, goal_v);
    nn::Node* text_n = vec_node(g, conditions.text);
    Gauss p = prior(g, cur_n, goal_n, text_n);
    nn::Tensor z = p.mu->val;
    if (!mean_mode)
        for (std::int64_t i = 0; i < z.size(); ++i)
            z[i] += std::exp(0.5 * p.logvar->val[i]) * rng.normal();
    nn::Node* dec = decode(g, g.constant(z), cur_n, goal_n, text_n);
    return dec->val.v;
}

namespace {

double batch_elbo_backward(Cvae& cvae, const std::vector<CvaeExample>& set, const std::vector<int>& idx,
                           PromptStrategy strategy, nn::Rng& rng, bool do_backward) {
    nn::Graph g;
    std::vector<nn::Node*> losses;
    for (int i : idx) {
        nn::Tensor eps({cvae.config().d_z});
        if (do_backward)
            for (auto& x : eps.v) x = rng.normal();
        losses.push_back(g.reshape(cvae.elbo(g, set[i], eps, strategy), {1}));
    }
    nn::Node* loss = g.scale(g.sum_all(g.concat_last(losses)), 1.0 / idx.size());
    if (do_backward) g.backward(loss);
    return loss->val[0];
}

}  // namespace

CvaeTrainResult train_cvae(Cvae& cvae, const std::vector<CvaeExample>& train_set,
                           const std::vector<CvaeExample>& val_set, PromptStrategy strategy) {
    if (train_set.empty() || val_set.empty()) throw std::invalid_argument("train_cvae needs train and val examples");
    const CvaeConfig& cfg = cvae.config();
    const int batches = std::max(1, static_cast<int>((train_set.size() + cfg.batch - 1) / cfg.batch));

    nn::TrainConfig tc;
    tc.learning_rate = cfg.learning_rate;
    tc.batch_size = cfg.batch;
    tc.iterations = cfg.epochs * batches;
    tc.seed = cfg.seed;
    nn::AdamW opt(cvae.params().all(), tc);

    // validation uses eps = 0 (mean latent) so the curve is deterministic
    auto val_elbo = [&] {
        std::vector<int> idx(val_set.size());
        std::iota(idx.begin(), idx.end(), 0);
        nn::Rng dummy(0);
        return batch_elbo_backward(cvae, val_set, idx, strategy, dummy, false);
    };

    CvaeTrainResult res;
    double best = 1e300;
    std::vector<std::vector<double>> best_values;
    int stall = 0;
    nn::Rng rng(nn::Rng::mix(cfg.seed, 0xc4aeULL));
    std::vector<int> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.next_u64() % i]);
        double epoch_loss = 0;
        for (int b = 0; b < batches; ++b) {
            const int lo = b * cfg.batch;
            const int hi = std::min<int>(lo + cfg.batch, static_cast<int>(order.size()));
            if (lo >= hi) break;
            std::vector<int> idx(order.begin() + lo, order.begin() + hi);
            epoch_loss += batch_elbo_backward(cvae, train_set, idx, strategy, rng, true) * idx.size();
            opt.step();
        }
        res.train_elbo.push_back(epoch_loss / train_set.size());
        const double v = val_elbo();
        res.validation_elbo.push_back(v);
        res.stopped_epoch = epoch + 1;
        if (v < best - 1e-9) {
            best = v;
            stall = 0;
            best_values.clear();
            for (auto* p : cvae.params().all()) best_values.push_back(p->value.v);
        } else if (++stall >= cfg.patience) {
            break;
        }
    }
    if (!best_values.empty()) {
        auto all = cvae.params().all();
        for (size_t i = 0; i < all.size(); ++i) all[i]->value.v = best_values[i];
    }
    return res;
}

double reconstruction_cosine(const Cvae& cvae, const std::vector<CvaeExample>& examples, PromptStrategy strategy) {
    if (examples.empty()) throw std::invalid_argument("no examples");
    nn::Rng dummy(0);
    double acc = 0;
    for (const auto& ex : examples) {
        std::vector<double> dec = cvae.reconstruct(ex, true, strategy, dummy);
        double dot = 0, tn = 0;
        for (size_t i = 0; i < dec.size(); ++i) {
            dot += dec[i] * ex.target[i];
            tn += ex.target[i] * ex.target[i];
        }
        acc += dot / std::max(std::sqrt(tn), 1e-12);
    }
    return acc / examples.size();
}

std::vector<double> project(const Projection& p, const std::vector<double>& e) {
    if (!p.w || !p.b) throw std::runtime_error("projection untrained");
    const int de = p.w->value.shape[0], dp = p.w->value.shape[1];
    if (static_cast<int>(e.size()) != de) throw std::invalid_argument("projection input dim mismatch");
    std::vector<double> out(p.b->value.v);
    for (int i = 0; i < de; ++i)
        for (int j = 0; j < dp; ++j) out[j] += e[i] * p.w->value[i * dp + j];
    return out;
}

std::vector<double> generate_prompt(const Cvae& cvae, const embed::DualEncoder& enc, const Projection& proj,
                                    const world::Observation& o_t, const imaginator::Imagination& i_next,
                                    const std::string& y, bool mean_mode, PromptStrategy strategy, nn::Rng& rng) {
    std::vector<double> goal_e = enc.encode_segment(embed::still_stack(i_next.decoded));
    if (strategy == PromptStrategy::only_gi) return project(proj, goal_e);
    CvaeExample ex;
    ex.current = enc.encode_segment(embed::still_stack(o_t));
    ex.goal = goal_e;
    ex.text = enc.encode_text(y);
    return project(proj, cvae.reconstruct(ex, mean_mode, strategy, rng));
}

std::vector<CvaeExample> make_cvae_examples(const std::vector<drift::CvaeQuad>& quads, const std::string& corpus_dir,
                                            const embed::DualEncoder& enc) {
    std::map<std::string, world::Trajectory> cache;
    std::vector<CvaeExample> out;
    out.reserve(quads.size());
    for (const auto& q : quads) {
        auto it = cache.find(q.triplet.traj_id);
        if (it == cache.end())
            it = cache.emplace(q.triplet.traj_id, world::load_trajectory(corpus_dir + "/" + q.triplet.traj_id + ".jsonl"))
                     .first;
        const auto& traj = it->second;
        CvaeExample ex;
        ex.current = enc.encode_segment(embed::still_stack(traj.frames.at(q.triplet.current_frame).obs));
        ex.goal = enc.encode_segment(embed::still_stack(traj.frames.at(q.triplet.goal_frame).obs));
        ex.text = enc.encode_text(q.triplet.instruction);
        ex.target = q.gt_embed;
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace voxdream::prompt
