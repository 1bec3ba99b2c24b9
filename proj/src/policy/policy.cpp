#include "voxdream/policy/policy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "voxdream/drift/drift.hpp"
#include "voxdream/nn/layers.hpp"

namespace voxdream::policy {

namespace {

struct Conv {
    nn::Param *k = nullptr, *b = nullptr;
};

Conv make_conv(nn::ParamStore& ps, const std::string& name, int cin, int cout, nn::Rng& rng) {
    const double lim = std::sqrt(1.0 / (27.0 * cin));
    nn::Tensor k({3, 3, 3, cin, cout});
    for (auto& x : k.v) x = rng.uniform(-lim, lim);
    return {&ps.add(name + ".k", std::move(k)), &ps.add(name + ".b", nn::Tensor({cout}))};
}

struct PolicyNets {
    Conv c0, c1;
    nn::Mlp mlp;
    nn::Param* pos;
    nn::TransformerBlock block0, block1;
    nn::Dense head;
};

nn::Dense view_dense(nn::ParamStore& ps, const std::string& name, int in, int out) {
    nn::Dense d;
    d.w = ps.find(name + ".w");
    d.b = ps.find(name + ".b");
    d.in = in;
    d.out = out;
    if (!d.w || !d.b) throw std::runtime_error("missing policy param " + name);
    return d;
}

nn::TransformerBlock view_block(nn::ParamStore& ps, const std::string& name, int dim, int ff) {
    nn::TransformerBlock b;
    b.attn.q = view_dense(ps, name + ".attn.q", dim, dim);
    b.attn.k = view_dense(ps, name + ".attn.k", dim, dim);
    b.attn.v = view_dense(ps, name + ".attn.v", dim, dim);
    b.attn.o = view_dense(ps, name + ".attn.o", dim, dim);
    b.attn.dim = dim;
    b.fc1 = view_dense(ps, name + ".fc1", dim, ff);
    b.fc2 = view_dense(ps, name + ".fc2", ff, dim);
    b.ln1_g = ps.find(name + ".ln1.g");
    b.ln1_b = ps.find(name + ".ln1.b");
    b.ln2_g = ps.find(name + ".ln2.g");
    b.ln2_b = ps.find(name + ".ln2.b");
    return b;
}

PolicyNets nets_of(nn::ParamStore& ps, const PolicyConfig& cfg) {
    PolicyNets n;
    n.c0 = {ps.find("pol.c0.k"), ps.find("pol.c0.b")};
    n.c1 = {ps.find("pol.c1.k"), ps.find("pol.c1.b")};
    const int flat = 8 * 2 * cfg.conv_base + world::kAuxDim;
    n.mlp.layers.push_back(view_dense(ps, "pol.mlp.l0", flat, cfg.hidden));
    n.mlp.norms.emplace_back(nullptr, nullptr);
    n.mlp.layers.push_back(view_dense(ps, "pol.mlp.l1", cfg.hidden, cfg.d_p));
    n.mlp.norms.emplace_back(nullptr, nullptr);
    n.pos = ps.find("pol.pos");
    n.block0 = view_block(ps, "pol.block0", cfg.d_p, cfg.ff);
    n.block1 = view_block(ps, "pol.block1", cfg.d_p, cfg.ff);
    n.head = view_dense(ps, "pol.head", cfg.d_p, world::kNumActions);
    n.block0.attn.heads = n.block1.attn.heads = cfg.heads;
    return n;
}

}  // namespace

PolicyNet::PolicyNet(const PolicyConfig& cfg, nn::Rng& rng) : cfg_(cfg) {
    if (cfg.d_p % cfg.heads != 0) throw std::invalid_argument("heads must divide d_p");
    if (cfg.context_T < 1) throw std::invalid_argument("context_T must be >= 1");
    make_conv(ps_, "pol.c0", world::kNumBlocks, cfg.conv_base, rng);
    make_conv(ps_, "pol.c1", cfg.conv_base, 2 * cfg.conv_base, rng);
    const int flat = 8 * 2 * cfg.conv_base + world::kAuxDim;
    nn::make_mlp(ps_, "pol.mlp", {flat, cfg.hidden, cfg.d_p}, rng);
    ps_.add("pol.pos", nn::gaussian_init({cfg.context_T, cfg.d_p}, 0.05, rng));
    nn::make_transformer_block(ps_, "pol.block0", cfg.d_p, cfg.heads, cfg.ff, rng);
    nn::make_transformer_block(ps_, "pol.block1", cfg.d_p, cfg.heads, cfg.ff, rng);
    nn::make_dense(ps_, "pol.head", cfg.d_p, world::kNumActions, rng);
    ps_.add("policy.proj.w", nn::fanin_uniform_init(cfg.d_e, cfg.d_p, rng));
    ps_.add("policy.proj.b", nn::Tensor({cfg.d_p}));
}

nn::Node* PolicyNet::encode_obs_node(nn::Graph& g, const world::Observation& o) const {
    auto n = nets_of(ps_, cfg_);
    nn::Node* x = g.constant(world::crop_onehot(o));
    x = g.tanh_op(g.conv3d(x, g.param(*n.c0.k), g.param(*n.c0.b), 2, 1));
    x = g.tanh_op(g.conv3d(x, g.param(*n.c1.k), g.param(*n.c1.b), 2, 1));
    x = g.reshape(x, {8 * 2 * cfg_.conv_base});
    x = g.concat_last({x, g.constant(world::aux_vector(o))});
    return n.mlp(g, x);
}

std::vector<double> PolicyNet::encode_obs(const world::Observation& o) const {
    nn::Graph g;
    return encode_obs_node(g, o)->val.v;
}

nn::Node* PolicyNet::logits_node(nn::Graph& g, nn::Node* o_seq) const {
    auto n = nets_of(ps_, cfg_);
    const int L = o_seq->val.shape[0];
    if (L < 1 || L > cfg_.context_T) throw std::invalid_argument("window length must be in [1, context_T]");
    nn::Node* x = g.add(o_seq, g.slice_rows(g.param(*n.pos), 0, L));
    x = nn::transformer_block_forward(g, n.block0, x, true);
    x = nn::transformer_block_forward(g, n.block1, x, true);
    return n.head(g, x);
}

std::vector<double> PolicyNet::policy_logits(const std::vector<std::vector<double>>& history) const {
    if (history.empty()) throw std::invalid_argument("history is empty");
    const int L = std::min<int>(cfg_.context_T, static_cast<int>(history.size()));
    nn::Tensor o({L, cfg_.d_p});
    for (int i = 0; i < L; ++i) {
        const auto& row = history[history.size() - L + i];
        if (static_cast<int>(row.size()) != cfg_.d_p) throw std::invalid_argument("history row dim mismatch");
        std::copy(row.begin(), row.end(), o.v.begin() + static_cast<size_t>(i) * cfg_.d_p);
    }
    nn::Graph g;
    nn::Node* logits = g.slice_rows(logits_node(g, g.constant(std::move(o))), L - 1, 1);
    return logits->val.v;
}

prompt::Projection PolicyNet::projection() const {
    return {ps_.find("policy.proj.w"), ps_.find("policy.proj.b")};
}

std::vector<double> cfg_logits(const std::vector<double>& cond, const std::vector<double>& uncond, double lambda) {
    if (cond.size() != uncond.size()) throw std::invalid_argument("cfg_logits shape mismatch");
    if (!std::isfinite(lambda) || lambda < 0) throw std::invalid_argument("lambda must be finite and >= 0");
    std::vector<double> out(cond.size());
    for (size_t i = 0; i < cond.size(); ++i) out[i] = (1.0 + lambda) * cond[i] - lambda * uncond[i];
    return out;
}

world::Action sample_action(const std::vector<double>& logits, const GuidanceConfig& cfg, nn::Rng& rng) {
    if (logits.size() != world::kNumActions) throw std::invalid_argument("expected 12 logits");
    for (double l : logits)
        if (!std::isfinite(l)) throw std::invalid_argument("non-finite logit");
    if (cfg.temperature < 1e-9) {
        const int a = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
        return static_cast<world::Action>(a);
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0;
    for (size_t i = 0; i < logits.size(); ++i) z += p[i] = std::exp((logits[i] - mx) / cfg.temperature);
    double u = rng.uniform() * z;
    for (size_t i = 0; i < p.size(); ++i) {
        u -= p[i];
        if (u < 0) return static_cast<world::Action>(i);
    }
    return static_cast<world::Action>(p.size() - 1);
}

namespace {

struct Window {
    const world::Trajectory* traj;
    int start, len;
};

// builds o_i = f_i + p rows for one window and returns mean CE over positions;
// goal_embed empty means a zeroed (unconditional) prompt. The prompt passes
// through the projection params inside the graph so project() trains here.
nn::Node* window_loss(nn::Graph& g, PolicyNet& net, const Window& w, const std::vector<double>& goal_embed) {
    std::vector<nn::Node*> rows;
    std::vector<int> targets;
    for (int i = 0; i < w.len; ++i) {
        const auto& fr = w.traj->frames[w.start + i];
        rows.push_back(g.reshape(net.encode_obs_node(g, fr.obs), {1, net.config().d_p}));
        targets.push_back(static_cast<int>(fr.action));
    }
    nn::Node* o_seq = g.concat_rows(rows);
    if (!goal_embed.empty()) {
        nn::Node* e = g.constant(nn::Tensor({1, static_cast<int>(goal_embed.size())}, goal_embed));
        nn::Node* p = g.add(g.matmul(e, g.param(*net.params().find("policy.proj.w"))),
                            g.param(*net.params().find("policy.proj.b")));
        o_seq = g.add(o_seq, g.reshape(p, {net.config().d_p}));
    }
    nn::Node* logits = net.logits_node(g, o_seq);
    return g.scale(g.cross_entropy_sum(logits, targets), 1.0 / w.len);
}

// the goal-segment embedding for the hindsight prompt; empty on dropout
std::vector<double> hindsight_embed(const embed::DualEncoder& enc, const world::Trajectory& traj, int window_end,
                                    const BcConfig& cfg, nn::Rng& rng, bool allow_dropout) {
    if (allow_dropout && rng.uniform() < cfg.prompt_dropout) return {};
    const int last = static_cast<int>(traj.frames.size()) - 1;
    const int g = std::min(last, window_end + rng.uniform_int(cfg.delta_min, cfg.delta_max));
    return enc.encode_segment(drift::segment_ending_at(traj, g));
}

}  // namespace

BcResult train_bc_hindsight(PolicyNet& net, const std::vector<world::Trajectory>& corpus,
                            const embed::DualEncoder& enc, const BcConfig& cfg) {
    if (corpus.empty()) throw std::invalid_argument("empty corpus");
    if (cfg.delta_min < 1 || cfg.delta_max < cfg.delta_min) throw std::invalid_argument("bad hindsight horizon");
    std::vector<const world::Trajectory*> train_set, val_set;
    for (size_t i = 0; i < corpus.size(); ++i) {
        if (corpus[i].frames.empty()) continue;
        (i % 10 == 9 ? val_set : train_set).push_back(&corpus[i]);
    }
    if (val_set.empty()) val_set.push_back(train_set.back());
    if (train_set.empty()) throw std::invalid_argument("no trainable trajectories");

    const int T = net.config().context_T;
    auto draw_window = [&](nn::Rng& rng, const std::vector<const world::Trajectory*>& set) {
        const world::Trajectory* traj = set[rng.uniform_int(0, static_cast<int>(set.size()) - 1)];
        const int frames = static_cast<int>(traj->frames.size());
        const int len = std::min(T, frames);
        const int start = frames > len ? rng.uniform_int(0, frames - len) : 0;
        return Window{traj, start, len};
    };

    // deterministic validation windows: first T frames of each val trajectory,
    // prompt from the earliest hindsight goal
    auto val_windows = [&] {
        std::vector<std::pair<Window, std::vector<double>>> out;
        for (const auto* traj : val_set) {
            Window w{traj, 0, std::min(T, static_cast<int>(traj->frames.size()))};
            const int last = static_cast<int>(traj->frames.size()) - 1;
            const int g = std::min(last, w.start + w.len - 1 + cfg.delta_min);
            auto seg = drift::segment_ending_at(*traj, g);
            out.emplace_back(w, prompt::project(net.projection(), enc.encode_segment(seg)));
        }
        return out;
    };

    auto val_accuracy = [&] {
        int hit = 0, total = 0;
        for (const auto& [w, p] : val_windows()) {
            nn::Graph g;
            std::vector<nn::Node*> rows;
            for (int i = 0; i < w.len; ++i)
                rows.push_back(g.reshape(net.encode_obs_node(g, w.traj->frames[w.start + i].obs), {1, net.config().d_p}));
            nn::Node* o_seq = g.add(g.concat_rows(rows), g.constant(nn::Tensor({net.config().d_p}, p)));
            nn::Node* logits = net.logits_node(g, o_seq);
            for (int i = 0; i < w.len; ++i) {
                const double* row = &logits->val[static_cast<std::int64_t>(i) * world::kNumActions];
                const int a = static_cast<int>(std::max_element(row, row + world::kNumActions) - row);
                hit += a == static_cast<int>(w.traj->frames[w.start + i].action);
                ++total;
            }
        }
        return total ? static_cast<double>(hit) / total : 0.0;
    };

    nn::TrainConfig tc;
    tc.learning_rate = cfg.learning_rate;
    tc.batch_size = cfg.batch_windows;
    tc.iterations = cfg.iterations;
    tc.seed = cfg.seed;
    BcResult res;
    res.curve = nn::run_training(
        net.params(), tc,
        [&](nn::Graph& g, nn::Rng& rng, int) {
            std::vector<nn::Node*> losses;
            for (int b = 0; b < cfg.batch_windows; ++b) {
                Window w = draw_window(rng, train_set);
                auto e = hindsight_embed(enc, *w.traj, w.start + w.len - 1, cfg, rng, true);
                losses.push_back(g.reshape(window_loss(g, net, w, e), {1}));
            }
            nn::Node* loss = g.scale(g.sum_all(g.concat_last(losses)), 1.0 / cfg.batch_windows);
            g.backward(loss);
            return loss->val[0];
        },
        val_accuracy, std::max(1, cfg.iterations / 8));

    res.val_accuracy = val_accuracy();
    std::array<int, world::kNumActions> counts{};
    int total = 0;
    for (const auto* traj : val_set)
        for (int i = 0; i < std::min(T, static_cast<int>(traj->frames.size())); ++i) {
            ++counts[static_cast<int>(traj->frames[i].action)];
            ++total;
        }
    res.majority_baseline = total ? static_cast<double>(*std::max_element(counts.begin(), counts.end())) / total : 0.0;
    return res;
}

}  // namespace voxdream::policy
