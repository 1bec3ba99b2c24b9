#include "voxdream/imaginator/imaginator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "voxdream/drift/drift.hpp"
#include "voxdream/world/trajectory.hpp"

namespace voxdream::imaginator {

using nn::Graph;
using nn::Node;
using nn::Tensor;
using world::Observation;

DiffusionSchedule::DiffusionSchedule(int steps, double beta_min, double beta_max) : S(steps) {
    if (S < 1) throw std::invalid_argument("schedule needs >= 1 step");
    const double scale = 1000.0 / S;  // keep ab_S ~ 0 at few steps
    beta.assign(S + 1, 0.0);
    alpha_bar.assign(S + 1, 1.0);
    for (int s = 1; s <= S; ++s) {
        const double t = S == 1 ? 0.0 : static_cast<double>(s - 1) / (S - 1);
        beta[s] = std::min((beta_min + (beta_max - beta_min) * t) * scale, 0.999);
        alpha_bar[s] = alpha_bar[s - 1] * (1.0 - beta[s]);
    }
}

namespace {

std::vector<std::string> tokenize(const std::string& y) {
    std::vector<std::string> out;
    std::string word;
    for (char c : y + " ") {
        if (c == ' ') {
            if (!word.empty()) out.push_back(word);
            word.clear();
        } else {
            word.push_back(c);
        }
    }
    return out;
}

}  // namespace

Imaginator::Imaginator(const ImaginatorConfig& cfg, std::vector<std::string> vocab, nn::Rng& rng)
    : cfg_(cfg), sched_(cfg.S), vocab_(std::move(vocab)) {
    if (vocab_.empty()) throw std::invalid_argument("imaginator vocabulary is empty");
    const int V = vocab_size();
    const int d = cfg_.model_dim;
    ps_.add("im.tok", nn::gaussian_init({V, d}, 0.05, rng));
    ps_.add("im.pos", nn::gaussian_init({cfg_.max_seq, d}, 0.05, rng));
    nn::make_dense(ps_, "im.prefix", cfg_.prefix_dim, d, rng);
    nn::make_transformer_block(ps_, "im.block0", d, cfg_.heads, cfg_.ff, rng);
    nn::make_transformer_block(ps_, "im.block1", d, cfg_.heads, cfg_.ff, rng);
    nn::make_dense(ps_, "im.head", d, V, rng);

    ps_.add("im.queries", nn::gaussian_init({cfg_.q_queries, d}, 0.05, rng));
    nn::make_attention(ps_, "im.xattn0", d, cfg_.heads, rng);
    nn::make_attention(ps_, "im.xattn1", d, cfg_.heads, rng);
    nn::make_dense(ps_, "im.qout", d, cfg_.d_f, rng);

    const int ch = cfg_.channels, ci = 2 * ch, b = cfg_.base;
    nn::make_dense(ps_, "im.fproj", cfg_.d_f, ci, rng);
    ps_.add("im.semb", nn::gaussian_init({cfg_.S, ci}, 0.05, rng));
    auto conv = [&](const std::string& name, int in, int out) {
        const double lim = std::sqrt(1.0 / (27.0 * in));
        Tensor k({3, 3, 3, in, out});
        for (auto& v : k.v) v = rng.uniform(-lim, lim);
        ps_.add(name + ".k", std::move(k));
        ps_.add(name + ".b", Tensor({out}));
    };
    conv("im.cin", ci, b);
    conv("im.down1", b, 2 * b);
    conv("im.down2", 2 * b, 4 * b);
    conv("im.up1", 6 * b, 2 * b);
    conv("im.up2", 3 * b, b);
    conv("im.cout", b, ch);
}

int Imaginator::token_id(const std::string& word) const {
    for (size_t i = 0; i < vocab_.size(); ++i)
        if (vocab_[i] == word) return static_cast<int>(i);
    throw std::invalid_argument("token not in vocabulary: " + word);
}

namespace {

struct LmOut {
    Node* hidden;  // [L, d]
    int text_len;
};

}  // namespace

// shared LM forward; returns all hidden states
static LmOut lm_forward(const Imaginator& im, nn::ParamStore& ps, Graph& g, const Tensor& obs_feat,
                        const std::string& y) {
    const auto& cfg = im.config();
    if (static_cast<int>(obs_feat.size()) != cfg.prefix_dim)
        throw std::invalid_argument("observation prefix dim mismatch");
    const auto words = tokenize(y);
    std::vector<int> ids;
    for (const auto& w : words) ids.push_back(im.token_id(w));
    const int T = static_cast<int>(ids.size());
    const int L = 1 + T + cfg.k;
    if (L > cfg.max_seq) throw std::invalid_argument("sequence exceeds max_seq");
    for (int i = 0; i < cfg.k; ++i) ids.push_back(im.goal_id(i));

    nn::Dense prefix{ps.find("im.prefix.w"), ps.find("im.prefix.b"), cfg.prefix_dim, cfg.model_dim};
    Node* pre = g.tanh_op(prefix(g, g.reshape(g.constant(obs_feat), {1, cfg.prefix_dim})));
    Node* toks = g.gather_rows(g.param(*ps.find("im.tok")), ids);
    Node* x = g.concat_rows({pre, toks});
    x = g.add(x, g.slice_rows(g.param(*ps.find("im.pos")), 0, L));

    for (const char* bn : {"im.block0", "im.block1"}) {
        const std::string n(bn);
        nn::TransformerBlock blk;
        blk.attn = {{ps.find(n + ".attn.q.w"), ps.find(n + ".attn.q.b"), cfg.model_dim, cfg.model_dim},
                    {ps.find(n + ".attn.k.w"), ps.find(n + ".attn.k.b"), cfg.model_dim, cfg.model_dim},
                    {ps.find(n + ".attn.v.w"), ps.find(n + ".attn.v.b"), cfg.model_dim, cfg.model_dim},
                    {ps.find(n + ".attn.o.w"), ps.find(n + ".attn.o.b"), cfg.model_dim, cfg.model_dim},
                    cfg.model_dim,
                    cfg.heads};
        blk.fc1 = {ps.find(n + ".fc1.w"), ps.find(n + ".fc1.b"), cfg.model_dim, cfg.ff};
        blk.fc2 = {ps.find(n + ".fc2.w"), ps.find(n + ".fc2.b"), cfg.ff, cfg.model_dim};
        blk.ln1_g = ps.find(n + ".ln1.g");
        blk.ln1_b = ps.find(n + ".ln1.b");
        blk.ln2_g = ps.find(n + ".ln2.g");
        blk.ln2_b = ps.find(n + ".ln2.b");
        x = nn::transformer_block_forward(g, blk, x, true);
    }
    return {x, T};
}

Node* Imaginator::goal_hidden(Graph& g, const Tensor& obs_feat, const std::string& y) const {
    const LmOut o = lm_forward(*this, ps_, g, obs_feat, y);
    return g.slice_rows(o.hidden, 1 + o.text_len, cfg_.k);
}

Node* Imaginator::goal_token_loss(Graph& g, const Tensor& obs_feat, const std::string& y) const {
    const LmOut o = lm_forward(*this, ps_, g, obs_feat, y);
    nn::Dense head{ps_.find("im.head.w"), ps_.find("im.head.b"), cfg_.model_dim, vocab_size()};
    // hidden at position p predicts the token at p+1; GOAL_i sits at 1+T+i
    Node* pred_rows = g.slice_rows(o.hidden, o.text_len, cfg_.k);
    Node* logits = head(g, pred_rows);
    std::vector<int> targets;
    for (int i = 0; i < cfg_.k; ++i) targets.push_back(goal_id(i));
    return g.cross_entropy_sum(logits, targets);
}

Node* Imaginator::qform(Graph& g, Node* h_goal) const {
    const int d = cfg_.model_dim;
    Node* x = g.param(*ps_.find("im.queries"));
    for (const char* an : {"im.xattn0", "im.xattn1"}) {
        const std::string n(an);
        nn::Attention a{{ps_.find(n + ".q.w"), ps_.find(n + ".q.b"), d, d},
                        {ps_.find(n + ".k.w"), ps_.find(n + ".k.b"), d, d},
                        {ps_.find(n + ".v.w"), ps_.find(n + ".v.b"), d, d},
                        {ps_.find(n + ".o.w"), ps_.find(n + ".o.b"), d, d},
                        d,
                        cfg_.heads};
        x = nn::attention_forward(g, a, x, h_goal, false);
    }
    nn::Dense qout{ps_.find("im.qout.w"), ps_.find("im.qout.b"), d, cfg_.d_f};
    return qout(g, g.mean_rows(x));
}

Node* Imaginator::denoise(Graph& g, int s, Node* z_s, const Tensor& cond_channels, Node* f_star) const {
    if (s < 1 || s > cfg_.S) throw std::invalid_argument("diffusion step s outside [1,S]");
    const int ci = 2 * cfg_.channels;
    Node* x = g.concat_last({z_s, g.constant(cond_channels)});
    nn::Dense fproj{ps_.find("im.fproj.w"), ps_.find("im.fproj.b"), cfg_.d_f, ci};
    x = g.add(x, fproj(g, f_star));
    x = g.add(x, g.reshape(g.gather_rows(g.param(*ps_.find("im.semb")), {s - 1}), {ci}));

    auto conv = [&](const std::string& n, Node* in, int stride) {
        return g.conv3d(in, g.param(*ps_.find(n + ".k")), g.param(*ps_.find(n + ".b")), stride, 1);
    };
    Node* h0 = g.tanh_op(conv("im.cin", x, 1));
    Node* h1 = g.tanh_op(conv("im.down1", h0, 2));
    Node* h2 = g.tanh_op(conv("im.down2", h1, 2));
    const int d1 = h1->val.shape[0], d0 = h0->val.shape[0];
    Node* u1 = g.tanh_op(conv("im.up1", g.concat_last({g.upsample3d(h2, d1, d1, d1), h1}), 1));
    Node* u2 = g.tanh_op(conv("im.up2", g.concat_last({g.upsample3d(u1, d0, d0, d0), h0}), 1));
    return conv("im.cout", u2, 1);
}

Node* Imaginator::dream_loss(Graph& g, const Tensor& obs_feat, const Tensor& cond_channels,
                             const Tensor& goal_channels, const std::string& y, int s, const Tensor& eps) const {
    if (eps.shape != goal_channels.shape) throw std::invalid_argument("eps/goal shape mismatch");
    const double ab = sched_.alpha_bar[s];
    Tensor z_s(goal_channels.shape);
    for (std::int64_t i = 0; i < z_s.size(); ++i)
        z_s[i] = std::sqrt(ab) * goal_channels[i] + std::sqrt(1.0 - ab) * eps[i];
    Node* f_star = qform(g, goal_hidden(g, obs_feat, y));
    Node* pred = denoise(g, s, g.constant(std::move(z_s)), cond_channels, f_star);
    return g.sum_all(g.square(g.sub(g.constant(eps), pred)));
}

Imagination random_noise_imagination(const nn::Shape& shape, std::uint64_t seed) {
    nn::Rng rng(nn::Rng::mix(seed, 0x9015eULL));
    Imagination im;
    im.tensor = Tensor(shape);
    for (auto& v : im.tensor.v) v = rng.normal();
    if (shape == nn::Shape{world::kCrop, world::kCrop, world::kCrop, world::kNumBlocks})
        im.decoded.crop = world::decode_crop(im.tensor);
    return im;
}

Imagination Imaginator::imagine(const Observation& o, const std::string& y, int sampler_steps, nn::Rng& rng) const {
    if (sampler_steps < 1) throw std::invalid_argument("sampler_steps must be >= 1");
    const int c = cfg_.crop, ch = cfg_.channels;
    // conditioning computed once
    Tensor f_star;
    {
        Graph g;
        f_star = qform(g, goal_hidden(g, world::obs_features(o), y))->val;
    }
    const Tensor cond = world::crop_onehot(o);

    // evenly strided step ladder ending at s=S
    const int K = std::min(sampler_steps, sched_.S);
    std::vector<int> ladder(K);
    for (int j = 1; j <= K; ++j) ladder[j - 1] = static_cast<int>(std::lround(static_cast<double>(j) * sched_.S / K));
    ladder[K - 1] = sched_.S;

    Tensor z({c, c, c, ch});
    for (auto& v : z.v) v = rng.normal();
    for (int i = K - 1; i >= 0; --i) {
        const int s = ladder[i];
        const double ab = sched_.alpha_bar[s];
        const double ab_prev = i == 0 ? 1.0 : sched_.alpha_bar[ladder[i - 1]];
        const double a_eff = ab / ab_prev;
        const double b_eff = 1.0 - a_eff;
        Graph g;
        const Tensor& pred = denoise(g, s, g.constant(z), cond, g.constant(f_star))->val;
        const double sigma = i == 0 ? 0.0 : std::sqrt((1.0 - ab_prev) / (1.0 - ab) * b_eff);
        for (std::int64_t n = 0; n < z.size(); ++n) {
            z[n] = (z[n] - b_eff / std::sqrt(1.0 - ab) * pred[n]) / std::sqrt(a_eff);
            if (sigma > 0) z[n] += sigma * rng.normal();
        }
    }
    Imagination im;
    im.tensor = std::move(z);
    if (c == world::kCrop && ch == world::kNumBlocks) {
        im.decoded = o;  // aux carried from the source observation
        im.decoded.crop = world::decode_crop(im.tensor);
    }
    return im;
}

DreamTrainResult train_imaginator(Imaginator& im, const std::vector<DreamSample>& train_set,
                                  const std::vector<DreamSample>& val_set, const nn::TrainConfig& cfg) {
    if (train_set.empty()) throw std::invalid_argument("imaginator training set is empty");
    const auto& icfg = im.config();
    const int S = icfg.S;

    // deterministic validation draws so the 0.5x gate is well-posed
    std::vector<std::pair<int, Tensor>> val_noise;
    {
        nn::Rng vr(nn::Rng::mix(cfg.seed, 0x7a1ULL));
        for (size_t i = 0; i < val_set.size(); ++i) {
            Tensor eps({icfg.crop, icfg.crop, icfg.crop, icfg.channels});
            for (auto& v : eps.v) v = vr.normal();
            val_noise.emplace_back(1 + static_cast<int>(i % S), std::move(eps));
        }
    }
    auto val_loss = [&]() {
        if (val_set.empty()) return 0.0;
        double total = 0;
        for (size_t i = 0; i < val_set.size(); ++i) {
            Graph g;
            const auto& s = val_set[i];
            total += im.dream_loss(g, world::obs_features(s.current), world::crop_onehot(s.current),
                                   world::crop_onehot(s.goal), s.instruction, val_noise[i].first,
                                   val_noise[i].second)
                         ->val[0];
        }
        return total / val_set.size();
    };

    DreamTrainResult out;
    out.initial_val_loss = val_loss();

    auto step = [&](Graph& g, nn::Rng& rng, int) {
        const int B = std::min<int>(cfg.batch_size, train_set.size());
        Node* total = nullptr;
        for (int b = 0; b < B; ++b) {
            const auto& s = train_set[rng.uniform_int(0, static_cast<int>(train_set.size()) - 1)];
            const int step_s = rng.uniform_int(1, S);
            Tensor eps({icfg.crop, icfg.crop, icfg.crop, icfg.channels});
            for (auto& v : eps.v) v = rng.normal();
            Node* l = im.dream_loss(g, world::obs_features(s.current), world::crop_onehot(s.current),
                                    world::crop_onehot(s.goal), s.instruction, step_s, eps);
            Node* llm = im.goal_token_loss(g, world::obs_features(s.current), s.instruction);
            l = g.add(l, g.scale(llm, icfg.lambda_llm));
            total = total ? g.add(total, l) : l;
        }
        total = g.scale(total, 1.0 / cfg.batch_size);
        g.backward(total);
        return total->val[0];
    };

    out.curve = nn::run_training(im.params(), cfg, step, val_set.empty() ? std::function<double()>{} : val_loss,
                                 val_set.empty() ? 0 : std::max(1, cfg.iterations / 8));
    out.final_val_loss = val_loss();
    return out;
}

std::vector<DreamSample> load_dream_samples(const std::string& dataset_dir, const std::string& corpus_dir,
                                            const std::string& split, int limit) {
    const auto recs = drift::load_triplets(dataset_dir + "/triplets.jsonl");
    std::vector<const drift::TripletRecord*> keep;
    for (const auto& r : recs)
        if (r.split == split) keep.push_back(&r);
    if (limit > 0 && static_cast<int>(keep.size()) > limit) {
        std::vector<const drift::TripletRecord*> sub;
        const double stride = static_cast<double>(keep.size()) / limit;
        for (int i = 0; i < limit; ++i) sub.push_back(keep[static_cast<size_t>(i * stride)]);
        keep = std::move(sub);
    }
    std::unordered_map<std::string, world::Trajectory> cache;
    std::vector<DreamSample> out;
    for (const auto* r : keep) {
        auto it = cache.find(r->traj_id);
        if (it == cache.end())
            it = cache.emplace(r->traj_id, world::load_trajectory(corpus_dir + "/" + r->traj_id + ".jsonl")).first;
        out.push_back({it->second.frames[r->current_frame].obs, it->second.frames[r->goal_frame].obs,
                       r->instruction});
    }
    return out;
}

}  // namespace voxdream::imaginator
