#include "voxdream/embed/embed.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "voxdream/expert/expert.hpp"
#include "voxdream/nn/layers.hpp"
#include "voxdream/world/trajectory.hpp"

namespace voxdream::embed {

using nn::Graph;
using nn::Node;
using world::Observation;

namespace {

constexpr int kTokDim = 32;

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

struct EncoderNets {
    nn::Param* tok_embed = nullptr;
    nn::Mlp text_mlp;
    nn::Dense frame_dense;
    nn::Mlp seg_mlp;
    nn::Param* log_temp = nullptr;
};

// the nets are rebuilt as views over the param store on each use
EncoderNets nets(nn::ParamStore& ps, const EmbedConfig& cfg) {
    EncoderNets n;
    n.tok_embed = ps.find("embed.tok");
    n.log_temp = ps.find("embed.log_temp");
    n.text_mlp.layers = {{ps.find("embed.text0.w"), ps.find("embed.text0.b"), kTokDim, cfg.hidden},
                         {ps.find("embed.text1.w"), ps.find("embed.text1.b"), cfg.hidden, cfg.d_e}};
    n.frame_dense = {ps.find("embed.frame.w"), ps.find("embed.frame.b"), world::kObsFeatDim, cfg.hidden};
    n.seg_mlp.layers = {{ps.find("embed.seg0.w"), ps.find("embed.seg0.b"), cfg.hidden, cfg.hidden},
                        {ps.find("embed.seg1.w"), ps.find("embed.seg1.b"), cfg.hidden, cfg.d_e}};
    return n;
}

}  // namespace

DualEncoder::DualEncoder(const EmbedConfig& cfg, std::vector<std::string> vocab, nn::Rng& rng)
    : cfg_(cfg), vocab_(std::move(vocab)) {
    if (vocab_.empty()) throw std::invalid_argument("embedder vocabulary is empty");
    for (size_t i = 0; i < vocab_.size(); ++i) word_id_[vocab_[i]] = static_cast<int>(i);
    ps_.add("embed.tok", nn::gaussian_init({static_cast<int>(vocab_.size()), kTokDim}, 0.1, rng));
    nn::make_dense(ps_, "embed.text0", kTokDim, cfg_.hidden, rng);
    nn::make_dense(ps_, "embed.text1", cfg_.hidden, cfg_.d_e, rng);
    nn::make_dense(ps_, "embed.frame", world::kObsFeatDim, cfg_.hidden, rng);
    nn::make_dense(ps_, "embed.seg0", cfg_.hidden, cfg_.hidden, rng);
    nn::make_dense(ps_, "embed.seg1", cfg_.hidden, cfg_.d_e, rng);
    nn::Tensor lt({1});
    lt.v[0] = std::log(0.07);  // CLIP-style init
    ps_.add("embed.log_temp", lt);
}

int DualEncoder::token_id(const std::string& word) const {
    auto it = word_id_.find(word);
    if (it == word_id_.end()) throw std::invalid_argument("token not in vocabulary: " + word);
    return it->second;
}

Node* DualEncoder::text_node(Graph& g, const std::string& y) const {
    const auto words = tokenize(y);
    if (words.empty()) throw std::invalid_argument("empty instruction");
    std::vector<int> ids;
    for (const auto& w : words) ids.push_back(token_id(w));
    const EncoderNets n = nets(ps_, cfg_);
    Node* x = g.mean_rows(g.gather_rows(g.param(*n.tok_embed), ids));
    return g.normalize(n.text_mlp(g, x));
}

Node* DualEncoder::segment_node(Graph& g, const std::vector<Observation>& frames) const {
    if (static_cast<int>(frames.size()) != kSegmentLen)
        throw std::invalid_argument("segment must have exactly 16 frames, got " + std::to_string(frames.size()));
    nn::Tensor feats({kSegmentLen, world::kObsFeatDim});
    for (int t = 0; t < kSegmentLen; ++t) {
        const nn::Tensor f = world::obs_features(frames[t]);
        std::copy(f.v.begin(), f.v.end(), feats.v.begin() + static_cast<size_t>(t) * world::kObsFeatDim);
    }
    const EncoderNets n = nets(ps_, cfg_);
    Node* x = g.tanh_op(n.frame_dense(g, g.constant(std::move(feats))));
    return g.normalize(n.seg_mlp(g, g.mean_rows(x)));
}

Node* DualEncoder::log_temp_node(Graph& g) const { return g.param(*nets(ps_, cfg_).log_temp); }

double DualEncoder::temperature() const { return std::exp(ps_.find("embed.log_temp")->value[0]); }

std::vector<double> DualEncoder::encode_text(const std::string& y) const {
    Graph g;
    return text_node(g, y)->val.v;
}

std::vector<double> DualEncoder::encode_segment(const std::vector<Observation>& frames) const {
    Graph g;
    return segment_node(g, frames)->val.v;
}

Node* contrastive_loss(Graph& g, const std::vector<Node*>& seg_embeds, const std::vector<Node*>& text_embeds,
                       Node* log_temp) {
    const int B = static_cast<int>(seg_embeds.size());
    if (B < 2 || text_embeds.size() != seg_embeds.size())
        throw std::invalid_argument("contrastive batch needs >= 2 matched pairs");
    const int d = static_cast<int>(seg_embeds[0]->val.size());
    std::vector<Node*> srows, trows;
    for (int i = 0; i < B; ++i) {
        srows.push_back(g.reshape(seg_embeds[i], {1, d}));
        trows.push_back(g.reshape(text_embeds[i], {1, d}));
    }
    Node* S = g.concat_rows(srows);
    Node* T = g.concat_rows(trows);
    Node* inv_temp = g.exp_op(g.scale(log_temp, -1.0));
    Node* logits = g.mul(g.matmul(S, g.transpose(T)), inv_temp);
    std::vector<int> diag(B);
    for (int i = 0; i < B; ++i) diag[i] = i;
    Node* loss = g.add(g.cross_entropy_sum(logits, diag), g.cross_entropy_sum(g.transpose(logits), diag));
    return g.scale(loss, 1.0 / (2.0 * B));
}

namespace {

double batch_loss(DualEncoder& enc, Graph& g, const std::vector<ContrastiveExample>& set,
                  const std::vector<int>& idx, bool do_backward) {
    std::vector<Node*> segs, txts;
    for (int i : idx) {
        segs.push_back(enc.segment_node(g, set[i].frames));
        txts.push_back(enc.text_node(g, set[i].instruction));
    }
    Node* loss = contrastive_loss(g, segs, txts, enc.log_temp_node(g));
    if (do_backward) g.backward(loss);
    return loss->val[0];
}

}  // namespace

nn::LossCurve train_contrastive(DualEncoder& enc, const std::vector<ContrastiveExample>& train_set,
                                const std::vector<ContrastiveExample>& val_set, const nn::TrainConfig& cfg) {
    if (train_set.size() < 2) throw std::invalid_argument("contrastive training needs >= 2 examples");
    {
        std::set<std::string> distinct;
        for (const auto& e : train_set) distinct.insert(e.instruction);
        if (distinct.size() < 2) throw std::invalid_argument("contrastive training needs >= 2 distinct instructions");
    }
    const int B = std::min<int>(cfg.batch_size, train_set.size());

    auto step = [&](Graph& g, nn::Rng& rng, int) {
        std::vector<int> idx;
        for (int tries = 0; tries < 100; ++tries) {
            idx.clear();
            std::set<std::string> distinct;
            for (int i = 0; i < B; ++i) {
                idx.push_back(rng.uniform_int(0, static_cast<int>(train_set.size()) - 1));
                distinct.insert(train_set[idx.back()].instruction);
            }
            if (distinct.size() >= 2) break;
            idx.clear();
        }
        if (idx.empty()) throw std::runtime_error("could not draw a batch with 2 distinct instructions");
        return batch_loss(enc, g, train_set, idx, true);
    };

    std::function<double()> validation;
    if (!val_set.empty()) {
        std::vector<int> vidx;
        for (int i = 0; i < std::min<int>(32, val_set.size()); ++i) vidx.push_back(i);
        if (vidx.size() >= 2)
            validation = [&enc, &val_set, vidx]() {
                Graph g;
                return batch_loss(enc, g, val_set, vidx, false);
            };
    }
    return nn::run_training(enc.params(), cfg, step, validation, validation ? std::max(1, cfg.iterations / 10) : 0);
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine dim mismatch");
    double num = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        num += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return num / std::max(std::sqrt(na) * std::sqrt(nb), 1e-12);
}

double retrieval_accuracy(const DualEncoder& enc, const std::vector<ContrastiveExample>& examples,
                          std::uint64_t seed, int n_queries) {
    std::map<std::string, std::vector<int>> by_instr;
    for (size_t i = 0; i < examples.size(); ++i) by_instr[examples[i].instruction].push_back(static_cast<int>(i));
    if (by_instr.size() < 2) throw std::invalid_argument("retrieval needs >= 2 distinct instructions");
    nn::Rng rng(nn::Rng::mix(seed, 0x7e7e));
    int hits = 0;
    for (int q = 0; q < n_queries; ++q) {
        // one candidate segment per distinct instruction
        std::vector<std::pair<std::string, int>> gallery;
        for (const auto& [instr, idx] : by_instr)
            gallery.emplace_back(instr, idx[rng.uniform_int(0, static_cast<int>(idx.size()) - 1)]);
        const auto& [qinstr, qidx] = gallery[rng.uniform_int(0, static_cast<int>(gallery.size()) - 1)];
        const auto tq = enc.encode_text(qinstr);
        double best = -2;
        std::string best_instr;
        for (const auto& [instr, idx] : gallery) {
            const double s = cosine(tq, enc.encode_segment(examples[idx].frames));
            if (s > best) {
                best = s;
                best_instr = instr;
            }
        }
        if (best_instr == qinstr) ++hits;
    }
    return static_cast<double>(hits) / n_queries;
}

// ---- memory bank ----

void MemoryBank::add(MemoryEntry e) {
    buckets[e.instruction].push_back(static_cast<int>(entries.size()));
    entries.push_back(std::move(e));
}

std::vector<Observation> still_stack(const Observation& o) { return std::vector<Observation>(kSegmentLen, o); }

const MemoryEntry& memory_retrieve(const MemoryBank& bank, const DualEncoder& enc, const std::string& y,
                                   const Observation& o_t) {
    if (bank.entries.empty()) throw std::invalid_argument("memory bank is empty");
    const auto ty = enc.encode_text(y);
    // stage 1: nearest bucket key by text cosine
    const std::string* key = nullptr;
    double best = -2;
    for (const auto& [k, idx] : bank.buckets) {
        if (idx.empty()) throw std::runtime_error("memory bucket for instruction '" + k + "' is empty");
        const double s = cosine(ty, enc.encode_text(k));
        if (s > best) {
            best = s;
            key = &k;
        }
    }
    // stage 2: nearest anchor within the bucket by still-stack cosine
    const auto qo = enc.encode_segment(still_stack(o_t));
    const MemoryEntry* out = nullptr;
    best = -2;
    for (int i : bank.buckets.at(*key)) {
        const double s = cosine(qo, enc.encode_segment(still_stack(bank.entries[i].anchor)));
        if (s > best) {  // strict: ties keep the lowest index
            best = s;
            out = &bank.entries[i];
        }
    }
    return *out;
}

MemoryBank build_memory_bank(const std::string& corpus_dir, const DualEncoder& enc, int per_instruction,
                             std::uint64_t seed) {
    const auto manifest = expert::load_manifest(corpus_dir + "/manifest.json");
    // bucket candidate (anchor frame, segment) per instruction via task items
    std::map<std::string, std::vector<MemoryEntry>> cand;
    for (const auto& f : manifest.files) {
        const world::Trajectory traj = world::load_trajectory(corpus_dir + "/" + f);
        std::set<std::string> items;
        for (const auto& fr : traj.frames)
            for (const auto& e : fr.events)
                if (e.kind == world::EventKind::pick_up || e.kind == world::EventKind::craft_item) items.insert(e.item);
        for (const auto& fr : traj.frames)
            for (const auto& e : fr.events) {
                std::string item = e.item;
                if (e.kind == world::EventKind::place_block) item = "tower";
                const auto& table = expert::instruction_table();
                if (!table.count(item)) continue;
                if (e.frame < kSegmentLen) continue;
                for (const auto& instr : table.at(item)) {
                    MemoryEntry me;
                    me.instruction = instr;
                    const int anchor_frame = std::max(0, e.frame - kSegmentLen);
                    me.anchor = traj.frames[anchor_frame].obs;
                    std::vector<Observation> seg;
                    for (int t = e.frame - kSegmentLen + 1; t <= e.frame; ++t) seg.push_back(traj.frames[t].obs);
                    me.segment_embed = enc.encode_segment(seg);
                    cand[instr].push_back(std::move(me));
                }
            }
    }
    MemoryBank bank;
    nn::Rng rng(nn::Rng::mix(seed, 0xba6cULL));
    for (auto& [instr, entries] : cand) {
        const int take = std::min<int>(per_instruction, entries.size());
        for (int i = 0; i < take; ++i) {
            const int j = rng.uniform_int(i, static_cast<int>(entries.size()) - 1);
            std::swap(entries[i], entries[j]);
            bank.add(std::move(entries[i]));
        }
    }
    return bank;
}

namespace {

nlohmann::ordered_json obs_json(const Observation& o) {
    nlohmann::ordered_json j;
    j["crop"] = std::vector<int>(o.crop.begin(), o.crop.end());
    j["pitch"] = static_cast<int>(o.pitch);
    j["held"] = o.held;
    j["inventory"] = std::vector<int>(o.inventory.begin(), o.inventory.end());
    j["frame"] = o.frame;
    return j;
}

Observation obs_from_json(const nlohmann::json& j) {
    Observation o;
    const auto crop = j.at("crop").get<std::vector<int>>();
    for (size_t i = 0; i < o.crop.size(); ++i) o.crop[i] = static_cast<std::uint8_t>(crop.at(i));
    o.pitch = static_cast<world::Pitch>(j.at("pitch").get<int>());
    o.held = j.at("held").get<int>();
    const auto inv = j.at("inventory").get<std::vector<int>>();
    for (size_t i = 0; i < o.inventory.size(); ++i) o.inventory[i] = inv.at(i);
    o.frame = j.at("frame").get<int>();
    return o;
}

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return b[0] | (b[1] << 8) | (b[2] << 16) | (std::uint32_t(b[3]) << 24);
}

}  // namespace

void save_memory_bank(const std::string& path, const MemoryBank& bank, int d_e) {
    nlohmann::ordered_json head;
    head["d_e"] = d_e;
    nlohmann::ordered_json entries = nlohmann::ordered_json::array();
    for (const auto& e : bank.entries) {
        nlohmann::ordered_json je;
        je["instruction"] = e.instruction;
        je["anchor"] = obs_json(e.anchor);
        entries.push_back(je);
    }
    head["entries"] = entries;
    const std::string hs = head.dump();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write memory bank " + path);
    os.write("VDMB", 4);
    write_u32(os, static_cast<std::uint32_t>(hs.size()));
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& e : bank.entries) {
        if (static_cast<int>(e.segment_embed.size()) != d_e)
            throw std::runtime_error("memory bank embedding dim mismatch");
        for (double v : e.segment_embed) {
            const float f = static_cast<float>(v);
            std::uint32_t u;
            std::memcpy(&u, &f, 4);
            write_u32(os, u);
        }
    }
}

MemoryBank load_memory_bank(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read memory bank " + path);
    char magic[4];
    is.read(magic, 4);
    if (std::string(magic, 4) != "VDMB") throw std::runtime_error("bad memory bank magic in " + path);
    const std::uint32_t hlen = read_u32(is);
    std::string hs(hlen, '\0');
    is.read(hs.data(), hlen);
    const auto head = nlohmann::json::parse(hs);
    const int d_e = head.at("d_e").get<int>();
    MemoryBank bank;
    for (const auto& je : head.at("entries")) {
        MemoryEntry e;
        e.instruction = je.at("instruction").get<std::string>();
        e.anchor = obs_from_json(je.at("anchor"));
        e.segment_embed.resize(d_e);
        for (int i = 0; i < d_e; ++i) {
            const std::uint32_t u = read_u32(is);
            float f;
            std::memcpy(&f, &u, 4);
            e.segment_embed[i] = f;
        }
        bank.add(std::move(e));
    }
    if (!is) throw std::runtime_error("truncated memory bank " + path);
    return bank;
}

}  // namespace voxdream::embed
