#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "voxdream/embed/embed.hpp"
#include "voxdream/expert/expert.hpp"
#include "voxdream/nn/layers.hpp"

using namespace voxdream;
using namespace voxdream::embed;
using world::Observation;

namespace {

double norm(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// synthetic observations whose inventory encodes a class label, so the
// contrastive objective is easily separable
Observation labeled_obs(int cls, nn::Rng& rng) {
    Observation o;
    for (auto& c : o.crop) c = static_cast<std::uint8_t>(rng.uniform_int(0, world::kNumBlocks - 1));
    o.inventory[cls % world::kNumItems] = 30 + rng.uniform_int(0, 20);
    return o;
}

std::vector<ContrastiveExample> synthetic_set(const std::vector<std::string>& instrs, int per_class,
                                              std::uint64_t seed) {
    nn::Rng rng(seed);
    std::vector<ContrastiveExample> out;
    for (int c = 0; c < static_cast<int>(instrs.size()); ++c)
        for (int i = 0; i < per_class; ++i) {
            ContrastiveExample e;
            for (int t = 0; t < kSegmentLen; ++t) e.frames.push_back(labeled_obs(c, rng));
            e.instruction = instrs[c];
            out.push_back(std::move(e));
        }
    return out;
}

DualEncoder small_encoder(std::uint64_t seed, int d_e = 8, int hidden = 16) {
    EmbedConfig cfg;
    cfg.d_e = d_e;
    cfg.hidden = hidden;
    nn::Rng rng(seed);
    return DualEncoder(cfg, expert::instruction_vocabulary(), rng);
}

}  // namespace

TEST_CASE("encoders are deterministic and unit-norm") {
    DualEncoder enc = small_encoder(1);
    const auto a = enc.encode_text("collect dirt");
    const auto b = enc.encode_text("collect dirt");
    CHECK(a == b);
    CHECK(norm(a) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(enc.encode_text("gather dirt") != a);
    CHECK_THROWS_AS((void)enc.encode_text("collect lava"), std::invalid_argument);

    nn::Rng rng(3);
    Observation o = labeled_obs(2, rng);
    const auto s = enc.encode_segment(still_stack(o));
    CHECK(norm(s) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(enc.encode_segment(still_stack(o)) == s);
    CHECK_THROWS_AS((void)enc.encode_segment({o, o}), std::invalid_argument);
}

TEST_CASE("contrastive loss: symmetric, limit case, grad check") {
    // orthogonal perfect embeddings -> loss -> 0 as temperature -> 0+
    for (double log_temp : {std::log(0.5), std::log(0.05), std::log(0.005)}) {
        nn::Graph g;
        nn::Tensor e1({2}), e2({2}), lt({1});
        e1.v = {1, 0};
        e2.v = {0, 1};
        lt.v = {log_temp};
        nn::Node* a = g.constant(e1);
        nn::Node* b = g.constant(e2);
        nn::Node* loss = contrastive_loss(g, {a, b}, {a, b}, g.constant(lt));
        if (log_temp < std::log(0.01)) CHECK(loss->val[0] < 1e-10);
    }
    // loss at identical cond: swapping the two modalities leaves loss unchanged
    {
        nn::Rng rng(5);
        nn::Tensor s1 = nn::gaussian_init({3}, 1.0, rng), s2 = nn::gaussian_init({3}, 1.0, rng);
        nn::Tensor t1 = nn::gaussian_init({3}, 1.0, rng), t2 = nn::gaussian_init({3}, 1.0, rng);
        nn::Tensor lt({1});
        nn::Graph g;
        auto* l1 = contrastive_loss(g, {g.constant(s1), g.constant(s2)}, {g.constant(t1), g.constant(t2)},
                                    g.constant(lt));
        auto* l2 = contrastive_loss(g, {g.constant(t1), g.constant(t2)}, {g.constant(s1), g.constant(s2)},
                                    g.constant(lt));
        CHECK(l1->val[0] == doctest::Approx(l2->val[0]).epsilon(1e-12));
    }
    // grad check through both towers and the temperature
    {
        DualEncoder enc = small_encoder(7, 4, 6);
        const auto set = synthetic_set({"collect dirt", "chop a tree", "gather seeds"}, 1, 9);
        auto build = [&](nn::Graph& g) -> nn::Node* {
            std::vector<nn::Node*> segs, txts;
            for (const auto& e : set) {
                segs.push_back(enc.segment_node(g, e.frames));
                txts.push_back(enc.text_node(g, e.instruction));
            }
            return contrastive_loss(g, segs, txts, enc.log_temp_node(g));
        };
        // check a representative subset of params (full frame dense is large)
        std::vector<nn::Param*> ps;
        for (auto* p : enc.params().all())
            if (p->name != "embed.frame.w") ps.push_back(p);
        const auto rep = nn::grad_check(build, ps);
        INFO(rep.error, " worst ", rep.worst.param, " rel ", rep.max_rel_err);
        CHECK(rep.pass);
    }
}

TEST_CASE("training separates synthetic classes; retrieval beats chance") {
    const std::vector<std::string> instrs = {"collect dirt", "chop a tree", "gather seeds", "dig down"};
    const auto train_set = synthetic_set(instrs, 12, 21);
    const auto val_set = synthetic_set(instrs, 4, 22);

    DualEncoder enc = small_encoder(11, 8, 16);
    const double before = retrieval_accuracy(enc, val_set, 1, 40);

    nn::TrainConfig tc;
    tc.learning_rate = 3e-3;
    tc.batch_size = 8;
    tc.iterations = 120;
    tc.seed = 5;
    const auto curve = train_contrastive(enc, train_set, val_set, tc);
    REQUIRE(!curve.train.empty());
    REQUIRE(!curve.validation.empty());
    CHECK(curve.validation.back() < curve.validation.front());

    const double after = retrieval_accuracy(enc, val_set, 1, 40);
    CHECK(after >= 0.5);  // chance is 0.25
    CHECK(after > before - 0.05);

    // same-seed determinism of the trained params
    DualEncoder enc2 = small_encoder(11, 8, 16);
    train_contrastive(enc2, train_set, val_set, tc);
    for (auto* p : enc.params().all()) CHECK(p->value.v == enc2.params().find(p->name)->value.v);

    CHECK_THROWS_AS(train_contrastive(enc, synthetic_set({"collect dirt"}, 4, 1), {}, tc), std::invalid_argument);
}

TEST_CASE("memory_retrieve equals brute-force two-stage scan on random banks") {
    DualEncoder enc = small_encoder(31, 8, 12);
    const std::vector<std::string> instrs = {"collect dirt", "chop a tree", "gather seeds", "build a tower"};
    nn::Rng rng(41);
    for (int trial = 0; trial < 25; ++trial) {
        MemoryBank bank;
        const int n = 1 + rng.uniform_int(0, 29);
        for (int i = 0; i < n; ++i) {
            MemoryEntry e;
            e.instruction = instrs[rng.uniform_int(0, static_cast<int>(instrs.size()) - 1)];
            e.anchor = labeled_obs(rng.uniform_int(0, 7), rng);
            e.segment_embed = enc.encode_segment(still_stack(e.anchor));
            bank.add(std::move(e));
        }
        const std::string y = instrs[rng.uniform_int(0, static_cast<int>(instrs.size()) - 1)];
        const Observation q = labeled_obs(rng.uniform_int(0, 7), rng);
        const MemoryEntry& got = memory_retrieve(bank, enc, y, q);

        // oracle: brute-force scan
        const auto ty = enc.encode_text(y);
        std::string best_key;
        double best = -2;
        for (const auto& [k, idx] : bank.buckets) {
            const double s = cosine(ty, enc.encode_text(k));
            if (s > best) {
                best = s;
                best_key = k;
            }
        }
        const auto qe = enc.encode_segment(still_stack(q));
        const MemoryEntry* want = nullptr;
        best = -2;
        for (const auto& e : bank.entries) {
            if (e.instruction != best_key) continue;
            const double s = cosine(qe, enc.encode_segment(still_stack(e.anchor)));
            if (s > best) {
                best = s;
                want = &e;
            }
        }
        REQUIRE(want != nullptr);
        CHECK(&got == want);
    }
    MemoryBank empty;
    nn::Rng r2(1);
    CHECK_THROWS_AS((void)memory_retrieve(empty, enc, "collect dirt", labeled_obs(0, r2)), std::invalid_argument);
}

TEST_CASE("bank of one entry returns it; exact-key query hits its bucket") {
    DualEncoder enc = small_encoder(51, 8, 12);
    nn::Rng rng(3);
    MemoryBank bank;
    MemoryEntry e;
    e.instruction = "dig down";
    e.anchor = labeled_obs(1, rng);
    e.segment_embed = enc.encode_segment(still_stack(e.anchor));
    bank.add(e);
    CHECK(&memory_retrieve(bank, enc, "chop a tree", labeled_obs(4, rng)) == &bank.entries[0]);

    MemoryEntry e2;
    e2.instruction = "chop a tree";
    e2.anchor = labeled_obs(2, rng);
    e2.segment_embed = enc.encode_segment(still_stack(e2.anchor));
    bank.add(e2);
    CHECK(memory_retrieve(bank, enc, "chop a tree", labeled_obs(4, rng)).instruction == "chop a tree");
    CHECK(memory_retrieve(bank, enc, "dig down", labeled_obs(4, rng)).instruction == "dig down");
}

TEST_CASE("memory bank file round-trips and is byte-stable") {
    DualEncoder enc = small_encoder(61, 8, 12);
    const std::string corpus = std::filesystem::temp_directory_path() / "vd_embed_corpus";
    std::filesystem::remove_all(corpus);
    std::vector<expert::TaskSpec> tasks = {expert::task_by_name("collect_seeds")};
    tasks[0].max_frames = 150;
    expert::collect_corpus(tasks, 2, corpus, 5, 1);

    const MemoryBank bank = build_memory_bank(corpus, enc, 5, 9);
    REQUIRE(!bank.entries.empty());
    for (const auto& [k, idx] : bank.buckets) CHECK(static_cast<int>(idx.size()) <= 5);

    const std::string p1 = std::filesystem::temp_directory_path() / "vd_bank1.bin";
    const std::string p2 = std::filesystem::temp_directory_path() / "vd_bank2.bin";
    save_memory_bank(p1, bank, enc.d_e());
    save_memory_bank(p2, bank, enc.d_e());
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);

    const MemoryBank loaded = load_memory_bank(p1);
    REQUIRE(loaded.entries.size() == bank.entries.size());
    for (size_t i = 0; i < bank.entries.size(); ++i) {
        CHECK(loaded.entries[i].instruction == bank.entries[i].instruction);
        CHECK(loaded.entries[i].anchor.crop == bank.entries[i].anchor.crop);
        for (size_t d = 0; d < bank.entries[i].segment_embed.size(); ++d)
            CHECK(loaded.entries[i].segment_embed[d] ==
                  doctest::Approx(bank.entries[i].segment_embed[d]).epsilon(1e-6));
    }
    CHECK(loaded.buckets == bank.buckets);
    std::filesystem::remove_all(corpus);
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}
