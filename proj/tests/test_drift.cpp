#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "voxdream/drift/drift.hpp"
#include "voxdream/expert/expert.hpp"

using namespace voxdream;
using namespace voxdream::drift;
using world::EventKind;
using world::Trajectory;

namespace {

Trajectory synthetic_traj(int frames, const std::string& task, const std::vector<std::pair<int, std::string>>& evts) {
    Trajectory t;
    t.task = task;
    t.biome = "plains";
    t.frames.resize(frames);
    for (int f = 0; f < frames; ++f) t.frames[f].obs.frame = f;
    for (const auto& [frame, item] : evts) {
        world::GameEvent e;
        e.frame = frame;
        e.kind = EventKind::pick_up;
        e.item = item;
        t.frames[frame].events.push_back(e);
    }
    return t;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// expected pair count from spans alone, independent of the sampler
int expected_pairs(int t_star, int last, const DriftConfig& cfg, const std::string& item) {
    const int t_b1 = std::max(t_star - cfg.t_b(item), 0);
    const int t_fm = std::min(t_star + cfg.t_f(item), last);
    int n = 0;
    if (t_b1 < t_star) {
        const int seq = std::min(cfg.m, t_star - t_b1 + 1);
        n += 2 * (seq - 1);
    }
    if (t_fm > t_star) n += std::min(cfg.m - 1, t_fm - t_star);
    return n;
}

}  // namespace

TEST_CASE("extract_events matches a brute-force rescan and is frame ordered") {
    Trajectory t = synthetic_traj(200, "collect_dirt", {{40, "dirt"}, {90, "dirt"}, {10, "stone"}});
    const auto stamps = extract_events(t, "tr0", default_items());
    REQUIRE(stamps.size() == 2);  // stone outside dig tasks is not a dataset item
    CHECK(stamps[0].t_star == 40);
    CHECK(stamps[1].t_star == 90);
    CHECK(stamps[0].item == "dirt");
    CHECK(extract_events(t, "tr0", {"seed"}).empty());

    Trajectory dig = synthetic_traj(200, "dig_down", {{30, "stone"}});
    const auto ds = extract_events(dig, "tr1", default_items());
    REQUIRE(ds.size() == 1);
    CHECK(ds[0].item == "dig_down");

    Trajectory ex = synthetic_traj(200, "go_explore", {});
    const auto es = extract_events(ex, "tr2", default_items());
    REQUIRE(es.size() == 4);  // frames 40,80,120,160
    for (size_t i = 0; i < es.size(); ++i) {
        CHECK(es[i].item == "explore");
        CHECK(es[i].t_star == 40 * static_cast<int>(i + 1));
    }
}

TEST_CASE("drift_pairs satisfies the counting and ordering laws on random stamps") {
    DriftConfig cfg = default_drift_config();
    Trajectory t = synthetic_traj(600, "collect_dirt", {});
    nn::Rng pick(99);
    for (int trial = 0; trial < 150; ++trial) {
        EventStamp s{"tr", pick.uniform_int(0, 599), trial % 2 ? "dirt" : "wooden_log", "pick_up"};
        nn::Rng rng(trial);
        const DriftResult r = drift_pairs(t, s, cfg, rng);
        CHECK(static_cast<int>(r.pairs.size()) == expected_pairs(s.t_star, 599, cfg, s.item));
        if (static_cast<int>(r.pairs.size()) < 3 * (cfg.m - 1)) CHECK(r.degenerate);
        std::vector<int> b1goals;
        for (const auto& p : r.pairs) {
            CHECK(p.current_frame >= 0);
            CHECK(p.goal_frame <= 599);
            if (p.kind == DriftKind::forward) {
                CHECK(p.current_frame == s.t_star);
                CHECK(p.goal_frame > s.t_star);
                CHECK(p.goal_frame <= s.t_star + cfg.t_f(s.item));
            } else {
                CHECK(p.current_frame < p.goal_frame);
                CHECK(p.goal_frame <= s.t_star);
                if (p.kind == DriftKind::backward2) CHECK(p.goal_frame == s.t_star);
                if (p.kind == DriftKind::backward1) b1goals.push_back(p.goal_frame);
            }
        }
        // backward1 pairs chain: consecutive, ending at t*
        if (!b1goals.empty()) CHECK(b1goals.back() == s.t_star);
    }
}

TEST_CASE("drift_pairs m=2 and clamp edge cases") {
    Trajectory t = synthetic_traj(600, "collect_dirt", {});
    DriftConfig cfg = default_drift_config();
    cfg.m = 2;
    nn::Rng rng(1);
    const DriftResult r = drift_pairs(t, {"tr", 100, "dirt", "pick_up"}, cfg, rng);
    REQUIRE(r.pairs.size() == 3);
    CHECK_FALSE(r.degenerate);
    CHECK(r.pairs[0].current_frame == 80);  // t* - 20
    CHECK(r.pairs[0].goal_frame == 100);
    CHECK(r.pairs[1].current_frame == 80);
    CHECK(r.pairs[1].goal_frame == 100);
    CHECK(r.pairs[2].current_frame == 100);
    CHECK(r.pairs[2].goal_frame == 120);

    // t*=2 with m=4: backward span clamps to 0 and only 1 interior point exists
    cfg = default_drift_config();
    nn::Rng rng2(2);
    const DriftResult d = drift_pairs(t, {"tr", 2, "wooden_log", "pick_up"}, cfg, rng2);
    CHECK(d.degenerate);
    for (const auto& p : d.pairs)
        if (p.kind != DriftKind::forward) CHECK(p.current_frame >= 0);
    // no duplicate backward1 pairs fabricated
    std::set<std::pair<int, int>> seen;
    for (const auto& p : d.pairs)
        if (p.kind == DriftKind::backward1) CHECK(seen.insert({p.current_frame, p.goal_frame}).second);

    // t*=0: no backward pairs at all
    nn::Rng rng3(3);
    const DriftResult z = drift_pairs(t, {"tr", 0, "dirt", "pick_up"}, cfg, rng3);
    CHECK(z.degenerate);
    for (const auto& p : z.pairs) CHECK(p.kind == DriftKind::forward);

    cfg.m = 1;
    nn::Rng rng4(4);
    CHECK_THROWS_AS((void)drift_pairs(t, {"tr", 100, "dirt", "pick_up"}, cfg, rng4), std::invalid_argument);
}

TEST_CASE("build_triplets: counting oracle, split rule, variants, determinism") {
    const std::string corpus = std::filesystem::temp_directory_path() / "vd_drift_corpus";
    const std::string out = std::filesystem::temp_directory_path() / "vd_drift_out";
    std::filesystem::remove_all(corpus);
    std::filesystem::remove_all(out);
    std::vector<expert::TaskSpec> tasks = {expert::task_by_name("collect_seeds"),
                                           expert::task_by_name("collect_dirt")};
    for (auto& t : tasks) t.max_frames = 200;
    expert::collect_corpus(tasks, 4, corpus, 7, 1);

    const DriftConfig cfg = default_drift_config();
    const DatasetManifest m = build_triplets(corpus, cfg, DatasetVariant::normal, out);
    const auto recs = load_triplets(out + "/triplets.jsonl");
    CHECK(static_cast<int>(recs.size()) == m.triplets);
    CHECK(m.train + m.val == m.triplets);
    CHECK(m.stamps > 0);

    // independent counting oracle: re-extract stamps and expected pair counts
    int expected = 0;
    const auto corpus_m = expert::load_manifest(corpus + "/manifest.json");
    for (const auto& f : corpus_m.files) {
        const Trajectory traj = world::load_trajectory(corpus + "/" + f);
        const std::string id = std::filesystem::path(f).stem().string();
        for (const auto& s : extract_events(traj, id, default_items()))
            expected += expected_pairs(s.t_star, static_cast<int>(traj.frames.size()) - 1, cfg, s.item) *
                        static_cast<int>(expert::instructions_for(s.item).size());
    }
    CHECK(m.triplets == expected);

    for (const auto& r : recs) {
        CHECK(r.split == split_for(r.traj_id));
        CHECK(r.current_frame >= 0);
        CHECK(r.goal_frame < 200);
        const auto& instrs = expert::instructions_for(r.item);
        CHECK(std::find(instrs.begin(), instrs.end(), r.instruction) != instrs.end());
    }

    // determinism: rebuild bytes-identical
    const std::string bytes = slurp(out + "/triplets.jsonl");
    build_triplets(corpus, cfg, DatasetVariant::normal, out);
    CHECK(slurp(out + "/triplets.jsonl") == bytes);

    // variants
    build_triplets(corpus, cfg, DatasetVariant::only_backward, out);
    for (const auto& r : load_triplets(out + "/triplets.jsonl")) CHECK(r.drift_kind != "forward");
    build_triplets(corpus, cfg, DatasetVariant::only_forward, out);
    for (const auto& r : load_triplets(out + "/triplets.jsonl")) CHECK(r.drift_kind == "forward");
    build_triplets(corpus, cfg, DatasetVariant::fixed_timestep_backward, out);
    for (const auto& r : load_triplets(out + "/triplets.jsonl"))
        if (r.drift_kind != "forward") {
            CHECK(r.goal_frame - r.current_frame == std::min(cfg.t_b(r.item), r.goal_frame));
        }
    const DatasetManifest mv = load_dataset_manifest(out + "/manifest.json");
    CHECK(mv.variant == "fixed_timestep_backward");

    std::filesystem::remove_all(corpus);
    std::filesystem::remove_all(out);
}

TEST_CASE("cvae subset: segment padding, per-item fractions, embeds forwarded") {
    const std::string corpus = std::filesystem::temp_directory_path() / "vd_cvae_corpus";
    std::filesystem::remove_all(corpus);
    std::vector<expert::TaskSpec> tasks = {expert::task_by_name("collect_seeds")};
    tasks[0].max_frames = 120;
    expert::collect_corpus(tasks, 2, corpus, 3, 1);

    Trajectory t = world::load_trajectory(corpus + "/" + expert::load_manifest(corpus + "/manifest.json").files[0]);
    const auto seg = segment_ending_at(t, 3);
    REQUIRE(seg.size() == kSegmentFrames);
    for (int i = 0; i < kSegmentFrames - 4; ++i) CHECK(seg[i].frame == 0);  // padded
    CHECK(seg.back().frame == 3);
    CHECK(seg[kSegmentFrames - 2].frame == 2);
    CHECK_THROWS_AS((void)segment_ending_at(t, 500), std::invalid_argument);

    const std::string out = std::filesystem::temp_directory_path() / "vd_cvae_out";
    std::filesystem::remove_all(out);
    build_triplets(corpus, default_drift_config(), DatasetVariant::normal, out);
    const auto recs = load_triplets(out + "/triplets.jsonl");
    REQUIRE(!recs.empty());

    int calls = 0;
    SegmentEncoder enc = [&](const std::vector<world::Observation>& s) {
        CHECK(s.size() == kSegmentFrames);
        ++calls;
        return std::vector<double>{1.0, 0.0};
    };
    const auto quads = build_cvae_subset(recs, corpus, enc, 0.5, 11);
    CHECK(calls == static_cast<int>(quads.size()));
    CHECK(std::llabs(static_cast<long long>(quads.size()) - std::llround(0.5 * recs.size())) <= 2);
    for (const auto& q : quads) {
        CHECK(q.gt_embed == std::vector<double>{1.0, 0.0});
        CHECK(q.triplet.goal_frame < 120);
    }
    CHECK_THROWS_AS((void)build_cvae_subset(recs, corpus, enc, 0.0, 1), std::invalid_argument);

    std::filesystem::remove_all(corpus);
    std::filesystem::remove_all(out);
}
