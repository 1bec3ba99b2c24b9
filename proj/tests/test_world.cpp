#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "voxdream/nn/rng.hpp"
#include "voxdream/world/trajectory.hpp"
#include "voxdream/world/world.hpp"

using namespace voxdream::world;
using voxdream::nn::Rng;

TEST_CASE("world generation is deterministic") {
    auto a = generate_world(42, Biome::forest);
    auto b = generate_world(42, Biome::forest);
    CHECK(a.blocks == b.blocks);
    auto c = generate_world(43, Biome::forest);
    CHECK(a.blocks != c.blocks);
}

TEST_CASE("plains biome has no tree logs; grass covers >= 10% of surface") {
    auto w = generate_world(7, Biome::plains);
    int logs = 0, grass = 0;
    for (Block b : w.blocks) {
        if (b == Block::tree_log) ++logs;
        if (b == Block::tall_grass) ++grass;
    }
    CHECK(logs == 0);
    CHECK(grass >= w.dims.x * w.dims.z / 10);
}

TEST_CASE("forest biome places enough tree columns") {
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 99ULL}) {
        auto w = generate_world(seed, Biome::forest);
        std::set<std::pair<int, int>> cols;
        for (int x = 0; x < w.dims.x; ++x)
            for (int z = 0; z < w.dims.z; ++z)
                for (int y = 0; y < w.dims.y; ++y)
                    if (w.at(x, y, z) == Block::tree_log) cols.insert({x, z});
        CHECK(static_cast<int>(cols.size()) >= w.dims.x * w.dims.z / 32);
    }
}

TEST_CASE("structural invariants: bedrock floor, diamond depth band") {
    auto w = generate_world(5, Biome::plains);
    for (int x = 0; x < w.dims.x; ++x)
        for (int z = 0; z < w.dims.z; ++z) {
            CHECK(w.at(x, 0, z) == Block::bedrock);
            for (int y = 0; y < w.dims.y; ++y)
                if (w.at(x, y, z) == Block::diamond_ore) {
                    CHECK(y >= 4);
                    CHECK(y <= 8);
                }
        }
}

TEST_CASE("unknown biome rejected") {
    CHECK_THROWS_AS(generate_world(1, "desert"), std::invalid_argument);
}

TEST_CASE("attack x5 facing dirt mines it with one mine_block and one pick_up") {
    auto w = generate_world(11, Biome::plains);
    auto a = spawn_agent(w);
    // put a dirt block straight ahead at eye level
    const Vec3 f = heading_dir(a.heading);
    w.set(a.pos.x + f.x, a.pos.y, a.pos.z + f.z, Block::dirt);
    std::vector<GameEvent> all;
    for (int i = 0; i < 5; ++i) {
        auto r = step(w, a, Action::attack, i);
        for (auto& e : r.events) all.push_back(e);
        if (i < 4) CHECK(r.events.empty());
    }
    REQUIRE(all.size() == 2);
    CHECK(all[0].kind == EventKind::mine_block);
    CHECK(all[0].frame == 4);
    CHECK(all[1].kind == EventKind::pick_up);
    CHECK(all[1].item == "dirt");
    CHECK(a.inventory[static_cast<int>(Item::dirt)] == 1);
    CHECK(w.at(a.pos.x + f.x, a.pos.y, a.pos.z + f.z) == Block::air);
}

TEST_CASE("interrupted break resets progress") {
    auto w = generate_world(11, Biome::plains);
    auto a = spawn_agent(w);
    const Vec3 f = heading_dir(a.heading);
    w.set(a.pos.x + f.x, a.pos.y, a.pos.z + f.z, Block::dirt);
    for (int i = 0; i < 4; ++i) step(w, a, Action::attack, i);
    step(w, a, Action::noop, 4);
    auto r = step(w, a, Action::attack, 5);  // restart: needs 5 more
    CHECK(r.events.empty());
    CHECK(w.at(a.pos.x + f.x, a.pos.y, a.pos.z + f.z) == Block::dirt);
}

TEST_CASE("craft_planks converts one log into four planks") {
    auto w = generate_world(11, Biome::plains);
    auto a = spawn_agent(w);
    a.inventory[static_cast<int>(Item::wooden_log)] = 1;
    auto r = step(w, a, Action::craft_planks, 0);
    CHECK(a.inventory[static_cast<int>(Item::wooden_log)] == 0);
    CHECK(a.inventory[static_cast<int>(Item::wooden_plank)] == 4);
    REQUIRE(r.events.size() == 1);
    CHECK(r.events[0].kind == EventKind::craft_item);
    CHECK(r.events[0].count == 4);
    // without a log it is a silent no-op
    auto w2 = generate_world(11, Biome::plains);
    auto a2 = spawn_agent(w2);
    auto r2 = step(w2, a2, Action::craft_planks, 0);
    CHECK(r2.events.empty());
}

TEST_CASE("noop leaves world and agent unchanged, no events") {
    auto w = generate_world(3, Biome::plains);
    auto a = spawn_agent(w);
    const auto blocks = w.blocks;
    const auto pos = a.pos;
    auto r = step(w, a, Action::noop, 0);
    CHECK(w.blocks == blocks);
    CHECK(a.pos == pos);
    CHECK(r.events.empty());
}

TEST_CASE("place with pitch down raises agent and consumes a dirt") {
    auto w = generate_world(11, Biome::plains);
    auto a = spawn_agent(w);
    a.inventory[static_cast<int>(Item::dirt)] = 2;
    const Vec3 start = a.pos;
    step(w, a, Action::pitch_down, 0);
    auto r = step(w, a, Action::place, 1);
    CHECK(a.pos.y == start.y + 1);
    CHECK(w.at(start.x, start.y, start.z) == Block::dirt);
    CHECK(a.inventory[static_cast<int>(Item::dirt)] == 1);
    REQUIRE(r.events.size() == 1);
    CHECK(r.events[0].kind == EventKind::place_block);
    // place with pitch level is a no-op
    step(w, a, Action::pitch_up, 2);
    auto r2 = step(w, a, Action::place, 3);
    CHECK(r2.events.empty());
}

TEST_CASE("gravity: agent falls to support after digging underfoot") {
    auto w = generate_world(11, Biome::plains);
    auto a = spawn_agent(w);
    const int y0 = a.pos.y;
    step(w, a, Action::pitch_down, 0);
    for (int i = 1; i <= 5; ++i) step(w, a, Action::attack, i);
    CHECK(a.pos.y == y0 - 1);
}

TEST_CASE("apply_rule semantics") {
    auto w = generate_world(2, Biome::plains);
    auto a = spawn_agent(w);
    apply_rule(w, a, Rule::give_diamond_pickaxe);
    CHECK(a.held_item == Item::diamond_pickaxe);
    apply_rule(w, a, Rule::peaceful);
    apply_rule(w, a, Rule::peaceful);  // idempotent
    CHECK(std::count(w.rules.begin(), w.rules.end(), Rule::peaceful) == 1);
    const auto blocks = w.blocks;
    apply_rule(w, a, Rule::night_vision);
    CHECK(w.blocks == blocks);
    CHECK(!rule_from_name("creative").has_value());
}

TEST_CASE("stone unbreakable without pickaxe, breakable with") {
    auto w = generate_world(11, Biome::plains);
    auto a = spawn_agent(w);
    const Vec3 f = heading_dir(a.heading);
    w.set(a.pos.x + f.x, a.pos.y, a.pos.z + f.z, Block::stone);
    for (int i = 0; i < 30; ++i) step(w, a, Action::attack, i);
    CHECK(w.at(a.pos.x + f.x, a.pos.y, a.pos.z + f.z) == Block::stone);
    apply_rule(w, a, Rule::give_diamond_pickaxe);
    std::vector<GameEvent> evs;
    for (int i = 0; i < 12; ++i) {
        auto r = step(w, a, Action::attack, 30 + i);
        for (auto& e : r.events) evs.push_back(e);
    }
    REQUIRE(evs.size() == 2);
    CHECK(evs[1].item == "stone");
}

TEST_CASE("observation: crop centre is the agent cell; edges read bedrock") {
    auto w = generate_world(4, Biome::plains);
    auto a = spawn_agent(w);
    auto o = observe(w, a);
    const int centre = (2 * kCrop + 2) * kCrop + 2;
    CHECK(static_cast<Block>(o.crop[centre]) == w.at(a.pos.x, a.pos.y, a.pos.z));
    a.pos = {0, a.pos.y, 0};
    o = observe(w, a);
    bool saw_bedrock_boundary = false;
    for (auto c : o.crop)
        if (static_cast<Block>(c) == Block::bedrock) saw_bedrock_boundary = true;
    CHECK(saw_bedrock_boundary);
}

TEST_CASE("observation equivariance: heading change = crop rotation") {
    auto w = generate_world(9, Biome::forest);
    auto a = spawn_agent(w);
    a.heading = 0;
    auto o0 = observe(w, a);
    a.heading = 1;
    auto o1 = observe(w, a);
    // heading 1 looks along +z with right = -x, so
    // crop1[f][y][r] = crop0[kCrop-1-r][y][f] (a 90 degree rotation)
    for (int f = 0; f < kCrop; ++f)
        for (int y = 0; y < kCrop; ++y)
            for (int r = 0; r < kCrop; ++r) {
                const int idx1 = (f * kCrop + y) * kCrop + r;
                const int idx0 = ((kCrop - 1 - r) * kCrop + y) * kCrop + f;
                CHECK(o1.crop[idx1] == o0.crop[idx0]);
            }
}

TEST_CASE("inventory channel clips at 64") {
    Observation o;
    o.inventory[static_cast<int>(Item::dirt)] = 128;
    auto aux = aux_vector(o);
    CHECK(aux[3 + kNumItems + 1 + static_cast<int>(Item::dirt)] == 1.0);
}

TEST_CASE("crop one-hot encode/decode round trip") {
    auto w = generate_world(12, Biome::forest);
    auto a = spawn_agent(w);
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        a.pos = {rng.uniform_int(0, w.dims.x - 1), rng.uniform_int(1, w.dims.y - 1), rng.uniform_int(0, w.dims.z - 1)};
        a.heading = rng.uniform_int(0, 3);
        auto o = observe(w, a);
        CHECK(decode_crop(crop_onehot(o)) == o.crop);
    }
}

TEST_CASE("determinism and conservation over a random action rollout") {
    auto run = [](std::uint64_t seed) {
        auto w = generate_world(seed, Biome::forest);
        auto a = spawn_agent(w);
        apply_rule(w, a, Rule::give_diamond_pickaxe);
        Rng rng(seed + 100);
        Trajectory t;
        std::array<int, kNumItems> inv0 = a.inventory;
        int solid_to_air = 0, air_to_solid = 0;
        for (int i = 0; i < 300; ++i) {
            FrameRecord fr;
            fr.obs = observe(w, a);
            fr.obs.frame = i;
            fr.action = static_cast<Action>(rng.uniform_int(0, kNumActions - 1));
            const auto before = w.blocks;
            auto r = step(w, a, fr.action, i);
            fr.events = r.events;
            for (size_t c = 0; c < before.size(); ++c) {
                const bool was = block_solid(before[c]), now = block_solid(w.blocks[c]);
                if (was && !now) ++solid_to_air;
                if (!was && now) ++air_to_solid;
            }
            t.frames.push_back(fr);
        }
        // inventory deltas equal summed event deltas
        std::array<int, kNumItems> delta{};
        int breaks = 0, places = 0;
        for (const auto& fr : t.frames)
            for (const auto& e : fr.events) {
                if (e.kind == EventKind::pick_up) delta[static_cast<int>(*item_from_name(e.item))] += e.count;
                if (e.kind == EventKind::craft_item) {
                    delta[static_cast<int>(Item::wooden_plank)] += e.count;
                    delta[static_cast<int>(Item::wooden_log)] -= 1;
                }
                if (e.kind == EventKind::place_block) delta[static_cast<int>(*item_from_name(e.item))] -= e.count;
                if (e.kind == EventKind::mine_block) ++breaks;
                if (e.kind == EventKind::place_block) ++places;
            }
        for (int i = 0; i < kNumItems; ++i) CHECK(a.inventory[i] - inv0[i] == delta[i]);
        // block-count conservation: every break solid->air, every place air->solid
        // (trampled tall grass also goes solid? no: tall grass is non-solid)
        CHECK(solid_to_air == breaks);
        CHECK(air_to_solid == places);
        return t;
    };
    auto t1 = run(31), t2 = run(31);
    REQUIRE(t1.frames.size() == t2.frames.size());
    for (size_t i = 0; i < t1.frames.size(); ++i) {
        CHECK(t1.frames[i].action == t2.frames[i].action);
        CHECK(t1.frames[i].obs.crop == t2.frames[i].obs.crop);
    }
}

TEST_CASE("trajectory log round trip and byte stability") {
    auto w = generate_world(8, Biome::plains);
    auto a = spawn_agent(w);
    Trajectory t;
    t.seed = 8;
    t.biome = "plains";
    t.task = "collect_dirt";
    t.rules = {"peaceful"};
    Rng rng(1);
    for (int i = 0; i < 40; ++i) {
        FrameRecord fr;
        fr.obs = observe(w, a);
        fr.obs.frame = i;
        fr.action = static_cast<Action>(rng.uniform_int(0, kNumActions - 1));
        fr.events = step(w, a, fr.action, i).events;
        t.frames.push_back(fr);
    }
    const std::string p1 = "/tmp/vd_traj1.jsonl", p2 = "/tmp/vd_traj2.jsonl";
    save_trajectory(p1, t);
    save_trajectory(p2, t);
    std::ifstream f1(p1), f2(p2);
    std::string s1((std::istreambuf_iterator<char>(f1)), {}), s2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(s1 == s2);
    auto t3 = load_trajectory(p1);
    REQUIRE(t3.frames.size() == t.frames.size());
    CHECK(t3.task == t.task);
    for (size_t i = 0; i < t.frames.size(); ++i) {
        CHECK(t3.frames[i].obs.crop == t.frames[i].obs.crop);
        CHECK(t3.frames[i].action == t.frames[i].action);
        CHECK(t3.frames[i].events.size() == t.frames[i].events.size());
    }
}
