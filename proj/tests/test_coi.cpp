#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "voxdream/coi/coi.hpp"

using namespace voxdream;
using coi::CoiConfig;
using coi::Mode;
using coi::Schedule;

namespace {

struct ToyModels {
    std::unique_ptr<imaginator::Imaginator> im;
    std::unique_ptr<embed::DualEncoder> enc;
    std::unique_ptr<prompt::Cvae> cvae;
    std::unique_ptr<policy::PolicyNet> pol;
    embed::MemoryBank bank;

    coi::Models models(Mode mode = Mode::coi) const {
        coi::Models m;
        m.imaginator = im.get();
        m.embedder = enc.get();
        m.cvae = cvae.get();
        m.policy = pol.get();
        if (mode == Mode::memory) m.memory = &bank;
        return m;
    }
};

ToyModels make_toy() {
    ToyModels t;
    std::vector<std::string> vocab{"collect", "dirt", "dig", "down"};

    imaginator::ImaginatorConfig ic;
    ic.k = 2;
    ic.model_dim = 16;
    ic.heads = 2;
    ic.ff = 16;
    ic.max_seq = 8;
    ic.q_queries = 2;
    ic.d_f = 4;
    ic.base = 2;
    ic.S = 5;
    ic.sampler_steps = 5;
    nn::Rng r1(1);
    t.im = std::make_unique<imaginator::Imaginator>(ic, vocab, r1);

    embed::EmbedConfig ec;
    ec.d_e = 8;
    ec.hidden = 8;
    nn::Rng r2(2);
    t.enc = std::make_unique<embed::DualEncoder>(ec, vocab, r2);

    prompt::CvaeConfig cc;
    cc.d_e = 8;
    cc.d_z = 2;
    cc.hidden = 8;
    nn::Rng r3(3);
    t.cvae = std::make_unique<prompt::Cvae>(cc, r3);

    policy::PolicyConfig pc;
    pc.d_p = 16;
    pc.context_T = 8;
    pc.heads = 2;
    pc.ff = 16;
    pc.conv_base = 2;
    pc.hidden = 16;
    pc.d_e = 8;
    nn::Rng r4(4);
    t.pol = std::make_unique<policy::PolicyNet>(pc, r4);

    for (const std::string& y : {"collect dirt", "dig down"}) {
        embed::MemoryEntry e;
        e.instruction = y;
        e.segment_embed = t.enc->encode_text(y);
        t.bank.add(std::move(e));
    }
    return t;
}

CoiConfig toy_cfg(Mode mode) {
    CoiConfig cfg;
    cfg.mode = mode;
    cfg.sampler_steps = 3;
    cfg.guidance.lambda = 2.0;
    return cfg;
}

const expert::TaskSpec& dirt_task() { return expert::task_by_name("collect_dirt"); }

}  // namespace

TEST_CASE("schedule validation and helpers") {
    Schedule s = coi::single_instruction("collect dirt", 100);
    CHECK_NOTHROW(s.validate());
    CHECK(s.segments.size() == 1);

    Schedule bad;
    CHECK_THROWS(bad.validate());  // empty

    Schedule two;
    two.segments.push_back({"collect dirt", std::nullopt});
    two.segments.push_back({"dig down", std::nullopt});
    CHECK_THROWS(two.validate());  // first segment open-ended

    two.segments[0].until = coi::SwitchCondition{coi::SwitchCondition::Kind::frame, 50};
    CHECK_NOTHROW(two.validate());
    two.segments[1].until = coi::SwitchCondition{coi::SwitchCondition::Kind::frame, 80};
    CHECK_THROWS(two.validate());  // last segment must be open

    CHECK(coi::mode_from_name("random_noise") == Mode::random_noise);
    CHECK(!coi::mode_from_name("nope"));
}

TEST_CASE("run_episode: tick arithmetic, determinism, missing models rejected") {
    ToyModels t = make_toy();
    Schedule s = coi::single_instruction("collect dirt", 100);

    auto rec = coi::run_episode(t.models(), dirt_task(), s, toy_cfg(Mode::coi), 7);
    CHECK(rec.trajectory.frames.size() == 100);
    CHECK(rec.positions.size() == 101);
    CHECK(rec.tick_frames == std::vector<int>{0, 25, 50, 75});
    CHECK(rec.imagination_hashes.size() == 4);
    CHECK(rec.prompts.size() == 4);
    CHECK(rec.mode == "coi");

    auto rec2 = coi::run_episode(t.models(), dirt_task(), s, toy_cfg(Mode::coi), 7);
    CHECK(rec2.imagination_hashes == rec.imagination_hashes);
    CHECK(rec2.prompts == rec.prompts);
    for (size_t i = 0; i < rec.trajectory.frames.size(); ++i)
        CHECK(rec2.trajectory.frames[i].action == rec.trajectory.frames[i].action);

    auto rec3 = coi::run_episode(t.models(), dirt_task(), s, toy_cfg(Mode::coi), 8);
    bool differs = false;
    for (size_t i = 0; i < rec.trajectory.frames.size(); ++i)
        differs |= rec3.trajectory.frames[i].action != rec.trajectory.frames[i].action;
    CHECK(differs);

    coi::Models missing = t.models();
    missing.cvae = nullptr;
    CHECK_THROWS(coi::run_episode(missing, dirt_task(), s, toy_cfg(Mode::coi), 7));
    missing = t.models();
    missing.imaginator = nullptr;
    CHECK_THROWS(coi::run_episode(missing, dirt_task(), s, toy_cfg(Mode::coi), 7));
    CHECK_THROWS(coi::run_episode(t.models(), dirt_task(), s, toy_cfg(Mode::memory), 7));  // no bank
}

TEST_CASE("wo_coi: single imagination, first window matches coi") {
    ToyModels t = make_toy();
    Schedule s = coi::single_instruction("collect dirt", 60);

    auto wo = coi::run_episode(t.models(), dirt_task(), s, toy_cfg(Mode::wo_coi), 5);
    CHECK(wo.tick_frames == std::vector<int>{0});
    CHECK(wo.imagination_hashes.size() == 1);

    auto full = coi::run_episode(t.models(), dirt_task(), s, toy_cfg(Mode::coi), 5);
    CHECK(full.imagination_hashes.front() == wo.imagination_hashes.front());
    CHECK(full.prompts.front() == wo.prompts.front());
    for (int i = 0; i < 25; ++i) CHECK(full.trajectory.frames[i].action == wo.trajectory.frames[i].action);
}

TEST_CASE("schedule switch refreshes the prompt immediately") {
    ToyModels t = make_toy();
    Schedule s;
    s.segments.push_back({"collect dirt", coi::SwitchCondition{coi::SwitchCondition::Kind::frame, 30}});
    s.segments.push_back({"dig down", std::nullopt});
    s.frame_limit = 60;

    auto rec = coi::run_episode(t.models(), dirt_task(), s, toy_cfg(Mode::coi), 9);
    // ticks at 0 and 25 for segment 1, forced refresh at the switch frame 30, then 50
    CHECK(rec.tick_frames == std::vector<int>{0, 25, 30, 50});

    CoiConfig no_refresh = toy_cfg(Mode::coi);
    no_refresh.refresh_on_switch = false;
    auto lazy = coi::run_episode(t.models(), dirt_task(), s, no_refresh, 9);
    CHECK(lazy.tick_frames == std::vector<int>{0, 25, 50});
}

TEST_CASE("random_noise and memory modes") {
    ToyModels t = make_toy();
    Schedule s = coi::single_instruction("collect dirt", 50);

    auto rn = coi::run_episode(t.models(), dirt_task(), s, toy_cfg(Mode::random_noise), 3);
    CHECK(rn.tick_frames == std::vector<int>{0, 25});
    CHECK(rn.imagination_hashes[0] != rn.imagination_hashes[1]);  // fresh noise per tick
    for (const auto& h : rn.imagination_hashes) CHECK(!h.empty());

    auto mem = coi::run_episode(t.models(Mode::memory), dirt_task(), s, toy_cfg(Mode::memory), 3);
    CHECK(mem.tick_frames == std::vector<int>{0, 25});
    for (const auto& h : mem.imagination_hashes) CHECK(h.empty());
    CHECK(mem.prompts[0].size() == 16);
}

TEST_CASE("run_suite: shared seeds across modes, record counts") {
    ToyModels t = make_toy();
    std::vector<coi::SuiteItem> items{{dirt_task(), coi::single_instruction("collect dirt", 30)}};

    auto a = coi::run_suite(t.models(), items, 3, toy_cfg(Mode::coi), 100);
    auto b = coi::run_suite(t.models(), items, 3, toy_cfg(Mode::wo_coi), 100);
    REQUIRE(a.size() == 3);
    REQUIRE(b.size() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(a[i].seed == 100 + i);
        CHECK(a[i].seed == b[i].seed);
        CHECK(a[i].spawn == b[i].spawn);  // same world per trial
    }
    CHECK_THROWS(coi::run_suite(t.models(), items, 0, toy_cfg(Mode::coi), 1));
}

TEST_CASE("episode record round trip is byte-stable") {
    ToyModels t = make_toy();
    Schedule s;
    s.segments.push_back({"collect dirt", coi::SwitchCondition{coi::SwitchCondition::Kind::depth, 4}});
    s.segments.push_back({"dig down", std::nullopt});
    s.frame_limit = 40;
    auto rec = coi::run_episode(t.models(), dirt_task(), s, toy_cfg(Mode::coi), 11);

    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "vd_coi_test";
    fs::create_directories(dir);
    const std::string stem = (dir / "ep").string();
    coi::save_episode(stem, rec);
    auto bytes = [&](const std::string& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(f), {});
    };
    const std::string meta1 = bytes(stem + ".meta.json"), traj1 = bytes(stem + ".jsonl");
    coi::save_episode(stem, rec);
    CHECK(bytes(stem + ".meta.json") == meta1);
    CHECK(bytes(stem + ".jsonl") == traj1);

    auto back = coi::load_episode(stem);
    CHECK(back.mode == rec.mode);
    CHECK(back.seed == rec.seed);
    CHECK(back.positions == rec.positions);
    CHECK(back.tick_frames == rec.tick_frames);
    CHECK(back.imagination_hashes == rec.imagination_hashes);
    CHECK(back.prompts == rec.prompts);
    CHECK(back.schedule.segments.size() == 2);
    CHECK(back.schedule.segments[0].until->kind == coi::SwitchCondition::Kind::depth);
    CHECK(back.trajectory.frames.size() == rec.trajectory.frames.size());
    fs::remove_all(dir);
}
