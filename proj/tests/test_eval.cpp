#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "voxdream/eval/eval.hpp"

using namespace voxdream;
using eval::CellStat;
using eval::Metrics;
using eval::SuiteReport;

namespace {

struct ToyModels {
    std::unique_ptr<imaginator::Imaginator> im;
    std::unique_ptr<embed::DualEncoder> enc;
    std::unique_ptr<prompt::Cvae> cvae;
    std::unique_ptr<policy::PolicyNet> pol;

    coi::Models models() const {
        coi::Models m;
        m.imaginator = im.get();
        m.embedder = enc.get();
        m.cvae = cvae.get();
        m.policy = pol.get();
        return m;
    }
};

ToyModels make_toy() {
    ToyModels t;
    std::vector<std::string> vocab = expert::instruction_vocabulary();

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
    ic.sampler_steps = 3;
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
    return t;
}

eval::AgentSpec toy_agent(const ToyModels& t, const std::string& label) {
    eval::AgentSpec a;
    a.label = label;
    a.models = t.models();
    a.cfg.sampler_steps = 3;
    a.cfg.guidance.lambda = 1.0;
    return a;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("metrics on handcrafted and random records") {
    coi::EpisodeRecord rec;
    rec.spawn = {10, 12, 10};
    rec.positions = {{10, 12, 10}, {13, 12, 14}, {10, 5, 10}};
    world::FrameRecord fr;
    fr.obs.inventory[static_cast<int>(world::Item::dirt)] = 3;
    rec.trajectory.frames.push_back(fr);
    fr.obs.inventory[static_cast<int>(world::Item::dirt)] = 1;  // max is over frames, not final
    fr.obs.inventory[static_cast<int>(world::Item::seed)] = 2;
    rec.trajectory.frames.push_back(fr);

    Metrics m = eval::compute_metrics(rec);
    CHECK(m.travel == doctest::Approx(5.0));
    CHECK(m.dig_depth == doctest::Approx(7.0));
    CHECK(m.inventory_max.at("dirt") == 3);
    CHECK(m.inventory_max.at("seed") == 2);
    CHECK(m.inventory_max.count("stone") == 0);

    // brute-force oracle over random records
    nn::Rng rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        coi::EpisodeRecord r;
        r.spawn = {rng.uniform_int(0, 23), rng.uniform_int(4, 20), rng.uniform_int(0, 23)};
        int n = rng.uniform_int(1, 40);
        double best_sq = 0;
        int min_y = r.spawn.y;
        for (int i = 0; i < n; ++i) {
            world::Vec3 p{rng.uniform_int(0, 23), rng.uniform_int(0, 23), rng.uniform_int(0, 23)};
            r.positions.push_back(p);
            const double dx = p.x - r.spawn.x, dz = p.z - r.spawn.z;
            best_sq = std::max(best_sq, dx * dx + dz * dz);
            min_y = std::min(min_y, p.y);
        }
        Metrics got = eval::compute_metrics(r);
        CHECK(got.travel == doctest::Approx(std::sqrt(best_sq)));
        CHECK(got.dig_depth == doctest::Approx(double(r.spawn.y - min_y)));
    }
}

TEST_CASE("replay positions re-derive runtime positions") {
    // coi runtime logs positions as it steps; replaying the saved actions
    // through a fresh world must land on the same path
    ToyModels t = make_toy();
    coi::CoiConfig cfg;
    cfg.sampler_steps = 3;
    coi::Schedule sched = coi::single_instruction(expert::instructions_for("dirt").front(), 40);
    auto rec = coi::run_episode(t.models(), expert::task_by_name("collect_dirt"), sched, cfg, 5);

    world::Vec3 spawn;
    auto replayed = eval::replay_positions(rec.trajectory, &spawn);
    CHECK(spawn == rec.spawn);
    REQUIRE(replayed.size() == rec.positions.size());
    for (size_t i = 0; i < replayed.size(); ++i) CHECK(replayed[i] == rec.positions[i]);

    // expert wrap: frames + 1 positions, first one at spawn
    auto traj = expert::run_expert(expert::task_by_name("chop_tree"), 11, 0.1);
    auto wrapped = eval::record_from_trajectory(traj);
    CHECK(wrapped.positions.size() == traj.frames.size() + 1);
    CHECK(wrapped.positions.front() == wrapped.spawn);
    CHECK(wrapped.seed == traj.seed);
}

TEST_CASE("success detectors judge expert and idle runs") {
    using eval::SuccessKind;
    auto planks = eval::record_from_trajectory(expert::run_expert(expert::task_by_name("craft_planks"), 3, 0.0));
    CHECK(eval::judge_success(planks, SuccessKind::planks));

    auto tower = eval::record_from_trajectory(expert::run_expert(expert::task_by_name("build_tower"), 3, 0.0));
    CHECK(eval::judge_success(tower, SuccessKind::tower));

    auto mine = eval::record_from_trajectory(expert::run_expert(expert::task_by_name("mine_horizontally"), 3, 0.0));
    CHECK(eval::judge_success(mine, SuccessKind::diamond));

    // an explorer never crafts, places, or mines diamond
    auto idle = eval::record_from_trajectory(expert::run_expert(expert::task_by_name("go_explore"), 3, 0.0));
    CHECK_FALSE(eval::judge_success(idle, SuccessKind::planks));
    CHECK_FALSE(eval::judge_success(idle, SuccessKind::tower));
    CHECK_FALSE(eval::judge_success(idle, SuccessKind::diamond));

    // tower needs both the placements and the rise
    eval::JudgeConfig jc;
    jc.tower_threshold = 3;
    coi::EpisodeRecord fake;
    fake.spawn = {5, 10, 5};
    fake.positions = {{5, 10, 5}, {5, 14, 5}};  // rose 4 but placed nothing
    CHECK_FALSE(eval::judge_success(fake, SuccessKind::tower, jc));
    world::FrameRecord fr;
    fr.events.push_back({0, world::EventKind::place_block, "dirt", 4});
    fake.trajectory.frames.push_back(fr);
    CHECK(eval::judge_success(fake, SuccessKind::tower, jc));
    fake.positions[1].y = 12;  // placed 4 but rose only 2
    CHECK_FALSE(eval::judge_success(fake, SuccessKind::tower, jc));
}

TEST_CASE("student-t quantiles and confidence intervals") {
    // textbook t-table values
    CHECK(eval::student_t_quantile(0.975, 1) == doctest::Approx(12.7062).epsilon(1e-4));
    CHECK(eval::student_t_quantile(0.975, 4) == doctest::Approx(2.7764).epsilon(1e-4));
    CHECK(eval::student_t_quantile(0.975, 10) == doctest::Approx(2.2281).epsilon(1e-4));
    CHECK(eval::student_t_quantile(0.975, 29) == doctest::Approx(2.0452).epsilon(1e-4));
    CHECK(std::abs(eval::student_t_quantile(0.5, 7)) < 1e-6);
    CHECK(eval::student_t_quantile(0.975, 3) == doctest::Approx(-eval::student_t_quantile(0.025, 3)).epsilon(1e-9));
    CHECK_THROWS(eval::student_t_quantile(0.975, 0));
    CHECK_THROWS(eval::student_t_quantile(1.0, 5));

    // hand-computed interval for {0, 10}: sd = sqrt(50), half = t * sd / sqrt(2)
    auto iv = eval::confidence_interval({0.0, 10.0});
    CHECK(iv.mean == doctest::Approx(5.0));
    CHECK(iv.hi - iv.mean == doctest::Approx(12.7062 * std::sqrt(50.0) / std::sqrt(2.0)).epsilon(1e-4));
    CHECK(iv.mean - iv.lo == doctest::Approx(iv.hi - iv.mean));

    auto flat = eval::confidence_interval({2.5, 2.5, 2.5});
    CHECK(flat.lo == doctest::Approx(2.5));
    CHECK(flat.hi == doctest::Approx(2.5));
    auto single = eval::confidence_interval({7.0});
    CHECK(single.lo == 7.0);
    CHECK(single.hi == 7.0);
    CHECK_THROWS(eval::confidence_interval({}));

    // percentile-bootstrap oracle on a gaussian sample of 30
    nn::Rng rng(123);
    std::vector<double> sample;
    for (int i = 0; i < 30; ++i) sample.push_back(3.0 + rng.normal());
    auto ci = eval::confidence_interval(sample);
    std::vector<double> boot_means;
    for (int b = 0; b < 4000; ++b) {
        double s = 0;
        for (int i = 0; i < 30; ++i) s += sample[rng.uniform_int(0, 29)];
        boot_means.push_back(s / 30);
    }
    std::sort(boot_means.begin(), boot_means.end());
    const double blo = boot_means[99], bhi = boot_means[3899];  // 2.5% / 97.5%
    CHECK((ci.hi - ci.lo) == doctest::Approx(bhi - blo).epsilon(0.25));
    CHECK(ci.lo < 3.0);
    CHECK(ci.hi > 3.0);

    // width shrinks roughly as 1/sqrt(n): quadrupling n halves it
    std::vector<double> big = sample;
    for (int i = 0; i < 90; ++i) big.push_back(3.0 + rng.normal());
    auto ci4 = eval::confidence_interval(big);
    const double ratio = (ci4.hi - ci4.lo) / (ci.hi - ci.lo);
    CHECK(ratio > 0.30);
    CHECK(ratio < 0.75);
}

TEST_CASE("mean gap refuses mismatched seed sets") {
    CellStat a, b;
    a.values = {1, 2};
    a.seeds = {10, 11};
    a.ci = eval::confidence_interval(a.values);
    b.values = {0, 1};
    b.seeds = {10, 11};
    b.ci = eval::confidence_interval(b.values);
    CHECK(eval::mean_gap(a, b) == doctest::Approx(1.0));
    b.seeds = {10, 12};
    CHECK_THROWS(eval::mean_gap(a, b));
}

TEST_CASE("report emit is byte-stable and round-trips") {
    SuiteReport rep;
    rep.suite = "programmatic";
    rep.config_echo["n_trials"] = "2";
    CellStat c;
    c.task = "collect_dirt";
    c.label = "coi";
    c.metric = "inventory:dirt";
    c.values = {4, 6};
    c.seeds = {100, 101};
    c.ci = eval::confidence_interval(c.values);
    c.success_rate = 1.0;
    rep.cells.push_back(c);

    const std::string dir = (std::filesystem::temp_directory_path() / "vd_eval_test").string();
    std::filesystem::create_directories(dir);
    eval::emit_report(rep, dir + "/r1.csv", eval::ReportFormat::csv);
    eval::emit_report(rep, dir + "/r2.csv", eval::ReportFormat::csv);
    CHECK(slurp(dir + "/r1.csv") == slurp(dir + "/r2.csv"));

    SuiteReport back = eval::parse_report_csv(dir + "/r1.csv");
    CHECK(back.suite == "programmatic");
    REQUIRE(back.cells.size() == 1);
    CHECK(back.cells[0].task == "collect_dirt");
    CHECK(back.cells[0].metric == "inventory:dirt");
    CHECK(back.cells[0].values == std::vector<double>{4, 6});
    CHECK(back.cells[0].seeds == std::vector<std::uint64_t>{100, 101});
    CHECK(back.cells[0].ci.mean == doctest::Approx(5.0));

    eval::emit_report(rep, dir + "/r1.txt", eval::ReportFormat::structured);
    const std::string txt = slurp(dir + "/r1.txt");
    CHECK(txt.find("programmatic") != std::string::npos);
    CHECK(txt.find("ci95") != std::string::npos);

    // empty report -> header only, parses back to zero cells
    SuiteReport empty;
    empty.suite = "none";
    eval::emit_report(empty, dir + "/empty.csv", eval::ReportFormat::csv);
    CHECK(eval::parse_report_csv(dir + "/empty.csv").cells.empty());
    {
        std::ofstream bad(dir + "/bad.csv", std::ios::binary);
        bad << "not,a,report\n";
    }
    CHECK_THROWS(eval::parse_report_csv(dir + "/bad.csv"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("suite runners share seeds across agents") {
    ToyModels t = make_toy();
    std::vector<eval::AgentSpec> agents{toy_agent(t, "a"), toy_agent(t, "b")};
    agents[1].cfg.guidance.lambda = 0.0;

    SuiteReport prog = eval::run_programmatic(agents, 2, 500, 30);
    CHECK(prog.suite == "programmatic");
    CHECK(prog.cells.size() == 5 * agents.size());
    for (const auto& c : prog.cells) {
        CHECK(c.values.size() == 2);
        CHECK(c.seeds == std::vector<std::uint64_t>{500, 501});
        for (double v : c.values) CHECK(std::isfinite(v));
    }
    // same task, both agents: comparable by construction
    CHECK_NOTHROW(eval::mean_gap(prog.cells[0], prog.cells[1]));
    CHECK_THROWS(eval::run_programmatic({}, 2, 500, 30));
    CHECK_THROWS(eval::run_programmatic(agents, 0, 500, 30));

    eval::SwitchOptions opt;
    opt.frame_limit = 24;
    opt.dig_frame_limit = 24;
    opt.dig_depth_switch = 2;
    SuiteReport sw = eval::run_switch(agents, 1, 500, opt);
    CHECK(sw.suite == "switch");
    CHECK(sw.cells.size() == 3 * agents.size());
    for (const auto& c : sw.cells) {
        CHECK(c.metric == "success");
        CHECK((c.values[0] == 0.0 || c.values[0] == 1.0));
    }

    auto reports = eval::run_ablations({{toy_agent(t, "x")}, {toy_agent(t, "y")}}, 1, 500, 24);
    REQUIRE(reports.size() == 2);
    CHECK(reports[0].suite == "ablation_0");
    CHECK(reports[1].suite == "ablation_1");
    CHECK(reports[0].cells.size() == 1);
    CHECK(reports[0].cells[0].metric == "inventory:dirt");
}
