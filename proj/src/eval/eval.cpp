#include "voxdream/eval/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace voxdream::eval {

Metrics compute_metrics(const coi::EpisodeRecord& rec) {
    Metrics m;
    int min_y = rec.spawn.y;
    for (const auto& p : rec.positions) {
        const double dx = p.x - rec.spawn.x, dz = p.z - rec.spawn.z;
        m.travel = std::max(m.travel, std::sqrt(dx * dx + dz * dz));
        min_y = std::min(min_y, p.y);
    }
    m.dig_depth = rec.spawn.y - min_y;
    for (const auto& fr : rec.trajectory.frames)
        for (int i = 0; i < world::kNumItems; ++i) {
            const int c = fr.obs.inventory[i];
            if (c > 0) {
                auto& mx = m.inventory_max[world::item_name(static_cast<world::Item>(i))];
                mx = std::max(mx, c);
            }
        }
    return m;
}

std::vector<world::Vec3> replay_positions(const world::Trajectory& traj, world::Vec3* spawn_out) {
    world::VoxelWorld w = world::generate_world(traj.seed, traj.biome);
    world::AgentState a = world::spawn_agent(w);
    for (const auto& rs : traj.rules) {
        auto r = world::rule_from_name(rs);
        if (!r) throw std::runtime_error("unknown rule in trajectory: " + rs);
        world::apply_rule(w, a, *r);
    }
    if (spawn_out) *spawn_out = a.spawn_pos;
    std::vector<world::Vec3> out;
    for (size_t i = 0; i < traj.frames.size(); ++i) {
        out.push_back(a.pos);
        world::step(w, a, traj.frames[i].action, static_cast<int>(i));
    }
    out.push_back(a.pos);
    return out;
}

coi::EpisodeRecord record_from_trajectory(const world::Trajectory& traj) {
    coi::EpisodeRecord rec;
    rec.trajectory = traj;
    rec.task = traj.task;
    rec.seed = traj.seed;
    rec.positions = replay_positions(traj, &rec.spawn);
    rec.schedule = coi::single_instruction(traj.task, static_cast<int>(traj.frames.size()));
    return rec;
}

const char* success_kind_name(SuccessKind k) {
    switch (k) {
        case SuccessKind::planks: return "planks";
        case SuccessKind::tower: return "tower";
        case SuccessKind::diamond: return "diamond";
    }
    throw std::invalid_argument("bad success kind");
}

bool judge_success(const coi::EpisodeRecord& rec, SuccessKind kind, const JudgeConfig& cfg) {
    switch (kind) {
        case SuccessKind::planks:
            for (const auto& fr : rec.trajectory.frames)
                for (const auto& ev : fr.events)
                    if (ev.kind == world::EventKind::craft_item && ev.item == "wooden_plank") return true;
            return false;
        case SuccessKind::tower: {
            int placed = 0, rise = 0;
            for (const auto& fr : rec.trajectory.frames)
                for (const auto& ev : fr.events)
                    if (ev.kind == world::EventKind::place_block) placed += ev.count;
            for (const auto& p : rec.positions) rise = std::max(rise, p.y - rec.spawn.y);
            return placed >= cfg.tower_threshold && rise >= cfg.tower_threshold;
        }
        case SuccessKind::diamond:
            for (const auto& fr : rec.trajectory.frames)
                for (const auto& ev : fr.events)
                    if (ev.kind == world::EventKind::pick_up && ev.item == "diamond") return true;
            return false;
    }
    throw std::invalid_argument("bad success kind");
}

namespace {

// regularized incomplete beta via Lentz's continued fraction
double betacf(double a, double b, double x) {
    const double eps = 3e-14, fpmin = 1e-300;
    double qab = a + b, qap = a + 1, qam = a - 1;
    double c = 1, d = 1 - qab * x / qap;
    if (std::fabs(d) < fpmin) d = fpmin;
    d = 1 / d;
    double h = d;
    for (int m = 1; m <= 300; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1) < eps) break;
    }
    return h;
}

double ibeta(double a, double b, double x) {
    if (x <= 0) return 0;
    if (x >= 1) return 1;
    const double ln = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln);
    if (x < (a + 1) / (a + b + 2)) return front * betacf(a, b, x) / a;
    return 1 - front * betacf(b, a, 1 - x) / b;
}

double student_t_cdf(double t, int df) {
    const double x = df / (df + t * t);
    const double p = 0.5 * ibeta(df / 2.0, 0.5, x);
    return t > 0 ? 1 - p : p;
}

}  // namespace

double student_t_quantile(double p, int df) {
    if (df < 1 || p <= 0 || p >= 1) throw std::invalid_argument("bad t quantile arguments");
    double lo = -1e3, hi = 1e3;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (student_t_cdf(mid, df) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

Interval confidence_interval(const std::vector<double>& values) {
    if (values.empty()) throw std::invalid_argument("confidence_interval needs values");
    Interval iv;
    const int n = static_cast<int>(values.size());
    for (double v : values) iv.mean += v;
    iv.mean /= n;
    if (n == 1) {
        iv.lo = iv.hi = iv.mean;
        return iv;
    }
    double ss = 0;
    for (double v : values) ss += (v - iv.mean) * (v - iv.mean);
    const double sd = std::sqrt(ss / (n - 1));
    const double half = student_t_quantile(0.975, n - 1) * sd / std::sqrt(n);
    iv.lo = iv.mean - half;
    iv.hi = iv.mean + half;
    return iv;
}

double mean_gap(const CellStat& a, const CellStat& b) {
    if (a.seeds != b.seeds) throw std::invalid_argument("cells measured on different seed sets are not comparable");
    return a.ci.mean - b.ci.mean;
}

namespace {

struct ProgTask {
    const char* task;
    const char* item;    // instruction-table key
    const char* metric;  // travel | dig_depth | inventory:<item>
};

constexpr ProgTask kProgTasks[] = {
    {"go_explore", "explore", "travel"},
    {"collect_seeds", "seed", "inventory:seed"},
    {"chop_tree", "wooden_log", "inventory:wooden_log"},
    {"collect_dirt", "dirt", "inventory:dirt"},
    {"dig_down", "dig_down", "dig_depth"},
};

double metric_value(const Metrics& m, const std::string& metric) {
    if (metric == "travel") return m.travel;
    if (metric == "dig_depth") return m.dig_depth;
    if (metric == "success") return m.success ? 1.0 : 0.0;
    if (metric.rfind("inventory:", 0) == 0) {
        auto it = m.inventory_max.find(metric.substr(10));
        return it == m.inventory_max.end() ? 0.0 : it->second;
    }
    throw std::invalid_argument("unknown metric " + metric);
}

CellStat make_cell(const std::string& task, const std::string& label, const std::string& metric,
                   std::vector<double> values, std::vector<std::uint64_t> seeds) {
    CellStat c;
    c.task = task;
    c.label = label;
    c.metric = metric;
    c.values = std::move(values);
    c.seeds = std::move(seeds);
    c.ci = confidence_interval(c.values);
    double s = 0;
    for (double v : c.values) s += v > 0 ? 1 : 0;
    c.success_rate = c.values.empty() ? 0 : s / c.values.size();
    return c;
}

}  // namespace

SuiteReport run_programmatic(const std::vector<AgentSpec>& agents, int n_trials, std::uint64_t base_seed,
                             int frame_limit) {
    if (agents.empty() || n_trials < 1) throw std::invalid_argument("need agents and trials");
    SuiteReport rep;
    rep.suite = "programmatic";
    rep.config_echo["n_trials"] = std::to_string(n_trials);
    rep.config_echo["base_seed"] = std::to_string(base_seed);
    rep.config_echo["frame_limit"] = std::to_string(frame_limit);
    for (const auto& pt : kProgTasks) {
        const expert::TaskSpec& task = expert::task_by_name(pt.task);
        const std::string y = expert::instructions_for(pt.item).front();
        coi::Schedule sched = coi::single_instruction(y, frame_limit);
        for (const auto& agent : agents) {
            std::vector<double> values;
            std::vector<std::uint64_t> seeds;
            for (int trial = 0; trial < n_trials; ++trial) {
                const std::uint64_t seed = base_seed + trial;
                auto rec = coi::run_episode(agent.models, task, sched, agent.cfg, seed);
                values.push_back(metric_value(compute_metrics(rec), pt.metric));
                seeds.push_back(seed);
            }
            rep.cells.push_back(make_cell(pt.task, agent.label, pt.metric, std::move(values), std::move(seeds)));
        }
    }
    return rep;
}

SuiteReport run_switch(const std::vector<AgentSpec>& agents, int n_trials, std::uint64_t base_seed,
                       const SwitchOptions& opt) {
    if (agents.empty() || n_trials < 1) throw std::invalid_argument("need agents and trials");
    struct Item {
        const char* task;
        SuccessKind kind;
        coi::Schedule sched;
    };
    auto frame_switch = [&](const std::string& y1, int at, const std::string& y2, int limit) {
        coi::Schedule s;
        s.segments.push_back({y1, coi::SwitchCondition{coi::SwitchCondition::Kind::frame, at}});
        s.segments.push_back({y2, std::nullopt});
        s.frame_limit = limit;
        return s;
    };
    coi::Schedule dig;
    dig.segments.push_back({expert::instructions_for("dig_down").front(),
                            coi::SwitchCondition{coi::SwitchCondition::Kind::depth, opt.dig_depth_switch}});
    dig.segments.push_back({expert::instructions_for("mine_horizontally").front(), std::nullopt});
    dig.frame_limit = opt.dig_frame_limit;

    const Item items[] = {
        {"craft_planks", SuccessKind::planks,
         frame_switch(expert::instructions_for("wooden_log").front(), opt.frame_limit / 2,
                      expert::instructions_for("wooden_plank").front(), opt.frame_limit)},
        {"build_tower", SuccessKind::tower,
         frame_switch(expert::instructions_for("dirt").front(), opt.frame_limit / 2,
                      expert::instructions_for("tower").front(), opt.frame_limit)},
        {"mine_horizontally", SuccessKind::diamond, dig},
    };

    JudgeConfig jc;
    jc.tower_threshold = opt.tower_threshold;
    SuiteReport rep;
    rep.suite = "switch";
    rep.config_echo["n_trials"] = std::to_string(n_trials);
    rep.config_echo["base_seed"] = std::to_string(base_seed);
    rep.config_echo["tower_threshold"] = std::to_string(opt.tower_threshold);
    for (const auto& item : items) {
        const expert::TaskSpec& task = expert::task_by_name(item.task);
        for (const auto& agent : agents) {
            std::vector<double> values;
            std::vector<std::uint64_t> seeds;
            for (int trial = 0; trial < n_trials; ++trial) {
                const std::uint64_t seed = base_seed + trial;
                auto rec = coi::run_episode(agent.models, task, item.sched, agent.cfg, seed);
                values.push_back(judge_success(rec, item.kind, jc) ? 1.0 : 0.0);
                seeds.push_back(seed);
            }
            rep.cells.push_back(make_cell(item.task, agent.label, "success", std::move(values), std::move(seeds)));
        }
    }
    return rep;
}

std::vector<SuiteReport> run_ablations(const std::vector<std::vector<AgentSpec>>& matrix, int n_trials,
                                       std::uint64_t base_seed, int frame_limit) {
    std::vector<SuiteReport> out;
    const expert::TaskSpec& task = expert::task_by_name("collect_dirt");
    const coi::Schedule sched = coi::single_instruction(expert::instructions_for("dirt").front(), frame_limit);
    for (size_t row = 0; row < matrix.size(); ++row) {
        SuiteReport rep;
        rep.suite = "ablation_" + std::to_string(row);
        rep.config_echo["n_trials"] = std::to_string(n_trials);
        rep.config_echo["base_seed"] = std::to_string(base_seed);
        for (const auto& agent : matrix[row]) {
            std::vector<double> values;
            std::vector<std::uint64_t> seeds;
            for (int trial = 0; trial < n_trials; ++trial) {
                const std::uint64_t seed = base_seed + trial;
                auto rec = coi::run_episode(agent.models, task, sched, agent.cfg, seed);
                values.push_back(metric_value(compute_metrics(rec), "inventory:dirt"));
                seeds.push_back(seed);
            }
            rep.cells.push_back(make_cell("collect_dirt", agent.label, "inventory:dirt", std::move(values),
                                          std::move(seeds)));
        }
        out.push_back(std::move(rep));
    }
    return out;
}

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::string join_seeds(const std::vector<std::uint64_t>& xs) {
    std::string out;
    for (size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ';';
        out += std::to_string(xs[i]);
    }
    return out;
}

std::string join_doubles(const std::vector<double>& xs) {
    std::string out;
    for (size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ';';
        out += fmt_double(xs[i]);
    }
    return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

void emit_report(const SuiteReport& report, const std::string& path, ReportFormat format) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    if (format == ReportFormat::csv) {
        f << "suite,task,label,metric,n,mean,ci_lo,ci_hi,success_rate,seeds,values\n";
        for (const auto& c : report.cells) {
            f << report.suite << ',' << c.task << ',' << c.label << ',' << c.metric << ',' << c.values.size() << ','
              << fmt_double(c.ci.mean) << ',' << fmt_double(c.ci.lo) << ',' << fmt_double(c.ci.hi) << ','
              << fmt_double(c.success_rate) << ',' << join_seeds(c.seeds) << ',' << join_doubles(c.values) << '\n';
        }
        return;
    }
    f << "suite: " << report.suite << "\n";
    for (const auto& [k, v] : report.config_echo) f << "config." << k << ": " << v << "\n";
    for (const auto& c : report.cells) {
        f << c.task << " / " << c.label << " [" << c.metric << "] n=" << c.values.size()
          << " mean=" << fmt_double(c.ci.mean) << " ci95=[" << fmt_double(c.ci.lo) << ", " << fmt_double(c.ci.hi)
          << "] success_rate=" << fmt_double(c.success_rate) << "\n";
    }
}

SuiteReport parse_report_csv(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    std::string line;
    if (!std::getline(f, line) || line.rfind("suite,task,label", 0) != 0)
        throw std::runtime_error("bad report header in " + path);
    SuiteReport rep;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto parts = split(line, ',');
        if (parts.size() != 11) throw std::runtime_error("bad report row in " + path);
        rep.suite = parts[0];
        CellStat c;
        c.task = parts[1];
        c.label = parts[2];
        c.metric = parts[3];
        c.ci.mean = std::stod(parts[5]);
        c.ci.lo = std::stod(parts[6]);
        c.ci.hi = std::stod(parts[7]);
        c.success_rate = std::stod(parts[8]);
        if (!parts[9].empty())
            for (const auto& s : split(parts[9], ';')) c.seeds.push_back(std::stoull(s));
        if (!parts[10].empty())
            for (const auto& s : split(parts[10], ';')) c.values.push_back(std::stod(s));
        if (c.values.size() != std::stoul(parts[4])) throw std::runtime_error("row n mismatch in " + path);
        rep.cells.push_back(std::move(c));
    }
    return rep;
}

}  // namespace voxdream::eval
