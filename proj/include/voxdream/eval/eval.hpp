#pragma once

#include <map>
#include <string>
#include <vector>

#include "voxdream/coi/coi.hpp"

namespace voxdream::eval {

struct Metrics {
    double travel = 0;     // max horizontal Euclidean displacement from spawn
    double dig_depth = 0;  // max(spawn_y - min y, 0)
    std::map<std::string, int> inventory_max;  // item -> max count seen
    bool success = false;  // switch suites only
};

// pure function of positions + per-frame observations
Metrics compute_metrics(const coi::EpisodeRecord& rec);

// re-derives agent positions by deterministic replay of the logged actions
std::vector<world::Vec3> replay_positions(const world::Trajectory& traj, world::Vec3* spawn_out = nullptr);

// wraps a bare trajectory (e.g. an expert run) with replayed positions
coi::EpisodeRecord record_from_trajectory(const world::Trajectory& traj);

enum class SuccessKind { planks = 0, tower, diamond };
const char* success_kind_name(SuccessKind k);

struct JudgeConfig {
    int tower_threshold = 5;
};

// event-log detectors: planks = craft_item(wooden_plank); tower = placed
// column lifting the agent >= threshold above spawn; diamond = pick_up(diamond)
bool judge_success(const coi::EpisodeRecord& rec, SuccessKind kind, const JudgeConfig& cfg = {});

struct Interval {
    double mean = 0, lo = 0, hi = 0;
};

// two-sided 95% Student-t interval; n == 1 collapses to a point
Interval confidence_interval(const std::vector<double>& values);

// inverse CDF of Student's t at probability p (bisection on the regularized
// incomplete beta CDF); exposed for the t-table oracle test
double student_t_quantile(double p, int df);

struct CellStat {
    std::string task;
    std::string label;   // agent / mode label
    std::string metric;  // travel | dig_depth | inventory:<item> | success
    std::vector<double> values;
    Interval ci;
    double success_rate = 0;
    std::vector<std::uint64_t> seeds;
};

struct SuiteReport {
    std::string suite;
    std::vector<CellStat> cells;
    std::map<std::string, std::string> config_echo;
};

// throws unless both cells were measured on the identical seed set
double mean_gap(const CellStat& a, const CellStat& b);

struct AgentSpec {
    std::string label;
    coi::Models models;
    coi::CoiConfig cfg;
};

// five single-instruction tasks scored by simulator metrics; identical seeds
// across agents
SuiteReport run_programmatic(const std::vector<AgentSpec>& agents, int n_trials, std::uint64_t base_seed,
                             int frame_limit = 600);

struct SwitchOptions {
    int frame_limit = 600;
    int dig_frame_limit = 2400;
    int tower_threshold = 5;
    int dig_depth_switch = 8;
};

// three command-switching schedules scored by success detectors
SuiteReport run_switch(const std::vector<AgentSpec>& agents, int n_trials, std::uint64_t base_seed,
                       const SwitchOptions& opt = {});

// collect-dirt ablation column per agent (lambda sweeps, dataset variants,
// prompt strategies); one report per matrix row
std::vector<SuiteReport> run_ablations(const std::vector<std::vector<AgentSpec>>& matrix, int n_trials,
                                       std::uint64_t base_seed, int frame_limit = 600);

enum class ReportFormat { csv = 0, structured };
void emit_report(const SuiteReport& report, const std::string& path, ReportFormat format);
SuiteReport parse_report_csv(const std::string& path);

}  // namespace voxdream::eval
