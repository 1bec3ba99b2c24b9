#pragma once

#include <optional>
#include <string>
#include <vector>

#include "voxdream/embed/embed.hpp"
#include "voxdream/expert/expert.hpp"
#include "voxdream/imaginator/imaginator.hpp"
#include "voxdream/policy/policy.hpp"
#include "voxdream/prompt/prompt.hpp"
#include "voxdream/world/trajectory.hpp"

namespace voxdream::coi {

enum class Mode { coi = 0, wo_coi, random_noise, memory };
const char* mode_name(Mode m);
std::optional<Mode> mode_from_name(const std::string& s);

// fires when frame >= value, or when spawn_y - agent_y >= value
struct SwitchCondition {
    enum class Kind { frame, depth } kind = Kind::frame;
    int value = 0;
};

struct ScheduleSegment {
    std::string instruction;
    std::optional<SwitchCondition> until;  // absent on the last, open-ended segment
};

struct Schedule {
    std::vector<ScheduleSegment> segments;
    int frame_limit = 600;

    void validate() const;
};

Schedule single_instruction(const std::string& y, int frame_limit = 600);

struct CoiConfig {
    int imagination_interval = 25;
    Mode mode = Mode::coi;
    policy::GuidanceConfig guidance;
    bool refresh_on_switch = true;
    bool prompt_mean_mode = true;  // CVAE latent from the prior mean
    int sampler_steps = 50;
    prompt::PromptStrategy strategy = prompt::PromptStrategy::full;

    void validate() const;
};

struct Models {
    const imaginator::Imaginator* imaginator = nullptr;
    const embed::DualEncoder* embedder = nullptr;
    const prompt::Cvae* cvae = nullptr;
    const policy::PolicyNet* policy = nullptr;
    const embed::MemoryBank* memory = nullptr;  // memory mode only
};

struct EpisodeRecord {
    world::Trajectory trajectory;
    world::Vec3 spawn;
    std::vector<world::Vec3> positions;  // per frame, pre-action, plus the final position
    std::vector<int> tick_frames;
    std::vector<std::string> imagination_hashes;  // hex; empty string in memory mode
    std::vector<std::vector<double>> prompts;     // one per tick
    std::string mode;
    std::string task;
    Schedule schedule;
    std::uint64_t seed = 0;
    double wall_time_s = 0;  // in-memory only, not serialized
};

// loop: every imagination_interval frames (or on instruction switch) refresh
// the imagination and prompt; every frame run both CFG branches and step.
// rng streams: world gen, policy sampling, imagination sampler — all derived
// from seed by name.
EpisodeRecord run_episode(const Models& models, const expert::TaskSpec& task, const Schedule& schedule,
                          const CoiConfig& cfg, std::uint64_t seed);

struct SuiteItem {
    expert::TaskSpec task;
    Schedule schedule;
};

// n_trials per item, seeds = base_seed + trial (identical across compared modes)
std::vector<EpisodeRecord> run_suite(const Models& models, const std::vector<SuiteItem>& items, int n_trials,
                                     const CoiConfig& cfg, std::uint64_t base_seed);

// trajectory at <stem>.jsonl plus structured sidecar at <stem>.meta.json
void save_episode(const std::string& stem, const EpisodeRecord& rec);
EpisodeRecord load_episode(const std::string& stem);

}  // namespace voxdream::coi
