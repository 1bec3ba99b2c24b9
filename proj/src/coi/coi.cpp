#include "voxdream/coi/coi.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace voxdream::coi {

using ordered_json = nlohmann::ordered_json;

const char* mode_name(Mode m) {
    switch (m) {
        case Mode::coi: return "coi";
        case Mode::wo_coi: return "wo_coi";
        case Mode::random_noise: return "random_noise";
        case Mode::memory: return "memory";
    }
    throw std::invalid_argument("bad mode");
}

std::optional<Mode> mode_from_name(const std::string& s) {
    for (Mode m : {Mode::coi, Mode::wo_coi, Mode::random_noise, Mode::memory})
        if (s == mode_name(m)) return m;
    return std::nullopt;
}

void Schedule::validate() const {
    if (segments.empty()) throw std::invalid_argument("schedule needs at least one segment");
    if (frame_limit < 1) throw std::invalid_argument("frame_limit must be >= 1");
    for (size_t i = 0; i + 1 < segments.size(); ++i)
        if (!segments[i].until) throw std::invalid_argument("non-final segments need a switch condition");
    if (segments.back().until) throw std::invalid_argument("final segment must be open-ended");
    // frame conditions must be monotone
    int last_frame = -1;
    for (const auto& seg : segments)
        if (seg.until && seg.until->kind == SwitchCondition::Kind::frame) {
            if (seg.until->value <= last_frame) throw std::invalid_argument("frame conditions must increase");
            last_frame = seg.until->value;
        }
}

Schedule single_instruction(const std::string& y, int frame_limit) {
    Schedule s;
    s.segments.push_back({y, std::nullopt});
    s.frame_limit = frame_limit;
    return s;
}

void CoiConfig::validate() const {
    if (imagination_interval < 1) throw std::invalid_argument("imagination_interval must be >= 1");
    if (sampler_steps < 1) throw std::invalid_argument("sampler_steps must be >= 1");
}

namespace {

std::string tensor_hash_hex(const nn::Tensor& t) {
    // FNV-1a over the raw double bytes
    std::uint64_t h = 1469598103934665603ULL;
    for (double d : t.v) {
        unsigned char bytes[sizeof(double)];
        std::memcpy(bytes, &d, sizeof(double));
        for (unsigned char b : bytes) {
            h ^= b;
            h *= 1099511628211ULL;
        }
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::uint64_t stream_seed(std::uint64_t seed, const char* name) {
    return nn::Rng::mix(seed, std::hash<std::string>{}(name));
}

bool condition_fires(const SwitchCondition& c, int frame, const world::AgentState& agent) {
    if (c.kind == SwitchCondition::Kind::frame) return frame >= c.value;
    return agent.spawn_pos.y - agent.pos.y >= c.value;
}

}  // namespace

EpisodeRecord run_episode(const Models& models, const expert::TaskSpec& task, const Schedule& schedule,
                          const CoiConfig& cfg, std::uint64_t seed) {
    schedule.validate();
    cfg.validate();
    if (!models.policy || !models.embedder) throw std::invalid_argument("policy and embedder models are required");
    if (cfg.mode == Mode::memory) {
        if (!models.memory) throw std::invalid_argument("memory mode needs a memory bank");
    } else {
        if (!models.cvae) throw std::invalid_argument("cvae model is required");
        if (cfg.mode != Mode::random_noise && !models.imaginator)
            throw std::invalid_argument("imaginator model is required");
    }

    const auto t0 = std::chrono::steady_clock::now();
    world::VoxelWorld w = world::generate_world(seed, task.biome);
    world::AgentState agent = world::spawn_agent(w);
    for (world::Rule r : task.rules) world::apply_rule(w, agent, r);

    nn::Rng pol_rng(stream_seed(seed, "policy"));
    nn::Rng im_rng(stream_seed(seed, "imagine"));

    EpisodeRecord rec;
    rec.spawn = agent.spawn_pos;
    rec.mode = mode_name(cfg.mode);
    rec.task = task.name;
    rec.schedule = schedule;
    rec.seed = seed;
    rec.trajectory.seed = seed;
    rec.trajectory.biome = world::biome_name(w.biome);
    for (world::Rule r : task.rules) rec.trajectory.rules.push_back(world::rule_name(r));
    rec.trajectory.task = task.name;

    const int d_p = models.policy->config().d_p;
    prompt::Projection proj = models.policy->projection();
    std::vector<double> prompt_vec(d_p, 0.0);
    std::vector<std::vector<double>> cond_hist, uncond_hist;
    size_t seg_idx = 0;
    int tick_counter = 0;

    world::Observation obs = world::observe(w, agent);
    for (int frame = 0; frame < schedule.frame_limit; ++frame) {
        bool switched = false;
        while (seg_idx + 1 < schedule.segments.size() &&
               condition_fires(*schedule.segments[seg_idx].until, frame, agent)) {
            ++seg_idx;
            switched = true;
        }
        const std::string& y = schedule.segments[seg_idx].instruction;

        const bool tick_frame = frame % cfg.imagination_interval == 0;
        bool refresh = false;
        if (cfg.mode == Mode::wo_coi)
            refresh = frame == 0;
        else
            refresh = tick_frame || (switched && cfg.refresh_on_switch);

        if (refresh) {
            std::string im_hash;
            if (cfg.mode == Mode::memory) {
                const auto& entry = embed::memory_retrieve(*models.memory, *models.embedder, y, obs);
                prompt_vec = prompt::project(proj, entry.segment_embed);
            } else {
                imaginator::Imagination im;
                if (cfg.mode == Mode::random_noise) {
                    im = imaginator::random_noise_imagination({world::kCrop, world::kCrop, world::kCrop, world::kNumBlocks},
                                                              nn::Rng::mix(seed, 0xa0150000ULL + tick_counter));
                    im.decoded.pitch = obs.pitch;
                    im.decoded.held = obs.held;
                    im.decoded.inventory = obs.inventory;
                } else {
                    im = models.imaginator->imagine(obs, y, cfg.sampler_steps, im_rng);
                }
                im_hash = tensor_hash_hex(im.tensor);
                prompt_vec = prompt::generate_prompt(*models.cvae, *models.embedder, proj, obs, im, y,
                                                     cfg.prompt_mean_mode, cfg.strategy, im_rng);
            }
            rec.tick_frames.push_back(frame);
            rec.imagination_hashes.push_back(im_hash);
            rec.prompts.push_back(prompt_vec);
            ++tick_counter;
        }

        rec.positions.push_back(agent.pos);
        std::vector<double> f = models.policy->encode_obs(obs);
        std::vector<double> o_row(d_p);
        for (int i = 0; i < d_p; ++i) o_row[i] = f[i] + prompt_vec[i];
        cond_hist.push_back(std::move(o_row));
        uncond_hist.push_back(std::move(f));
        const int T = models.policy->config().context_T;
        if (static_cast<int>(cond_hist.size()) > T) {
            cond_hist.erase(cond_hist.begin());
            uncond_hist.erase(uncond_hist.begin());
        }

        auto logits = policy::cfg_logits(models.policy->policy_logits(cond_hist),
                                         models.policy->policy_logits(uncond_hist), cfg.guidance.lambda);
        const world::Action a = policy::sample_action(logits, cfg.guidance, pol_rng);

        world::StepResult sr = world::step(w, agent, a, frame);
        world::FrameRecord fr;
        fr.obs = obs;
        fr.action = a;
        fr.events = sr.events;
        rec.trajectory.frames.push_back(std::move(fr));
        obs = sr.obs;
    }
    rec.positions.push_back(agent.pos);
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

std::vector<EpisodeRecord> run_suite(const Models& models, const std::vector<SuiteItem>& items, int n_trials,
                                     const CoiConfig& cfg, std::uint64_t base_seed) {
    if (n_trials < 1) throw std::invalid_argument("n_trials must be >= 1");
    std::vector<EpisodeRecord> out;
    for (const auto& item : items)
        for (int trial = 0; trial < n_trials; ++trial)
            out.push_back(run_episode(models, item.task, item.schedule, cfg, base_seed + trial));
    return out;
}

namespace {

ordered_json schedule_to_json(const Schedule& s) {
    ordered_json segs = ordered_json::array();
    for (const auto& seg : s.segments) {
        ordered_json j{{"instruction", seg.instruction}};
        if (seg.until) {
            j["until"] = {{"kind", seg.until->kind == SwitchCondition::Kind::frame ? "frame" : "depth"},
                          {"value", seg.until->value}};
        }
        segs.push_back(j);
    }
    return ordered_json{{"segments", segs}, {"frame_limit", s.frame_limit}};
}

Schedule schedule_from_json(const ordered_json& j) {
    Schedule s;
    s.frame_limit = j.at("frame_limit").get<int>();
    for (const auto& seg : j.at("segments")) {
        ScheduleSegment out;
        out.instruction = seg.at("instruction").get<std::string>();
        if (seg.contains("until")) {
            SwitchCondition c;
            c.kind = seg["until"].at("kind").get<std::string>() == "frame" ? SwitchCondition::Kind::frame
                                                                           : SwitchCondition::Kind::depth;
            c.value = seg["until"].at("value").get<int>();
            out.until = c;
        }
        s.segments.push_back(out);
    }
    return s;
}

}  // namespace

void save_episode(const std::string& stem, const EpisodeRecord& rec) {
    world::save_trajectory(stem + ".jsonl", rec.trajectory);
    ordered_json j;
    j["schema_version"] = 1;
    j["mode"] = rec.mode;
    j["task"] = rec.task;
    j["seed"] = rec.seed;
    j["spawn"] = {rec.spawn.x, rec.spawn.y, rec.spawn.z};
    ordered_json pos = ordered_json::array();
    for (const auto& p : rec.positions) pos.push_back({p.x, p.y, p.z});
    j["positions"] = pos;
    j["tick_frames"] = rec.tick_frames;
    j["imagination_hashes"] = rec.imagination_hashes;
    j["prompts"] = rec.prompts;
    j["schedule"] = schedule_to_json(rec.schedule);
    std::ofstream f(stem + ".meta.json", std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + stem + ".meta.json");
    f << j.dump(2) << "\n";
}

EpisodeRecord load_episode(const std::string& stem) {
    EpisodeRecord rec;
    rec.trajectory = world::load_trajectory(stem + ".jsonl");
    std::ifstream f(stem + ".meta.json", std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + stem + ".meta.json");
    ordered_json j = ordered_json::parse(f);
    rec.mode = j.at("mode").get<std::string>();
    rec.task = j.at("task").get<std::string>();
    rec.seed = j.at("seed").get<std::uint64_t>();
    auto sp = j.at("spawn");
    rec.spawn = {sp[0].get<int>(), sp[1].get<int>(), sp[2].get<int>()};
    for (const auto& p : j.at("positions")) rec.positions.push_back({p[0].get<int>(), p[1].get<int>(), p[2].get<int>()});
    rec.tick_frames = j.at("tick_frames").get<std::vector<int>>();
    rec.imagination_hashes = j.at("imagination_hashes").get<std::vector<std::string>>();
    rec.prompts = j.at("prompts").get<std::vector<std::vector<double>>>();
    rec.schedule = schedule_from_json(j.at("schedule"));
    return rec;
}

}  // namespace voxdream::coi
