#include "voxdream/expert/expert.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>

#include <json.hpp>

#include "voxdream/nn/rng.hpp"

namespace voxdream::expert {

using namespace voxdream::world;
using nn::Rng;

const std::vector<TaskSpec>& all_tasks() {
    static const std::vector<TaskSpec> tasks = {
        {"chop_tree", Biome::forest, {}, 600},
        {"collect_dirt", Biome::plains, {}, 600},
        {"collect_seeds", Biome::plains, {}, 600},
        {"go_explore", Biome::plains, {}, 600},
        {"dig_down", Biome::plains, {Rule::give_diamond_pickaxe}, 600},
        {"build_tower", Biome::plains, {}, 600},
        {"craft_planks", Biome::forest, {}, 600},
        {"mine_horizontally", Biome::plains, {Rule::give_diamond_pickaxe}, 600},
    };
    return tasks;
}

const TaskSpec& task_by_name(const std::string& name) {
    for (const auto& t : all_tasks())
        if (t.name == name) return t;
    throw std::invalid_argument("unknown task: " + name);
}

const std::map<std::string, std::vector<std::string>>& instruction_table() {
    static const std::map<std::string, std::vector<std::string>> table = {
        {"seed", {"break grass", "break tall grass", "gather seeds", "collect seeds"}},
        {"wooden_log", {"chop a tree", "collect wood", "cut down trees"}},
        {"dirt", {"collect dirt", "dig dirt", "gather dirt", "break dirt"}},
        {"wooden_plank", {"craft wooden planks", "craft planks", "make wooden planks"}},
        {"diamond", {"mine diamonds", "obtain a diamond", "collect diamonds"}},
        {"dig_down", {"dig down", "dig deeper", "mine downwards"}},
        {"mine_horizontally", {"mine horizontally", "mine sideways", "tunnel forward"}},
        {"tower", {"build a tower", "stack up blocks", "pillar up"}},
        {"explore", {"go explore", "explore the world", "travel far"}},
    };
    return table;
}

const std::vector<std::string>& instructions_for(const std::string& item) {
    const auto& t = instruction_table();
    auto it = t.find(item);
    if (it == t.end()) throw std::invalid_argument("no instructions for item: " + item);
    return it->second;
}

std::vector<std::string> instruction_vocabulary() {
    std::set<std::string> words;
    for (const auto& [item, strs] : instruction_table())
        for (const auto& s : strs) {
            std::string word;
            for (char c : s + " ") {
                if (c == ' ') {
                    if (!word.empty()) words.insert(word);
                    word.clear();
                } else {
                    word.push_back(c);
                }
            }
        }
    return {words.begin(), words.end()};
}

namespace {

struct ExpertState {
    int phase = 0;
    int stuck = 0;
    Vec3 last_pos;
    bool found_target = false;
    std::optional<Vec3> target;
    std::vector<Vec3> blacklist;  // unreachable targets, skipped on rescans
    std::optional<Vec3> chase_target;
    int chase_frames = 0;
    int chase_best = 1 << 30;
};

int heading_toward(int dx, int dz) {
    if (std::abs(dx) >= std::abs(dz)) return dx >= 0 ? 0 : 2;
    return dz >= 0 ? 1 : 3;
}

Action turn_to(int cur, int want) {
    const int d = (want - cur) & 3;
    return d == 3 ? Action::turn_left : Action::turn_right;
}

bool can_advance(const VoxelWorld& w, const AgentState& a) {
    const Vec3 f = heading_dir(a.heading);
    const Vec3 t{a.pos.x + f.x, a.pos.y, a.pos.z + f.z};
    if (!block_solid(w.at(t.x, t.y, t.z))) return true;
    return !block_solid(w.at(t.x, t.y + 1, t.z)) && !block_solid(w.at(a.pos.x, a.pos.y + 1, a.pos.z));
}

// nearest block of a kind, scanning the whole grid (experts may cheat)
std::optional<Vec3> nearest_block(const VoxelWorld& w, const AgentState& a, Block kind,
                                  const std::vector<Vec3>& skip = {}) {
    std::optional<Vec3> best;
    int bestd = 1 << 30;
    for (int y = 0; y < w.dims.y; ++y)
        for (int z = 0; z < w.dims.z; ++z)
            for (int x = 0; x < w.dims.x; ++x)
                if (w.at(x, y, z) == kind &&
                    std::find(skip.begin(), skip.end(), Vec3{x, y, z}) == skip.end()) {
                    const int d = std::abs(x - a.pos.x) + std::abs(z - a.pos.z) + 2 * std::abs(y - a.pos.y);
                    if (d < bestd) {
                        bestd = d;
                        best = Vec3{x, y, z};
                    }
                }
    return best;
}

// attack a block that sits in the front column (dy 0 or +1) or underfoot
std::optional<Action> attack_if_adjacent(const AgentState& a, Vec3 t) {
    if (t.x == a.pos.x && t.z == a.pos.z && t.y == a.pos.y - 1)
        return a.pitch == Pitch::down ? Action::attack : Action::pitch_down;
    const int dx = t.x - a.pos.x, dz = t.z - a.pos.z, dy = t.y - a.pos.y;
    if (std::abs(dx) + std::abs(dz) != 1 || dy < 0 || dy > 1) return std::nullopt;
    const int want = heading_toward(dx, dz);
    if (a.heading != want) return turn_to(a.heading, want);
    const Pitch need = dy == 1 ? Pitch::up : Pitch::level;
    if (a.pitch != need) {
        if (dy == 1) return Action::pitch_up;
        return a.pitch == Pitch::up ? Action::pitch_down : Action::pitch_up;
    }
    return Action::attack;
}

Action navigate(const VoxelWorld& w, const AgentState& a, Vec3 t, Rng& rng) {
    const int dx = t.x - a.pos.x, dz = t.z - a.pos.z;
    const int want = heading_toward(dx, dz);
    if (a.heading != want) return turn_to(a.heading, want);
    if (can_advance(w, a)) return Action::move_forward;
    return rng.uniform() < 0.5 ? Action::turn_left : Action::turn_right;
}


Action level_pitch(const AgentState& a) {
    return a.pitch == Pitch::up ? Action::pitch_down : Action::pitch_up;
}

using Policy = std::function<Action(const VoxelWorld&, const AgentState&, Rng&, ExpertState&)>;

// cached nearest-block target; rescans only when the target is gone
const std::optional<Vec3>& acquire(const VoxelWorld& w, const AgentState& a, ExpertState& st, Block kind) {
    if (!st.target || w.at(st.target->x, st.target->y, st.target->z) != kind)
        st.target = nearest_block(w, a, kind, st.blacklist);
    return st.target;
}

Action hunt_policy(const VoxelWorld& w, const AgentState& a, Rng& rng, ExpertState& st, Block kind) {
    const auto& t = acquire(w, a, st, kind);
    if (!t) return navigate(w, a, {a.pos.x + 5, a.pos.y, a.pos.z + 5}, rng);
    st.found_target = true;
    // blacklist targets we fail to close in on (blocked by unbreakable terrain)
    if (!st.chase_target || !(*st.chase_target == *t)) {
        st.chase_target = *t;
        st.chase_frames = 0;
        st.chase_best = 1 << 30;
    }
    const int d = std::abs(t->x - a.pos.x) + std::abs(t->z - a.pos.z) + 2 * std::abs(t->y - a.pos.y);
    if (d < st.chase_best) {
        st.chase_best = d;
        st.chase_frames = 0;
    }
    if (auto act = attack_if_adjacent(a, *t)) return *act;
    if (++st.chase_frames > 40) {
        st.blacklist.push_back(*t);
        st.target.reset();
        st.chase_target.reset();
        return rng.uniform() < 0.5 ? Action::turn_left : Action::turn_right;
    }
    return navigate(w, a, *t, rng);
}

Action chop_policy(const VoxelWorld& w, const AgentState& a, Rng& rng, ExpertState& st) {
    return hunt_policy(w, a, rng, st, Block::tree_log);
}

Action seeds_policy(const VoxelWorld& w, const AgentState& a, Rng& rng, ExpertState& st) {
    return hunt_policy(w, a, rng, st, Block::tall_grass);
}

Action explore_policy(const VoxelWorld& w, const AgentState& a, Rng& rng, ExpertState& st) {
    st.found_target = true;
    if (a.pitch != Pitch::level) return level_pitch(a);
    if (can_advance(w, a)) return Action::move_forward;
    return rng.uniform() < 0.5 ? Action::turn_left : Action::turn_right;
}

Action dig_policy(const VoxelWorld& w, const AgentState& a, Rng&, ExpertState& st) {
    const Block under = w.at(a.pos.x, a.pos.y - 1, a.pos.z);
    if (under != Block::bedrock) {
        st.found_target = true;
        if (a.pitch != Pitch::down) return Action::pitch_down;
        return Action::attack;
    }
    return Action::noop;
}

Action tower_policy(const VoxelWorld& w, const AgentState& a, Rng& rng, ExpertState& st) {
    st.found_target = true;
    if (st.phase == 0) {
        if (a.inventory[static_cast<int>(Item::dirt)] >= 8) st.phase = 1;
        else return hunt_policy(w, a, rng, st, Block::grass_block);
    }
    if (a.inventory[static_cast<int>(Item::dirt)] == 0 || a.pos.y + 1 >= w.dims.y) return Action::noop;
    if (a.pitch != Pitch::down) return Action::pitch_down;
    return Action::place;
}

Action planks_policy(const VoxelWorld& w, const AgentState& a, Rng& rng, ExpertState& st) {
    if (a.inventory[static_cast<int>(Item::wooden_log)] >= 1) {
        st.found_target = true;
        return Action::craft_planks;
    }
    return chop_policy(w, a, rng, st);
}

Action mine_policy(const VoxelWorld& w, const AgentState& a, Rng& rng, ExpertState& st) {
    if (a.pos.y > 6) return dig_policy(w, a, rng, st);
    st.found_target = true;
    const Vec3 f = heading_dir(a.heading);
    const Block front = w.at(a.pos.x + f.x, a.pos.y, a.pos.z + f.z);
    if (front == Block::bedrock) return Action::turn_right;
    if (!block_solid(front)) {
        if (a.pitch != Pitch::level) return level_pitch(a);
        return Action::move_forward;
    }
    if (a.pitch != Pitch::level) return level_pitch(a);
    return Action::attack;
}

Policy policy_for(const std::string& task) {
    if (task == "chop_tree") return chop_policy;
    if (task == "collect_dirt") return [](const VoxelWorld& w, const AgentState& a, Rng& rng, ExpertState& st) {
        return hunt_policy(w, a, rng, st, Block::grass_block);
    };
    if (task == "collect_seeds") return seeds_policy;
    if (task == "go_explore") return explore_policy;
    if (task == "dig_down") return dig_policy;
    if (task == "build_tower") return tower_policy;
    if (task == "craft_planks") return planks_policy;
    if (task == "mine_horizontally") return mine_policy;
    throw std::invalid_argument("unknown task: " + task);
}

}  // namespace

Trajectory run_expert(const TaskSpec& task, std::uint64_t seed, double epsilon) {
    VoxelWorld w = generate_world(seed, task.biome);
    AgentState a = spawn_agent(w);
    for (Rule r : task.rules) apply_rule(w, a, r);

    Rng rng(Rng::mix(seed, std::hash<std::string>{}(task.name)));
    const Policy pol = policy_for(task.name);
    ExpertState st;
    st.last_pos = a.pos;

    Trajectory t;
    t.seed = seed;
    t.biome = biome_name(task.biome);
    for (Rule r : task.rules) t.rules.push_back(rule_name(r));
    t.task = task.name;

    for (int frame = 0; frame < task.max_frames; ++frame) {
        FrameRecord fr;
        fr.obs = observe(w, a);
        fr.obs.frame = frame;
        Action act;
        if (rng.uniform() < epsilon) {
            act = static_cast<Action>(rng.uniform_int(0, kNumActions - 1));
        } else {
            act = pol(w, a, rng, st);
            // unstick: too long without moving while trying to move
            if (a.pos == st.last_pos) {
                if (++st.stuck > 30 && (act == Action::move_forward || act == Action::attack)) {
                    act = rng.uniform() < 0.5 ? Action::turn_left : Action::turn_right;
                    st.stuck = 0;
                }
            } else {
                st.stuck = 0;
                st.last_pos = a.pos;
            }
        }
        fr.action = act;
        fr.events = step(w, a, act, frame).events;
        t.frames.push_back(std::move(fr));
    }
    t.targetless = !st.found_target;
    return t;
}

namespace {

void count_trajectory(const Trajectory& t, CorpusManifest& m) {
    m.episodes += 1;
    m.per_task[t.task] += 1;
    for (const auto& fr : t.frames)
        for (const auto& e : fr.events) m.event_counts[std::string(event_kind_name(e.kind)) + ":" + e.item] += 1;
}

}  // namespace

CorpusManifest collect_corpus(const std::vector<TaskSpec>& tasks, int seeds_per_task,
                              const std::string& out_dir, std::uint64_t base_seed, int min_count) {
    if (tasks.empty()) throw std::invalid_argument("need at least one task");
    std::filesystem::create_directories(out_dir);
    CorpusManifest m;
    for (const auto& task : tasks)
        for (int s = 0; s < seeds_per_task; ++s) {
            const std::uint64_t seed = base_seed + 1000 * (&task - tasks.data()) + s;
            Trajectory t = run_expert(task, seed);
            char name[128];
            std::snprintf(name, sizeof name, "%s_%04llu.jsonl", task.name.c_str(),
                          static_cast<unsigned long long>(seed));
            const std::string path = out_dir + "/" + name;
            save_trajectory(path, t);
            m.files.push_back(name);
            count_trajectory(t, m);
        }
    // coverage: items tied to world events must appear at least min_count times
    static const std::map<std::string, std::string> item_event = {
        {"seed", "pick_up:seed"},          {"wooden_log", "pick_up:wooden_log"},
        {"dirt", "pick_up:dirt"},          {"wooden_plank", "craft_item:wooden_plank"},
        {"diamond", "pick_up:diamond"},    {"dig_down", "pick_up:stone"},
        {"mine_horizontally", "pick_up:stone"}, {"tower", "place_block:dirt"},
    };
    for (const auto& [item, key] : item_event) {
        auto it = m.event_counts.find(key);
        const int n = it == m.event_counts.end() ? 0 : it->second;
        if (n < min_count && seeds_per_task > 0)
            m.deficiencies.push_back(item + ": " + std::to_string(n) + " < " + std::to_string(min_count));
    }
    save_manifest(out_dir + "/manifest.json", m);
    return m;
}

void save_manifest(const std::string& path, const CorpusManifest& m) {
    nlohmann::ordered_json j;
    j["schema_version"] = m.schema_version;
    j["episodes"] = m.episodes;
    j["per_task"] = m.per_task;
    j["event_counts"] = m.event_counts;
    j["deficiencies"] = m.deficiencies;
    j["files"] = m.files;
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write manifest " + path);
    os << j.dump(2) << "\n";
}

CorpusManifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read manifest " + path);
    nlohmann::json j;
    is >> j;
    CorpusManifest m;
    m.schema_version = j.at("schema_version").get<int>();
    m.episodes = j.at("episodes").get<int>();
    m.per_task = j.at("per_task").get<std::map<std::string, int>>();
    m.event_counts = j.at("event_counts").get<std::map<std::string, int>>();
    m.deficiencies = j.at("deficiencies").get<std::vector<std::string>>();
    m.files = j.at("files").get<std::vector<std::string>>();
    return m;
}

CorpusManifest rescan_corpus(const std::string& out_dir) {
    CorpusManifest m;
    std::vector<std::string> files;
    for (const auto& e : std::filesystem::directory_iterator(out_dir))
        if (e.path().extension() == ".jsonl") files.push_back(e.path().filename().string());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        count_trajectory(load_trajectory(out_dir + "/" + f), m);
        m.files.push_back(f);
    }
    return m;
}

}  // namespace voxdream::expert
