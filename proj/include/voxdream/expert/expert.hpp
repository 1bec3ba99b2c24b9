#pragma once

#include <map>
#include <string>
#include <vector>

#include "voxdream/world/trajectory.hpp"

namespace voxdream::expert {

struct TaskSpec {
    std::string name;
    world::Biome biome = world::Biome::plains;
    std::vector<world::Rule> rules;
    int max_frames = 600;
};

// The eight scripted expert tasks; biome follows the per-task mapping
// (forest for tree/plank tasks, plains otherwise).
const std::vector<TaskSpec>& all_tasks();
const TaskSpec& task_by_name(const std::string& name);

// dataset event item -> instruction strings (>= 3 each, frozen)
const std::map<std::string, std::vector<std::string>>& instruction_table();
const std::vector<std::string>& instructions_for(const std::string& item);

// every word of every instruction; this is the text vocabulary
std::vector<std::string> instruction_vocabulary();

// Scripted stochastic expert for one episode; epsilon is the random-action
// noise rate. Deterministic per (task, seed).
world::Trajectory run_expert(const TaskSpec& task, std::uint64_t seed, double epsilon = 0.1);

struct CorpusManifest {
    int schema_version = 1;
    int episodes = 0;
    std::map<std::string, int> per_task;               // task -> episode count
    std::map<std::string, int> event_counts;           // "kind:item" -> count
    std::vector<std::string> deficiencies;             // items under min_count
    std::vector<std::string> files;                    // trajectory paths, in order
};

CorpusManifest collect_corpus(const std::vector<TaskSpec>& tasks, int seeds_per_task,
                              const std::string& out_dir, std::uint64_t base_seed = 0,
                              int min_count = 50);

void save_manifest(const std::string& path, const CorpusManifest& m);
CorpusManifest load_manifest(const std::string& path);

// independent rescan of emitted logs, used as the manifest oracle
CorpusManifest rescan_corpus(const std::string& out_dir);

}  // namespace voxdream::expert
