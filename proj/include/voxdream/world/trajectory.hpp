#pragma once

#include <string>
#include <vector>

#include "voxdream/world/world.hpp"

namespace voxdream::world {

// One record per frame: the observation the agent acted on, the action taken,
// and the events that resulted.
struct FrameRecord {
    Observation obs;
    Action action = Action::noop;
    std::vector<GameEvent> events;
};

struct Trajectory {
    int schema_version = 1;
    std::uint64_t seed = 0;
    std::string biome;
    std::vector<std::string> rules;
    std::string task;
    bool targetless = false;  // expert found no reachable target
    std::vector<FrameRecord> frames;
};

// line-delimited JSON, header record first; byte-stable given inputs
void save_trajectory(const std::string& path, const Trajectory& t);
Trajectory load_trajectory(const std::string& path);

}  // namespace voxdream::world
