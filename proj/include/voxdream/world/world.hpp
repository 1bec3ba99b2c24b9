#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "voxdream/nn/tensor.hpp"

namespace voxdream::world {

enum class Block : std::uint8_t {
    air = 0,
    dirt,
    grass_block,
    tall_grass,
    tree_log,
    leaves,
    stone,
    coal_ore,
    diamond_ore,
    bedrock,
    plank_block,
    water,
};
constexpr int kNumBlocks = 12;
const char* block_name(Block b);

enum class Item : std::uint8_t { dirt = 0, seed, wooden_log, wooden_plank, stone, coal, diamond, diamond_pickaxe };
constexpr int kNumItems = 8;
const char* item_name(Item i);
std::optional<Item> item_from_name(const std::string& s);

enum class Action : std::uint8_t {
    move_forward = 0,
    move_back,
    strafe_left,
    strafe_right,
    turn_left,
    turn_right,
    pitch_up,
    pitch_down,
    attack,
    place,
    craft_planks,
    noop,
};
constexpr int kNumActions = 12;
const char* action_name(Action a);

enum class Pitch : std::uint8_t { up = 0, level, down };

enum class Rule : std::uint8_t { peaceful = 0, eternal_day, keep_inventory, night_vision, give_diamond_pickaxe };
const char* rule_name(Rule r);
std::optional<Rule> rule_from_name(const std::string& s);

enum class Biome : std::uint8_t { plains = 0, forest };
const char* biome_name(Biome b);
std::optional<Biome> biome_from_name(const std::string& s);

struct Vec3 {
    int x = 0, y = 0, z = 0;
    bool operator==(const Vec3&) const = default;
};

enum class EventKind : std::uint8_t { mine_block = 0, craft_item, use_item, kill_entity, pick_up, place_block };
const char* event_kind_name(EventKind k);
std::optional<EventKind> event_kind_from_name(const std::string& s);

struct GameEvent {
    int frame = 0;
    EventKind kind;
    std::string item;
    int count = 1;
};

struct VoxelWorld {
    Vec3 dims{24, 24, 24};
    std::vector<Block> blocks;
    std::uint64_t seed = 0;
    Biome biome = Biome::plains;
    std::vector<Rule> rules;

    Block at(int x, int y, int z) const {
        if (x < 0 || y < 0 || z < 0 || x >= dims.x || y >= dims.y || z >= dims.z) return Block::bedrock;
        return blocks[(static_cast<size_t>(y) * dims.z + z) * dims.x + x];
    }
    void set(int x, int y, int z, Block b) {
        blocks[(static_cast<size_t>(y) * dims.z + z) * dims.x + x] = b;
    }
    int surface_height(int x, int z) const;  // highest solid y
    bool has_rule(Rule r) const;
};

struct AgentState {
    Vec3 pos;
    int heading = 0;  // 0:+x 1:+z 2:-x 3:-z
    Pitch pitch = Pitch::level;
    std::array<int, kNumItems> inventory{};
    std::optional<Item> held_item;
    Vec3 spawn_pos;

    // break-in-progress bookkeeping
    Vec3 break_target;
    int break_progress = 0;
    bool breaking = false;
};

constexpr int kCrop = 5;  // egocentric window extent per axis
constexpr int kCropCells = kCrop * kCrop * kCrop;
constexpr int kAuxDim = 3 + (kNumItems + 1) + kNumItems;  // pitch + held one-hot + inventory

struct Observation {
    std::array<std::uint8_t, kCropCells> crop{};  // block ids, rotated to face +x
    Pitch pitch = Pitch::level;
    int held = -1;  // -1 none, else Item index
    std::array<int, kNumItems> inventory{};
    int frame = 0;
};

// ---- operations ----

VoxelWorld generate_world(std::uint64_t seed, Biome biome, Vec3 dims = {24, 24, 24});
VoxelWorld generate_world(std::uint64_t seed, const std::string& biome, Vec3 dims = {24, 24, 24});

// spawn on the surface near the centre, facing +x
AgentState spawn_agent(const VoxelWorld& w);

void apply_rule(VoxelWorld& w, AgentState& a, Rule rule);

struct StepResult {
    std::vector<GameEvent> events;
    Observation obs;
};

StepResult step(VoxelWorld& w, AgentState& a, Action action, int frame);

Observation observe(const VoxelWorld& w, const AgentState& a);

bool block_solid(Block b);

// forward unit vector for a heading
Vec3 heading_dir(int heading);

// ---- observation encodings ----

// one-hot crop tensor [5,5,5,kNumBlocks]
nn::Tensor crop_onehot(const Observation& o);
// pitch one-hot + held one-hot + inventory clipped at 64 scaled to [0,1]
nn::Tensor aux_vector(const Observation& o);
// flattened crop one-hot followed by aux
nn::Tensor obs_features(const Observation& o);
constexpr int kObsFeatDim = kCropCells * kNumBlocks + kAuxDim;

// argmax decode of a [5,5,5,kNumBlocks] tensor back to crop symbols
std::array<std::uint8_t, kCropCells> decode_crop(const nn::Tensor& t);

}  // namespace voxdream::world
