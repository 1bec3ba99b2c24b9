#include "voxdream/world/world.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "voxdream/nn/rng.hpp"

namespace voxdream::world {

using nn::hash_combine;

const char* block_name(Block b) {
    static const char* names[] = {"air",      "dirt",        "grass_block", "tall_grass", "tree_log", "leaves",
                                  "stone",    "coal_ore",    "diamond_ore", "bedrock",    "plank_block", "water"};
    return names[static_cast<int>(b)];
}

const char* item_name(Item i) {
    static const char* names[] = {"dirt", "seed", "wooden_log", "wooden_plank", "stone", "coal", "diamond", "diamond_pickaxe"};
    return names[static_cast<int>(i)];
}

std::optional<Item> item_from_name(const std::string& s) {
    for (int i = 0; i < kNumItems; ++i)
        if (s == item_name(static_cast<Item>(i))) return static_cast<Item>(i);
    return std::nullopt;
}

const char* action_name(Action a) {
    static const char* names[] = {"forward", "back",     "strafe_left", "strafe_right", "turn_left", "turn_right",
                                  "pitch_up", "pitch_down", "attack",   "place",        "craft_planks", "noop"};
    return names[static_cast<int>(a)];
}

const char* rule_name(Rule r) {
    static const char* names[] = {"peaceful", "eternal_day", "keep_inventory", "night_vision", "give_diamond_pickaxe"};
    return names[static_cast<int>(r)];
}

std::optional<Rule> rule_from_name(const std::string& s) {
    for (int i = 0; i <= 4; ++i)
        if (s == rule_name(static_cast<Rule>(i))) return static_cast<Rule>(i);
    return std::nullopt;
}

const char* biome_name(Biome b) { return b == Biome::plains ? "plains" : "forest"; }

std::optional<Biome> biome_from_name(const std::string& s) {
    if (s == "plains") return Biome::plains;
    if (s == "forest") return Biome::forest;
    return std::nullopt;
}

const char* event_kind_name(EventKind k) {
    static const char* names[] = {"mine_block", "craft_item", "use_item", "kill_entity", "pick_up", "place_block"};
    return names[static_cast<int>(k)];
}

std::optional<EventKind> event_kind_from_name(const std::string& s) {
    for (int i = 0; i <= 5; ++i)
        if (s == event_kind_name(static_cast<EventKind>(i))) return static_cast<EventKind>(i);
    return std::nullopt;
}

bool block_solid(Block b) {
    switch (b) {
        case Block::air:
        case Block::tall_grass:
        case Block::water:
            return false;
        default:
            return true;
    }
}

bool VoxelWorld::has_rule(Rule r) const {
    return std::find(rules.begin(), rules.end(), r) != rules.end();
}

int VoxelWorld::surface_height(int x, int z) const {
    for (int y = dims.y - 1; y >= 0; --y)
        if (block_solid(at(x, y, z))) return y;
    return 0;
}

namespace {

// smooth deterministic height field: bilinear interpolation of a hashed
// lattice with 6-cell spacing, range [0, 4]
double height_noise(std::uint64_t seed, int x, int z) {
    const int cell = 6;
    const int gx = x / cell, gz = z / cell;
    const double fx = static_cast<double>(x % cell) / cell;
    const double fz = static_cast<double>(z % cell) / cell;
    auto lattice = [&](int ix, int iz) {
        return static_cast<double>(hash_combine(seed, static_cast<std::uint64_t>(ix + 7), static_cast<std::uint64_t>(iz + 7)) % 1000) / 999.0;
    };
    const double v00 = lattice(gx, gz), v10 = lattice(gx + 1, gz);
    const double v01 = lattice(gx, gz + 1), v11 = lattice(gx + 1, gz + 1);
    const double a = v00 * (1 - fx) + v10 * fx;
    const double b = v01 * (1 - fx) + v11 * fx;
    return 4.0 * (a * (1 - fz) + b * fz);
}

}  // namespace

VoxelWorld generate_world(std::uint64_t seed, Biome biome, Vec3 dims) {
    if (dims.x < 8 || dims.y < 8 || dims.z < 8) throw std::invalid_argument("world dims must be >= 8 per axis");
    VoxelWorld w;
    w.dims = dims;
    w.seed = seed;
    w.biome = biome;
    w.blocks.assign(static_cast<size_t>(dims.x) * dims.y * dims.z, Block::air);

    const int base = std::min(10, dims.y - 10);
    for (int x = 0; x < dims.x; ++x)
        for (int z = 0; z < dims.z; ++z) {
            const int h = base + static_cast<int>(height_noise(seed, x, z));  // grass top
            w.set(x, 0, z, Block::bedrock);
            for (int y = 1; y <= h; ++y) {
                Block b = Block::stone;
                if (y > h - 3) b = Block::dirt;
                if (y == h) b = Block::grass_block;
                if (b == Block::stone) {
                    // ore bands: diamond only in y in [4,8]
                    const std::uint64_t hv = hash_combine(seed + 1, static_cast<std::uint64_t>(x),
                                                          static_cast<std::uint64_t>(y), static_cast<std::uint64_t>(z));
                    if (y >= 4 && y <= 8 && hv % 100 < 6) b = Block::diamond_ore;
                    else if (y >= 3 && y <= h - 4 && hv % 100 >= 94) b = Block::coal_ore;
                }
                w.set(x, y, z, b);
            }
            if (biome == Biome::plains) {
                // tall grass on >= 10% of the surface
                if (hash_combine(seed + 2, static_cast<std::uint64_t>(x), static_cast<std::uint64_t>(z)) % 100 < 18 &&
                    h + 1 < dims.y)
                    w.set(x, h + 1, z, Block::tall_grass);
            }
        }

    if (biome == Biome::forest) {
        // jittered tree grid; one tree per 4x4 patch guarantees >= X*Z/32 columns
        for (int px = 0; px + 4 <= dims.x; px += 4)
            for (int pz = 0; pz + 4 <= dims.z; pz += 4) {
                const std::uint64_t hv = hash_combine(seed + 3, static_cast<std::uint64_t>(px), static_cast<std::uint64_t>(pz));
                const int tx = px + 1 + static_cast<int>(hv % 2);
                const int tz = pz + 1 + static_cast<int>((hv >> 8) % 2);
                const int trunk = 2 + static_cast<int>((hv >> 16) % 3);  // 2..4
                const int h = w.surface_height(tx, tz);
                if (w.at(tx, h, tz) != Block::grass_block) continue;
                int y = h + 1;
                for (int t = 0; t < trunk && y < dims.y - 1; ++t, ++y) w.set(tx, y, tz, Block::tree_log);
                if (y < dims.y) w.set(tx, y, tz, Block::leaves);
            }
    }
    return w;
}

VoxelWorld generate_world(std::uint64_t seed, const std::string& biome, Vec3 dims) {
    auto b = biome_from_name(biome);
    if (!b) throw std::invalid_argument("unknown biome: " + biome);
    return generate_world(seed, *b, dims);
}

AgentState spawn_agent(const VoxelWorld& w) {
    AgentState a;
    const int cx = w.dims.x / 2, cz = w.dims.z / 2;
    // nearest surface column that is standable
    for (int r = 0; r < w.dims.x; ++r) {
        for (int dx = -r; dx <= r; ++dx)
            for (int dz = -r; dz <= r; ++dz) {
                if (std::max(std::abs(dx), std::abs(dz)) != r) continue;
                const int x = cx + dx, z = cz + dz;
                if (x < 0 || z < 0 || x >= w.dims.x || z >= w.dims.z) continue;
                const int h = w.surface_height(x, z);
                if (h + 1 < w.dims.y && !block_solid(w.at(x, h + 1, z))) {
                    a.pos = {x, h + 1, z};
                    a.spawn_pos = a.pos;
                    return a;
                }
            }
    }
    throw std::runtime_error("no spawnable surface cell");
}

void apply_rule(VoxelWorld& w, AgentState& a, Rule rule) {
    if (!w.has_rule(rule)) w.rules.push_back(rule);
    if (rule == Rule::give_diamond_pickaxe) {
        a.held_item = Item::diamond_pickaxe;
        if (a.inventory[static_cast<int>(Item::diamond_pickaxe)] == 0)
            a.inventory[static_cast<int>(Item::diamond_pickaxe)] = 1;
    }
}

Vec3 heading_dir(int heading) {
    switch (heading & 3) {
        case 0: return {1, 0, 0};
        case 1: return {0, 0, 1};
        case 2: return {-1, 0, 0};
        default: return {0, 0, -1};
    }
}

namespace {

bool passable(const VoxelWorld& w, Vec3 p) { return !block_solid(w.at(p.x, p.y, p.z)); }

void settle(const VoxelWorld& w, AgentState& a) {
    while (a.pos.y > 1 && passable(w, {a.pos.x, a.pos.y - 1, a.pos.z})) --a.pos.y;
}

// trampling: entering a tall_grass cell flattens it without an event
void enter_cell(VoxelWorld& w, AgentState& a, Vec3 p) {
    if (w.at(p.x, p.y, p.z) == Block::tall_grass) w.set(p.x, p.y, p.z, Block::air);
    a.pos = p;
    settle(w, a);
    if (w.at(a.pos.x, a.pos.y, a.pos.z) == Block::tall_grass) w.set(a.pos.x, a.pos.y, a.pos.z, Block::air);
}

void try_move(VoxelWorld& w, AgentState& a, Vec3 delta) {
    Vec3 tgt{a.pos.x + delta.x, a.pos.y, a.pos.z + delta.z};
    if (passable(w, tgt)) {
        enter_cell(w, a, tgt);
        return;
    }
    // one-block step up
    Vec3 up{tgt.x, tgt.y + 1, tgt.z};
    Vec3 above{a.pos.x, a.pos.y + 1, a.pos.z};
    if (passable(w, up) && passable(w, above)) enter_cell(w, a, up);
}

struct BreakSpec {
    int frames;
    bool needs_pickaxe;
    std::optional<Item> yield;
};

std::optional<BreakSpec> break_spec(Block b) {
    switch (b) {
        case Block::dirt: return BreakSpec{5, false, Item::dirt};
        case Block::grass_block: return BreakSpec{5, false, Item::dirt};
        case Block::tall_grass: return BreakSpec{5, false, Item::seed};
        case Block::tree_log: return BreakSpec{8, false, Item::wooden_log};
        case Block::plank_block: return BreakSpec{5, false, Item::wooden_plank};
        case Block::stone: return BreakSpec{12, true, Item::stone};
        case Block::coal_ore: return BreakSpec{12, true, Item::coal};
        case Block::diamond_ore: return BreakSpec{12, true, Item::diamond};
        default: return std::nullopt;  // air, leaves, bedrock, water unbreakable
    }
}

Vec3 attack_target(const AgentState& a) {
    const Vec3 f = heading_dir(a.heading);
    switch (a.pitch) {
        case Pitch::up: return {a.pos.x + f.x, a.pos.y + 1, a.pos.z + f.z};
        case Pitch::level: return {a.pos.x + f.x, a.pos.y, a.pos.z + f.z};
        case Pitch::down: return {a.pos.x, a.pos.y - 1, a.pos.z};  // underfoot
    }
    return a.pos;
}

std::optional<Item> placeable_item(const AgentState& a) {
    for (Item it : {Item::dirt, Item::wooden_plank, Item::stone})
        if (a.inventory[static_cast<int>(it)] > 0) return it;
    return std::nullopt;
}

Block block_of_item(Item it) {
    switch (it) {
        case Item::dirt: return Block::dirt;
        case Item::wooden_plank: return Block::plank_block;
        case Item::stone: return Block::stone;
        default: return Block::dirt;
    }
}

}  // namespace

StepResult step(VoxelWorld& w, AgentState& a, Action action, int frame) {
    StepResult out;
    auto emit = [&](EventKind k, const std::string& item, int count) {
        out.events.push_back(GameEvent{frame, k, item, count});
    };

    const bool was_breaking = a.breaking;
    a.breaking = false;

    switch (action) {
        case Action::move_forward: try_move(w, a, heading_dir(a.heading)); break;
        case Action::move_back: {
            Vec3 d = heading_dir(a.heading);
            try_move(w, a, {-d.x, 0, -d.z});
            break;
        }
        case Action::strafe_left: try_move(w, a, heading_dir(a.heading + 3)); break;
        case Action::strafe_right: try_move(w, a, heading_dir(a.heading + 1)); break;
        case Action::turn_left: a.heading = (a.heading + 3) & 3; break;
        case Action::turn_right: a.heading = (a.heading + 1) & 3; break;
        case Action::pitch_up: a.pitch = a.pitch == Pitch::down ? Pitch::level : Pitch::up; break;
        case Action::pitch_down: a.pitch = a.pitch == Pitch::up ? Pitch::level : Pitch::down; break;
        case Action::attack: {
            const Vec3 t = attack_target(a);
            const Block b = w.at(t.x, t.y, t.z);
            const auto spec = break_spec(b);
            if (!spec) break;
            if (spec->needs_pickaxe && a.held_item != Item::diamond_pickaxe) break;
            if (was_breaking && a.break_target == t)
                a.break_progress += 1;
            else
                a.break_progress = 1;
            a.break_target = t;
            a.breaking = true;
            if (a.break_progress >= spec->frames) {
                w.set(t.x, t.y, t.z, Block::air);
                emit(EventKind::mine_block, block_name(b), 1);
                if (spec->yield) {
                    a.inventory[static_cast<int>(*spec->yield)] += 1;
                    emit(EventKind::pick_up, item_name(*spec->yield), 1);
                }
                a.breaking = false;
                a.break_progress = 0;
                settle(w, a);  // breaking the block underfoot drops the agent
            }
            break;
        }
        case Action::place: {
            if (a.pitch != Pitch::down) break;
            const auto it = placeable_item(a);
            if (!it) break;
            Vec3 above{a.pos.x, a.pos.y + 1, a.pos.z};
            if (!passable(w, above) || above.y >= w.dims.y) break;
            if (!block_solid(w.at(a.pos.x, a.pos.y - 1, a.pos.z))) break;  // need footing to pillar
            const Vec3 old = a.pos;
            a.pos = above;
            w.set(old.x, old.y, old.z, block_of_item(*it));
            a.inventory[static_cast<int>(*it)] -= 1;
            emit(EventKind::place_block, item_name(*it), 1);
            break;
        }
        case Action::craft_planks: {
            if (a.inventory[static_cast<int>(Item::wooden_log)] >= 1) {
                a.inventory[static_cast<int>(Item::wooden_log)] -= 1;
                a.inventory[static_cast<int>(Item::wooden_plank)] += 4;
                emit(EventKind::craft_item, item_name(Item::wooden_plank), 4);
            }
            break;
        }
        case Action::noop: break;
    }

    if (action != Action::attack) a.break_progress = 0;
    out.obs = observe(w, a);
    out.obs.frame = frame;
    return out;
}

Observation observe(const VoxelWorld& w, const AgentState& a) {
    Observation o;
    // rotate local (fwd, up, right) into world axes; heading maps to +x locally
    const Vec3 f = heading_dir(a.heading);
    const Vec3 r = heading_dir(a.heading + 1);
    const int half = kCrop / 2;
    for (int lx = 0; lx < kCrop; ++lx)      // forward axis
        for (int ly = 0; ly < kCrop; ++ly)  // vertical
            for (int lz = 0; lz < kCrop; ++lz) {  // right axis
                const int df = lx - half, dy = ly - half, dr = lz - half;
                const int wx = a.pos.x + f.x * df + r.x * dr;
                const int wy = a.pos.y + dy;
                const int wz = a.pos.z + f.z * df + r.z * dr;
                o.crop[(static_cast<size_t>(lx) * kCrop + ly) * kCrop + lz] =
                    static_cast<std::uint8_t>(w.at(wx, wy, wz));
            }
    o.pitch = a.pitch;
    o.held = a.held_item ? static_cast<int>(*a.held_item) : -1;
    o.inventory = a.inventory;
    return o;
}

nn::Tensor crop_onehot(const Observation& o) {
    nn::Tensor t({kCrop, kCrop, kCrop, kNumBlocks});
    for (int c = 0; c < kCropCells; ++c) t[static_cast<std::int64_t>(c) * kNumBlocks + o.crop[c]] = 1.0;
    return t;
}

nn::Tensor aux_vector(const Observation& o) {
    nn::Tensor t({kAuxDim});
    t[static_cast<int>(o.pitch)] = 1.0;
    t[3 + (o.held < 0 ? kNumItems : o.held)] = 1.0;
    for (int i = 0; i < kNumItems; ++i)
        t[3 + kNumItems + 1 + i] = std::min(o.inventory[i], 64) / 64.0;
    return t;
}

nn::Tensor obs_features(const Observation& o) {
    nn::Tensor t({kObsFeatDim});
    const auto crop = crop_onehot(o);
    std::copy(crop.v.begin(), crop.v.end(), t.v.begin());
    const auto aux = aux_vector(o);
    std::copy(aux.v.begin(), aux.v.end(), t.v.begin() + crop.v.size());
    return t;
}

std::array<std::uint8_t, kCropCells> decode_crop(const nn::Tensor& t) {
    std::array<std::uint8_t, kCropCells> out{};
    for (int c = 0; c < kCropCells; ++c) {
        int best = 0;
        double bv = t[static_cast<std::int64_t>(c) * kNumBlocks];
        for (int b = 1; b < kNumBlocks; ++b) {
            const double v = t[static_cast<std::int64_t>(c) * kNumBlocks + b];
            if (v > bv) {
                bv = v;
                best = b;
            }
        }
        out[c] = static_cast<std::uint8_t>(best);
    }
    return out;
}

}  // namespace voxdream::world
