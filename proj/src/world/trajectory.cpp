#include "voxdream/world/trajectory.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace voxdream::world {

using json = nlohmann::ordered_json;

void save_trajectory(const std::string& path, const Trajectory& t) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write trajectory " + path);
    json head;
    head["schema_version"] = t.schema_version;
    head["seed"] = t.seed;
    head["biome"] = t.biome;
    head["rules"] = t.rules;
    head["task"] = t.task;
    head["targetless"] = t.targetless;
    os << head.dump() << "\n";
    for (size_t i = 0; i < t.frames.size(); ++i) {
        const auto& fr = t.frames[i];
        json rec;
        rec["frame"] = i;
        rec["crop"] = std::vector<int>(fr.obs.crop.begin(), fr.obs.crop.end());
        rec["pitch"] = static_cast<int>(fr.obs.pitch);
        rec["held"] = fr.obs.held;
        rec["inv"] = std::vector<int>(fr.obs.inventory.begin(), fr.obs.inventory.end());
        rec["action"] = static_cast<int>(fr.action);
        auto evs = json::array();
        for (const auto& e : fr.events) {
            json je;
            je["kind"] = event_kind_name(e.kind);
            je["item"] = e.item;
            je["count"] = e.count;
            evs.push_back(je);
        }
        rec["events"] = evs;
        os << rec.dump() << "\n";
    }
}

Trajectory load_trajectory(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read trajectory " + path);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("empty trajectory " + path);
    const auto head = nlohmann::json::parse(line);
    Trajectory t;
    t.schema_version = head.at("schema_version").get<int>();
    t.seed = head.at("seed").get<std::uint64_t>();
    t.biome = head.at("biome").get<std::string>();
    t.rules = head.at("rules").get<std::vector<std::string>>();
    t.task = head.at("task").get<std::string>();
    t.targetless = head.value("targetless", false);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto rec = nlohmann::json::parse(line);
        FrameRecord fr;
        const auto crop = rec.at("crop").get<std::vector<int>>();
        if (crop.size() != kCropCells) throw std::runtime_error("bad crop size in " + path);
        for (size_t i = 0; i < crop.size(); ++i) fr.obs.crop[i] = static_cast<std::uint8_t>(crop[i]);
        fr.obs.pitch = static_cast<Pitch>(rec.at("pitch").get<int>());
        fr.obs.held = rec.at("held").get<int>();
        const auto inv = rec.at("inv").get<std::vector<int>>();
        for (size_t i = 0; i < inv.size() && i < kNumItems; ++i) fr.obs.inventory[i] = inv[i];
        fr.obs.frame = rec.at("frame").get<int>();
        fr.action = static_cast<Action>(rec.at("action").get<int>());
        for (const auto& je : rec.at("events")) {
            GameEvent e;
            e.frame = fr.obs.frame;
            e.kind = *event_kind_from_name(je.at("kind").get<std::string>());
            e.item = je.at("item").get<std::string>();
            e.count = je.at("count").get<int>();
            fr.events.push_back(e);
        }
        t.frames.push_back(std::move(fr));
    }
    return t;
}

}  // namespace voxdream::world
