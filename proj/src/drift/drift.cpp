#include "voxdream/drift/drift.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "voxdream/expert/expert.hpp"

namespace voxdream::drift {

using world::Trajectory;

const std::set<std::string>& default_items() {
    static const std::set<std::string> items = {"seed",     "wooden_log",        "dirt",  "wooden_plank",
                                                "diamond",  "dig_down",          "tower", "explore",
                                                "mine_horizontally"};
    return items;
}

int DriftConfig::t_b(const std::string& item) const {
    auto it = backward_span.find(item);
    return it == backward_span.end() ? default_span : it->second;
}

int DriftConfig::t_f(const std::string& item) const {
    auto it = forward_span.find(item);
    return it == forward_span.end() ? default_span : it->second;
}

void DriftConfig::validate() const {
    if (m < 2) throw std::invalid_argument("drift m must be >= 2");
    for (const auto* spans : {&backward_span, &forward_span})
        for (const auto& [item, v] : *spans)
            if (v < m - 1) throw std::invalid_argument("drift span for " + item + " below m-1");
    if (default_span < m - 1) throw std::invalid_argument("default drift span below m-1");
}

DriftConfig default_drift_config() {
    DriftConfig cfg;
    cfg.backward_span = {{"wooden_log", 40}, {"dirt", 20}};
    cfg.forward_span = cfg.backward_span;
    return cfg;
}

const char* drift_kind_name(DriftKind k) {
    switch (k) {
        case DriftKind::backward1: return "backward1";
        case DriftKind::backward2: return "backward2";
        case DriftKind::forward: return "forward";
    }
    return "?";
}

std::optional<DriftKind> drift_kind_from_name(const std::string& s) {
    for (DriftKind k : {DriftKind::backward1, DriftKind::backward2, DriftKind::forward})
        if (s == drift_kind_name(k)) return k;
    return std::nullopt;
}

const char* dataset_variant_name(DatasetVariant v) {
    switch (v) {
        case DatasetVariant::normal: return "normal";
        case DatasetVariant::fixed_timestep_backward: return "fixed_timestep_backward";
        case DatasetVariant::only_backward: return "only_backward";
        case DatasetVariant::only_forward: return "only_forward";
    }
    return "?";
}

std::optional<DatasetVariant> dataset_variant_from_name(const std::string& s) {
    for (DatasetVariant v : {DatasetVariant::normal, DatasetVariant::fixed_timestep_backward,
                             DatasetVariant::only_backward, DatasetVariant::only_forward})
        if (s == dataset_variant_name(v)) return v;
    return std::nullopt;
}

namespace {

constexpr int kExploreStampEvery = 40;

// maps a logged game event to a dataset item, disambiguating stone pickups by
// the expert task that produced the trajectory
std::optional<std::string> event_item(const Trajectory& traj, const world::GameEvent& e) {
    if (e.kind == world::EventKind::pick_up) {
        if (e.item == "seed" || e.item == "wooden_log" || e.item == "dirt" || e.item == "diamond") return e.item;
        if (e.item == "stone") {
            if (traj.task == "dig_down") return "dig_down";
            if (traj.task == "mine_horizontally") return "mine_horizontally";
        }
        return std::nullopt;
    }
    if (e.kind == world::EventKind::craft_item && e.item == "wooden_plank") return "wooden_plank";
    if (e.kind == world::EventKind::place_block && e.item == "dirt") return "tower";
    return std::nullopt;
}

}  // namespace

std::vector<EventStamp> extract_events(const Trajectory& traj, const std::string& traj_id,
                                       const std::set<std::string>& selected_items) {
    std::vector<EventStamp> stamps;
    for (const auto& fr : traj.frames)
        for (const auto& e : fr.events) {
            const auto item = event_item(traj, e);
            if (item && selected_items.count(*item))
                stamps.push_back({traj_id, e.frame, *item, world::event_kind_name(e.kind)});
        }
    if (traj.task == "go_explore" && selected_items.count("explore"))
        for (int t = kExploreStampEvery; t < static_cast<int>(traj.frames.size()); t += kExploreStampEvery)
            stamps.push_back({traj_id, t, "explore", "task_progress"});
    std::stable_sort(stamps.begin(), stamps.end(),
                     [](const EventStamp& a, const EventStamp& b) { return a.t_star < b.t_star; });
    return stamps;
}

namespace {

// m-2 distinct frames strictly between lo and hi, sorted; fewer if the span
// is short (degenerate)
std::vector<int> interior_points(int lo, int hi, int m, nn::Rng& rng, bool& degenerate) {
    std::vector<int> cand;
    for (int t = lo + 1; t < hi; ++t) cand.push_back(t);
    const int want = m - 2;
    if (static_cast<int>(cand.size()) < want) degenerate = true;
    const int take = std::min<int>(want, cand.size());
    for (int i = 0; i < take; ++i) {
        const int j = rng.uniform_int(i, static_cast<int>(cand.size()) - 1);
        std::swap(cand[i], cand[j]);
    }
    cand.resize(take);
    std::sort(cand.begin(), cand.end());
    return cand;
}

}  // namespace

DriftResult drift_pairs(const Trajectory& traj, const EventStamp& stamp, const DriftConfig& cfg, nn::Rng& rng) {
    cfg.validate();
    const int last = static_cast<int>(traj.frames.size()) - 1;
    if (stamp.t_star < 0 || stamp.t_star > last) throw std::invalid_argument("stamp t_star outside trajectory");
    DriftResult r;

    // backward: one shared sequence t_b1 .. t_bm with t_bm = t_star
    const int t_b1 = std::max(stamp.t_star - cfg.t_b(stamp.item), 0);
    if (t_b1 < stamp.t_star) {
        std::vector<int> seq{t_b1};
        for (int t : interior_points(t_b1, stamp.t_star, cfg.m, rng, r.degenerate)) seq.push_back(t);
        seq.push_back(stamp.t_star);
        for (size_t i = 0; i + 1 < seq.size(); ++i) {
            r.pairs.push_back({seq[i], seq[i + 1], DriftKind::backward1});
        }
        for (size_t i = 0; i + 1 < seq.size(); ++i) r.pairs.push_back({seq[i], stamp.t_star, DriftKind::backward2});
    } else {
        r.degenerate = true;
    }

    // forward: t_star < t_f2 < ... < t_fm
    const int t_fm = std::min(stamp.t_star + cfg.t_f(stamp.item), last);
    if (t_fm > stamp.t_star) {
        std::vector<int> seq = interior_points(stamp.t_star, t_fm, cfg.m, rng, r.degenerate);
        seq.push_back(t_fm);
        for (int t : seq) r.pairs.push_back({stamp.t_star, t, DriftKind::forward});
    } else {
        r.degenerate = true;
    }
    return r;
}

std::string split_for(const std::string& traj_id) {
    return nn::hash_u64(std::hash<std::string>{}(traj_id)) % 10 == 0 ? "val" : "train";
}

namespace {

nlohmann::ordered_json triplet_json(const TripletRecord& t) {
    nlohmann::ordered_json j;
    j["traj_id"] = t.traj_id;
    j["current_frame"] = t.current_frame;
    j["goal_frame"] = t.goal_frame;
    j["instruction"] = t.instruction;
    j["drift_kind"] = t.drift_kind;
    j["item"] = t.item;
    j["split"] = t.split;
    return j;
}

}  // namespace

DatasetManifest build_triplets(const std::string& corpus_dir, const DriftConfig& cfg, DatasetVariant variant,
                               const std::string& out_dir) {
    cfg.validate();
    const expert::CorpusManifest corpus = expert::load_manifest(corpus_dir + "/manifest.json");
    std::filesystem::create_directories(out_dir);

    DatasetManifest m;
    m.m = cfg.m;
    m.seed = cfg.seed;
    m.variant = dataset_variant_name(variant);

    std::ofstream os(out_dir + "/triplets.jsonl", std::ios::trunc | std::ios::binary);
    if (!os) throw std::runtime_error("cannot write triplet dataset in " + out_dir);

    for (const auto& file : corpus.files) {
        const Trajectory traj = world::load_trajectory(corpus_dir + "/" + file);
        const std::string traj_id = std::filesystem::path(file).stem().string();
        const std::string split = split_for(traj_id);
        for (const auto& stamp : extract_events(traj, traj_id, default_items())) {
            // per-stamp stream so results are order-independent and stable
            nn::Rng rng(nn::Rng::mix(cfg.seed, nn::hash_combine(std::hash<std::string>{}(traj_id),
                                                                nn::hash_u64(stamp.t_star * 8191 +
                                                                             std::hash<std::string>{}(stamp.item)))));
            DriftResult dr = drift_pairs(traj, stamp, cfg, rng);
            m.stamps += 1;
            if (dr.degenerate) m.degenerate_stamps += 1;

            std::vector<DriftPair> pairs;
            for (const DriftPair& p : dr.pairs) {
                const bool backward = p.kind != DriftKind::forward;
                switch (variant) {
                    case DatasetVariant::normal: pairs.push_back(p); break;
                    case DatasetVariant::only_backward:
                        if (backward) pairs.push_back(p);
                        break;
                    case DatasetVariant::only_forward:
                        if (!backward) pairs.push_back(p);
                        break;
                    case DatasetVariant::fixed_timestep_backward:
                        if (!backward) pairs.push_back(p);
                        break;
                }
            }
            if (variant == DatasetVariant::fixed_timestep_backward) {
                const int t_b1 = std::max(stamp.t_star - cfg.t_b(stamp.item), 0);
                if (t_b1 < stamp.t_star) pairs.insert(pairs.begin(), {t_b1, stamp.t_star, DriftKind::backward1});
            }

            for (const DriftPair& p : pairs)
                for (const std::string& instr : expert::instructions_for(stamp.item)) {
                    TripletRecord t{traj_id, p.current_frame, p.goal_frame, instr, drift_kind_name(p.kind),
                                    stamp.item, split};
                    os << triplet_json(t).dump() << "\n";
                    m.triplets += 1;
                    m.counts[stamp.item + ":" + t.drift_kind] += 1;
                    (split == "train" ? m.train : m.val) += 1;
                }
        }
    }
    os.close();
    save_dataset_manifest(out_dir + "/manifest.json", m);
    return m;
}

std::vector<TripletRecord> load_triplets(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read triplet dataset " + path);
    std::vector<TripletRecord> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        out.push_back({j.at("traj_id").get<std::string>(), j.at("current_frame").get<int>(),
                       j.at("goal_frame").get<int>(), j.at("instruction").get<std::string>(),
                       j.at("drift_kind").get<std::string>(), j.at("item").get<std::string>(),
                       j.at("split").get<std::string>()});
    }
    return out;
}

void save_dataset_manifest(const std::string& path, const DatasetManifest& m) {
    nlohmann::ordered_json j;
    j["schema_version"] = m.schema_version;
    j["triplets"] = m.triplets;
    j["train"] = m.train;
    j["val"] = m.val;
    j["stamps"] = m.stamps;
    j["degenerate_stamps"] = m.degenerate_stamps;
    j["counts"] = m.counts;
    j["m"] = m.m;
    j["seed"] = m.seed;
    j["variant"] = m.variant;
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write dataset manifest " + path);
    os << j.dump(2) << "\n";
}

DatasetManifest load_dataset_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read dataset manifest " + path);
    nlohmann::json j;
    is >> j;
    DatasetManifest m;
    m.schema_version = j.at("schema_version").get<int>();
    m.triplets = j.at("triplets").get<int>();
    m.train = j.at("train").get<int>();
    m.val = j.at("val").get<int>();
    m.stamps = j.at("stamps").get<int>();
    m.degenerate_stamps = j.at("degenerate_stamps").get<int>();
    m.counts = j.at("counts").get<std::map<std::string, int>>();
    m.m = j.at("m").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.variant = j.at("variant").get<std::string>();
    return m;
}

std::vector<world::Observation> segment_ending_at(const Trajectory& traj, int end_frame) {
    if (end_frame < 0 || end_frame >= static_cast<int>(traj.frames.size()))
        throw std::invalid_argument("segment end frame outside trajectory");
    std::vector<world::Observation> seg;
    for (int t = end_frame - kSegmentFrames + 1; t <= end_frame; ++t)
        seg.push_back(traj.frames[std::max(t, 0)].obs);
    return seg;
}

std::vector<CvaeQuad> build_cvae_subset(const std::vector<TripletRecord>& dataset, const std::string& corpus_dir,
                                        const SegmentEncoder& encoder, double fraction, std::uint64_t seed) {
    if (fraction <= 0.0 || fraction > 1.0) throw std::invalid_argument("cvae subset fraction must be in (0,1]");
    // group indices by item, sample uniformly per item
    std::map<std::string, std::vector<size_t>> by_item;
    for (size_t i = 0; i < dataset.size(); ++i) by_item[dataset[i].item].push_back(i);

    std::vector<size_t> chosen;
    nn::Rng rng(nn::Rng::mix(seed, 0x5eed5eedULL));
    for (auto& [item, idx] : by_item) {
        const int take = static_cast<int>(std::lround(fraction * idx.size()));
        for (int i = 0; i < take; ++i) {
            const int j = rng.uniform_int(i, static_cast<int>(idx.size()) - 1);
            std::swap(idx[i], idx[j]);
            chosen.push_back(idx[i]);
        }
    }
    std::sort(chosen.begin(), chosen.end());

    std::unordered_map<std::string, Trajectory> cache;
    std::vector<CvaeQuad> quads;
    for (size_t i : chosen) {
        const TripletRecord& t = dataset[i];
        auto it = cache.find(t.traj_id);
        if (it == cache.end())
            it = cache.emplace(t.traj_id, world::load_trajectory(corpus_dir + "/" + t.traj_id + ".jsonl")).first;
        CvaeQuad q;
        q.triplet = t;
        q.gt_embed = encoder(segment_ending_at(it->second, t.goal_frame));
        quads.push_back(std::move(q));
    }
    return quads;
}

}  // namespace voxdream::drift
