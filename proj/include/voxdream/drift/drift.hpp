#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "voxdream/nn/rng.hpp"
#include "voxdream/world/trajectory.hpp"

namespace voxdream::drift {

// dataset event items: concrete pickups/crafts plus expert-task progress labels
const std::set<std::string>& default_items();

struct EventStamp {
    std::string traj_id;
    int t_star = 0;
    std::string item;
    std::string kind;
};

struct DriftConfig {
    std::map<std::string, int> backward_span;  // per item; missing -> default_span
    std::map<std::string, int> forward_span;
    int default_span = 25;
    int m = 4;  // points per drift sequence
    std::uint64_t seed = 0;

    int t_b(const std::string& item) const;
    int t_f(const std::string& item) const;
    void validate() const;  // m >= 2, spans >= m-1
};
DriftConfig default_drift_config();

enum class DriftKind { backward1 = 0, backward2, forward };
const char* drift_kind_name(DriftKind k);
std::optional<DriftKind> drift_kind_from_name(const std::string& s);

struct DriftPair {
    int current_frame = 0;
    int goal_frame = 0;
    DriftKind kind = DriftKind::backward1;
};

struct DriftResult {
    std::vector<DriftPair> pairs;
    bool degenerate = false;  // some span was too short for m-2 interior points
};

enum class DatasetVariant { normal = 0, fixed_timestep_backward, only_backward, only_forward };
const char* dataset_variant_name(DatasetVariant v);
std::optional<DatasetVariant> dataset_variant_from_name(const std::string& s);

struct TripletRecord {
    std::string traj_id;
    int current_frame = 0;
    int goal_frame = 0;
    std::string instruction;
    std::string drift_kind;
    std::string item;
    std::string split;  // train | val
};

struct DatasetManifest {
    int schema_version = 1;
    int triplets = 0;
    int train = 0;
    int val = 0;
    int stamps = 0;
    int degenerate_stamps = 0;
    std::map<std::string, int> counts;  // "item:drift_kind" -> triplet count
    int m = 4;
    std::uint64_t seed = 0;
    std::string variant;
};

// one stamp per matching logged event, in frame order; synthesizes periodic
// progress stamps for the explore task, whose success is movement itself
std::vector<EventStamp> extract_events(const world::Trajectory& traj, const std::string& traj_id,
                                       const std::set<std::string>& selected_items);

// Backward Drift 1 (consecutive pairs), Backward Drift 2 (pairs to t*), and
// Forward Drift from one shared interior draw per direction
DriftResult drift_pairs(const world::Trajectory& traj, const EventStamp& stamp, const DriftConfig& cfg,
                        nn::Rng& rng);

// 90/10 train/val split by trajectory id hash
std::string split_for(const std::string& traj_id);

// reads every trajectory in corpus_dir, writes triplets.jsonl + manifest.json
// into out_dir; returns the manifest
DatasetManifest build_triplets(const std::string& corpus_dir, const DriftConfig& cfg, DatasetVariant variant,
                               const std::string& out_dir);

std::vector<TripletRecord> load_triplets(const std::string& path);
void save_dataset_manifest(const std::string& path, const DatasetManifest& m);
DatasetManifest load_dataset_manifest(const std::string& path);

struct CvaeQuad {
    TripletRecord triplet;
    std::vector<double> gt_embed;  // unit norm
};

// encodes the 16-frame segment ending at the goal frame (padded by repeating
// frame 0); fraction sampled uniformly per event item
using SegmentEncoder = std::function<std::vector<double>(const std::vector<world::Observation>&)>;
std::vector<CvaeQuad> build_cvae_subset(const std::vector<TripletRecord>& dataset, const std::string& corpus_dir,
                                        const SegmentEncoder& encoder, double fraction, std::uint64_t seed);

constexpr int kSegmentFrames = 16;

// the 16-frame observation segment ending at end_frame, front-padded with frame 0
std::vector<world::Observation> segment_ending_at(const world::Trajectory& traj, int end_frame);

}  // namespace voxdream::drift
