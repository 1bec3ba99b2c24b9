#pragma once

#include <map>
#include <string>
#include <vector>

#include "voxdream/nn/graph.hpp"
#include "voxdream/nn/train.hpp"
#include "voxdream/world/world.hpp"

namespace voxdream::embed {

struct EmbedConfig {
    int d_e = 32;
    int hidden = 64;
    nn::TrainConfig train;
};

// contrastive dual encoder: instructions and 16-frame observation segments
// share one unit-sphere embedding space
class DualEncoder {
  public:
    DualEncoder(const EmbedConfig& cfg, std::vector<std::string> vocab, nn::Rng& rng);

    std::vector<double> encode_text(const std::string& y) const;
    std::vector<double> encode_segment(const std::vector<world::Observation>& frames) const;

    // graph-building variants used by training
    nn::Node* text_node(nn::Graph& g, const std::string& y) const;
    nn::Node* segment_node(nn::Graph& g, const std::vector<world::Observation>& frames) const;
    nn::Node* log_temp_node(nn::Graph& g) const;

    double temperature() const;
    int token_id(const std::string& word) const;  // throws on unknown token

    int d_e() const { return cfg_.d_e; }
    const std::vector<std::string>& vocab() const { return vocab_; }
    nn::ParamStore& params() { return ps_; }
    const nn::ParamStore& params() const { return ps_; }

  private:
    EmbedConfig cfg_;
    std::vector<std::string> vocab_;
    std::map<std::string, int> word_id_;
    mutable nn::ParamStore ps_;
};

constexpr int kSegmentLen = 16;

struct ContrastiveExample {
    std::vector<world::Observation> frames;  // exactly 16
    std::string instruction;
};

// symmetric InfoNCE over cosine-similarity logits scaled by 1/temperature;
// rows = segments, cols = texts, positives on the diagonal
nn::Node* contrastive_loss(nn::Graph& g, const std::vector<nn::Node*>& seg_embeds,
                             const std::vector<nn::Node*>& text_embeds, nn::Node* log_temp);

// in-batch-negative training; batches always contain >= 2 distinct instructions
nn::LossCurve train_contrastive(DualEncoder& enc, const std::vector<ContrastiveExample>& train_set,
                                const std::vector<ContrastiveExample>& val_set, const nn::TrainConfig& cfg);

// top-1 text -> segment retrieval over one segment per distinct instruction
double retrieval_accuracy(const DualEncoder& enc, const std::vector<ContrastiveExample>& examples,
                          std::uint64_t seed, int n_queries = 50);

// ---- multi-modal memory baseline ----

struct MemoryEntry {
    std::string instruction;
    world::Observation anchor;
    std::vector<double> segment_embed;  // unit norm
};

struct MemoryBank {
    std::vector<MemoryEntry> entries;
    std::map<std::string, std::vector<int>> buckets;  // instruction -> entry indices

    void add(MemoryEntry e);
};

// two-stage retrieval: nearest bucket key by text cosine, then nearest anchor
// within the bucket by still-stack segment cosine; ties -> lowest entry index
const MemoryEntry& memory_retrieve(const MemoryBank& bank, const DualEncoder& enc, const std::string& y,
                                   const world::Observation& o_t);

// builds a bank from expert corpus segments (per-instruction buckets)
MemoryBank build_memory_bank(const std::string& corpus_dir, const DualEncoder& enc, int per_instruction,
                             std::uint64_t seed);

void save_memory_bank(const std::string& path, const MemoryBank& bank, int d_e);
MemoryBank load_memory_bank(const std::string& path);

double cosine(const std::vector<double>& a, const std::vector<double>& b);

// still-stack: one observation repeated to a 16-frame segment
std::vector<world::Observation> still_stack(const world::Observation& o);

}  // namespace voxdream::embed
