// voxdream: command-line entry point for the whole pipeline.
// exit codes: 0 success, 2 config error, 3 missing model/artifact, 4 gate failure.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "voxdream/coi/coi.hpp"
#include "voxdream/drift/drift.hpp"
#include "voxdream/eval/eval.hpp"
#include "voxdream/nn/checkpoint.hpp"

namespace fs = std::filesystem;
using namespace voxdream;

namespace {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MissingModel : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct GateFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Cfg {
    std::map<std::string, std::string> kv;

    bool has(const std::string& k) const { return kv.count(k) != 0; }
    std::string str(const std::string& k, const std::string& dflt) const {
        auto it = kv.find(k);
        return it == kv.end() ? dflt : it->second;
    }
    int num(const std::string& k, int dflt) const {
        auto it = kv.find(k);
        if (it == kv.end()) return dflt;
        try {
            size_t pos = 0;
            const int v = std::stoi(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument(k);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + k + "' is not an integer: " + it->second);
        }
    }
    double real(const std::string& k, double dflt) const {
        auto it = kv.find(k);
        if (it == kv.end()) return dflt;
        try {
            size_t pos = 0;
            const double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument(k);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + k + "' is not a number: " + it->second);
        }
    }

    std::string hash() const {
        std::string all;
        for (const auto& [k, v] : kv) all += k + "=" + v + "\n";
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(std::hash<std::string>{}(all)));
        return buf;
    }
};

Cfg load_config(const std::string& path, std::uint64_t seed_flag, bool seed_set) {
    Cfg cfg;
    if (!path.empty()) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot read config file " + path);
        std::string line;
        int ln = 0;
        while (std::getline(f, line)) {
            ++ln;
            const auto hashpos = line.find('#');
            if (hashpos != std::string::npos) line = line.substr(0, hashpos);
            const auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos) continue;
            const auto last = line.find_last_not_of(" \t\r");
            line = line.substr(first, last - first + 1);
            const auto eq = line.find('=');
            if (eq == std::string::npos || eq == 0)
                throw ConfigError(path + ":" + std::to_string(ln) + ": expected key=value");
            cfg.kv[line.substr(0, eq)] = line.substr(eq + 1);
        }
    }
    if (seed_set) cfg.kv["seed"] = std::to_string(seed_flag);
    return cfg;
}

// ---- model construction (shapes derive from the config; init overwritten on load) ----

std::unique_ptr<embed::DualEncoder> make_encoder(const Cfg& c) {
    embed::EmbedConfig ec;
    ec.d_e = c.num("d_e", 32);
    ec.hidden = c.num("embed.hidden", 64);
    nn::Rng rng(nn::Rng::mix(c.num("seed", 0), 0xe3bedull));
    return std::make_unique<embed::DualEncoder>(ec, expert::instruction_vocabulary(), rng);
}

std::unique_ptr<imaginator::Imaginator> make_imaginator(const Cfg& c) {
    imaginator::ImaginatorConfig ic;
    ic.k = c.num("imaginator.k", 8);
    ic.model_dim = c.num("imaginator.model_dim", 64);
    ic.heads = c.num("imaginator.heads", 4);
    ic.ff = c.num("imaginator.ff", 128);
    ic.max_seq = c.num("imaginator.max_seq", 32);
    ic.q_queries = c.num("imaginator.q_queries", 8);
    ic.d_f = c.num("imaginator.d_f", 32);
    ic.base = c.num("imaginator.base", 16);
    ic.S = c.num("imaginator.S", 50);
    ic.sampler_steps = c.num("sampler_steps", 50);
    ic.lambda_llm = c.real("imaginator.lambda_llm", 1.0);
    nn::Rng rng(nn::Rng::mix(c.num("seed", 0), 0x13a91ull));
    return std::make_unique<imaginator::Imaginator>(ic, expert::instruction_vocabulary(), rng);
}

std::unique_ptr<prompt::Cvae> make_cvae(const Cfg& c) {
    prompt::CvaeConfig cc;
    cc.d_e = c.num("d_e", 32);
    cc.d_z = c.num("cvae.d_z", 16);
    cc.hidden = c.num("cvae.hidden", 64);
    cc.beta = c.real("cvae.beta", 0.001);
    cc.epochs = c.num("cvae.epochs", 150);
    cc.batch = c.num("cvae.batch", 64);
    cc.patience = c.num("cvae.patience", 10);
    cc.learning_rate = c.real("cvae.learning_rate", 1e-4);
    cc.seed = c.num("seed", 0);
    nn::Rng rng(nn::Rng::mix(c.num("seed", 0), 0xc4aeull));
    return std::make_unique<prompt::Cvae>(cc, rng);
}

std::unique_ptr<policy::PolicyNet> make_policy(const Cfg& c) {
    policy::PolicyConfig pc;
    pc.d_p = c.num("policy.d_p", 64);
    pc.context_T = c.num("policy.context_T", 32);
    pc.heads = c.num("policy.heads", 4);
    pc.ff = c.num("policy.ff", 128);
    pc.conv_base = c.num("policy.conv_base", 8);
    pc.hidden = c.num("policy.hidden", 64);
    pc.d_e = c.num("d_e", 32);
    pc.seed = c.num("seed", 0);
    nn::Rng rng(nn::Rng::mix(c.num("seed", 0), 0x90119ull));
    return std::make_unique<policy::PolicyNet>(pc, rng);
}

void require_checkpoint(const std::string& path) {
    if (!nn::checkpoint_exists(path)) throw MissingModel("missing model checkpoint " + path + " (train it first)");
}

void require_dir(const std::string& path, const std::string& hint) {
    if (!fs::exists(path)) throw MissingModel("missing " + path + " (" + hint + ")");
}

struct Paths {
    std::string out;
    std::string corpus() const { return out + "/corpus"; }
    std::string dataset(const std::string& variant) const { return out + "/dataset/" + variant; }
    std::string models() const { return out + "/models"; }
    std::string runs() const { return out + "/runs"; }
    std::string reports() const { return out + "/reports"; }
    std::string ck(const std::string& model) const { return models() + "/" + model + ".vdck"; }
};

// all trained models plus the memory bank, loaded from checkpoints
struct LoadedModels {
    std::unique_ptr<embed::DualEncoder> enc;
    std::unique_ptr<imaginator::Imaginator> im;
    std::unique_ptr<prompt::Cvae> cvae;
    std::unique_ptr<policy::PolicyNet> pol;
    std::unique_ptr<embed::MemoryBank> bank;

    coi::Models models(coi::Mode mode) const {
        coi::Models m;
        m.imaginator = im.get();
        m.embedder = enc.get();
        m.cvae = cvae.get();
        m.policy = pol.get();
        if (mode == coi::Mode::memory) m.memory = bank.get();
        return m;
    }
};

LoadedModels load_models(const Paths& p, const Cfg& c, bool need_memory) {
    LoadedModels lm;
    for (const char* name : {"embed", "imaginator", "cvae", "policy"}) require_checkpoint(p.ck(name));
    lm.enc = make_encoder(c);
    nn::load_checkpoint(p.ck("embed"), "embed", lm.enc->params());
    lm.im = make_imaginator(c);
    nn::load_checkpoint(p.ck("imaginator"), "imaginator", lm.im->params());
    lm.cvae = make_cvae(c);
    nn::load_checkpoint(p.ck("cvae"), "cvae", lm.cvae->params());
    lm.pol = make_policy(c);
    nn::load_checkpoint(p.ck("policy"), "policy", lm.pol->params());
    if (need_memory) {
        const std::string bank_path = p.models() + "/memory.json";
        if (fs::exists(bank_path)) {
            lm.bank = std::make_unique<embed::MemoryBank>(embed::load_memory_bank(bank_path));
        } else {
            require_dir(p.corpus(), "run `collect` first");
            lm.bank = std::make_unique<embed::MemoryBank>(embed::build_memory_bank(
                p.corpus(), *lm.enc, c.num("memory.per_instruction", 4), c.num("seed", 0)));
            embed::save_memory_bank(bank_path, *lm.bank, lm.enc->d_e());
        }
    }
    return lm;
}

coi::CoiConfig coi_config(const Cfg& c, coi::Mode mode) {
    coi::CoiConfig cfg;
    cfg.imagination_interval = c.num("imagination_interval", 25);
    cfg.mode = mode;
    cfg.guidance.lambda = c.real("lambda", 6.0);
    cfg.guidance.temperature = c.real("temperature", 1.0);
    cfg.refresh_on_switch = c.num("refresh_on_switch", 1) != 0;
    cfg.prompt_mean_mode = c.num("prompt_mean_mode", 1) != 0;
    cfg.sampler_steps = c.num("sampler_steps", 50);
    const std::string strat = c.str("strategy", "full");
    if (strat == "full") cfg.strategy = prompt::PromptStrategy::full;
    else if (strat == "only_gi") cfg.strategy = prompt::PromptStrategy::only_gi;
    else if (strat == "wo_gi") cfg.strategy = prompt::PromptStrategy::wo_gi;
    else throw ConfigError("unknown prompt strategy: " + strat);
    return cfg;
}

coi::Mode parse_mode(const std::string& s) {
    auto m = coi::mode_from_name(s);
    if (!m) throw ConfigError("unknown mode: " + s);
    return *m;
}

// schedule string: segments separated by '|'; each "instruction" (final) or
// "instruction @ frame:N" / "instruction @ depth:N"
coi::Schedule parse_schedule(const std::string& s, int frame_limit) {
    coi::Schedule sched;
    sched.frame_limit = frame_limit;
    std::stringstream ss(s);
    std::string seg;
    while (std::getline(ss, seg, '|')) {
        coi::ScheduleSegment out;
        const auto at = seg.find('@');
        std::string instr = seg.substr(0, at == std::string::npos ? seg.size() : at);
        const auto f = instr.find_first_not_of(' ');
        const auto l = instr.find_last_not_of(' ');
        if (f == std::string::npos) throw ConfigError("empty instruction in schedule: " + s);
        out.instruction = instr.substr(f, l - f + 1);
        if (at != std::string::npos) {
            std::string cond = seg.substr(at + 1);
            cond.erase(std::remove(cond.begin(), cond.end(), ' '), cond.end());
            const auto colon = cond.find(':');
            if (colon == std::string::npos) throw ConfigError("bad switch condition (want kind:N): " + cond);
            const std::string kind = cond.substr(0, colon);
            coi::SwitchCondition sc;
            if (kind == "frame") sc.kind = coi::SwitchCondition::Kind::frame;
            else if (kind == "depth") sc.kind = coi::SwitchCondition::Kind::depth;
            else throw ConfigError("bad switch condition kind: " + kind);
            try {
                sc.value = std::stoi(cond.substr(colon + 1));
            } catch (const std::exception&) {
                throw ConfigError("bad switch condition value: " + cond);
            }
            out.until = sc;
        }
        sched.segments.push_back(std::move(out));
    }
    try {
        sched.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("invalid schedule: ") + e.what());
    }
    return sched;
}

nn::TrainConfig train_config(const Cfg& c, const std::string& prefix, int dflt_iters, double dflt_lr) {
    nn::TrainConfig tc;
    tc.learning_rate = c.real(prefix + ".learning_rate", dflt_lr);
    tc.weight_decay = c.real(prefix + ".weight_decay", 0.01);
    tc.batch_size = c.num(prefix + ".batch_size", 8);
    tc.iterations = c.num(prefix + ".iterations", dflt_iters);
    tc.seed = c.num("seed", 0);
    return tc;
}

std::vector<world::Trajectory> load_corpus_trajectories(const Paths& p, int limit) {
    require_dir(p.corpus() + "/manifest.json", "run `collect` first");
    const auto man = expert::load_manifest(p.corpus() + "/manifest.json");
    std::vector<world::Trajectory> out;
    for (const auto& f : man.files) {
        if (limit > 0 && static_cast<int>(out.size()) >= limit) break;
        out.push_back(world::load_trajectory(p.corpus() + "/" + f));
    }
    return out;
}

// contrastive pairs from the triplet dataset: instruction vs the 16-frame
// segment ending at the goal frame
std::vector<embed::ContrastiveExample> contrastive_from_triplets(const std::vector<drift::TripletRecord>& recs,
                                                                 const std::string& corpus_dir,
                                                                 const std::string& split, int limit) {
    std::map<std::string, world::Trajectory> cache;
    std::vector<embed::ContrastiveExample> out;
    for (const auto& r : recs) {
        if (r.split != split) continue;
        if (limit > 0 && static_cast<int>(out.size()) >= limit) break;
        auto it = cache.find(r.traj_id);
        if (it == cache.end())
            it = cache.emplace(r.traj_id, world::load_trajectory(corpus_dir + "/" + r.traj_id + ".jsonl")).first;
        out.push_back({drift::segment_ending_at(it->second, r.goal_frame), r.instruction});
    }
    return out;
}

std::string variant_dataset(const Paths& p, const Cfg& c) {
    const std::string v = c.str("variant", "normal");
    if (!drift::dataset_variant_from_name(v)) throw ConfigError("unknown dataset variant: " + v);
    return p.dataset(v);
}

// ---- subcommand bodies ----

int cmd_collect(const Paths& p, const Cfg& c) {
    fs::create_directories(p.corpus());
    const auto man = expert::collect_corpus(expert::all_tasks(), c.num("seeds_per_task", 12), p.corpus(),
                                            c.num("seed", 0), c.num("collect.min_count", 50));
    std::printf("collected %d episodes across %zu tasks into %s\n", man.episodes, man.per_task.size(),
                p.corpus().c_str());
    for (const auto& d : man.deficiencies) std::printf("  deficiency: %s\n", d.c_str());
    return 0;
}

int cmd_build_dataset(const Paths& p, const Cfg& c) {
    require_dir(p.corpus() + "/manifest.json", "run `collect` first");
    const std::string v = c.str("variant", "normal");
    const auto variant = drift::dataset_variant_from_name(v);
    if (!variant) throw ConfigError("unknown dataset variant: " + v);
    drift::DriftConfig dc = drift::default_drift_config();
    dc.m = c.num("drift.m", dc.m);
    dc.default_span = c.num("drift.default_span", dc.default_span);
    dc.seed = c.num("seed", 0);
    dc.validate();
    const auto man = drift::build_triplets(p.corpus(), dc, *variant, p.dataset(v));
    std::printf("built %d triplets (%d train / %d val) from %d stamps into %s\n", man.triplets, man.train, man.val,
                man.stamps, p.dataset(v).c_str());
    return 0;
}

int cmd_train_embed(const Paths& p, const Cfg& c) {
    const std::string ds = variant_dataset(p, c);
    require_dir(ds + "/triplets.jsonl", "run `build-dataset` first");
    const auto recs = drift::load_triplets(ds + "/triplets.jsonl");
    const auto train_set = contrastive_from_triplets(recs, p.corpus(), "train", c.num("embed.train_limit", 600));
    const auto val_set = contrastive_from_triplets(recs, p.corpus(), "val", c.num("embed.val_limit", 120));
    if (train_set.empty() || val_set.empty()) throw ConfigError("dataset has too few triplets to train the encoder");
    auto enc = make_encoder(c);
    const auto curve = embed::train_contrastive(*enc, train_set, val_set, train_config(c, "embed", 300, 3e-3));
    const double acc = embed::retrieval_accuracy(*enc, val_set, c.num("seed", 0));
    fs::create_directories(p.models());
    nn::save_checkpoint(p.ck("embed"), "embed", c.num("seed", 0), c.hash(), enc->params());
    std::printf("embed: final train loss %.4f, val retrieval top-1 %.3f -> %s\n",
                curve.train.empty() ? 0.0 : curve.train.back(), acc, p.ck("embed").c_str());
    return 0;
}

int cmd_train_imaginator(const Paths& p, const Cfg& c) {
    const std::string ds = variant_dataset(p, c);
    require_dir(ds + "/triplets.jsonl", "run `build-dataset` first");
    auto train_set = imaginator::load_dream_samples(ds, p.corpus(), "train", c.num("imaginator.train_limit", 400));
    auto val_set = imaginator::load_dream_samples(ds, p.corpus(), "val", c.num("imaginator.val_limit", 60));
    if (train_set.empty() || val_set.empty()) throw ConfigError("dataset has too few triplets to train the imaginator");
    auto im = make_imaginator(c);
    const auto res = imaginator::train_imaginator(*im, train_set, val_set, train_config(c, "imaginator", 300, 1e-3));
    fs::create_directories(p.models());
    nn::save_checkpoint(p.ck("imaginator"), "imaginator", c.num("seed", 0), c.hash(), im->params());
    std::printf("imaginator: val dream loss %.4f -> %.4f -> %s\n", res.initial_val_loss, res.final_val_loss,
                p.ck("imaginator").c_str());
    return 0;
}

int cmd_train_cvae(const Paths& p, const Cfg& c) {
    const std::string ds = variant_dataset(p, c);
    require_dir(ds + "/triplets.jsonl", "run `build-dataset` first");
    require_checkpoint(p.ck("embed"));
    auto enc = make_encoder(c);
    nn::load_checkpoint(p.ck("embed"), "embed", enc->params());
    const auto recs = drift::load_triplets(ds + "/triplets.jsonl");
    auto encoder = [&](const std::vector<world::Observation>& seg) { return enc->encode_segment(seg); };
    const auto quads =
        drift::build_cvae_subset(recs, p.corpus(), encoder, c.real("cvae.fraction", 0.25), c.num("seed", 0));
    const auto examples = prompt::make_cvae_examples(quads, p.corpus(), *enc);
    std::vector<prompt::CvaeExample> train_set, val_set;
    for (size_t i = 0; i < examples.size(); ++i)
        (quads[i].triplet.split == "val" ? val_set : train_set).push_back(examples[i]);
    if (train_set.empty() || val_set.empty()) throw ConfigError("cvae subset has too few quads");
    auto cvae = make_cvae(c);
    const auto res = prompt::train_cvae(*cvae, train_set, val_set);
    const double cos = prompt::reconstruction_cosine(*cvae, val_set, prompt::PromptStrategy::full);
    fs::create_directories(p.models());
    nn::save_checkpoint(p.ck("cvae"), "cvae", c.num("seed", 0), c.hash(), cvae->params());
    std::printf("cvae: stopped at epoch %d, val elbo %.4f, val cosine %.3f -> %s\n", res.stopped_epoch,
                res.validation_elbo.empty() ? 0.0 : res.validation_elbo.back(), cos, p.ck("cvae").c_str());
    return 0;
}

int cmd_train_policy(const Paths& p, const Cfg& c) {
    require_checkpoint(p.ck("embed"));
    auto enc = make_encoder(c);
    nn::load_checkpoint(p.ck("embed"), "embed", enc->params());
    const auto corpus = load_corpus_trajectories(p, c.num("policy.corpus_limit", 0));
    policy::BcConfig bc;
    bc.iterations = c.num("policy.iterations", 400);
    bc.batch_windows = c.num("policy.batch_windows", 4);
    bc.learning_rate = c.real("policy.learning_rate", 1e-3);
    bc.prompt_dropout = c.real("policy.prompt_dropout", 0.1);
    bc.delta_min = c.num("policy.delta_min", 16);
    bc.delta_max = c.num("policy.delta_max", 200);
    bc.seed = c.num("seed", 0);
    auto pol = make_policy(c);
    const auto res = policy::train_bc_hindsight(*pol, corpus, *enc, bc);
    fs::create_directories(p.models());
    nn::save_checkpoint(p.ck("policy"), "policy", c.num("seed", 0), c.hash(), pol->params());
    std::printf("policy: val action accuracy %.3f (majority %.3f) -> %s\n", res.val_accuracy, res.majority_baseline,
                p.ck("policy").c_str());
    return 0;
}

int cmd_run(const Paths& p, const Cfg& c, const std::string& mode_s, const std::string& schedule_s,
            const std::string& task_s) {
    const coi::Mode mode = parse_mode(mode_s);
    const auto lm = load_models(p, c, mode == coi::Mode::memory);
    const expert::TaskSpec& task = expert::task_by_name(task_s);
    const coi::Schedule sched = parse_schedule(schedule_s, c.num("frame_limit", 600));
    const auto rec = coi::run_episode(lm.models(mode), task, sched, coi_config(c, mode), c.num("seed", 0));
    fs::create_directories(p.runs());
    const std::string stem = p.runs() + "/ep_" + mode_s + "_" + std::to_string(c.num("seed", 0));
    coi::save_episode(stem, rec);
    const auto m = eval::compute_metrics(rec);
    std::printf("episode %s: %zu frames, %zu imagination ticks, travel %.2f, dig depth %.0f -> %s.jsonl\n",
                rec.task.c_str(), rec.trajectory.frames.size(), rec.tick_frames.size(), m.travel, m.dig_depth,
                stem.c_str());
    for (const auto& [item, n] : m.inventory_max) std::printf("  max %s: %d\n", item.c_str(), n);
    return 0;
}

std::vector<coi::Mode> parse_modes(const Cfg& c) {
    std::vector<coi::Mode> modes;
    std::stringstream ss(c.str("modes", "coi,wo_coi,random_noise"));
    std::string tok;
    while (std::getline(ss, tok, ',')) modes.push_back(parse_mode(tok));
    if (modes.empty()) throw ConfigError("empty mode list");
    return modes;
}

int cmd_eval(const Paths& p, const Cfg& c, bool programmatic, bool gate) {
    const auto modes = parse_modes(c);
    bool memory = false;
    for (auto m : modes) memory |= m == coi::Mode::memory;
    const auto lm = load_models(p, c, memory);
    std::vector<eval::AgentSpec> agents;
    for (auto m : modes) agents.push_back({coi::mode_name(m), lm.models(m), coi_config(c, m)});

    eval::SuiteReport rep;
    if (programmatic) {
        rep = eval::run_programmatic(agents, c.num("n_trials", 10), c.num("seed", 0), c.num("frame_limit", 600));
    } else {
        eval::SwitchOptions opt;
        opt.frame_limit = c.num("frame_limit", 600);
        opt.dig_frame_limit = c.num("dig_frame_limit", 2400);
        opt.tower_threshold = c.num("tower_threshold", 5);
        opt.dig_depth_switch = c.num("dig_depth_switch", 8);
        rep = eval::run_switch(agents, c.num("n_trials", 10), c.num("seed", 0), opt);
    }
    for (const auto& [k, v] : c.kv) rep.config_echo[k] = v;
    fs::create_directories(p.reports());
    const std::string base = p.reports() + "/" + rep.suite;
    eval::emit_report(rep, base + ".csv", eval::ReportFormat::csv);
    eval::emit_report(rep, base + ".txt", eval::ReportFormat::structured);
    std::printf("%s suite: %zu cells -> %s.csv\n", rep.suite.c_str(), rep.cells.size(), base.c_str());
    for (const auto& cell : rep.cells)
        std::printf("  %s / %s [%s] mean %.3f ci [%.3f, %.3f]\n", cell.task.c_str(), cell.label.c_str(),
                    cell.metric.c_str(), cell.ci.mean, cell.ci.lo, cell.ci.hi);

    if (gate) {
        auto find_cell = [&](const std::string& task, const std::string& label) -> const eval::CellStat* {
            for (const auto& cell : rep.cells)
                if (cell.task == task && cell.label == label) return &cell;
            return nullptr;
        };
        if (programmatic) {
            const auto* a = find_cell("collect_dirt", "coi");
            const auto* b = find_cell("collect_dirt", "random_noise");
            if (!a || !b) throw ConfigError("gating needs both coi and random_noise in --config modes");
            if (!(a->ci.mean > b->ci.mean && a->ci.lo > b->ci.hi))
                throw GateFailure("collect-dirt gate: coi CI does not clear random_noise CI");
        } else {
            const auto* a = find_cell("mine_horizontally", "coi");
            const auto* b = find_cell("mine_horizontally", "wo_coi");
            if (!a || !b) throw ConfigError("gating needs both coi and wo_coi in --config modes");
            if (!(a->success_rate >= b->success_rate))
                throw GateFailure("dig->mine gate: coi success below wo_coi");
        }
        std::printf("gate passed\n");
    }
    return 0;
}

// ablation matrix file: one report per non-empty line; each line holds
// whitespace-separated agent tokens "mode[:key=value...]", e.g.
//   coi:lambda=0 coi:lambda=2 coi:lambda=6
//   coi coi:strategy=only_gi coi:strategy=wo_gi
// a token may override model_dir to point at variant-trained checkpoints.
int cmd_ablate(const Paths& p, const Cfg& c, const std::string& matrix_path) {
    std::ifstream f(matrix_path);
    if (!f) throw ConfigError("cannot read ablation matrix " + matrix_path);

    // cache of model sets per directory; tokens without model_dir share p.models()
    std::map<std::string, std::unique_ptr<LoadedModels>> cache;
    auto models_at = [&](const std::string& dir) -> LoadedModels& {
        auto it = cache.find(dir);
        if (it == cache.end()) {
            Paths alt;
            alt.out = dir;
            it = cache.emplace(dir, std::make_unique<LoadedModels>(load_models(alt, c, false))).first;
        }
        return *it->second;
    };

    std::vector<std::vector<eval::AgentSpec>> matrix;
    std::string line;
    int ln = 0;
    while (std::getline(f, line)) {
        ++ln;
        const auto hashpos = line.find('#');
        if (hashpos != std::string::npos) line = line.substr(0, hashpos);
        std::stringstream ss(line);
        std::string tok;
        std::vector<eval::AgentSpec> row;
        while (ss >> tok) {
            Cfg local = c;
            std::string mode_s;
            std::string dir = p.out;
            std::stringstream ts(tok);
            std::string part;
            bool first = true;
            while (std::getline(ts, part, ':')) {
                if (first) {
                    mode_s = part;
                    first = false;
                    continue;
                }
                const auto eq = part.find('=');
                if (eq == std::string::npos)
                    throw ConfigError(matrix_path + ":" + std::to_string(ln) + ": expected key=value in " + tok);
                const std::string key = part.substr(0, eq), val = part.substr(eq + 1);
                if (key == "model_dir") dir = val;
                else local.kv[key] = val;
            }
            const coi::Mode mode = parse_mode(mode_s);
            if (mode == coi::Mode::memory)
                throw ConfigError("memory mode is not supported in ablation matrices");
            row.push_back({tok, models_at(dir).models(mode), coi_config(local, mode)});
        }
        if (!row.empty()) matrix.push_back(std::move(row));
    }
    if (matrix.empty()) throw ConfigError("ablation matrix " + matrix_path + " has no rows");

    const auto reports =
        eval::run_ablations(matrix, c.num("n_trials", 10), c.num("seed", 0), c.num("frame_limit", 600));
    fs::create_directories(p.reports());
    for (const auto& rep : reports) {
        const std::string base = p.reports() + "/" + rep.suite;
        eval::emit_report(rep, base + ".csv", eval::ReportFormat::csv);
        std::printf("%s: %zu cells -> %s.csv\n", rep.suite.c_str(), rep.cells.size(), base.c_str());
    }
    return 0;
}

int cmd_report(const std::string& in, const std::string& out, const std::string& format) {
    if (!fs::exists(in)) throw MissingModel("missing report " + in);
    const auto rep = eval::parse_report_csv(in);
    if (format == "csv") eval::emit_report(rep, out, eval::ReportFormat::csv);
    else if (format == "structured") eval::emit_report(rep, out, eval::ReportFormat::structured);
    else throw ConfigError("unknown report format: " + format);
    std::printf("re-emitted %zu cells -> %s\n", rep.cells.size(), out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"voxdream: imagination-guided instruction-following on a voxel gridworld"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand

    std::string config_path, out_dir = "out";
    std::uint64_t seed_flag = 0;
    app.add_option("--config", config_path, "flat key=value config file");
    auto* seed_opt = app.add_option("--seed", seed_flag, "master seed (overrides config)");
    app.add_option("--out-dir", out_dir, "artifact root directory");

    auto* collect = app.add_subcommand("collect", "record the scripted-expert corpus");
    auto* build = app.add_subcommand("build-dataset", "derive goal-drift triplets from the corpus");
    std::string variant = "normal";
    build->add_option("--variant", variant, "normal|fixed_timestep_backward|only_backward|only_forward");
    auto* tr_embed = app.add_subcommand("train-embed", "train the contrastive dual encoder");
    auto* tr_imag = app.add_subcommand("train-imaginator", "train the goal-token LM + diffusion imaginator");
    auto* tr_cvae = app.add_subcommand("train-cvae", "train the prompt CVAE");
    auto* tr_pol = app.add_subcommand("train-policy", "train the guided policy by hindsight BC");
    auto* run = app.add_subcommand("run", "run one episode");
    std::string mode_s = "coi", schedule_s = "collect dirt blocks", task_s = "collect_dirt";
    run->add_option("--mode", mode_s, "coi|wo_coi|random_noise|memory");
    run->add_option("--schedule", schedule_s, "segments 'instr[@frame:N|@depth:N]' joined by '|'");
    run->add_option("--task", task_s, "world/task spec name");
    auto* ev_prog = app.add_subcommand("eval-programmatic", "five-task metric suite");
    auto* ev_switch = app.add_subcommand("eval-switch", "three command-switching success suites");
    bool gate = false;
    ev_prog->add_flag("--gate", gate, "exit 4 unless coi beats random_noise with clear CIs");
    ev_switch->add_flag("--gate", gate, "exit 4 unless coi >= wo_coi on dig->mine");
    auto* ablate = app.add_subcommand("ablate", "run an ablation matrix");
    std::string matrix_path;
    ablate->add_option("matrix", matrix_path, "matrix file, one report row per line")->required();
    auto* report = app.add_subcommand("report", "re-emit a csv report");
    std::string rep_in, rep_out, rep_format = "structured";
    report->add_option("input", rep_in, "input csv")->required();
    report->add_option("output", rep_out, "output path")->required();
    report->add_option("--format", rep_format, "csv|structured");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        const Cfg cfg0 = load_config(config_path, seed_flag, seed_opt->count() > 0);
        Cfg cfg = cfg0;
        Paths paths{out_dir};
        if (build->parsed()) cfg.kv["variant"] = variant;
        if (collect->parsed()) return cmd_collect(paths, cfg);
        if (build->parsed()) return cmd_build_dataset(paths, cfg);
        if (tr_embed->parsed()) return cmd_train_embed(paths, cfg);
        if (tr_imag->parsed()) return cmd_train_imaginator(paths, cfg);
        if (tr_cvae->parsed()) return cmd_train_cvae(paths, cfg);
        if (tr_pol->parsed()) return cmd_train_policy(paths, cfg);
        if (run->parsed()) return cmd_run(paths, cfg, mode_s, schedule_s, task_s);
        if (ev_prog->parsed()) return cmd_eval(paths, cfg, true, gate);
        if (ev_switch->parsed()) return cmd_eval(paths, cfg, false, gate);
        if (ablate->parsed()) return cmd_ablate(paths, cfg, matrix_path);
        if (report->parsed()) return cmd_report(rep_in, rep_out, rep_format);
    } catch (const GateFailure& e) {
        std::fprintf(stderr, "gate failure: %s\n", e.what());
        return 4;
    } catch (const MissingModel& e) {
        std::fprintf(stderr, "missing model: %s\n", e.what());
        return 3;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 2;
}
