#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dataset.hpp"
#include "gridworld.hpp"
#include "sequence.hpp"

namespace mainvla {

struct TrainSettings {
    int steps = 1500;
    int batch_size = 8;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int warmup_steps = 100;
    double lr_min_ratio = 1.0;
    double clip_norm = 0.0;
    // dihedral augmentation is sound but slows the early plateau escape, so
    // the shipped recipe leaves it off
    bool augment = false;
    double intention_weight = 1.0;
    double env_weight = 1.0;
    int log_every = 100;

    void validate() const {
        if (steps < 1 || batch_size < 1) throw ConfigError("train: steps and batch_size must be positive");
        if (lr <= 0) throw ConfigError("train: lr must be positive");
        if (warmup_steps < 0 || warmup_steps >= steps) throw ConfigError("train: warmup must fit inside steps");
        if (lr_min_ratio < 0.0 || lr_min_ratio > 1.0) throw ConfigError("train: lr_min_ratio out of [0, 1]");
        if (clip_norm < 0.0) throw ConfigError("train: clip_norm must be nonnegative");
        if (intention_weight < 0 || env_weight < 0) throw ConfigError("train: negative loss weight");
        if (log_every < 1) throw ConfigError("train: log_every must be positive");
    }

    // linear warmup then cosine decay to lr * lr_min_ratio
    double lr_at(int step) const {
        if (step < warmup_steps) return lr * (step + 1) / warmup_steps;
        const double span = std::max(1, steps - warmup_steps);
        const double t = (step - warmup_steps) / span;
        const double floor_lr = lr * lr_min_ratio;
        return floor_lr + (lr - floor_lr) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
    }
};

struct EvalSettings {
    int episodes = 500;
    double tau = 1.0;
    std::vector<double> fractions = {1.0, 0.5, 0.25};
    double ablation_fraction = 0.25;

    void validate() const {
        if (episodes < 1) throw ConfigError("eval: episodes must be positive");
        if (tau <= 0) throw ConfigError("eval: tau must be positive");
        if (fractions.empty()) throw ConfigError("eval: no fractions");
        for (double f : fractions)
            if (f <= 0.0 || f > 1.0) throw ConfigError("eval: fraction out of (0, 1]");
        if (ablation_fraction <= 0.0 || ablation_fraction > 1.0) throw ConfigError("eval: bad ablation fraction");
    }
};

struct PoolSettings {
    int cell_px = 8;
    int k = 2;
};

// Defaults are the shipped desk-scale recipe: an 8x8 board rendered at 8px
// per cell, a 4x4 pooled scene grid, and a batch size big enough to escape
// the marginal-action plateau tiny models fall into early in training.
struct ExperimentConfig {
    std::uint64_t seed = 1;
    int dataset_episodes = 5000;
    ScenarioConfig scenario{.board_size = 8, .min_walls = 2, .max_walls = 4, .min_wall_len = 2, .max_wall_len = 4};
    RenderConfig render{.cell_px = 8, .spread = {0.35, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05}};
    SequenceLayout layout{.n_env = 32};
    PoolSettings pool{.cell_px = 16};
    int d_model = 48;
    int n_layers = 2;
    int n_heads = 4;
    int max_seq = 256;
    double init_scale = 0.02;
    TrainSettings train{.steps = 2200, .batch_size = 64, .log_every = 200};
    EvalSettings eval;

    ModelConfig model_config(int vocab_size) const {
        ModelConfig m;
        m.vocab_size = vocab_size;
        m.d_model = d_model;
        m.n_layers = n_layers;
        m.n_heads = n_heads;
        m.max_seq = max_seq;
        m.patch_dim = layout.patch_dim();
        m.init_scale = init_scale;
        return m;
    }

    PoolConfig pool_config() const { return PoolConfig{pool.cell_px, pool.cell_px, pool.k}; }

    void validate() const {
        scenario.validate();
        render.validate();
        layout.validate();
        train.validate();
        eval.validate();
        if (dataset_episodes < 1) throw ConfigError("config: dataset_episodes must be positive");
        if (max_seq < layout.total()) throw ConfigError("config: max_seq shorter than the sequence layout");
        if (scenario.board_size * render.cell_px != layout.raster_px)
            throw ConfigError("config: board size times cell_px must equal raster_px");
        if (pool.cell_px < 1 || pool.k < 1 || layout.raster_px % pool.cell_px != 0)
            throw ConfigError("config: pooling cells must tile the raster");
        const int side = layout.raster_px / pool.cell_px;
        if (side * side * pool.k != layout.n_env)
            throw ConfigError("config: n_env must equal pooled grid cells times k");
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["seed"] = seed;
        j["dataset_episodes"] = dataset_episodes;
        j["scenario"] = {{"board_size", scenario.board_size},
                         {"min_walls", scenario.min_walls},
                         {"max_walls", scenario.max_walls},
                         {"min_wall_len", scenario.min_wall_len},
                         {"max_wall_len", scenario.max_wall_len},
                         {"min_items", scenario.min_items},
                         {"max_items", scenario.max_items},
                         {"min_vehicles", scenario.min_vehicles},
                         {"max_vehicles", scenario.max_vehicles},
                         {"min_safezones", scenario.min_safezones},
                         {"max_safezones", scenario.max_safezones},
                         {"min_enemies", scenario.min_enemies},
                         {"max_enemies", scenario.max_enemies},
                         {"fire_range", scenario.fire_range},
                         {"min_start_dist", scenario.min_start_dist},
                         {"budget_slack", scenario.budget_slack},
                         {"max_generation_tries", scenario.max_generation_tries}};
        j["render"] = {{"cell_px", render.cell_px},
                       {"mean", std::vector<double>(render.mean.begin(), render.mean.end())},
                       {"spread", std::vector<double>(render.spread.begin(), render.spread.end())}};
        j["layout"] = {{"n_instruction", layout.n_instruction}, {"n_visual", layout.n_visual},
                       {"n_action", layout.n_action},           {"n_intention", layout.n_intention},
                       {"n_env", layout.n_env},                 {"patch_px", layout.patch_px},
                       {"raster_px", layout.raster_px}};
        j["pool"] = {{"cell_px", pool.cell_px}, {"k", pool.k}};
        j["model"] = {{"d_model", d_model},
                      {"n_layers", n_layers},
                      {"n_heads", n_heads},
                      {"max_seq", max_seq},
                      {"init_scale", init_scale}};
        j["train"] = {{"steps", train.steps},
                      {"batch_size", train.batch_size},
                      {"lr", train.lr},
                      {"beta1", train.beta1},
                      {"beta2", train.beta2},
                      {"adam_eps", train.adam_eps},
                      {"warmup_steps", train.warmup_steps},
                      {"lr_min_ratio", train.lr_min_ratio},
                      {"clip_norm", train.clip_norm},
                      {"augment", train.augment},
                      {"intention_weight", train.intention_weight},
                      {"env_weight", train.env_weight},
                      {"log_every", train.log_every}};
        j["eval"] = {{"episodes", eval.episodes},
                     {"tau", eval.tau},
                     {"fractions", eval.fractions},
                     {"ablation_fraction", eval.ablation_fraction}};
        return j;
    }

    static ExperimentConfig from_json(const nlohmann::json& j) {
        ExperimentConfig c;
        auto section = [&](const char* name) -> nlohmann::json {
            return j.contains(name) ? j.at(name) : nlohmann::json::object();
        };
        auto get = [](const nlohmann::json& s, const char* key, auto fallback) {
            using T = decltype(fallback);
            if (!s.contains(key)) return fallback;
            try {
                return s.at(key).get<T>();
            } catch (const nlohmann::json::exception&) {
                throw ConfigError(std::string("config: bad value for ") + key);
            }
        };
        c.seed = get(j, "seed", c.seed);
        c.dataset_episodes = get(j, "dataset_episodes", c.dataset_episodes);
        const auto sc = section("scenario");
        c.scenario.board_size = get(sc, "board_size", c.scenario.board_size);
        c.scenario.min_walls = get(sc, "min_walls", c.scenario.min_walls);
        c.scenario.max_walls = get(sc, "max_walls", c.scenario.max_walls);
        c.scenario.min_wall_len = get(sc, "min_wall_len", c.scenario.min_wall_len);
        c.scenario.max_wall_len = get(sc, "max_wall_len", c.scenario.max_wall_len);
        c.scenario.min_items = get(sc, "min_items", c.scenario.min_items);
        c.scenario.max_items = get(sc, "max_items", c.scenario.max_items);
        c.scenario.min_vehicles = get(sc, "min_vehicles", c.scenario.min_vehicles);
        c.scenario.max_vehicles = get(sc, "max_vehicles", c.scenario.max_vehicles);
        c.scenario.min_safezones = get(sc, "min_safezones", c.scenario.min_safezones);
        c.scenario.max_safezones = get(sc, "max_safezones", c.scenario.max_safezones);
        c.scenario.min_enemies = get(sc, "min_enemies", c.scenario.min_enemies);
        c.scenario.max_enemies = get(sc, "max_enemies", c.scenario.max_enemies);
        c.scenario.fire_range = get(sc, "fire_range", c.scenario.fire_range);
        c.scenario.min_start_dist = get(sc, "min_start_dist", c.scenario.min_start_dist);
        c.scenario.budget_slack = get(sc, "budget_slack", c.scenario.budget_slack);
        c.scenario.max_generation_tries = get(sc, "max_generation_tries", c.scenario.max_generation_tries);
        const auto rd = section("render");
        c.render.cell_px = get(rd, "cell_px", c.render.cell_px);
        const auto mean = get(rd, "mean", std::vector<double>(c.render.mean.begin(), c.render.mean.end()));
        const auto spread = get(rd, "spread", std::vector<double>(c.render.spread.begin(), c.render.spread.end()));
        if (mean.size() != c.render.mean.size() || spread.size() != c.render.spread.size())
            throw ConfigError("config: render mean and spread need one entry per entity type");
        std::copy(mean.begin(), mean.end(), c.render.mean.begin());
        std::copy(spread.begin(), spread.end(), c.render.spread.begin());
        const auto ly = section("layout");
        c.layout.n_instruction = get(ly, "n_instruction", c.layout.n_instruction);
        c.layout.n_visual = get(ly, "n_visual", c.layout.n_visual);
        c.layout.n_action = get(ly, "n_action", c.layout.n_action);
        c.layout.n_intention = get(ly, "n_intention", c.layout.n_intention);
        c.layout.n_env = get(ly, "n_env", c.layout.n_env);
        c.layout.patch_px = get(ly, "patch_px", c.layout.patch_px);
        c.layout.raster_px = get(ly, "raster_px", c.layout.raster_px);
        const auto pl = section("pool");
        c.pool.cell_px = get(pl, "cell_px", c.pool.cell_px);
        c.pool.k = get(pl, "k", c.pool.k);
        const auto md = section("model");
        c.d_model = get(md, "d_model", c.d_model);
        c.n_layers = get(md, "n_layers", c.n_layers);
        c.n_heads = get(md, "n_heads", c.n_heads);
        c.max_seq = get(md, "max_seq", c.max_seq);
        c.init_scale = get(md, "init_scale", c.init_scale);
        const auto tr = section("train");
        c.train.steps = get(tr, "steps", c.train.steps);
        c.train.batch_size = get(tr, "batch_size", c.train.batch_size);
        c.train.lr = get(tr, "lr", c.train.lr);
        c.train.beta1 = get(tr, "beta1", c.train.beta1);
        c.train.beta2 = get(tr, "beta2", c.train.beta2);
        c.train.adam_eps = get(tr, "adam_eps", c.train.adam_eps);
        c.train.warmup_steps = get(tr, "warmup_steps", c.train.warmup_steps);
        c.train.lr_min_ratio = get(tr, "lr_min_ratio", c.train.lr_min_ratio);
        c.train.clip_norm = get(tr, "clip_norm", c.train.clip_norm);
        c.train.augment = get(tr, "augment", c.train.augment);
        c.train.intention_weight = get(tr, "intention_weight", c.train.intention_weight);
        c.train.env_weight = get(tr, "env_weight", c.train.env_weight);
        c.train.log_every = get(tr, "log_every", c.train.log_every);
        const auto ev = section("eval");
        c.eval.episodes = get(ev, "episodes", c.eval.episodes);
        c.eval.tau = get(ev, "tau", c.eval.tau);
        c.eval.fractions = get(ev, "fractions", c.eval.fractions);
        c.eval.ablation_fraction = get(ev, "ablation_fraction", c.eval.ablation_fraction);
        c.validate();
        return c;
    }

    static ExperimentConfig load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw ConfigError("config: cannot open " + path);
        nlohmann::json j;
        try {
            f >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config: invalid json in " + path + ": " + e.what());
        }
        return from_json(j);
    }

    std::uint64_t hash() const { return fnv1a(to_json().dump()); }
    std::uint64_t context_hash(const Vocabulary& vocab) const { return fnv1a_u64(vocab.hash(), layout.hash()); }
};

// ---- dataset generation ----

inline Record record_from_state(const ExperimentConfig& cfg, const Vocabulary& vocab, const ClassHierarchy& hc,
                                const Sim& sim, int action, Rng& texture_rng) {
    const Scenario& sc = sim.scenario();
    Record r;
    r.instruction.assign(cfg.layout.n_instruction, Vocabulary::pad_id);
    const auto instr_ids = instruction_token_ids(vocab, sc.instruction);
    if (static_cast<int>(instr_ids.size()) > cfg.layout.n_instruction)
        throw DataError("record: instruction longer than layout slot");
    for (std::size_t i = 0; i < instr_ids.size(); ++i) r.instruction[i] = static_cast<std::uint16_t>(instr_ids[i]);
    r.raster = render_raster(sc, sim.agent_r(), sim.agent_c(), cfg.render, texture_rng);
    r.action = static_cast<std::uint8_t>(action);
    r.intention.assign(cfg.layout.n_intention, Vocabulary::pad_id);
    const auto intent = intention_token_ids(vocab, sc.task);
    for (std::size_t i = 0; i < intent.size(); ++i) r.intention[i] = static_cast<std::uint16_t>(intent[i]);
    const auto map = render_semantic(sc, sim.agent_r(), sim.agent_c(), cfg.render.cell_px);
    r.env = flatten(pool_semantic_map(map, hc, cfg.pool_config()));
    return r;
}

struct GenStats {
    int episodes = 0;
    std::uint64_t records = 0;
};

inline GenStats generate_dataset(const ExperimentConfig& cfg, const Vocabulary& vocab, const ClassHierarchy& hc,
                                 std::uint64_t seed, int episodes, const std::string& out_path) {
    cfg.validate();
    DatasetWriter writer(out_path, cfg.layout, vocab.hash(), hc.hash());
    for (int e = 0; e < episodes; ++e) {
        Rng scenario_rng(derive_seed(seed, "scenario", static_cast<std::uint64_t>(e)));
        const Scenario sc = generate_scenario(cfg.scenario, scenario_rng);
        Sim sim(sc, cfg.scenario);
        int step = 0;
        while (!sim.done()) {
            Rng texture_rng(derive_seed(seed, "texture", (static_cast<std::uint64_t>(e) << 16) | step));
            const int action = sim.expert_action();
            writer.append(record_from_state(cfg, vocab, hc, sim, action, texture_rng));
            sim.apply(action);
            ++step;
        }
        if (!sim.success()) throw TrainingError("generate_dataset: expert failed an episode");
    }
    GenStats stats;
    stats.episodes = episodes;
    stats.records = writer.count();
    writer.close();

    nlohmann::json manifest;
    manifest["seed"] = seed;
    manifest["episodes"] = episodes;
    manifest["records"] = stats.records;
    manifest["config_hash"] = cfg.hash();
    manifest["vocab_hash"] = vocab.hash();
    manifest["hierarchy_hash"] = hc.hash();
    std::ofstream mf(out_path + ".manifest.json");
    if (!mf) throw DataError("generate_dataset: cannot write manifest");
    mf << manifest.dump(2) << "\n";
    return stats;
}

// ---- training ----

struct TrainResult {
    double first_loss = 0.0;
    double final_loss = 0.0;
    std::vector<std::pair<int, double>> log;  // step, loss
};

// Positions after the last supervised one cannot influence any loss term
// (causal attention), so dropping them changes no gradient. With zero
// weight on the trailing segments this cuts most of the step cost.
inline void drop_unsupervised_tail(BuiltExample& ex) {
    int last = -1;
    for (int t = 0; t < static_cast<int>(ex.sup.weight.size()); ++t)
        if (ex.sup.weight[t] > 0.0) last = t;
    if (last < 0) throw TrainingError("train: example with no supervised position");
    const int keep = last + 1;
    ex.in.tokens.resize(keep);
    ex.in.pos_ids.resize(keep);
    ex.in.patch_col.resize(keep);
    ex.sup.target.resize(keep);
    ex.sup.weight.resize(keep);
}

inline TrainResult train_model(const ExperimentConfig& cfg, const Dataset& ds, const Vocabulary& vocab,
                               std::uint64_t seed, double intention_weight, double env_weight, Model<float>& model,
                               const std::string& log_csv_path = "") {
    cfg.validate();
    if (ds.records.empty()) throw TrainingError("train: empty dataset");
    if (model.config().vocab_size != vocab.size()) throw TrainingError("train: model vocab mismatch");

    const LossWeights weights{1.0, intention_weight, env_weight, true};
    Adam<float>::Settings as;
    as.lr = cfg.train.lr;
    as.beta1 = cfg.train.beta1;
    as.beta2 = cfg.train.beta2;
    as.eps = cfg.train.adam_eps;
    Adam<float> opt(model.n_params(), as);

    Rng batch_rng(derive_seed(seed, "batch-order"));
    const int env_side = cfg.layout.raster_px / cfg.pool.cell_px;
    TrainResult result;
    Eigen::VectorXf grad;
    std::vector<BuiltExample> built;
    for (int step = 0; step < cfg.train.steps; ++step) {
        built.clear();
        for (int b = 0; b < cfg.train.batch_size; ++b) {
            const auto idx = batch_rng.next_below(ds.records.size());
            if (cfg.train.augment) {
                const int sym = static_cast<int>(batch_rng.next_below(8));
                const auto aug = augment_record(ds.records[idx], cfg.layout, env_side, cfg.pool.k, sym);
                built.push_back(example_from_record(aug, cfg.layout, vocab, weights));
            } else {
                built.push_back(example_from_record(ds.records[idx], cfg.layout, vocab, weights));
            }
            drop_unsupervised_tail(built.back());
        }
        std::vector<const SeqInput*> ins;
        std::vector<const SeqSupervision*> sups;
        for (const auto& ex : built) {
            ins.push_back(&ex.in);
            sups.push_back(&ex.sup);
        }
        const double loss = model.loss_and_grad(ins, sups, grad);
        if (!std::isfinite(loss)) throw TrainingError("train: loss diverged at step " + std::to_string(step));
        if (cfg.train.clip_norm > 0.0) {
            const double norm = grad.template cast<double>().norm();
            if (norm > cfg.train.clip_norm) grad *= static_cast<float>(cfg.train.clip_norm / norm);
        }
        opt.set_lr(cfg.train.lr_at(step));
        opt.step(model.params(), grad);
        if (step == 0) result.first_loss = loss;
        result.final_loss = loss;
        if (step % cfg.train.log_every == 0 || step == cfg.train.steps - 1) result.log.emplace_back(step, loss);
    }

    if (!log_csv_path.empty()) {
        std::ofstream f(log_csv_path);
        if (!f) throw DataError("train: cannot write log " + log_csv_path);
        f << "step,loss\n";
        for (const auto& [s, l] : result.log) f << s << "," << l << "\n";
    }
    return result;
}

// ---- evaluation ----

struct EpisodeRow {
    int episode = 0;
    Task task = Task::reach_item;
    bool success = false;
    int steps = 0;
    int budget = 0;
};

struct EvalOutcome {
    int episodes = 0;
    int successes = 0;
    double success_rate = 0.0;
    double mean_steps = 0.0;
    std::uint64_t decisions = 0;
    DecisionFlops flops_per_decision;
    std::vector<EpisodeRow> rows;
};

// Rollouts on freshly generated scenarios. Scenario and texture streams
// depend only on (eval_seed, episode, step), so different models and keep
// fractions face identical worlds and identical pixels.
inline EvalOutcome evaluate_policy(const ExperimentConfig& cfg, const Model<float>& model, const Vocabulary& vocab,
                                   std::uint64_t eval_seed, int episodes, double fraction,
                                   bool force_prune_path = false) {
    cfg.validate();
    DecisionConfig dc;
    dc.tau = cfg.eval.tau;
    dc.fraction = fraction;
    dc.force_prune_path = force_prune_path;

    EvalOutcome out;
    out.episodes = episodes;
    out.flops_per_decision = decision_flops(cfg.n_layers, cfg.d_model, vocab.size(), cfg.layout.patch_dim(),
                                            cfg.layout.n_instruction, dc.keep_count(cfg.layout.n_visual));
    long total_steps = 0;
    for (int e = 0; e < episodes; ++e) {
        Rng scenario_rng(derive_seed(eval_seed, "eval-scenario", static_cast<std::uint64_t>(e)));
        const Scenario sc = generate_scenario(cfg.scenario, scenario_rng);
        Sim sim(sc, cfg.scenario);
        const auto instr_ids = instruction_token_ids(vocab, sc.instruction);
        int step = 0;
        while (!sim.done()) {
            Rng texture_rng(derive_seed(eval_seed, "eval-texture", (static_cast<std::uint64_t>(e) << 16) | step));
            const auto raster = render_raster(sc, sim.agent_r(), sim.agent_c(), cfg.render, texture_rng);
            const auto prefix = build_prefix(cfg.layout, vocab, instr_ids, raster);
            const Decision d = decide(model, cfg.layout, vocab, prefix, dc);
            sim.apply(d.action);
            ++out.decisions;
            ++step;
        }
        EpisodeRow row;
        row.episode = e;
        row.task = sc.task;
        row.success = sim.success();
        row.steps = sim.steps();
        row.budget = sim.budget();
        out.rows.push_back(row);
        out.successes += sim.success();
        total_steps += sim.steps();
    }
    out.success_rate = static_cast<double>(out.successes) / episodes;
    out.mean_steps = static_cast<double>(total_steps) / episodes;
    return out;
}

struct AccuracyReport {
    int records = 0;
    int correct = 0;
    std::vector<int> expert_counts = std::vector<int>(n_actions, 0);
    std::vector<int> predicted_counts = std::vector<int>(n_actions, 0);
    double accuracy() const { return records ? static_cast<double>(correct) / records : 0.0; }
};

// teacher-forced argmax agreement with the recorded expert actions
inline AccuracyReport action_accuracy(const ExperimentConfig& cfg, const Model<float>& model, const Vocabulary& vocab,
                                      const Dataset& ds, int max_records) {
    AccuracyReport rep;
    const int n = std::min<int>(max_records, static_cast<int>(ds.records.size()));
    for (int i = 0; i < n; ++i) {
        const Record& r = ds.records[i];
        std::vector<int> instr;
        for (auto w : r.instruction) instr.push_back(w);
        while (!instr.empty() && instr.back() == Vocabulary::pad_id) instr.pop_back();
        const auto prefix = build_prefix(cfg.layout, vocab, instr, r.raster);
        const auto logits = model.forward(prefix);
        const int pred = greedy_action(logits.col(cfg.layout.prefix_length() - 1), vocab);
        ++rep.records;
        rep.correct += pred == r.action;
        ++rep.expert_counts[r.action];
        ++rep.predicted_counts[pred];
    }
    return rep;
}

struct NllSummary {
    double action = 0.0;
    double intention = 0.0;
    double env = 0.0;
    double total = 0.0;
    int records = 0;
};

// teacher-forced per-record segment likelihoods, averaged over records
inline NllSummary evaluate_nll(const ExperimentConfig& cfg, const Model<float>& model, const Vocabulary& vocab,
                               const Dataset& ds, int max_records) {
    NllSummary s;
    const int n = std::min<int>(max_records, static_cast<int>(ds.records.size()));
    if (n == 0) throw DataError("evaluate_nll: no records");
    for (int i = 0; i < n; ++i) {
        const auto ex = example_from_record(ds.records[i], cfg.layout, vocab, LossWeights{});
        const auto parts = sequence_nll(model, cfg.layout, ex);
        s.action += parts.action;
        s.intention += parts.intention;
        s.env += parts.env;
        s.total += parts.total;
    }
    s.action /= n;
    s.intention /= n;
    s.env /= n;
    s.total /= n;
    s.records = n;
    return s;
}

// ---- csv output ----

inline void write_episode_csv(const std::string& path, const std::string& label, double fraction,
                              const EvalOutcome& out) {
    std::ofstream f(path);
    if (!f) throw DataError("csv: cannot open " + path);
    f << "label,fraction,episode,task,success,steps,budget\n";
    for (const auto& r : out.rows)
        f << label << "," << fraction << "," << r.episode << "," << task_name(r.task) << "," << (r.success ? 1 : 0)
          << "," << r.steps << "," << r.budget << "\n";
    if (!f) throw DataError("csv: write failure " + path);
}

struct SummaryRow {
    std::string label;
    double fraction = 1.0;
    double success_rate = 0.0;
    double mean_steps = 0.0;
    std::uint64_t flops_total = 0;
    std::uint64_t flops_visual_visual = 0;
    double nll_action = 0.0;
    double nll_intention = 0.0;
    double nll_env = 0.0;
    double nll_total = 0.0;
};

inline void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows) {
    std::ofstream f(path);
    if (!f) throw DataError("csv: cannot open " + path);
    f << "label,fraction,success_rate,mean_steps,flops_total,flops_visual_visual,nll_action,nll_intention,nll_env,"
         "nll_total\n";
    f.precision(17);
    for (const auto& r : rows)
        f << r.label << "," << r.fraction << "," << r.success_rate << "," << r.mean_steps << "," << r.flops_total
          << "," << r.flops_visual_visual << "," << r.nll_action << "," << r.nll_intention << "," << r.nll_env << ","
          << r.nll_total << "\n";
    if (!f) throw DataError("csv: write failure " + path);
}

// ---- ablation ----

struct AblationVariant {
    std::string name;
    double intention_weight = 0.0;
    double env_weight = 0.0;
};

inline const std::vector<AblationVariant>& ablation_variants() {
    static const std::vector<AblationVariant> v = {{"baseline", 0.0, 0.0},
                                                   {"intention_only", 1.0, 0.0},
                                                   {"env_only", 0.0, 1.0},
                                                   {"intention_env", 1.0, 1.0}};
    return v;
}

struct AblationRow {
    std::string label;
    double intention_weight = 0.0;
    double env_weight = 0.0;
    double fraction = 1.0;
    EvalOutcome outcome;
    NllSummary nll;
};

// Four trainings serve six table rows: each variant evaluated unpruned, and
// the baseline and the combined variant evaluated again at the ablation
// keep fraction.
inline std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, const Dataset& ds, const Vocabulary& vocab,
                                             std::uint64_t seed, int eval_episodes, int nll_records = 200) {
    std::vector<Model<float>> models;
    for (const auto& variant : ablation_variants()) {
        Model<float> m(cfg.model_config(vocab.size()), derive_seed(seed, "init"));
        train_model(cfg, ds, vocab, seed, variant.intention_weight, variant.env_weight, m);
        models.push_back(std::move(m));
    }
    struct RowSpec {
        int variant;
        double fraction;
    };
    const std::vector<RowSpec> specs = {{0, 1.0}, {1, 1.0}, {2, 1.0}, {0, cfg.eval.ablation_fraction},
                                        {3, 1.0}, {3, cfg.eval.ablation_fraction}};
    std::vector<AblationRow> rows;
    const std::uint64_t eval_seed = derive_seed(seed, "ablation-eval");
    for (const auto& spec : specs) {
        const auto& variant = ablation_variants()[spec.variant];
        AblationRow row;
        row.label = variant.name + (spec.fraction < 1.0 ? "_pruned" : "");
        row.intention_weight = variant.intention_weight;
        row.env_weight = variant.env_weight;
        row.fraction = spec.fraction;
        row.outcome = evaluate_policy(cfg, models[spec.variant], vocab, eval_seed, eval_episodes, spec.fraction);
        row.nll = evaluate_nll(cfg, models[spec.variant], vocab, ds, nll_records);
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---- self checks usable without the test binaries ----

struct OracleReport {
    bool pooling_ok = false;
    bool connectivity_ok = false;
    bool gradient_ok = false;
    bool expert_ok = false;
    bool all_ok() const { return pooling_ok && connectivity_ok && gradient_ok && expert_ok; }
};

inline OracleReport run_oracle_checks() {
    OracleReport rep;
    const auto hc = ClassHierarchy::standard();

    // pooling invariants: highest-priority class always leads the cell, a
    // lone higher-priority pixel beats any count, pad fills short cells
    rep.pooling_ok = true;
    {
        Rng rng(101);
        for (int trial = 0; trial < 30 && rep.pooling_ok; ++trial) {
            SemanticMap map(16, 16, cls::other);
            const int n_person = 1 + static_cast<int>(rng.next_below(3));
            for (int i = 0; i < n_person; ++i)
                map.at(rng.next_int(0, 7), rng.next_int(0, 7)) = cls::person;
            const auto grid = pool_semantic_map(map, hc, PoolConfig{8, 8, 2});
            if (grid.cell(0, 0)[0] != cls::person || grid.cell(0, 0)[1] != cls::other) rep.pooling_ok = false;
            if (grid.cell(1, 1)[0] != cls::other || grid.cell(1, 1)[1] != cls::pad) rep.pooling_ok = false;
        }
    }

    // connectivity closed forms
    {
        Eigen::MatrixXd same = Eigen::MatrixXd::Zero(4, 6);
        for (int j = 0; j < 6; ++j) same(2, j) = 1.0;
        const auto a = connectivity_scores(same, 1.0);
        Eigen::MatrixXd ortho = Eigen::MatrixXd::Identity(2, 2);
        const auto b = connectivity_scores(ortho, 1.0);
        rep.connectivity_ok = std::abs(a[0] - 0.7310585786300049) < 1e-9 &&
                              std::abs(b[0] - 0.6224593312018546) < 1e-9;
    }

    // spot finite differences on a small double model
    {
        ModelConfig mc;
        mc.vocab_size = 12;
        mc.d_model = 8;
        mc.n_layers = 1;
        mc.n_heads = 2;
        mc.max_seq = 16;
        mc.patch_dim = 4;
        Model<double> m(mc, 7);
        SeqInput in;
        in.patches = Eigen::MatrixXd::Zero(4, 1);
        in.patches(1, 0) = 0.5;
        for (int t = 0; t < 6; ++t) {
            in.tokens.push_back(t % mc.vocab_size);
            in.pos_ids.push_back(t);
            in.patch_col.push_back(t == 2 ? 0 : -1);
        }
        SeqSupervision sup;
        sup.target.assign(6, -1);
        sup.weight.assign(6, 0.0);
        sup.target[4] = 3;
        sup.weight[4] = 1.0;
        Eigen::VectorXd grad, scratch;
        m.loss_and_grad({&in}, {&sup}, grad);
        Rng rng(102);
        double worst = 0.0;
        for (int probe = 0; probe < 50; ++probe) {
            const int i = static_cast<int>(rng.next_below(m.n_params()));
            const double h = 1e-5, saved = m.params()[i];
            m.params()[i] = saved + h;
            const double up = m.loss_and_grad({&in}, {&sup}, scratch);
            m.params()[i] = saved - h;
            const double dn = m.loss_and_grad({&in}, {&sup}, scratch);
            m.params()[i] = saved;
            const double numeric = (up - dn) / (2 * h);
            worst = std::max(worst, std::abs(grad[i] - numeric) /
                                        std::max(1.0, std::max(std::abs(grad[i]), std::abs(numeric))));
        }
        rep.gradient_ok = worst < 1e-4;
    }

    // expert policy solves every generated scenario within its budget
    {
        ScenarioConfig sc;
        Rng rng(103);
        rep.expert_ok = true;
        for (int e = 0; e < 50 && rep.expert_ok; ++e) {
            Sim sim(generate_scenario(sc, rng), sc);
            while (!sim.done()) sim.apply(sim.expert_action());
            rep.expert_ok = sim.success();
        }
    }
    return rep;
}

}  // namespace mainvla
