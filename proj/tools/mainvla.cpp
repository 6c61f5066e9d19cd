#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mainvla/harness.hpp"

using namespace mainvla;

namespace {

struct Context {
    ExperimentConfig cfg;
    ClassHierarchy hierarchy;
    Vocabulary vocab;
};

Context load_context(const std::string& config_path) {
    Context ctx;
    ctx.cfg = config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(config_path);
    ctx.cfg.validate();
    ctx.hierarchy = ClassHierarchy::standard();
    ctx.vocab = Vocabulary::build(ctx.hierarchy);
    return ctx;
}

Model<float> load_model(const Context& ctx, const std::string& path) {
    return load_checkpoint<float>(path, ctx.cfg.model_config(ctx.vocab.size()), ctx.cfg.context_hash(ctx.vocab));
}

SummaryRow summary_of(const std::string& label, double fraction, const EvalOutcome& out) {
    SummaryRow row;
    row.label = label;
    row.fraction = fraction;
    row.success_rate = out.success_rate;
    row.mean_steps = out.mean_steps;
    row.flops_total = out.flops_per_decision.total();
    row.flops_visual_visual = out.flops_per_decision.attention_visual_visual;
    return row;
}

void print_eval(const std::string& label, double fraction, const EvalOutcome& out) {
    std::cout << label << " fraction=" << fraction << " episodes=" << out.episodes
              << " success_rate=" << out.success_rate << " mean_steps=" << out.mean_steps
              << " flops/decision=" << out.flops_per_decision.total() << "\n";
}

// csv cells carry full f64 precision; the rendered table trims decimals back
// to a readable width and leaves integer and text cells untouched
std::string pretty_cell(const std::string& cell) {
    if (cell.find('.') == std::string::npos) return cell;
    try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        if (used != cell.size()) return cell;
        std::ostringstream s;
        s << std::setprecision(6) << v;
        return s.str();
    } catch (const std::exception&) {
        return cell;
    }
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("report: cannot open " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    if (rows.empty()) throw DataError("report: empty csv " + path);
    return rows;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gridworld agent with pooled scene tokens, hindsight decoding and token pruning"};
    app.require_subcommand(1);

    std::string config_path, data_path, model_path, out_path, summary_path, log_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int episodes = -1;
    double fraction = 1.0;
    double intention_weight = 1.0, env_weight = 1.0;
    bool force_prune = false;
    int nll_records = 200;

    auto add_config = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "json experiment config (defaults used when omitted)")
            ->check(CLI::ExistingFile);
    };
    auto add_seed = [&](CLI::App* cmd) {
        cmd->add_option("--seed", seed, "override the config seed")->each([&](const std::string&) {
            seed_set = true;
        });
    };
    auto pick_seed = [&](const Context& ctx) { return seed_set ? seed : ctx.cfg.seed; };

    auto* gen = app.add_subcommand("gen-data", "roll out the expert policy and write a training dataset");
    add_config(gen);
    add_seed(gen);
    gen->add_option("--out", out_path, "dataset file to write")->required();
    gen->add_option("--episodes", episodes, "episode count (default: config dataset_episodes)");

    auto* train = app.add_subcommand("train", "train a model on a dataset and write a checkpoint");
    add_config(train);
    add_seed(train);
    train->add_option("--data", data_path, "dataset file")->required()->check(CLI::ExistingFile);
    train->add_option("--out", out_path, "checkpoint file to write")->required();
    train->add_option("--intention-weight", intention_weight, "loss weight for the intention segment");
    train->add_option("--env-weight", env_weight, "loss weight for the scene description segment");
    train->add_option("--log", log_path, "write a step,loss csv");

    auto* eval = app.add_subcommand("eval", "run policy rollouts from a checkpoint");
    add_config(eval);
    add_seed(eval);
    eval->add_option("--model", model_path, "checkpoint file")->required()->check(CLI::ExistingFile);
    eval->add_option("--episodes", episodes, "episode count (default: config eval episodes)");
    eval->add_option("--fraction", fraction, "fraction of visual tokens kept per decision");
    eval->add_flag("--force-prune", force_prune, "route keep-all evals through the pruning path");
    eval->add_option("--out", out_path, "per-episode csv");
    eval->add_option("--summary", summary_path, "one-line summary csv");
    eval->add_option("--accuracy-data", data_path, "dataset for teacher-forced action accuracy")
        ->check(CLI::ExistingFile);

    auto* sweep = app.add_subcommand("prune-sweep", "evaluate one checkpoint across the configured keep fractions");
    add_config(sweep);
    add_seed(sweep);
    sweep->add_option("--model", model_path, "checkpoint file")->required()->check(CLI::ExistingFile);
    sweep->add_option("--episodes", episodes, "episode count (default: config eval episodes)");
    sweep->add_option("--out", out_path, "summary csv")->required();

    auto* ablate = app.add_subcommand("ablate", "train every supervision variant and tabulate rollout quality");
    add_config(ablate);
    add_seed(ablate);
    ablate->add_option("--data", data_path, "dataset file")->required()->check(CLI::ExistingFile);
    ablate->add_option("--episodes", episodes, "eval episode count (default: config eval episodes)");
    ablate->add_option("--nll-records", nll_records, "records for the held-in likelihood column");
    ablate->add_option("--out", out_path, "summary csv")->required();

    auto* oracle = app.add_subcommand("oracle-check", "run built-in reference checks, nonzero exit on failure");

    auto* report = app.add_subcommand("report", "render a summary csv as a markdown table");
    report->add_option("--summary", summary_path, "summary csv")->required()->check(CLI::ExistingFile);
    report->add_option("--out", out_path, "markdown file (stdout when omitted)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            const auto ctx = load_context(config_path);
            const int n = episodes > 0 ? episodes : ctx.cfg.dataset_episodes;
            const auto stats = generate_dataset(ctx.cfg, ctx.vocab, ctx.hierarchy, pick_seed(ctx), n, out_path);
            std::cout << "wrote " << stats.records << " records from " << stats.episodes << " episodes to "
                      << out_path << "\n";
        } else if (*train) {
            const auto ctx = load_context(config_path);
            const auto ds = Dataset::load(data_path, ctx.cfg.layout, ctx.vocab.hash(), ctx.hierarchy.hash());
            const auto s = pick_seed(ctx);
            Model<float> model(ctx.cfg.model_config(ctx.vocab.size()), derive_seed(s, "init"));
            const auto result = train_model(ctx.cfg, ds, ctx.vocab, s, intention_weight, env_weight, model, log_path);
            save_checkpoint(out_path, model, ctx.cfg.context_hash(ctx.vocab));
            std::cout << "trained " << ctx.cfg.train.steps << " steps, loss " << result.first_loss << " -> "
                      << result.final_loss << ", checkpoint " << out_path << "\n";
        } else if (*eval) {
            const auto ctx = load_context(config_path);
            const auto model = load_model(ctx, model_path);
            const int n = episodes > 0 ? episodes : ctx.cfg.eval.episodes;
            const auto out =
                evaluate_policy(ctx.cfg, model, ctx.vocab, derive_seed(pick_seed(ctx), "eval"), n, fraction,
                                force_prune);
            print_eval("eval", fraction, out);
            if (!out_path.empty()) write_episode_csv(out_path, "eval", fraction, out);
            if (!summary_path.empty()) write_summary_csv(summary_path, {summary_of("eval", fraction, out)});
            if (!data_path.empty()) {
                const auto ds = Dataset::load(data_path, ctx.cfg.layout, ctx.vocab.hash(), ctx.hierarchy.hash());
                const auto rep = action_accuracy(ctx.cfg, model, ctx.vocab, ds, 2000);
                std::cout << "action accuracy " << rep.accuracy() << " over " << rep.records << " records\n";
                for (int a = 0; a < n_actions; ++a)
                    std::cout << "  " << action_name(a) << ": expert " << rep.expert_counts[a] << " predicted "
                              << rep.predicted_counts[a] << "\n";
            }
        } else if (*sweep) {
            const auto ctx = load_context(config_path);
            const auto model = load_model(ctx, model_path);
            const int n = episodes > 0 ? episodes : ctx.cfg.eval.episodes;
            std::vector<SummaryRow> rows;
            for (double f : ctx.cfg.eval.fractions) {
                const auto out = evaluate_policy(ctx.cfg, model, ctx.vocab, derive_seed(pick_seed(ctx), "eval"), n, f);
                print_eval("sweep", f, out);
                rows.push_back(summary_of("sweep", f, out));
            }
            write_summary_csv(out_path, rows);
        } else if (*ablate) {
            const auto ctx = load_context(config_path);
            const auto ds = Dataset::load(data_path, ctx.cfg.layout, ctx.vocab.hash(), ctx.hierarchy.hash());
            const int n = episodes > 0 ? episodes : ctx.cfg.eval.episodes;
            const auto rows = run_ablation(ctx.cfg, ds, ctx.vocab, pick_seed(ctx), n, nll_records);
            std::vector<SummaryRow> summary;
            for (const auto& row : rows) {
                SummaryRow s = summary_of(row.label, row.fraction, row.outcome);
                s.nll_action = row.nll.action;
                s.nll_intention = row.nll.intention;
                s.nll_env = row.nll.env;
                s.nll_total = row.nll.total;
                print_eval(row.label, row.fraction, row.outcome);
                summary.push_back(s);
            }
            write_summary_csv(out_path, summary);
        } else if (*oracle) {
            const auto rep = run_oracle_checks();
            std::cout << "pooling: " << (rep.pooling_ok ? "ok" : "FAIL") << "\n"
                      << "connectivity: " << (rep.connectivity_ok ? "ok" : "FAIL") << "\n"
                      << "gradient: " << (rep.gradient_ok ? "ok" : "FAIL") << "\n"
                      << "expert: " << (rep.expert_ok ? "ok" : "FAIL") << "\n";
            return rep.all_ok() ? 0 : 1;
        } else if (*report) {
            const auto rows = read_csv(summary_path);
            std::ostringstream md;
            md << "|";
            for (const auto& cell : rows[0]) md << " " << cell << " |";
            md << "\n|";
            for (std::size_t i = 0; i < rows[0].size(); ++i) md << " --- |";
            md << "\n";
            for (std::size_t r = 1; r < rows.size(); ++r) {
                md << "|";
                for (const auto& cell : rows[r]) md << " " << pretty_cell(cell) << " |";
                md << "\n";
            }
            if (out_path.empty()) {
                std::cout << md.str();
            } else {
                std::ofstream f(out_path);
                if (!f) throw DataError("report: cannot write " + out_path);
                f << md.str();
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
