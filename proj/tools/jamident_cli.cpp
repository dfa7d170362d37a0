// jamident: dataset generation, training and evaluation from the shell.
//
//   jamident gen-dataset --out data/
//   jamident train --dataset data/ --strategy masked --out runs/masked
//   jamident eval --dataset data/ --checkpoint runs/masked/checkpoint.bin --out runs/masked
//   jamident attack-eval --dataset data/ --checkpoint runs/masked/checkpoint.bin --eps 3,6,8,14
//   jamident flops
//
// Exit status: 0 success, 1 runtime failure (or FLOPs outside the band),
// 2 invalid arguments or configuration.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "jamident/pipeline.hpp"

namespace fs = std::filesystem;
using namespace jamident;

namespace {

constexpr int kUsageError = 2;

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    bool desk = false;
    bool full = false;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_path, "JSON configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", c.seed, "master seed (overrides the config file)");
    auto* desk = cmd->add_flag("--desk-scale", c.desk, "desk-scale preset (default)");
    auto* full = cmd->add_flag("--full-scale", c.full, "full-scale preset");
    desk->excludes(full);
}

config::AppConfig resolve(const Common& c) {
    auto cfg = c.full ? config::AppConfig::full_scale() : config::AppConfig::desk_scale();
    if (!c.config_path.empty()) cfg = config::load_config(c.config_path, cfg);
    if (c.seed) cfg.set_seed(*c.seed);
    return cfg;
}

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_file(const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) throw UsageError(what + " not found: " + p.string());
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Jamming-type identification: synthesis, training and adversarial evaluation"};
    app.require_subcommand(1);

    Common common;
    std::string out_dir, dataset_dir, checkpoint_path, strategy_name = "baseline", split;
    std::vector<int> eps;
    bool no_mask_eval = false;

    auto* gen = app.add_subcommand("gen-dataset", "synthesize the spectrogram dataset");
    add_common(gen, common);
    gen->add_option("--out", out_dir, "output directory")->required();

    auto* train = app.add_subcommand("train", "train a model on the train split");
    add_common(train, common);
    train->add_option("--dataset", dataset_dir, "dataset directory")->required();
    train->add_option("--strategy", strategy_name, "baseline | masked | consistent")
        ->check(CLI::IsMember({"baseline", "masked", "consistent"}));
    train->add_option("--out", out_dir, "run directory for the log (and default checkpoint)")->default_str(".");
    train->add_option("--checkpoint", checkpoint_path, "checkpoint blob path (default <out>/checkpoint.bin)");

    auto add_eval_opts = [&](CLI::App* cmd) {
        add_common(cmd, common);
        cmd->add_option("--dataset", dataset_dir, "dataset directory")->required();
        cmd->add_option("--checkpoint", checkpoint_path, "checkpoint blob path")->required();
        cmd->add_option("--out", out_dir, "report directory")->default_str(".");
        cmd->add_option("--split", split, "train | test")->check(CLI::IsMember({"train", "test"}));
        cmd->add_flag("--no-mask-eval", no_mask_eval, "evaluate masked models with the plain forward pass");
    };
    auto* eval = app.add_subcommand("eval", "clean accuracy reports");
    add_eval_opts(eval);
    auto* attack = app.add_subcommand("attack-eval", "FGSM accuracy reports");
    add_eval_opts(attack);
    attack->add_option("--eps", eps, "budgets in units of 1/255, comma separated")->delimiter(',');

    auto* flops = app.add_subcommand("flops", "print the model FLOPs and the acceptance band");
    add_common(flops, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return kUsageError;
    }

    try {
        auto cfg = resolve(common);
        if (out_dir.empty()) out_dir = ".";

        if (*gen) {
            pipeline::gen_dataset(cfg, out_dir, std::cout);
        } else if (*train) {
            require_file(fs::path(dataset_dir) / "manifest.json", "dataset manifest");
            pipeline::TrainRequest req{cfg, *training::strategy_from_string(strategy_name), dataset_dir,
                                       checkpoint_path.empty() ? fs::path(out_dir) / "checkpoint.bin" : fs::path(checkpoint_path),
                                       fs::path(out_dir) / "train_log.jsonl"};
            pipeline::train(req, std::cout);
        } else if (*eval || *attack) {
            require_file(checkpoint_path, "checkpoint");
            require_file(checkpoint::header_path(checkpoint_path), "checkpoint header");
            require_file(fs::path(dataset_dir) / "manifest.json", "dataset manifest");
            if (!split.empty()) cfg.eval.split = split;
            if (no_mask_eval) cfg.eval.mask_eval = false;
            if (!eps.empty()) {
                for (int e : eps)
                    if (e < 0) throw UsageError("--eps values must be non-negative");
                cfg.attack.eps_255 = eps;
            }
            pipeline::EvalRequest req{cfg, dataset_dir, checkpoint_path, out_dir};
            if (*eval) pipeline::eval(req, std::cout);
            else pipeline::attack_eval(req, std::cout);
        } else if (*flops) {
            const auto r = evaluate::flops_report(cfg.model);
            std::cout << r.format();
            return r.in_band() ? 0 : 1;
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsageError;
    } catch (const config::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
