// taskmine: stage-by-stage subtask-mining pipeline driver.
//
//   taskmine <stage> --config cfg.json [--output-dir DIR]
//   taskmine run-all --config cfg.json [--output-dir DIR]
//   taskmine seed-replay --config cfg.json --out replay.json
//
// Exit codes: 0 success, 1 stage error, 2 config error.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "taskmine/pipeline.hpp"

int main(int argc, char** argv) {
    CLI::App app{"subtask landmark mining, rule generation and policy training"};
    app.require_subcommand(1);

    std::string config_path, output_dir, replay_out;
    const std::vector<std::string> stages = {"collect",      "train-scorer",
                                             "find-subtasks", "gen-rules",
                                             "train-policy",  "evaluate",
                                             "report",        "run-all"};
    for (const auto& name : stages) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "pipeline config JSON")->required();
        sub->add_option("--output-dir", output_dir, "override config output_dir");
    }
    CLI::App* seed = app.add_subcommand("seed-replay",
                                        "author a replay recording for this config");
    seed->add_option("--config", config_path, "pipeline config JSON")->required();
    seed->add_option("--out", replay_out, "replay store path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) ? 2 : 0;
    }

    std::string stage = app.get_subcommands().front()->get_name();
    taskmine::PipelineConfig cfg;
    try {
        cfg = taskmine::PipelineConfig::load(config_path);
        if (!output_dir.empty()) cfg.output_dir = output_dir;
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (stage == "seed-replay") {
            taskmine::seed_replay(cfg, replay_out);
            std::cout << "wrote " << replay_out << "\n";
        } else if (stage == "run-all") {
            taskmine::RunReport rep = taskmine::run_all(cfg);
            std::cout << "subtasks found: " << rep.subtasks_found << " (planted "
                      << rep.planted_count << ")\n"
                      << "precision/recall post-search: " << rep.precision_post << " / "
                      << rep.recall_post << "\n"
                      << "evaluation: " << rep.eval_mean << " +/- " << rep.eval_std
                      << "\n";
        } else {
            taskmine::run_stage(stage, cfg);
            std::cout << "stage " << stage << " complete\n";
        }
    } catch (const taskmine::InvalidConfig& e) {
        std::cerr << "config error [" << stage << "]: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error [" << stage << "]: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
