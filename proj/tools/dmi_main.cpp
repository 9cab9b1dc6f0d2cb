// Command-line driver for the label-only model-inversion pipeline.
//
// Every subcommand runs inside one output directory and appends to its
// manifest. Stages pull in their own prerequisites, so any entry point works
// from a cold start; with --resume, completed stages whose inputs are
// unchanged are loaded from their artifacts instead of recomputed.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dmi/harness/experiment.hpp"
#include "dmi/io.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    long long seed = -1;
    bool seed_set = false;
    bool resume = false;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
    cmd->add_option("--config", a.config_path, "configuration file (key=value lines)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--out", a.out_dir, "output directory (overrides out.dir)");
    cmd->add_option("--seed", a.seed, "master seed (overrides seeds.master)")
        ->check(CLI::NonNegativeNumber);
    cmd->add_flag("--resume", a.resume, "reuse completed stages whose inputs are unchanged");
}

dmi::harness::RunConfig resolve_config(const CLI::App* cmd, const CommonArgs& a) {
    dmi::harness::RunConfig cfg = a.config_path.empty()
                                      ? dmi::harness::RunConfig{}
                                      : dmi::harness::RunConfig::from_file(a.config_path);
    if (!cmd->get_option("--out")->empty()) cfg.out_dir = a.out_dir;
    if (!cmd->get_option("--seed")->empty()) cfg.seed_master = static_cast<uint64_t>(a.seed);
    cfg.validate();
    return cfg;
}

void print_summary(const dmi::harness::Experiment& e) {
    const auto& stages = e.manifest().stages;
    if (stages.empty()) return;
    std::printf("\n%-18s %-9s %-7s %10s\n", "stage", "status", "reused", "wall");
    for (const auto& s : stages)
        std::printf("%-18s %-9s %-7s %8.1fs\n", s.name.c_str(), s.status.c_str(),
                    s.reused ? "yes" : "no", s.wall_ms / 1000.0);
    std::printf("\nmanifest: %s\n", e.out_path("manifest.json").c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Label-only model inversion via a conditional denoising generator"};
    app.require_subcommand(1);

    CommonArgs a;
    int label = -1;
    bool all_labels = false;
    std::string axis;

    CLI::App* c_target = app.add_subcommand("train-target", "train the black-box target classifier");
    CLI::App* c_eval = app.add_subcommand("train-eval", "train the white-box evaluation classifier");
    CLI::App* c_aux = app.add_subcommand("label-aux", "pseudo-label the auxiliary set via target queries");
    CLI::App* c_diff = app.add_subcommand("train-diffusion", "train the conditional denoising generator");
    CLI::App* c_recover = app.add_subcommand("recover", "sample candidates and select per-label recoveries");
    CLI::Option* opt_label =
        c_recover->add_option("--label", label, "single class index to attack")->check(CLI::NonNegativeNumber);
    c_recover->add_flag("--all", all_labels, "attack every class (default when --label is absent)")
        ->excludes(opt_label);
    CLI::App* c_evaluate = app.add_subcommand("evaluate", "score recoveries with the evaluation classifier");
    CLI::App* c_report = app.add_subcommand("report", "write the metrics report and comparison grids");
    CLI::App* c_sweep = app.add_subcommand("sweep", "run an ablation axis and plot it");
    c_sweep->add_option("--axis", axis, "gamma | omega | aux-quantity")
        ->required()
        ->check(CLI::IsMember({"gamma", "omega", "aux-quantity"}));
    CLI::App* c_run = app.add_subcommand("run", "run the full pipeline end to end");

    for (CLI::App* cmd : {c_target, c_eval, c_aux, c_diff, c_recover, c_evaluate, c_report, c_sweep, c_run})
        add_common(cmd, a);

    CLI11_PARSE(app, argc, argv);
    CLI::App* cmd = app.get_subcommands().front();

    try {
        dmi::harness::Experiment e(resolve_config(cmd, a), a.resume);

        if (cmd == c_target) {
            e.train_target();
        } else if (cmd == c_eval) {
            e.train_eval();
        } else if (cmd == c_aux) {
            e.label_auxiliary();
        } else if (cmd == c_diff) {
            e.train_diffusion();
        } else if (cmd == c_recover) {
            std::vector<int> labels;  // empty = labels from config (attack.labels)
            if (!cmd->get_option("--label")->empty()) labels = {label};
            e.recover(labels);
        } else if (cmd == c_evaluate) {
            const dmi::metrics::MetricReport rep = e.evaluate();
            std::printf("%s", dmi::metrics::to_table(rep).c_str());
        } else if (cmd == c_report) {
            e.emit_report();
            std::printf("%s", dmi::io::read_text_file(e.out_path("report/report.txt")).c_str());
        } else if (cmd == c_sweep) {
            const auto points = e.run_sweep(axis);
            std::printf("%s", dmi::io::read_text_file(
                                  e.out_path("report/sweep_" +
                                             (axis == "aux-quantity" ? std::string("aux_quantity") : axis) +
                                             "_table.txt"))
                                  .c_str());
            (void)points;
        } else if (cmd == c_run) {
            e.run_all();
        }

        print_summary(e);
    } catch (const std::exception& ex) {
        std::fprintf(stderr, "error: %s\n", ex.what());
        return 1;
    }
    return 0;
}
