#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dmi/classifiers.hpp"
#include "dmi/harness/config.hpp"
#include "dmi/harness/corpus.hpp"
#include "dmi/metrics.hpp"

namespace dmi {
template <class T>
class Denoiser;
}

namespace dmi::harness {

// One pipeline stage as recorded in the manifest. `dep_hash` digests the
// stage's resolved inputs (config subset plus upstream output hashes); a
// stage is reused on --resume only when its artifact carries a matching
// dep_hash, so stale artifacts are never silently trusted.
struct StageRecord {
    std::string name;
    std::string status = "complete";  // complete | failed
    bool reused = false;
    std::string dep_hash;
    std::string output_hash;
    double wall_ms = 0.0;  // excluded from reproducibility comparisons
    std::vector<std::string> artifacts;
    std::map<std::string, std::string> info;
};

// Append-only run record, persisted as JSON after every stage.
struct RunManifest {
    std::string started;  // wall-clock; excluded from reproducibility comparisons
    std::string config_hash;
    std::map<std::string, std::string> config;
    std::vector<StageRecord> stages;

    const StageRecord* find_last(const std::string& name) const;
    std::string to_json() const;
    static RunManifest from_json(const std::string& text);
    // Canonical comparison form: the manifest with wall-clock data removed.
    // Two equal-seed runs must agree on this byte-for-byte.
    std::string reproducible_text() const;
};

// Per-sweep-point aggregate used by the ablation drivers and their plots.
struct SweepPoint {
    double value = 0.0;  // gamma, omega, or auxiliary fraction
    metrics::LabelMetrics aggregate;
};

// Orchestrates the full pipeline inside one output directory:
//   corpus -> target -> eval -> label-aux -> diffusion -> recover ->
//   evaluate -> report
// Stages run lazily and idempotently; each persists a self-describing
// artifact and appends a manifest record. With resume=true a stage whose
// artifact matches its dep hash is loaded instead of recomputed.
class Experiment {
public:
    Experiment(RunConfig cfg, bool resume);
    ~Experiment();
    Experiment(const Experiment&) = delete;
    Experiment& operator=(const Experiment&) = delete;

    // individual stages (each ensures its prerequisites)
    void prepare_corpus();
    void train_target();
    void train_eval();
    void label_auxiliary();
    void train_diffusion();
    // empty list = labels from config (attack.labels)
    void recover(std::vector<int> labels = {});
    metrics::MetricReport evaluate();
    void emit_report();

    // full pipeline; returns the final manifest
    const RunManifest& run_all();

    // ablation drivers: axis is "gamma", "omega", or "aux-quantity"
    std::vector<SweepPoint> run_sweep(const std::string& axis);

    const RunConfig& config() const { return cfg_; }
    const RunManifest& manifest() const { return manifest_; }
    std::string out_path(const std::string& rel) const;

    // accessors that materialize their stage on demand
    const SplitResult& split();
    const TargetModel& target();
    const EvalModel& eval_model();

private:
    struct State;

    void append_record(StageRecord rec);
    void save_manifest();
    // Runs a stage with timing, failure capture (record persisted, then
    // rethrown as "stage <name>: ..."), and artifact reuse: when resuming and
    // `artifact` exists, try_load may adopt it (returning true) instead of
    // rebuilding. Pass an empty artifact path to always rebuild.
    StageRecord* run_stage(const std::string& name, const std::string& dep_hash, const std::string& artifact,
                           const std::function<bool(StageRecord&)>& try_load,
                           const std::function<void(StageRecord&)>& build);
    std::string config_subset_hash(const std::vector<std::string>& prefixes) const;

    // Ancestral samples for one label in [-1,1], shape (candidates, C, S, S),
    // cached on disk keyed by label/omega and the diffusion weights hash.
    Tensorf raw_samples(Denoiser<float>& net, const std::string& diffusion_hash, int label, double omega);
    // Runs selection for every label, writes rank PNGs, per-label grids, and
    // a recover.json summary under rel_dir; returns the recovered sets.
    std::vector<attack::RecoveredLabel> recover_into(const std::string& rel_dir, const std::vector<int>& labels,
                                                     double omega, double gamma, Denoiser<float>& net,
                                                     const std::string& diffusion_hash, StageRecord& rec);
    // Scores the rank PNGs under rel_dir (the canonical quantized artifacts,
    // so fresh and resumed runs measure identical pixels).
    metrics::MetricReport evaluate_dir(const std::string& rel_dir, const std::vector<int>& labels);
    // Trains a denoiser on [0,1] images + labels, writing cadence snapshots
    // and a final self-describing checkpoint; returns the net with EMA
    // weights loaded for sampling and the checkpoint's content hash.
    std::unique_ptr<Denoiser<float>> train_denoiser_on(const Tensorf& images01, const std::vector<int>& labels,
                                                       const std::string& ckpt_rel, const std::string& dep_hash,
                                                       StageRecord& rec, std::string& out_hash);
    std::vector<SweepPoint> sweep_points(const std::string& axis);
    void write_sweep_outputs(const std::string& axis, const std::vector<SweepPoint>& points, StageRecord& rec);

    RunConfig cfg_;
    bool resume_ = false;
    RunManifest manifest_;
    std::unique_ptr<State> state_;
};

// Convenience wrapper: configure, run every stage, return the manifest.
RunManifest run_experiment(const RunConfig& cfg, bool resume = false);

// Minimal SVG line chart (one polyline per series) for the ablation plots.
std::string render_line_chart_svg(const std::string& title, const std::string& x_label,
                                  const std::vector<std::string>& series_names,
                                  const std::vector<double>& xs,
                                  const std::vector<std::vector<double>>& series);

}  // namespace dmi::harness
