#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace dmi::harness {

// Fully resolved run configuration. Every field has a default so an empty
// config file is a valid toy run; file values override defaults and CLI
// key=value pairs override the file. The resolved form is embedded in the
// run manifest.
struct RunConfig {
    // corpus
    std::string corpus_kind = "synthetic";  // synthetic | directory
    std::string corpus_train_dir;           // directory mode: private corpus root
    std::string corpus_aux_dir;             // directory mode: auxiliary corpus root
    int corpus_num_classes = 10;            // synthetic mode
    int corpus_per_class = 220;             // synthetic mode
    int corpus_aux_per_class = 120;         // synthetic nonoverlap aux corpus
    double corpus_hue_jitter = 0.55;        // per-image palette ambiguity in [0, 1]
    int image_size = 32;
    int channels = 3;

    // split
    std::string split_mode = "overlap";  // overlap | nonoverlap
    int split_train_per_class = 100;
    int split_test_per_class = 40;

    // target / eval classifier training
    int target_epochs = 30, target_batch = 32;
    double target_lr = 1e-3, target_weight_decay = 1e-4;
    int eval_epochs = 40, eval_batch = 32;
    double eval_lr = 1e-3, eval_weight_decay = 1e-4;

    // diffusion schedule + denoiser
    int schedule_T = 200;
    double schedule_beta_start = 1e-4, schedule_beta_end = 0.115;
    int denoiser_base_width = 16, denoiser_depth = 3, denoiser_time_embed = 128;

    // diffusion training
    int diffusion_epochs = 120, diffusion_batch = 16;
    double diffusion_lr = 3e-4, diffusion_lr_late = 1e-4;
    double diffusion_label_dropout = 0.25;
    double diffusion_weight_decay = 1e-4;
    double diffusion_ema_decay = 0.995;
    int diffusion_ema_warmup = 200;
    int diffusion_checkpoint_every = 10;

    // sampling + attack
    double sampler_omega = 4.0;
    int sampler_candidates = 48;
    double attack_gamma = 2.3;
    int attack_top_k = 5;
    int attack_queries = 50;
    double attack_crop_fraction = 0.875, attack_p_hflip = 0.5, attack_p_vflip = 0.5;
    std::string attack_labels = "all";  // "all" or comma-separated indices

    // sweeps
    std::string sweep_gamma = "1,2,2.3,2.5";
    std::string sweep_omega = "1,2,4,6,8";
    std::string sweep_aux_fractions = "0.25,0.5,0.75,1";

    // output + seeds
    std::string out_dir = "runs/default";
    uint64_t seed_master = 0;
    // named seeds; empty entry = derive from master + stream name
    std::map<std::string, uint64_t> seed_overrides;

    // ---- api ----
    static RunConfig from_file(const std::string& path);        // missing file -> error
    static RunConfig from_text(const std::string& text);        // parse key=value lines
    void apply_override(const std::string& key, const std::string& value);
    void validate() const;

    // Stream-scoped seed: explicit override if configured, else derived
    // deterministically from the master seed and the stream name.
    // Names: corpus, target-train, eval-train, diffusion-train, sampler, transforms.
    uint64_t seed(const std::string& stream_name) const;

    std::map<std::string, std::string> to_flat_map() const;  // every key, resolved
    std::string to_text() const;                             // sorted key=value lines
    std::string config_hash() const;

    std::vector<int> parse_attack_labels(int num_classes) const;
    static std::vector<double> parse_double_list(const std::string& csv, const char* what);
};

}  // namespace dmi::harness
