#include "dmi/harness/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <set>
#include <sstream>
#include <stdexcept>

#include "dmi/attack.hpp"
#include "dmi/denoiser.hpp"
#include "dmi/diffusion.hpp"
#include "dmi/io.hpp"
#include "dmi/schedule.hpp"
#include "json.hpp"

namespace dmi::harness {
namespace {

using nlohmann::ordered_json;

std::string now_iso() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

std::string fmt_exact(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string combine_hashes(const std::vector<std::string>& parts) {
    std::string s;
    for (const auto& p : parts) {
        s += p;
        s += '\n';
    }
    return io::content_hash(s.data(), s.size());
}

std::string dataset_hash(const LabeledDataset& ds) {
    std::string names;
    for (const auto& n : ds.class_names) {
        names += n;
        names += '\n';
    }
    return combine_hashes({io::content_hash(ds.images),
                           io::content_hash(ds.labels.data(), ds.labels.size() * sizeof(int)),
                           io::content_hash(names.data(), names.size())});
}

Tensorf batch_row(const Tensorf& batch, int n) {
    const int C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
    Tensorf img({C, H, W});
    const int64_t per = static_cast<int64_t>(C) * H * W;
    std::copy(batch.data() + n * per, batch.data() + (n + 1) * per, img.data());
    return img;
}

LabeledDataset concat_datasets(const LabeledDataset& a, const LabeledDataset& b) {
    if (a.class_names != b.class_names)
        throw std::logic_error("concat_datasets: class identities differ");
    LabeledDataset out;
    out.class_names = a.class_names;
    out.images = Tensorf({a.size() + b.size(), a.images.dim(1), a.images.dim(2), a.images.dim(3)});
    std::copy(a.images.data(), a.images.data() + a.images.numel(), out.images.data());
    std::copy(b.images.data(), b.images.data() + b.images.numel(), out.images.data() + a.images.numel());
    out.labels = a.labels;
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    out.validate();
    return out;
}

// ---- denoiser checkpoint helpers -------------------------------------------

void save_denoiser_checkpoint(const std::string& path, Denoiser<float>& net, const nn::Ema<float>* ema,
                              const nn::AdamW<float>* opt, std::map<std::string, std::string> meta) {
    io::Checkpoint c;
    c.meta = std::move(meta);
    auto& ps = net.params();
    for (auto* p : ps) c.tensors.emplace_back("live." + p->name, p->value);
    if (ema) {
        if (ema->shadow_.size() != ps.size())
            throw std::logic_error("diffusion checkpoint: EMA shadow not aligned with parameters");
        for (size_t i = 0; i < ps.size(); ++i) c.tensors.emplace_back("ema." + ps[i]->name, ema->shadow_[i]);
        c.meta["ema.step"] = std::to_string(ema->step_);
    }
    if (opt && opt->m_.size() == ps.size()) {
        for (size_t i = 0; i < ps.size(); ++i) {
            c.tensors.emplace_back("opt.m." + ps[i]->name, opt->m_[i]);
            c.tensors.emplace_back("opt.v." + ps[i]->name, opt->v_[i]);
        }
        c.meta["opt.t"] = std::to_string(opt->t_);
    }
    io::save_checkpoint(path, c);
}

// Loads "ema.<name>" (or "live.<name>") weights into a fresh net.
std::unique_ptr<Denoiser<float>> denoiser_from_checkpoint(const io::Checkpoint& c, const DenoiserConfig& dc,
                                                          bool use_ema) {
    auto net = std::make_unique<Denoiser<float>>(dc);
    const std::string prefix = use_ema ? "ema." : "live.";
    for (auto* p : net->params()) {
        const Tensorf* t = c.find(prefix + p->name);
        if (!t) throw std::runtime_error("diffusion checkpoint: missing tensor " + prefix + p->name);
        if (t->shape() != p->value.shape())
            throw std::runtime_error("diffusion checkpoint: shape mismatch for " + p->name);
        p->value = *t;
    }
    return net;
}

void check_schedule_meta(const io::Checkpoint& c, const RunConfig& cfg) {
    const auto want = [&](const char* key, const std::string& v) {
        const auto it = c.meta.find(key);
        if (it == c.meta.end() || it->second != v)
            throw std::runtime_error(std::string("diffusion checkpoint: schedule mismatch on ") + key +
                                     " (checkpoint " + (it == c.meta.end() ? "<absent>" : it->second) +
                                     ", config " + v + "); refusing to sample");
    };
    want("schedule.steps", std::to_string(cfg.schedule_T));
    want("schedule.beta_start", fmt_exact(cfg.schedule_beta_start));
    want("schedule.beta_end", fmt_exact(cfg.schedule_beta_end));
}

}  // namespace

// ---- RunManifest ------------------------------------------------------------

const StageRecord* RunManifest::find_last(const std::string& name) const {
    for (auto it = stages.rbegin(); it != stages.rend(); ++it)
        if (it->name == name) return &*it;
    return nullptr;
}

static ordered_json manifest_json(const RunManifest& m, bool include_timing) {
    ordered_json j;
    j["format"] = "dmi-run-manifest-v1";
    if (include_timing) j["started"] = m.started;
    j["config_hash"] = m.config_hash;
    j["config"] = m.config;
    j["stages"] = ordered_json::array();
    for (const auto& s : m.stages) {
        ordered_json js;
        js["name"] = s.name;
        js["status"] = s.status;
        js["reused"] = s.reused;
        js["dep_hash"] = s.dep_hash;
        js["output_hash"] = s.output_hash;
        if (include_timing) js["wall_ms"] = s.wall_ms;
        js["artifacts"] = s.artifacts;
        js["info"] = s.info;
        j["stages"].push_back(std::move(js));
    }
    return j;
}

std::string RunManifest::to_json() const { return manifest_json(*this, true).dump(2) + "\n"; }
std::string RunManifest::reproducible_text() const { return manifest_json(*this, false).dump(2) + "\n"; }

RunManifest RunManifest::from_json(const std::string& text) {
    const auto j = ordered_json::parse(text);
    if (j.value("format", "") != "dmi-run-manifest-v1")
        throw std::runtime_error("manifest: unrecognized format field");
    RunManifest m;
    m.started = j.value("started", "");
    m.config_hash = j.value("config_hash", "");
    if (j.contains("config")) m.config = j["config"].get<std::map<std::string, std::string>>();
    for (const auto& js : j.value("stages", ordered_json::array())) {
        StageRecord s;
        s.name = js.value("name", "");
        s.status = js.value("status", "");
        s.reused = js.value("reused", false);
        s.dep_hash = js.value("dep_hash", "");
        s.output_hash = js.value("output_hash", "");
        s.wall_ms = js.value("wall_ms", 0.0);
        if (js.contains("artifacts")) s.artifacts = js["artifacts"].get<std::vector<std::string>>();
        if (js.contains("info")) s.info = js["info"].get<std::map<std::string, std::string>>();
        m.stages.push_back(std::move(s));
    }
    return m;
}

// ---- Experiment state ---------------------------------------------------------

struct Experiment::State {
    std::optional<SplitResult> split;
    std::string corpus_hash;

    std::optional<TargetModel> target;
    std::string target_hash;
    std::optional<EvalModel> eval;
    std::string eval_hash;

    std::vector<int> aux_labels;  // target-predicted labels for the aux set
    std::string aux_hash;

    NoiseSchedule sched;
    std::unique_ptr<Denoiser<float>> sampler_net;  // EMA weights loaded
    std::string diffusion_hash;

    bool recovered = false;
    std::vector<int> recovered_labels;
    std::string recover_hash;

    std::optional<metrics::MetricReport> report;
    std::map<int, Tensorf> private_by_label;
    std::map<std::string, Tensorf> raw_cache;  // keyed by cache file path
};

Experiment::Experiment(RunConfig cfg, bool resume)
    : cfg_(std::move(cfg)), resume_(resume), state_(std::make_unique<State>()) {
    cfg_.validate();
    io::ensure_dir(cfg_.out_dir);
    io::ensure_dir(out_path("checkpoints"));
    io::ensure_dir(out_path("samples"));
    io::ensure_dir(out_path("report"));

    const std::string mpath = out_path("manifest.json");
    if (resume_ && io::file_exists(mpath)) {
        manifest_ = RunManifest::from_json(io::read_text_file(mpath));
    }
    manifest_.started = now_iso();
    manifest_.config = cfg_.to_flat_map();
    manifest_.config_hash = cfg_.config_hash();
    io::write_text_file(out_path("config.resolved.txt"), cfg_.to_text());
    save_manifest();
}

Experiment::~Experiment() = default;

std::string Experiment::out_path(const std::string& rel) const {
    return rel.empty() ? cfg_.out_dir : cfg_.out_dir + "/" + rel;
}

void Experiment::append_record(StageRecord rec) { manifest_.stages.push_back(std::move(rec)); }
void Experiment::save_manifest() { io::write_text_file(out_path("manifest.json"), manifest_.to_json()); }

StageRecord* Experiment::run_stage(const std::string& name, const std::string& dep_hash,
                                   const std::string& artifact,
                                   const std::function<bool(StageRecord&)>& try_load,
                                   const std::function<void(StageRecord&)>& build) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto elapsed_ms = [&t0] {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    };
    StageRecord rec;
    rec.name = name;
    rec.dep_hash = dep_hash;
    bool loaded = false;
    if (resume_ && try_load && !artifact.empty() && io::file_exists(artifact)) {
        try {
            loaded = try_load(rec);
        } catch (const std::exception&) {
            loaded = false;  // invalid or stale artifact: rebuild
        }
    }
    if (loaded) {
        rec.reused = true;
    } else {
        rec.reused = false;
        try {
            build(rec);
        } catch (const std::exception& e) {
            rec.status = "failed";
            rec.info["error"] = e.what();
            rec.wall_ms = elapsed_ms();
            append_record(std::move(rec));
            save_manifest();
            throw std::runtime_error("stage " + name + ": " + e.what());
        }
    }
    rec.wall_ms = elapsed_ms();
    append_record(std::move(rec));
    save_manifest();
    return &manifest_.stages.back();
}

std::string Experiment::config_subset_hash(const std::vector<std::string>& prefixes) const {
    std::string s;
    for (const auto& [k, v] : cfg_.to_flat_map())
        for (const auto& p : prefixes)
            if (k.rfind(p, 0) == 0) {
                s += k + "=" + v + "\n";
                break;
            }
    return io::content_hash(s.data(), s.size());
}

// ---- corpus -------------------------------------------------------------------

void Experiment::prepare_corpus() {
    if (state_->split) return;
    const std::string dep = config_subset_hash({"corpus.", "split.", "seeds.corpus"});

    const auto materialize = [this]() -> SplitResult {
        LabeledDataset priv, aux;
        if (cfg_.corpus_kind == "synthetic") {
            GlyphCorpusSpec ps;
            ps.num_classes = cfg_.corpus_num_classes;
            ps.per_class = cfg_.corpus_per_class;
            ps.image_size = cfg_.image_size;
            ps.channels = cfg_.channels;
            ps.seed = cfg_.seed("corpus");
            ps.hue_jitter = cfg_.corpus_hue_jitter;
            priv = make_glyph_corpus(ps);
            if (cfg_.split_mode == "nonoverlap") {
                // cousin corpus: same shapes, shifted rendering distribution,
                // distinct identities (suffixed class names)
                GlyphCorpusSpec as = ps;
                as.per_class = cfg_.corpus_aux_per_class;
                as.seed = Rng(cfg_.seed("corpus")).stream("aux-corpus").next();
                as.hue_shift = 0.15;
                as.scale_shift = 0.10;
                as.name_suffix = "aux";
                aux = make_glyph_corpus(as);
            }
        } else {
            priv = load_dataset(cfg_.corpus_train_dir, cfg_.image_size, cfg_.channels);
            if (cfg_.split_mode == "nonoverlap")
                aux = load_dataset(cfg_.corpus_aux_dir, cfg_.image_size, cfg_.channels);
        }
        return make_splits(priv, aux, cfg_.split_mode, cfg_.split_train_per_class, cfg_.split_test_per_class,
                           cfg_.seed("corpus"));
    };

    run_stage("corpus", dep, "", nullptr, [&](StageRecord& rec) {
        state_->split = materialize();
        const SplitResult& s = *state_->split;
        state_->corpus_hash = combine_hashes(
            {dataset_hash(s.target_train), dataset_hash(s.target_test), dataset_hash(s.aux)});
        rec.output_hash = state_->corpus_hash;
        rec.info["train_size"] = std::to_string(s.target_train.size());
        rec.info["test_size"] = std::to_string(s.target_test.size());
        rec.info["aux_size"] = std::to_string(s.aux.size());
        rec.info["num_classes"] = std::to_string(s.target_train.num_classes());
        rec.info["split_mode"] = cfg_.split_mode;
        if (cfg_.split_mode == "nonoverlap")
            rec.info["aux_classes_removed"] = std::to_string(s.aux_classes_removed);
    });
}

// ---- classifiers ----------------------------------------------------------------

void Experiment::train_target() {
    if (state_->target) return;
    prepare_corpus();
    const std::string dep =
        combine_hashes({state_->corpus_hash, config_subset_hash({"target.", "seeds.target-train"})});
    const std::string ckpt_rel = "checkpoints/target.ckpt";
    const std::string ckpt = out_path(ckpt_rel);

    run_stage(
        "target", dep, ckpt,
        [&](StageRecord& rec) {
            const io::Checkpoint c = io::load_checkpoint(ckpt);
            if (c.meta.at("stage") != "target" || c.meta.at("dep_hash") != dep) return false;
            TargetModel m(cfg_.image_size, cfg_.channels, state_->split->target_train.class_names);
            io::load_checkpoint_into_state(c, m.state());
            state_->target.emplace(std::move(m));
            state_->target_hash = io::content_hash_file(ckpt);
            rec.output_hash = state_->target_hash;
            rec.artifacts = {ckpt_rel};
            rec.info["test_accuracy"] = fmt_g(state_->target->test_accuracy());
            return true;
        },
        [&](StageRecord& rec) {
            ClassifierTrainConfig tc;
            tc.epochs = cfg_.target_epochs;
            tc.batch_size = cfg_.target_batch;
            tc.lr = cfg_.target_lr;
            tc.weight_decay = cfg_.target_weight_decay;
            tc.seed = cfg_.seed("target-train");
            tc.on_epoch = [&](int epoch, const StateRefs& st) {
                char name[64];
                std::snprintf(name, sizeof name, "checkpoints/target_epoch_%03d.ckpt", epoch);
                io::save_checkpoint(out_path(name),
                                    io::checkpoint_from_state(
                                        st, {{"stage", "target"}, {"epoch", std::to_string(epoch)}}));
            };
            TargetModel m = TargetModel::train(state_->split->target_train, state_->split->target_test, tc);
            std::string names;
            for (const auto& n : m.class_names()) names += n + "\n";
            io::save_checkpoint(ckpt, io::checkpoint_from_state(
                                          m.state(), {{"stage", "target"},
                                                      {"dep_hash", dep},
                                                      {"arch_id", m.arch_id()},
                                                      {"image_size", std::to_string(m.image_size())},
                                                      {"channels", std::to_string(m.channels())},
                                                      {"class_names", names},
                                                      {"epochs", std::to_string(tc.epochs)}}));
            state_->target.emplace(std::move(m));
            state_->target_hash = io::content_hash_file(ckpt);
            rec.output_hash = state_->target_hash;
            rec.artifacts = {ckpt_rel};
            rec.info["test_accuracy"] = fmt_g(state_->target->test_accuracy());
            rec.info["arch_id"] = state_->target->arch_id();
        });
}

void Experiment::train_eval() {
    if (state_->eval) return;
    train_target();  // needed for the accuracy-dominance check
    const std::string dep =
        combine_hashes({state_->corpus_hash, config_subset_hash({"eval.", "seeds.eval-train"})});
    const std::string ckpt_rel = "checkpoints/eval.ckpt";
    const std::string ckpt = out_path(ckpt_rel);

    const auto finish = [this](StageRecord& rec) {
        const double ea = state_->eval->test_accuracy();
        const double ta = state_->target->test_accuracy();
        rec.info["test_accuracy"] = fmt_g(ea);
        rec.info["target_accuracy"] = fmt_g(ta);
        rec.info["exceeds_target"] = ea > ta ? "true" : "false";
        rec.info["arch_id"] = state_->eval->arch_id();
        if (state_->eval->arch_id() == state_->target->arch_id())
            throw std::logic_error("eval model architecture must differ from the target's");
        if (!(ea > ta))
            rec.info["warning"] =
                "evaluation model does not exceed the target's test accuracy; metrics are not certified";
    };

    run_stage(
        "eval", dep, ckpt,
        [&](StageRecord& rec) {
            const io::Checkpoint c = io::load_checkpoint(ckpt);
            if (c.meta.at("stage") != "eval" || c.meta.at("dep_hash") != dep) return false;
            EvalModel m(cfg_.image_size, cfg_.channels, state_->split->target_train.class_names);
            io::load_checkpoint_into_state(c, m.state());
            state_->eval.emplace(std::move(m));
            state_->eval_hash = io::content_hash_file(ckpt);
            rec.output_hash = state_->eval_hash;
            rec.artifacts = {ckpt_rel};
            finish(rec);
            return true;
        },
        [&](StageRecord& rec) {
            ClassifierTrainConfig tc;
            tc.epochs = cfg_.eval_epochs;
            tc.batch_size = cfg_.eval_batch;
            tc.lr = cfg_.eval_lr;
            tc.weight_decay = cfg_.eval_weight_decay;
            tc.seed = cfg_.seed("eval-train");
            tc.on_epoch = [&](int epoch, const StateRefs& st) {
                char name[64];
                std::snprintf(name, sizeof name, "checkpoints/eval_epoch_%03d.ckpt", epoch);
                io::save_checkpoint(out_path(name),
                                    io::checkpoint_from_state(
                                        st, {{"stage", "eval"}, {"epoch", std::to_string(epoch)}}));
            };
            // The evaluation model approximates ground truth, so it trains on
            // every private-class image outside the test split. In overlap
            // mode the auxiliary split holds further samples of the private
            // classes; in nonoverlap mode those identities are absent.
            LabeledDataset eval_train = state_->split->target_train;
            if (cfg_.split_mode == "overlap")
                eval_train = concat_datasets(eval_train, state_->split->aux);
            rec.info["train_images"] = std::to_string(eval_train.size());
            EvalModel m = EvalModel::train(eval_train, state_->split->target_test, tc);
            io::save_checkpoint(ckpt, io::checkpoint_from_state(m.state(), {{"stage", "eval"},
                                                                            {"dep_hash", dep},
                                                                            {"arch_id", m.arch_id()},
                                                                            {"epochs", std::to_string(tc.epochs)}}));
            state_->eval.emplace(std::move(m));
            state_->eval_hash = io::content_hash_file(ckpt);
            rec.output_hash = state_->eval_hash;
            rec.artifacts = {ckpt_rel};
            finish(rec);
        });
}

// ---- auxiliary labeling ----------------------------------------------------------

void Experiment::label_auxiliary() {
    if (!state_->aux_labels.empty()) return;
    train_target();
    const std::string dep = combine_hashes({state_->corpus_hash, state_->target_hash});
    const std::string rel = "aux_labels.json";
    const std::string path = out_path(rel);

    const auto record_counts = [this](StageRecord& rec) {
        std::vector<int> counts(static_cast<size_t>(state_->target->num_classes()), 0);
        for (int l : state_->aux_labels) counts[static_cast<size_t>(l)]++;
        int sum = 0;
        std::string cs;
        for (size_t k = 0; k < counts.size(); ++k) {
            sum += counts[k];
            cs += (k ? "," : "") + std::to_string(counts[k]);
        }
        if (sum != state_->split->aux.size())
            throw std::logic_error("auxiliary labeling: per-label counts do not sum to the set size");
        rec.info["per_label_counts"] = cs;
        rec.info["size"] = std::to_string(sum);
    };

    run_stage(
        "label-aux", dep, path,
        [&](StageRecord& rec) {
            const auto j = ordered_json::parse(io::read_text_file(path));
            if (j.value("dep_hash", "") != dep) return false;
            state_->aux_labels = j.at("labels").get<std::vector<int>>();
            if (static_cast<int>(state_->aux_labels.size()) != state_->split->aux.size()) return false;
            state_->aux_hash = io::content_hash_file(path);
            rec.output_hash = state_->aux_hash;
            rec.artifacts = {rel};
            record_counts(rec);
            return true;
        },
        [&](StageRecord& rec) {
            state_->aux_labels = attack::label_auxiliary(*state_->target, state_->split->aux.images);
            ordered_json j;
            j["format"] = "dmi-aux-labels-v1";
            j["dep_hash"] = dep;
            j["labels"] = state_->aux_labels;
            io::write_text_file(path, j.dump(2) + "\n");
            state_->aux_hash = io::content_hash_file(path);
            rec.output_hash = state_->aux_hash;
            rec.artifacts = {rel};
            record_counts(rec);
        });
}

// ---- diffusion -------------------------------------------------------------------

std::unique_ptr<Denoiser<float>> Experiment::train_denoiser_on(const Tensorf& images01,
                                                               const std::vector<int>& labels,
                                                               const std::string& ckpt_rel,
                                                               const std::string& dep_hash, StageRecord& rec,
                                                               std::string& out_hash) {
    DenoiserConfig dc;
    dc.image_size = cfg_.image_size;
    dc.channels = cfg_.channels;
    dc.base_width = cfg_.denoiser_base_width;
    dc.depth = cfg_.denoiser_depth;
    dc.num_classes = state_->target->num_classes();
    dc.time_embed_dim = cfg_.denoiser_time_embed;
    dc.validate();

    auto net = std::make_unique<Denoiser<float>>(dc);
    net->init_params(cfg_.seed("diffusion-train"));

    // diffusion domain is [-1, 1]
    Tensorf x0(images01.shape());
    for (int64_t i = 0; i < x0.numel(); ++i) x0[i] = 2.0f * images01[i] - 1.0f;

    diffusion::TrainConfig tc;
    tc.label_dropout_p = cfg_.diffusion_label_dropout;
    tc.batch_size = cfg_.diffusion_batch;
    tc.lr = cfg_.diffusion_lr;
    tc.lr_late = cfg_.diffusion_lr_late;
    tc.max_epochs = cfg_.diffusion_epochs;
    tc.seed = cfg_.seed("diffusion-train");
    tc.weight_decay = cfg_.diffusion_weight_decay;
    tc.ema_decay = cfg_.diffusion_ema_decay;
    tc.ema_warmup = cfg_.diffusion_ema_warmup;

    std::map<std::string, std::string> base_meta = {
        {"stage", "diffusion"},
        {"dep_hash", dep_hash},
        {"schedule.steps", std::to_string(cfg_.schedule_T)},
        {"schedule.beta_start", fmt_exact(cfg_.schedule_beta_start)},
        {"schedule.beta_end", fmt_exact(cfg_.schedule_beta_end)},
        {"denoiser.base_width", std::to_string(dc.base_width)},
        {"denoiser.depth", std::to_string(dc.depth)},
        {"denoiser.time_embed_dim", std::to_string(dc.time_embed_dim)},
        {"num_classes", std::to_string(dc.num_classes)},
    };
    std::string label_map;
    for (const auto& n : state_->target->class_names()) label_map += n + "\n";
    base_meta["label_map"] = label_map;

    nn::Ema<float> ema;
    nn::AdamW<float> opt;
    const std::string stem = ckpt_rel.substr(0, ckpt_rel.size() - 5);  // strip ".ckpt"
    const auto on_epoch = [&](int epoch, double /*loss*/) {
        if (cfg_.diffusion_checkpoint_every > 0 && epoch % cfg_.diffusion_checkpoint_every == 0 &&
            epoch < tc.max_epochs) {
            char suffix[32];
            std::snprintf(suffix, sizeof suffix, "_epoch_%04d.ckpt", epoch);
            auto meta = base_meta;
            meta["epoch"] = std::to_string(epoch);
            save_denoiser_checkpoint(out_path(stem + suffix), *net, &ema, nullptr, std::move(meta));
        }
    };

    const std::vector<double> losses =
        diffusion::train_denoiser(*net, state_->sched, x0, labels, tc, ema, on_epoch, &opt);

    auto meta = base_meta;
    meta["epoch"] = std::to_string(tc.max_epochs);
    meta["final_loss"] = fmt_exact(losses.empty() ? 0.0 : losses.back());
    save_denoiser_checkpoint(out_path(ckpt_rel), *net, &ema, &opt, std::move(meta));

    std::string loss_log;
    for (size_t e = 0; e < losses.size(); ++e)
        loss_log += std::to_string(e + 1) + "\t" + fmt_exact(losses[e]) + "\n";
    io::write_text_file(out_path(stem + "_loss.txt"), loss_log);

    out_hash = io::content_hash_file(out_path(ckpt_rel));
    rec.output_hash = out_hash;
    rec.artifacts = {ckpt_rel, stem + "_loss.txt"};
    rec.info["epochs"] = std::to_string(tc.max_epochs);
    rec.info["first_loss"] = losses.empty() ? "0" : fmt_g(losses.front());
    rec.info["final_loss"] = losses.empty() ? "0" : fmt_g(losses.back());
    rec.info["sampling_weights"] = "ema";

    // sampling uses the EMA shadow
    auto& ps = net->params();
    if (ema.shadow_.size() != ps.size()) throw std::logic_error("diffusion training produced no EMA state");
    for (size_t i = 0; i < ps.size(); ++i) ps[i]->value = ema.shadow_[i];
    return net;
}

void Experiment::train_diffusion() {
    if (state_->sampler_net) return;
    label_auxiliary();
    state_->sched = make_linear_schedule(cfg_.schedule_T, cfg_.schedule_beta_start, cfg_.schedule_beta_end);
    const std::string dep = combine_hashes(
        {state_->corpus_hash, state_->aux_hash,
         config_subset_hash({"schedule.", "denoiser.", "diffusion.", "seeds.diffusion-train"})});
    const std::string ckpt = out_path("checkpoints/diffusion.ckpt");

    run_stage(
        "diffusion", dep, ckpt,
        [&](StageRecord& rec) {
            const io::Checkpoint c = io::load_checkpoint(ckpt);
            if (c.meta.at("stage") != "diffusion" || c.meta.at("dep_hash") != dep) return false;
            check_schedule_meta(c, cfg_);
            DenoiserConfig dc;
            dc.image_size = cfg_.image_size;
            dc.channels = cfg_.channels;
            dc.base_width = cfg_.denoiser_base_width;
            dc.depth = cfg_.denoiser_depth;
            dc.num_classes = state_->target->num_classes();
            dc.time_embed_dim = cfg_.denoiser_time_embed;
            state_->sampler_net = denoiser_from_checkpoint(c, dc, /*use_ema=*/true);
            state_->diffusion_hash = io::content_hash_file(ckpt);
            rec.output_hash = state_->diffusion_hash;
            rec.artifacts = {"checkpoints/diffusion.ckpt"};
            rec.info["sampling_weights"] = "ema";
            return true;
        },
        [&](StageRecord& rec) {
            state_->sampler_net = train_denoiser_on(state_->split->aux.images, state_->aux_labels,
                                                    "checkpoints/diffusion.ckpt", dep, rec,
                                                    state_->diffusion_hash);
        });
}

// ---- sampling + recovery -----------------------------------------------------------

Tensorf Experiment::raw_samples(Denoiser<float>& net, const std::string& diffusion_hash, int label,
                                double omega) {
    // the weights hash is part of the name so sweep retrains never shadow the
    // main run's caches
    char name[128];
    std::snprintf(name, sizeof name, "samples/raw_%.12s_label_%d_omega_%s.ckpt", diffusion_hash.c_str(),
                  label, fmt_g(omega).c_str());
    const std::string path = out_path(name);
    if (const auto it = state_->raw_cache.find(path); it != state_->raw_cache.end()) return it->second;

    // the same label shares one noise seed across omegas, so guidance-strength
    // ablations start from identical initial noise
    const uint64_t seed = Rng(cfg_.seed("sampler")).stream("label/" + std::to_string(label)).next();
    const auto matches = [&](const io::Checkpoint& c) {
        return c.meta.at("diffusion_hash") == diffusion_hash && c.meta.at("label") == std::to_string(label) &&
               c.meta.at("omega") == fmt_exact(omega) && c.meta.at("seed") == std::to_string(seed) &&
               c.meta.at("count") == std::to_string(cfg_.sampler_candidates);
    };
    if (io::file_exists(path)) {
        try {
            const io::Checkpoint c = io::load_checkpoint(path);
            if (matches(c)) {
                const Tensorf* t = c.find("raw");
                if (t) {
                    state_->raw_cache[path] = *t;
                    return *t;
                }
            }
        } catch (const std::exception&) {
            // unreadable cache entry: regenerate below
        }
    }

    diffusion::SamplerConfig sc;
    sc.omega = omega;
    sc.num_samples = cfg_.sampler_candidates;
    sc.seed = seed;
    Tensorf raw = diffusion::sample<float>(net, state_->sched, label, sc, cfg_.channels, cfg_.image_size);

    io::Checkpoint c;
    c.meta = {{"stage", "samples"},
              {"diffusion_hash", diffusion_hash},
              {"label", std::to_string(label)},
              {"omega", fmt_exact(omega)},
              {"seed", std::to_string(seed)},
              {"count", std::to_string(cfg_.sampler_candidates)}};
    c.tensors.emplace_back("raw", raw);
    io::save_checkpoint(path, c);
    state_->raw_cache[path] = raw;
    return raw;
}

std::vector<attack::RecoveredLabel> Experiment::recover_into(const std::string& rel_dir,
                                                             const std::vector<int>& labels, double omega,
                                                             double gamma, Denoiser<float>& net,
                                                             const std::string& diffusion_hash,
                                                             StageRecord& rec) {
    io::ensure_dir(out_path(rel_dir));
    attack::RecoverConfig rc;
    rc.candidates_per_label = cfg_.sampler_candidates;
    rc.top_k = cfg_.attack_top_k;
    rc.gamma = gamma;
    rc.weight_queries = cfg_.attack_queries;
    rc.transform.crop_fraction = cfg_.attack_crop_fraction;
    rc.transform.p_hflip = cfg_.attack_p_hflip;
    rc.transform.p_vflip = cfg_.attack_p_vflip;
    rc.seed = cfg_.seed("transforms");
    rc.validate();

    std::vector<attack::RecoveredLabel> out;
    ordered_json summary;
    summary["format"] = "dmi-recover-v1";
    summary["dep_hash"] = rec.dep_hash;
    summary["omega"] = fmt_exact(omega);
    summary["gamma"] = fmt_exact(gamma);
    summary["top_k"] = rc.top_k;
    summary["labels"] = ordered_json::array();
    int all_zero_count = 0;

    for (int label : labels) {
        const Tensorf raw = raw_samples(net, diffusion_hash, label, omega);
        attack::RecoveredLabel r = attack::recover_label(*state_->target, raw, label, rc);

        const std::string ldir = rel_dir + "/label_" + std::to_string(label);
        io::ensure_dir(out_path(ldir));
        ordered_json jl;
        jl["label"] = label;
        jl["selected"] = r.selected;
        jl["weights"] = r.weights;
        jl["all_weights"] = r.all_weights;
        jl["all_zero"] = r.all_zero;
        ordered_json files = ordered_json::array(), hashes = ordered_json::array();
        for (int k = 0; k < rc.top_k; ++k) {
            const std::string f = ldir + "/rank_" + std::to_string(k + 1) + ".png";
            io::write_png(out_path(f), batch_row(r.images, k));
            files.push_back(f);
            hashes.push_back(io::content_hash_file(out_path(f)));
        }
        const std::string grid = ldir + "/grid.png";
        io::write_png(out_path(grid), io::image_grid(r.images, rc.top_k));
        jl["files"] = std::move(files);
        jl["file_hashes"] = std::move(hashes);
        summary["labels"].push_back(std::move(jl));
        rec.artifacts.push_back(grid);
        if (r.all_zero) ++all_zero_count;
        out.push_back(std::move(r));
    }

    const std::string spath = out_path(rel_dir + "/recover.json");
    io::write_text_file(spath, summary.dump(2) + "\n");
    rec.artifacts.insert(rec.artifacts.begin(), rel_dir + "/recover.json");
    rec.output_hash = io::content_hash_file(spath);
    rec.info["labels"] = std::to_string(labels.size());
    rec.info["omega"] = fmt_g(omega);
    rec.info["gamma"] = fmt_g(gamma);
    rec.info["all_zero_labels"] = std::to_string(all_zero_count);
    return out;
}

void Experiment::recover(std::vector<int> labels) {
    train_diffusion();
    if (labels.empty()) labels = cfg_.parse_attack_labels(state_->target->num_classes());
    if (state_->recovered && labels == state_->recovered_labels) return;

    std::string labels_key;
    for (int l : labels) labels_key += std::to_string(l) + ",";
    const std::string dep = combine_hashes(
        {state_->diffusion_hash, state_->target_hash,
         config_subset_hash({"sampler.", "attack.", "seeds.sampler", "seeds.transforms"}),
         io::content_hash(labels_key.data(), labels_key.size())});
    const std::string spath = out_path("recovered/recover.json");

    run_stage(
        "recover", dep, spath,
        [&](StageRecord& rec) {
            const auto j = ordered_json::parse(io::read_text_file(spath));
            if (j.value("dep_hash", "") != dep) return false;
            // adopt only if every recorded image file is still intact
            for (const auto& jl : j.at("labels")) {
                const auto files = jl.at("files").get<std::vector<std::string>>();
                const auto hashes = jl.at("file_hashes").get<std::vector<std::string>>();
                if (files.size() != hashes.size()) return false;
                for (size_t i = 0; i < files.size(); ++i)
                    if (!io::file_exists(out_path(files[i])) ||
                        io::content_hash_file(out_path(files[i])) != hashes[i])
                        return false;
            }
            rec.output_hash = io::content_hash_file(spath);
            rec.artifacts = {"recovered/recover.json"};
            rec.info["labels"] = std::to_string(labels.size());
            return true;
        },
        [&](StageRecord& rec) {
            recover_into("recovered", labels, cfg_.sampler_omega, cfg_.attack_gamma, *state_->sampler_net,
                         state_->diffusion_hash, rec);
        });

    state_->recovered = true;
    state_->recovered_labels = labels;
    state_->recover_hash = manifest_.stages.back().output_hash;
}

// ---- evaluation ----------------------------------------------------------------------

metrics::MetricReport Experiment::evaluate_dir(const std::string& rel_dir, const std::vector<int>& labels) {
    train_eval();
    if (state_->private_by_label.empty()) {
        const LabeledDataset& train = state_->split->target_train;
        for (int k = 0; k < train.num_classes(); ++k) {
            std::vector<int> idx;
            for (int i = 0; i < train.size(); ++i)
                if (train.labels[static_cast<size_t>(i)] == k) idx.push_back(i);
            state_->private_by_label[k] = train.subset(idx).images;
        }
    }

    std::vector<attack::RecoveredLabel> recs;
    for (int label : labels) {
        Tensorf imgs({cfg_.attack_top_k, cfg_.channels, cfg_.image_size, cfg_.image_size});
        const int64_t per = imgs.numel() / cfg_.attack_top_k;
        for (int k = 0; k < cfg_.attack_top_k; ++k) {
            const std::string f =
                out_path(rel_dir + "/label_" + std::to_string(label) + "/rank_" + std::to_string(k + 1) + ".png");
            const Tensorf img = io::read_png(f);
            if (img.dim(0) != cfg_.channels || img.dim(1) != cfg_.image_size || img.dim(2) != cfg_.image_size)
                throw std::runtime_error("evaluate: unexpected image shape in " + f);
            std::copy(img.data(), img.data() + per, imgs.data() + k * per);
        }
        attack::RecoveredLabel r;
        r.label = label;
        r.images = std::move(imgs);
        recs.push_back(std::move(r));
    }

    const EvalModel& em = *state_->eval;
    const metrics::TopnFn topn = [&em](const Tensorf& x, int n) { return em.predict_topn(x, n); };
    const metrics::FeatureFn feats = [&em](const Tensorf& x) { return em.penultimate_features(x); };
    const metrics::StackFn stack = [&em](const Tensorf& x) { return em.feature_stack(x); };
    return metrics::evaluate_recoveries(topn, feats, stack, recs, state_->private_by_label,
                                        em.num_classes(), cfg_.split_mode, "eval-residual-stack3");
}

metrics::MetricReport Experiment::evaluate() {
    if (state_->report) return *state_->report;
    recover();
    train_eval();
    const std::string dep = combine_hashes({state_->recover_hash, state_->eval_hash, state_->corpus_hash});

    run_stage("evaluate", dep, "", nullptr, [&](StageRecord& rec) {
        const metrics::MetricReport rep = evaluate_dir("recovered", state_->recovered_labels);
        const std::string records = metrics::to_records(rep);
        io::write_text_file(out_path("metrics.jsonl"), records);
        io::write_text_file(out_path("metrics_table.txt"), metrics::to_table(rep));
        rec.output_hash = io::content_hash(records.data(), records.size());
        rec.artifacts = {"metrics.jsonl", "metrics_table.txt"};
        rec.info["acc_top1"] = fmt_g(rep.aggregate.acc_top1);
        rec.info["acc_top5"] = fmt_g(rep.aggregate.acc_top5);
        rec.info["knn_dist"] = fmt_g(rep.aggregate.knn_dist);
        rec.info["perceptual"] = fmt_g(rep.aggregate.perceptual);
        const bool certified = state_->eval->test_accuracy() > state_->target->test_accuracy();
        rec.info["certified"] = certified ? "true" : "false";
        if (!certified)
            rec.info["warning"] = "metrics not certified: evaluation model does not beat the target accuracy";
        state_->report = rep;
    });
    return *state_->report;
}

// ---- report -----------------------------------------------------------------------------

void Experiment::emit_report() {
    const metrics::MetricReport rep = evaluate();
    const std::string dep = combine_hashes({state_->recover_hash, state_->eval_hash});

    run_stage("report", dep, "", nullptr, [&](StageRecord& rec) {
        // side-by-side grids: top row = private exemplars, bottom = recoveries
        const LabeledDataset& train = state_->split->target_train;
        for (int label : state_->recovered_labels) {
            std::vector<int> idx;
            for (int i = 0; i < train.size() && static_cast<int>(idx.size()) < cfg_.attack_top_k; ++i)
                if (train.labels[static_cast<size_t>(i)] == label) idx.push_back(i);
            const Tensorf real = train.subset(idx).images;
            const int m = real.dim(0);

            Tensorf combined({m + cfg_.attack_top_k, cfg_.channels, cfg_.image_size, cfg_.image_size});
            const int64_t per = combined.numel() / combined.dim(0);
            std::copy(real.data(), real.data() + m * per, combined.data());
            for (int k = 0; k < cfg_.attack_top_k; ++k) {
                const std::string f = out_path("recovered/label_" + std::to_string(label) + "/rank_" +
                                               std::to_string(k + 1) + ".png");
                const Tensorf img = io::read_png(f);
                std::copy(img.data(), img.data() + per, combined.data() + (m + k) * per);
            }
            const std::string grid = "report/compare_label_" + std::to_string(label) + ".png";
            io::write_png(out_path(grid), io::image_grid(combined, cfg_.attack_top_k));
            rec.artifacts.push_back(grid);
        }

        std::ostringstream os;
        os << "Label-only model inversion: run report\n";
        os << "=======================================\n\n";
        os << "config_hash:     " << manifest_.config_hash << "\n";
        os << "split_mode:      " << cfg_.split_mode << "\n";
        os << "labels_attacked: " << state_->recovered_labels.size() << "\n";
        os << "candidates:      " << cfg_.sampler_candidates << "  top_k: " << cfg_.attack_top_k << "\n";
        os << "omega:           " << fmt_g(cfg_.sampler_omega) << "  gamma: " << fmt_g(cfg_.attack_gamma)
           << "\n";
        os << "target_accuracy: " << fmt_g(state_->target->test_accuracy()) << "  (" << state_->target->arch_id()
           << ")\n";
        os << "eval_accuracy:   " << fmt_g(state_->eval->test_accuracy()) << "  (" << state_->eval->arch_id()
           << ")\n";
        const bool certified = state_->eval->test_accuracy() > state_->target->test_accuracy();
        os << "certified:       " << (certified ? "true" : "false") << "\n";
        if (!certified) os << "WARNING: evaluation model does not beat the target; metrics not certified.\n";
        os << "\n" << metrics::to_table(rep) << "\n";
        os << "Per-label comparison grids (top: private exemplars, bottom: recoveries):\n";
        for (int label : state_->recovered_labels)
            os << "  report/compare_label_" << label << ".png\n";

        for (const char* axis : {"gamma", "omega", "aux_quantity"}) {
            const std::string table = out_path("report/sweep_" + std::string(axis) + "_table.txt");
            if (io::file_exists(table)) os << "\n" << io::read_text_file(table);
        }

        const std::string path = out_path("report/report.txt");
        io::write_text_file(path, os.str());
        rec.artifacts.insert(rec.artifacts.begin(), "report/report.txt");
        rec.output_hash = io::content_hash_file(path);
    });
}

// ---- full pipeline ------------------------------------------------------------------------

const RunManifest& Experiment::run_all() {
    prepare_corpus();
    train_target();
    train_eval();
    label_auxiliary();
    train_diffusion();
    recover();
    evaluate();
    emit_report();
    return manifest_;
}

RunManifest run_experiment(const RunConfig& cfg, bool resume) {
    Experiment e(cfg, resume);
    return e.run_all();
}

// ---- sweeps ----------------------------------------------------------------------------------

std::vector<SweepPoint> Experiment::sweep_points(const std::string& axis) {
    const std::vector<int> labels = cfg_.parse_attack_labels(state_->target->num_classes());
    std::vector<SweepPoint> points;

    if (axis == "gamma") {
        for (double g : RunConfig::parse_double_list(cfg_.sweep_gamma, "sweep.gamma")) {
            const std::string dir = "sweep/gamma_" + fmt_g(g);
            StageRecord rec;  // sub-record folded into the sweep stage
            rec.dep_hash = combine_hashes({state_->diffusion_hash, fmt_exact(g)});
            recover_into(dir, labels, cfg_.sampler_omega, g, *state_->sampler_net, state_->diffusion_hash,
                         rec);
            points.push_back({g, evaluate_dir(dir, labels).aggregate});
        }
        return points;
    }
    if (axis == "omega") {
        for (double w : RunConfig::parse_double_list(cfg_.sweep_omega, "sweep.omega")) {
            const std::string dir = "sweep/omega_" + fmt_g(w);
            StageRecord rec;
            rec.dep_hash = combine_hashes({state_->diffusion_hash, fmt_exact(w)});
            recover_into(dir, labels, w, cfg_.attack_gamma, *state_->sampler_net, state_->diffusion_hash,
                         rec);
            points.push_back({w, evaluate_dir(dir, labels).aggregate});
        }
        return points;
    }
    if (axis == "aux-quantity") {
        const std::vector<double> fracs =
            RunConfig::parse_double_list(cfg_.sweep_aux_fractions, "sweep.aux_fractions");
        // bucket aux rows by their predicted label, preserving corpus order
        std::vector<std::vector<int>> buckets(static_cast<size_t>(state_->target->num_classes()));
        for (size_t i = 0; i < state_->aux_labels.size(); ++i)
            buckets[static_cast<size_t>(state_->aux_labels[i])].push_back(static_cast<int>(i));

        for (double f : fracs) {
            if (!(f > 0.0 && f <= 1.0))
                throw std::invalid_argument("sweep.aux_fractions values must be in (0, 1]");
            std::vector<int> rows;
            for (const auto& b : buckets) {
                const int take = static_cast<int>(std::ceil(f * static_cast<double>(b.size())));
                for (int i = 0; i < take; ++i) rows.push_back(b[static_cast<size_t>(i)]);
            }
            std::sort(rows.begin(), rows.end());
            if (static_cast<int>(rows.size()) < cfg_.diffusion_batch)
                throw std::invalid_argument("aux-quantity sweep: fraction " + fmt_g(f) +
                                            " leaves fewer samples than one diffusion batch");
            const LabeledDataset sub = state_->split->aux.subset(rows);
            std::vector<int> sub_labels(rows.size());
            for (size_t i = 0; i < rows.size(); ++i)
                sub_labels[i] = state_->aux_labels[static_cast<size_t>(rows[i])];

            const std::string tag = "aux_" + fmt_g(f);
            io::ensure_dir(out_path("sweep/" + tag));
            StageRecord rec;
            rec.dep_hash = combine_hashes({state_->corpus_hash, state_->aux_hash, fmt_exact(f),
                                           config_subset_hash({"schedule.", "denoiser.", "diffusion."})});
            std::string dhash;
            auto net = train_denoiser_on(sub.images, sub_labels, "sweep/" + tag + "/diffusion.ckpt",
                                         rec.dep_hash, rec, dhash);
            StageRecord rrec;
            rrec.dep_hash = combine_hashes({dhash, state_->target_hash});
            const std::string dir = "sweep/" + tag + "/recovered";
            recover_into(dir, labels, cfg_.sampler_omega, cfg_.attack_gamma, *net, dhash, rrec);
            points.push_back({f, evaluate_dir(dir, labels).aggregate});
        }
        return points;
    }
    throw std::invalid_argument("sweep: unknown axis '" + axis + "' (gamma | omega | aux-quantity)");
}

void Experiment::write_sweep_outputs(const std::string& axis, const std::vector<SweepPoint>& points,
                                     StageRecord& rec) {
    const std::string tag = axis == "aux-quantity" ? "aux_quantity" : axis;
    const std::string base = "report/sweep_" + tag;

    std::string records;
    for (const auto& p : points) {
        ordered_json j;
        j["axis"] = axis;
        j["value"] = p.value;
        j["acc_top1"] = p.aggregate.acc_top1;
        j["acc_top5"] = p.aggregate.acc_top5;
        j["knn_dist"] = p.aggregate.knn_dist;
        j["perceptual"] = p.aggregate.perceptual;
        records += j.dump() + "\n";
    }
    io::write_text_file(out_path(base + ".jsonl"), records);

    std::ostringstream os;
    os << "Sweep over " << axis << "\n";
    char line[160];
    std::snprintf(line, sizeof line, "%12s %10s %10s %12s %12s\n", axis.c_str(), "top-1", "top-5", "knn-dist",
                  "perceptual");
    os << line;
    for (const auto& p : points) {
        std::snprintf(line, sizeof line, "%12s %10.4f %10.4f %12.4f %12.4f\n", fmt_g(p.value).c_str(),
                      p.aggregate.acc_top1, p.aggregate.acc_top5, p.aggregate.knn_dist,
                      p.aggregate.perceptual);
        os << line;
    }
    io::write_text_file(out_path(base + "_table.txt"), os.str());

    std::vector<double> xs, top1, top5, perc;
    for (const auto& p : points) {
        xs.push_back(p.value);
        top1.push_back(p.aggregate.acc_top1);
        top5.push_back(p.aggregate.acc_top5);
        perc.push_back(p.aggregate.perceptual);
    }
    io::write_text_file(out_path(base + ".svg"),
                        render_line_chart_svg("sweep: " + axis, axis, {"top-1", "top-5", "perceptual"}, xs,
                                              {top1, top5, perc}));

    rec.artifacts = {base + ".jsonl", base + "_table.txt", base + ".svg"};
    rec.output_hash = io::content_hash_file(out_path(base + ".jsonl"));
    for (const auto& p : points)
        rec.info[fmt_g(p.value)] = "top1=" + fmt_g(p.aggregate.acc_top1) +
                                   " top5=" + fmt_g(p.aggregate.acc_top5) +
                                   " knn=" + fmt_g(p.aggregate.knn_dist) +
                                   " perc=" + fmt_g(p.aggregate.perceptual);
}

std::vector<SweepPoint> Experiment::run_sweep(const std::string& axis) {
    train_diffusion();
    train_eval();
    io::ensure_dir(out_path("sweep"));
    const std::string dep = combine_hashes(
        {state_->diffusion_hash, state_->eval_hash,
         config_subset_hash({"sampler.", "attack.", "sweep.", "seeds.sampler", "seeds.transforms"})});

    std::vector<SweepPoint> points;
    run_stage("sweep-" + axis, dep, "", nullptr, [&](StageRecord& rec) {
        points = sweep_points(axis);
        write_sweep_outputs(axis, points, rec);
    });
    return points;
}

// ---- accessors ------------------------------------------------------------------------------

const SplitResult& Experiment::split() {
    prepare_corpus();
    return *state_->split;
}

const TargetModel& Experiment::target() {
    train_target();
    return *state_->target;
}

const EvalModel& Experiment::eval_model() {
    train_eval();
    return *state_->eval;
}

// ---- svg line chart ---------------------------------------------------------------------------

std::string render_line_chart_svg(const std::string& title, const std::string& x_label,
                                  const std::vector<std::string>& series_names, const std::vector<double>& xs,
                                  const std::vector<std::vector<double>>& series) {
    if (series_names.size() != series.size())
        throw std::invalid_argument("chart: series/name count mismatch");
    for (const auto& s : series)
        if (s.size() != xs.size()) throw std::invalid_argument("chart: series length mismatch");
    if (xs.empty()) throw std::invalid_argument("chart: no data");

    const double W = 640, H = 400, L = 70, R = 20, T = 40, B = 50;
    double xmin = xs[0], xmax = xs[0], ymin = 0.0, ymax = 0.0;
    for (double x : xs) {
        xmin = std::min(xmin, x);
        xmax = std::max(xmax, x);
    }
    bool first = true;
    for (const auto& s : series)
        for (double y : s) {
            ymin = first ? y : std::min(ymin, y);
            ymax = first ? y : std::max(ymax, y);
            first = false;
        }
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax == ymin) ymax = ymin + 1.0;
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    const auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
    const auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };
    const auto num = [](double v) {
        char b[32];
        std::snprintf(b, sizeof b, "%.4g", v);
        return std::string(b);
    };
    const char* colors[] = {"#1f6fb2", "#c23b22", "#2e8b57", "#8860b2", "#b8860b"};

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" font-family=\"monospace\" font-size=\"12\">\n";
    os << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title
       << "</text>\n";
    // axes
    os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << x_label
       << "</text>\n";
    // ticks: x at data points, y at 5 even divisions
    for (double x : xs) {
        os << "<line x1=\"" << px(x) << "\" y1=\"" << H - B << "\" x2=\"" << px(x) << "\" y2=\"" << H - B + 5
           << "\" stroke=\"black\"/>\n";
        os << "<text x=\"" << px(x) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << num(x)
           << "</text>\n";
    }
    for (int i = 0; i <= 5; ++i) {
        const double y = ymin + (ymax - ymin) * i / 5.0;
        os << "<line x1=\"" << L - 5 << "\" y1=\"" << py(y) << "\" x2=\"" << L << "\" y2=\"" << py(y)
           << "\" stroke=\"black\"/>\n";
        os << "<text x=\"" << L - 8 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">" << num(y)
           << "</text>\n";
    }
    // series
    for (size_t s = 0; s < series.size(); ++s) {
        const char* color = colors[s % 5];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (size_t i = 0; i < xs.size(); ++i) os << px(xs[i]) << "," << py(series[s][i]) << " ";
        os << "\"/>\n";
        for (size_t i = 0; i < xs.size(); ++i)
            os << "<circle cx=\"" << px(xs[i]) << "\" cy=\"" << py(series[s][i]) << "\" r=\"3\" fill=\""
               << color << "\"/>\n";
        os << "<text x=\"" << W - R - 5 << "\" y=\"" << T + 16 * static_cast<double>(s + 1)
           << "\" text-anchor=\"end\" fill=\"" << color << "\">" << series_names[s] << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace dmi::harness
