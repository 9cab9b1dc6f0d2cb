#include "dmi/harness/config.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "dmi/core/rng.hpp"
#include "dmi/io.hpp"

namespace dmi::harness {
namespace {

struct KeyDef {
    const char* name;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

int parse_int(const std::string& v, const char* key) {
    try {
        size_t at = 0;
        const int x = std::stoi(v, &at);
        if (at != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw std::invalid_argument(std::string("config: key '") + key + "' expects an integer, got '" + v + "'");
    }
}

uint64_t parse_u64(const std::string& v, const char* key) {
    try {
        size_t at = 0;
        const uint64_t x = std::stoull(v, &at);
        if (at != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw std::invalid_argument(std::string("config: key '") + key + "' expects an unsigned integer, got '" +
                                    v + "'");
    }
}

double parse_double(const std::string& v, const char* key) {
    try {
        size_t at = 0;
        const double x = std::stod(v, &at);
        if (at != v.size() || !std::isfinite(x)) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw std::invalid_argument(std::string("config: key '") + key + "' expects a number, got '" + v + "'");
    }
}

std::string fmt_double(double x) {
    std::ostringstream os;
    os.precision(17);
    os << x;
    return os.str();
}

#define KEY_STR(keyname, field)                                                      \
    KeyDef {                                                                         \
        keyname, [](RunConfig& c, const std::string& v) { c.field = v; },            \
            [](const RunConfig& c) { return c.field; }                               \
    }
#define KEY_INT(keyname, field)                                                      \
    KeyDef {                                                                         \
        keyname, [](RunConfig& c, const std::string& v) { c.field = parse_int(v, keyname); }, \
            [](const RunConfig& c) { return std::to_string(c.field); }               \
    }
#define KEY_DBL(keyname, field)                                                      \
    KeyDef {                                                                         \
        keyname, [](RunConfig& c, const std::string& v) { c.field = parse_double(v, keyname); }, \
            [](const RunConfig& c) { return fmt_double(c.field); }                   \
    }

const std::vector<KeyDef>& key_table() {
    static const std::vector<KeyDef> keys = [] {
        std::vector<KeyDef> k;
        k.push_back(KEY_STR("corpus.kind", corpus_kind));
        k.push_back(KEY_STR("corpus.train_dir", corpus_train_dir));
        k.push_back(KEY_STR("corpus.aux_dir", corpus_aux_dir));
        k.push_back(KEY_INT("corpus.num_classes", corpus_num_classes));
        k.push_back(KEY_INT("corpus.per_class", corpus_per_class));
        k.push_back(KEY_INT("corpus.aux_per_class", corpus_aux_per_class));
        k.push_back(KEY_DBL("corpus.hue_jitter", corpus_hue_jitter));
        k.push_back(KEY_INT("corpus.image_size", image_size));
        k.push_back(KEY_INT("corpus.channels", channels));
        k.push_back(KEY_STR("split.mode", split_mode));
        k.push_back(KEY_INT("split.train_per_class", split_train_per_class));
        k.push_back(KEY_INT("split.test_per_class", split_test_per_class));
        k.push_back(KEY_INT("target.epochs", target_epochs));
        k.push_back(KEY_INT("target.batch_size", target_batch));
        k.push_back(KEY_DBL("target.lr", target_lr));
        k.push_back(KEY_DBL("target.weight_decay", target_weight_decay));
        k.push_back(KEY_INT("eval.epochs", eval_epochs));
        k.push_back(KEY_INT("eval.batch_size", eval_batch));
        k.push_back(KEY_DBL("eval.lr", eval_lr));
        k.push_back(KEY_DBL("eval.weight_decay", eval_weight_decay));
        k.push_back(KEY_INT("schedule.steps", schedule_T));
        k.push_back(KEY_DBL("schedule.beta_start", schedule_beta_start));
        k.push_back(KEY_DBL("schedule.beta_end", schedule_beta_end));
        k.push_back(KEY_INT("denoiser.base_width", denoiser_base_width));
        k.push_back(KEY_INT("denoiser.depth", denoiser_depth));
        k.push_back(KEY_INT("denoiser.time_embed_dim", denoiser_time_embed));
        k.push_back(KEY_INT("diffusion.epochs", diffusion_epochs));
        k.push_back(KEY_INT("diffusion.batch_size", diffusion_batch));
        k.push_back(KEY_DBL("diffusion.lr", diffusion_lr));
        k.push_back(KEY_DBL("diffusion.lr_late", diffusion_lr_late));
        k.push_back(KEY_DBL("diffusion.label_dropout", diffusion_label_dropout));
        k.push_back(KEY_DBL("diffusion.weight_decay", diffusion_weight_decay));
        k.push_back(KEY_DBL("diffusion.ema_decay", diffusion_ema_decay));
        k.push_back(KEY_INT("diffusion.ema_warmup", diffusion_ema_warmup));
        k.push_back(KEY_INT("diffusion.checkpoint_every", diffusion_checkpoint_every));
        k.push_back(KEY_DBL("sampler.omega", sampler_omega));
        k.push_back(KEY_INT("sampler.candidates", sampler_candidates));
        k.push_back(KEY_DBL("attack.gamma", attack_gamma));
        k.push_back(KEY_INT("attack.top_k", attack_top_k));
        k.push_back(KEY_INT("attack.queries", attack_queries));
        k.push_back(KEY_DBL("attack.crop_fraction", attack_crop_fraction));
        k.push_back(KEY_DBL("attack.p_hflip", attack_p_hflip));
        k.push_back(KEY_DBL("attack.p_vflip", attack_p_vflip));
        k.push_back(KEY_STR("attack.labels", attack_labels));
        k.push_back(KEY_STR("sweep.gamma", sweep_gamma));
        k.push_back(KEY_STR("sweep.omega", sweep_omega));
        k.push_back(KEY_STR("sweep.aux_fractions", sweep_aux_fractions));
        k.push_back(KEY_STR("out.dir", out_dir));
        k.push_back(KeyDef{"seeds.master",
                           [](RunConfig& c, const std::string& v) { c.seed_master = parse_u64(v, "seeds.master"); },
                           [](const RunConfig& c) { return std::to_string(c.seed_master); }});
        // seeds.<name> overrides are dynamic; see is_seed_key below.
        return k;
    }();
    return keys;
}

// seed override keys are handled separately because their set is dynamic
const std::vector<std::string>& seed_names() {
    static const std::vector<std::string> names = {"corpus",   "target-train", "eval-train",
                                                   "diffusion-train", "sampler",      "transforms"};
    return names;
}

bool is_seed_key(const std::string& key, std::string& name_out) {
    if (key.rfind("seeds.", 0) != 0) return false;
    const std::string name = key.substr(6);
    if (name == "master") return false;
    for (const auto& n : seed_names())
        if (n == name) {
            name_out = name;
            return true;
        }
    return false;
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig RunConfig::from_file(const std::string& path) { return from_text(io::read_text_file(path)); }

RunConfig RunConfig::from_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: line " + std::to_string(lineno) + " is not key=value: '" + line +
                                        "'");
        cfg.apply_override(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

void RunConfig::apply_override(const std::string& key, const std::string& value) {
    std::string seed_name;
    if (is_seed_key(key, seed_name)) {
        seed_overrides[seed_name] = parse_u64(value, key.c_str());
        return;
    }
    for (const auto& def : key_table())
        if (key == def.name) {
            def.set(*this, value);
            return;
        }
    std::string known;
    for (const auto& def : key_table()) known += std::string("  ") + def.name + "\n";
    for (const auto& n : seed_names()) known += "  seeds." + n + "\n";
    throw std::invalid_argument("config: unknown key '" + key + "'. Known keys:\n" + known);
}

void RunConfig::validate() const {
    if (corpus_kind != "synthetic" && corpus_kind != "directory")
        throw std::invalid_argument("config: corpus.kind must be synthetic or directory");
    if (corpus_kind == "directory" && corpus_train_dir.empty())
        throw std::invalid_argument("config: corpus.train_dir required for directory corpora");
    if (split_mode != "overlap" && split_mode != "nonoverlap")
        throw std::invalid_argument("config: split.mode must be overlap or nonoverlap");
    if (corpus_kind == "directory" && split_mode == "nonoverlap" && corpus_aux_dir.empty())
        throw std::invalid_argument("config: corpus.aux_dir required for nonoverlap directory runs");
    if (image_size < 16 || image_size % 16 != 0)
        throw std::invalid_argument("config: corpus.image_size must be a positive multiple of 16");
    if (channels != 1 && channels != 3) throw std::invalid_argument("config: corpus.channels must be 1 or 3");
    if (corpus_num_classes < 2) throw std::invalid_argument("config: corpus.num_classes must be >= 2");
    if (!(corpus_hue_jitter >= 0.0 && corpus_hue_jitter <= 1.0))
        throw std::invalid_argument("config: corpus.hue_jitter must be in [0, 1]");
    if (split_train_per_class < 1 || split_test_per_class < 1)
        throw std::invalid_argument("config: split sizes must be >= 1");
    if (schedule_T < 1) throw std::invalid_argument("config: schedule.steps must be >= 1");
    if (attack_top_k < 1 || attack_top_k > sampler_candidates)
        throw std::invalid_argument("config: attack.top_k must be in [1, sampler.candidates]");
    if (out_dir.empty()) throw std::invalid_argument("config: out.dir must not be empty");
    (void)parse_double_list(sweep_gamma, "sweep.gamma");
    (void)parse_double_list(sweep_omega, "sweep.omega");
    (void)parse_double_list(sweep_aux_fractions, "sweep.aux_fractions");
}

uint64_t RunConfig::seed(const std::string& stream_name) const {
    bool known = false;
    for (const auto& n : seed_names()) known = known || n == stream_name;
    if (!known) throw std::invalid_argument("config: unknown seed stream '" + stream_name + "'");
    const auto it = seed_overrides.find(stream_name);
    if (it != seed_overrides.end()) return it->second;
    return Rng(seed_master).stream("seed/" + stream_name).next();
}

std::map<std::string, std::string> RunConfig::to_flat_map() const {
    std::map<std::string, std::string> m;
    for (const auto& def : key_table()) m[def.name] = def.get(*this);
    for (const auto& n : seed_names()) m["seeds." + n] = std::to_string(seed(n));
    return m;
}

std::string RunConfig::to_text() const {
    std::string out;
    for (const auto& [k, v] : to_flat_map()) out += k + " = " + v + "\n";
    return out;
}

std::string RunConfig::config_hash() const {
    const std::string t = to_text();
    return io::content_hash(t.data(), t.size());
}

std::vector<int> RunConfig::parse_attack_labels(int num_classes) const {
    std::vector<int> labels;
    if (attack_labels == "all") {
        for (int l = 0; l < num_classes; ++l) labels.push_back(l);
        return labels;
    }
    std::istringstream in(attack_labels);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        const int l = parse_int(tok, "attack.labels");
        if (l < 0 || l >= num_classes)
            throw std::invalid_argument("config: attack label " + tok + " out of range [0, " +
                                        std::to_string(num_classes) + ")");
        labels.push_back(l);
    }
    if (labels.empty()) throw std::invalid_argument("config: attack.labels resolved to an empty list");
    return labels;
}

std::vector<double> RunConfig::parse_double_list(const std::string& csv, const char* what) {
    std::vector<double> out;
    std::istringstream in(csv);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        out.push_back(parse_double(tok, what));
    }
    if (out.empty()) throw std::invalid_argument(std::string("config: ") + what + " must list at least one value");
    return out;
}

}  // namespace dmi::harness
