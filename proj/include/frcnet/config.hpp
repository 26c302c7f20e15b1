#pragma once

// Run configuration, its JSON form, named profiles and the architecture hash
// stored in checkpoints.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "frcnet/mean_teacher.hpp"
#include "frcnet/optim.hpp"

namespace frcnet {

using nlohmann::json;

struct DataConfig {
    std::string source = "synthetic"; // "synthetic" or "folder"
    std::string root;                 // folder source; falls back to $FRCNET_DATA_ROOT
    std::string layout = "generic";   // kvasir | isic | generic
    std::string manifest;             // optional split manifest to reuse
    double ratio = 0.1;
    double test_fraction = 0.2;
    std::size_t synth_count = 200;
    std::size_t synth_size = 64;
    std::uint64_t synth_seed = 0;
};

struct AblationFlags {
    bool enable_fdc = true;
    bool enable_mrsc = true;
    bool enable_pix = true;
    bool fdc_low_only = false;
    bool fdc_high_only = false;

    bool any_consistency() const { return enable_fdc || enable_mrsc || enable_pix; }
};

struct TrainConfig {
    ModelConfig model;
    LossWeights loss{1.0, 0, 1e-5}; // warmup_steps 0 = warmup_fraction of the run
    double warmup_fraction = 0.4;
    AdamWConfig optimizer{2e-3, 0.9, 0.999, 1e-8, 1e-4};
    EmaConfig ema;
    std::size_t epochs = 10;
    std::size_t max_steps = 0; // overrides epochs when > 0
    std::size_t batch_labeled = 4;
    std::size_t batch_unlabeled = 4;
    std::uint64_t seed = 0;
    std::size_t eval_every = 100;
    std::size_t log_every = 10;
    DataConfig data;
    AblationFlags ablation;
    std::string freeze = "paper"; // "paper", "all", or comma-separated group names
    std::string init_checkpoint;  // pretrained student weights; enables the "paper" freeze mode
    bool student_noise = false;
    double noise_std = 0.02;
    bool deterministic = true;
    bool eval_teacher = false;
    std::string out_dir = "runs/frcnet";

    void validate() const {
        model.validate();
        optimizer.validate();
        if (!(ema.decay >= 0 && ema.decay < 1)) throw ConfigError("ema.decay must lie in [0, 1)");
        if (batch_labeled == 0 || batch_unlabeled == 0) throw ConfigError("batch sizes must be >= 1");
        if (epochs == 0 && max_steps == 0) throw ConfigError("either epochs or max_steps must be > 0");
        if (ablation.fdc_low_only && ablation.fdc_high_only) throw ConfigError("fdc_low_only and fdc_high_only are exclusive");
        if (!(warmup_fraction > 0 && warmup_fraction <= 1)) throw ConfigError("warmup_fraction must lie in (0, 1]");
        if (!(loss.lambda_max >= 0) || !(loss.smooth_eps > 0)) throw ConfigError("invalid loss weights");
        if (data.source != "synthetic" && data.source != "folder") throw ConfigError("data.source must be synthetic or folder");
        if (!(noise_std >= 0)) throw ConfigError("noise_std must be >= 0");
    }

    FreezePolicy freeze_policy() const {
        const bool pretrained = !init_checkpoint.empty();
        if (freeze == "paper") return FreezePolicy::paper(pretrained);
        if (freeze == "all") return FreezePolicy::all();
        std::vector<std::string> names;
        std::size_t start = 0;
        while (start <= freeze.size()) {
            const std::size_t comma = freeze.find(',', start);
            std::string tok = freeze.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
            if (!tok.empty()) names.push_back(tok);
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        auto p = FreezePolicy::custom(names);
        p.pretrained = pretrained;
        return p;
    }
};

// ---------------------------------------------------------------------------
// JSON

inline json to_json(const ModelConfig& m) {
    return json{{"backbone",
                 {{"input_size", m.backbone.input_size},
                  {"stage_channels", m.backbone.stage_channels},
                  {"decoder_channels", m.backbone.decoder_channels},
                  {"num_classes", m.backbone.num_classes},
                  {"adapter_dim", m.backbone.adapter_dim}}},
                {"fem", {{"patch_size", m.fem.patch_size}, {"heads", m.fem.heads}, {"mlp_ratio", m.fem.mlp_ratio}}},
                {"region",
                 {{"granularities", m.region.granularities},
                  {"projection", std::string(to_string(m.region.projection))},
                  {"normalize_rows", m.region.normalize_rows}}}};
}

inline json to_json(const TrainConfig& c) {
    return json{{"model", to_json(c.model)},
                {"loss",
                 {{"lambda_max", c.loss.lambda_max},
                  {"warmup_steps", c.loss.warmup_steps},
                  {"warmup_fraction", c.warmup_fraction},
                  {"smooth_eps", c.loss.smooth_eps}}},
                {"optimizer",
                 {{"lr", c.optimizer.lr},
                  {"beta1", c.optimizer.beta1},
                  {"beta2", c.optimizer.beta2},
                  {"eps", c.optimizer.eps},
                  {"weight_decay", c.optimizer.weight_decay}}},
                {"ema", {{"decay", c.ema.decay}, {"warmup", c.ema.warmup}}},
                {"train",
                 {{"epochs", c.epochs},
                  {"max_steps", c.max_steps},
                  {"batch_labeled", c.batch_labeled},
                  {"batch_unlabeled", c.batch_unlabeled},
                  {"seed", c.seed},
                  {"eval_every", c.eval_every},
                  {"log_every", c.log_every},
                  {"freeze", c.freeze},
                  {"init_checkpoint", c.init_checkpoint},
                  {"student_noise", c.student_noise},
                  {"noise_std", c.noise_std},
                  {"deterministic", c.deterministic},
                  {"eval_teacher", c.eval_teacher},
                  {"out_dir", c.out_dir}}},
                {"data",
                 {{"source", c.data.source},
                  {"root", c.data.root},
                  {"layout", c.data.layout},
                  {"manifest", c.data.manifest},
                  {"ratio", c.data.ratio},
                  {"test_fraction", c.data.test_fraction},
                  {"synth_count", c.data.synth_count},
                  {"synth_size", c.data.synth_size},
                  {"synth_seed", c.data.synth_seed}}},
                {"ablation",
                 {{"enable_fdc", c.ablation.enable_fdc},
                  {"enable_mrsc", c.ablation.enable_mrsc},
                  {"enable_pix", c.ablation.enable_pix},
                  {"fdc_low_only", c.ablation.fdc_low_only},
                  {"fdc_high_only", c.ablation.fdc_high_only}}}};
}

namespace detail {
template <typename V>
void read_opt(const json& j, const char* key, V& out) {
    if (j.contains(key)) out = j.at(key).get<V>();
}
} // namespace detail

inline ModelConfig model_config_from_json(const json& j, ModelConfig m = {}) {
    using detail::read_opt;
    if (j.contains("backbone")) {
        const json& b = j["backbone"];
        read_opt(b, "input_size", m.backbone.input_size);
        read_opt(b, "stage_channels", m.backbone.stage_channels);
        read_opt(b, "decoder_channels", m.backbone.decoder_channels);
        read_opt(b, "num_classes", m.backbone.num_classes);
        read_opt(b, "adapter_dim", m.backbone.adapter_dim);
    }
    if (j.contains("fem")) {
        const json& f = j["fem"];
        read_opt(f, "patch_size", m.fem.patch_size);
        read_opt(f, "heads", m.fem.heads);
        read_opt(f, "mlp_ratio", m.fem.mlp_ratio);
    }
    if (j.contains("region")) {
        const json& r = j["region"];
        read_opt(r, "granularities", m.region.granularities);
        if (r.contains("projection")) m.region.projection = parse_region_projection(r["projection"].get<std::string>());
        read_opt(r, "normalize_rows", m.region.normalize_rows);
    }
    return m;
}

/// Reads a (possibly partial) config on top of `base`. Unknown keys are ignored.
inline TrainConfig train_config_from_json(const json& j, TrainConfig c = {}) {
    using detail::read_opt;
    try {
        if (j.contains("model")) c.model = model_config_from_json(j["model"], c.model);
        if (j.contains("loss")) {
            const json& l = j["loss"];
            read_opt(l, "lambda_max", c.loss.lambda_max);
            read_opt(l, "warmup_steps", c.loss.warmup_steps);
            read_opt(l, "warmup_fraction", c.warmup_fraction);
            read_opt(l, "smooth_eps", c.loss.smooth_eps);
        }
        if (j.contains("optimizer")) {
            const json& o = j["optimizer"];
            read_opt(o, "lr", c.optimizer.lr);
            read_opt(o, "beta1", c.optimizer.beta1);
            read_opt(o, "beta2", c.optimizer.beta2);
            read_opt(o, "eps", c.optimizer.eps);
            read_opt(o, "weight_decay", c.optimizer.weight_decay);
        }
        if (j.contains("ema")) {
            read_opt(j["ema"], "decay", c.ema.decay);
            read_opt(j["ema"], "warmup", c.ema.warmup);
        }
        if (j.contains("train")) {
            const json& t = j["train"];
            read_opt(t, "epochs", c.epochs);
            read_opt(t, "max_steps", c.max_steps);
            read_opt(t, "batch_labeled", c.batch_labeled);
            read_opt(t, "batch_unlabeled", c.batch_unlabeled);
            read_opt(t, "seed", c.seed);
            read_opt(t, "eval_every", c.eval_every);
            read_opt(t, "log_every", c.log_every);
            read_opt(t, "freeze", c.freeze);
            read_opt(t, "init_checkpoint", c.init_checkpoint);
            read_opt(t, "student_noise", c.student_noise);
            read_opt(t, "noise_std", c.noise_std);
            read_opt(t, "deterministic", c.deterministic);
            read_opt(t, "eval_teacher", c.eval_teacher);
            read_opt(t, "out_dir", c.out_dir);
        }
        if (j.contains("data")) {
            const json& d = j["data"];
            read_opt(d, "source", c.data.source);
            read_opt(d, "root", c.data.root);
            read_opt(d, "layout", c.data.layout);
            read_opt(d, "manifest", c.data.manifest);
            read_opt(d, "ratio", c.data.ratio);
            read_opt(d, "test_fraction", c.data.test_fraction);
            read_opt(d, "synth_count", c.data.synth_count);
            read_opt(d, "synth_size", c.data.synth_size);
            read_opt(d, "synth_seed", c.data.synth_seed);
        }
        if (j.contains("ablation")) {
            const json& a = j["ablation"];
            read_opt(a, "enable_fdc", c.ablation.enable_fdc);
            read_opt(a, "enable_mrsc", c.ablation.enable_mrsc);
            read_opt(a, "enable_pix", c.ablation.enable_pix);
            read_opt(a, "fdc_low_only", c.ablation.fdc_low_only);
            read_opt(a, "fdc_high_only", c.ablation.fdc_high_only);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid config value: ") + e.what());
    }
    return c;
}

/// Desk-scale defaults: 64 px inputs, a four-stage encoder, granularities scaled
/// with the decoder resolution.
inline TrainConfig desk_profile() {
    TrainConfig c;
    c.model.region.granularities = {8, 12, 16};
    return c;
}

/// Published full-scale setting: 512 px, batch 10, 90 epochs, AdamW lr 5e-4, wd 1e-4.
inline TrainConfig paper_profile() {
    TrainConfig c;
    c.model.backbone.input_size = 512;
    c.model.backbone.stage_channels = {64, 128, 320, 512};
    c.model.backbone.decoder_channels = 64;
    c.model.backbone.adapter_dim = 64;
    c.model.fem.heads = 8;
    c.model.region.granularities = {16, 24, 32};
    c.optimizer.lr = 5e-4;
    c.optimizer.weight_decay = 1e-4;
    c.optimizer.beta1 = 0.9;
    c.epochs = 90;
    c.batch_labeled = 10;
    c.batch_unlabeled = 10;
    c.data.synth_size = 512;
    return c;
}

inline TrainConfig profile_by_name(const std::string& name) {
    if (name == "desk") return desk_profile();
    if (name == "paper") return paper_profile();
    throw ConfigError("unknown profile '" + name + "' (expected desk|paper)");
}

inline json load_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
    }
}

/// Applies "a.b.c=value" overrides; the value is parsed as JSON when possible, else taken as a string.
inline void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' must look like key.path=value");
    std::string path = "/" + assignment.substr(0, eq);
    for (auto& ch : path)
        if (ch == '.') ch = '/';
    const std::string raw = assignment.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    j[json::json_pointer(path)] = value;
}

/// 64-bit FNV-1a over the canonical JSON of the architecture.
inline std::uint64_t config_hash(const ModelConfig& m) {
    const std::string s = to_json(m).dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace frcnet
