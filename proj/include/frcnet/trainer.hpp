#pragma once

// Training loop, evaluation and feature-response dumps.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "frcnet/checkpoint.hpp"
#include "frcnet/config.hpp"
#include "frcnet/data.hpp"
#include "frcnet/losses.hpp"
#include "frcnet/mean_teacher.hpp"
#include "frcnet/metrics.hpp"
#include "frcnet/optim.hpp"

namespace frcnet {

inline constexpr const char* kDataRootEnv = "FRCNET_DATA_ROOT";

/// Dataset root from the config, else from $FRCNET_DATA_ROOT.
inline std::string resolve_data_root(const DataConfig& d) {
    if (!d.root.empty()) return d.root;
    if (const char* env = std::getenv(kDataRootEnv); env && *env) return env;
    throw ConfigError(std::string("data.root is empty and ") + kDataRootEnv + " is not set");
}

struct RunData {
    std::shared_ptr<DatasetSource> source;
    SplitManifest manifest;
    std::vector<std::string> warnings;
};

/// Builds the data source and split. A manifest named in the config is reused
/// when it exists; otherwise a fresh split is drawn from `seed`.
inline RunData prepare_data(const DataConfig& d, std::uint64_t seed) {
    RunData rd;
    DatasetIndex index;
    if (d.source == "synthetic") {
        auto samples = synth_dataset(d.synth_count, d.synth_size, d.synth_seed);
        index = index_of(samples);
        rd.source = std::make_shared<InMemoryDataset>(std::move(samples));
    } else {
        index = scan_dataset(resolve_data_root(d), parse_layout(d.layout));
        rd.warnings = index.warnings;
        rd.source = std::make_shared<FolderDataset>(index);
    }
    if (!d.manifest.empty() && std::filesystem::exists(d.manifest)) {
        rd.manifest = load_manifest(d.manifest);
        const auto known = rd.source->ids();
        const std::set<std::string> have(known.begin(), known.end());
        for (const auto* list : {&rd.manifest.labeled_ids, &rd.manifest.unlabeled_ids, &rd.manifest.test_ids})
            for (const auto& id : *list)
                if (!have.count(id)) throw DataError("manifest references unknown sample '" + id + "'");
    } else {
        rd.manifest = make_split(index, d.ratio, seed, d.test_fraction);
    }
    return rd;
}

/// Mean metrics of `model` over `ids`, evaluated in chunks of `batch`.
template <typename T>
MetricReport evaluate_ids(const FrcModel<T>& model, const DatasetSource& src, const std::vector<std::string>& ids,
                          std::size_t batch = 8, bool binarized_mae = false) {
    NoGradGuard guard;
    MetricAccumulator acc(binarized_mae);
    const std::size_t size = model.config().backbone.input_size;
    for (std::size_t i = 0; i < ids.size(); i += batch) {
        std::vector<std::string> chunk(ids.begin() + static_cast<std::ptrdiff_t>(i),
                                       ids.begin() + static_cast<std::ptrdiff_t>(std::min(ids.size(), i + batch)));
        LabeledBatch<T> b = load_batch<T>(src, chunk, size);
        ModelOutputs<T> out = model.forward(b.images, ForwardOptions{false});
        acc.add_batch(out.probs.value(), b.masks);
    }
    return acc.report();
}

struct TrainResult {
    std::size_t steps = 0;
    double best_dice = -1;
    LossReport last_loss;
    std::optional<MetricReport> last_eval;
    std::filesystem::path last_checkpoint;
    std::filesystem::path best_checkpoint;
};

/// Owns the student/teacher pair, optimizer and data for one run.
/// Outputs under cfg.out_dir: metrics.csv, split.json, last.ckpt, best.ckpt
/// and, after a numeric failure, last_good.ckpt.
template <typename T = float>
class Trainer {
public:
    explicit Trainer(TrainConfig cfg, std::ostream* log = nullptr)
        : cfg_(validated(std::move(cfg))),
          log_(log),
          data_(prepare_data(cfg_.data, cfg_.seed)),
          student_(cfg_.model, mix_seed(cfg_.seed, 0x1417ULL)),
          teacher_(init_teacher(student_, cfg_.ema)) {
        for (const auto& w : data_.warnings) say("warning: " + w);
        if (data_.manifest.labeled_ids.empty()) throw DataError("split has no labeled samples");
        if (!cfg_.init_checkpoint.empty()) {
            auto ck = load_checkpoint<T>(cfg_.init_checkpoint);
            check_hash(ck, cfg_.init_checkpoint);
            copy_parameters(student_.params(), ck.student);
            teacher_ = init_teacher(student_, cfg_.ema);
        }
        trainable_ = trainable_parameter_filter(student_.params(), cfg_.freeze_policy());
        opt_ = std::make_unique<AdamW<T>>(student_.params(), trainable_, cfg_.optimizer);

        const std::size_t n_u = data_.manifest.unlabeled_ids.size();
        const std::size_t n_l = data_.manifest.labeled_ids.size();
        steps_per_epoch_ = n_u > 0 ? (n_u + cfg_.batch_unlabeled - 1) / cfg_.batch_unlabeled
                                   : (n_l + cfg_.batch_labeled - 1) / cfg_.batch_labeled;
        total_steps_ = cfg_.max_steps > 0 ? cfg_.max_steps : cfg_.epochs * steps_per_epoch_;
        weights_ = cfg_.loss;
        if (weights_.warmup_steps == 0)
            weights_.warmup_steps = std::max<std::size_t>(
                1, static_cast<std::size_t>(std::llround(cfg_.warmup_fraction * static_cast<double>(total_steps_))));
        weights_.validate();

        labeled_ = std::make_unique<BatchStream>(data_.manifest.labeled_ids, cfg_.seed, 1, cfg_.batch_labeled);
        unlabeled_ = std::make_unique<BatchStream>(data_.manifest.unlabeled_ids, cfg_.seed, 2, cfg_.batch_unlabeled);
        noise_base_ = cfg_.deterministic ? cfg_.seed : std::random_device{}();
    }

    /// Continues from a checkpoint written by this trainer (same architecture).
    void resume(const std::filesystem::path& path) {
        auto ck = load_checkpoint<T>(path);
        check_hash(ck, path);
        copy_parameters(student_.params(), ck.student);
        copy_parameters(teacher_.model.params(), ck.teacher);
        teacher_.step = static_cast<std::size_t>(ck.teacher_step);
        step_ = static_cast<std::size_t>(ck.step);
        best_dice_ = ck.best_dice;
        if (ck.adam_step) {
            if (ck.adam_m.size() != opt_->first_moments().size()) throw ConfigError("checkpoint optimizer state does not match the trainable set");
            for (std::size_t i = 0; i < ck.adam_m.size(); ++i) {
                auto& m = opt_->first_moments()[i];
                auto& v = opt_->second_moments()[i];
                if (m.size() != ck.adam_m[i].size()) throw ConfigError("checkpoint optimizer state does not match the trainable set");
                std::copy(ck.adam_m[i].ptr(), ck.adam_m[i].ptr() + m.size(), m.ptr());
                std::copy(ck.adam_v[i].ptr(), ck.adam_v[i].ptr() + v.size(), v.ptr());
            }
            opt_->set_step_count(static_cast<std::size_t>(*ck.adam_step));
        }
    }

    /// One optimisation step at t = step(). Returns the loss report.
    LossReport train_step() {
        const std::size_t t = step_;
        const std::size_t size = cfg_.model.backbone.input_size;
        LabeledBatch<T> lb = load_batch<T>(*data_.source, labeled_->batch(t), size);
        ModelOutputs<T> lab = student_.forward(lb.images, ForwardOptions{false});

        LossTerms<T> terms;
        terms.sup = supervised_loss(lab.probs, lb.masks, static_cast<T>(weights_.smooth_eps));
        const auto& ab = cfg_.ablation;
        if (ab.any_consistency() && unlabeled_->size() > 0) {
            UnlabeledBatch<T> ub = load_unlabeled_batch<T>(*data_.source, unlabeled_->batch(t), size);
            const ForwardOptions fo{ab.enable_fdc};
            ModelOutputs<T> tout = teacher_forward(teacher_, ub.images, fo);
            Tensor<T> student_in = ub.images;
            if (cfg_.student_noise && cfg_.noise_std > 0) {
                std::mt19937_64 rng(mix_seed(noise_base_, 0x6e015eULL, t));
                for (auto& x : student_in.storage()) x += static_cast<T>(cfg_.noise_std * gaussian(rng));
            }
            ModelOutputs<T> sout = student_.forward(student_in, fo);
            if (ab.enable_fdc) {
                if (ab.fdc_low_only) terms.fdc = fdc_loss(tout.frequency.low, sout.frequency.low);
                else if (ab.fdc_high_only) terms.fdc = fdc_loss(tout.frequency.high, sout.frequency.high);
                else terms.fdc = fdc_loss(tout.frequency.enhanced, sout.frequency.enhanced);
            }
            if (ab.enable_mrsc) {
                std::map<std::size_t, Var<T>> ta;
                {
                    NoGradGuard guard;
                    ta = teacher_.model.region_similarities(tout.decoder);
                }
                terms.mrsc = mrsc_loss(ta, student_.region_similarities(sout.decoder));
            }
            if (ab.enable_pix) terms.pix = pixel_consistency_loss(tout.probs, sout.probs);
        }

        auto [total, rep] = total_loss(terms, lambda_schedule(t, weights_));
        opt_->zero_grad();
        backward(total);
        if (opt_->has_nonfinite_grad()) throw NumericError("non-finite gradient at step " + std::to_string(t));
        opt_->step();
        ema_update(teacher_, student_.params());
        ++step_;
        last_loss_ = rep;
        return rep;
    }

    /// Runs to total_steps(), logging, evaluating and checkpointing on the configured cadence.
    TrainResult run() {
        namespace fs = std::filesystem;
        const fs::path out(cfg_.out_dir);
        fs::create_directories(out);
        save_manifest(data_.manifest, out / "split.json");
        MetricsCsv csv(out / "metrics.csv");
        TrainResult res;
        res.last_checkpoint = out / "last.ckpt";
        res.best_checkpoint = out / "best.ckpt";
        say("training " + std::to_string(total_steps_) + " steps (" + std::to_string(steps_per_epoch_) +
            " per epoch), labeled " + std::to_string(data_.manifest.labeled_ids.size()) + ", unlabeled " +
            std::to_string(data_.manifest.unlabeled_ids.size()) + ", test " + std::to_string(data_.manifest.test_ids.size()));

        while (step_ < total_steps_) {
            const std::size_t t = step_;
            const std::size_t epoch = t / steps_per_epoch_;
            LossReport rep;
            try {
                rep = train_step();
            } catch (const NumericError&) {
                save(out / "last_good.ckpt");
                say("numeric failure at step " + std::to_string(t) + "; last good state saved to " +
                    (out / "last_good.ckpt").string());
                throw;
            }
            const bool last = step_ == total_steps_;
            if (cfg_.log_every > 0 && (t % cfg_.log_every == 0 || last)) {
                csv.append(LogRow{"train", epoch, t, rep, std::nullopt});
                char buf[160];
                std::snprintf(buf, sizeof buf, "step %zu  sup %.4f  fdc %.4g  mrsc %.4g  pix %.4g  lambda %.4f", t, rep.sup,
                              rep.fdc, rep.mrsc, rep.pix, rep.lambda_t);
                say(buf);
            }
            if ((cfg_.eval_every > 0 && step_ % cfg_.eval_every == 0) || last) {
                MetricReport m = evaluate_current();
                csv.append(LogRow{"eval", epoch, t, rep, m});
                res.last_eval = m;
                save(res.last_checkpoint);
                if (m.dice > best_dice_) {
                    best_dice_ = m.dice;
                    save(res.best_checkpoint);
                }
                char buf[160];
                std::snprintf(buf, sizeof buf, "eval step %zu  dice %.2f  iou %.2f  acc %.2f  mae %.2f", t, m.dice, m.iou,
                              m.acc, m.mae);
                say(buf);
            }
        }
        res.steps = step_;
        res.best_dice = best_dice_;
        res.last_loss = last_loss_;
        return res;
    }

    /// Metrics of the evaluated model (student, or teacher when eval_teacher) on the
    /// test split, falling back to the labeled split when no test ids exist.
    MetricReport evaluate_current() const {
        const auto& ids = data_.manifest.test_ids.empty() ? data_.manifest.labeled_ids : data_.manifest.test_ids;
        return evaluate_ids(cfg_.eval_teacher ? teacher_.model : student_, *data_.source, ids);
    }

    Checkpoint<T> snapshot() const {
        Checkpoint<T> ck;
        ck.config = to_json(cfg_);
        ck.config_hash = config_hash(cfg_.model);
        ck.step = step_;
        ck.best_dice = best_dice_;
        ck.teacher_step = teacher_.step;
        ck.student = student_.params();
        ck.teacher = teacher_.model.params();
        ck.adam_step = opt_->step_count();
        ck.adam_m = opt_->first_moments();
        ck.adam_v = opt_->second_moments();
        return ck;
    }
    void save(const std::filesystem::path& path) const { save_checkpoint(path, snapshot()); }

    const TrainConfig& config() const noexcept { return cfg_; }
    const RunData& data() const noexcept { return data_; }
    FrcModel<T>& student() noexcept { return student_; }
    const FrcModel<T>& student() const noexcept { return student_; }
    TeacherState<T>& teacher() noexcept { return teacher_; }
    const AdamW<T>& optimizer() const noexcept { return *opt_; }
    const LossWeights& loss_weights() const noexcept { return weights_; }
    std::size_t step() const noexcept { return step_; }
    std::size_t total_steps() const noexcept { return total_steps_; }
    std::size_t steps_per_epoch() const noexcept { return steps_per_epoch_; }

private:
    static TrainConfig validated(TrainConfig c) {
        c.validate();
        return c;
    }
    void say(const std::string& s) const {
        if (log_) *log_ << s << '\n';
    }
    void check_hash(const Checkpoint<T>& ck, const std::filesystem::path& path) const {
        if (ck.config_hash != config_hash(cfg_.model))
            throw ConfigError("checkpoint '" + path.string() + "' was written for a different architecture");
    }

    TrainConfig cfg_;
    std::ostream* log_;
    RunData data_;
    FrcModel<T> student_;
    TeacherState<T> teacher_;
    std::vector<std::size_t> trainable_;
    std::unique_ptr<AdamW<T>> opt_;
    std::unique_ptr<BatchStream> labeled_, unlabeled_;
    LossWeights weights_;
    std::size_t steps_per_epoch_ = 1, total_steps_ = 0, step_ = 0;
    std::uint64_t noise_base_ = 0;
    double best_dice_ = -1;
    LossReport last_loss_;
};

template <typename T = float>
TrainResult train(const TrainConfig& cfg, std::ostream* log = nullptr) {
    Trainer<T> trainer(cfg, log);
    return trainer.run();
}

/// Model rebuilt from a checkpoint; `expected` (when given) must hash to the same architecture.
template <typename T>
struct LoadedModel {
    TrainConfig config;
    FrcModel<T> student;
    FrcModel<T> teacher;
};

template <typename T = float>
LoadedModel<T> load_model(const std::filesystem::path& path, const std::optional<ModelConfig>& expected = std::nullopt) {
    auto ck = load_checkpoint<T>(path);
    TrainConfig cfg = train_config_from_json(ck.config);
    if (config_hash(cfg.model) != ck.config_hash) throw IoError("checkpoint '" + path.string() + "' config block does not match its hash");
    if (expected && config_hash(*expected) != ck.config_hash)
        throw ConfigError("checkpoint '" + path.string() + "' architecture differs from the requested configuration");
    FrcModel<T> student(cfg.model, 0);
    copy_parameters(student.params(), ck.student);
    FrcModel<T> teacher(cfg.model, 0);
    copy_parameters(teacher.params(), ck.teacher);
    return {cfg, std::move(student), std::move(teacher)};
}

/// Metrics for one split ("test", "labeled", "unlabeled" or "all") of the checkpoint's run.
/// `data_override` replaces the data section stored in the checkpoint.
template <typename T = float>
MetricReport evaluate(const std::filesystem::path& checkpoint, const std::string& split, bool use_teacher = false,
                      const std::optional<DataConfig>& data_override = std::nullopt,
                      const std::optional<ModelConfig>& expected = std::nullopt, bool binarized_mae = false) {
    LoadedModel<T> lm = load_model<T>(checkpoint, expected);
    const DataConfig dc = data_override ? *data_override : lm.config.data;
    RunData rd = prepare_data(dc, lm.config.seed);
    const auto& m = rd.manifest;
    std::vector<std::string> ids;
    if (split == "test") ids = m.test_ids;
    else if (split == "labeled") ids = m.labeled_ids;
    else if (split == "unlabeled") ids = m.unlabeled_ids;
    else if (split == "all") {
        ids = m.labeled_ids;
        ids.insert(ids.end(), m.unlabeled_ids.begin(), m.unlabeled_ids.end());
        ids.insert(ids.end(), m.test_ids.begin(), m.test_ids.end());
    } else throw ConfigError("unknown split '" + split + "' (expected test|labeled|unlabeled|all)");
    if (ids.empty()) throw DataError("split '" + split + "' is empty");
    return evaluate_ids(use_teacher ? lm.teacher : lm.student, *rd.source, ids, 8, binarized_mae);
}

// ---------------------------------------------------------------------------
// Feature response heatmaps

/// Channel-mean absolute value of a (1,h,w,c) map, bilinearly resized to
/// size x size and min-max scaled to 8-bit. A constant map encodes as all zeros.
template <typename T>
cv::Mat response_heatmap(const Tensor<T>& features, std::size_t size) {
    require_rank(features, 4, "response_heatmap");
    if (features.dim(0) != 1) throw ShapeError("response_heatmap expects a single image");
    const std::size_t h = features.dim(1), w = features.dim(2), c = features.dim(3);
    cv::Mat m(static_cast<int>(h), static_cast<int>(w), CV_64F);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double s = 0;
            for (std::size_t k = 0; k < c; ++k) s += std::abs(static_cast<double>(features[(y * w + x) * c + k]));
            m.at<double>(static_cast<int>(y), static_cast<int>(x)) = s / static_cast<double>(c);
        }
    cv::Mat up;
    cv::resize(m, up, cv::Size(static_cast<int>(size), static_cast<int>(size)), 0, 0, cv::INTER_LINEAR);
    double lo = 0, hi = 0;
    cv::minMaxLoc(up, &lo, &hi);
    cv::Mat out(up.size(), CV_8U, cv::Scalar(0));
    if (hi > lo) up.convertTo(out, CV_8U, 255.0 / (hi - lo), -255.0 * lo / (hi - lo));
    return out;
}

struct FeatureResponse {
    cv::Mat frequency; // enhanced frequency features F
    cv::Mat encoder;   // encoder features X
};

/// Heatmaps for one image at its original resolution.
template <typename T>
FeatureResponse feature_response(const FrcModel<T>& model, const Image& image) {
    NoGradGuard guard;
    const std::size_t size = model.config().backbone.input_size;
    const Image resized = resize_image(image, size);
    Tensor<T> batch(Shape{1, size, size, 3});
    for (std::size_t i = 0; i < resized.size(); ++i) batch[i] = static_cast<T>(resized[i]);
    ModelOutputs<T> out = model.forward(batch);
    FeatureResponse r{response_heatmap(out.frequency.enhanced.value(), size), response_heatmap(out.encoder.value(), size)};
    const cv::Size orig(static_cast<int>(image.dim(1)), static_cast<int>(image.dim(0)));
    if (orig != r.frequency.size()) {
        cv::resize(r.frequency, r.frequency, orig, 0, 0, cv::INTER_LINEAR);
        cv::resize(r.encoder, r.encoder, orig, 0, 0, cv::INTER_LINEAR);
    }
    return r;
}

/// Writes <stem>_freq.png and <stem>_enc.png into `out_dir`; returns the two paths.
template <typename T = float>
std::pair<std::filesystem::path, std::filesystem::path> dump_feature_response(const std::filesystem::path& checkpoint,
                                                                              const std::filesystem::path& image_path,
                                                                              const std::filesystem::path& out_dir,
                                                                              bool use_teacher = false) {
    LoadedModel<T> lm = load_model<T>(checkpoint);
    const std::string stem = image_path.stem().string();
    const Image img = read_image(image_path, stem);
    FeatureResponse r = feature_response(use_teacher ? lm.teacher : lm.student, img);
    std::filesystem::create_directories(out_dir);
    const auto fp = out_dir / (stem + "_freq.png");
    const auto ep = out_dir / (stem + "_enc.png");
    write_png(fp, r.frequency);
    write_png(ep, r.encoder);
    return {fp, ep};
}

} // namespace frcnet
