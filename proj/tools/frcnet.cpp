// Command-line front end: train, evaluate, dump-features, make-split, synth.
//
// Exit codes: 0 success, 1 config error, 2 data error, 3 numeric failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "frcnet/frcnet.hpp"

namespace {

using frcnet::json;

struct TrainArgs {
    std::string config_file;
    std::string profile = "desk";
    std::vector<std::string> overrides;
    std::optional<std::string> out_dir, data_root, layout, source, manifest, freeze, init_checkpoint;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> steps, epochs, batch_labeled, batch_unlabeled, eval_every, input_size;
    std::optional<double> lr, ratio, lambda_max, ema_decay;
    bool no_fdc = false, no_mrsc = false, no_pix = false, fdc_low = false, fdc_high = false;
    bool student_noise = false, eval_teacher = false, nondeterministic = false, print_config = false, quiet = false;
    std::string resume;
};

/// profile < config file < --set overrides < named flags.
frcnet::TrainConfig resolve_train_config(const TrainArgs& a) {
    json j = frcnet::to_json(frcnet::profile_by_name(a.profile));
    if (!a.config_file.empty()) j.merge_patch(frcnet::load_json_file(a.config_file));
    for (const auto& o : a.overrides) frcnet::apply_override(j, o);
    frcnet::TrainConfig c = frcnet::train_config_from_json(j, frcnet::profile_by_name(a.profile));
    if (a.out_dir) c.out_dir = *a.out_dir;
    if (a.data_root) {
        c.data.root = *a.data_root;
        c.data.source = "folder";
    }
    if (a.source) c.data.source = *a.source;
    if (a.layout) c.data.layout = *a.layout;
    if (a.manifest) c.data.manifest = *a.manifest;
    if (a.freeze) c.freeze = *a.freeze;
    if (a.init_checkpoint) c.init_checkpoint = *a.init_checkpoint;
    if (a.seed) c.seed = *a.seed;
    if (a.steps) c.max_steps = *a.steps;
    if (a.epochs) c.epochs = *a.epochs;
    if (a.batch_labeled) c.batch_labeled = *a.batch_labeled;
    if (a.batch_unlabeled) c.batch_unlabeled = *a.batch_unlabeled;
    if (a.eval_every) c.eval_every = *a.eval_every;
    if (a.input_size) c.model.backbone.input_size = *a.input_size;
    if (a.lr) c.optimizer.lr = *a.lr;
    if (a.ratio) c.data.ratio = *a.ratio;
    if (a.lambda_max) c.loss.lambda_max = *a.lambda_max;
    if (a.ema_decay) c.ema.decay = *a.ema_decay;
    if (a.no_fdc) c.ablation.enable_fdc = false;
    if (a.no_mrsc) c.ablation.enable_mrsc = false;
    if (a.no_pix) c.ablation.enable_pix = false;
    if (a.fdc_low) c.ablation.fdc_low_only = true;
    if (a.fdc_high) c.ablation.fdc_high_only = true;
    if (a.student_noise) c.student_noise = true;
    if (a.eval_teacher) c.eval_teacher = true;
    if (a.nondeterministic) c.deterministic = false;
    c.validate();
    return c;
}

void print_metrics(const frcnet::MetricReport& m) {
    std::printf("{\"n_images\": %zu, \"mae\": %.6f, \"acc\": %.6f, \"dice\": %.6f, \"iou\": %.6f}\n", m.n_images, m.mae,
                m.acc, m.dice, m.iou);
}

int run(int argc, char** argv) {
    CLI::App app{"Semi-supervised lesion segmentation with frequency and region consistency"};
    app.require_subcommand(1);

    // train
    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Train a student/teacher pair");
    train->add_option("-c,--config", ta.config_file, "JSON config file");
    train->add_option("--profile", ta.profile, "Base profile: desk or paper")->capture_default_str();
    train->add_option("--set", ta.overrides, "Override a config key, e.g. optimizer.lr=1e-3 (repeatable)");
    train->add_option("-o,--out", ta.out_dir, "Output directory");
    train->add_option("--data-root", ta.data_root, "Dataset root (implies --source folder; else $FRCNET_DATA_ROOT)");
    train->add_option("--source", ta.source, "synthetic or folder");
    train->add_option("--layout", ta.layout, "kvasir, isic or generic");
    train->add_option("--manifest", ta.manifest, "Split manifest to reuse");
    train->add_option("--freeze", ta.freeze, "paper, all, or comma-separated trainable groups");
    train->add_option("--init", ta.init_checkpoint, "Initial student weights (checkpoint)");
    train->add_option("--seed", ta.seed);
    train->add_option("--steps", ta.steps, "Total steps (overrides epochs)");
    train->add_option("--epochs", ta.epochs);
    train->add_option("--batch-labeled", ta.batch_labeled);
    train->add_option("--batch-unlabeled", ta.batch_unlabeled);
    train->add_option("--eval-every", ta.eval_every);
    train->add_option("--input-size", ta.input_size);
    train->add_option("--lr", ta.lr);
    train->add_option("--ratio", ta.ratio, "Labeled fraction of the training pool");
    train->add_option("--lambda-max", ta.lambda_max);
    train->add_option("--ema-decay", ta.ema_decay);
    train->add_flag("--no-fdc", ta.no_fdc);
    train->add_flag("--no-mrsc", ta.no_mrsc);
    train->add_flag("--no-pix", ta.no_pix);
    train->add_flag("--fdc-low-only", ta.fdc_low);
    train->add_flag("--fdc-high-only", ta.fdc_high);
    train->add_flag("--student-noise", ta.student_noise);
    train->add_flag("--eval-teacher", ta.eval_teacher);
    train->add_flag("--nondeterministic", ta.nondeterministic, "Reseed stochastic input noise from entropy");
    train->add_option("--resume", ta.resume, "Continue from a checkpoint of this run");
    train->add_flag("--print-config", ta.print_config, "Print the resolved config and exit");
    train->add_flag("-q,--quiet", ta.quiet);

    // evaluate
    std::string ev_ckpt, ev_split = "test", ev_config, ev_root;
    bool ev_teacher = false, ev_bin_mae = false;
    auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on a split");
    evaluate->add_option("checkpoint", ev_ckpt)->required();
    evaluate->add_option("--split", ev_split, "test, labeled, unlabeled or all")->capture_default_str();
    evaluate->add_flag("--teacher", ev_teacher, "Evaluate the teacher instead of the student");
    evaluate->add_flag("--binarized-mae", ev_bin_mae);
    evaluate->add_option("-c,--config", ev_config, "Expected architecture; a mismatch is an error");
    evaluate->add_option("--data-root", ev_root, "Override the dataset root stored in the checkpoint");

    // dump-features
    std::string df_ckpt, df_image, df_out = "features";
    bool df_teacher = false;
    auto* dump = app.add_subcommand("dump-features", "Write frequency and encoder response heatmaps");
    dump->add_option("checkpoint", df_ckpt)->required();
    dump->add_option("image", df_image)->required();
    dump->add_option("-o,--out", df_out)->capture_default_str();
    dump->add_flag("--teacher", df_teacher);

    // make-split
    std::string ms_root, ms_layout = "generic", ms_out = "split.json";
    double ms_ratio = 0.1, ms_test = 0.2;
    std::uint64_t ms_seed = 0;
    auto* split = app.add_subcommand("make-split", "Write a labeled/unlabeled/test manifest for a dataset folder");
    split->add_option("--data-root", ms_root, "Dataset root (else $FRCNET_DATA_ROOT)");
    split->add_option("--layout", ms_layout)->capture_default_str();
    split->add_option("--ratio", ms_ratio)->capture_default_str();
    split->add_option("--test-fraction", ms_test)->capture_default_str();
    split->add_option("--seed", ms_seed)->capture_default_str();
    split->add_option("-o,--out", ms_out)->capture_default_str();

    // synth
    std::size_t sy_n = 64, sy_size = 64;
    std::uint64_t sy_seed = 0;
    std::string sy_out;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic lesion dataset (generic layout)");
    synth->add_option("-n,--count", sy_n)->capture_default_str();
    synth->add_option("--size", sy_size)->capture_default_str();
    synth->add_option("--seed", sy_seed)->capture_default_str();
    synth->add_option("-o,--out", sy_out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    if (*train) {
        frcnet::TrainConfig cfg = resolve_train_config(ta);
        if (ta.print_config) {
            std::cout << frcnet::to_json(cfg).dump(2) << '\n';
            return 0;
        }
        frcnet::Trainer<float> trainer(cfg, ta.quiet ? nullptr : &std::cerr);
        if (!ta.resume.empty()) trainer.resume(ta.resume);
        const frcnet::TrainResult r = trainer.run();
        if (r.last_eval) print_metrics(*r.last_eval);
        return 0;
    }
    if (*evaluate) {
        std::optional<frcnet::ModelConfig> expected;
        if (!ev_config.empty())
            expected = frcnet::train_config_from_json(frcnet::load_json_file(ev_config), frcnet::desk_profile()).model;
        std::optional<frcnet::DataConfig> data;
        if (!ev_root.empty()) {
            data = frcnet::load_model<float>(ev_ckpt).config.data;
            data->root = ev_root;
            data->source = "folder";
        }
        print_metrics(frcnet::evaluate<float>(ev_ckpt, ev_split, ev_teacher, data, expected, ev_bin_mae));
        return 0;
    }
    if (*dump) {
        auto [f, e] = frcnet::dump_feature_response<float>(df_ckpt, df_image, df_out, df_teacher);
        std::cout << f.string() << '\n' << e.string() << '\n';
        return 0;
    }
    if (*split) {
        frcnet::DataConfig d;
        d.root = ms_root;
        const auto index = frcnet::scan_dataset(frcnet::resolve_data_root(d), frcnet::parse_layout(ms_layout));
        for (const auto& w : index.warnings) std::cerr << "warning: " << w << '\n';
        const auto m = frcnet::make_split(index, ms_ratio, ms_seed, ms_test);
        frcnet::save_manifest(m, ms_out);
        std::printf("labeled %zu, unlabeled %zu, test %zu -> %s\n", m.labeled_ids.size(), m.unlabeled_ids.size(),
                    m.test_ids.size(), ms_out.c_str());
        return 0;
    }
    if (*synth) {
        if (sy_n == 0 || sy_size < 8) throw frcnet::ConfigError("synth needs count >= 1 and size >= 8");
        frcnet::write_dataset(sy_out, frcnet::synth_dataset(sy_n, sy_size, sy_seed));
        std::printf("wrote %zu samples to %s\n", sy_n, sy_out.c_str());
        return 0;
    }
    return 1;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const frcnet::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return frcnet::exit_code_for(e);
    } catch (const cv::Exception& e) {
        std::cerr << "error: image processing failed: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
