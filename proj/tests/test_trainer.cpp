#include <gtest/gtest.h>

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include "test_util.hpp"

using namespace frcnet;

namespace {

fs::path tmp(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("frcnet_trainer_" + name);
    fs::remove_all(p);
    return p;
}

TrainConfig tiny_config(const fs::path& out) {
    TrainConfig c;
    c.model.backbone.input_size = 16;
    c.model.backbone.stage_channels = {4, 8};
    c.model.backbone.decoder_channels = 4;
    c.model.backbone.adapter_dim = 2;
    c.model.fem.heads = 2;
    c.model.region.granularities = {2, 4};
    c.data.synth_count = 24;
    c.data.synth_size = 32;
    c.data.ratio = 0.25;
    c.data.test_fraction = 0.25;
    c.batch_labeled = 2;
    c.batch_unlabeled = 2;
    c.max_steps = 6;
    c.log_every = 1;
    c.eval_every = 3;
    c.out_dir = out.string();
    return c;
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

template <typename T>
bool params_bit_equal(const ParameterSet<T>& a, const ParameterSet<T>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto& x = a[i].value();
        const auto& y = b[i].value();
        if (x.shape() != y.shape() || std::memcmp(x.ptr(), y.ptr(), x.size() * sizeof(T)) != 0) return false;
    }
    return true;
}

std::vector<ParsedLogRow> rows_of(const std::vector<ParsedLogRow>& all, const std::string& kind) {
    std::vector<ParsedLogRow> out;
    for (const auto& r : all)
        if (r.kind == kind) out.push_back(r);
    return out;
}

} // namespace

TEST(Trainer, ShortRunWritesLogCheckpointsAndSplit) {
    const auto out = tmp("short");
    const auto cfg = tiny_config(out);
    Trainer<float> tr(cfg);
    EXPECT_EQ(tr.steps_per_epoch(), 7u); // 14 unlabeled ids, batch 2
    EXPECT_EQ(tr.loss_weights().warmup_steps, 2u);
    const auto res = tr.run();
    EXPECT_EQ(res.steps, 6u);
    ASSERT_TRUE(res.last_eval.has_value());
    EXPECT_TRUE(fs::exists(out / "last.ckpt"));
    EXPECT_TRUE(fs::exists(out / "best.ckpt"));
    EXPECT_TRUE(fs::exists(out / "split.json"));

    const auto rows = read_metrics_csv(out / "metrics.csv");
    const auto train = rows_of(rows, "train"), eval = rows_of(rows, "eval");
    ASSERT_EQ(train.size(), 6u);
    ASSERT_EQ(eval.size(), 2u);
    EXPECT_EQ(eval[0].step, 2u);
    EXPECT_EQ(eval[1].step, 5u);
    for (std::size_t i = 0; i < train.size(); ++i) {
        EXPECT_EQ(train[i].step, i);
        EXPECT_NEAR(train[i].lambda, lambda_schedule(i, tr.loss_weights()), 1e-8);
        if (i > 0) {
            EXPECT_GT(train[i].fdc, 0.0);
            EXPECT_GT(train[i].mrsc, 0.0);
            EXPECT_GT(train[i].pix, 0.0);
        }
        EXPECT_NEAR(train[i].total, train[i].sup + train[i].lambda * (train[i].fdc + train[i].mrsc + train[i].pix),
                    1e-6 * (1 + train[i].total));
    }
    EXPECT_NEAR(eval[1].dice, res.last_eval->dice, 1e-5);

    const auto split = load_manifest(out / "split.json");
    EXPECT_EQ(split.labeled_ids.size(), 5u); // ceil(0.25 * 18)
    EXPECT_EQ(split.test_ids.size(), 6u);
    fs::remove_all(out);
}

TEST(Trainer, IdenticalConfigsGiveByteIdenticalCsv) {
    const auto a = tmp("det_a"), b = tmp("det_b");
    train(tiny_config(a));
    train(tiny_config(b));
    const auto ca = read_text(a / "metrics.csv");
    EXPECT_FALSE(ca.empty());
    EXPECT_EQ(ca, read_text(b / "metrics.csv"));
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Trainer, AblationFlagsGateLossColumns) {
    struct Case {
        const char* name;
        AblationFlags flags;
    };
    const Case cases[] = {
        {"off", {false, false, false, false, false}},
        {"low", {true, false, false, true, false}},
        {"high", {true, false, false, false, true}},
        {"full", {true, false, false, false, false}},
        {"mrsc", {false, true, false, false, false}},
        {"pix", {false, false, true, false, false}},
    };
    std::map<std::string, std::vector<ParsedLogRow>> logs;
    for (const auto& c : cases) {
        const auto out = tmp(std::string("abl_") + c.name);
        auto cfg = tiny_config(out);
        cfg.max_steps = 3;
        cfg.eval_every = 0;
        cfg.ablation = c.flags;
        train(cfg);
        logs[c.name] = rows_of(read_metrics_csv(out / "metrics.csv"), "train");
        fs::remove_all(out);
    }
    // At step 0 the teacher is an exact copy, so every consistency term is zero.
    for (const auto& [name, rows] : logs) {
        ASSERT_EQ(rows.size(), 3u) << name;
        EXPECT_EQ(rows[0].total, rows[0].sup) << name;
        for (std::size_t k = 1; k < rows.size(); ++k) {
            const auto& r = rows[k];
            EXPECT_EQ(r.fdc > 0, name == "low" || name == "high" || name == "full") << name;
            EXPECT_EQ(r.mrsc > 0, name == "mrsc") << name;
            EXPECT_EQ(r.pix > 0, name == "pix") << name;
        }
    }
    // The three frequency variants compare different tensors.
    EXPECT_NE(logs["low"][1].fdc, logs["high"][1].fdc);
    EXPECT_NE(logs["low"][1].fdc, logs["full"][1].fdc);
    // Step 0 supervised loss does not depend on any flag.
    for (const auto& [name, rows] : logs) EXPECT_EQ(rows[0].sup, logs["off"][0].sup) << name;
}

TEST(Trainer, UnlabeledDataIsInertWithConsistencyOff) {
    const auto base = tmp("inert");
    fs::create_directories(base);
    auto split = make_split(index_of(synth_dataset(24, 32, 0)), 0.25, 0, 0.25);
    save_manifest(split, base / "with_u.json");
    auto no_u = split;
    no_u.unlabeled_ids.clear();
    save_manifest(no_u, base / "without_u.json");

    auto run = [&](const std::string& manifest) {
        auto cfg = tiny_config(base / manifest);
        cfg.ablation = {false, false, false, false, false};
        cfg.data.manifest = (base / (manifest + ".json")).string();
        cfg.eval_every = 0;
        Trainer<float> tr(cfg);
        tr.run();
        return tr.student().params();
    };
    const auto with_u = run("with_u");
    const auto without_u = run("without_u");
    EXPECT_TRUE(params_bit_equal(with_u, without_u));
    fs::remove_all(base);
}

TEST(Trainer, FullySupervisedWhenRatioIsOne) {
    const auto out = tmp("ratio1");
    auto cfg = tiny_config(out);
    cfg.data.ratio = 1.0;
    cfg.max_steps = 3;
    Trainer<float> tr(cfg);
    EXPECT_TRUE(tr.data().manifest.unlabeled_ids.empty());
    tr.run();
    for (const auto& r : rows_of(read_metrics_csv(out / "metrics.csv"), "train")) {
        EXPECT_EQ(r.fdc, 0.0);
        EXPECT_EQ(r.mrsc, 0.0);
        EXPECT_EQ(r.pix, 0.0);
        EXPECT_EQ(r.total, r.sup);
    }
    fs::remove_all(out);
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
    const auto out = tmp("resume");
    const auto cfg = tiny_config(out);
    Trainer<float> full(cfg);
    for (int i = 0; i < 6; ++i) full.train_step();

    Trainer<float> first(cfg);
    for (int i = 0; i < 3; ++i) first.train_step();
    fs::create_directories(out);
    first.save(out / "mid.ckpt");

    Trainer<float> second(cfg);
    second.resume(out / "mid.ckpt");
    EXPECT_EQ(second.step(), 3u);
    for (int i = 0; i < 3; ++i) second.train_step();
    EXPECT_TRUE(params_bit_equal(full.student().params(), second.student().params()));
    EXPECT_TRUE(params_bit_equal(full.teacher().model.params(), second.teacher().model.params()));
    fs::remove_all(out);
}

TEST(Trainer, EvaluateIsRepeatableAndTeacherMatchesStudentAtInit) {
    const auto out = tmp("eval");
    Trainer<float> tr(tiny_config(out));
    fs::create_directories(out);
    tr.save(out / "init.ckpt");
    const auto a = evaluate<float>(out / "init.ckpt", "test");
    const auto b = evaluate<float>(out / "init.ckpt", "test");
    const auto t = evaluate<float>(out / "init.ckpt", "test", true);
    for (const auto& r : {b, t}) {
        EXPECT_EQ(r.dice, a.dice);
        EXPECT_EQ(r.iou, a.iou);
        EXPECT_EQ(r.acc, a.acc);
        EXPECT_EQ(r.mae, a.mae);
    }
    EXPECT_EQ(a.n_images, 6u);
    EXPECT_EQ(evaluate<float>(out / "init.ckpt", "all").n_images, 24u);
    EXPECT_THROW(evaluate<float>(out / "init.ckpt", "valid"), ConfigError);
    ModelConfig other = tr.config().model;
    other.backbone.decoder_channels = 8;
    EXPECT_THROW(evaluate<float>(out / "init.ckpt", "test", false, std::nullopt, other), ConfigError);
    fs::remove_all(out);
}

TEST(Trainer, RandomInitAccuracyNearChanceOnBalancedData) {
    // Left half foreground: balanced classes.
    std::vector<Sample> samples;
    for (std::size_t i = 0; i < 16; ++i) {
        Sample s = synth_sample(16, 9, i);
        s.mask->fill(0);
        for (std::size_t y = 0; y < 16; ++y)
            for (std::size_t x = 0; x < 8; ++x) s.mask->at(y, x) = 1;
        samples.push_back(std::move(s));
    }
    InMemoryDataset src(samples);
    const auto cfg = tiny_config(tmp("unused"));
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        FrcModel<float> m(cfg.model, seed);
        const auto r = evaluate_ids(m, src, src.ids());
        EXPECT_GE(r.acc, 35.0) << seed;
        EXPECT_LE(r.acc, 65.0) << seed;
    }
}

TEST(Trainer, NonFiniteLossAbortsWithLastGoodCheckpoint) {
    const auto out = tmp("nan");
    Trainer<float> tr(tiny_config(out));
    auto& ps = tr.student().params();
    for (std::size_t i = 0; i < ps.size(); ++i)
        if (ps.entry(i).group == ParamGroup::seg_head) ps[i].mutable_value().fill(std::numeric_limits<float>::quiet_NaN());
    EXPECT_THROW(tr.run(), NumericError);
    EXPECT_TRUE(fs::exists(out / "last_good.ckpt"));
    EXPECT_EQ(exit_code_for(NumericError("x")), 3);
    fs::remove_all(out);
}

TEST(Trainer, InitCheckpointArchitectureMustMatch) {
    const auto out = tmp("init_ck");
    auto cfg = tiny_config(out);
    Trainer<float> tr(cfg);
    fs::create_directories(out);
    tr.save(out / "pre.ckpt");

    auto warm = cfg;
    warm.init_checkpoint = (out / "pre.ckpt").string();
    Trainer<float> ok(warm);
    EXPECT_TRUE(params_bit_equal(ok.student().params(), tr.student().params()));
    // With pretrained weights the default policy freezes encoder body and decoder.
    for (const Node<float>* n : ok.optimizer().managed_nodes())
        for (std::size_t i = 0; i < ok.student().params().size(); ++i)
            if (ok.student().params()[i].node() == n) {
                EXPECT_NE(ok.student().params().entry(i).group, ParamGroup::encoder_body);
                EXPECT_NE(ok.student().params().entry(i).group, ParamGroup::decoder);
            }

    auto bad = warm;
    bad.model.region.granularities = {4};
    EXPECT_THROW(Trainer<float>{bad}, ConfigError);
    fs::remove_all(out);
}

TEST(Trainer, DataErrors) {
    auto cfg = tiny_config(tmp("data_err"));
    cfg.data.source = "folder";
    cfg.data.root = "";
    const char* old = std::getenv(kDataRootEnv);
    const std::string saved = old ? old : "";
    unsetenv(kDataRootEnv);
    EXPECT_THROW(Trainer<float>{cfg}, ConfigError);
    setenv(kDataRootEnv, "/nonexistent/frcnet_data", 1);
    EXPECT_THROW(Trainer<float>{cfg}, DataError);
    if (old) setenv(kDataRootEnv, saved.c_str(), 1);
    else unsetenv(kDataRootEnv);

    const auto base = tmp("bad_manifest");
    fs::create_directories(base);
    SplitManifest m;
    m.labeled_ids = {"synth_99999"};
    save_manifest(m, base / "m.json");
    auto c2 = tiny_config(base);
    c2.data.manifest = (base / "m.json").string();
    EXPECT_THROW(Trainer<float>{c2}, DataError);
    fs::remove_all(base);
}

TEST(Trainer, SupervisedLossFallsOverFirstFiftySteps) {
    // Median over five seeds of (late window mean) - (early window mean) must be <= 0.
    std::vector<double> deltas;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto out = tmp("curve");
        auto cfg = tiny_config(out);
        cfg.seed = seed;
        cfg.max_steps = 50;
        cfg.eval_every = 0;
        cfg.ablation = {false, false, false, false, false};
        Trainer<float> tr(cfg);
        double early = 0, late = 0;
        for (int t = 0; t < 50; ++t) {
            const double s = tr.train_step().sup;
            if (t < 5) early += s;
            if (t >= 45) late += s;
        }
        deltas.push_back(late - early);
    }
    std::sort(deltas.begin(), deltas.end());
    EXPECT_LE(deltas[2], 0.0);
}

TEST(Heatmap, SizeRangeAndConstantCase) {
    auto f = test::random_tensor<float>(Shape{1, 4, 4, 6}, 1);
    cv::Mat h = response_heatmap(f, 32);
    EXPECT_EQ(h.rows, 32);
    EXPECT_EQ(h.cols, 32);
    EXPECT_EQ(h.type(), CV_8U);
    double lo, hi;
    cv::minMaxLoc(h, &lo, &hi);
    EXPECT_EQ(lo, 0.0);
    EXPECT_EQ(hi, 255.0);

    cv::Mat z = response_heatmap(Tensor<float>(Shape{1, 4, 4, 6}), 16);
    EXPECT_EQ(cv::countNonZero(z), 0);
    EXPECT_THROW(response_heatmap(Tensor<float>(Shape{2, 4, 4, 1}), 8), ShapeError);
}

TEST(Heatmap, DumpMatchesInputImageSize) {
    const auto out = tmp("dump");
    Trainer<float> tr(tiny_config(out));
    fs::create_directories(out);
    tr.save(out / "m.ckpt");
    const auto s = synth_sample(40, 1, 0);
    write_dataset(out / "img", {s});
    const auto [fp, ep] = dump_feature_response<float>(out / "m.ckpt", out / "img" / "images" / (s.id + ".png"), out / "heat");
    for (const auto& p : {fp, ep}) {
        cv::Mat m = cv::imread(p.string(), cv::IMREAD_UNCHANGED);
        ASSERT_FALSE(m.empty()) << p;
        EXPECT_EQ(m.rows, 40);
        EXPECT_EQ(m.cols, 40);
        EXPECT_EQ(m.type(), CV_8U);
    }
    fs::remove_all(out);
}
