#pragma once

// Segmentation metrics (MAE, pixel accuracy, Dice, IoU) reported as
// percentages averaged over images, and the training/evaluation CSV log.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "frcnet/losses.hpp"

namespace frcnet {

struct MetricReport {
    double mae = 0;
    double acc = 0;
    double dice = 0;
    double iou = 0;
    std::size_t n_images = 0;
};

struct ImageCounts {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    double abs_err = 0;
};

inline double dice_from_counts(const ImageCounts& c) {
    const std::size_t denom = 2 * c.tp + c.fp + c.fn;
    return denom == 0 ? 1.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

inline double iou_from_counts(const ImageCounts& c) {
    const std::size_t denom = c.tp + c.fp + c.fn;
    return denom == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
}

/// Accumulates per-image metrics so the final mean does not depend on batching.
class MetricAccumulator {
public:
    /// `binarized_mae` switches MAE from the soft foreground probability to the hard mask.
    explicit MetricAccumulator(bool binarized_mae = false) : binarized_mae_(binarized_mae) {}

    template <typename T>
    void add_batch(const Tensor<T>& probs, const LabelMap& gt) {
        require_rank(probs, 4, "compute_metrics");
        const std::size_t B = probs.dim(0), K = probs.dim(3), hw = probs.dim(1) * probs.dim(2);
        if (K != 2) throw ConfigError("compute_metrics: expected 2 classes, got " + std::to_string(K));
        require_shape(gt, Shape{B, probs.dim(1), probs.dim(2)}, "compute_metrics ground truth");
        for (std::size_t b = 0; b < B; ++b) {
            ImageCounts c;
            for (std::size_t i = 0; i < hw; ++i) {
                const std::uint8_t y = gt[b * hw + i];
                if (y > 1) throw DataError("compute_metrics: ground truth is not binary");
                const double p_bg = static_cast<double>(probs[(b * hw + i) * 2]);
                const double p_fg = static_cast<double>(probs[(b * hw + i) * 2 + 1]);
                const bool pred = p_fg > p_bg;
                if (pred && y) ++c.tp;
                else if (pred && !y) ++c.fp;
                else if (!pred && y) ++c.fn;
                else ++c.tn;
                c.abs_err += std::abs((binarized_mae_ ? (pred ? 1.0 : 0.0) : p_fg) - static_cast<double>(y));
            }
            add_image(c, hw);
        }
    }

    /// Hard binary predictions (B,H,W) in {0,1}.
    void add_masks(const LabelMap& pred, const LabelMap& gt) {
        if (pred.shape() != gt.shape() || pred.rank() != 3) throw ShapeError("compute_metrics: mask shape mismatch");
        const std::size_t B = pred.dim(0), hw = pred.dim(1) * pred.dim(2);
        for (std::size_t b = 0; b < B; ++b) {
            ImageCounts c;
            for (std::size_t i = 0; i < hw; ++i) {
                const std::uint8_t y = gt[b * hw + i], p = pred[b * hw + i];
                if (y > 1 || p > 1) throw DataError("compute_metrics: masks must be binary");
                if (p && y) ++c.tp;
                else if (p && !y) ++c.fp;
                else if (!p && y) ++c.fn;
                else ++c.tn;
                c.abs_err += std::abs(static_cast<double>(p) - static_cast<double>(y));
            }
            add_image(c, hw);
        }
    }

    MetricReport report() const {
        MetricReport r;
        r.n_images = n_;
        if (n_ == 0) return r;
        const double inv = 100.0 / static_cast<double>(n_);
        r.mae = mae_ * inv;
        r.acc = acc_ * inv;
        r.dice = dice_ * inv;
        r.iou = iou_ * inv;
        return r;
    }

    const std::vector<ImageCounts>& per_image() const noexcept { return images_; }

private:
    void add_image(const ImageCounts& c, std::size_t hw) {
        const double n = static_cast<double>(hw);
        mae_ += c.abs_err / n;
        acc_ += static_cast<double>(c.tp + c.tn) / n;
        dice_ += dice_from_counts(c);
        iou_ += iou_from_counts(c);
        ++n_;
        images_.push_back(c);
    }

    bool binarized_mae_;
    double mae_ = 0, acc_ = 0, dice_ = 0, iou_ = 0;
    std::size_t n_ = 0;
    std::vector<ImageCounts> images_;
};

template <typename T>
MetricReport compute_metrics(const Tensor<T>& probs, const LabelMap& gt, bool binarized_mae = false) {
    MetricAccumulator acc(binarized_mae);
    acc.add_batch(probs, gt);
    return acc.report();
}

inline MetricReport compute_metrics(const LabelMap& pred, const LabelMap& gt) {
    MetricAccumulator acc;
    acc.add_masks(pred, gt);
    return acc.report();
}

// ---------------------------------------------------------------------------
// CSV log

/// One log row. Train rows leave the metric fields empty; eval rows carry the
/// most recent loss report next to the metrics.
struct LogRow {
    std::string kind; // "train" or "eval"
    std::size_t epoch = 0;
    std::size_t step = 0;
    LossReport loss;
    std::optional<MetricReport> metrics;
};

inline const char* kMetricsCsvHeader = "kind,epoch,step,lambda,sup,fdc,mrsc,pix,total,mae,acc,dice,iou";

/// Appends rows to a CSV file; the header is written once, when the file is new or empty.
class MetricsCsv {
public:
    explicit MetricsCsv(std::filesystem::path path) : path_(std::move(path)) {
        const bool fresh = !std::filesystem::exists(path_) || std::filesystem::file_size(path_) == 0;
        out_.open(path_, std::ios::app);
        if (!out_) throw IoError("cannot open metrics CSV '" + path_.string() + "' for writing");
        if (fresh) {
            out_ << kMetricsCsvHeader << '\n';
            out_.flush();
        }
    }

    void append(const LogRow& row) {
        out_ << format_row(row) << '\n';
        out_.flush();
        if (!out_) throw IoError("write to '" + path_.string() + "' failed");
    }

    static std::string format_row(const LogRow& row) {
        char buf[512];
        int n = std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", row.kind.c_str(), row.epoch,
                              row.step, row.loss.lambda_t, row.loss.sup, row.loss.fdc, row.loss.mrsc, row.loss.pix,
                              row.loss.total);
        std::string s(buf, static_cast<std::size_t>(n));
        if (row.metrics) {
            n = std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f,%.6f", row.metrics->mae, row.metrics->acc,
                              row.metrics->dice, row.metrics->iou);
            s.append(buf, static_cast<std::size_t>(n));
        } else {
            s += ",,,,";
        }
        return s;
    }

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

/// Parsed CSV row; empty fields become NaN.
struct ParsedLogRow {
    std::string kind;
    std::size_t epoch = 0, step = 0;
    double lambda = 0, sup = 0, fdc = 0, mrsc = 0, pix = 0, total = 0;
    double mae = NAN, acc = NAN, dice = NAN, iou = NAN;
};

inline std::vector<ParsedLogRow> read_metrics_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read metrics CSV '" + path.string() + "'");
    std::string line;
    std::getline(in, line);
    if (line != kMetricsCsvHeader) throw DataError("unexpected metrics CSV header in '" + path.string() + "'");
    std::vector<ParsedLogRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::size_t start = 0;
        for (;;) {
            const std::size_t comma = line.find(',', start);
            f.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (f.size() != 13) throw DataError("malformed metrics CSV row: " + line);
        auto num = [](const std::string& s) { return s.empty() ? NAN : std::stod(s); };
        ParsedLogRow r;
        r.kind = f[0];
        r.epoch = std::stoul(f[1]);
        r.step = std::stoul(f[2]);
        r.lambda = num(f[3]);
        r.sup = num(f[4]);
        r.fdc = num(f[5]);
        r.mrsc = num(f[6]);
        r.pix = num(f[7]);
        r.total = num(f[8]);
        r.mae = num(f[9]);
        r.acc = num(f[10]);
        r.dice = num(f[11]);
        r.iou = num(f[12]);
        rows.push_back(r);
    }
    return rows;
}

} // namespace frcnet
