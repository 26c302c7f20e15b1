#pragma once

// Dataset ingestion for image/mask folder layouts, deterministic split
// manifests, batching, and a synthetic lesion generator.

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "frcnet/losses.hpp"

namespace frcnet {

namespace fs = std::filesystem;

using Image = Tensor<float>; // (H, W, 3), RGB in [0,1]

struct Sample {
    std::string id;
    Image image;
    std::optional<LabelMap> mask; // (H, W) in {0,1}
};

// ---------------------------------------------------------------------------
// Portable seeded randomness (identical streams on every standard library)

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
    return splitmix64(splitmix64(splitmix64(a) ^ b) ^ c);
}

inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do r = rng();
    while (r >= limit);
    return static_cast<std::size_t>(r % n);
}

inline double gaussian(std::mt19937_64& rng) {
    const double u1 = std::max(uniform01(rng), 1e-300);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

template <typename V>
void seeded_shuffle(std::vector<V>& v, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

// ---------------------------------------------------------------------------
// Folder layouts

enum class DatasetLayout { kvasir, isic, generic };

inline DatasetLayout parse_layout(const std::string& s) {
    if (s == "kvasir") return DatasetLayout::kvasir;
    if (s == "isic") return DatasetLayout::isic;
    if (s == "generic") return DatasetLayout::generic;
    throw ConfigError("unknown dataset layout '" + s + "' (expected kvasir|isic|generic)");
}

struct IndexEntry {
    std::string id;
    fs::path image;
    fs::path mask;
    bool official_test = false;
};

struct DatasetIndex {
    std::vector<IndexEntry> entries; // sorted by id
    std::vector<std::string> warnings;

    std::size_t size() const { return entries.size(); }
    std::vector<std::string> ids() const {
        std::vector<std::string> out;
        for (const auto& e : entries) out.push_back(e.id);
        return out;
    }
};

namespace detail {

inline bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    static const std::set<std::string> exts{".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff"};
    return exts.count(ext) > 0;
}

inline std::map<std::string, fs::path> images_by_stem(const fs::path& dir) {
    std::map<std::string, fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && is_image_file(e.path())) out[e.path().stem().string()] = e.path();
    return out;
}

// Pairs images with masks by stem; masks may carry one of `suffixes`.
inline void pair_dirs(const fs::path& image_dir, const fs::path& mask_dir, const std::vector<std::string>& suffixes,
                      bool official_test, DatasetIndex& index) {
    const auto images = images_by_stem(image_dir);
    const auto masks = images_by_stem(mask_dir);
    for (const auto& [stem, path] : images) {
        std::optional<fs::path> mask;
        for (const auto& suf : suffixes) {
            auto it = masks.find(stem + suf);
            if (it != masks.end()) {
                mask = it->second;
                break;
            }
        }
        if (!mask) {
            index.warnings.push_back("image '" + path.string() + "' has no mask; excluded");
            continue;
        }
        index.entries.push_back({stem, path, *mask, official_test});
    }
}

} // namespace detail

/// Builds the id -> (image, mask) index for a dataset root.
///   kvasir / generic: <root>/images/<id>.* paired with <root>/masks/<id>[_mask|_segmentation].*
///   isic: ISBI2016_ISIC_Part1_{Training,Test}_{Data,GroundTruth}/, masks named <id>_Segmentation.*;
///         the Test directories form the official test split.
inline DatasetIndex scan_dataset(const fs::path& root, DatasetLayout layout) {
    if (!fs::is_directory(root)) throw DataError("dataset root '" + root.string() + "' is not a directory");
    DatasetIndex index;
    if (layout == DatasetLayout::isic) {
        detail::pair_dirs(root / "ISBI2016_ISIC_Part1_Training_Data", root / "ISBI2016_ISIC_Part1_Training_GroundTruth",
                          {"_Segmentation"}, false, index);
        detail::pair_dirs(root / "ISBI2016_ISIC_Part1_Test_Data", root / "ISBI2016_ISIC_Part1_Test_GroundTruth",
                          {"_Segmentation"}, true, index);
    } else {
        detail::pair_dirs(root / "images", root / "masks", {"", "_mask", "_segmentation", "_Segmentation"}, false, index);
    }
    std::sort(index.entries.begin(), index.entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    if (index.entries.empty()) throw DataError("dataset root '" + root.string() + "' contains no image/mask pairs");
    return index;
}

// ---------------------------------------------------------------------------
// Split manifest

struct SplitManifest {
    std::vector<std::string> labeled_ids;
    std::vector<std::string> unlabeled_ids;
    std::vector<std::string> test_ids;
    std::uint64_t seed = 0;
    double ratio = 1.0;
    double test_fraction = 0.0;
};

/// Seeded split: the test fraction is held out first (unless the index carries an
/// official test split), then ceil(ratio * remaining) ids become labeled.
inline SplitManifest make_split(const DatasetIndex& index, double ratio, std::uint64_t seed, double test_fraction) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("split: ratio must lie in (0, 1]");
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ConfigError("split: test_fraction must lie in [0, 1)");
    SplitManifest m;
    m.seed = seed;
    m.ratio = ratio;
    m.test_fraction = test_fraction;

    std::vector<std::string> pool, official;
    for (const auto& e : index.entries) (e.official_test ? official : pool).push_back(e.id);
    std::sort(pool.begin(), pool.end());
    seeded_shuffle(pool, mix_seed(seed, 0x5eed5711ULL));
    if (!official.empty()) {
        std::sort(official.begin(), official.end());
        m.test_ids = official;
    } else {
        const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(pool.size())));
        m.test_ids.assign(pool.begin(), pool.begin() + static_cast<long>(n_test));
        pool.erase(pool.begin(), pool.begin() + static_cast<long>(n_test));
    }
    auto n_lab = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(pool.size()) - 1e-9));
    n_lab = std::min(n_lab, pool.size());
    m.labeled_ids.assign(pool.begin(), pool.begin() + static_cast<long>(n_lab));
    m.unlabeled_ids.assign(pool.begin() + static_cast<long>(n_lab), pool.end());
    return m;
}

inline nlohmann::json to_json(const SplitManifest& m) {
    return nlohmann::json{{"seed", m.seed},
                          {"ratio", m.ratio},
                          {"test_fraction", m.test_fraction},
                          {"labeled", m.labeled_ids},
                          {"unlabeled", m.unlabeled_ids},
                          {"test", m.test_ids}};
}

inline SplitManifest manifest_from_json(const nlohmann::json& j) {
    try {
        SplitManifest m;
        m.seed = j.at("seed").get<std::uint64_t>();
        m.ratio = j.at("ratio").get<double>();
        m.test_fraction = j.value("test_fraction", 0.0);
        m.labeled_ids = j.at("labeled").get<std::vector<std::string>>();
        m.unlabeled_ids = j.at("unlabeled").get<std::vector<std::string>>();
        m.test_ids = j.at("test").get<std::vector<std::string>>();
        std::set<std::string> seen;
        for (const auto* list : {&m.labeled_ids, &m.unlabeled_ids, &m.test_ids})
            for (const auto& id : *list)
                if (!seen.insert(id).second) throw DataError("manifest: id '" + id + "' appears in more than one split");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed split manifest: ") + e.what());
    }
}

inline void save_manifest(const SplitManifest& m, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
    out << to_json(m).dump(2) << '\n';
}

inline SplitManifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read manifest '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return manifest_from_json(j);
}

// ---------------------------------------------------------------------------
// Image conversion and resizing

inline Image image_from_mat(const cv::Mat& bgr) {
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    cv::Mat f;
    rgb.convertTo(f, CV_32FC3, 1.0 / 255.0);
    Image img(Shape{static_cast<std::size_t>(f.rows), static_cast<std::size_t>(f.cols), 3});
    for (int y = 0; y < f.rows; ++y) {
        const float* row = f.ptr<float>(y);
        std::copy(row, row + 3 * f.cols, img.ptr() + static_cast<std::size_t>(y) * f.cols * 3);
    }
    return img;
}

inline cv::Mat mat_from_image(const Image& img) {
    cv::Mat f(static_cast<int>(img.dim(0)), static_cast<int>(img.dim(1)), CV_32FC3);
    for (int y = 0; y < f.rows; ++y)
        std::copy(img.ptr() + static_cast<std::size_t>(y) * f.cols * 3, img.ptr() + static_cast<std::size_t>(y + 1) * f.cols * 3,
                  f.ptr<float>(y));
    return f;
}

inline Image resize_image(const Image& img, std::size_t size) {
    if (img.dim(0) == size && img.dim(1) == size) return img;
    cv::Mat out;
    cv::resize(mat_from_image(img), out, cv::Size(static_cast<int>(size), static_cast<int>(size)), 0, 0, cv::INTER_LINEAR);
    Image r(Shape{size, size, 3});
    for (int y = 0; y < out.rows; ++y) {
        const float* row = out.ptr<float>(y);
        for (int x = 0; x < out.cols * 3; ++x) r[static_cast<std::size_t>(y) * size * 3 + x] = std::clamp(row[x], 0.0f, 1.0f);
    }
    return r;
}

inline LabelMap resize_mask(const LabelMap& mask, std::size_t size) {
    if (mask.dim(0) == size && mask.dim(1) == size) return mask;
    cv::Mat m(static_cast<int>(mask.dim(0)), static_cast<int>(mask.dim(1)), CV_8UC1, const_cast<std::uint8_t*>(mask.ptr()));
    cv::Mat out;
    cv::resize(m, out, cv::Size(static_cast<int>(size), static_cast<int>(size)), 0, 0, cv::INTER_NEAREST);
    LabelMap r(Shape{size, size});
    for (int y = 0; y < out.rows; ++y) std::copy(out.ptr<std::uint8_t>(y), out.ptr<std::uint8_t>(y) + out.cols, r.ptr() + y * size);
    return r;
}

inline Image read_image(const fs::path& path, const std::string& id) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (m.empty()) throw DataError("sample '" + id + "': cannot read image '" + path.string() + "'");
    return image_from_mat(m);
}

/// Reads a mask; any value above mid-gray is foreground.
inline LabelMap read_mask(const fs::path& path, const std::string& id) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (m.empty()) throw DataError("sample '" + id + "': cannot read mask '" + path.string() + "'");
    LabelMap r(Shape{static_cast<std::size_t>(m.rows), static_cast<std::size_t>(m.cols)});
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) r.at(y, x) = m.at<std::uint8_t>(y, x) > 127 ? 1 : 0;
    return r;
}

inline void write_png(const fs::path& path, const cv::Mat& m) {
    if (!cv::imwrite(path.string(), m)) throw IoError("cannot write image '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Sources and batches

class DatasetSource {
public:
    virtual ~DatasetSource() = default;
    virtual std::vector<std::string> ids() const = 0;
    /// Image (and mask when `with_mask`) resized to target_size x target_size.
    virtual Sample load(const std::string& id, std::size_t target_size, bool with_mask) const = 0;
};

class InMemoryDataset final : public DatasetSource {
public:
    explicit InMemoryDataset(std::vector<Sample> samples) {
        for (auto& s : samples) {
            const std::string id = s.id;
            if (!samples_.emplace(id, std::move(s)).second) throw DataError("duplicate sample id '" + id + "'");
            order_.push_back(id);
        }
    }
    std::vector<std::string> ids() const override { return order_; }
    Sample load(const std::string& id, std::size_t target_size, bool with_mask) const override {
        auto it = samples_.find(id);
        if (it == samples_.end()) throw DataError("unknown sample id '" + id + "'");
        Sample s{id, resize_image(it->second.image, target_size), std::nullopt};
        if (with_mask) {
            if (!it->second.mask) throw DataError("sample '" + id + "' has no mask");
            s.mask = resize_mask(*it->second.mask, target_size);
        }
        return s;
    }
    const Sample& sample(const std::string& id) const { return samples_.at(id); }

private:
    std::map<std::string, Sample> samples_;
    std::vector<std::string> order_;
};

/// Disk-backed source over a scanned index; decoded, resized samples are cached.
/// Not safe for concurrent use.
class FolderDataset final : public DatasetSource {
public:
    explicit FolderDataset(DatasetIndex index) : index_(std::move(index)) {
        for (std::size_t i = 0; i < index_.entries.size(); ++i) by_id_[index_.entries[i].id] = i;
    }
    std::vector<std::string> ids() const override { return index_.ids(); }
    Sample load(const std::string& id, std::size_t target_size, bool with_mask) const override {
        auto it = by_id_.find(id);
        if (it == by_id_.end()) throw DataError("unknown sample id '" + id + "'");
        const auto key = std::make_pair(id, target_size);
        auto c = cache_.find(key);
        if (c == cache_.end()) {
            const IndexEntry& e = index_.entries[it->second];
            Sample s{id, resize_image(read_image(e.image, id), target_size), resize_mask(read_mask(e.mask, id), target_size)};
            c = cache_.emplace(key, std::move(s)).first;
        }
        Sample out = c->second;
        if (!with_mask) out.mask.reset();
        return out;
    }
    const DatasetIndex& index() const noexcept { return index_; }

private:
    DatasetIndex index_;
    std::map<std::string, std::size_t> by_id_;
    mutable std::map<std::pair<std::string, std::size_t>, Sample> cache_;
};

template <typename T>
struct LabeledBatch {
    std::vector<std::string> ids;
    Tensor<T> images; // (B, S, S, 3)
    LabelMap masks;   // (B, S, S)
};

/// Unlabeled batches carry no masks.
template <typename T>
struct UnlabeledBatch {
    std::vector<std::string> ids;
    Tensor<T> images;
};

namespace detail {
template <typename T>
Tensor<T> stack_images(const std::vector<Sample>& samples, std::size_t size) {
    Tensor<T> out(Shape{samples.size(), size, size, 3});
    const std::size_t per = size * size * 3;
    for (std::size_t b = 0; b < samples.size(); ++b)
        for (std::size_t i = 0; i < per; ++i) out[b * per + i] = static_cast<T>(samples[b].image[i]);
    return out;
}
} // namespace detail

template <typename T>
LabeledBatch<T> load_batch(const DatasetSource& src, const std::vector<std::string>& ids, std::size_t target_size) {
    if (ids.empty()) throw DataError("load_batch: empty id list");
    std::vector<Sample> samples;
    for (const auto& id : ids) samples.push_back(src.load(id, target_size, true));
    LabeledBatch<T> b;
    b.ids = ids;
    b.images = detail::stack_images<T>(samples, target_size);
    b.masks = LabelMap(Shape{ids.size(), target_size, target_size});
    const std::size_t per = target_size * target_size;
    for (std::size_t i = 0; i < samples.size(); ++i)
        std::copy(samples[i].mask->ptr(), samples[i].mask->ptr() + per, b.masks.ptr() + i * per);
    return b;
}

template <typename T>
UnlabeledBatch<T> load_unlabeled_batch(const DatasetSource& src, const std::vector<std::string>& ids, std::size_t target_size) {
    if (ids.empty()) throw DataError("load_batch: empty id list");
    std::vector<Sample> samples;
    for (const auto& id : ids) samples.push_back(src.load(id, target_size, false));
    return {ids, detail::stack_images<T>(samples, target_size)};
}

/// Deterministic infinite stream over `ids`: a fresh seeded permutation per pass.
/// Batch k is a pure function of (ids, seed, stream, k).
class BatchStream {
public:
    BatchStream(std::vector<std::string> ids, std::uint64_t seed, std::uint64_t stream, std::size_t batch_size)
        : ids_(std::move(ids)), seed_(seed), stream_(stream), batch_(batch_size) {
        if (batch_ == 0) throw ConfigError("batch size must be >= 1");
    }

    std::vector<std::string> batch(std::size_t k) const {
        std::vector<std::string> out;
        if (ids_.empty()) return out;
        for (std::size_t i = 0; i < batch_; ++i) {
            const std::size_t flat = k * batch_ + i;
            const std::size_t pass = flat / ids_.size();
            if (pass != cached_pass_) {
                order_ = ids_;
                seeded_shuffle(order_, mix_seed(seed_, stream_, pass));
                cached_pass_ = pass;
            }
            out.push_back(order_[flat % ids_.size()]);
        }
        return out;
    }

    std::size_t size() const noexcept { return ids_.size(); }
    std::size_t batch_size() const noexcept { return batch_; }
    std::size_t batches_per_pass() const noexcept { return ids_.empty() ? 0 : (ids_.size() + batch_ - 1) / batch_; }

private:
    std::vector<std::string> ids_;
    std::uint64_t seed_, stream_;
    std::size_t batch_;
    mutable std::vector<std::string> order_;
    mutable std::size_t cached_pass_ = SIZE_MAX;
};

// ---------------------------------------------------------------------------
// Synthetic lesions

struct SynthOptions {
    double min_coverage = 0.02;
    double max_coverage = 0.40;
};

/// One image with 1-3 low-contrast elliptical lesions on a textured background.
/// Lesions are smoother (less fine texture) and slightly shifted in color.
inline Sample synth_sample(std::size_t size, std::uint64_t seed, std::size_t index, const SynthOptions& opt = {}) {
    std::mt19937_64 rng(mix_seed(seed, 0x51a7, index));
    const double S = static_cast<double>(size);
    LabelMap mask(Shape{size, size});
    for (int attempt = 0;; ++attempt) {
        mask.fill(0);
        const std::size_t n_blobs = 1 + uniform_index(rng, 3);
        for (std::size_t k = 0; k < n_blobs; ++k) {
            const double cx = uniform(rng, 0.2, 0.8) * S, cy = uniform(rng, 0.2, 0.8) * S;
            const double ax = uniform(rng, 0.06, 0.22) * S, ay = uniform(rng, 0.06, 0.22) * S;
            const double th = uniform(rng, 0.0, std::numbers::pi);
            const double c = std::cos(th), s = std::sin(th);
            for (std::size_t y = 0; y < size; ++y)
                for (std::size_t x = 0; x < size; ++x) {
                    const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
                    const double u = (c * dx + s * dy) / ax, v = (-s * dx + c * dy) / ay;
                    if (u * u + v * v <= 1.0) mask.at(y, x) = 1;
                }
        }
        std::size_t fg = 0;
        for (auto v : mask.data()) fg += v;
        const double cov = static_cast<double>(fg) / (S * S);
        if (cov >= opt.min_coverage && cov <= opt.max_coverage) break;
        if (attempt > 1000) throw Error("synth_sample: cannot satisfy coverage bounds");
    }

    // Background: tissue-like base color, smooth waves, fine noise.
    double base[3] = {uniform(rng, 0.55, 0.75), uniform(rng, 0.30, 0.45), uniform(rng, 0.28, 0.42)};
    double shift[3] = {uniform(rng, 0.10, 0.16), uniform(rng, -0.02, 0.04), uniform(rng, -0.06, -0.02)};
    struct Wave {
        double fx, fy, phase, amp;
    };
    std::vector<Wave> waves;
    for (int k = 0; k < 3; ++k)
        waves.push_back({uniform(rng, 0.5, 3.0), uniform(rng, 0.5, 3.0), uniform(rng, 0.0, 2 * std::numbers::pi), uniform(rng, 0.02, 0.05)});
    Image img(Shape{size, size, 3});
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            double wave = 0;
            for (const auto& w : waves)
                wave += w.amp * std::sin(2 * std::numbers::pi * (w.fx * static_cast<double>(x) / S + w.fy * static_cast<double>(y) / S) + w.phase);
            const bool fg = mask.at(y, x) == 1;
            const double noise_sd = fg ? 0.02 : 0.06;
            const double n = gaussian(rng) * noise_sd;
            for (std::size_t ch = 0; ch < 3; ++ch) {
                double v = base[ch] + wave + n + (fg ? shift[ch] : 0.0);
                img.at(y, x, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    char id[32];
    std::snprintf(id, sizeof id, "synth_%05zu", index);
    return {id, std::move(img), std::move(mask)};
}

inline std::vector<Sample> synth_dataset(std::size_t n, std::size_t size, std::uint64_t seed, const SynthOptions& opt = {}) {
    if (n == 0) throw ConfigError("synth_dataset: n must be >= 1");
    if (size < 8) throw ConfigError("synth_dataset: size must be >= 8");
    std::vector<Sample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(synth_sample(size, seed, i, opt));
    return out;
}

/// Index over in-memory samples (no files); every entry is a training-pool sample.
inline DatasetIndex index_of(const std::vector<Sample>& samples) {
    DatasetIndex idx;
    for (const auto& s : samples) idx.entries.push_back({s.id, {}, {}, false});
    std::sort(idx.entries.begin(), idx.entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    return idx;
}

/// Writes samples in the generic layout: <dir>/images/<id>.png and <dir>/masks/<id>.png (0/255).
inline void write_dataset(const fs::path& dir, const std::vector<Sample>& samples) {
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    for (const auto& s : samples) {
        cv::Mat f = mat_from_image(s.image), u8, bgr;
        f.convertTo(u8, CV_8UC3, 255.0);
        cv::cvtColor(u8, bgr, cv::COLOR_RGB2BGR);
        write_png(dir / "images" / (s.id + ".png"), bgr);
        if (s.mask) {
            cv::Mat m(static_cast<int>(s.mask->dim(0)), static_cast<int>(s.mask->dim(1)), CV_8UC1);
            for (int y = 0; y < m.rows; ++y)
                for (int x = 0; x < m.cols; ++x) m.at<std::uint8_t>(y, x) = s.mask->at(y, x) ? 255 : 0;
            write_png(dir / "masks" / (s.id + ".png"), m);
        }
    }
}

} // namespace frcnet
