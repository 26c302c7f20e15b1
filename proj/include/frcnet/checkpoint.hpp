#pragma once

// Single-file binary checkpoint: run config, architecture hash, step counters,
// student and teacher parameters, optimizer moments. Parameter payloads are
// raw scalars, so save/load round-trips bit-exactly.
//
// Layout (native little-endian):
//   "FRCNETCK" u32 version u32 scalar_bytes u64 config_hash u64 step
//   f64 best_dice u64 teacher_step u64 json_len json_bytes
//   params(student) params(teacher) u8 has_optimizer [u64 adam_t moments...]
// params := u64 count { u32 name_len name u32 group u32 rank u64 dims[rank] data }

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "frcnet/config.hpp"

namespace frcnet {

inline constexpr char kCheckpointMagic[8] = {'F', 'R', 'C', 'N', 'E', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
    json config; // full TrainConfig JSON
    std::uint64_t config_hash = 0;
    std::uint64_t step = 0;
    double best_dice = -1.0;
    std::uint64_t teacher_step = 0;
    ParameterSet<T> student;
    ParameterSet<T> teacher;
    std::optional<std::uint64_t> adam_step;
    std::vector<Tensor<T>> adam_m;
    std::vector<Tensor<T>> adam_v;
};

namespace detail {

class BinWriter {
public:
    explicit BinWriter(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
        if (!out_) throw IoError("cannot open checkpoint '" + path.string() + "' for writing");
    }
    template <typename V>
    void pod(const V& v) {
        out_.write(reinterpret_cast<const char*>(&v), sizeof(V));
    }
    void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    void str(const std::string& s) {
        pod(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    void finish() {
        out_.flush();
        if (!out_) throw IoError("write to checkpoint '" + path_.string() + "' failed");
    }

private:
    std::ofstream out_;
    std::filesystem::path path_;
};

class BinReader {
public:
    explicit BinReader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw IoError("cannot open checkpoint '" + path.string() + "'");
    }
    template <typename V>
    V pod() {
        V v{};
        bytes(&v, sizeof(V));
        return v;
    }
    void bytes(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (!in_) throw IoError("checkpoint '" + path_.string() + "' is truncated");
    }
    std::string str() {
        const auto n = pod<std::uint32_t>();
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }

private:
    std::ifstream in_;
    std::filesystem::path path_;
};

template <typename T>
void write_params(BinWriter& w, const ParameterSet<T>& ps) {
    w.pod(static_cast<std::uint64_t>(ps.size()));
    for (const auto& p : ps) {
        w.str(p.name);
        w.pod(static_cast<std::uint32_t>(p.group));
        const Shape& s = p.var.shape();
        w.pod(static_cast<std::uint32_t>(s.size()));
        for (std::size_t d : s) w.pod(static_cast<std::uint64_t>(d));
        w.bytes(p.var.value().ptr(), p.var.size() * sizeof(T));
    }
}

template <typename T>
ParameterSet<T> read_params(BinReader& r) {
    ParameterSet<T> ps;
    const auto n = r.pod<std::uint64_t>();
    for (std::uint64_t i = 0; i < n; ++i) {
        std::string name = r.str();
        const auto group = r.pod<std::uint32_t>();
        if (group >= kAllParamGroups.size()) throw IoError("checkpoint: bad parameter group for '" + name + "'");
        const auto rank = r.pod<std::uint32_t>();
        Shape s(rank);
        for (auto& d : s) d = static_cast<std::size_t>(r.pod<std::uint64_t>());
        Tensor<T> t(s);
        r.bytes(t.ptr(), t.size() * sizeof(T));
        ps.add(std::move(name), static_cast<ParamGroup>(group), std::move(t));
    }
    return ps;
}

} // namespace detail

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& ck) {
    // Write-then-rename so an interrupted save never clobbers the previous file.
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        detail::BinWriter w(tmp);
        w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
        w.pod(kCheckpointVersion);
        w.pod(static_cast<std::uint32_t>(sizeof(T)));
        w.pod(ck.config_hash);
        w.pod(ck.step);
        w.pod(ck.best_dice);
        w.pod(ck.teacher_step);
        const std::string cfg = ck.config.dump();
        w.pod(static_cast<std::uint64_t>(cfg.size()));
        w.bytes(cfg.data(), cfg.size());
        detail::write_params(w, ck.student);
        detail::write_params(w, ck.teacher);
        w.pod(static_cast<std::uint8_t>(ck.adam_step ? 1 : 0));
        if (ck.adam_step) {
            w.pod(*ck.adam_step);
            w.pod(static_cast<std::uint64_t>(ck.adam_m.size()));
            for (std::size_t i = 0; i < ck.adam_m.size(); ++i) {
                w.pod(static_cast<std::uint64_t>(ck.adam_m[i].size()));
                w.bytes(ck.adam_m[i].ptr(), ck.adam_m[i].size() * sizeof(T));
                w.bytes(ck.adam_v[i].ptr(), ck.adam_v[i].size() * sizeof(T));
            }
        }
        w.finish();
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place at '" + path.string() + "': " + ec.message());
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
    detail::BinReader r(path);
    char magic[8];
    r.bytes(magic, sizeof magic);
    if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw IoError("'" + path.string() + "' is not a checkpoint");
    if (r.pod<std::uint32_t>() != kCheckpointVersion) throw IoError("unsupported checkpoint version in '" + path.string() + "'");
    if (r.pod<std::uint32_t>() != sizeof(T)) throw IoError("checkpoint scalar width differs from the requested type");
    Checkpoint<T> ck;
    ck.config_hash = r.pod<std::uint64_t>();
    ck.step = r.pod<std::uint64_t>();
    ck.best_dice = r.pod<double>();
    ck.teacher_step = r.pod<std::uint64_t>();
    const auto len = r.pod<std::uint64_t>();
    std::string cfg(len, '\0');
    r.bytes(cfg.data(), len);
    ck.config = json::parse(cfg, nullptr, false);
    if (ck.config.is_discarded()) throw IoError("checkpoint config block is corrupt");
    ck.student = detail::read_params<T>(r);
    ck.teacher = detail::read_params<T>(r);
    if (r.pod<std::uint8_t>()) {
        ck.adam_step = r.pod<std::uint64_t>();
        const auto n = r.pod<std::uint64_t>();
        for (std::uint64_t i = 0; i < n; ++i) {
            const auto sz = r.pod<std::uint64_t>();
            Tensor<T> m(Shape{sz}), v(Shape{sz});
            r.bytes(m.ptr(), sz * sizeof(T));
            r.bytes(v.ptr(), sz * sizeof(T));
            ck.adam_m.push_back(std::move(m));
            ck.adam_v.push_back(std::move(v));
        }
    }
    return ck;
}

/// Copies values from `src` into `dst`, requiring identical names and shapes.
template <typename T>
void copy_parameters(ParameterSet<T>& dst, const ParameterSet<T>& src) {
    if (dst.size() != src.size()) throw ConfigError("parameter layouts differ (" + std::to_string(dst.size()) + " vs " + std::to_string(src.size()) + ")");
    for (std::size_t i = 0; i < dst.size(); ++i) {
        if (dst.entry(i).name != src.entry(i).name || dst[i].shape() != src[i].shape())
            throw ConfigError("parameter '" + dst.entry(i).name + "' does not match checkpoint");
        dst[i].mutable_value() = src[i].value();
    }
}

} // namespace frcnet
