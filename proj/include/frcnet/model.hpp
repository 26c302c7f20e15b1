#pragma once

// The full student/teacher network: backbone, FEM branch and region projection.

#include <cstdint>

#include "frcnet/backbone.hpp"
#include "frcnet/frequency.hpp"
#include "frcnet/region.hpp"

namespace frcnet {

struct ModelConfig {
    BackboneConfig backbone;
    FemConfig fem;
    RegionConfig region;

    void validate() const {
        backbone.validate();
        region.validate(backbone.input_size);
        const std::size_t h = backbone.encoder_size();
        if (fem.patch_size == 0 || h % fem.patch_size != 0)
            throw ConfigError("encoder output size " + std::to_string(h) + " not divisible by patch size " +
                              std::to_string(fem.patch_size));
    }
};

struct ForwardOptions {
    bool frequency = true;
};

template <typename T>
class FrcModel {
public:
    FrcModel(const ModelConfig& cfg, std::uint64_t seed) : config_(cfg) {
        config_.validate();
        Rng rng(seed);
        backbone_ = build_backbone(config_.backbone, params_, rng);
        fem_ = build_fem(config_.fem, config_.backbone.encoder_size(), config_.backbone.encoder_channels(), params_, rng);
        region_ = build_region(config_.region, config_.backbone.input_size, config_.backbone.decoder_channels, params_);
    }

    const ModelConfig& config() const noexcept { return config_; }
    ParameterSet<T>& params() noexcept { return params_; }
    const ParameterSet<T>& params() const noexcept { return params_; }
    const FemLayers& fem_layers() const noexcept { return fem_; }
    const RegionLayers& region_layers() const noexcept { return region_; }

    ModelOutputs<T> forward(const Var<T>& images, ForwardOptions opt = {}) const {
        ModelOutputs<T> out = backbone_forward(images, config_.backbone, backbone_, params_);
        if (opt.frequency) {
            out.frequency.raw = block_dct(out.encoder, config_.fem.patch_size);
            auto [low, high] = split_low_high(out.frequency.raw);
            FrequencyOutputs<T> f = fem_forward(low, high, fem_, params_);
            out.frequency.low = f.low;
            out.frequency.high = f.high;
            out.frequency.enhanced = f.enhanced;
            out.has_frequency = true;
        }
        return out;
    }
    ModelOutputs<T> forward(const Tensor<T>& images, ForwardOptions opt = {}) const {
        return forward(Var<T>(images), opt);
    }

    std::map<std::size_t, Var<T>> region_similarities(const Var<T>& z) const {
        return multi_granularity_similarities(z, config_.region, &region_, &params_);
    }

private:
    ModelConfig config_;
    ParameterSet<T> params_;
    BackboneLayers backbone_;
    FemLayers fem_;
    RegionLayers region_;
};

} // namespace frcnet
