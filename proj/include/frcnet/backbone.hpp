#pragma once

// Small encoder-decoder segmentation network with per-stage bottleneck
// adapters. Exposes the encoder output X, the last decoder stage Z and the
// class probabilities P.

#include <set>
#include <string>
#include <vector>

#include "frcnet/nn.hpp"

namespace frcnet {

struct BackboneConfig {
    std::size_t input_size = 64;
    std::vector<std::size_t> stage_channels{8, 16, 32, 32};
    std::size_t decoder_channels = 16;
    std::size_t num_classes = 2;
    std::size_t adapter_dim = 4;

    std::size_t num_stages() const { return stage_channels.size(); }
    std::size_t downsample() const { return std::size_t{1} << num_stages(); }
    std::size_t encoder_size() const { return input_size / downsample(); }
    std::size_t encoder_channels() const { return stage_channels.back(); }

    void validate() const {
        if (num_stages() < 2) throw ConfigError("backbone: num_stages must be >= 2");
        for (std::size_t c : stage_channels)
            if (c == 0) throw ConfigError("backbone: stage channel widths must be >= 1");
        if (decoder_channels == 0 || adapter_dim == 0) throw ConfigError("backbone: channel widths must be >= 1");
        if (num_classes < 2) throw ConfigError("backbone: num_classes must be >= 2");
        if (input_size == 0 || input_size % downsample() != 0)
            throw ConfigError("backbone: input_size " + std::to_string(input_size) +
                              " not divisible by total downsampling " + std::to_string(downsample()));
    }
};

/// Enhanced frequency features produced by the FEM branch.
template <typename T>
struct FrequencyOutputs {
    Var<T> raw;      // block DCT of X, (B, h/p, w/p, p*p*d)
    Var<T> low;      // Phi1(F_l + E_l)
    Var<T> high;     // Phi2(F_h + E_h)
    Var<T> enhanced; // Phi3([low, high])
};

template <typename T>
struct ModelOutputs {
    Var<T> probs;  // P: (B, H, W, K), softmax over K
    Var<T> logits; // (B, H, W, K)
    Var<T> encoder; // X: (B, h, w, d)
    Var<T> decoder; // Z: (B, H, W, c')
    bool has_frequency = false;
    FrequencyOutputs<T> frequency;
};

struct AdapterLayer {
    LinearLayer down;
    LinearLayer up;
};

struct BackboneLayers {
    std::vector<ConvLayer> stage_down;
    std::vector<ConvLayer> stage_conv;
    std::vector<AdapterLayer> adapters;
    std::vector<ConvLayer> decoder; // one per fused skip level, deepest first; last one runs at full resolution
    LinearLayer head;
};

template <typename T>
BackboneLayers build_backbone(const BackboneConfig& cfg, ParameterSet<T>& ps, Rng& rng) {
    cfg.validate();
    BackboneLayers L;
    std::size_t in = 3;
    for (std::size_t s = 0; s < cfg.num_stages(); ++s) {
        const std::size_t c = cfg.stage_channels[s];
        const std::string p = "encoder.stage" + std::to_string(s);
        L.stage_down.push_back(make_conv(ps, p + ".down", ParamGroup::encoder_body, 3, in, c, {2, 1}, rng));
        L.stage_conv.push_back(make_conv(ps, p + ".conv", ParamGroup::encoder_body, 3, c, c, {1, 1}, rng));
        AdapterLayer a;
        const std::string ap = "adapter.stage" + std::to_string(s);
        a.down = make_linear(ps, ap + ".down", ParamGroup::adapters, c, cfg.adapter_dim, LinearInit::he, rng);
        a.up = make_linear(ps, ap + ".up", ParamGroup::adapters, cfg.adapter_dim, c, LinearInit::zeros, rng);
        L.adapters.push_back(a);
        in = c;
    }
    // Decoder: upsample x2, concat the skip of the next-shallower stage, conv.
    std::size_t cur = cfg.stage_channels.back();
    for (std::size_t s = cfg.num_stages() - 1; s-- > 0;) {
        const std::size_t skip = cfg.stage_channels[s];
        const std::size_t out = std::max(skip, cfg.decoder_channels);
        L.decoder.push_back(make_conv(ps, "decoder.level" + std::to_string(s), ParamGroup::decoder, 3, cur + skip, out,
                                      {1, 1}, rng));
        cur = out;
    }
    // Full resolution: the image itself is the skip.
    L.decoder.push_back(make_conv(ps, "decoder.full", ParamGroup::decoder, 3, cur + 3, cfg.decoder_channels, {1, 1}, rng));
    L.head = make_linear(ps, "seg_head", ParamGroup::seg_head, cfg.decoder_channels, cfg.num_classes, LinearInit::he, rng);
    return L;
}

/// Runs the backbone on images (B, H, W, 3) with values in [0,1]. F is left unfilled.
template <typename T>
ModelOutputs<T> backbone_forward(const Var<T>& image, const BackboneConfig& cfg, const BackboneLayers& L,
                                 const ParameterSet<T>& ps) {
    if (image.shape().size() != 4 || image.dim(1) != cfg.input_size || image.dim(2) != cfg.input_size || image.dim(3) != 3)
        throw ConfigError("backbone: image shape " + shape_str(image.shape()) + " does not match input_size " +
                          std::to_string(cfg.input_size));
    std::vector<Var<T>> skips;
    Var<T> x = image;
    for (std::size_t s = 0; s < cfg.num_stages(); ++s) {
        x = relu(apply(L.stage_down[s], ps, x));
        x = relu(apply(L.stage_conv[s], ps, x));
        x = add(x, apply(L.adapters[s].up, ps, relu(apply(L.adapters[s].down, ps, x))));
        skips.push_back(x);
    }
    ModelOutputs<T> out;
    out.encoder = x;
    Var<T> y = x;
    std::size_t level = 0;
    for (std::size_t s = cfg.num_stages() - 1; s-- > 0; ++level) {
        y = resize_bilinear(y, skips[s].dim(1), skips[s].dim(2));
        y = relu(apply(L.decoder[level], ps, concat_last<T>({y, skips[s]})));
    }
    y = resize_bilinear(y, cfg.input_size, cfg.input_size);
    y = relu(apply(L.decoder[level], ps, concat_last<T>({y, image})));
    out.decoder = y;
    out.logits = apply(L.head, ps, y);
    out.probs = softmax_last(out.logits);
    return out;
}

// ---------------------------------------------------------------------------
// Selective fine-tuning

enum class FreezeMode {
    all,    // every group trainable
    paper,  // seg_head, adapters, fem, region; only meaningful atop pretrained weights
    custom, // exactly the listed groups
};

struct FreezePolicy {
    FreezeMode mode = FreezeMode::paper;
    std::set<ParamGroup> groups;
    bool pretrained = false;

    static FreezePolicy all() { return {FreezeMode::all, {}, false}; }
    static FreezePolicy paper(bool pretrained) { return {FreezeMode::paper, {}, pretrained}; }
    static FreezePolicy custom(const std::vector<std::string>& names) {
        FreezePolicy p{FreezeMode::custom, {}, false};
        for (const auto& n : names) p.groups.insert(parse_param_group(n));
        return p;
    }

    std::set<ParamGroup> trainable_groups() const {
        switch (mode) {
        case FreezeMode::all: return {kAllParamGroups.begin(), kAllParamGroups.end()};
        case FreezeMode::paper:
            if (!pretrained) return {kAllParamGroups.begin(), kAllParamGroups.end()};
            return {ParamGroup::seg_head, ParamGroup::adapters, ParamGroup::fem, ParamGroup::region};
        case FreezeMode::custom: return groups;
        }
        return {};
    }
};

/// Indices of the parameters the optimizer may update under `policy`.
template <typename T>
std::vector<std::size_t> trainable_parameter_filter(const ParameterSet<T>& ps, const FreezePolicy& policy) {
    const auto groups = policy.trainable_groups();
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < ps.size(); ++i)
        if (groups.count(ps.entry(i).group)) out.push_back(i);
    return out;
}

} // namespace frcnet
