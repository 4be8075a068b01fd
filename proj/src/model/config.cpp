#include <algorithm>
#include <sstream>

#include "drfuser/errors.hpp"
#include "drfuser/model.hpp"

namespace drfuser {

namespace {

const std::vector<std::pair<FusionVariant, std::pair<const char*, const char*>>>& variant_table() {
    static const std::vector<std::pair<FusionVariant, std::pair<const char*, const char*>>> t{
        {FusionVariant::self_attention, {"drfuser", "self_attention"}},
        {FusionVariant::no_attention, {"none", "no_attention"}},
        {FusionVariant::additive_attention, {"additive", "additive_attention"}},
        {FusionVariant::early, {"early", "early"}},
        {FusionVariant::late, {"late", "late"}},
        {FusionVariant::rgb_only, {"rgb", "rgb_only"}},
        {FusionVariant::event_only, {"event", "event_only"}},
    };
    return t;
}

std::string join(const std::vector<std::size_t>& v) {
    std::ostringstream out;
    for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << v[i];
    return out.str();
}

bool uses_attention(FusionVariant v) {
    return v == FusionVariant::self_attention || v == FusionVariant::early;
}

}  // namespace

std::string variant_name(FusionVariant v) {
    for (const auto& [k, names] : variant_table())
        if (k == v) return names.first;
    return "unknown";
}

FusionVariant parse_variant(const std::string& name) {
    for (const auto& [k, names] : variant_table())
        if (name == names.first || name == names.second) return k;
    throw ConfigError("variant: unknown value '" + name +
                      "' (expected drfuser, none, additive, early, late, rgb or event)");
}

const std::vector<FusionVariant>& all_variants() {
    static const std::vector<FusionVariant> v{
        FusionVariant::self_attention, FusionVariant::no_attention, FusionVariant::additive_attention,
        FusionVariant::early,          FusionVariant::late,         FusionVariant::rgb_only,
        FusionVariant::event_only};
    return v;
}

EncoderConfig EncoderConfig::desk() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::full() {
    EncoderConfig c;
    c.stem_channels = 64;
    c.stem_kernel = 7;
    c.stem_stride = 2;
    c.stem_pool = true;
    c.block = BlockKind::bottleneck;
    c.stage_channels = {256, 512, 1024, 2048};
    c.stage_blocks = {3, 4, 6, 3};
    c.stage_strides = {1, 2, 2, 2};
    c.attention_stages = {2, 3, 4};
    return c;
}

DecoderConfig DecoderConfig::desk() { return DecoderConfig{}; }

DecoderConfig DecoderConfig::full() {
    DecoderConfig d;
    d.conv_channels = {1024, 512, 256};
    return d;
}

ModelConfig ModelConfig::desk(FusionVariant variant) {
    ModelConfig c;
    c.variant = variant;
    return c;
}

ModelConfig ModelConfig::full(FusionVariant variant) {
    ModelConfig c;
    c.encoder = EncoderConfig::full();
    c.decoder = DecoderConfig::full();
    c.variant = variant;
    c.height = 224;
    c.width = 224;
    return c;
}

void ModelConfig::validate() const {
    const auto& e = encoder;
    const std::size_t stages = e.stage_channels.size();
    if (stages == 0) throw ConfigError("encoder.stage_channels: need at least one stage");
    if (e.stage_blocks.size() != stages)
        throw ConfigError("encoder.stage_blocks: expected " + std::to_string(stages) + " entries");
    if (e.stage_strides.size() != stages)
        throw ConfigError("encoder.stage_strides: expected " + std::to_string(stages) + " entries");
    if (e.stem_channels == 0) throw ConfigError("encoder.stem_channels: must be >= 1");
    if (e.stem_kernel == 0) throw ConfigError("encoder.stem_kernel: must be >= 1");
    if (e.stem_stride == 0) throw ConfigError("encoder.stem_stride: must be >= 1");
    for (std::size_t s = 0; s < stages; ++s) {
        if (e.stage_channels[s] == 0) throw ConfigError("encoder.stage_channels: entries must be >= 1");
        if (e.stage_blocks[s] == 0) throw ConfigError("encoder.stage_blocks: entries must be >= 1");
        if (e.stage_strides[s] == 0) throw ConfigError("encoder.stage_strides: entries must be >= 1");
        if (e.block == BlockKind::bottleneck && e.stage_channels[s] % 4 != 0)
            throw ConfigError("encoder.stage_channels: bottleneck stages need multiples of 4");
    }
    for (std::size_t i = 0; i < e.attention_stages.size(); ++i) {
        const auto s = e.attention_stages[i];
        if (s < 1 || s > stages)
            throw ConfigError("encoder.attention_stages: stage " + std::to_string(s) +
                              " outside 1.." + std::to_string(stages));
        if (i > 0 && s <= e.attention_stages[i - 1])
            throw ConfigError("encoder.attention_stages: indices must be strictly increasing");
    }
    const bool fused = variant == FusionVariant::self_attention ||
                       variant == FusionVariant::additive_attention ||
                       variant == FusionVariant::no_attention;
    if (fused && (e.attention_stages.empty() || e.attention_stages.back() != stages))
        throw ConfigError("encoder.attention_stages: fusion variants need the final stage (" +
                          std::to_string(stages) + ") as the last fusion point");
    if (uses_attention(variant)) {
        if (heads == 0) throw ConfigError("model.heads: must be >= 1");
        if (window % 2 == 0) throw ConfigError("model.window: must be odd");
        for (auto s : e.attention_stages) {
            const auto c = e.stage_channels[s - 1];
            if (c % heads != 0 || (c / heads) % 2 != 0)
                throw ConfigError("model.heads: stage " + std::to_string(s) + " width " +
                                  std::to_string(c) + " must split into " + std::to_string(heads) +
                                  " heads of even width");
        }
    }
    if (decoder.conv_channels.empty()) throw ConfigError("decoder.conv_channels: need at least one block");
    for (auto c : decoder.conv_channels)
        if (c == 0) throw ConfigError("decoder.conv_channels: entries must be >= 1");
    if (!(decoder.keep_prob > 0.0 && decoder.keep_prob <= 1.0))
        throw ConfigError("decoder.keep_prob: must lie in (0, 1]");
    if (decoder.hidden == 0) throw ConfigError("decoder.hidden: must be >= 1");
    if (decoder.output != 1) throw ConfigError("decoder.output: steering head must have width 1");
    if (height == 0 || width == 0) throw ConfigError("model.height/model.width: must be >= 1");
}

ModelConfig ModelConfig::from_config(const KeyValueConfig& cfg) {
    const auto preset = cfg.get_string("model.preset", "desk");
    if (preset != "desk" && preset != "full")
        throw ConfigError("model.preset: expected desk or full, got '" + preset + "'");
    ModelConfig c = preset == "full" ? ModelConfig::full() : ModelConfig::desk();
    c.variant = parse_variant(cfg.get_string("model.variant", variant_name(c.variant)));
    c.heads = cfg.get_uint("model.heads", c.heads);
    c.window = cfg.get_uint("model.window", c.window);
    c.height = cfg.get_uint("model.height", c.height);
    c.width = cfg.get_uint("model.width", c.width);
    c.share_attention_weights = cfg.get_bool("model.share_attention_weights", c.share_attention_weights);

    auto& e = c.encoder;
    e.stem_channels = cfg.get_uint("encoder.stem_channels", e.stem_channels);
    e.stem_kernel = cfg.get_uint("encoder.stem_kernel", e.stem_kernel);
    e.stem_stride = cfg.get_uint("encoder.stem_stride", e.stem_stride);
    e.stem_pool = cfg.get_bool("encoder.stem_pool", e.stem_pool);
    const auto block = cfg.get_string("encoder.block", e.block == BlockKind::basic ? "basic" : "bottleneck");
    if (block == "basic")
        e.block = BlockKind::basic;
    else if (block == "bottleneck")
        e.block = BlockKind::bottleneck;
    else
        throw ConfigError("encoder.block: expected basic or bottleneck, got '" + block + "'");
    e.stage_channels = cfg.get_sizes("encoder.stage_channels", e.stage_channels);
    e.stage_blocks = cfg.get_sizes("encoder.stage_blocks", e.stage_blocks);
    e.stage_strides = cfg.get_sizes("encoder.stage_strides", e.stage_strides);
    e.attention_stages = cfg.get_sizes("encoder.attention_stages", e.attention_stages);

    auto& d = c.decoder;
    d.conv_channels = cfg.get_sizes("decoder.conv_channels", d.conv_channels);
    d.keep_prob = cfg.get_double("decoder.keep_prob", d.keep_prob);
    d.hidden = cfg.get_uint("decoder.hidden", d.hidden);
    c.validate();
    return c;
}

void ModelConfig::write_to(KeyValueConfig& cfg) const {
    cfg.set("model.variant", variant_name(variant));
    cfg.set("model.heads", std::to_string(heads));
    cfg.set("model.window", std::to_string(window));
    cfg.set("model.height", std::to_string(height));
    cfg.set("model.width", std::to_string(width));
    cfg.set("model.share_attention_weights", share_attention_weights ? "true" : "false");
    cfg.set("encoder.stem_channels", std::to_string(encoder.stem_channels));
    cfg.set("encoder.stem_kernel", std::to_string(encoder.stem_kernel));
    cfg.set("encoder.stem_stride", std::to_string(encoder.stem_stride));
    cfg.set("encoder.stem_pool", encoder.stem_pool ? "true" : "false");
    cfg.set("encoder.block", encoder.block == BlockKind::basic ? "basic" : "bottleneck");
    cfg.set("encoder.stage_channels", join(encoder.stage_channels));
    cfg.set("encoder.stage_blocks", join(encoder.stage_blocks));
    cfg.set("encoder.stage_strides", join(encoder.stage_strides));
    cfg.set("encoder.attention_stages", join(encoder.attention_stages));
    cfg.set("decoder.conv_channels", join(decoder.conv_channels));
    std::ostringstream kp;
    kp.precision(17);
    kp << decoder.keep_prob;
    cfg.set("decoder.keep_prob", kp.str());
    cfg.set("decoder.hidden", std::to_string(decoder.hidden));
}

ShapeReport infer_shapes(const ModelConfig& config) {
    config.validate();
    const auto& e = config.encoder;
    ShapeReport r;
    r.encoder_input_channels = config.variant == FusionVariant::early ? 5 : 3;
    try {
        std::size_t h = shapes::conv_out(config.height, e.stem_kernel, e.stem_stride, e.stem_kernel / 2);
        std::size_t w = shapes::conv_out(config.width, e.stem_kernel, e.stem_stride, e.stem_kernel / 2);
        r.encoder.push_back({"stem", e.stem_channels, h, w});
        if (e.stem_pool) {
            h = shapes::conv_out(h, 3, 2, 1);
            w = shapes::conv_out(w, 3, 2, 1);
            r.encoder.push_back({"pool", e.stem_channels, h, w});
        }
        for (std::size_t s = 0; s < e.stage_channels.size(); ++s) {
            // the first block carries the stride through its 3x3 conv (padding 1)
            h = shapes::conv_out(h, 3, e.stage_strides[s], 1);
            w = shapes::conv_out(w, 3, e.stage_strides[s], 1);
            r.encoder.push_back({"stage" + std::to_string(s + 1), e.stage_channels[s], h, w});
        }
        for (std::size_t b = 0; b < config.decoder.conv_channels.size(); ++b)
            r.decoder.push_back({"block" + std::to_string(b + 1), config.decoder.conv_channels[b], h, w});
        r.flatten = config.decoder.conv_channels.back() * h * w;
    } catch (const DimensionError& err) {
        throw ConfigError("model.height/model.width: input " + std::to_string(config.height) + "x" +
                          std::to_string(config.width) + " too small for the encoder (" + err.what() + ")");
    }
    return r;
}

}  // namespace drfuser
