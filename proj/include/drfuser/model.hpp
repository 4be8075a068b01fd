#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "drfuser/attention.hpp"
#include "drfuser/config_file.hpp"
#include "drfuser/ops.hpp"
#include "drfuser/tensor.hpp"

namespace drfuser {

enum class FusionVariant {
    self_attention,
    additive_attention,
    no_attention,
    early,
    late,
    rgb_only,
    event_only,
};

// Short names used on the command line: drfuser, none, additive, early, late, rgb, event.
std::string variant_name(FusionVariant v);
// Accepts the short names and the long enum spellings.
FusionVariant parse_variant(const std::string& name);
const std::vector<FusionVariant>& all_variants();

enum class BlockKind { basic, bottleneck };

struct EncoderConfig {
    std::size_t stem_channels = 16;
    std::size_t stem_kernel = 3;
    std::size_t stem_stride = 2;
    bool stem_pool = true;  // 3x3 max pool, stride 2, padding 1
    BlockKind block = BlockKind::basic;
    std::vector<std::size_t> stage_channels{16, 32, 64, 128};
    std::vector<std::size_t> stage_blocks{1, 1, 1, 1};
    std::vector<std::size_t> stage_strides{1, 2, 2, 2};
    // 1-based stage indices whose outputs pass through attention / fusion.
    std::vector<std::size_t> attention_stages{2, 3, 4};

    static EncoderConfig desk();
    // ResNet-50 layout: 7x7 stem, bottleneck stages 256/512/1024/2048 with 3/4/6/3 blocks.
    static EncoderConfig full();
};

struct DecoderConfig {
    // Output channels of the conv + BN + ReLU blocks, applied in order.
    std::vector<std::size_t> conv_channels{64, 32, 16};
    double keep_prob = kDefaultKeepProb;
    std::size_t hidden = 512;
    std::size_t output = 1;

    static DecoderConfig desk();
    static DecoderConfig full();
};

struct ModelConfig {
    EncoderConfig encoder;
    DecoderConfig decoder;
    FusionVariant variant = FusionVariant::self_attention;
    std::size_t heads = kDefaultHeads;
    std::size_t window = kDefaultWindow;
    std::size_t height = 64;
    std::size_t width = 64;
    bool share_attention_weights = false;

    static ModelConfig desk(FusionVariant variant = FusionVariant::self_attention);
    static ModelConfig full(FusionVariant variant = FusionVariant::self_attention);

    // Throws ConfigError naming the offending field.
    void validate() const;

    // [model] / [encoder] / [decoder] sections; unspecified keys keep desk defaults.
    static ModelConfig from_config(const KeyValueConfig& cfg);
    void write_to(KeyValueConfig& cfg) const;
};

// Per-layer extents computed from the configuration alone.
struct LayerShape {
    std::string name;
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
};

struct ShapeReport {
    std::vector<LayerShape> encoder;  // stem, pool (if any), stage1..stageS
    std::vector<LayerShape> decoder;  // conv blocks
    std::size_t flatten = 0;          // input width of the first linear layer
    std::size_t encoder_input_channels = 0;
};

ShapeReport infer_shapes(const ModelConfig& config);

struct ForwardOptions {
    Mode mode = Mode::eval;
    std::uint64_t dropout_seed = 0;
    // Replace the event stream by zeros at every fusion point (diagnostics).
    bool zero_event_features = false;
};

template <typename Real>
struct NamedTensor {
    std::string name;
    Tensor<Real> tensor;
};

template <typename Real>
class Model {
public:
    Model(const ModelConfig& config, std::uint64_t seed);
    ~Model();
    Model(Model&&) noexcept;
    Model& operator=(Model&&) noexcept;

    const ModelConfig& config() const { return config_; }

    // rgb [N,3,H,W], evt [N,2,H,W] -> [N,1]. Unimodal variants ignore the other input,
    // which may then be undefined.
    Tensor<Real> forward(const Tensor<Real>& rgb, const Tensor<Real>& evt, const ForwardOptions& opts);

    // Trainable tensors in a stable order.
    std::vector<NamedTensor<Real>> parameters() const;
    // Batch-norm running statistics.
    std::vector<NamedTensor<Real>> buffers() const;
    std::size_t parameter_count() const;

    // Copies every tensor whose name and shape match; returns how many were copied.
    std::size_t copy_matching_from(const Model& other);

    void save(const std::filesystem::path& path) const;
    // Throws DataError when names or shapes disagree with this model.
    void load(const std::filesystem::path& path);

private:
    struct Impl;
    ModelConfig config_;
    std::unique_ptr<Impl> impl_;
};

using ModelF = Model<float>;
using ModelD = Model<double>;

}  // namespace drfuser
