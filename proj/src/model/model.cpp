#include "drfuser/model.hpp"

#include <algorithm>
#include <map>

#include "drfuser/checkpoint.hpp"
#include "drfuser/errors.hpp"
#include "drfuser/init.hpp"
#include "drfuser/rng.hpp"

namespace drfuser {

namespace {

template <typename Real>
using Named = std::vector<NamedTensor<Real>>;

template <typename Real>
struct ConvBN {
    Tensor<Real> weight, gamma, beta, running_mean, running_var;
    std::size_t stride = 1, padding = 0;

    static ConvBN make(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride, Rng& rng) {
        ConvBN c;
        c.weight = init::he_normal<Real>({cout, cin, k, k}, cin * k * k, rng);
        c.gamma = init::constant<Real>({cout}, Real(1));
        c.beta = init::constant<Real>({cout}, Real(0));
        c.running_mean = init::constant<Real>({cout}, Real(0), false);
        c.running_var = init::constant<Real>({cout}, Real(1), false);
        c.stride = stride;
        c.padding = k / 2;
        return c;
    }

    Tensor<Real> forward(const Tensor<Real>& x, Mode mode) {
        const auto y = conv2d(x, weight, Tensor<Real>(), {stride, padding});
        BatchNormOptions bn;
        bn.mode = mode;
        return batch_norm2d(y, gamma, beta, running_mean, running_var, bn);
    }

    void collect(const std::string& prefix, Named<Real>& params, Named<Real>& buffers) const {
        params.push_back({prefix + ".conv.weight", weight});
        params.push_back({prefix + ".bn.weight", gamma});
        params.push_back({prefix + ".bn.bias", beta});
        buffers.push_back({prefix + ".bn.running_mean", running_mean});
        buffers.push_back({prefix + ".bn.running_var", running_var});
    }
};

template <typename Real>
struct ResidualBlock {
    std::vector<ConvBN<Real>> convs;
    std::optional<ConvBN<Real>> down;

    static ResidualBlock make(BlockKind kind, std::size_t cin, std::size_t cout, std::size_t stride, Rng& rng) {
        ResidualBlock b;
        if (kind == BlockKind::basic) {
            b.convs.push_back(ConvBN<Real>::make(cin, cout, 3, stride, rng));
            b.convs.push_back(ConvBN<Real>::make(cout, cout, 3, 1, rng));
        } else {
            const std::size_t mid = cout / 4;
            b.convs.push_back(ConvBN<Real>::make(cin, mid, 1, 1, rng));
            b.convs.push_back(ConvBN<Real>::make(mid, mid, 3, stride, rng));
            b.convs.push_back(ConvBN<Real>::make(mid, cout, 1, 1, rng));
        }
        if (stride != 1 || cin != cout) b.down = ConvBN<Real>::make(cin, cout, 1, stride, rng);
        return b;
    }

    Tensor<Real> forward(const Tensor<Real>& x, Mode mode) {
        Tensor<Real> y = x;
        for (std::size_t i = 0; i < convs.size(); ++i) {
            y = convs[i].forward(y, mode);
            if (i + 1 < convs.size()) y = relu(y);
        }
        return relu(add(y, down ? down->forward(x, mode) : x));
    }

    void collect(const std::string& prefix, Named<Real>& params, Named<Real>& buffers) const {
        for (std::size_t i = 0; i < convs.size(); ++i)
            convs[i].collect(prefix + ".conv" + std::to_string(i + 1), params, buffers);
        if (down) down->collect(prefix + ".down", params, buffers);
    }
};

template <typename Real>
struct Encoder {
    ConvBN<Real> stem;
    bool pool = true;
    std::vector<std::vector<ResidualBlock<Real>>> stages;

    static Encoder make(const EncoderConfig& cfg, std::size_t in_channels, Rng& rng) {
        Encoder e;
        e.stem = ConvBN<Real>::make(in_channels, cfg.stem_channels, cfg.stem_kernel, cfg.stem_stride, rng);
        e.pool = cfg.stem_pool;
        std::size_t c = cfg.stem_channels;
        for (std::size_t s = 0; s < cfg.stage_channels.size(); ++s) {
            std::vector<ResidualBlock<Real>> blocks;
            for (std::size_t b = 0; b < cfg.stage_blocks[s]; ++b) {
                blocks.push_back(ResidualBlock<Real>::make(cfg.block, c, cfg.stage_channels[s],
                                                           b == 0 ? cfg.stage_strides[s] : 1, rng));
                c = cfg.stage_channels[s];
            }
            e.stages.push_back(std::move(blocks));
        }
        return e;
    }

    Tensor<Real> forward_stem(const Tensor<Real>& x, Mode mode) {
        auto y = relu(stem.forward(x, mode));
        if (pool) y = max_pool2d(y, Pool2dOptions{3, 2, 1});
        return y;
    }

    Tensor<Real> forward_stage(std::size_t s, Tensor<Real> x, Mode mode) {
        for (auto& b : stages[s]) x = b.forward(x, mode);
        return x;
    }

    void collect(const std::string& prefix, Named<Real>& params, Named<Real>& buffers) const {
        stem.collect(prefix + ".stem", params, buffers);
        for (std::size_t s = 0; s < stages.size(); ++s)
            for (std::size_t b = 0; b < stages[s].size(); ++b)
                stages[s][b].collect(prefix + ".stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1),
                                     params, buffers);
    }
};

template <typename Real>
struct Decoder {
    std::vector<ConvBN<Real>> blocks;
    std::vector<bool> dropout;
    double keep_prob = kDefaultKeepProb;
    Tensor<Real> fc1_w, fc1_b, fc2_w, fc2_b;
    bool has_fc2 = true;

    static Decoder make(const DecoderConfig& cfg, std::size_t in_channels, std::size_t flatten,
                        bool with_output, Rng& rng) {
        Decoder d;
        std::size_t c = in_channels;
        const std::size_t n = cfg.conv_channels.size();
        for (std::size_t i = 0; i < n; ++i) {
            d.blocks.push_back(ConvBN<Real>::make(c, cfg.conv_channels[i], 3, 1, rng));
            // dropout sits in the last two blocks (the only block when there is one)
            d.dropout.push_back(i + 2 >= n);
            c = cfg.conv_channels[i];
        }
        d.keep_prob = cfg.keep_prob;
        d.fc1_w = init::he_normal<Real>({cfg.hidden, flatten}, flatten, rng);
        d.fc1_b = init::constant<Real>({cfg.hidden}, Real(0));
        d.has_fc2 = with_output;
        if (with_output) {
            d.fc2_w = init::he_normal<Real>({cfg.output, cfg.hidden}, cfg.hidden, rng);
            d.fc2_b = init::constant<Real>({cfg.output}, Real(0));
        }
        return d;
    }

    // Conv ladder, flatten, first linear layer and its ReLU.
    Tensor<Real> features(const Tensor<Real>& x, const ForwardOptions& opts, std::uint64_t salt) {
        Tensor<Real> y = x;
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            y = relu(blocks[i].forward(y, opts.mode));
            if (dropout[i] && keep_prob < 1.0)
                y = dropout_op(y, mix_seed(opts.dropout_seed, salt * 64 + i), opts.mode);
        }
        const std::size_t n = y.dim(0);
        y = reshape(y, {n, y.numel() / n});
        return relu(linear(y, fc1_w, fc1_b));
    }

    Tensor<Real> forward(const Tensor<Real>& x, const ForwardOptions& opts, std::uint64_t salt) {
        return linear(features(x, opts, salt), fc2_w, fc2_b);
    }

    Tensor<Real> dropout_op(const Tensor<Real>& y, std::uint64_t seed, Mode mode) const {
        return drfuser::dropout(y, keep_prob, seed, mode);
    }

    void collect(const std::string& prefix, Named<Real>& params, Named<Real>& buffers) const {
        for (std::size_t i = 0; i < blocks.size(); ++i)
            blocks[i].collect(prefix + ".block" + std::to_string(i + 1), params, buffers);
        params.push_back({prefix + ".fc1.weight", fc1_w});
        params.push_back({prefix + ".fc1.bias", fc1_b});
        if (has_fc2) {
            params.push_back({prefix + ".fc2.weight", fc2_w});
            params.push_back({prefix + ".fc2.bias", fc2_b});
        }
    }
};

template <typename Real>
void collect_attention(const std::string& prefix, const SelfAttentionParams<Real>& p, Named<Real>& params) {
    params.push_back({prefix + ".wq", p.wq});
    params.push_back({prefix + ".wk", p.wk});
    params.push_back({prefix + ".wv", p.wv});
    params.push_back({prefix + ".row_embed", p.row_embed});
    params.push_back({prefix + ".col_embed", p.col_embed});
}

template <typename Real>
struct FusionPoint {
    std::size_t stage = 0;  // 1-based
    std::optional<SelfAttentionParams<Real>> rgb_attn, evt_attn;  // evt_attn empty when shared
    std::optional<AdditiveAttentionParams<Real>> gate;
};

}  // namespace

template <typename Real>
struct Model<Real>::Impl {
    std::optional<Encoder<Real>> rgb, evt, early;
    std::optional<Decoder<Real>> decoder, rgb_decoder, evt_decoder;
    Tensor<Real> head_w, head_b;
    std::vector<FusionPoint<Real>> fusion;

    bool fuses_at(std::size_t stage) const {
        return std::any_of(fusion.begin(), fusion.end(), [&](const auto& f) { return f.stage == stage; });
    }
    FusionPoint<Real>& point(std::size_t stage) {
        for (auto& f : fusion)
            if (f.stage == stage) return f;
        throw ContractError("no fusion point at stage " + std::to_string(stage));
    }
};

template <typename Real>
Model<Real>::Model(const ModelConfig& config, std::uint64_t seed) : config_(config), impl_(std::make_unique<Impl>()) {
    const ShapeReport shapes = infer_shapes(config_);
    Rng rng(seed);
    auto& m = *impl_;
    const auto& ec = config_.encoder;
    const std::size_t last_c = ec.stage_channels.back();
    const auto v = config_.variant;

    if (v == FusionVariant::early) {
        m.early = Encoder<Real>::make(ec, 5, rng);
    } else {
        if (v != FusionVariant::event_only) m.rgb = Encoder<Real>::make(ec, 3, rng);
        if (v != FusionVariant::rgb_only) m.evt = Encoder<Real>::make(ec, 2, rng);
    }

    const bool has_fusion = v == FusionVariant::self_attention || v == FusionVariant::additive_attention ||
                            v == FusionVariant::no_attention || v == FusionVariant::early;
    if (has_fusion) {
        for (auto s : ec.attention_stages) {
            FusionPoint<Real> f;
            f.stage = s;
            const std::size_t c = ec.stage_channels[s - 1];
            if (v == FusionVariant::self_attention || v == FusionVariant::early) {
                f.rgb_attn = SelfAttentionParams<Real>::init(c, c, config_.heads, config_.window, rng);
                if (v == FusionVariant::self_attention && !config_.share_attention_weights)
                    f.evt_attn = SelfAttentionParams<Real>::init(c, c, config_.heads, config_.window, rng);
            } else if (v == FusionVariant::additive_attention) {
                f.gate = AdditiveAttentionParams<Real>::init(c, rng);
            }
            m.fusion.push_back(std::move(f));
        }
    }

    if (v == FusionVariant::late) {
        m.rgb_decoder = Decoder<Real>::make(config_.decoder, last_c, shapes.flatten, false, rng);
        m.evt_decoder = Decoder<Real>::make(config_.decoder, last_c, shapes.flatten, false, rng);
        m.head_w = init::he_normal<Real>({1, 2 * config_.decoder.hidden}, 2 * config_.decoder.hidden, rng);
        m.head_b = init::constant<Real>({1}, Real(0));
    } else {
        m.decoder = Decoder<Real>::make(config_.decoder, last_c, shapes.flatten, true, rng);
    }
}

template <typename Real>
Model<Real>::~Model() = default;
template <typename Real>
Model<Real>::Model(Model&&) noexcept = default;
template <typename Real>
Model<Real>& Model<Real>::operator=(Model&&) noexcept = default;

template <typename Real>
Tensor<Real> Model<Real>::forward(const Tensor<Real>& rgb, const Tensor<Real>& evt, const ForwardOptions& opts) {
    auto& m = *impl_;
    const auto v = config_.variant;
    const Mode mode = opts.mode;
    auto check = [&](const Tensor<Real>& t, std::size_t channels, const char* what) {
        if (!t.defined() || t.rank() != 4 || t.dim(1) != channels || t.dim(2) != config_.height ||
            t.dim(3) != config_.width)
            throw DimensionError(std::string(what) + " input must be [N," + std::to_string(channels) + "," +
                                 std::to_string(config_.height) + "," + std::to_string(config_.width) +
                                 "], got " + (t.defined() ? shape_str(t.shape()) : std::string("undefined")));
    };
    if (v != FusionVariant::event_only) check(rgb, 3, "rgb");
    if (v != FusionVariant::rgb_only) check(evt, 2, "event");
    if (v != FusionVariant::event_only && v != FusionVariant::rgb_only && rgb.dim(0) != evt.dim(0))
        throw DimensionError("rgb and event batches differ: " + std::to_string(rgb.dim(0)) + " vs " +
                             std::to_string(evt.dim(0)));
    const std::size_t stages = config_.encoder.stage_channels.size();

    switch (v) {
        case FusionVariant::rgb_only:
        case FusionVariant::event_only: {
            auto& enc = v == FusionVariant::rgb_only ? *m.rgb : *m.evt;
            auto x = enc.forward_stem(v == FusionVariant::rgb_only ? rgb : evt, mode);
            for (std::size_t s = 0; s < stages; ++s) x = enc.forward_stage(s, x, mode);
            return m.decoder->forward(x, opts, 0);
        }
        case FusionVariant::early: {
            auto x = m.early->forward_stem(concat_channels<Real>({rgb, evt}), mode);
            for (std::size_t s = 0; s < stages; ++s) {
                x = m.early->forward_stage(s, x, mode);
                if (m.fuses_at(s + 1)) x = add(x, local_self_attention(x, *m.point(s + 1).rgb_attn));
            }
            return m.decoder->forward(x, opts, 0);
        }
        case FusionVariant::late: {
            auto r = m.rgb->forward_stem(rgb, mode);
            auto e = m.evt->forward_stem(evt, mode);
            for (std::size_t s = 0; s < stages; ++s) {
                r = m.rgb->forward_stage(s, r, mode);
                e = m.evt->forward_stage(s, e, mode);
            }
            const auto hr = m.rgb_decoder->features(r, opts, 1);
            const auto he = m.evt_decoder->features(e, opts, 2);
            return linear(concat_channels<Real>({hr, he}), m.head_w, m.head_b);
        }
        default:
            break;
    }

    auto r = m.rgb->forward_stem(rgb, mode);
    auto e = m.evt->forward_stem(evt, mode);
    Tensor<Real> fused;
    for (std::size_t s = 0; s < stages; ++s) {
        r = m.rgb->forward_stage(s, r, mode);
        e = m.evt->forward_stage(s, e, mode);
        if (!m.fuses_at(s + 1)) continue;
        if (opts.zero_event_features) e = Tensor<Real>::zeros(e.shape());
        auto& f = m.point(s + 1);
        if (v == FusionVariant::self_attention) {
            const auto& pe = f.evt_attn ? *f.evt_attn : *f.rgb_attn;
            fused = add(local_self_attention(r, *f.rgb_attn), local_self_attention(e, pe));
            r = add(r, fused);
            e = add(e, fused);
        } else if (v == FusionVariant::no_attention) {
            fused = fuse_elementwise(r, e);
            r = fused;
            e = fused;
        } else {
            fused = additive_attention_fuse(r, e, *f.gate);
            r = add(r, fused);
            e = add(e, fused);
        }
    }
    return m.decoder->forward(fused, opts, 0);
}

template <typename Real>
std::vector<NamedTensor<Real>> Model<Real>::parameters() const {
    Named<Real> params, buffers;
    const auto& m = *impl_;
    if (m.early) m.early->collect("early", params, buffers);
    if (m.rgb) m.rgb->collect("rgb", params, buffers);
    if (m.evt) m.evt->collect("evt", params, buffers);
    for (const auto& f : m.fusion) {
        const std::string prefix = "fusion.stage" + std::to_string(f.stage);
        if (f.evt_attn) {
            collect_attention(prefix + ".rgb_attn", *f.rgb_attn, params);
            collect_attention(prefix + ".evt_attn", *f.evt_attn, params);
        } else if (f.rgb_attn) {
            collect_attention(prefix + ".attn", *f.rgb_attn, params);
        }
        if (f.gate) {
            params.push_back({prefix + ".gate.w_rgb", f.gate->w_rgb});
            params.push_back({prefix + ".gate.w_evt", f.gate->w_evt});
            params.push_back({prefix + ".gate.psi", f.gate->psi});
            params.push_back({prefix + ".gate.b_psi", f.gate->b_psi});
        }
    }
    if (m.decoder) m.decoder->collect("decoder", params, buffers);
    if (m.rgb_decoder) m.rgb_decoder->collect("rgb_decoder", params, buffers);
    if (m.evt_decoder) m.evt_decoder->collect("evt_decoder", params, buffers);
    if (m.head_w.defined()) {
        params.push_back({"head.weight", m.head_w});
        params.push_back({"head.bias", m.head_b});
    }
    return params;
}

template <typename Real>
std::vector<NamedTensor<Real>> Model<Real>::buffers() const {
    Named<Real> params, buffers;
    const auto& m = *impl_;
    if (m.early) m.early->collect("early", params, buffers);
    if (m.rgb) m.rgb->collect("rgb", params, buffers);
    if (m.evt) m.evt->collect("evt", params, buffers);
    if (m.decoder) m.decoder->collect("decoder", params, buffers);
    if (m.rgb_decoder) m.rgb_decoder->collect("rgb_decoder", params, buffers);
    if (m.evt_decoder) m.evt_decoder->collect("evt_decoder", params, buffers);
    return buffers;
}

template <typename Real>
std::size_t Model<Real>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
}

template <typename Real>
std::size_t Model<Real>::copy_matching_from(const Model& other) {
    std::map<std::string, Tensor<Real>> src;
    for (const auto& p : other.parameters()) src[p.name] = p.tensor;
    for (const auto& b : other.buffers()) src[b.name] = b.tensor;
    std::size_t copied = 0;
    auto copy = [&](const std::vector<NamedTensor<Real>>& dst) {
        for (const auto& d : dst) {
            const auto it = src.find(d.name);
            if (it == src.end() || it->second.shape() != d.tensor.shape()) continue;
            auto& target = d.tensor.node()->data;
            target = it->second.values();
            ++copied;
        }
    };
    copy(parameters());
    copy(buffers());
    return copied;
}

template <typename Real>
void Model<Real>::save(const std::filesystem::path& path) const {
    std::vector<NamedArray> entries;
    for (const auto& p : parameters()) entries.push_back(to_named_array(p.name, p.tensor));
    for (const auto& b : buffers()) entries.push_back(to_named_array(b.name, b.tensor));
    write_checkpoint(path, entries);
}

template <typename Real>
void Model<Real>::load(const std::filesystem::path& path) {
    const auto entries = read_checkpoint(path);
    std::map<std::string, const NamedArray*> by_name;
    for (const auto& e : entries) by_name[e.name] = &e;
    auto all = parameters();
    const auto bufs = buffers();
    all.insert(all.end(), bufs.begin(), bufs.end());
    if (entries.size() != all.size())
        throw DataError(path.string() + ": checkpoint holds " + std::to_string(entries.size()) +
                        " tensors, model expects " + std::to_string(all.size()));
    for (const auto& t : all) {
        const auto it = by_name.find(t.name);
        if (it == by_name.end()) throw DataError(path.string() + ": missing tensor " + t.name);
        if (it->second->shape != t.tensor.shape())
            throw DataError(path.string() + ": tensor " + t.name + " has shape " + shape_str(it->second->shape) +
                            ", model expects " + shape_str(t.tensor.shape()));
    }
    for (const auto& t : all) {
        const auto& src = by_name[t.name]->values;
        auto& dst = t.tensor.node()->data;
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<Real>(src[i]);
    }
}

template class Model<float>;
template class Model<double>;

}  // namespace drfuser
