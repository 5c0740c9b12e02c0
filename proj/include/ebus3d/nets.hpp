#pragma once

// Residual video encoders and the three fusion heads (Res3D_U, Res3D_UD,
// Res3D_UDE). One encoder type serves both the 3D and 2D pathways; a stage
// is a pair of 3-kernels with the downsampling stride on the first conv and
// a 1-kernel projection skip whenever the shape changes.

#include <optional>
#include <string>
#include <utility>

#include "ebus3d/ops.hpp"
#include "ebus3d/tensor.hpp"

namespace ebus3d {

enum class Variant { U, UD, UDE };

inline std::string variant_name(Variant v) {
    switch (v) {
        case Variant::U: return "Res3D_U";
        case Variant::UD: return "Res3D_UD";
        case Variant::UDE: return "Res3D_UDE";
    }
    return "?";
}

inline Variant variant_from_name(const std::string& s) {
    if (s == "U" || s == "Res3D_U") return Variant::U;
    if (s == "UD" || s == "Res3D_UD") return Variant::UD;
    if (s == "UDE" || s == "Res3D_UDE") return Variant::UDE;
    throw std::invalid_argument("unknown model variant: " + s);
}

// Forward mode: training uses batch statistics; the frozen flavor keeps
// batch statistics but leaves running estimates untouched (needed when a
// forward pass must be a pure function, e.g. under finite differences).
enum class NetMode { train, train_frozen_stats, eval };

inline bool mode_training(NetMode m) { return m != NetMode::eval; }
inline bool mode_update_stats(NetMode m) { return m == NetMode::train; }

template <typename S>
Tensor<S> conv_nd(const Tensor<S>& x, const ConvSpec& spec, const Tensor<S>& w,
                  const Tensor<S>& b) {
    return spec.spatial_dims() == 3 ? conv3d(x, spec, w, b) : conv2d(x, spec, w, b);
}

// --- layers ------------------------------------------------------------------

template <typename S>
struct ConvLayer {
    ConvSpec spec;
    Tensor<S> weight;
    Tensor<S> bias;

    static ConvLayer init(ConvSpec spec, Rng& rng) {
        std::int64_t fan_in = spec.in_channels;
        for (int k : spec.kernel) fan_in *= k;
        Shape wshape{spec.out_channels, spec.in_channels};
        for (int k : spec.kernel) wshape.push_back(k);
        ConvLayer l;
        l.weight = randn<S>(wshape, rng, std::sqrt(2.0 / static_cast<double>(fan_in)), true);
        l.bias = Tensor<S>::zeros({spec.out_channels}, true);
        l.spec = std::move(spec);
        return l;
    }

    Tensor<S> forward(const Tensor<S>& x) const { return conv_nd(x, spec, weight, bias); }
};

template <typename S>
struct BatchNormLayer {
    Tensor<S> gamma;
    Tensor<S> beta;
    BatchNormState<S> state;

    static BatchNormLayer init(std::int64_t channels) {
        BatchNormLayer l;
        l.gamma = Tensor<S>::full({channels}, S(1), true);
        l.beta = Tensor<S>::zeros({channels}, true);
        l.state = BatchNormState<S>(channels);
        return l;
    }

    Tensor<S> forward(const Tensor<S>& x, NetMode mode) {
        return batch_norm(x, gamma, beta, state, mode_training(mode), mode_update_stats(mode));
    }
};

template <typename S>
struct LinearLayer {
    Tensor<S> weight;  // [out, in]
    Tensor<S> bias;

    static LinearLayer init(std::int64_t in, std::int64_t out, Rng& rng) {
        LinearLayer l;
        l.weight = randn<S>({out, in}, rng, std::sqrt(2.0 / static_cast<double>(in)), true);
        l.bias = Tensor<S>::zeros({out}, true);
        return l;
    }

    Tensor<S> forward(const Tensor<S>& x) const { return linear(x, weight, bias); }
};

// Two 3-kernel convs with BN/ReLU, post-addition ReLU. The skip is the
// identity when shapes are preserved, otherwise a strided 1-kernel
// projection conv followed by BN.
template <typename S>
struct ResStage {
    ConvLayer<S> conv_a, conv_b;
    BatchNormLayer<S> bn_a, bn_b;
    bool has_proj = false;
    ConvLayer<S> proj;
    BatchNormLayer<S> bn_p;

    static ResStage init(int dims, int in_ch, int out_ch, bool downsample, Rng& rng) {
        ResStage st;
        ConvSpec a = (dims == 3) ? ConvSpec::cube3d(in_ch, in_ch, 3, 1, 1)
                                 : ConvSpec::square2d(in_ch, in_ch, 3, 1, 1);
        if (downsample) {
            // halve H and W only; T is preserved on the 3D path
            a.stride = (dims == 3) ? std::vector<int>{1, 2, 2} : std::vector<int>{2, 2};
        }
        ConvSpec b = (dims == 3) ? ConvSpec::cube3d(in_ch, out_ch, 3, 1, 1)
                                 : ConvSpec::square2d(in_ch, out_ch, 3, 1, 1);
        st.conv_a = ConvLayer<S>::init(a, rng);
        st.bn_a = BatchNormLayer<S>::init(in_ch);
        st.conv_b = ConvLayer<S>::init(b, rng);
        st.bn_b = BatchNormLayer<S>::init(out_ch);
        st.has_proj = downsample || in_ch != out_ch;
        if (st.has_proj) {
            ConvSpec p = (dims == 3) ? ConvSpec::cube3d(in_ch, out_ch, 1, 1, 0)
                                     : ConvSpec::square2d(in_ch, out_ch, 1, 1, 0);
            p.stride = a.stride;
            st.proj = ConvLayer<S>::init(p, rng);
            st.bn_p = BatchNormLayer<S>::init(out_ch);
        }
        return st;
    }

    Tensor<S> forward(const Tensor<S>& x, NetMode mode) {
        auto h = relu(bn_a.forward(conv_a.forward(x), mode));
        h = bn_b.forward(conv_b.forward(h), mode);
        Tensor<S> skip = has_proj ? bn_p.forward(proj.forward(x), mode) : x;
        return relu(add(h, skip));
    }

    Shape output_shape(const Shape& in) const {
        Shape s = conv_output_shape(conv_a.spec, in);
        return conv_output_shape(conv_b.spec, s);
    }
};

// --- encoder -------------------------------------------------------------------

struct EncoderSpec {
    int in_channels = 3;
    int stem_channels = 16;
    int stem_kernel = 5;  // stride 1, pad preserving extents
    // (in, out) channel pair per residual stage; each stage halves H and W
    std::vector<std::pair<int, int>> stages = {{16, 16},  {16, 32},   {32, 64},
                                               {64, 128}, {128, 256}, {256, 512}};

    void validate() const {
        if (stages.empty()) throw std::invalid_argument("encoder: needs at least one stage");
        if (stages.front().first != stem_channels)
            throw std::invalid_argument(
                "encoder: inconsistent channels: stage 1 expects " +
                std::to_string(stages.front().first) + " but the stem conv produces " +
                std::to_string(stem_channels));
        for (std::size_t i = 1; i < stages.size(); ++i) {
            if (stages[i].first != stages[i - 1].second)
                throw std::invalid_argument("encoder: inconsistent channels between stage " +
                                            std::to_string(i) + " (out " +
                                            std::to_string(stages[i - 1].second) + ") and stage " +
                                            std::to_string(i + 1) + " (in " +
                                            std::to_string(stages[i].first) + ")");
        }
    }
    int out_channels() const { return stages.back().second; }
};

template <typename S>
struct Encoder {
    int dims = 3;
    EncoderSpec cfg;
    ConvLayer<S> stem;
    BatchNormLayer<S> stem_bn;
    std::vector<ResStage<S>> stages;

    static Encoder init(int dims, const EncoderSpec& cfg, Rng& rng) {
        cfg.validate();
        Encoder e;
        e.dims = dims;
        e.cfg = cfg;
        const int pad = cfg.stem_kernel / 2;
        ConvSpec stem_spec = (dims == 3)
                                 ? ConvSpec::cube3d(cfg.in_channels, cfg.stem_channels,
                                                    cfg.stem_kernel, 1, pad)
                                 : ConvSpec::square2d(cfg.in_channels, cfg.stem_channels,
                                                      cfg.stem_kernel, 1, pad);
        e.stem = ConvLayer<S>::init(stem_spec, rng);
        e.stem_bn = BatchNormLayer<S>::init(cfg.stem_channels);
        for (const auto& [in_ch, out_ch] : cfg.stages)
            e.stages.push_back(ResStage<S>::init(dims, in_ch, out_ch, /*downsample=*/true, rng));
        return e;
    }

    Tensor<S> forward(const Tensor<S>& x, NetMode mode) {
        auto h = relu(stem_bn.forward(stem.forward(x), mode));
        for (auto& st : stages) h = st.forward(h, mode);
        return h;
    }

    // Pure shape inference along the stage chain: stem output first, then
    // one shape per residual stage.
    std::vector<Shape> stage_output_shapes(const Shape& input) const {
        std::vector<Shape> out;
        Shape s = conv_output_shape(stem.spec, input);
        out.push_back(s);
        for (const auto& st : stages) {
            s = st.output_shape(s);
            out.push_back(s);
        }
        return out;
    }

    Shape output_shape(const Shape& input) const { return stage_output_shapes(input).back(); }
};

// --- full models -----------------------------------------------------------------

struct NetConfig {
    EncoderSpec encoder;      // used by the 3D path, and by the 2D path in UDE
    std::int64_t feature_dim = 1000;
    std::int64_t signal_dim = 3;
};

template <typename S>
struct EbusNet {
    Variant variant = Variant::U;
    NetConfig cfg;
    Encoder<S> enc3d;
    std::optional<Encoder<S>> enc2d;         // UDE only
    LinearLayer<S> fc3d;
    std::optional<LinearLayer<S>> fc2d;      // UDE only
    std::optional<LinearLayer<S>> fc_signal; // UD/UDE
    LinearLayer<S> head;

    static EbusNet init(Variant variant, const NetConfig& cfg, std::uint64_t init_seed) {
        Rng rng(init_seed);
        EbusNet m;
        m.variant = variant;
        m.cfg = cfg;
        m.enc3d = Encoder<S>::init(3, cfg.encoder, rng);
        m.fc3d = LinearLayer<S>::init(cfg.encoder.out_channels(), cfg.feature_dim, rng);
        if (variant == Variant::UDE) {
            m.enc2d = Encoder<S>::init(2, cfg.encoder, rng);
            m.fc2d = LinearLayer<S>::init(cfg.encoder.out_channels(), cfg.feature_dim, rng);
        }
        if (variant != Variant::U)
            m.fc_signal = LinearLayer<S>::init(cfg.signal_dim, cfg.feature_dim, rng);
        m.head = LinearLayer<S>::init(cfg.feature_dim, 1, rng);
        return m;
    }

    // slice: [N,C,T,H,W]; elasto: [N,C,H,W] or nullopt (UDE substitutes a
    // zero matrix); signal: [N,3] or nullopt. Returns scores [N,1] in (0,1).
    Tensor<S> forward(const Tensor<S>& slice, const std::optional<Tensor<S>>& elasto,
                      const std::optional<Tensor<S>>& signal, NetMode mode) {
        if (slice.dim() != 5)
            throw std::invalid_argument("forward: slice must be rank 5 (NxCxTxHxW), got " +
                                        shape_str(slice.shape()));
        if (variant == Variant::U) {
            if (signal.has_value())
                throw std::invalid_argument("Res3D_U takes no graphic signal");
            if (elasto.has_value())
                throw std::invalid_argument("Res3D_U takes no elastography input");
        } else {
            if (!signal.has_value())
                throw std::invalid_argument(variant_name(variant) + " requires a graphic signal");
            if (signal->dim() != 2 || signal->extent(1) != cfg.signal_dim)
                throw std::invalid_argument("forward: signal must be Nx" +
                                            std::to_string(cfg.signal_dim) + ", got " +
                                            shape_str(signal->shape()));
            if (variant == Variant::UD && elasto.has_value())
                throw std::invalid_argument("Res3D_UD takes no elastography input");
        }

        auto f3 = fc3d.forward(global_avg_pool(enc3d.forward(slice, mode)));
        Tensor<S> fused = f3;
        if (variant == Variant::UDE) {
            Tensor<S> e;
            if (elasto.has_value()) {
                if (elasto->dim() != 4)
                    throw std::invalid_argument("forward: elasto must be rank 4 (NxCxHxW), got " +
                                                shape_str(elasto->shape()));
                e = *elasto;
            } else {
                // no elastography recorded for this lesion: zero matrix input
                e = Tensor<S>::zeros(
                    {slice.extent(0), slice.extent(1), slice.extent(3), slice.extent(4)});
            }
            auto f2 = fc2d->forward(global_avg_pool(enc2d->forward(e, mode)));
            fused = add(f3, f2);
        }
        if (variant != Variant::U) {
            auto w = fc_signal->forward(*signal);
            fused = mul(fused, w);
        }
        return sigmoid(head.forward(fused));
    }

    std::vector<std::pair<std::string, Tensor<S>>> named_params() {
        std::vector<std::pair<std::string, Tensor<S>>> out;
        auto conv = [&](const std::string& p, ConvLayer<S>& l) {
            out.emplace_back(p + ".weight", l.weight);
            out.emplace_back(p + ".bias", l.bias);
        };
        auto bn = [&](const std::string& p, BatchNormLayer<S>& l) {
            out.emplace_back(p + ".gamma", l.gamma);
            out.emplace_back(p + ".beta", l.beta);
        };
        auto fc = [&](const std::string& p, LinearLayer<S>& l) {
            out.emplace_back(p + ".weight", l.weight);
            out.emplace_back(p + ".bias", l.bias);
        };
        auto encoder = [&](const std::string& p, Encoder<S>& e) {
            conv(p + ".stem", e.stem);
            bn(p + ".stem_bn", e.stem_bn);
            for (std::size_t i = 0; i < e.stages.size(); ++i) {
                const std::string sp = p + ".res" + std::to_string(i + 1);
                conv(sp + ".conv_a", e.stages[i].conv_a);
                bn(sp + ".bn_a", e.stages[i].bn_a);
                conv(sp + ".conv_b", e.stages[i].conv_b);
                bn(sp + ".bn_b", e.stages[i].bn_b);
                if (e.stages[i].has_proj) {
                    conv(sp + ".proj", e.stages[i].proj);
                    bn(sp + ".bn_p", e.stages[i].bn_p);
                }
            }
        };
        encoder("enc3d", enc3d);
        fc("fc3d", fc3d);
        if (enc2d) {
            encoder("enc2d", *enc2d);
            fc("fc2d", *fc2d);
        }
        if (fc_signal) fc("fc_signal", *fc_signal);
        fc("head", head);
        return out;
    }

    // BN running statistics: named, ordered, not trainable.
    std::vector<std::pair<std::string, std::vector<S>*>> named_buffers() {
        std::vector<std::pair<std::string, std::vector<S>*>> out;
        auto bn = [&](const std::string& p, BatchNormLayer<S>& l) {
            out.emplace_back(p + ".running_mean", &l.state.running_mean);
            out.emplace_back(p + ".running_var", &l.state.running_var);
        };
        auto encoder = [&](const std::string& p, Encoder<S>& e) {
            bn(p + ".stem_bn", e.stem_bn);
            for (std::size_t i = 0; i < e.stages.size(); ++i) {
                const std::string sp = p + ".res" + std::to_string(i + 1);
                bn(sp + ".bn_a", e.stages[i].bn_a);
                bn(sp + ".bn_b", e.stages[i].bn_b);
                if (e.stages[i].has_proj) bn(sp + ".bn_p", e.stages[i].bn_p);
            }
        };
        encoder("enc3d", enc3d);
        if (enc2d) encoder("enc2d", *enc2d);
        return out;
    }

    std::vector<Tensor<S>> parameters() {
        std::vector<Tensor<S>> out;
        for (auto& [name, t] : named_params()) out.push_back(t);
        return out;
    }

    std::int64_t parameter_count() {
        std::int64_t n = 0;
        for (auto& [name, t] : named_params()) n += t.size();
        return n;
    }
};

// Convenience wrappers mirroring the per-variant contracts.
template <typename S>
Tensor<S> forward_u(EbusNet<S>& m, const Tensor<S>& slice, NetMode mode = NetMode::eval) {
    if (m.variant != Variant::U)
        throw std::invalid_argument("forward_u called on " + variant_name(m.variant));
    return m.forward(slice, std::nullopt, std::nullopt, mode);
}

template <typename S>
Tensor<S> forward_ud(EbusNet<S>& m, const Tensor<S>& slice, const Tensor<S>& signal,
                     NetMode mode = NetMode::eval) {
    if (m.variant != Variant::UD)
        throw std::invalid_argument("forward_ud called on " + variant_name(m.variant));
    return m.forward(slice, std::nullopt, signal, mode);
}

template <typename S>
Tensor<S> forward_ude(EbusNet<S>& m, const Tensor<S>& slice, const std::optional<Tensor<S>>& elasto,
                      const Tensor<S>& signal, NetMode mode = NetMode::eval) {
    if (m.variant != Variant::UDE)
        throw std::invalid_argument("forward_ude called on " + variant_name(m.variant));
    return m.forward(slice, elasto, signal, mode);
}

}  // namespace ebus3d
