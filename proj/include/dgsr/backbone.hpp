#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "dgsr/checkpoint.hpp"
#include "dgsr/data_synth.hpp"
#include "dgsr/dglora.hpp"
#include "dgsr/nn/layers.hpp"

// Desk-scale stand-in for a latent text-to-image model: an encoder to a
// 4x-downsampled latent, an 8-block prompt-conditioned UNet working on that
// latent, and a decoder back to pixels.
namespace dgsr::backbone {

using dglora::Adaptation;
using dglora::AdapterRegistry;
using dglora::AttachPoint;
using dglora::Surface;
using nn::NamedParam;
using nn::Tensor;
using nn::Var;

enum class Prompt { Positive, Negative };

struct BackboneConfig {
    int latent_channels = 8;
    int prompt_dim = 64;
    int enc_width = 32;
    int enc_width2 = 16;
    int unet_w1 = 32;
    int unet_w2 = 48;
    int unet_w3 = 64;
    int dec_width = 32;

    nlohmann::json to_json() const {
        return {{"latent_channels", latent_channels}, {"prompt_dim", prompt_dim}, {"enc_width", enc_width},
                {"enc_width2", enc_width2},           {"unet_w1", unet_w1},       {"unet_w2", unet_w2},
                {"unet_w3", unet_w3},                 {"dec_width", dec_width}};
    }

    static BackboneConfig from_json(const nlohmann::json& j) {
        BackboneConfig c;
        c.latent_channels = j.at("latent_channels").get<int>();
        c.prompt_dim = j.at("prompt_dim").get<int>();
        c.enc_width = j.at("enc_width").get<int>();
        c.enc_width2 = j.at("enc_width2").get<int>();
        c.unet_w1 = j.at("unet_w1").get<int>();
        c.unet_w2 = j.at("unet_w2").get<int>();
        c.unet_w3 = j.at("unet_w3").get<int>();
        c.dec_width = j.at("dec_width").get<int>();
        return c;
    }

    // Small enough for finite-difference checks at double precision.
    static BackboneConfig tiny() {
        BackboneConfig c;
        c.latent_channels = 2;
        c.prompt_dim = 4;
        c.enc_width = 4;
        c.enc_width2 = 3;
        c.unet_w1 = 4;
        c.unet_w2 = 5;
        c.unet_w3 = 6;
        c.dec_width = 4;
        return c;
    }
};

inline constexpr int kUnetBlocks = 8;
inline constexpr int kNumBlocks = 12;  // 2 encoder + 8 UNet + 2 decoder
inline constexpr int kPatch = 4;       // pixel (un)shuffle factor
inline constexpr int kAlignment = 16;  // spatial sizes must be multiples of this

template <typename T>
class ToyBackbone {
public:
    // Layer ids; also the order of convolutions in checkpoints.
    enum Layer : int {
        EncProj, EncConv, Enc2Conv, Enc2Out,
        U1, U2, U3, U4, U5, U6, U7, U8, UOut,
        Dec1, Dec2, DecProj, DecRefine,
        kLayerCount
    };

    struct Encoded {
        Var<T> z;
        std::array<Var<T>, 3> features;
    };

    ToyBackbone() = default;

    ToyBackbone(const BackboneConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        std::mt19937_64 rng(seed);
        const int c = cfg.latent_channels, w1 = cfg.unet_w1, w2 = cfg.unet_w2, w3 = cfg.unet_w3;
        const int patch_ch = 3 * kPatch * kPatch;
        auto add = [&](Layer id, const char* name, Surface s, int block, nn::ConvSpec spec, double gain = std::sqrt(2.0)) {
            if (static_cast<int>(convs_.size()) != id) throw StateError("backbone layer table out of order");
            convs_.emplace_back(name, spec, rng, gain);
            surface_.push_back(s);
            block_.push_back(block);
        };
        add(EncProj, "enc.b1.proj", Surface::Encoder, 1, {patch_ch, cfg.enc_width, 1, 1, 0});
        add(EncConv, "enc.b1.conv", Surface::Encoder, 1, {cfg.enc_width, cfg.enc_width, 3, 1, 1});
        add(Enc2Conv, "enc.b2.conv", Surface::Encoder, 2, {cfg.enc_width, cfg.enc_width2, 3, 1, 1});
        add(Enc2Out, "enc.b2.out", Surface::Encoder, 2, {cfg.enc_width2, c, 1, 1, 0}, 1.0);
        add(U1, "unet.b1.conv", Surface::Unet, 3, {c, w1, 3, 1, 1});
        add(U2, "unet.b2.conv", Surface::Unet, 4, {w1, w2, 3, 2, 1});
        add(U3, "unet.b3.conv", Surface::Unet, 5, {w2, w2, 3, 1, 1});
        add(U4, "unet.b4.conv", Surface::Unet, 6, {w2, w3, 3, 2, 1});
        add(U5, "unet.b5.conv", Surface::Unet, 7, {w3, w3, 3, 1, 1});
        add(U6, "unet.b6.conv", Surface::Unet, 8, {w3, w2, 3, 1, 1});
        add(U7, "unet.b7.conv", Surface::Unet, 9, {w2, w2, 3, 1, 1});
        add(U8, "unet.b8.conv", Surface::Unet, 10, {w2, w1, 3, 1, 1});
        add(UOut, "unet.b8.out", Surface::Unet, 10, {w1, c, 3, 1, 1}, 0.1);
        add(Dec1, "dec.b1.conv1", Surface::Decoder, 11, {c, cfg.dec_width, 3, 1, 1});
        add(Dec2, "dec.b1.conv2", Surface::Decoder, 11, {cfg.dec_width, cfg.dec_width, 3, 1, 1});
        add(DecProj, "dec.b2.proj", Surface::Decoder, 12, {cfg.dec_width, patch_ch, 1, 1, 0}, 1.0);
        add(DecRefine, "dec.b2.refine", Surface::Decoder, 12, {3, 3, 3, 1, 1}, 0.1);

        const std::array<int, kUnetBlocks> widths{w1, w2, w2, w3, w3, w2, w2, w1};
        for (int b = 0; b < kUnetBlocks; ++b) {
            film_.emplace_back("unet.b" + std::to_string(b + 1) + ".film", cfg.prompt_dim, 2 * widths[b], rng, 0.1);
        }
        t_pos_ = nn::parameter(nn::randn<T>({cfg.prompt_dim}, 1.0, rng));
        t_neg_ = nn::parameter(nn::randn<T>({cfg.prompt_dim}, 1.0, rng));
    }

    const BackboneConfig& config() const { return cfg_; }
    int feature_channels(int level) const {
        return level == 0 ? cfg_.enc_width : level == 1 ? cfg_.enc_width2 : cfg_.latent_channels;
    }

    const Var<T>& prompt(Prompt p) const { return p == Prompt::Positive ? t_pos_ : t_neg_; }

    Encoded encode(const Var<T>& x, const Adaptation<T>* ad = nullptr) const {
        check_input(x);
        Encoded e;
        auto h = nn::pixel_unshuffle(x, kPatch);
        h = nn::silu(conv(EncProj, h, ad));
        h = nn::silu(conv(EncConv, h, ad));
        e.features[0] = h;
        h = nn::silu(conv(Enc2Conv, h, ad));
        e.features[1] = h;
        e.z = conv(Enc2Out, h, ad);
        e.features[2] = e.z;
        return e;
    }

    // One evaluation of the prompt-conditioned UNet; returns the predicted clean latent.
    Var<T> denoise(const Var<T>& z, const Var<T>& prompt_vec, const Adaptation<T>* ad = nullptr) const {
        auto block = [&](int b, const Var<T>& pre) { return nn::silu(modulate(b, pre, prompt_vec)); };
        auto s1 = block(0, conv(U1, z, ad));
        auto s2 = block(1, conv(U2, s1, ad));
        auto s3 = nn::add(s2, block(2, conv(U3, s2, ad)));
        auto h = block(3, conv(U4, s3, ad));
        h = nn::add(h, block(4, conv(U5, h, ad)));
        h = block(5, nn::add(nn::upsample2(conv(U6, h, ad)), s3));
        h = block(6, nn::add(conv(U7, h, ad), s2));
        h = block(7, nn::add(nn::upsample2(conv(U8, h, ad)), s1));
        return nn::add(z, conv(UOut, h, ad));
    }

    Var<T> decode(const Var<T>& z, const Adaptation<T>* ad = nullptr) const {
        auto h = nn::silu(conv(Dec1, z, ad));
        h = nn::silu(conv(Dec2, h, ad));
        auto y = nn::pixel_shuffle(conv(DecProj, h, ad), kPatch);
        return nn::add(y, conv(DecRefine, y, ad));
    }

    Var<T> generate(const Var<T>& x, const Var<T>& prompt_vec, const Adaptation<T>* ad = nullptr) const {
        return decode(denoise(encode(x, ad).z, prompt_vec, ad), ad);
    }

    std::vector<AttachPoint> attach_points() const {
        std::vector<AttachPoint> out;
        for (int i = 0; i < kLayerCount; ++i) {
            out.push_back({convs_[i].name, surface_[i], block_[i], i, convs_[i].rows(), convs_[i].cols()});
        }
        return out;
    }

    const nn::Conv2d<T>& layer(int id) const { return convs_.at(id); }

    std::vector<NamedParam<T>> surface_params(Surface s) const {
        std::vector<NamedParam<T>> p;
        for (int i = 0; i < kLayerCount; ++i) {
            if (surface_[i] != s) continue;
            p.push_back({convs_[i].name + ".weight", convs_[i].weight});
            p.push_back({convs_[i].name + ".bias", convs_[i].bias});
        }
        if (s == Surface::Unet) {
            for (const auto& f : film_) {
                p.push_back({f.name + ".weight", f.weight});
                p.push_back({f.name + ".bias", f.bias});
            }
        }
        return p;
    }

    std::vector<NamedParam<T>> encoder_params() const { return surface_params(Surface::Encoder); }
    std::vector<NamedParam<T>> unet_params() const { return surface_params(Surface::Unet); }
    std::vector<NamedParam<T>> decoder_params() const { return surface_params(Surface::Decoder); }
    std::vector<NamedParam<T>> prompt_params() const { return {{"prompt.pos", t_pos_}, {"prompt.neg", t_neg_}}; }

    // Every weight except the prompt embeddings.
    std::vector<NamedParam<T>> base_params() const {
        auto p = encoder_params();
        for (auto s : {Surface::Unet, Surface::Decoder}) {
            auto q = surface_params(s);
            p.insert(p.end(), q.begin(), q.end());
        }
        return p;
    }

    std::vector<NamedParam<T>> all_params() const {
        auto p = base_params();
        auto q = prompt_params();
        p.insert(p.end(), q.begin(), q.end());
        return p;
    }

    void set_trainable(bool base, bool prompts) const {
        nn::set_trainable(base_params(), base);
        nn::set_trainable(prompt_params(), prompts);
    }

    ckpt::Container to_container() const {
        ckpt::Container c("backbone");
        c.hparams()["config"] = cfg_.to_json();
        for (const auto& p : all_params()) c.put(p.name, p.var->value);
        return c;
    }

    static ToyBackbone from_container(const ckpt::Container& c) {
        if (c.type() != "backbone") throw LoadError("expected a backbone checkpoint, got '" + c.type() + "'");
        BackboneConfig cfg;
        try {
            cfg = BackboneConfig::from_json(c.hparams().at("config"));
        } catch (const nlohmann::json::exception& e) {
            throw LoadError(std::string("backbone checkpoint config is malformed: ") + e.what());
        }
        ToyBackbone b(cfg, 0);
        for (const auto& p : b.all_params()) c.load_into(p.name, p.var->value);
        b.set_trainable(false, false);
        return b;
    }

    void save(const std::filesystem::path& path) const { to_container().save(path); }
    static ToyBackbone load(const std::filesystem::path& path) {
        return from_container(ckpt::Container::load(path, "backbone"));
    }

    // Independent copy of every parameter (the copy starts frozen).
    ToyBackbone clone() const { return from_container(to_container()); }

private:
    void check_input(const Var<T>& x) const {
        const auto& s = x->shape();
        if (s.size() != 3 || s[0] != 3) throw InputError("backbone input must be [3,H,W], got " + nn::shape_str(s));
        if (s[1] % kAlignment || s[2] % kAlignment) {
            throw InputError("backbone input size must be a multiple of " + std::to_string(kAlignment));
        }
    }

    Var<T> conv(int id, const Var<T>& x, const Adaptation<T>* ad) const {
        const auto& layer = convs_[id];
        return layer.apply(x, ad ? ad->weight(id, layer.weight) : layer.weight);
    }

    Var<T> modulate(int b, const Var<T>& x, const Var<T>& prompt_vec) const {
        const int ch = x->value.dim(0);
        auto gb = film_[b](prompt_vec);
        auto gamma = nn::reshape(slice(gb, 0, ch), {ch});
        auto beta = nn::reshape(slice(gb, ch, ch), {ch});
        return nn::film(x, gamma, beta);
    }

    static Var<T> slice(const Var<T>& v, int start, int len) {
        Tensor<T> out({len});
        std::copy(v->value.data.begin() + start, v->value.data.begin() + start + len, out.data.begin());
        return nn::detail::make_node<T>(std::move(out), {v}, [start, len](nn::Node<T>& self) {
            auto& g = self.parents[0]->grad_buffer();
            for (int i = 0; i < len; ++i) g.data[start + i] += self.grad.data[i];
        });
    }

    BackboneConfig cfg_;
    std::vector<nn::Conv2d<T>> convs_;
    std::vector<Surface> surface_;
    std::vector<int> block_;
    std::vector<nn::Linear<T>> film_;
    Var<T> t_pos_, t_neg_;
};

// Per-call instrumentation.
struct InferenceTrace {
    int unet_forwards = 0;
    int encoder_forwards = 0;
};

template <typename T>
struct CfgLatents {
    Tensor<T> z_pos;
    Tensor<T> z_neg;
    Tensor<T> z_out;
};

namespace detail {

template <typename T>
Var<T> noisy_latent(const Var<T>& z, double sigma, std::uint64_t seed) {
    if (sigma < 0.0) throw InputError("noise_sigma_start must be non-negative");
    if (sigma == 0.0) return z;
    Tensor<T> out = z->value;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, sigma);
    for (auto& v : out.data) v += static_cast<T>(dist(rng));
    return nn::constant(std::move(out));
}

template <typename T>
Tensor<T> clamp_image(Tensor<T> t) {
    for (auto& v : t.data) v = std::clamp(v, T(-1), T(1));
    return t;
}

} // namespace detail

// One prompt branch: decoder(UNet(E(lr_up) + eta, prompt)), eta ~ N(0, sigma^2)
// added in latent space. Exactly one UNet evaluation.
template <typename T>
Tensor<T> one_step_sr(const ToyBackbone<T>& net, const AdapterRegistry<T>* adapters, const Tensor<T>& lr_up,
                      const data::DegradationVector& d, Prompt prompt, double noise_sigma_start = 0.0,
                      std::uint64_t seed = 0, InferenceTrace* trace = nullptr) {
    if (!adapters) throw StateError("one_step_sr: no adapters injected");
    if (noise_sigma_start < 0.0) throw InputError("noise_sigma_start must be non-negative");
    const auto ad = adapters->adapt(d.d_n, d.d_b);
    auto x = nn::constant(lr_up);
    auto z = net.encode(x, &ad).z;
    if (trace) ++trace->encoder_forwards;
    z = detail::noisy_latent(z, noise_sigma_start, seed);
    auto out = net.denoise(z, net.prompt(prompt), &ad);
    if (trace) ++trace->unet_forwards;
    return detail::clamp_image(net.decode(out, &ad)->value);
}

// Guided fusion of the positive and negative branches:
// z_out = z_neg + lambda (z_pos - z_neg). lambda == 1 runs the positive branch only.
template <typename T>
Tensor<T> cfg_infer(const ToyBackbone<T>& net, const AdapterRegistry<T>* adapters, const Tensor<T>& lr_up,
                    const data::DegradationVector& d, double lambda_cfg, double noise_sigma_start = 0.0,
                    std::uint64_t seed = 0, InferenceTrace* trace = nullptr, CfgLatents<T>* capture = nullptr) {
    if (!adapters) throw StateError("cfg_infer: no adapters injected");
    if (!(lambda_cfg >= 0.0)) throw InputError("lambda_cfg must be non-negative");
    if (noise_sigma_start < 0.0) throw InputError("noise_sigma_start must be non-negative");
    const auto ad = adapters->adapt(d.d_n, d.d_b);
    auto z = net.encode(nn::constant(lr_up), &ad).z;
    if (trace) ++trace->encoder_forwards;
    z = detail::noisy_latent(z, noise_sigma_start, seed);

    auto z_pos = net.denoise(z, net.prompt(Prompt::Positive), &ad);
    if (trace) ++trace->unet_forwards;
    Tensor<T> fused;
    if (lambda_cfg == 1.0) {
        fused = z_pos->value;
        if (capture) capture->z_pos = capture->z_out = fused;
    } else {
        auto z_neg = net.denoise(z, net.prompt(Prompt::Negative), &ad);
        if (trace) ++trace->unet_forwards;
        fused = Tensor<T>(z_pos->value.shape);
        const T lam = static_cast<T>(lambda_cfg);
        for (std::size_t i = 0; i < fused.size(); ++i) {
            const T zn = z_neg->value.data[i];
            fused.data[i] = zn + lam * (z_pos->value.data[i] - zn);
        }
        if (capture) {
            capture->z_pos = z_pos->value;
            capture->z_neg = z_neg->value;
            capture->z_out = fused;
        }
    }
    return detail::clamp_image(net.decode(nn::constant(std::move(fused)), &ad)->value);
}

// ---- pretraining of the frozen prior (float only) --------------------------

struct PretrainConfig {
    int ae_steps = 3000;
    int unet_steps = 1500;
    int batch_size = 8;
    double lr = 2e-3;
    double unet_noise_max = 0.5;
    std::uint64_t seed = 0;
    BackboneConfig backbone;
    bool verbose = false;
};

struct PretrainLog {
    std::vector<double> ae_loss;
    std::vector<double> unet_loss;
};

// Trains encoder+decoder as an autoencoder on the HR images, then the UNet as
// a one-step latent denoiser under both prompts. Returns the frozen prior.
ToyBackbone<float> pretrain_base(const data::Dataset& dataset, const PretrainConfig& config,
                                 PretrainLog* log = nullptr);

// Mean PSNR-Y of decoder(encoder(x)) over the HR images.
double autoencoder_psnr(const ToyBackbone<float>& net, const data::Dataset& dataset, int max_items = -1);

} // namespace dgsr::backbone
