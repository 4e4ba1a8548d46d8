#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dgsr/backbone.hpp"
#include "dgsr/nn/layers.hpp"

namespace dgsr::losses {

using nn::NamedParam;
using nn::Tensor;
using nn::Var;

struct LossWeights {
    double l2 = 2.0;
    double lpips = 5.0;
    double gan = 0.5;

    void validate() const {
        if (!(l2 >= 0.0) || !(lpips >= 0.0) || !(gan >= 0.0)) throw InputError("loss weights must be >= 0");
    }
};

// Fixed random conv features; the distance is the mean over layers of the
// spatially averaged squared difference of channel-unit-normalised features.
template <typename T>
class PerceptualNet {
public:
    PerceptualNet() = default;
    explicit PerceptualNet(std::uint64_t seed, std::vector<int> widths = {8, 16, 32}) {
        std::mt19937_64 rng(seed);
        int in = 3;
        for (std::size_t i = 0; i < widths.size(); ++i) {
            convs_.emplace_back("lpips.conv" + std::to_string(i + 1), nn::ConvSpec{in, widths[i], 3, 2, 1}, rng);
            in = widths[i];
        }
        for (const auto& c : convs_) {
            c.weight->requires_grad = false;
            c.bias->requires_grad = false;
        }
    }

    std::vector<Var<T>> features(const Var<T>& x) const {
        std::vector<Var<T>> out;
        Var<T> h = x;
        for (const auto& c : convs_) {
            h = nn::leaky_relu(c(h), T(0.2));
            out.push_back(nn::channel_unit_norm(h));
        }
        return out;
    }

    Var<T> distance_from_features(const std::vector<Var<T>>& a, const std::vector<Var<T>>& b) const {
        Var<T> total;
        for (std::size_t l = 0; l < a.size(); ++l) {
            const T ch = static_cast<T>(a[l]->value.dim(0));
            auto term = nn::scale(nn::mse(a[l], b[l]), ch / static_cast<T>(a.size()));
            total = total ? nn::add(total, term) : term;
        }
        return total;
    }

    Var<T> distance(const Var<T>& pred, const Var<T>& target) const {
        return distance_from_features(features(pred), features(target));
    }

    std::vector<NamedParam<T>> params() const {
        std::vector<NamedParam<T>> p;
        for (const auto& c : convs_) {
            p.push_back({c.name + ".weight", c.weight});
            p.push_back({c.name + ".bias", c.bias});
        }
        return p;
    }

private:
    std::vector<nn::Conv2d<T>> convs_;
};

template <typename T>
struct Reconstruction {
    Var<T> total;
    Var<T> l2;
    Var<T> lpips;
};

template <typename T>
Reconstruction<T> reconstruction_loss(const Var<T>& pred, const Var<T>& target, const PerceptualNet<T>& perceptual,
                                      const LossWeights& w) {
    if (pred->shape() != target->shape()) {
        throw InputError("reconstruction_loss: shape mismatch " + nn::shape_str(pred->shape()) + " vs " +
                         nn::shape_str(target->shape()));
    }
    w.validate();
    Reconstruction<T> r;
    r.l2 = nn::mse(pred, target);
    r.lpips = perceptual.distance(pred, target);
    r.total = nn::add(nn::scale(r.l2, static_cast<T>(w.l2)), nn::scale(r.lpips, static_cast<T>(w.lpips)));
    return r;
}

inline constexpr int kHeads = 3;

// Frozen encoder features (three levels) feeding K independent trainable
// 1x1-conv heads; each head's logit is the spatial mean of its logit map.
template <typename T>
class Discriminator {
public:
    using Features = std::array<Var<T>, kHeads>;

    Discriminator() = default;
    Discriminator(backbone::ToyBackbone<T> frozen, std::uint64_t seed, int head_width = 16)
        : backbone_(std::move(frozen)) {
        std::mt19937_64 rng(seed);
        for (int k = 0; k < kHeads; ++k) {
            const std::string name = "disc.head" + std::to_string(k + 1);
            const int ch = backbone_.feature_channels(k);
            hidden_.emplace_back(name + ".conv1", nn::ConvSpec{ch, head_width, 1, 1, 0}, rng);
            out_.emplace_back(name + ".conv2", nn::ConvSpec{head_width, 1, 1, 1, 0}, rng, 1.0);
        }
    }

    Features features(const Var<T>& x) const {
        auto e = backbone_.encode(x);
        return e.features;
    }

    static Features detach(const Features& f) {
        Features out;
        for (int k = 0; k < kHeads; ++k) out[k] = nn::detach(f[k]);
        return out;
    }

    Var<T> head_logit(int k, const Var<T>& feature) const {
        auto h = nn::leaky_relu(hidden_[k](feature), T(0.2));
        return nn::mean(out_[k](h));
    }

    std::array<Var<T>, kHeads> logits(const Features& f) const {
        std::array<Var<T>, kHeads> out;
        for (int k = 0; k < kHeads; ++k) out[k] = head_logit(k, f[k]);
        return out;
    }

    std::vector<NamedParam<T>> head_params() const {
        std::vector<NamedParam<T>> p;
        for (int k = 0; k < kHeads; ++k) {
            for (const auto* c : {&hidden_[k], &out_[k]}) {
                p.push_back({c->name + ".weight", c->weight});
                p.push_back({c->name + ".bias", c->bias});
            }
        }
        return p;
    }

    std::vector<NamedParam<T>> backbone_params() const { return backbone_.encoder_params(); }
    const backbone::ToyBackbone<T>& backbone() const { return backbone_; }

private:
    backbone::ToyBackbone<T> backbone_;
    std::vector<nn::Conv2d<T>> hidden_;
    std::vector<nn::Conv2d<T>> out_;
};

// Generator side for one positive sample, divided by the batch size:
// (1/N) sum_k BCE(D_k(fake), 1).
template <typename T>
Var<T> generator_gan_term(const Discriminator<T>& disc, const typename Discriminator<T>::Features& fake, int batch) {
    Var<T> total;
    for (const auto& logit : disc.logits(fake)) {
        auto t = nn::bce_with_logits(logit, T(1));
        total = total ? nn::add(total, t) : t;
    }
    return nn::scale(total, T(1) / static_cast<T>(batch));
}

// Discriminator side for one positive pair, divided by the batch size:
// (1/N) sum_k [BCE(D_k(real), 1) + BCE(D_k(fake), 0)].
template <typename T>
Var<T> discriminator_term(const Discriminator<T>& disc, const typename Discriminator<T>::Features& real,
                          const typename Discriminator<T>::Features& fake, int batch) {
    Var<T> total;
    const auto lr = disc.logits(real);
    const auto lf = disc.logits(fake);
    for (int k = 0; k < kHeads; ++k) {
        auto t = nn::add(nn::bce_with_logits(lr[k], T(1)), nn::bce_with_logits(lf[k], T(0)));
        total = total ? nn::add(total, t) : t;
    }
    return nn::scale(total, T(1) / static_cast<T>(batch));
}

template <typename T>
Var<T> zero_scalar() {
    return nn::constant(Tensor<T>({1}));
}

template <typename T>
struct GanLosses {
    Var<T> g_loss;
    Var<T> d_loss;
    int n_pos = 0;
};

// Only samples with positive[i] set enter either loss. Fakes are detached on
// the discriminator side.
template <typename T>
GanLosses<T> gan_losses(const Discriminator<T>& disc, const std::vector<Var<T>>& real,
                        const std::vector<Var<T>>& fake, const std::vector<bool>& positive) {
    if (real.size() != fake.size() || fake.size() != positive.size()) {
        throw InputError("gan_losses: real, fake and mask sizes differ");
    }
    const int n = static_cast<int>(fake.size());
    GanLosses<T> out;
    for (int i = 0; i < n; ++i) {
        if (!positive[i]) continue;
        ++out.n_pos;
        const auto ff = disc.features(fake[i]);
        const auto fr = disc.features(real[i]);
        auto g = generator_gan_term(disc, ff, n);
        auto d = discriminator_term(disc, Discriminator<T>::detach(fr), Discriminator<T>::detach(ff), n);
        out.g_loss = out.g_loss ? nn::add(out.g_loss, g) : g;
        out.d_loss = out.d_loss ? nn::add(out.d_loss, d) : d;
    }
    if (!out.g_loss) out.g_loss = zero_scalar<T>();
    if (!out.d_loss) out.d_loss = zero_scalar<T>();
    return out;
}

template <typename T>
struct GeneratorLoss {
    Var<T> total;
    Var<T> l2;     // batch mean
    Var<T> lpips;  // batch mean
    Var<T> g_gan;  // (1/N) sum over positives
};

// Contribution of one sample to the batch objective, already divided by N.
// Reconstruction applies to every sample; the GAN term only to positives.
template <typename T>
GeneratorLoss<T> sample_generator_loss(const Var<T>& pred, const Var<T>& target, bool positive,
                                       const Discriminator<T>& disc, const PerceptualNet<T>& perceptual,
                                       const LossWeights& w, int batch,
                                       typename Discriminator<T>::Features* fake_features = nullptr) {
    const T inv_n = T(1) / static_cast<T>(batch);
    auto rec = reconstruction_loss(pred, target, perceptual, w);
    GeneratorLoss<T> out;
    out.l2 = nn::scale(rec.l2, inv_n);
    out.lpips = nn::scale(rec.lpips, inv_n);
    out.total = nn::scale(rec.total, inv_n);
    if (positive && w.gan > 0.0) {
        const auto ff = disc.features(pred);
        if (fake_features) *fake_features = ff;
        out.g_gan = generator_gan_term(disc, ff, batch);
        out.total = nn::add(out.total, nn::scale(out.g_gan, static_cast<T>(w.gan)));
    } else if (positive) {
        const auto ff = disc.features(pred);
        if (fake_features) *fake_features = ff;
        out.g_gan = nn::detach(generator_gan_term(disc, ff, batch));
    } else {
        out.g_gan = zero_scalar<T>();
    }
    return out;
}

template <typename T>
GeneratorLoss<T> total_generator_loss(const std::vector<Var<T>>& pred, const std::vector<Var<T>>& target,
                                      const Discriminator<T>& disc, const std::vector<bool>& positive,
                                      const PerceptualNet<T>& perceptual, const LossWeights& w) {
    if (pred.size() != target.size() || pred.size() != positive.size() || pred.empty()) {
        throw InputError("total_generator_loss: batch sizes differ or batch is empty");
    }
    const int n = static_cast<int>(pred.size());
    GeneratorLoss<T> out;
    for (int i = 0; i < n; ++i) {
        auto s = sample_generator_loss(pred[i], target[i], positive[i], disc, perceptual, w, n);
        if (!out.total) {
            out = s;
        } else {
            out.total = nn::add(out.total, s.total);
            out.l2 = nn::add(out.l2, s.l2);
            out.lpips = nn::add(out.lpips, s.lpips);
            out.g_gan = nn::add(out.g_gan, s.g_gan);
        }
    }
    return out;
}

} // namespace dgsr::losses
