#include "dgsr/backbone.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "dgsr/metrics.hpp"
#include "dgsr/nn/adam.hpp"

namespace dgsr::backbone {

namespace {

using Net = ToyBackbone<float>;

double cosine_lr(double base, int step, int total) {
    if (total <= 1) return base;
    const double t = static_cast<double>(step) / (total - 1);
    return base * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * t)));
}

// Random flip / transpose so the small corpus covers more orientations.
nn::Tensor<float> augment(const nn::Tensor<float>& x, std::mt19937_64& rng) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const auto mode = rng() % 8;
    const bool fx = mode & 1, fy = mode & 2, tr = (mode & 4) && h == w;
    nn::Tensor<float> out(x.shape);
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < h; ++y) {
            for (int xx = 0; xx < w; ++xx) {
                int sy = fy ? h - 1 - y : y;
                int sx = fx ? w - 1 - xx : xx;
                if (tr) std::swap(sy, sx);
                out.data[(ch * h + y) * w + xx] = x.data[(ch * h + sy) * w + sx];
            }
        }
    }
    return out;
}

} // namespace

Net pretrain_base(const data::Dataset& dataset, const PretrainConfig& config, PretrainLog* log) {
    if (dataset.empty()) throw InputError("pretrain_base: dataset is empty");
    if (config.batch_size < 1) throw InputError("pretrain_base: batch_size must be >= 1");
    Net net(config.backbone, config.seed);
    std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);

    std::vector<nn::Tensor<float>> images;
    images.reserve(dataset.size());
    for (const auto& item : dataset.items) images.push_back(to_chw<float>(item.hr));

    // Stage 1: autoencoder.
    net.set_trainable(false, false);
    nn::set_trainable(net.encoder_params(), true);
    nn::set_trainable(net.decoder_params(), true);
    {
        auto params = nn::vars_of(net.encoder_params());
        auto dec = nn::vars_of(net.decoder_params());
        params.insert(params.end(), dec.begin(), dec.end());
        nn::Adam<float> opt(params, {config.lr});
        const float inv_b = 1.0f / static_cast<float>(config.batch_size);
        for (int step = 0; step < config.ae_steps; ++step) {
            opt.options().lr = cosine_lr(config.lr, step, config.ae_steps);
            opt.zero_grad();
            double total = 0.0;
            for (int b = 0; b < config.batch_size; ++b) {
                auto x = nn::constant(augment(images[pick(rng)], rng));
                auto y = net.decode(net.encode(x).z);
                auto loss = nn::scale(nn::mse(y, x), inv_b);
                nn::backward(loss);
                total += loss->value.data[0];
            }
            opt.step();
            if (log) log->ae_loss.push_back(total);
            if (config.verbose && step % 100 == 0) std::fprintf(stderr, "[pretrain ae] step %d mse %.5f\n", step, total);
        }
    }

    // Stage 2: UNet as a one-step latent denoiser under both prompts.
    net.set_trainable(false, false);
    nn::set_trainable(net.unet_params(), true);
    nn::set_trainable(net.prompt_params(), true);
    {
        auto params = nn::vars_of(net.unet_params());
        auto pr = nn::vars_of(net.prompt_params());
        params.insert(params.end(), pr.begin(), pr.end());
        nn::Adam<float> opt(params, {config.lr});
        std::uniform_real_distribution<double> sigma_dist(0.0, config.unet_noise_max);
        std::normal_distribution<float> gauss(0.0f, 1.0f);
        const float inv_b = 1.0f / static_cast<float>(config.batch_size);
        for (int step = 0; step < config.unet_steps; ++step) {
            opt.options().lr = cosine_lr(config.lr, step, config.unet_steps);
            opt.zero_grad();
            double total = 0.0;
            for (int b = 0; b < config.batch_size; ++b) {
                auto x = nn::constant(augment(images[pick(rng)], rng));
                auto z = net.encode(x).z->value;
                nn::Tensor<float> noisy = z;
                const float s = static_cast<float>(sigma_dist(rng));
                for (auto& v : noisy.data) v += s * gauss(rng);
                const Prompt p = (rng() & 1) ? Prompt::Positive : Prompt::Negative;
                auto pred = net.denoise(nn::constant(std::move(noisy)), net.prompt(p));
                auto loss = nn::scale(nn::mse(pred, nn::constant(std::move(z))), inv_b);
                nn::backward(loss);
                total += loss->value.data[0];
            }
            opt.step();
            if (log) log->unet_loss.push_back(total);
            if (config.verbose && step % 100 == 0) std::fprintf(stderr, "[pretrain unet] step %d mse %.6f\n", step, total);
        }
    }
    net.set_trainable(false, false);
    return net;
}

double autoencoder_psnr(const Net& net, const data::Dataset& dataset, int max_items) {
    if (dataset.empty()) throw InputError("autoencoder_psnr: dataset is empty");
    const int n = max_items < 0 ? static_cast<int>(dataset.size())
                                : std::min<int>(max_items, static_cast<int>(dataset.size()));
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto& hr = dataset.items[i].hr;
        auto y = net.decode(net.encode(nn::constant(to_chw<float>(hr))).z);
        sum += metrics::psnr_y(from_chw(y->value), hr);
    }
    return sum / n;
}

} // namespace dgsr::backbone
