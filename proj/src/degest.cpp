#include "dgsr/degest.hpp"

#include <cstdio>
#include <random>
#include <utility>

#include "dgsr/nn/adam.hpp"

namespace dgsr::degest {

namespace {

// One of the 8 flips/transposes of a square-grid image, selected by the low 3 bits.
Image dihedral(const Image& img, unsigned code) {
    const bool transpose = code & 1u, flip_y = code & 2u, flip_x = code & 4u;
    const int h = transpose ? img.width : img.height;
    const int w = transpose ? img.height : img.width;
    Image out(h, w, img.channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int sy = flip_y ? h - 1 - y : y;
            int sx = flip_x ? w - 1 - x : x;
            if (transpose) std::swap(sy, sx);
            for (int ch = 0; ch < img.channels; ++ch) out.at(y, x, ch) = img.at(sy, sx, ch);
        }
    return out;
}

} // namespace

DegEstModel::DegEstModel(const DegEstConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.widths.empty()) throw InputError("estimator needs at least one conv block");
    if (cfg.strides.size() != cfg.widths.size()) throw InputError("estimator widths and strides differ in length");
    std::mt19937_64 rng(seed);
    int in = 3;
    for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
        convs_.emplace_back("est.conv" + std::to_string(i + 1), nn::ConvSpec{in, cfg.widths[i], 3, cfg.strides[i], 1},
                            rng);
        in = cfg.widths[i];
    }
    head_ = nn::Linear<float>("est.head", cfg.max_pool ? 2 * in : in, 2, rng);
}

nn::Var<float> DegEstModel::forward(const nn::Var<float>& x) const {
    const auto& s = x->shape();
    if (s.size() != 3 || s[0] != 3) throw InputError("estimator input must be [3,H,W], got " + nn::shape_str(s));
    const auto slope = static_cast<float>(cfg_.leaky_slope);
    nn::Var<float> h = x;
    for (const auto& c : convs_) h = nn::leaky_relu(c(h), slope);
    auto pooled = nn::global_avg_pool(h);
    if (cfg_.max_pool) pooled = nn::concat(pooled, nn::global_max_pool(h));
    return nn::sigmoid(head_(pooled));
}

DegradationVector DegEstModel::estimate(const Image& lr) const {
    if (lr.channels != 3) throw InputError("estimator expects an RGB image");
    auto y = forward(nn::constant(to_chw<float>(lr)));
    return DegradationVector::clamped(y->value.data[0], y->value.data[1]);
}

std::vector<nn::NamedParam<float>> DegEstModel::params() const {
    std::vector<nn::NamedParam<float>> p;
    for (const auto& c : convs_) {
        p.push_back({c.name + ".weight", c.weight});
        p.push_back({c.name + ".bias", c.bias});
    }
    p.push_back({head_.name + ".weight", head_.weight});
    p.push_back({head_.name + ".bias", head_.bias});
    return p;
}

ckpt::Container DegEstModel::to_container() const {
    ckpt::Container c("estimator");
    c.hparams()["widths"] = cfg_.widths;
    c.hparams()["strides"] = cfg_.strides;
    c.hparams()["max_pool"] = cfg_.max_pool;
    c.hparams()["leaky_slope"] = cfg_.leaky_slope;
    c.meta()["trained"] = trained_;
    for (const auto& p : params()) c.put(p.name, p.var->value);
    return c;
}

DegEstModel DegEstModel::from_container(const ckpt::Container& c) {
    if (c.type() != "estimator") throw LoadError("expected an estimator checkpoint, got '" + c.type() + "'");
    DegEstConfig cfg;
    try {
        cfg.widths = c.hparams().at("widths").get<std::vector<int>>();
        cfg.strides = c.hparams().at("strides").get<std::vector<int>>();
        cfg.max_pool = c.hparams().at("max_pool").get<bool>();
        cfg.leaky_slope = c.hparams().at("leaky_slope").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(std::string("estimator checkpoint header is malformed: ") + e.what());
    }
    DegEstModel m(cfg, 0);
    for (const auto& p : m.params()) c.load_into(p.name, p.var->value);
    m.trained_ = c.meta().value("trained", false);
    nn::set_trainable(m.params(), false);
    return m;
}

void DegEstModel::save(const std::filesystem::path& path) const { to_container().save(path); }

DegEstModel DegEstModel::load(const std::filesystem::path& path) {
    return from_container(ckpt::Container::load(path, "estimator"));
}

void train_estimator_into(DegEstModel& model, const data::Dataset& dataset, const EstimatorTrainConfig& config,
                          EstimatorLog* log) {
    if (dataset.empty()) throw InputError("train_estimator: dataset is empty");
    if (config.batch_size < 1) throw InputError("train_estimator: batch_size must be >= 1");
    nn::set_trainable(model.params(), true);
    nn::Adam<float> opt(nn::vars_of(model.params()), {config.lr});
    std::mt19937_64 rng(config.seed);
    std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);

    std::vector<nn::Tensor<float>> inputs;
    if (config.online_degradation) {
        for (const auto& item : dataset.items) {
            if (item.hr.empty()) throw InputError("train_estimator: online degradation needs the HR images");
        }
    } else {
        inputs.reserve(dataset.size());
        for (const auto& item : dataset.items) {
            inputs.push_back(to_chw<float>(item.lr));
        }
    }
    data::DatasetSpec fresh = dataset.spec;
    fresh.seed = config.seed ^ 0x0d1e5ULL;

    const float inv = 1.0f / static_cast<float>(2 * config.batch_size);
    for (int step = 0; step < config.steps; ++step) {
        opt.zero_grad();
        double total = 0.0;
        for (int b = 0; b < config.batch_size; ++b) {
            const auto idx = pick(rng);
            DegradationVector label = dataset.items[idx].label;
            nn::Tensor<float> input;
            if (config.online_degradation) {
                const auto k = static_cast<std::uint64_t>(step) * config.batch_size + b;
                auto deg = data::degrade(dataset.items[idx].hr, data::sample_params(fresh, k), dataset.spec.limits);
                label = deg.label;
                input = to_chw<float>(dihedral(quantized(deg.lr), static_cast<unsigned>(rng())));
            }
            const auto& x = config.online_degradation ? input : inputs[idx];
            auto target = nn::constant(nn::Tensor<float>(
                {2}, std::vector<float>{static_cast<float>(label.d_n), static_cast<float>(label.d_b)}));
            auto pred = model.forward(nn::constant(x));
            auto loss = nn::scale(nn::sum(nn::abs(nn::sub(pred, target))), inv);
            nn::backward(loss);
            total += loss->value.data[0];
        }
        if (config.cosine_lr) opt.options().lr = config.lr * nn::cosine_decay(step, config.steps);
        opt.step();
        if (log) log->mae.push_back(total);
        if (config.verbose && step % 1000 == 0) std::fprintf(stderr, "[estimator] step %d mae %.4f\n", step, total);
        if (config.checkpoint_every > 0 && !config.checkpoint_path.empty() && (step + 1) % config.checkpoint_every == 0) {
            model.save(config.checkpoint_path);
        }
    }
    nn::set_trainable(model.params(), false);
    model.mark_trained(true);
}

DegEstModel train_estimator(const data::Dataset& dataset, const EstimatorTrainConfig& config, EstimatorLog* log) {
    if (dataset.empty()) throw InputError("train_estimator: dataset is empty");
    DegEstModel model(config.model, config.seed);
    train_estimator_into(model, dataset, config, log);
    return model;
}

DegradationVector mean_abs_error(const DegEstModel& model, const data::Dataset& dataset, int max_items) {
    if (dataset.empty()) throw InputError("mean_abs_error: dataset is empty");
    const int n = max_items < 0 ? static_cast<int>(dataset.size())
                                : std::min<int>(max_items, static_cast<int>(dataset.size()));
    double en = 0.0, eb = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto& item = dataset.items[i];
        const auto d = model.estimate(item.lr);
        en += std::abs(d.d_n - item.label.d_n);
        eb += std::abs(d.d_b - item.label.d_b);
    }
    return {en / n, eb / n};
}

} // namespace dgsr::degest
