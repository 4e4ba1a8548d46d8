#include "dgsr/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dgsr/metrics.hpp"

namespace dgsr::training {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kDiscSeedSalt = 0xd15c0000d15cULL;

std::string rng_to_string(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

std::mt19937_64 rng_from_string(const std::string& s) {
    std::mt19937_64 rng;
    std::istringstream is(s);
    is >> rng;
    if (!is) throw LoadError("train state: RNG state is malformed");
    return rng;
}

void put_moments(ckpt::Container& c, const std::string& prefix, nn::Adam<float>& opt) {
    for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
        c.put(prefix + ".m." + std::to_string(i), opt.first_moments()[i]);
        c.put(prefix + ".v." + std::to_string(i), opt.second_moments()[i]);
    }
}

void load_moments(const ckpt::Container& c, const std::string& prefix, nn::Adam<float>& opt) {
    for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
        c.load_into(prefix + ".m." + std::to_string(i), opt.first_moments()[i]);
        c.load_into(prefix + ".v." + std::to_string(i), opt.second_moments()[i]);
    }
}

bool finite(const nn::Var<float>& v) { return std::isfinite(v->value.data[0]); }

} // namespace

// ---- config ----------------------------------------------------------------

void TrainConfig::validate() const {
    if (!(p_n >= 0.0 && p_n <= 1.0)) throw InputError("p_n must lie in [0, 1]");
    if (batch_size < 1) throw InputError("batch_size must be >= 1");
    if (!(lr >= 0.0)) throw InputError("lr must be >= 0");
    if (!(discriminator_lr() >= 0.0)) throw InputError("disc_lr must be >= 0");
    if (max_steps < 0) throw InputError("max_steps must be >= 0");
    if (surfaces.empty()) throw InputError("at least one adaptation surface is required");
    if (checkpoint_every < 0 || eval_every < 0) throw InputError("intervals must be >= 0");
    if (!(lambda_cfg >= 0.0)) throw InputError("lambda_cfg must be >= 0");
    if (lr_schedule != "constant" && lr_schedule != "cosine")
        throw InputError("lr_schedule must be 'constant' or 'cosine'");
    weights.validate();
}

double TrainConfig::lr_scale(long long step) const {
    return lr_schedule == "cosine" ? nn::cosine_decay(step, max_steps) : 1.0;
}

nlohmann::json TrainConfig::to_json() const {
    nlohmann::json surf = nlohmann::json::array();
    for (auto s : surfaces) surf.push_back(dglora::to_string(s));
    return {
        {"p_n", p_n},
        {"batch_size", batch_size},
        {"lr", lr},
        {"disc_lr", disc_lr},
        {"max_steps", max_steps},
        {"seed", seed},
        {"loss_weights", {{"l2", weights.l2}, {"lpips", weights.lpips}, {"gan", weights.gan}}},
        {"ranks", {{"encoder", ranks.encoder}, {"unet", ranks.unet}, {"decoder", ranks.decoder}}},
        {"surfaces", surf},
        {"modulation",
         {{"mode", dglora::to_string(modulation.mode)},
          {"fourier_m", modulation.fourier_m},
          {"fourier_scale", modulation.fourier_scale},
          {"fc_dim", modulation.fc_dim},
          {"embed_dim", modulation.embed_dim},
          {"hidden", modulation.hidden}}},
        {"checkpoint_every", checkpoint_every},
        {"use_gt_labels", use_gt_labels},
        {"perceptual_seed", perceptual_seed},
        {"eval_every", eval_every},
        {"eval_items", eval_items},
        {"lambda_cfg", lambda_cfg},
        {"lr_schedule", lr_schedule},
    };
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    try {
        if (!j.is_object()) throw InputError("train config must be a JSON object");
        c.p_n = j.value("p_n", c.p_n);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.lr = j.value("lr", c.lr);
        c.disc_lr = j.value("disc_lr", c.disc_lr);
        c.max_steps = j.value("max_steps", c.max_steps);
        c.seed = j.value("seed", c.seed);
        if (j.contains("loss_weights")) {
            const auto& w = j.at("loss_weights");
            c.weights.l2 = w.value("l2", c.weights.l2);
            c.weights.lpips = w.value("lpips", c.weights.lpips);
            c.weights.gan = w.value("gan", c.weights.gan);
        }
        if (j.contains("ranks")) {
            const auto& r = j.at("ranks");
            c.ranks.encoder = r.value("encoder", c.ranks.encoder);
            c.ranks.unet = r.value("unet", c.ranks.unet);
            c.ranks.decoder = r.value("decoder", c.ranks.decoder);
        }
        if (j.contains("surfaces")) {
            c.surfaces.clear();
            for (const auto& s : j.at("surfaces")) c.surfaces.insert(dglora::parse_surface(s.get<std::string>()));
        }
        if (j.contains("modulation")) {
            const auto& m = j.at("modulation");
            if (m.contains("mode")) c.modulation.mode = dglora::parse_mode(m.at("mode").get<std::string>());
            c.modulation.fourier_m = m.value("fourier_m", c.modulation.fourier_m);
            c.modulation.fourier_scale = m.value("fourier_scale", c.modulation.fourier_scale);
            c.modulation.fc_dim = m.value("fc_dim", c.modulation.fc_dim);
            c.modulation.embed_dim = m.value("embed_dim", c.modulation.embed_dim);
            c.modulation.hidden = m.value("hidden", c.modulation.hidden);
        }
        c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
        c.use_gt_labels = j.value("use_gt_labels", c.use_gt_labels);
        c.perceptual_seed = j.value("perceptual_seed", c.perceptual_seed);
        c.eval_every = j.value("eval_every", c.eval_every);
        c.eval_items = j.value("eval_items", c.eval_items);
        c.lambda_cfg = j.value("lambda_cfg", c.lambda_cfg);
        c.lr_schedule = j.value("lr_schedule", c.lr_schedule);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

TrainConfig TrainConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read train config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InputError("train config " + path.string() + " is not valid JSON: " + e.what());
    }
    return from_json(j);
}

// ---- batches ---------------------------------------------------------------

int Batch::n_pos() const {
    return static_cast<int>(std::count(positive.begin(), positive.end(), true));
}

Batch assemble_batch(const data::Dataset& dataset, const std::vector<std::size_t>& indices, double p_n,
                     std::mt19937_64& rng) {
    if (!(p_n >= 0.0 && p_n <= 1.0)) throw InputError("p_n must lie in [0, 1]");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Batch b;
    for (auto idx : indices) {
        if (idx >= dataset.size()) throw InputError("batch index out of range");
        const auto& item = dataset.items[idx];
        const bool negative = u(rng) < p_n;
        b.indices.push_back(idx);
        b.input.push_back(data::upscale_lr(item.lr, dataset.spec.scale));
        b.target.push_back(negative ? b.input.back() : item.hr);
        b.prompt.push_back(negative ? Prompt::Negative : Prompt::Positive);
        b.positive.push_back(!negative);
    }
    return b;
}

// ---- metrics ---------------------------------------------------------------

nlohmann::json StepMetrics::to_json() const {
    return {{"step", step}, {"l2", l2},       {"lpips", lpips}, {"g_gan", g_gan},
            {"d_gan", d_gan}, {"total", total}, {"n_pos", n_pos}, {"n_neg", n_neg}};
}

StepMetrics StepMetrics::from_json(const nlohmann::json& j) {
    StepMetrics m;
    m.step = j.at("step").get<long long>();
    m.l2 = j.at("l2").get<double>();
    m.lpips = j.at("lpips").get<double>();
    m.g_gan = j.at("g_gan").get<double>();
    m.d_gan = j.at("d_gan").get<double>();
    m.total = j.at("total").get<double>();
    m.n_pos = j.at("n_pos").get<int>();
    m.n_neg = j.at("n_neg").get<int>();
    return m;
}

NonFiniteLoss::NonFiniteLoss(long long step, std::vector<std::size_t> indices)
    : std::runtime_error([&] {
          std::string msg = "non-finite loss at step " + std::to_string(step) + "; batch dataset indices:";
          for (auto i : indices) msg += " " + std::to_string(i);
          return msg;
      }()),
      indices_(std::move(indices)) {}

// ---- state -----------------------------------------------------------------

TrainState TrainState::create(const TrainConfig& config, const ToyBackbone<float>& prior) {
    config.validate();
    TrainState s;
    s.config = config;
    s.net = prior.clone();
    s.net.set_trainable(false, true);
    s.adapters = dglora::AdapterRegistry<float>::inject(s.net.attach_points(), config.surfaces, config.ranks,
                                                        config.modulation, config.seed);
    s.disc = losses::Discriminator<float>(s.net, config.seed ^ kDiscSeedSalt);
    s.perceptual = losses::PerceptualNet<float>(config.perceptual_seed);
    s.gen_opt = nn::Adam<float>(nn::vars_of(s.generator_params()), {config.lr});
    s.disc_opt = nn::Adam<float>(nn::vars_of(s.disc.head_params()), {config.discriminator_lr()});
    s.rng.seed(config.seed);
    return s;
}

std::vector<nn::NamedParam<float>> TrainState::generator_params() const {
    auto p = adapters.params();
    auto q = net.prompt_params();
    p.insert(p.end(), q.begin(), q.end());
    return p;
}

ckpt::Container TrainState::to_container() const {
    ckpt::Container c("train_state");
    c.hparams()["config"] = config.to_json();
    adapters.save_into(c);
    for (const auto& p : net.prompt_params()) c.put(p.name, p.var->value);
    for (const auto& p : disc.head_params()) c.put(p.name, p.var->value);
    auto& self = const_cast<TrainState&>(*this);
    put_moments(c, "opt.gen", self.gen_opt);
    put_moments(c, "opt.disc", self.disc_opt);
    c.meta()["step"] = step;
    c.meta()["gen_opt_steps"] = gen_opt.steps();
    c.meta()["disc_opt_steps"] = disc_opt.steps();
    c.meta()["rng"] = rng_to_string(rng);
    return c;
}

TrainState TrainState::from_container(const ckpt::Container& c, const ToyBackbone<float>& prior) {
    if (c.type() != "train_state") throw LoadError("expected a train_state checkpoint, got '" + c.type() + "'");
    TrainConfig config;
    try {
        config = TrainConfig::from_json(c.hparams().at("config"));
    } catch (const std::exception& e) {
        throw LoadError(std::string("train state config: ") + e.what());
    }
    TrainState s = create(config, prior);
    if (c.get<float>("fourier.W_e") != s.adapters.embedder().weights) {
        throw LoadError("train state was written for a different Fourier embedding");
    }
    for (const auto& p : s.generator_params()) c.load_into(p.name, p.var->value);
    for (const auto& p : s.disc.head_params()) c.load_into(p.name, p.var->value);
    load_moments(c, "opt.gen", s.gen_opt);
    load_moments(c, "opt.disc", s.disc_opt);
    try {
        s.step = c.meta().at("step").get<long long>();
        s.gen_opt.set_steps(c.meta().at("gen_opt_steps").get<long long>());
        s.disc_opt.set_steps(c.meta().at("disc_opt_steps").get<long long>());
        s.rng = rng_from_string(c.meta().at("rng").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(std::string("train state metadata is malformed: ") + e.what());
    }
    return s;
}

void TrainState::save(const fs::path& path) const { to_container().save(path); }

TrainState TrainState::load(const fs::path& path, const ToyBackbone<float>& prior) {
    return from_container(ckpt::Container::load(path, "train_state"), prior);
}

ckpt::Container TrainState::export_adapters() const {
    ckpt::Container c("adapters");
    adapters.save_into(c);
    for (const auto& p : net.prompt_params()) c.put(p.name, p.var->value);
    c.meta()["step"] = step;
    c.meta()["seed"] = config.seed;
    return c;
}

// ---- degradation source ----------------------------------------------------

DegradationSource::DegradationSource(const data::Dataset& dataset, const degest::DegEstModel* estimator,
                                     bool use_labels)
    : dataset_(dataset), estimator_(estimator), use_labels_(use_labels), cache_(dataset.size()) {
    if (!use_labels && !estimator) throw StateError("no degradation estimator supplied");
}

data::DegradationVector DegradationSource::operator()(std::size_t index) {
    if (use_labels_) return dataset_.items.at(index).label;
    auto& slot = cache_.at(index);
    if (!slot) slot = estimator_->estimate(dataset_.items.at(index).lr);
    return *slot;
}

// ---- step ------------------------------------------------------------------

StepMetrics train_step(TrainState& s, const Batch& batch, DegradationSource& degradation) {
    const int n = batch.size();
    if (n == 0) throw InputError("train_step: empty batch");
    StepMetrics m;
    m.step = s.step + 1;
    s.gen_opt.zero_grad();
    s.disc_opt.zero_grad();

    using Features = losses::Discriminator<float>::Features;
    std::vector<Features> fake(n);
    std::vector<std::size_t> bad;
    for (int i = 0; i < n; ++i) {
        const auto d = degradation(batch.indices[i]);
        const auto ad = s.adapters.adapt(d.d_n, d.d_b);
        auto x = nn::constant(to_chw<float>(batch.input[i]));
        auto target = nn::constant(to_chw<float>(batch.target[i]));
        auto pred = s.net.generate(x, s.net.prompt(batch.prompt[i]), &ad);
        Features ff;
        auto loss = losses::sample_generator_loss(pred, target, batch.positive[i], s.disc, s.perceptual,
                                                  s.config.weights, n, &ff);
        if (!finite(loss.total)) {
            bad.push_back(batch.indices[i]);
            continue;
        }
        nn::backward(loss.total);
        m.l2 += loss.l2->value.data[0];
        m.lpips += loss.lpips->value.data[0];
        m.g_gan += loss.g_gan->value.data[0];
        m.total += loss.total->value.data[0];
        if (batch.positive[i]) {
            fake[i] = losses::Discriminator<float>::detach(ff);
            ++m.n_pos;
        } else {
            ++m.n_neg;
        }
    }
    if (!bad.empty()) {
        s.gen_opt.zero_grad();
        s.disc_opt.zero_grad();
        throw NonFiniteLoss(m.step, std::move(bad));
    }
    const double scale = s.config.lr_scale(s.step);
    s.gen_opt.options().lr = s.config.lr * scale;
    s.disc_opt.options().lr = s.config.discriminator_lr() * scale;
    s.gen_opt.step();
    s.gen_opt.zero_grad();

    // Head gradients from the generator pass are discarded.
    s.disc_opt.zero_grad();
    for (int i = 0; i < n; ++i) {
        if (!batch.positive[i]) continue;
        auto real = losses::Discriminator<float>::detach(s.disc.features(nn::constant(to_chw<float>(batch.target[i]))));
        auto d_loss = losses::discriminator_term(s.disc, real, fake[i], n);
        nn::backward(d_loss);
        m.d_gan += d_loss->value.data[0];
    }
    if (m.n_pos > 0) s.disc_opt.step();
    s.disc_opt.zero_grad();
    s.step = m.step;
    return m;
}

// ---- fit -------------------------------------------------------------------

namespace {

std::vector<StepMetrics> read_log(const fs::path& path, long long up_to) {
    std::vector<StepMetrics> out;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            auto m = StepMetrics::from_json(nlohmann::json::parse(line));
            if (m.step <= up_to) out.push_back(m);
        } catch (const nlohmann::json::exception& e) {
            throw LoadError("training log " + path.string() + " is malformed: " + e.what());
        }
    }
    return out;
}

} // namespace

FitResult fit(const TrainConfig& config, const data::Dataset& dataset, const ToyBackbone<float>& prior,
              const degest::DegEstModel* estimator, const FitOptions& options) {
    config.validate();
    if (dataset.empty()) throw InputError("fit: dataset is empty");
    const bool persist = !options.out_dir.empty();
    const fs::path log_path = options.out_dir / "train_log.jsonl";
    const fs::path state_path = options.out_dir / "state.ckpt";
    const fs::path eval_path = options.out_dir / "eval_log.jsonl";
    if (persist) fs::create_directories(options.out_dir);

    FitResult result{TrainState::create(config, prior), {}};
    TrainState& state = result.state;
    if (options.resume && persist && fs::exists(state_path)) {
        state = TrainState::load(state_path, prior);
        if (state.config.to_json() != config.to_json()) {
            throw StateError("cannot resume: " + state_path.string() + " was written with a different config");
        }
        result.log = read_log(log_path, state.step);
    }
    DegradationSource degradation(dataset, estimator, config.use_gt_labels);

    std::ofstream log_out;
    if (persist) {
        log_out.open(log_path, std::ios::trunc);
        for (const auto& m : result.log) log_out << m.to_json().dump() << '\n';
        log_out.flush();
    }
    std::ofstream eval_out;
    if (persist && options.eval_set && config.eval_every > 0) {
        eval_out.open(eval_path, options.resume ? std::ios::app : std::ios::trunc);
    }

    while (state.step < config.max_steps) {
        if (options.stop_at >= 0 && state.step >= options.stop_at) break;
        std::vector<std::size_t> indices(config.batch_size);
        for (auto& idx : indices) {
            idx = std::uniform_int_distribution<std::size_t>(0, dataset.size() - 1)(state.rng);
        }
        const auto batch = assemble_batch(dataset, indices, config.p_n, state.rng);
        const auto m = train_step(state, batch, degradation);
        result.log.push_back(m);
        if (persist) {
            log_out << m.to_json().dump() << '\n';
            log_out.flush();
        }
        if (options.verbose && (m.step % 50 == 0 || m.step == 1)) {
            std::fprintf(stderr, "[train] step %lld l2 %.5f lpips %.5f g %.4f d %.4f\n", m.step, m.l2, m.lpips,
                         m.g_gan, m.d_gan);
        }
        if (persist && config.checkpoint_every > 0 && m.step % config.checkpoint_every == 0) state.save(state_path);
        if (options.eval_set && config.eval_every > 0 && m.step % config.eval_every == 0) {
            DegradationSource eval_deg(*options.eval_set, estimator, config.use_gt_labels);
            const auto v = validate(state, *options.eval_set, eval_deg, config.lambda_cfg, config.eval_items);
            if (eval_out) {
                eval_out << nlohmann::json{{"step", m.step}, {"psnr_y", v.psnr_y}, {"bicubic_psnr_y", v.bicubic_psnr_y},
                                           {"perceptual", v.perceptual}}.dump()
                         << '\n';
                eval_out.flush();
            }
            if (options.verbose) {
                std::fprintf(stderr, "[eval] step %lld psnr_y %.3f bicubic %.3f perceptual %.4f\n", m.step, v.psnr_y,
                             v.bicubic_psnr_y, v.perceptual);
            }
        }
    }
    if (persist) {
        state.save(state_path);
        if (state.step >= config.max_steps) state.export_adapters().save(options.out_dir / "adapters.ckpt");
    }
    return result;
}

Validation validate(const TrainState& state, const data::Dataset& dataset, DegradationSource& degradation,
                    double lambda_cfg, int max_items) {
    if (dataset.empty()) throw InputError("validate: dataset is empty");
    const int n = max_items < 0 ? static_cast<int>(dataset.size())
                                : std::min<int>(max_items, static_cast<int>(dataset.size()));
    Validation v;
    for (int i = 0; i < n; ++i) {
        const auto& item = dataset.items[i];
        const auto lr_up = data::upscale_lr(item.lr, dataset.spec.scale);
        const auto d = degradation(i);
        const auto out = backbone::cfg_infer(state.net, &state.adapters, to_chw<float>(lr_up), d, lambda_cfg);
        const auto sr = from_chw(out);
        v.psnr_y += metrics::psnr_y(sr, item.hr);
        v.bicubic_psnr_y += metrics::psnr_y(lr_up, item.hr);
        v.perceptual += state.perceptual.distance(nn::constant(out), nn::constant(to_chw<float>(item.hr)))->value.data[0];
    }
    v.psnr_y /= n;
    v.bicubic_psnr_y /= n;
    v.perceptual /= n;
    return v;
}

} // namespace dgsr::training
