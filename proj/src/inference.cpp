#include "dgsr/inference.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>

#include "dgsr/metrics.hpp"
#include "dgsr/png_io.hpp"

namespace dgsr::inference {

namespace fs = std::filesystem;

namespace {

int reflect101(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
}

int round_up(int v, int m) { return (v + m - 1) / m * m; }

nlohmann::json d_json(const DegradationVector& d) { return {{"d_n", d.d_n}, {"d_b", d.d_b}}; }

} // namespace

ModelBundle::ModelBundle(backbone::ToyBackbone<float> net, std::optional<dglora::AdapterRegistry<float>> adapters,
                         std::optional<degest::DegEstModel> estimator, nlohmann::json info)
    : net_(std::move(net)), adapters_(std::move(adapters)), estimator_(std::move(estimator)), info_(std::move(info)) {
    if (!info_.is_object()) info_ = nlohmann::json::object();
    info_["format"] = kBundleFormat;
    info_["has_adapters"] = adapters_.has_value();
    info_["has_estimator"] = estimator_.has_value();
    if (!info_.contains("version")) info_["version"] = "dgsr-bundle-" + std::to_string(kBundleFormat);
}

std::string ModelBundle::version() const { return info_.value("version", std::string()); }

dglora::AdapterRegistry<float> load_adapters(const ckpt::Container& c, backbone::ToyBackbone<float>& net) {
    if (c.type() != "adapters") throw LoadError("expected an adapters checkpoint, got '" + c.type() + "'");
    auto reg = dglora::AdapterRegistry<float>::load_from(c, net.attach_points());
    for (const auto& p : net.prompt_params()) {
        if (c.has(p.name)) c.load_into(p.name, p.var->value);
    }
    nn::set_trainable(reg.params(), false);
    return reg;
}

ModelBundle ModelBundle::load(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw StateError("model bundle " + dir.string() + " is not a directory");
    const auto prior = dir / "prior.ckpt";
    if (!fs::exists(prior)) throw StateError("model bundle " + dir.string() + " has no prior.ckpt");
    auto net = backbone::ToyBackbone<float>::load(prior);
    std::optional<dglora::AdapterRegistry<float>> adapters;
    if (fs::exists(dir / "adapters.ckpt")) {
        adapters = load_adapters(ckpt::Container::load(dir / "adapters.ckpt", "adapters"), net);
    }
    std::optional<degest::DegEstModel> estimator;
    if (fs::exists(dir / "estimator.ckpt")) estimator = degest::DegEstModel::load(dir / "estimator.ckpt");
    nlohmann::json info = nlohmann::json::object();
    if (fs::exists(dir / "bundle.json")) {
        std::ifstream in(dir / "bundle.json");
        try {
            in >> info;
        } catch (const nlohmann::json::exception& e) {
            throw LoadError("bundle.json is malformed: " + std::string(e.what()));
        }
    }
    return ModelBundle(std::move(net), std::move(adapters), std::move(estimator), std::move(info));
}

void ModelBundle::assemble(const fs::path& dir, const fs::path& prior, const fs::path& adapters,
                           const fs::path& estimator) {
    // Validate before copying so a broken bundle is never written.
    auto net = backbone::ToyBackbone<float>::load(prior);
    load_adapters(ckpt::Container::load(adapters, "adapters"), net);
    degest::DegEstModel::load(estimator);
    fs::create_directories(dir);
    fs::copy_file(prior, dir / "prior.ckpt", fs::copy_options::overwrite_existing);
    fs::copy_file(adapters, dir / "adapters.ckpt", fs::copy_options::overwrite_existing);
    fs::copy_file(estimator, dir / "estimator.ckpt", fs::copy_options::overwrite_existing);
    std::ofstream out(dir / "bundle.json");
    out << nlohmann::json{{"format", kBundleFormat}, {"version", "dgsr-bundle-" + std::to_string(kBundleFormat)},
                          {"scale", data::kScale}}
               .dump(2)
        << '\n';
}

nlohmann::json InferenceReport::to_json() const {
    nlohmann::json j{{"d_used", d_json(d_used)},
                     {"lambda_cfg", lambda_cfg},
                     {"noise_sigma_start", noise_sigma_start},
                     {"seed", seed},
                     {"unet_forwards", unet_forwards},
                     {"estimator_calls", estimator_calls},
                     {"ms", ms},
                     {"width", width},
                     {"height", height}};
    j["d_estimated"] = d_estimated ? d_json(*d_estimated) : nlohmann::json(nullptr);
    return j;
}

Image pad_reflect(const Image& img, int height, int width) {
    if (height < img.height || width < img.width) throw InputError("pad_reflect: target smaller than image");
    if (height == img.height && width == img.width) return img;
    Image out(height, width, img.channels);
    for (int y = 0; y < height; ++y) {
        const int sy = reflect101(y, img.height);
        for (int x = 0; x < width; ++x) {
            const int sx = reflect101(x, img.width);
            for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(sy, sx, c);
        }
    }
    return out;
}

Image crop(const Image& img, int height, int width) {
    if (height > img.height || width > img.width) throw InputError("crop: target larger than image");
    if (height == img.height && width == img.width) return img;
    Image out(height, width, img.channels);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y, x, c);
        }
    }
    return out;
}

namespace {

void check_lr(const Image& lr) {
    if (lr.channels != 3) throw InputError("expected an RGB image");
    if (lr.height < kMinLrSize || lr.width < kMinLrSize) {
        throw InputError("image too small: " + std::to_string(lr.width) + "x" + std::to_string(lr.height) +
                         ", minimum side is " + std::to_string(kMinLrSize));
    }
}

} // namespace

DegradationVector estimate(const ModelBundle& bundle, const Image& lr) {
    check_lr(lr);
    if (!bundle.estimator()) throw StateError("model bundle has no degradation estimator");
    return bundle.estimator()->estimate(lr);
}

InferenceResult super_resolve(const ModelBundle& bundle, const InferenceRequest& req) {
    const auto t0 = std::chrono::steady_clock::now();
    check_lr(req.lr);
    if (!(req.lambda_cfg >= 0.0)) throw InputError("lambda_cfg must be non-negative");
    if (!(req.noise_sigma_start >= 0.0)) throw InputError("noise_sigma_start must be non-negative");
    if (!bundle.adapters()) throw StateError("model bundle has no adapters");

    InferenceResult res;
    auto& rep = res.report;
    const Image lr_up = data::upscale_lr(req.lr, data::kScale);
    if (req.d_override) {
        rep.d_used = DegradationVector::clamped(req.d_override->d_n, req.d_override->d_b);
    } else {
        if (!bundle.estimator()) throw StateError("model bundle has no degradation estimator and no d was given");
        rep.d_estimated = bundle.estimator()->estimate(req.lr);
        rep.estimator_calls = 1;
        rep.d_used = *rep.d_estimated;
    }
    rep.lambda_cfg = req.lambda_cfg;
    rep.noise_sigma_start = req.noise_sigma_start;
    rep.seed = req.seed.value_or(0);

    const int h = round_up(lr_up.height, backbone::kAlignment);
    const int w = round_up(lr_up.width, backbone::kAlignment);
    const Image padded = pad_reflect(lr_up, h, w);
    backbone::InferenceTrace trace;
    const auto out = backbone::cfg_infer(bundle.net(), bundle.adapters(), to_chw<float>(padded), rep.d_used,
                                         req.lambda_cfg, req.noise_sigma_start, rep.seed, &trace);
    res.sr = crop(from_chw(out), lr_up.height, lr_up.width);
    rep.unet_forwards = trace.unet_forwards;
    rep.width = res.sr.width;
    rep.height = res.sr.height;
    rep.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

BatchSummary batch_process(const ModelBundle& bundle, const fs::path& input_dir, const fs::path& output_dir,
                           const InferenceRequest& defaults, const std::optional<fs::path>& reference_dir) {
    std::error_code ec;
    if (!fs::is_directory(input_dir, ec)) throw InputError("cannot read input directory " + input_dir.string());
    std::vector<fs::path> files;
    fs::directory_iterator it(input_dir, ec);
    if (ec) throw InputError("cannot read input directory " + input_dir.string() + ": " + ec.message());
    for (const auto& e : it) {
        if (e.is_regular_file() && e.path().filename().string().front() != '.') files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    fs::create_directories(output_dir);

    BatchSummary summary;
    summary.manifest = output_dir / "manifest.jsonl";
    std::ofstream manifest(summary.manifest, std::ios::trunc);
    double total_ms = 0.0;
    for (const auto& file : files) {
        nlohmann::json rec{{"file", file.filename().string()}};
        try {
            InferenceRequest req = defaults;
            req.lr = png::read(file);
            const auto res = super_resolve(bundle, req);
            const auto out_name = file.stem().string() + ".png";
            png::write(output_dir / out_name, res.sr);
            rec["status"] = "ok";
            rec["output"] = out_name;
            rec["d_used"] = d_json(res.report.d_used);
            rec["lambda_cfg"] = res.report.lambda_cfg;
            rec["forwards"] = res.report.unet_forwards;
            rec["estimator_calls"] = res.report.estimator_calls;
            rec["ms"] = res.report.ms;
            rec["psnr_y"] = nullptr;
            if (reference_dir && fs::exists(*reference_dir / file.filename())) {
                rec["psnr_y"] = metrics::psnr_y(res.sr, png::read(*reference_dir / file.filename()));
            }
            total_ms += res.report.ms;
            ++summary.processed;
        } catch (const std::exception& e) {
            rec["status"] = "error";
            rec["error"] = e.what();
            ++summary.failed;
        }
        manifest << rec.dump() << '\n';
    }
    if (summary.processed > 0) summary.mean_ms = total_ms / summary.processed;
    return summary;
}

} // namespace dgsr::inference
