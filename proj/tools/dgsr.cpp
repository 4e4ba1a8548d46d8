// Command-line front end: dataset synthesis, training, inference, evaluation
// and the HTTP service.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "dgsr/backbone.hpp"
#include "dgsr/data_synth.hpp"
#include "dgsr/degest.hpp"
#include "dgsr/errors.hpp"
#include "dgsr/inference.hpp"
#include "dgsr/metrics.hpp"
#include "dgsr/png_io.hpp"
#include "dgsr/service.hpp"
#include "dgsr/training.hpp"

namespace fs = std::filesystem;
using namespace dgsr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitState = 2;

struct Options {
    std::uint64_t seed = 0;
    bool verbose = false;

    // synth
    std::string out;
    int n = 0;
    std::string source = "procedural";
    double blur_max = 4.0;
    double noise_max = 0.2;
    int hr_size = data::kHrSize;

    // shared paths
    std::string data_dir;
    std::string prior;
    std::string estimator;
    std::string config;
    std::string bundle;
    std::string input;
    std::string output;
    std::string reference;
    std::string adapters;

    // training knobs
    int steps = -1;
    int ae_steps = 3000;
    int unet_steps = 1500;
    int batch = -1;
    double lr = -1.0;
    bool resume = false;
    bool fixed_pairs = false;

    // inference
    double cfg = 1.1;
    std::optional<double> dn;
    std::optional<double> db;
    double noise_start = 0.0;

    // eval / serve
    std::string pred_dir;
    std::string ref_dir;
    std::string host = "127.0.0.1";
    int port = 8080;
    int max_size = 1024;
};

int run_synth(const Options& o) {
    if (o.out.empty()) throw InputError("--out is required");
    data::DatasetSpec spec;
    spec.count = o.n;
    spec.source = o.source;
    spec.seed = o.seed;
    spec.hr_size = o.hr_size;
    spec.ranges.blur_hi = o.blur_max;
    spec.ranges.noise_hi = o.noise_max;
    spec.limits.blur_sigma_max = o.blur_max;
    spec.limits.noise_sigma_max = o.noise_max;
    const auto ds = data::make_dataset(spec, o.out);
    std::cout << nlohmann::json{{"items", ds.size()}, {"dir", o.out}, {"seed", o.seed}}.dump() << '\n';
    return kExitOk;
}

int run_train_estimator(const Options& o) {
    if (o.data_dir.empty() || o.out.empty()) throw InputError("--data and --out are required");
    const auto ds = data::load_dataset(o.data_dir);
    degest::EstimatorTrainConfig cfg;
    cfg.seed = o.seed;
    if (o.steps >= 0) cfg.steps = o.steps;
    if (o.batch > 0) cfg.batch_size = o.batch;
    if (o.lr >= 0.0) cfg.lr = o.lr;
    cfg.online_degradation = !o.fixed_pairs;
    cfg.checkpoint_every = 500;
    cfg.checkpoint_path = o.out;
    cfg.verbose = o.verbose;
    degest::EstimatorLog log;
    const auto model = degest::train_estimator(ds, cfg, &log);
    model.save(o.out);
    std::cout << nlohmann::json{{"steps", cfg.steps},
                                {"final_batch_mae", log.mae.empty() ? 0.0 : log.mae.back()},
                                {"parameters", model.parameter_count()},
                                {"out", o.out}}
                     .dump()
              << '\n';
    return kExitOk;
}

int run_pretrain(const Options& o) {
    if (o.data_dir.empty() || o.out.empty()) throw InputError("--data and --out are required");
    const auto ds = data::load_dataset(o.data_dir);
    backbone::PretrainConfig cfg;
    cfg.seed = o.seed;
    cfg.ae_steps = o.ae_steps;
    cfg.unet_steps = o.unet_steps;
    if (o.batch > 0) cfg.batch_size = o.batch;
    if (o.lr >= 0.0) cfg.lr = o.lr;
    cfg.verbose = o.verbose;
    const auto net = backbone::pretrain_base(ds, cfg);
    net.save(o.out);
    std::cout << nlohmann::json{{"out", o.out}, {"autoencoder_psnr_y", backbone::autoencoder_psnr(net, ds, 50)}}.dump()
              << '\n';
    return kExitOk;
}

int run_train(const Options& o, bool seed_given) {
    if (o.data_dir.empty() || o.prior.empty() || o.out.empty()) throw InputError("--data, --prior and --out are required");
    auto cfg = o.config.empty() ? training::TrainConfig{} : training::TrainConfig::load(o.config);
    if (seed_given) cfg.seed = o.seed;
    if (o.steps >= 0) cfg.max_steps = o.steps;
    if (o.batch > 0) cfg.batch_size = o.batch;
    if (o.lr >= 0.0) cfg.lr = o.lr;
    cfg.validate();
    const auto ds = data::load_dataset(o.data_dir);
    const auto prior = backbone::ToyBackbone<float>::load(o.prior);
    std::optional<degest::DegEstModel> est;
    if (!o.estimator.empty()) est = degest::DegEstModel::load(o.estimator);
    if (!cfg.use_gt_labels && !est) throw StateError("--estimator is required unless use_gt_labels is set");
    training::FitOptions fo;
    fo.out_dir = o.out;
    fo.resume = o.resume;
    fo.verbose = o.verbose;
    auto res = training::fit(cfg, ds, prior, est ? &*est : nullptr, fo);
    if (!o.bundle.empty() && !o.estimator.empty()) {
        inference::ModelBundle::assemble(o.bundle, o.prior, fs::path(o.out) / "adapters.ckpt", o.estimator);
    }
    std::cout << nlohmann::json{{"steps", res.state.step}, {"out", o.out}}.dump() << '\n';
    return kExitOk;
}

int run_bundle(const Options& o) {
    if (o.prior.empty() || o.adapters.empty() || o.estimator.empty() || o.out.empty()) {
        throw InputError("--prior, --adapters, --estimator and --out are required");
    }
    inference::ModelBundle::assemble(o.out, o.prior, o.adapters, o.estimator);
    std::cout << nlohmann::json{{"bundle", o.out}}.dump() << '\n';
    return kExitOk;
}

std::shared_ptr<const inference::ModelBundle> require_bundle(const std::string& path) {
    auto b = service::load_bundle_or_env(path);
    if (!b) throw StateError(std::string("no model bundle: pass --bundle or set ") + service::kBundleEnv);
    return b;
}

inference::InferenceRequest request_defaults(const Options& o) {
    inference::InferenceRequest req;
    req.lambda_cfg = o.cfg;
    req.noise_sigma_start = o.noise_start;
    req.seed = o.seed;
    if (o.dn || o.db) {
        if (!(o.dn && o.db)) throw InputError("--dn and --db must be given together");
        req.d_override = data::DegradationVector{*o.dn, *o.db};
    }
    return req;
}

int run_infer(const Options& o) {
    if (o.input.empty() || o.output.empty()) throw InputError("--input and --output are required");
    auto req = request_defaults(o);
    const auto bundle = require_bundle(o.bundle);
    std::optional<fs::path> ref;
    if (!o.reference.empty()) ref = o.reference;
    if (fs::is_directory(o.input)) {
        const auto s = inference::batch_process(*bundle, o.input, o.output, req, ref);
        std::cout << nlohmann::json{{"processed", s.processed},
                                    {"failed", s.failed},
                                    {"mean_ms", s.mean_ms},
                                    {"manifest", s.manifest.string()}}
                         .dump()
                  << '\n';
        return kExitOk;
    }
    if (!fs::exists(o.input)) throw InputError("input " + o.input + " does not exist");
    req.lr = png::read(o.input);
    const auto res = inference::super_resolve(*bundle, req);
    png::write(o.output, res.sr);
    auto rec = res.report.to_json();
    rec["file"] = fs::path(o.input).filename().string();
    rec["output"] = o.output;
    rec["forwards"] = res.report.unet_forwards;
    if (ref) rec["psnr_y"] = metrics::psnr_y(res.sr, png::read(*ref));
    std::cout << rec.dump() << '\n';
    return kExitOk;
}

std::map<std::string, fs::path> png_files(const std::string& dir) {
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) throw InputError("cannot read directory " + dir);
    std::map<std::string, fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".png") out[e.path().filename().string()] = e.path();
    }
    return out;
}

int run_eval(const Options& o) {
    if (o.pred_dir.empty() || o.ref_dir.empty()) throw InputError("--pred and --ref are required");
    const auto pred = png_files(o.pred_dir);
    const auto ref = png_files(o.ref_dir);
    if (pred.size() != ref.size()) {
        throw InputError("directory sizes differ: " + std::to_string(pred.size()) + " predictions vs " +
                         std::to_string(ref.size()) + " references");
    }
    if (pred.empty()) throw InputError("no PNG files to evaluate");
    std::ostringstream table;
    table << "file\tpsnr_y\tssim_y\thf_energy\n";
    double sp = 0.0, ss = 0.0, sh = 0.0;
    for (const auto& [name, path] : pred) {
        const auto it = ref.find(name);
        if (it == ref.end()) throw InputError("no reference for " + name);
        const auto r = metrics::evaluate(png::read(path), png::read(it->second));
        table << name << '\t' << r.psnr_y << '\t' << r.ssim_y << '\t' << r.hf_energy << '\n';
        sp += r.psnr_y;
        ss += r.ssim_y;
        sh += r.hf_energy;
    }
    const double n = static_cast<double>(pred.size());
    table << "mean\t" << sp / n << '\t' << ss / n << '\t' << sh / n << '\n';
    if (o.output.empty()) {
        std::cout << table.str();
    } else {
        std::ofstream(o.output) << table.str();
    }
    return kExitOk;
}

int run_serve(const Options& o) {
    service::ServiceConfig cfg;
    cfg.max_width = cfg.max_height = o.max_size;
    service::Service svc(service::load_bundle_or_env(o.bundle), cfg);
    std::fprintf(stderr, "serving on http://%s:%d/v1\n", o.host.c_str(), o.port);
    if (!svc.listen(o.host, o.port)) throw StateError("could not listen on " + o.host + ":" + std::to_string(o.port));
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"dgsr: degradation-guided one-step super-resolution"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags such as --seed may follow the subcommand
    Options o;
    auto* seed_opt = app.add_option("--seed", o.seed, "Global RNG seed")->capture_default_str();
    app.add_flag("-v,--verbose", o.verbose, "Progress on stderr");

    auto* synth = app.add_subcommand("synth", "Synthesize a paired (HR, LR, label) dataset");
    synth->add_option("--out", o.out, "Output directory")->required();
    synth->add_option("--n", o.n, "Number of items")->required();
    synth->add_option("--source", o.source, "'procedural' or a directory of PNG images")->capture_default_str();
    synth->add_option("--blur-max", o.blur_max, "Max blur sigma (HR pixels)")->capture_default_str();
    synth->add_option("--noise-max", o.noise_max, "Max noise sigma ([-1,1] units)")->capture_default_str();
    synth->add_option("--hr-size", o.hr_size, "HR crop size")->capture_default_str();

    auto* test = app.add_subcommand("train-estimator", "Train the degradation estimator");
    test->add_option("--data", o.data_dir, "Dataset directory")->required();
    test->add_option("--out", o.out, "Estimator checkpoint")->required();
    test->add_option("--steps", o.steps, "Training steps");
    test->add_option("--batch", o.batch, "Batch size");
    test->add_option("--lr", o.lr, "Learning rate");
    test->add_flag("--fixed-pairs", o.fixed_pairs, "Train on the stored LR/label pairs instead of fresh degradations");

    auto* pre = app.add_subcommand("pretrain", "Pretrain the backbone prior");
    pre->add_option("--data", o.data_dir, "Dataset directory (HR images are used)")->required();
    pre->add_option("--out", o.out, "Backbone checkpoint")->required();
    pre->add_option("--ae-steps", o.ae_steps, "Autoencoder steps")->capture_default_str();
    pre->add_option("--unet-steps", o.unet_steps, "UNet denoiser steps")->capture_default_str();
    pre->add_option("--batch", o.batch, "Batch size");
    pre->add_option("--lr", o.lr, "Learning rate");

    auto* train = app.add_subcommand("train", "Fine-tune degradation-guided adapters");
    train->add_option("--data", o.data_dir, "Dataset directory")->required();
    train->add_option("--prior", o.prior, "Backbone checkpoint")->required();
    train->add_option("--estimator", o.estimator, "Estimator checkpoint");
    train->add_option("--config", o.config, "JSON train config");
    train->add_option("--out", o.out, "Run directory")->required();
    train->add_option("--steps", o.steps, "Override max_steps");
    train->add_option("--batch", o.batch, "Override batch_size");
    train->add_option("--lr", o.lr, "Override lr");
    train->add_flag("--resume", o.resume, "Continue from <out>/state.ckpt");
    train->add_option("--bundle", o.bundle, "Also assemble a model bundle here");

    auto* bundle = app.add_subcommand("bundle", "Assemble a model bundle directory");
    bundle->add_option("--prior", o.prior, "Backbone checkpoint")->required();
    bundle->add_option("--adapters", o.adapters, "Adapters checkpoint")->required();
    bundle->add_option("--estimator", o.estimator, "Estimator checkpoint")->required();
    bundle->add_option("--out", o.out, "Bundle directory")->required();

    auto* infer = app.add_subcommand("infer", "Super-resolve one PNG or a directory of PNGs");
    infer->add_option("--bundle", o.bundle, std::string("Model bundle (default $") + service::kBundleEnv + ")");
    infer->add_option("--input", o.input, "LR PNG file or directory")->required();
    infer->add_option("--output", o.output, "Output PNG file or directory")->required();
    infer->add_option("--cfg", o.cfg, "Guidance scale lambda_cfg (>= 0)")->capture_default_str();
    infer->add_option("--dn", o.dn, "Override noise extent d_n in [0,1]");
    infer->add_option("--db", o.db, "Override blur extent d_b in [0,1]");
    infer->add_option("--noise-start", o.noise_start, "Latent noise sigma at the start")->capture_default_str();
    infer->add_option("--reference", o.reference, "HR reference file or directory for PSNR-Y");
    infer->add_option("--seed", o.seed, "RNG seed");

    auto* eval = app.add_subcommand("eval", "PSNR-Y / SSIM-Y / hf_energy over two PNG directories");
    eval->add_option("--pred", o.pred_dir, "Prediction directory")->required();
    eval->add_option("--ref", o.ref_dir, "Reference directory")->required();
    eval->add_option("--out", o.output, "Write the table here instead of stdout");

    auto* serve = app.add_subcommand("serve", "HTTP service under /v1");
    serve->add_option("--bundle", o.bundle, std::string("Model bundle (default $") + service::kBundleEnv + ")");
    serve->add_option("--host", o.host, "Bind address")->capture_default_str();
    serve->add_option("--port", o.port, "Port")->capture_default_str();
    serve->add_option("--max-size", o.max_size, "Max LR width/height")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return kExitInput;
    }

    try {
        if (*synth) return run_synth(o);
        if (*test) return run_train_estimator(o);
        if (*pre) return run_pretrain(o);
        if (*train) return run_train(o, seed_opt->count() > 0);
        if (*bundle) return run_bundle(o);
        if (*infer) return run_infer(o);
        if (*eval) return run_eval(o);
        if (*serve) return run_serve(o);
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const StateError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitState;
    } catch (const LoadError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitState;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitState;
    }
    return kExitInput;
}
