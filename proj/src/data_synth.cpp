#include "dgsr/data_synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "dgsr/png_io.hpp"

namespace dgsr::data {

namespace {

// Reflect-101 index into [0, n): -1 -> 1, n -> n-2.
int reflect101(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

double cubic_weight(double s) {
    constexpr double a = -0.5;
    s = std::abs(s);
    if (s <= 1.0) return ((a + 2.0) * s - (a + 3.0)) * s * s + 1.0;
    if (s < 2.0) return ((a * s - 5.0 * a) * s + 8.0 * a) * s - 4.0 * a;
    return 0.0;
}

struct Taps {
    std::vector<std::array<int, 4>> index;
    std::vector<std::array<double, 4>> weight;
};

Taps cubic_taps(int in, int out) {
    Taps t;
    t.index.resize(out);
    t.weight.resize(out);
    const double ratio = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        const double src = (o + 0.5) * ratio - 0.5;
        const int base = static_cast<int>(std::floor(src));
        const double frac = src - base;
        for (int k = 0; k < 4; ++k) {
            t.index[o][k] = reflect101(base - 1 + k, in);
            t.weight[o][k] = cubic_weight(frac - (k - 1));
        }
    }
    return t;
}

std::vector<double> gaussian_kernel(double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        total += k[i + radius];
    }
    for (auto& v : k) v /= total;
    return k;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void require_sigmas(const DegradationParams& p) {
    if (p.blur_sigma < 0.0 || p.noise_sigma < 0.0) throw InputError("degradation sigmas must be non-negative");
    if (!std::isfinite(p.blur_sigma) || !std::isfinite(p.noise_sigma)) {
        throw InputError("degradation sigmas must be finite");
    }
}

} // namespace

DegradationVector DegradationVector::clamped(double n, double b) {
    return {std::clamp(n, 0.0, 1.0), std::clamp(b, 0.0, 1.0)};
}

DegradationVector label_for(const DegradationParams& params, const DegradationLimits& limits) {
    return DegradationVector::clamped(params.noise_sigma / limits.noise_sigma_max,
                                      params.blur_sigma / limits.blur_sigma_max);
}

Image gaussian_blur(const Image& img, double sigma) {
    if (sigma < 0.0) throw InputError("blur sigma must be non-negative");
    if (sigma == 0.0) return img;
    const auto k = gaussian_kernel(sigma);
    const int radius = static_cast<int>(k.size() / 2);
    const int h = img.height, w = img.width, c = img.channels;
    const std::size_t row = static_cast<std::size_t>(w) * c;
    // Horizontal pass over a reflect-padded copy of each row.
    std::vector<double> tmp(img.size());
    std::vector<double> padded(static_cast<std::size_t>(w + 2 * radius) * c);
    for (int y = 0; y < h; ++y) {
        for (int x = -radius; x < w + radius; ++x)
            for (int ch = 0; ch < c; ++ch)
                padded[static_cast<std::size_t>(x + radius) * c + ch] = img.at(y, reflect101(x, w), ch);
        double* dst = tmp.data() + y * row;
        for (std::size_t j = 0; j < row; ++j) {
            double s = 0.0;
            for (int i = 0; i <= 2 * radius; ++i) s += k[i] * padded[j + static_cast<std::size_t>(i) * c];
            dst[j] = s;
        }
    }
    // Vertical pass as weighted row sums.
    Image out(h, w, c);
    std::vector<double> acc(row);
    for (int y = 0; y < h; ++y) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int i = -radius; i <= radius; ++i) {
            const double kv = k[i + radius];
            const double* src = tmp.data() + reflect101(y + i, h) * row;
            for (std::size_t j = 0; j < row; ++j) acc[j] += kv * src[j];
        }
        float* dst = out.data.data() + y * row;
        for (std::size_t j = 0; j < row; ++j) dst[j] = static_cast<float>(acc[j]);
    }
    clamp_unit(out);
    return out;
}

Image resize_bicubic(const Image& img, int out_height, int out_width) {
    if (out_height <= 0 || out_width <= 0) throw InputError("resize target must be positive");
    if (img.empty()) throw InputError("resize of an empty image");
    const int c = img.channels;
    const Taps tx = cubic_taps(img.width, out_width);
    const Taps ty = cubic_taps(img.height, out_height);
    std::vector<double> tmp(static_cast<std::size_t>(img.height) * out_width * c);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < out_width; ++x)
            for (int ch = 0; ch < c; ++ch) {
                double s = 0.0;
                for (int k = 0; k < 4; ++k) s += tx.weight[x][k] * img.at(y, tx.index[x][k], ch);
                tmp[(static_cast<std::size_t>(y) * out_width + x) * c + ch] = s;
            }
    Image out(out_height, out_width, c);
    for (int y = 0; y < out_height; ++y)
        for (int x = 0; x < out_width; ++x)
            for (int ch = 0; ch < c; ++ch) {
                double s = 0.0;
                for (int k = 0; k < 4; ++k)
                    s += ty.weight[y][k] * tmp[(static_cast<std::size_t>(ty.index[y][k]) * out_width + x) * c + ch];
                out.at(y, x, ch) = static_cast<float>(s);
            }
    clamp_unit(out);
    return out;
}

Image upscale_lr(const Image& lr, int scale) {
    if (scale < 1) throw InputError("upscale factor must be >= 1");
    if (scale == 1) return lr;
    return resize_bicubic(lr, lr.height * scale, lr.width * scale);
}

void add_gaussian_noise(Image& img, double sigma, std::uint64_t seed) {
    if (sigma < 0.0) throw InputError("noise sigma must be non-negative");
    if (sigma == 0.0) return;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, sigma);
    for (auto& v : img.data) v = static_cast<float>(v + dist(rng));
    clamp_unit(img);
}

Degraded degrade(const Image& hr, const DegradationParams& params, const DegradationLimits& limits) {
    require_sigmas(params);
    if (params.scale < 1) throw InputError("scale must be >= 1");
    if (hr.height % params.scale || hr.width % params.scale) {
        throw InputError("HR size " + std::to_string(hr.height) + "x" + std::to_string(hr.width) +
                         " not divisible by scale " + std::to_string(params.scale));
    }
    Image blurred = gaussian_blur(hr, params.blur_sigma);
    Image lr = resize_bicubic(blurred, hr.height / params.scale, hr.width / params.scale);
    add_gaussian_noise(lr, params.noise_sigma, params.seed);
    return {std::move(lr), label_for(params, limits)};
}

std::uint64_t item_seed(std::uint64_t seed, std::uint64_t index) {
    return splitmix64(splitmix64(seed) ^ (index + 1) * 0xd1342543de82ef95ULL);
}

Image procedural_texture(std::uint64_t seed, int size) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
    std::normal_distribution<double> gauss(0.0, 1.0);

    // Smooth coloured noise background.
    Image img(size, size, 3);
    Image noise(size, size, 3);
    for (auto& v : noise.data) v = static_cast<float>(0.5 * gauss(rng));
    const double fsigma = uni(2.0, 8.0);
    Image base = gaussian_blur(noise, fsigma);
    double var = 0.0;
    for (float v : base.data) var += v * v;
    const double norm = 1.0 / std::sqrt(var / base.size() + 1e-12);
    const double amp = uni(0.1, 0.35);
    std::array<double, 3> color{uni(-0.6, 0.6), uni(-0.6, 0.6), uni(-0.6, 0.6)};
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(color[c] + amp * norm * base.at(y, x, c));

    // Oriented sinusoids.
    const int waves = 1 + static_cast<int>(u(rng) * 3);
    for (int k = 0; k < waves; ++k) {
        const double theta = uni(0.0, std::numbers::pi);
        const double period = uni(8.0, 40.0);
        const double phase = uni(0.0, 2.0 * std::numbers::pi);
        std::array<double, 3> a{uni(-0.25, 0.25), uni(-0.25, 0.25), uni(-0.25, 0.25)};
        const double cx = std::cos(theta), sy = std::sin(theta);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double s = std::sin(2.0 * std::numbers::pi * (x * cx + y * sy) / period + phase);
                for (int c = 0; c < 3; ++c) img.at(y, x, c) += static_cast<float>(a[c] * s);
            }
    }

    // Antialiased polygons (4x4 supersampling, even-odd fill).
    const int polys = 2 + static_cast<int>(u(rng) * 4);
    for (int p = 0; p < polys; ++p) {
        const double pcx = uni(0.0, size), pcy = uni(0.0, size);
        const double radius = uni(10.0, 40.0);
        const int verts = 3 + static_cast<int>(u(rng) * 5);
        const double rot = uni(0.0, 2.0 * std::numbers::pi);
        std::vector<double> vx(verts), vy(verts);
        for (int v = 0; v < verts; ++v) {
            const double ang = rot + 2.0 * std::numbers::pi * v / verts;
            const double r = radius * uni(0.55, 1.0);
            vx[v] = pcx + r * std::cos(ang);
            vy[v] = pcy + r * std::sin(ang);
        }
        std::array<double, 3> col{uni(-1.0, 1.0), uni(-1.0, 1.0), uni(-1.0, 1.0)};
        const double alpha = uni(0.6, 1.0);
        const int x0 = std::max(0, static_cast<int>(std::floor(pcx - radius)));
        const int x1 = std::min(size - 1, static_cast<int>(std::ceil(pcx + radius)));
        const int y0 = std::max(0, static_cast<int>(std::floor(pcy - radius)));
        const int y1 = std::min(size - 1, static_cast<int>(std::ceil(pcy + radius)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                int inside = 0;
                for (int sy2 = 0; sy2 < 4; ++sy2)
                    for (int sx2 = 0; sx2 < 4; ++sx2) {
                        const double px = x + (sx2 + 0.5) / 4.0, py = y + (sy2 + 0.5) / 4.0;
                        bool in = false;
                        for (int i = 0, j = verts - 1; i < verts; j = i++) {
                            if ((vy[i] > py) != (vy[j] > py) &&
                                px < (vx[j] - vx[i]) * (py - vy[i]) / (vy[j] - vy[i]) + vx[i]) {
                                in = !in;
                            }
                        }
                        inside += in;
                    }
                if (!inside) continue;
                const double cov = alpha * inside / 16.0;
                for (int c = 0; c < 3; ++c) {
                    float& v = img.at(y, x, c);
                    v = static_cast<float>((1.0 - cov) * v + cov * col[c]);
                }
            }
    }
    clamp_unit(img);
    return img;
}

DegradationParams sample_params(const DatasetSpec& spec, std::uint64_t index) {
    std::mt19937_64 rng(item_seed(spec.seed ^ 0x5eedULL, index));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    DegradationParams p;
    p.blur_sigma = spec.ranges.blur_lo + (spec.ranges.blur_hi - spec.ranges.blur_lo) * u(rng);
    p.noise_sigma = spec.ranges.noise_lo + (spec.ranges.noise_hi - spec.ranges.noise_lo) * u(rng);
    p.scale = spec.scale;
    p.seed = rng();
    return p;
}

namespace {

void validate(const DatasetSpec& spec) {
    if (spec.count <= 0) throw InputError("dataset size must be positive");
    if (spec.hr_size <= 0 || spec.hr_size % spec.scale) throw InputError("HR size must be divisible by scale");
    const auto& r = spec.ranges;
    if (r.blur_lo < 0 || r.blur_hi < r.blur_lo || r.noise_lo < 0 || r.noise_hi < r.noise_lo) {
        throw InputError("invalid degradation parameter ranges");
    }
    if (spec.limits.blur_sigma_max <= 0 || spec.limits.noise_sigma_max <= 0) {
        throw InputError("degradation maxima must be positive");
    }
}

std::vector<std::filesystem::path> source_files(const std::string& dir) {
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec)) throw InputError("HR source directory not found: " + dir);
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (e.is_regular_file() && ext == ".png") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw InputError("HR source directory has no PNG images: " + dir);
    return files;
}

Image center_crop(const Image& img, int size, const std::string& name) {
    if (img.height < size || img.width < size) {
        throw InputError(name + " is smaller than the " + std::to_string(size) + "px crop");
    }
    Image out(size, size, img.channels);
    const int oy = (img.height - size) / 2, ox = (img.width - size) / 2;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y + oy, x + ox, c);
    return out;
}

std::string item_name(int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%05d.png", i);
    return buf;
}

} // namespace

Dataset synthesize(const DatasetSpec& spec) {
    validate(spec);
    std::vector<std::filesystem::path> files;
    if (spec.source != "procedural") files = source_files(spec.source);

    Dataset ds;
    ds.spec = spec;
    ds.items.reserve(spec.count);
    for (int i = 0; i < spec.count; ++i) {
        DatasetItem item;
        if (files.empty()) {
            item.hr = procedural_texture(item_seed(spec.seed, i), spec.hr_size);
        } else {
            const auto& f = files[i % files.size()];
            item.hr = center_crop(png::read(f), spec.hr_size, f.string());
        }
        item.hr = quantized(item.hr);
        item.params = sample_params(spec, i);
        auto deg = degrade(item.hr, item.params, spec.limits);
        item.lr = quantized(deg.lr);
        item.label = deg.label;
        item.hr_file = "hr/" + item_name(i);
        item.lr_file = "lr/" + item_name(i);
        ds.items.push_back(std::move(item));
    }
    return ds;
}

Dataset make_dataset(const DatasetSpec& spec, const std::filesystem::path& dir) {
    Dataset ds = synthesize(spec);
    std::filesystem::create_directories(dir / "hr");
    std::filesystem::create_directories(dir / "lr");

    std::ostringstream m;
    m << "# dgsr dataset manifest\n";
    m << "pipeline_version=" << kPipelineVersion << "\n";
    m << "count=" << spec.count << "\n";
    m << "seed=" << spec.seed << "\n";
    m << "source=" << spec.source << "\n";
    m << "hr_size=" << spec.hr_size << "\n";
    m << "scale=" << spec.scale << "\n";
    m << "blur_sigma_max=" << fmt_double(spec.limits.blur_sigma_max) << "\n";
    m << "noise_sigma_max=" << fmt_double(spec.limits.noise_sigma_max) << "\n";
    m << "blur_sigma_range=" << fmt_double(spec.ranges.blur_lo) << "," << fmt_double(spec.ranges.blur_hi) << "\n";
    m << "noise_sigma_range=" << fmt_double(spec.ranges.noise_lo) << "," << fmt_double(spec.ranges.noise_hi)
      << "\n";
    for (const auto& item : ds.items) {
        png::write(dir / item.hr_file, item.hr);
        png::write(dir / item.lr_file, item.lr);
        m << "item hr=" << item.hr_file << " lr=" << item.lr_file << " d_n=" << fmt_double(item.label.d_n)
          << " d_b=" << fmt_double(item.label.d_b) << " blur_sigma=" << fmt_double(item.params.blur_sigma)
          << " noise_sigma=" << fmt_double(item.params.noise_sigma) << " seed=" << item.params.seed << "\n";
    }
    std::ofstream out(dir / "manifest.txt", std::ios::trunc);
    if (!out) throw InputError("cannot write manifest in " + dir.string());
    out << m.str();
    return ds;
}

Dataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.txt");
    if (!in) throw InputError("no dataset manifest in " + dir.string());
    Dataset ds;
    std::string line;
    auto parse_range = [](const std::string& v, double& lo, double& hi) {
        const auto comma = v.find(',');
        if (comma == std::string::npos) throw LoadError("malformed range: " + v);
        lo = std::stod(v.substr(0, comma));
        hi = std::stod(v.substr(comma + 1));
    };
    try {
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            if (line.rfind("item ", 0) == 0) {
                std::map<std::string, std::string> kv;
                std::istringstream ls(line.substr(5));
                std::string tok;
                while (ls >> tok) {
                    const auto eq = tok.find('=');
                    if (eq == std::string::npos) throw LoadError("malformed manifest entry: " + tok);
                    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
                }
                DatasetItem item;
                item.hr_file = kv.at("hr");
                item.lr_file = kv.at("lr");
                item.label = {std::stod(kv.at("d_n")), std::stod(kv.at("d_b"))};
                item.params.blur_sigma = std::stod(kv.at("blur_sigma"));
                item.params.noise_sigma = std::stod(kv.at("noise_sigma"));
                item.params.seed = std::stoull(kv.at("seed"));
                item.params.scale = ds.spec.scale;
                item.hr = png::read(dir / item.hr_file);
                item.lr = png::read(dir / item.lr_file);
                ds.items.push_back(std::move(item));
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw LoadError("malformed manifest line: " + line);
            const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
            if (key == "pipeline_version") ds.pipeline_version = std::stoi(val);
            else if (key == "count") ds.spec.count = std::stoi(val);
            else if (key == "seed") ds.spec.seed = std::stoull(val);
            else if (key == "source") ds.spec.source = val;
            else if (key == "hr_size") ds.spec.hr_size = std::stoi(val);
            else if (key == "scale") ds.spec.scale = std::stoi(val);
            else if (key == "blur_sigma_max") ds.spec.limits.blur_sigma_max = std::stod(val);
            else if (key == "noise_sigma_max") ds.spec.limits.noise_sigma_max = std::stod(val);
            else if (key == "blur_sigma_range") parse_range(val, ds.spec.ranges.blur_lo, ds.spec.ranges.blur_hi);
            else if (key == "noise_sigma_range") parse_range(val, ds.spec.ranges.noise_lo, ds.spec.ranges.noise_hi);
        }
    } catch (const std::out_of_range&) {
        throw LoadError("manifest entry missing a field in " + dir.string());
    } catch (const std::invalid_argument&) {
        throw LoadError("manifest has a non-numeric field in " + dir.string());
    }
    if (ds.pipeline_version != kPipelineVersion) {
        throw LoadError("unsupported pipeline version " + std::to_string(ds.pipeline_version));
    }
    if (static_cast<int>(ds.items.size()) != ds.spec.count) {
        throw LoadError("manifest lists " + std::to_string(ds.items.size()) + " items, expected " +
                        std::to_string(ds.spec.count));
    }
    return ds;
}

} // namespace dgsr::data
