#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dgsr/checkpoint.hpp"
#include "dgsr/nn/layers.hpp"

// Degradation-guided low-rank adapters: every adapted weight becomes
// W + A (C_i B), where C_i is an r x r matrix generated from the degradation
// vector and the ID embedding of the block that owns W.
namespace dgsr::dglora {

using nn::NamedParam;
using nn::Tensor;
using nn::Var;

enum class Surface { Encoder, Unet, Decoder };

std::string to_string(Surface s);
Surface parse_surface(const std::string& name);

enum class ModulationMode {
    PerBlock,  // one C_i per block from shared MLP + block ID embedding
    Shared,    // a single C for every block of a surface
    Vanilla,   // C = I, plain LoRA
};

std::string to_string(ModulationMode m);
ModulationMode parse_mode(const std::string& name);

// A weight the backbone offers for adaptation, viewed as a rows x cols matrix
// (for convolutions: out_channels x in_channels*k*k).
struct AttachPoint {
    std::string name;
    Surface surface = Surface::Unet;
    int block_index = 1;
    int layer_id = 0;
    int rows = 0;
    int cols = 0;
};

struct RankMap {
    int encoder = 16;
    int unet = 32;
    int decoder = 16;

    int for_surface(Surface s) const {
        switch (s) {
        case Surface::Encoder: return encoder;
        case Surface::Unet: return unet;
        case Surface::Decoder: return decoder;
        }
        return unet;
    }
};

struct ModulationConfig {
    int fourier_m = 64;
    double fourier_scale = 1.0;
    int fc_dim = 128;
    int embed_dim = 32;
    int hidden = 256;
    ModulationMode mode = ModulationMode::PerBlock;
};

// d -> [sin(2 pi d W_e^T), cos(2 pi d W_e^T)] with W_e frozen at construction.
template <typename T>
struct FourierEmbedder {
    Tensor<T> weights;

    FourierEmbedder() = default;
    FourierEmbedder(int m, double scale, std::mt19937_64& rng) : weights(nn::randn<T>({m}, scale, rng)) {
        if (m <= 0) throw InputError("Fourier embedding width must be positive");
    }

    int half_width() const { return static_cast<int>(weights.size()); }
    Var<T> operator()(const Var<T>& d) const { return nn::fourier_features(d, weights); }
};

// Maps (FC(d_e), l_i) through one shared MLP to C_i. The output layer starts at
// zero weight with the flattened identity as bias, so C_i = I at init.
template <typename T>
class ModulationNet {
public:
    ModulationNet() = default;
    ModulationNet(std::string prefix, int rank, std::vector<int> blocks, int embed_input,
                  const ModulationConfig& cfg, std::mt19937_64& rng)
        : prefix_(std::move(prefix)), rank_(rank), blocks_(std::move(blocks)), mode_(cfg.mode) {
        if (rank_ < 1) throw InputError("modulation rank must be >= 1");
        fc_ = nn::Linear<T>(prefix_ + ".fc", embed_input, cfg.fc_dim, rng);
        const int n_embed = mode_ == ModulationMode::Shared ? 1 : static_cast<int>(blocks_.size());
        for (int i = 0; i < n_embed; ++i) {
            embeds_.push_back(nn::parameter(nn::randn<T>({cfg.embed_dim}, 1.0, rng)));
        }
        mlp1_ = nn::Linear<T>(prefix_ + ".mlp1", cfg.fc_dim + cfg.embed_dim, cfg.hidden, rng, std::sqrt(2.0));
        mlp2_ = nn::Linear<T>(prefix_ + ".mlp2", cfg.hidden, cfg.hidden, rng, std::sqrt(2.0));
        out_ = nn::Linear<T>(prefix_ + ".out", cfg.hidden, rank_ * rank_, rng);
        out_.weight->value = Tensor<T>(out_.weight->value.shape);
        reset_output_to_identity();
    }

    int rank() const { return rank_; }
    ModulationMode mode() const { return mode_; }
    const std::vector<int>& blocks() const { return blocks_; }
    int num_blocks() const { return static_cast<int>(blocks_.size()); }

    void reset_output_to_identity() {
        auto& b = out_.bias->value;
        std::fill(b.data.begin(), b.data.end(), T(0));
        for (int i = 0; i < rank_; ++i) b.data[i * rank_ + i] = T(1);
    }

    // Projection of the flattened Fourier embedding.
    Var<T> project(const Var<T>& d_e) const {
        return nn::silu(fc_(nn::reshape(d_e, {static_cast<int>(d_e->value.size())})));
    }

    // C_i for one block, given the projected embedding.
    Var<T> matrix(const Var<T>& projected, int block_index) const {
        const Var<T>& id = embeds_.at(embedding_slot(block_index));
        auto h = nn::silu(mlp1_(nn::concat(projected, id)));
        h = nn::silu(mlp2_(h));
        return nn::reshape(out_(h), {rank_, rank_});
    }

    Var<T> operator()(const Var<T>& d_e, int block_index) const { return matrix(project(d_e), block_index); }

    const Var<T>& block_embedding(int block_index) const { return embeds_.at(embedding_slot(block_index)); }

    std::vector<NamedParam<T>> params() const {
        std::vector<NamedParam<T>> p;
        for (const auto* l : {&fc_, &mlp1_, &mlp2_, &out_}) {
            p.push_back({l->name + ".weight", l->weight});
            p.push_back({l->name + ".bias", l->bias});
        }
        for (std::size_t i = 0; i < embeds_.size(); ++i) {
            p.push_back({prefix_ + ".block_embed." + std::to_string(i), embeds_[i]});
        }
        return p;
    }

    // Block embeddings only.
    std::vector<Var<T>> embeddings() const { return embeds_; }

private:
    int embedding_slot(int block_index) const {
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            if (blocks_[i] == block_index) return mode_ == ModulationMode::Shared ? 0 : static_cast<int>(i);
        }
        throw InputError(prefix_ + ": block index " + std::to_string(block_index) + " is not served by this net");
    }

    std::string prefix_;
    int rank_ = 0;
    std::vector<int> blocks_;
    ModulationMode mode_ = ModulationMode::PerBlock;
    nn::Linear<T> fc_;
    std::vector<Var<T>> embeds_;
    nn::Linear<T> mlp1_, mlp2_, out_;
};

template <typename T>
struct Adapter {
    std::string target;
    Surface surface = Surface::Unet;
    int block_index = 1;
    int layer_id = 0;
    int rank = 0;
    int rows = 0;  // d_out
    int cols = 0;  // d_in
    Var<T> A;      // [rows, rank]
    Var<T> B;      // [rank, cols]

    std::size_t parameter_count() const { return static_cast<std::size_t>(rank) * (rows + cols); }
};

// ---- plain-tensor forms of the adapter algebra -----------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw InputError("shape mismatch " + nn::shape_str(a.shape) + " x " + nn::shape_str(b.shape));
    }
    Tensor<T> out({a.dim(0), b.dim(1)});
    nn::MapR<T>(out.ptr(), a.dim(0), b.dim(1)).noalias() =
        nn::CMapR<T>(a.ptr(), a.dim(0), a.dim(1)) * nn::CMapR<T>(b.ptr(), b.dim(0), b.dim(1));
    return out;
}

template <typename T>
void check_shapes(const Adapter<T>& ad, const Tensor<T>& w, const Tensor<T>& c) {
    if (w.rank() != 2 || w.dim(0) != ad.rows || w.dim(1) != ad.cols) {
        throw InputError("base weight " + nn::shape_str(w.shape) + " does not match adapter " + ad.target);
    }
    if (c.rank() != 2 || c.dim(0) != ad.rank || c.dim(1) != ad.rank) {
        throw InputError("modulation matrix must be " + std::to_string(ad.rank) + "x" + std::to_string(ad.rank));
    }
}

// W + A (C B)
template <typename T>
Tensor<T> merge(const Adapter<T>& ad, const Tensor<T>& w, const Tensor<T>& c) {
    check_shapes(ad, w, c);
    Tensor<T> out = w;
    const auto delta = matmul(ad.A->value, matmul(c, ad.B->value));
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += delta.data[i];
    return out;
}

// W x + A (C (B x)), never forming the merged matrix.
template <typename T>
Tensor<T> dglora_forward(const Adapter<T>& ad, const Tensor<T>& w, const Tensor<T>& c, const Tensor<T>& x) {
    check_shapes(ad, w, c);
    if (x.size() != static_cast<std::size_t>(ad.cols)) {
        throw InputError("input length " + std::to_string(x.size()) + " does not match d_in " +
                         std::to_string(ad.cols));
    }
    Tensor<T> xv({ad.cols, 1}, x.data);
    auto base = matmul(w, xv);
    auto low = matmul(ad.A->value, matmul(c, matmul(ad.B->value, xv)));
    Tensor<T> out({ad.rows});
    for (int i = 0; i < ad.rows; ++i) out.data[i] = base.data[i] + low.data[i];
    return out;
}

// Differentiable W + A (C B); C may be null for vanilla LoRA.
template <typename T>
Var<T> adapted_weight(const Var<T>& w, const Adapter<T>& ad, const Var<T>& c) {
    const Var<T> cb = c ? nn::matmul(c, ad.B) : ad.B;
    auto delta = nn::matmul(ad.A, cb);
    return nn::add(nn::reshape(w, {ad.rows, ad.cols}), delta);
}

template <typename T>
class AdapterRegistry;

// Modulation resolved for one degradation vector: C_i for every block that
// carries adapters. Built per image.
template <typename T>
struct Adaptation {
    const AdapterRegistry<T>* registry = nullptr;
    std::map<int, Var<T>> block_c;

    Var<T> weight(int layer_id, const Var<T>& base) const;
    const Var<T>& modulation(int block_index) const { return block_c.at(block_index); }
};

template <typename T>
class AdapterRegistry {
public:
    AdapterRegistry() = default;

    static AdapterRegistry inject(const std::vector<AttachPoint>& points, const std::set<Surface>& surfaces,
                                  const RankMap& ranks, const ModulationConfig& cfg, std::uint64_t seed) {
        if (surfaces.empty()) throw InputError("at least one adaptation surface is required");
        AdapterRegistry reg;
        reg.cfg_ = cfg;
        reg.ranks_ = ranks;
        reg.surfaces_ = surfaces;
        std::mt19937_64 rng(seed);
        reg.embedder_ = FourierEmbedder<T>(cfg.fourier_m, cfg.fourier_scale, rng);
        int max_layer = -1;
        for (const auto& p : points) max_layer = std::max(max_layer, p.layer_id);
        reg.by_layer_.assign(max_layer + 1, -1);

        std::map<Surface, std::vector<int>> blocks;
        for (const auto& p : points) {
            if (!surfaces.count(p.surface)) continue;
            const int r = ranks.for_surface(p.surface);
            if (r < 1) throw InputError("adapter rank must be >= 1");
            if (r > std::min(p.rows, p.cols)) continue;  // too narrow to host a rank-r update
            Adapter<T> ad;
            ad.target = p.name;
            ad.surface = p.surface;
            ad.block_index = p.block_index;
            ad.layer_id = p.layer_id;
            ad.rank = r;
            ad.rows = p.rows;
            ad.cols = p.cols;
            ad.A = nn::parameter(nn::randn<T>({p.rows, r}, 1.0 / std::sqrt(static_cast<double>(r)), rng));
            ad.B = nn::parameter(Tensor<T>({r, p.cols}));
            reg.by_layer_[p.layer_id] = static_cast<int>(reg.adapters_.size());
            reg.adapters_.push_back(std::move(ad));
            auto& b = blocks[p.surface];
            if (std::find(b.begin(), b.end(), p.block_index) == b.end()) b.push_back(p.block_index);
        }
        if (cfg.mode != ModulationMode::Vanilla) {
            for (auto& [surface, blk] : blocks) {
                std::sort(blk.begin(), blk.end());
                reg.nets_.emplace(surface, ModulationNet<T>("mod." + to_string(surface), ranks.for_surface(surface),
                                                            blk, 4 * cfg.fourier_m, cfg, rng));
            }
        }
        return reg;
    }

    const std::vector<Adapter<T>>& adapters() const { return adapters_; }
    std::vector<Adapter<T>>& adapters() { return adapters_; }
    const std::set<Surface>& surfaces() const { return surfaces_; }
    const RankMap& ranks() const { return ranks_; }
    const ModulationConfig& config() const { return cfg_; }
    ModulationMode mode() const { return cfg_.mode; }
    const FourierEmbedder<T>& embedder() const { return embedder_; }
    const std::map<Surface, ModulationNet<T>>& nets() const { return nets_; }
    std::map<Surface, ModulationNet<T>>& nets() { return nets_; }

    const Adapter<T>* for_layer(int layer_id) const {
        if (layer_id < 0 || layer_id >= static_cast<int>(by_layer_.size()) || by_layer_[layer_id] < 0) return nullptr;
        return &adapters_[by_layer_[layer_id]];
    }

    std::size_t count(Surface s) const {
        return static_cast<std::size_t>(
            std::count_if(adapters_.begin(), adapters_.end(), [s](const auto& a) { return a.surface == s; }));
    }

    // Fourier embedding of d, shape [2, 2m].
    Var<T> embed(const Var<T>& d) const { return embedder_(d); }

    // Resolves C_i for every adapted block. `d` is a length-2 vector (d_n, d_b).
    Adaptation<T> adapt(const Var<T>& d) const {
        Adaptation<T> out;
        out.registry = this;
        if (cfg_.mode == ModulationMode::Vanilla) return out;
        const auto d_e = embedder_(d);
        for (const auto& [surface, net] : nets_) {
            const auto projected = net.project(d_e);
            if (net.mode() == ModulationMode::Shared) {
                const auto c = net.matrix(projected, net.blocks().front());
                for (int b : net.blocks()) out.block_c[b] = c;
            } else {
                for (int b : net.blocks()) out.block_c[b] = net.matrix(projected, b);
            }
        }
        return out;
    }

    Adaptation<T> adapt(double d_n, double d_b) const {
        return adapt(nn::constant(Tensor<T>({2}, std::vector<T>{static_cast<T>(d_n), static_cast<T>(d_b)})));
    }

    std::vector<NamedParam<T>> adapter_params() const {
        std::vector<NamedParam<T>> p;
        for (const auto& a : adapters_) {
            p.push_back({"adapter." + a.target + ".A", a.A});
            p.push_back({"adapter." + a.target + ".B", a.B});
        }
        return p;
    }

    std::vector<NamedParam<T>> modulation_params() const {
        std::vector<NamedParam<T>> p;
        for (const auto& [s, net] : nets_) {
            auto np = net.params();
            p.insert(p.end(), np.begin(), np.end());
        }
        return p;
    }

    std::vector<NamedParam<T>> params() const {
        auto p = adapter_params();
        auto m = modulation_params();
        p.insert(p.end(), m.begin(), m.end());
        return p;
    }

    // Adds every adapter and modulation tensor (plus the frozen W_e) to `c`.
    void save_into(ckpt::Container& c) const {
        nlohmann::json list = nlohmann::json::array();
        for (const auto& a : adapters_) {
            list.push_back({{"target", a.target},
                            {"surface", to_string(a.surface)},
                            {"block", a.block_index},
                            {"layer", a.layer_id},
                            {"rank", a.rank},
                            {"rows", a.rows},
                            {"cols", a.cols}});
        }
        auto& h = c.hparams();
        h["adapters"] = list;
        nlohmann::json surfaces = nlohmann::json::array();
        for (auto s : surfaces_) surfaces.push_back(to_string(s));
        h["surfaces"] = surfaces;
        h["ranks"] = {{"encoder", ranks_.encoder}, {"unet", ranks_.unet}, {"decoder", ranks_.decoder}};
        h["modulation"] = {{"mode", to_string(cfg_.mode)},     {"fourier_m", cfg_.fourier_m},
                           {"fourier_scale", cfg_.fourier_scale}, {"fc_dim", cfg_.fc_dim},
                           {"embed_dim", cfg_.embed_dim},      {"hidden", cfg_.hidden}};
        c.put("fourier.W_e", embedder_.weights);
        for (const auto& p : params()) c.put(p.name, p.var->value);
    }

    // Rebuilds a registry from a container written by save_into(). The attach
    // points come from the backbone the adapters will be used with.
    static AdapterRegistry load_from(const ckpt::Container& c, const std::vector<AttachPoint>& points) {
        const auto& h = c.hparams();
        try {
            ModulationConfig cfg;
            const auto& m = h.at("modulation");
            cfg.mode = parse_mode(m.at("mode").get<std::string>());
            cfg.fourier_m = m.at("fourier_m").get<int>();
            cfg.fourier_scale = m.at("fourier_scale").get<double>();
            cfg.fc_dim = m.at("fc_dim").get<int>();
            cfg.embed_dim = m.at("embed_dim").get<int>();
            cfg.hidden = m.at("hidden").get<int>();
            RankMap ranks;
            ranks.encoder = h.at("ranks").at("encoder").get<int>();
            ranks.unet = h.at("ranks").at("unet").get<int>();
            ranks.decoder = h.at("ranks").at("decoder").get<int>();
            std::set<Surface> surfaces;
            for (const auto& s : h.at("surfaces")) surfaces.insert(parse_surface(s.get<std::string>()));
            AdapterRegistry reg = inject(points, surfaces, ranks, cfg, 0);
            if (reg.adapters_.size() != h.at("adapters").size()) {
                throw LoadError("adapter checkpoint does not match the backbone's attach points");
            }
            for (std::size_t i = 0; i < reg.adapters_.size(); ++i) {
                const auto& e = h.at("adapters")[i];
                if (e.at("target").get<std::string>() != reg.adapters_[i].target) {
                    throw LoadError("adapter checkpoint lists " + e.at("target").get<std::string>() + ", backbone has " +
                                    reg.adapters_[i].target);
                }
            }
            c.load_into("fourier.W_e", reg.embedder_.weights);
            for (const auto& p : reg.params()) c.load_into(p.name, p.var->value);
            return reg;
        } catch (const nlohmann::json::exception& e) {
            throw LoadError(std::string("adapter checkpoint header is malformed: ") + e.what());
        }
    }

private:
    ModulationConfig cfg_;
    RankMap ranks_;
    std::set<Surface> surfaces_;
    FourierEmbedder<T> embedder_;
    std::vector<Adapter<T>> adapters_;
    std::vector<int> by_layer_;
    std::map<Surface, ModulationNet<T>> nets_;
};

template <typename T>
Var<T> Adaptation<T>::weight(int layer_id, const Var<T>& base) const {
    if (!registry) return base;
    const Adapter<T>* ad = registry->for_layer(layer_id);
    if (!ad) return base;
    Var<T> c;
    if (registry->mode() != ModulationMode::Vanilla) c = block_c.at(ad->block_index);
    return adapted_weight(base, *ad, c);
}

} // namespace dgsr::dglora
