#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "dgsr/nn/tensor.hpp"

namespace dgsr::ckpt {

inline constexpr std::uint32_t kFormatVersion = 1;

enum class DType : std::uint8_t { F32, F64 };

struct StoredTensor {
    DType dtype = DType::F32;
    nn::Shape shape;
    std::vector<std::uint8_t> bytes;
};

// Self-describing binary container:
//   "DGSRCKPT" | u32 format version | u64 header size | JSON header | payload
// The header carries a type tag, free-form hyperparameters and metadata, and
// an ordered tensor index (name, dtype, shape, byte offset, byte size).
class Container {
public:
    Container() = default;
    explicit Container(std::string type) : type_(std::move(type)) {}

    const std::string& type() const { return type_; }
    nlohmann::json& hparams() { return hparams_; }
    const nlohmann::json& hparams() const { return hparams_; }
    nlohmann::json& meta() { return meta_; }
    const nlohmann::json& meta() const { return meta_; }

    template <typename T>
    void put(const std::string& name, const nn::Tensor<T>& t);

    bool has(const std::string& name) const { return index_.count(name) > 0; }
    template <typename T>
    nn::Tensor<T> get(const std::string& name) const;
    // Copies a stored tensor into `dst`, which must already have the same shape.
    template <typename T>
    void load_into(const std::string& name, nn::Tensor<T>& dst) const;

    std::vector<std::string> names() const;

    std::vector<std::uint8_t> serialize() const;
    static Container deserialize(const std::vector<std::uint8_t>& bytes);

    void save(const std::filesystem::path& path) const;
    static Container load(const std::filesystem::path& path, const std::string& expected_type = "");

private:
    std::string type_;
    nlohmann::json hparams_ = nlohmann::json::object();
    nlohmann::json meta_ = nlohmann::json::object();
    std::vector<std::string> order_;
    std::map<std::string, StoredTensor> index_;
};

} // namespace dgsr::ckpt
