#include "dgsr/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "dgsr/errors.hpp"

namespace dgsr::ckpt {

namespace {

constexpr char kMagic[8] = {'D', 'G', 'S', 'R', 'C', 'K', 'P', 'T'};

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::F32; }
template <>
constexpr DType dtype_of<double>() { return DType::F64; }

const char* dtype_name(DType d) { return d == DType::F32 ? "f32" : "f64"; }

DType parse_dtype(const std::string& s) {
    if (s == "f32") return DType::F32;
    if (s == "f64") return DType::F64;
    throw LoadError("unknown tensor dtype " + s);
}

template <typename Int>
void append_int(std::vector<std::uint8_t>& out, Int v) {
    for (std::size_t i = 0; i < sizeof(Int); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename Int>
Int read_int(const std::vector<std::uint8_t>& in, std::size_t& pos) {
    if (pos + sizeof(Int) > in.size()) throw LoadError("checkpoint truncated");
    Int v = 0;
    for (std::size_t i = 0; i < sizeof(Int); ++i) v |= static_cast<Int>(in[pos + i]) << (8 * i);
    pos += sizeof(Int);
    return v;
}

} // namespace

template <typename T>
void Container::put(const std::string& name, const nn::Tensor<T>& t) {
    StoredTensor st;
    st.dtype = dtype_of<T>();
    st.shape = t.shape;
    st.bytes.resize(t.size() * sizeof(T));
    std::memcpy(st.bytes.data(), t.ptr(), st.bytes.size());
    if (!index_.count(name)) order_.push_back(name);
    index_[name] = std::move(st);
}

template <typename T>
nn::Tensor<T> Container::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw LoadError("checkpoint (" + type_ + ") is missing tensor '" + name + "'");
    const auto& st = it->second;
    nn::Tensor<T> out(st.shape);
    if (st.dtype == DType::F32) {
        std::vector<float> raw(out.size());
        std::memcpy(raw.data(), st.bytes.data(), st.bytes.size());
        for (std::size_t i = 0; i < raw.size(); ++i) out.data[i] = static_cast<T>(raw[i]);
    } else {
        std::vector<double> raw(out.size());
        std::memcpy(raw.data(), st.bytes.data(), st.bytes.size());
        for (std::size_t i = 0; i < raw.size(); ++i) out.data[i] = static_cast<T>(raw[i]);
    }
    return out;
}

template <typename T>
void Container::load_into(const std::string& name, nn::Tensor<T>& dst) const {
    auto t = get<T>(name);
    if (t.shape != dst.shape) {
        throw LoadError("tensor '" + name + "' has shape " + nn::shape_str(t.shape) + ", expected " +
                        nn::shape_str(dst.shape));
    }
    dst.data = std::move(t.data);
}

template void Container::put<float>(const std::string&, const nn::Tensor<float>&);
template void Container::put<double>(const std::string&, const nn::Tensor<double>&);
template nn::Tensor<float> Container::get<float>(const std::string&) const;
template nn::Tensor<double> Container::get<double>(const std::string&) const;
template void Container::load_into<float>(const std::string&, nn::Tensor<float>&) const;
template void Container::load_into<double>(const std::string&, nn::Tensor<double>&) const;

std::vector<std::string> Container::names() const {
    return order_;
}

std::vector<std::uint8_t> Container::serialize() const {
    nlohmann::json header;
    header["type"] = type_;
    header["hparams"] = hparams_;
    header["meta"] = meta_;
    nlohmann::json tensors = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& name : order_) {
        const auto& st = index_.at(name);
        tensors.push_back({{"name", name},
                           {"dtype", dtype_name(st.dtype)},
                           {"shape", st.shape},
                           {"offset", offset},
                           {"bytes", st.bytes.size()}});
        offset += st.bytes.size();
    }
    header["tensors"] = tensors;
    const std::string text = header.dump();

    std::vector<std::uint8_t> out(kMagic, kMagic + 8);
    append_int<std::uint32_t>(out, kFormatVersion);
    append_int<std::uint64_t>(out, text.size());
    out.insert(out.end(), text.begin(), text.end());
    for (const auto& name : order_) {
        const auto& b = index_.at(name).bytes;
        out.insert(out.end(), b.begin(), b.end());
    }
    return out;
}

Container Container::deserialize(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw LoadError("not a dgsr checkpoint");
    std::size_t pos = 8;
    const auto version = read_int<std::uint32_t>(bytes, pos);
    if (version != kFormatVersion) throw LoadError("unsupported checkpoint format version " + std::to_string(version));
    const auto hsize = read_int<std::uint64_t>(bytes, pos);
    if (pos + hsize > bytes.size()) throw LoadError("checkpoint header truncated");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                       bytes.begin() + static_cast<std::ptrdiff_t>(pos + hsize));
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(std::string("corrupt checkpoint header: ") + e.what());
    }
    pos += hsize;
    Container c;
    try {
        c.type_ = header.at("type").get<std::string>();
        c.hparams_ = header.at("hparams");
        c.meta_ = header.at("meta");
        for (const auto& t : header.at("tensors")) {
            StoredTensor st;
            st.dtype = parse_dtype(t.at("dtype").get<std::string>());
            st.shape = t.at("shape").get<nn::Shape>();
            const auto off = t.at("offset").get<std::uint64_t>();
            const auto n = t.at("bytes").get<std::uint64_t>();
            const std::size_t width = st.dtype == DType::F32 ? 4 : 8;
            if (n != nn::numel(st.shape) * width) throw LoadError("tensor size disagrees with its shape");
            if (pos + off + n > bytes.size()) throw LoadError("checkpoint payload truncated");
            st.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos + off),
                            bytes.begin() + static_cast<std::ptrdiff_t>(pos + off + n));
            const auto name = t.at("name").get<std::string>();
            c.order_.push_back(name);
            c.index_[name] = std::move(st);
        }
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(std::string("corrupt checkpoint header: ") + e.what());
    }
    return c;
}

void Container::save(const std::filesystem::path& path) const {
    const auto bytes = serialize();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw InputError("cannot write checkpoint " + path.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw InputError("short write to " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

Container Container::load(const std::filesystem::path& path, const std::string& expected_type) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    Container c = deserialize(bytes);
    if (!expected_type.empty() && c.type_ != expected_type) {
        throw LoadError(path.string() + " holds a '" + c.type_ + "' checkpoint, expected '" + expected_type + "'");
    }
    return c;
}

} // namespace dgsr::ckpt
