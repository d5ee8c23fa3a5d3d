#include "clipos/backbone/safetensors.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "json.hpp"

#include "clipos/error.hpp"

namespace clipos::safetensors {
namespace {

static_assert(std::endian::native == std::endian::little, "safetensors I/O assumes a little-endian host");

double half_to_double(std::uint16_t bits) {
    const std::uint32_t sign = (bits >> 15) & 0x1;
    const std::uint32_t exponent = (bits >> 10) & 0x1F;
    const std::uint32_t mantissa = bits & 0x3FF;
    double value = 0.0;
    if (exponent == 0) {
        value = std::ldexp(static_cast<double>(mantissa), -24);
    } else if (exponent == 0x1F) {
        value = mantissa == 0 ? std::numeric_limits<double>::infinity() : std::numeric_limits<double>::quiet_NaN();
    } else {
        value = std::ldexp(static_cast<double>(mantissa | 0x400), static_cast<int>(exponent) - 25);
    }
    return sign ? -value : value;
}

double bf16_to_double(std::uint16_t bits) {
    const std::uint32_t widened = static_cast<std::uint32_t>(bits) << 16;
    return static_cast<double>(std::bit_cast<float>(widened));
}

std::size_t dtype_size(const std::string& dtype) {
    if (dtype == "F16" || dtype == "BF16") return 2;
    if (dtype == "F32") return 4;
    if (dtype == "F64") return 8;
    throw DataError("safetensors: unsupported dtype " + dtype);
}

}  // namespace

std::int64_t Tensor::numel() const {
    std::int64_t n = 1;
    for (const auto d : shape) n *= d;
    return n;
}

std::map<std::string, Tensor> load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("safetensors: cannot open " + path.string());
    }
    std::uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
    if (!in || header_len > (1ULL << 30)) {
        throw DataError("safetensors: bad header length in " + path.string());
    }
    std::string header(header_len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(header_len));
    std::vector<char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (!in.eof() && in.fail()) {
        throw DataError("safetensors: truncated file " + path.string());
    }

    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("safetensors: malformed header in " + path.string() + ": " + e.what());
    }

    std::map<std::string, Tensor> tensors;
    for (const auto& [name, info] : meta.items()) {
        if (name == "__metadata__") {
            continue;
        }
        std::string dtype;
        std::vector<std::uint64_t> offsets;
        Tensor tensor;
        try {
            dtype = info.at("dtype").get<std::string>();
            offsets = info.at("data_offsets").get<std::vector<std::uint64_t>>();
            tensor.shape = info.at("shape").get<std::vector<std::int64_t>>();
        } catch (const nlohmann::json::exception& e) {
            throw DataError("safetensors: bad entry for tensor " + name + ": " + e.what());
        }
        const std::size_t width = dtype_size(dtype);
        const auto count = static_cast<std::size_t>(tensor.numel());
        if (offsets.size() != 2 || offsets[1] < offsets[0] || offsets[1] > payload.size() ||
            offsets[1] - offsets[0] != count * width) {
            throw DataError("safetensors: inconsistent offsets for tensor " + name);
        }
        const char* base = payload.data() + offsets[0];
        tensor.values.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
            const char* p = base + i * width;
            if (dtype == "F64") {
                std::memcpy(&tensor.values[i], p, 8);
            } else if (dtype == "F32") {
                float f = 0.0f;
                std::memcpy(&f, p, 4);
                tensor.values[i] = f;
            } else {
                std::uint16_t bits = 0;
                std::memcpy(&bits, p, 2);
                tensor.values[i] = dtype == "F16" ? half_to_double(bits) : bf16_to_double(bits);
            }
        }
        tensors.emplace(name, std::move(tensor));
    }
    return tensors;
}

void save(const std::filesystem::path& path, const std::map<std::string, Tensor>& tensors, DType dtype) {
    if (dtype != DType::f32 && dtype != DType::f64) {
        throw ContractError("safetensors: only F32 and F64 output is supported");
    }
    const std::size_t width = dtype == DType::f32 ? 4 : 8;
    nlohmann::json meta = nlohmann::json::object();
    std::vector<char> payload;
    for (const auto& [name, tensor] : tensors) {
        if (static_cast<std::size_t>(tensor.numel()) != tensor.values.size()) {
            throw ContractError("safetensors: shape/value mismatch for " + name);
        }
        const std::size_t begin = payload.size();
        payload.resize(begin + tensor.values.size() * width);
        for (std::size_t i = 0; i < tensor.values.size(); ++i) {
            char* p = payload.data() + begin + i * width;
            if (dtype == DType::f32) {
                const auto f = static_cast<float>(tensor.values[i]);
                std::memcpy(p, &f, 4);
            } else {
                std::memcpy(p, &tensor.values[i], 8);
            }
        }
        meta[name] = {{"dtype", dtype == DType::f32 ? "F32" : "F64"},
                      {"shape", tensor.shape},
                      {"data_offsets", {begin, payload.size()}}};
    }
    std::string header = meta.dump();
    while (header.size() % 8 != 0) {
        header.push_back(' ');
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("safetensors: cannot write " + path.string());
    }
    const std::uint64_t header_len = header.size();
    out.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

}  // namespace clipos::safetensors
