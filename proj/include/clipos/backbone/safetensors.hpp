#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace clipos::safetensors {

/// A tensor decoded to double precision, row-major.
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<double> values;

    std::int64_t numel() const;
};

enum class DType { f16, bf16, f32, f64 };

/// Reads every tensor of a .safetensors file (F16, BF16, F32, F64).
/// Throws DataError on I/O failure, malformed headers or unsupported dtypes.
std::map<std::string, Tensor> load(const std::filesystem::path& path);

void save(const std::filesystem::path& path, const std::map<std::string, Tensor>& tensors,
          DType dtype = DType::f32);

}  // namespace clipos::safetensors
