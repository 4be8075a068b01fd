#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "drfuser/tensor.hpp"

namespace drfuser {

// Flat checkpoint layout (all integers little-endian):
//   magic "DRFC" | u32 version
//   repeated until EOF:
//     u32 name_len | name bytes | u32 rank | rank x u32 extent | numel x f32 value
// See docs/formats.md.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& entries);
std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path);

template <typename Real>
NamedArray to_named_array(const std::string& name, const Tensor<Real>& t) {
    NamedArray a{name, t.shape(), {}};
    a.values.reserve(t.numel());
    for (auto v : t.values()) a.values.push_back(static_cast<float>(v));
    return a;
}

}  // namespace drfuser
