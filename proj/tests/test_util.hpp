#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "drfuser/rng.hpp"
#include "drfuser/tensor.hpp"

namespace drfuser::testing {

template <typename Real>
Tensor<Real> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                           bool requires_grad = false) {
    std::vector<Real> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<Real>(rng.uniform(lo, hi));
    return Tensor<Real>::from_data(shape, std::move(v), requires_grad);
}

template <typename Real>
Tensor<Real> random_normal(const Shape& shape, Rng& rng, double stddev = 1.0,
                           bool requires_grad = false) {
    std::vector<Real> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<Real>(rng.normal(0.0, stddev));
    return Tensor<Real>::from_data(shape, std::move(v), requires_grad);
}

// Empty scratch directory under the system temp dir (not created).
inline std::filesystem::path fresh_dir(const std::string& name) {
    const auto d = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(d);
    return d;
}

// Relative path -> file bytes for every regular file below root.
inline std::map<std::string, std::string> read_tree(const std::filesystem::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        std::ifstream in(e.path(), std::ios::binary);
        out[std::filesystem::relative(e.path(), root).string()] =
            std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    }
    return out;
}

}  // namespace drfuser::testing
