#pragma once

#include <functional>
#include <string>
#include <vector>

namespace drfuser {

struct GradSuiteEntry {
    std::string name;
    double max_relative_error = 0.0;
    std::size_t coordinates = 0;
    std::size_t seeds = 0;
};

// Compares backprop with central differences (64-bit, kink-aware step) for
// every tensor primitive, local self-attention, the additive gate fusion, the
// Huber loss and a full desk-preset forward pass, once per seed. Small
// operands are checked at every coordinate; the full network at 10 random
// coordinates per seed.
std::vector<GradSuiteEntry> run_gradient_suite(std::size_t seeds = 10,
                                               const std::function<void(const GradSuiteEntry&)>& on_entry = {});

}  // namespace drfuser
