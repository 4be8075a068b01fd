#include <cmath>

#include "drfuser/errors.hpp"
#include "drfuser/train.hpp"

namespace drfuser {

void AdamWConfig::validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr: must be >= 0");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ConfigError("train.weight_decay: must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("train.beta1: must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.beta2: must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("train.eps: must be > 0");
}

template <typename Real>
AdamW<Real>::AdamW(AdamWConfig config) : config_(config) {
    config_.validate();
}

template <typename Real>
void AdamW<Real>::step(std::span<const NamedTensor<Real>> params) {
    if (m_.empty()) {
        for (const auto& p : params) {
            m_.emplace_back(p.tensor.numel(), 0.0);
            v_.emplace_back(p.tensor.numel(), 0.0);
        }
    }
    if (m_.size() != params.size()) throw ContractError("AdamW: parameter list changed between steps");
    for (std::size_t k = 0; k < params.size(); ++k) {
        const auto& p = params[k];
        if (p.tensor.numel() != m_[k].size())
            throw ContractError("AdamW: parameter " + p.name + " changed size between steps");
        if (!p.tensor.has_grad()) continue;
        const auto g = p.tensor.grad();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (!std::isfinite(static_cast<double>(g[i])))
                throw NumericError("non-finite gradient in parameter " + p.name + " at index " + std::to_string(i));
    }

    ++t_;
    const double lr = config_.lr, b1 = config_.beta1, b2 = config_.beta2;
    const double decay = 1.0 - lr * config_.weight_decay;
    const double step_size = lr / (1.0 - std::pow(b1, static_cast<double>(t_)));
    const double bc2_sqrt = std::sqrt(1.0 - std::pow(b2, static_cast<double>(t_)));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto tensor = params[k].tensor;
        if (!tensor.has_grad()) continue;
        const auto g = tensor.grad();
        auto w = tensor.data();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i];
            double wi = static_cast<double>(w[i]) * decay;
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            wi -= step_size * m[i] / (std::sqrt(v[i]) / bc2_sqrt + config_.eps);
            w[i] = static_cast<Real>(wi);
        }
    }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace drfuser
