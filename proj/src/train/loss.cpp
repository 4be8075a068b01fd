#include <cmath>

#include "drfuser/errors.hpp"
#include "drfuser/train.hpp"

namespace drfuser {

using detail::Node;

template <typename Real>
Tensor<Real> huber_loss(const Tensor<Real>& pred, const Tensor<Real>& target, double delta) {
    if (pred.shape() != target.shape())
        throw DimensionError("huber_loss: prediction " + shape_str(pred.shape()) + " vs target " +
                             shape_str(target.shape()));
    if (!(delta > 0.0)) throw ContractError("huber_loss: delta must be > 0");
    const std::size_t n = pred.numel();
    if (n == 0) throw ContractError("huber_loss: empty input");
    const Real d = static_cast<Real>(delta);
    const auto& p = pred.values();
    const auto& t = target.values();
    Real acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const Real x = p[i] - t[i];
        const Real ax = std::abs(x);
        acc += ax <= d ? Real(0.5) * x * x : d * (ax - Real(0.5) * d);
    }
    const Real value = acc / static_cast<Real>(n);
    auto pn = pred.node();
    auto tn = target.node();
    return detail::make_result<Real>(Shape{}, {value}, "huber_loss", {pred, target}, [pn, tn, d, n](Node<Real>& self) {
        const Real g = self.grad[0] / static_cast<Real>(n);
        std::vector<Real> dx(n);
        for (std::size_t i = 0; i < n; ++i) {
            const Real x = pn->data[i] - tn->data[i];
            dx[i] = g * (std::abs(x) <= d ? x : (x > 0 ? d : -d));
        }
        detail::accumulate_grad<Real>(*pn, dx);
        if (tn->requires_grad) {
            for (auto& v : dx) v = -v;
            detail::accumulate_grad<Real>(*tn, dx);
        }
    });
}

template Tensor<float> huber_loss(const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> huber_loss(const Tensor<double>&, const Tensor<double>&, double);

}  // namespace drfuser
